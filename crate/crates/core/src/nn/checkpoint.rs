use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::Activation;
use super::network::Network;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Shape descriptor for one layer, used to match checkpoints to networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub frozen: bool,
    pub adapter_rank: Option<usize>,
    pub adapter_trainable: bool,
}

fn architecture<T: Scalar>(net: &Network<T>) -> Vec<ArchLayer> {
    (0..net.depth())
        .map(|i| {
            let l = net.layer(i);
            let ad = net.adapter(i);
            ArchLayer {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation(),
                frozen: net.is_frozen(i),
                adapter_rank: ad.map(|a| a.rank()),
                adapter_trainable: ad.is_some_and(|a| a.is_trainable()),
            }
        })
        .collect()
}

/// Snapshot of the trainable parameters at the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub epoch: usize,
    pub params: Vec<T>,
    /// Training-set NLL (nats) at save time.
    pub monitor: T,
    architecture: Vec<ArchLayer>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(net: &Network<T>, epoch: usize, monitor: T) -> Self {
        Self {
            epoch,
            params: net.trainable_params(),
            monitor,
            architecture: architecture(net),
        }
    }

    pub fn restore(&self, net: &mut Network<T>) -> Result<()> {
        if architecture(net) != self.architecture {
            return Err(Error::Shape(
                "checkpoint architecture does not match the network".into(),
            ));
        }
        net.set_trainable_params(&self.params)
    }

    pub fn architecture(&self) -> &[ArchLayer] {
        &self.architecture
    }

    pub fn to_file(&self) -> CheckpointFile {
        CheckpointFile {
            version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            monitor: self.monitor.as_f64(),
            architecture: self.architecture.clone(),
            params: self.params.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_file(file: CheckpointFile) -> Result<Self> {
        Ok(Self {
            epoch: file.epoch,
            monitor: T::lit(file.monitor),
            architecture: file.architecture,
            params: file.params.into_iter().map(T::lit).collect(),
        })
    }
}

/// On-disk checkpoint container (JSON). Parameters are stored as `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub version: u32,
    pub epoch: usize,
    pub monitor: f64,
    pub architecture: Vec<ArchLayer>,
    pub params: Vec<f64>,
}

impl CheckpointFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        crate::io::write_atomic(path, json.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", file.version),
            ));
        }
        Ok(file)
    }
}
