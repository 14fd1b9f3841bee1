//! Desk-scale ensemble members: a fixed linear feature transform followed
//! by a small softmax MLP trained with cross-entropy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dirichlet::ProbVector;
use crate::linalg::Matrix;
use crate::nn::{Activation, DenseLayer, Gradients, Network, Optimizer, ParamId};
use crate::special::softmax;
use crate::{Error, Result, Scalar};

/// Maps a feature vector to class probabilities.
pub trait Predictor<T: Scalar>: Send + Sync {
    fn input_dim(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn predict_probs(&self, x: &[T]) -> Result<ProbVector<T>>;
}

/// Input view given to one member; stands in for a prompt variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureTransform<T> {
    pub id: String,
    /// `None` is the identity.
    pub matrix: Option<Matrix<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransformKind {
    Identity,
    /// Random orthogonal rotation.
    Rotation,
    /// Random rotation with `dropped` input features zeroed first.
    RotationDropout {
        dropped: usize,
    },
}

impl<T: Scalar> FeatureTransform<T> {
    pub fn identity() -> Self {
        Self {
            id: "identity".into(),
            matrix: None,
        }
    }

    pub fn random<R: Rng + ?Sized>(kind: TransformKind, dim: usize, rng: &mut R) -> Result<Self> {
        match kind {
            TransformKind::Identity => Ok(Self::identity()),
            TransformKind::Rotation => Ok(Self {
                id: "rotation".into(),
                matrix: Some(random_rotation(dim, rng)),
            }),
            TransformKind::RotationDropout { dropped } => {
                if dropped >= dim {
                    return Err(Error::InvalidArgument(format!(
                        "cannot drop {dropped} of {dim} features"
                    )));
                }
                let mut rot = random_rotation::<T, R>(dim, rng);
                let mut feats: Vec<usize> = (0..dim).collect();
                feats.shuffle(rng);
                let mut gone: Vec<usize> = feats[..dropped].to_vec();
                gone.sort_unstable();
                for &f in &gone {
                    for r in 0..dim {
                        rot[(r, f)] = T::zero();
                    }
                }
                let tag = gone.iter().map(ToString::to_string).collect::<Vec<_>>().join("+");
                Ok(Self {
                    id: format!("rotation-drop{tag}"),
                    matrix: Some(rot),
                })
            }
        }
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        match &self.matrix {
            None => Ok(x.to_vec()),
            Some(m) => {
                if m.cols() != x.len() {
                    return Err(Error::Shape(format!(
                        "transform {} expects {} features, got {}",
                        self.id,
                        m.cols(),
                        x.len()
                    )));
                }
                Ok(m.matvec(x))
            }
        }
    }
}

/// Orthogonal matrix from Gram–Schmidt on Gaussian columns.
fn random_rotation<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix<T> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Matrix::from_fn(dim, dim, |r, c| T::lit(cols[c][r]))
}

/// Architecture and training schedule for one member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemberSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// L2 penalty `½λ‖W‖²` on weight matrices (biases are not penalised).
    pub weight_decay: f64,
    pub transform: TransformKind,
    pub seed: u64,
}

impl Default for MemberSpec {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            epochs: 20,
            batch_size: 32,
            lr: 1e-2,
            weight_decay: 0.0,
            transform: TransformKind::Identity,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MlpMember<T> {
    pub meta: String,
    pub transform: FeatureTransform<T>,
    pub network: Network<T>,
}

impl<T: Scalar> MlpMember<T> {
    pub fn new(meta: impl Into<String>, transform: FeatureTransform<T>, network: Network<T>) -> Self {
        Self {
            meta: meta.into(),
            transform,
            network,
        }
    }

    /// Trains a fresh member on the labelled samples of `train`.
    pub fn train(spec: &MemberSpec, train: &Dataset<T>) -> Result<Self> {
        if spec.batch_size == 0 || spec.epochs == 0 {
            return Err(Error::InvalidArgument(
                "member epochs and batch size must be positive".into(),
            ));
        }
        let labels = train
            .labels()
            .ok_or_else(|| Error::Data(format!("{} has unlabeled samples", train.name())))?;
        if train.is_empty() {
            return Err(Error::Data("cannot train a member on an empty dataset".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let transform = FeatureTransform::random(spec.transform, train.dim(), &mut rng)?;
        let mut dims = vec![train.dim()];
        dims.extend(&spec.hidden);
        dims.push(train.n_classes());
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    spec.activation
                };
                DenseLayer::random(w[0], w[1], act, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut network = Network::new(layers)?;
        let inputs: Vec<Vec<T>> = train
            .samples()
            .iter()
            .map(|s| transform.apply(&s.x))
            .collect::<Result<_>>()?;
        let mut opt = Optimizer::adam();
        let lr = T::lit(spec.lr);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        for _ in 0..spec.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(spec.batch_size) {
                let mut grads = Gradients::new();
                for &i in batch {
                    let z = network.forward(&inputs[i])?;
                    let mut dz = softmax(&z);
                    dz[labels[i]] -= T::one();
                    grads.accumulate(&network.backward(&dz)?);
                }
                grads.scale(T::one() / T::from_count(batch.len()));
                if spec.weight_decay > 0.0 {
                    grads.accumulate(&l2_gradient(&network, T::lit(spec.weight_decay)));
                }
                opt.step(&mut network, &grads, lr)?;
            }
        }
        let meta = format!("seed{}-{}", spec.seed, transform.id);
        Ok(Self::new(meta, transform, network))
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.network.infer(&self.transform.apply(x)?)
    }
}

impl<T: Scalar> Predictor<T> for MlpMember<T> {
    fn input_dim(&self) -> usize {
        self.transform
            .matrix
            .as_ref()
            .map_or(self.network.input_dim(), Matrix::cols)
    }

    fn n_classes(&self) -> usize {
        self.network.output_dim()
    }

    fn predict_probs(&self, x: &[T]) -> Result<ProbVector<T>> {
        ProbVector::new(softmax(&self.logits(x)?))
    }
}

fn l2_gradient<T: Scalar>(net: &Network<T>, lambda: T) -> Gradients<T> {
    let mut g = Gradients::new();
    for id in net.trainable_ids() {
        if let ParamId::Weight(_) = id {
            let w = net.param(id).expect("listed parameter exists");
            g.insert(id, w.iter().map(|&v| lambda * v).collect());
        }
    }
    g
}
