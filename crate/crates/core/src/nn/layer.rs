use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::special::{sigmoid, softplus};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative given the pre-activation and the activation output.
    #[inline]
    pub fn derivative<T: Scalar>(self, pre: T, post: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - post * post,
            Activation::Softplus => sigmoid(pre),
        }
    }
}

/// Affine map followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseLayer<T> {
    pub(crate) weight: Matrix<T>,
    pub(crate) bias: Vec<T>,
    pub(crate) activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights (He-uniform for ReLU) and zero bias.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            _ => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let weight = Matrix::from_fn(out_dim, in_dim, |_, _| T::lit(rng.random_range(-limit..limit)));
        Self::new(weight, vec![T::zero(); out_dim], activation)
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix<T> {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Low-rank update `ΔW = scale · B·A` for one layer.
///
/// `A` is `rank × in_dim`, `B` is `out_dim × rank`. A fresh adapter has
/// `B = 0`, so it leaves the layer's output unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LoraAdapter<T> {
    pub(crate) a: Matrix<T>,
    pub(crate) b: Matrix<T>,
    pub(crate) scale: T,
    pub(crate) trainable: bool,
}

impl<T: Scalar> LoraAdapter<T> {
    /// `A ~ U(-1/√in_dim, 1/√in_dim)`, `B = 0`.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rank: usize, scale: T, rng: &mut R) -> Result<Self> {
        if rank == 0 || rank >= in_dim.min(out_dim) {
            return Err(Error::InvalidArgument(format!(
                "adapter rank {rank} must satisfy 0 < r < min({in_dim}, {out_dim})"
            )));
        }
        if scale < T::zero() {
            return Err(Error::InvalidArgument("adapter scale must be nonnegative".into()));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let a = Matrix::from_fn(rank, in_dim, |_, _| T::lit(rng.random_range(-bound..bound)));
        Ok(Self {
            a,
            b: Matrix::zeros(out_dim, rank),
            scale,
            trainable: true,
        })
    }

    pub fn from_parts(a: Matrix<T>, b: Matrix<T>, scale: T) -> Result<Self> {
        if a.rows() != b.cols() {
            return Err(Error::Shape(format!(
                "A has rank {} but B has {} columns",
                a.rows(),
                b.cols()
            )));
        }
        Ok(Self {
            a,
            b,
            scale,
            trainable: true,
        })
    }

    /// Largest rank accepted for a layer of the given shape, if any.
    pub fn max_rank(in_dim: usize, out_dim: usize) -> Option<usize> {
        in_dim.min(out_dim).checked_sub(1).filter(|&r| r > 0)
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Dense `scale · B·A`, shape `out_dim × in_dim`.
    pub fn delta(&self) -> Matrix<T> {
        let mut d = self.b.matmul(&self.a).expect("adapter factors agree");
        for v in d.as_mut_slice() {
            *v *= self.scale;
        }
        d
    }
}
