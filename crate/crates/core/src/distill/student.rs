//! Single-pass students built on a frozen teacher-member backbone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{DirichletParams, ProbVector};
use crate::nn::{Activation, DenseLayer, LoraAdapter, Network};
use crate::special::softmax;
use crate::teacher::{FeatureTransform, MlpMember};
use crate::uncertainty::{Prediction, Predictive};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Softmax,
    Evidential,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::Evidential => "evidential",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Head::Softmax),
            "evidential" | "dirichlet" => Ok(Head::Evidential),
            other => Err(Error::InvalidArgument(format!("unknown head {other:?}"))),
        }
    }
}

/// Starting weights for the classification layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    /// Freshly initialised.
    #[default]
    Fresh,
    /// Copied from the backbone member.
    Copy,
}

/// How a student is carved out of a backbone member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSpec {
    /// Requested rank, clamped per layer to the largest valid rank.
    pub rank: usize,
    pub scale: f64,
    pub head_init: HeadInit,
    pub train_head: bool,
}

impl Default for AdapterSpec {
    fn default() -> Self {
        Self {
            rank: 4,
            scale: 1.0,
            head_init: HeadInit::Fresh,
            train_head: true,
        }
    }
}

/// A student network with either a softmax or an evidential head.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StudentModel<T> {
    pub head: Head,
    pub transform: FeatureTransform<T>,
    pub network: Network<T>,
    /// Total evidence imposed at inference (evidential head only).
    pub fixed_alpha0: Option<T>,
}

impl<T: Scalar> StudentModel<T> {
    /// Copies the member's transform and backbone, freezes every base
    /// layer, attaches an adapter to each layer that admits one and sets up
    /// the head.
    pub fn from_backbone<R: Rng + ?Sized>(
        member: &MlpMember<T>,
        head: Head,
        spec: &AdapterSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.rank == 0 {
            return Err(Error::InvalidArgument("adapter rank must be positive".into()));
        }
        let mut network = member.network.clone();
        let last = network.depth() - 1;
        if spec.head_init == HeadInit::Fresh {
            let old = network.layer(last);
            let fresh = DenseLayer::random(old.in_dim(), old.out_dim(), Activation::Identity, rng)?;
            network.replace_layer(last, fresh)?;
        }
        for idx in 0..network.depth() {
            if network.adapter(idx).is_some() {
                network.detach_adapter(idx);
            }
        }
        network.freeze_all();
        network.set_frozen(last, !spec.train_head);
        for idx in 0..network.depth() {
            let l = network.layer(idx);
            let (i, o) = (l.in_dim(), l.out_dim());
            if let Some(max) = LoraAdapter::<T>::max_rank(i, o) {
                let ad = LoraAdapter::new(i, o, spec.rank.min(max), T::lit(spec.scale), rng)?;
                network.attach_adapter(idx, ad)?;
            }
        }
        Ok(Self {
            head,
            transform: member.transform.clone(),
            network,
            fixed_alpha0: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.network.output_dim()
    }

    /// Features after the backbone's input transform.
    pub fn features(&self, x: &[T]) -> Result<Vec<T>> {
        self.transform.apply(x)
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.network.infer(&self.features(x)?)
    }

    pub fn set_fixed_alpha0(&mut self, a0: Option<T>) -> Result<()> {
        if a0.is_some() && self.head != Head::Evidential {
            return Err(Error::InvalidArgument("fixed alpha0 needs the evidential head".into()));
        }
        if let Some(v) = a0 {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("alpha0 must be positive, got {v}")));
            }
            if v <= T::from_count(self.n_classes()) {
                log::warn!(
                    "alpha0 = {v} <= K = {}; some concentrations may fall below 1",
                    self.n_classes()
                );
            }
        }
        self.fixed_alpha0 = a0;
        Ok(())
    }

    /// Adapters folded into the base weights; same predictions, plain layers.
    pub fn merged(&self) -> Self {
        Self {
            head: self.head,
            transform: self.transform.clone(),
            network: self.network.merged(),
            fixed_alpha0: self.fixed_alpha0,
        }
    }

    /// Evidential output before any fixed-α₀ rescaling.
    pub fn dirichlet(&self, x: &[T]) -> Result<DirichletParams<T>> {
        let d = DirichletParams::from_logits(&self.logits(x)?)?;
        match self.fixed_alpha0 {
            Some(a0) => apply_fixed_alpha0(&d, a0),
            None => Ok(d),
        }
    }
}

/// `α' = a0 · mean(d)`: same mean, total evidence `a0`.
pub fn apply_fixed_alpha0<T: Scalar>(d: &DirichletParams<T>, a0: T) -> Result<DirichletParams<T>> {
    d.with_alpha0(a0)
}

impl<T: Scalar> Predictive<T> for StudentModel<T> {
    fn n_classes(&self) -> usize {
        self.network.output_dim()
    }

    fn input_dim(&self) -> usize {
        self.transform
            .matrix
            .as_ref()
            .map_or(self.network.input_dim(), |m| m.cols())
    }

    fn predict(&self, x: &[T]) -> Result<Prediction<T>> {
        match self.head {
            Head::Softmax => {
                let z = self.logits(x)?;
                if let Some(bad) = z.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite logit z[{bad}]")));
                }
                Ok(Prediction::Categorical(ProbVector::new(softmax(&z))?))
            }
            Head::Evidential => self.dirichlet(x).map(Prediction::Dirichlet),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::ParamId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn member() -> MlpMember<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = vec![
            DenseLayer::random(3, 8, Activation::Tanh, &mut rng).unwrap(),
            DenseLayer::random(8, 3, Activation::Identity, &mut rng).unwrap(),
        ];
        MlpMember::new("m", FeatureTransform::identity(), Network::new(layers).unwrap())
    }

    #[test]
    fn copied_head_starts_at_backbone() {
        let m = member();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = AdapterSpec {
            head_init: HeadInit::Copy,
            train_head: false,
            ..Default::default()
        };
        let s = StudentModel::from_backbone(&m, Head::Softmax, &spec, &mut rng).unwrap();
        let x = [0.3, -0.2, 0.9];
        assert_eq!(s.logits(&x).unwrap(), m.logits(&x).unwrap());
        assert_eq!(s.network.adapter(0).unwrap().rank(), 2);
        assert_eq!(s.network.adapter(1).unwrap().rank(), 2);
        let ids = s.network.trainable_ids();
        assert!(ids.iter().all(|id| matches!(id, ParamId::LoraA(_) | ParamId::LoraB(_))));
    }

    #[test]
    fn fresh_head_is_trainable() {
        let m = member();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = StudentModel::from_backbone(&m, Head::Evidential, &AdapterSpec::default(), &mut rng).unwrap();
        assert_eq!(s.network.layer(0), m.network.layer(0));
        assert_ne!(s.network.layer(1), m.network.layer(1));
        assert!(s.network.trainable_ids().contains(&ParamId::Weight(1)));
        assert!(!s.network.trainable_ids().contains(&ParamId::Weight(0)));
    }

    #[test]
    fn fixed_alpha0_examples() {
        let d = DirichletParams::new(vec![5.0f64, 1.0, 1.0]).unwrap();
        assert_eq!(apply_fixed_alpha0(&d, 7.0).unwrap().alpha(), d.alpha());
        let big = apply_fixed_alpha0(&d, 70.0).unwrap();
        for (a, b) in big.alpha().iter().zip([50.0, 10.0, 10.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(big.mean().total_variation(&d.mean()) < 1e-15);
        let d = DirichletParams::new(vec![2.0, 2.0]).unwrap();
        let e = apply_fixed_alpha0(&d, 10.0).unwrap();
        assert_eq!(e.alpha(), &[5.0, 5.0]);
        assert!(e.entropy_decomposition().epistemic.unwrap() < d.entropy_decomposition().epistemic.unwrap());
    }

    #[test]
    fn fixed_alpha0_only_for_evidential() {
        let m = member();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = StudentModel::from_backbone(&m, Head::Softmax, &AdapterSpec::default(), &mut rng).unwrap();
        assert!(s.set_fixed_alpha0(Some(10.0)).is_err());
        s.head = Head::Evidential;
        s.set_fixed_alpha0(Some(10.0)).unwrap();
        let d = s.dirichlet(&[0.1, 0.2, 0.3]).unwrap();
        assert!((d.alpha0() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn merged_student_predicts_the_same() {
        let m = member();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = StudentModel::from_backbone(&m, Head::Evidential, &AdapterSpec::default(), &mut rng).unwrap();
        let ad = s.network.adapter_mut(0).unwrap();
        let b = Matrix::from_fn(8, 2, |r, c| 0.1 * (r as f64 - c as f64));
        *ad = LoraAdapter::from_parts(ad.a().clone(), b, 1.0).unwrap();
        let merged = s.merged();
        assert_eq!(merged.network.adapters().count(), 0);
        let x = [0.5, 0.1, -0.7];
        let (a, b) = (s.dirichlet(&x).unwrap(), merged.dirichlet(&x).unwrap());
        for (p, q) in a.alpha().iter().zip(b.alpha()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
