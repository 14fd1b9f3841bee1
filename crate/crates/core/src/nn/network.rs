use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::layer::{DenseLayer, LoraAdapter};
use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

/// Identifies one trainable tensor. Ordering defines the flat parameter
/// layout used by checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamId {
    Weight(usize),
    Bias(usize),
    LoraA(usize),
    LoraB(usize),
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Weight(l) => write!(f, "layer{l}.weight"),
            ParamId::Bias(l) => write!(f, "layer{l}.bias"),
            ParamId::LoraA(l) => write!(f, "layer{l}.lora_a"),
            ParamId::LoraB(l) => write!(f, "layer{l}.lora_b"),
        }
    }
}

/// Gradient tensors keyed by parameter, each flattened row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients<T> {
    entries: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: ParamId, grad: Vec<T>) {
        self.entries.insert(id, grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.keys().copied()
    }

    /// Elementwise `self += other`; entries missing on one side are taken as zero.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (id, g) in &other.entries {
            match self.entries.get_mut(id) {
                Some(acc) => {
                    for (a, &b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                None => {
                    self.entries.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.entries.values_mut() {
            for v in g {
                *v *= s;
            }
        }
    }

    /// Flat vector in [`ParamId`] order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries.values().flatten().copied().collect()
    }
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Vec<T>,
    pre: Vec<T>,
    post: Vec<T>,
    // A · input when an adapter is attached
    low_rank: Option<Vec<T>>,
}

/// Counts inference passes; clones start from zero.
#[derive(Debug, Default)]
struct PassCounter(AtomicU64);

impl Clone for PassCounter {
    fn clone(&self) -> Self {
        PassCounter::default()
    }
}

/// Stack of dense layers with optional low-rank adapters.
///
/// [`Network::forward`] caches intermediate activations for one input so
/// that [`Network::backward`] can follow; [`Network::infer`] is the
/// read-only path used for evaluation and is safe to call from many threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Network<T> {
    layers: Vec<DenseLayer<T>>,
    adapters: BTreeMap<usize, LoraAdapter<T>>,
    frozen: Vec<bool>,
    #[serde(skip)]
    cache: Option<Vec<LayerCache<T>>>,
    #[serde(skip)]
    passes: PassCounter,
}

impl<T: Scalar> Network<T> {
    /// All layers start unfrozen with no adapters.
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let n = layers.len();
        Ok(Self {
            layers,
            adapters: BTreeMap::new(),
            frozen: vec![false; n],
            cache: None,
            passes: PassCounter::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layer(&self, idx: usize) -> &DenseLayer<T> {
        &self.layers[idx]
    }

    pub fn adapter(&self, idx: usize) -> Option<&LoraAdapter<T>> {
        self.adapters.get(&idx)
    }

    pub fn adapter_mut(&mut self, idx: usize) -> Option<&mut LoraAdapter<T>> {
        self.adapters.get_mut(&idx)
    }

    pub fn adapters(&self) -> impl Iterator<Item = (usize, &LoraAdapter<T>)> {
        self.adapters.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_frozen(&self, idx: usize) -> bool {
        self.frozen[idx]
    }

    pub fn set_frozen(&mut self, idx: usize, frozen: bool) {
        self.frozen[idx] = frozen;
    }

    pub fn freeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = true);
    }

    /// Replaces layer `idx`; the new layer must keep the same shape.
    pub fn replace_layer(&mut self, idx: usize, layer: DenseLayer<T>) -> Result<()> {
        let old = &self.layers[idx];
        if (old.in_dim(), old.out_dim()) != (layer.in_dim(), layer.out_dim()) {
            return Err(Error::Shape(format!(
                "replacement for layer {idx} is {}x{}, expected {}x{}",
                layer.out_dim(),
                layer.in_dim(),
                old.out_dim(),
                old.in_dim()
            )));
        }
        self.layers[idx] = layer;
        self.cache = None;
        Ok(())
    }

    pub fn attach_adapter(&mut self, idx: usize, adapter: LoraAdapter<T>) -> Result<()> {
        let layer = self
            .layers
            .get(idx)
            .ok_or_else(|| Error::Shape(format!("no layer {idx}")))?;
        if adapter.in_dim() != layer.in_dim() || adapter.out_dim() != layer.out_dim() {
            return Err(Error::Shape(format!(
                "adapter {}x{} does not fit layer {idx} ({}x{})",
                adapter.out_dim(),
                adapter.in_dim(),
                layer.out_dim(),
                layer.in_dim()
            )));
        }
        self.adapters.insert(idx, adapter);
        self.cache = None;
        Ok(())
    }

    pub fn detach_adapter(&mut self, idx: usize) -> Option<LoraAdapter<T>> {
        self.cache = None;
        self.adapters.remove(&idx)
    }

    /// `W + scale·B·A` for adapted layers, `W` otherwise.
    pub fn effective_weight(&self, idx: usize) -> Cow<'_, Matrix<T>> {
        match self.adapters.get(&idx) {
            Some(ad) => {
                let mut w = self.layers[idx].weight.clone();
                w.add_scaled(T::one(), &ad.delta());
                Cow::Owned(w)
            }
            None => Cow::Borrowed(&self.layers[idx].weight),
        }
    }

    /// Copy with every adapter folded into its base weight.
    pub fn merged(&self) -> Network<T> {
        let mut layers = self.layers.clone();
        for &idx in self.adapters.keys() {
            layers[idx].weight = self.effective_weight(idx).into_owned();
        }
        Network {
            layers,
            adapters: BTreeMap::new(),
            frozen: self.frozen.clone(),
            cache: None,
            passes: PassCounter::default(),
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn layer_pass(&self, idx: usize, input: &[T]) -> (Vec<T>, Option<Vec<T>>) {
        let layer = &self.layers[idx];
        let mut pre = layer.weight.matvec(input);
        for (p, &b) in pre.iter_mut().zip(&layer.bias) {
            *p += b;
        }
        let low_rank = self.adapters.get(&idx).map(|ad| {
            let u = ad.a.matvec(input);
            let up = ad.b.matvec(&u);
            for (p, &v) in pre.iter_mut().zip(&up) {
                *p += ad.scale * v;
            }
            u
        });
        (pre, low_rank)
    }

    /// Read-only forward pass returning the logits.
    pub fn infer(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        self.passes.0.fetch_add(1, Ordering::Relaxed);
        let mut h = x.to_vec();
        for idx in 0..self.layers.len() {
            let (mut pre, _) = self.layer_pass(idx, &h);
            let act = self.layers[idx].activation;
            for v in pre.iter_mut() {
                *v = act.apply(*v);
            }
            h = pre;
        }
        Ok(h)
    }

    /// Forward pass that records activations for a following [`backward`](Self::backward).
    pub fn forward(&mut self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        self.passes.0.fetch_add(1, Ordering::Relaxed);
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for idx in 0..self.layers.len() {
            let (pre, low_rank) = self.layer_pass(idx, &h);
            let act = self.layers[idx].activation;
            let post: Vec<T> = pre.iter().map(|&v| act.apply(v)).collect();
            caches.push(LayerCache {
                input: std::mem::replace(&mut h, post.clone()),
                pre,
                post,
                low_rank,
            });
        }
        self.cache = Some(caches);
        Ok(h)
    }

    /// Gradients of the loss with respect to every trainable tensor, given
    /// `∂loss/∂logits` for the input of the preceding `forward` call.
    ///
    /// Consumes the cached activations.
    pub fn backward(&mut self, dlogits: &[T]) -> Result<Gradients<T>> {
        let caches = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        if dlogits.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "loss gradient has {} entries, network has {} outputs",
                dlogits.len(),
                self.output_dim()
            )));
        }
        let mut grads = Gradients::new();
        let mut upstream = dlogits.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let cache = &caches[idx];
            let layer = &self.layers[idx];
            let delta: Vec<T> = upstream
                .iter()
                .zip(cache.pre.iter().zip(&cache.post))
                .map(|(&g, (&a, &h))| g * layer.activation.derivative(a, h))
                .collect();

            if !self.frozen[idx] {
                let mut gw = Matrix::zeros(layer.out_dim(), layer.in_dim());
                gw.add_outer(T::one(), &delta, &cache.input);
                grads.insert(ParamId::Weight(idx), gw.as_slice().to_vec());
                grads.insert(ParamId::Bias(idx), delta.clone());
            }

            let adapter = self.adapters.get(&idx);
            // Bᵀ δ, shared by ∂A and the input gradient
            let bt_delta = adapter.map(|ad| ad.b.matvec_t(&delta));
            if let (Some(ad), Some(btd)) = (adapter, bt_delta.as_ref()) {
                if ad.trainable {
                    let u = cache.low_rank.as_ref().expect("adapter pass cached");
                    let mut ga = Matrix::zeros(ad.rank(), ad.in_dim());
                    ga.add_outer(ad.scale, btd, &cache.input);
                    let mut gb = Matrix::zeros(ad.out_dim(), ad.rank());
                    gb.add_outer(ad.scale, &delta, u);
                    grads.insert(ParamId::LoraA(idx), ga.as_slice().to_vec());
                    grads.insert(ParamId::LoraB(idx), gb.as_slice().to_vec());
                }
            }

            if idx > 0 {
                let mut next = layer.weight.matvec_t(&delta);
                if let (Some(ad), Some(btd)) = (adapter, bt_delta.as_ref()) {
                    let through = ad.a.matvec_t(btd);
                    for (n, &v) in next.iter_mut().zip(&through) {
                        *n += ad.scale * v;
                    }
                }
                upstream = next;
            }
        }
        Ok(grads)
    }

    /// Trainable tensors in flat-layout order.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for idx in 0..self.layers.len() {
            if !self.frozen[idx] {
                ids.push(ParamId::Weight(idx));
                ids.push(ParamId::Bias(idx));
            }
            if self.adapters.get(&idx).is_some_and(|a| a.trainable) {
                ids.push(ParamId::LoraA(idx));
                ids.push(ParamId::LoraB(idx));
            }
        }
        ids.sort();
        ids
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        match id {
            ParamId::Weight(l) => self.layers.get(l).map(|x| x.weight.as_slice()),
            ParamId::Bias(l) => self.layers.get(l).map(|x| x.bias.as_slice()),
            ParamId::LoraA(l) => self.adapters.get(&l).map(|a| a.a.as_slice()),
            ParamId::LoraB(l) => self.adapters.get(&l).map(|a| a.b.as_slice()),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut [T]> {
        self.cache = None;
        match id {
            ParamId::Weight(l) => self.layers.get_mut(l).map(|x| x.weight.as_mut_slice()),
            ParamId::Bias(l) => self.layers.get_mut(l).map(|x| x.bias.as_mut_slice()),
            ParamId::LoraA(l) => self.adapters.get_mut(&l).map(|a| a.a.as_mut_slice()),
            ParamId::LoraB(l) => self.adapters.get_mut(&l).map(|a| a.b.as_mut_slice()),
        }
    }

    pub fn trainable_len(&self) -> usize {
        self.trainable_ids()
            .into_iter()
            .map(|id| self.param(id).map_or(0, <[T]>::len))
            .sum()
    }

    pub fn trainable_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.trainable_len());
        for id in self.trainable_ids() {
            out.extend_from_slice(self.param(id).expect("listed parameter exists"));
        }
        out
    }

    pub fn set_trainable_params(&mut self, flat: &[T]) -> Result<()> {
        let expected = self.trainable_len();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "parameter vector has {} values, network has {expected} trainable",
                flat.len()
            )));
        }
        let mut offset = 0;
        for id in self.trainable_ids() {
            let dst = self.param_mut(id).expect("listed parameter exists");
            let n = dst.len();
            dst.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Forward passes executed since construction or the last reset.
    pub fn pass_count(&self) -> u64 {
        self.passes.0.load(Ordering::Relaxed)
    }

    pub fn reset_pass_count(&self) {
        self.passes.0.store(0, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net() -> Network<f64> {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        Network::new(vec![layer]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = identity_net();
        assert_eq!(net.infer(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn wrong_input_length_is_a_shape_error() {
        let mut net = identity_net();
        assert!(matches!(net.infer(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(net.forward(&[1.0, 2.0, 3.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = identity_net();
        assert!(matches!(net.backward(&[1.0, 0.0]), Err(Error::State(_))));
        net.forward(&[1.0, 2.0]).unwrap();
        net.backward(&[1.0, 0.0]).unwrap();
        // cache is consumed
        assert!(net.backward(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn mismatched_layers_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DenseLayer::<f64>::random(3, 4, Activation::Tanh, &mut rng).unwrap();
        let b = DenseLayer::<f64>::random(5, 2, Activation::Identity, &mut rng).unwrap();
        assert!(Network::new(vec![a, b]).is_err());
    }

    #[test]
    fn fully_frozen_net_has_no_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DenseLayer::<f64>::random(3, 5, Activation::Tanh, &mut rng).unwrap();
        let b = DenseLayer::<f64>::random(5, 2, Activation::Identity, &mut rng).unwrap();
        let mut net = Network::new(vec![a, b]).unwrap();
        let mut ad = LoraAdapter::new(3, 5, 2, 1.0, &mut rng).unwrap();
        ad.set_trainable(false);
        net.attach_adapter(0, ad).unwrap();
        net.freeze_all();
        net.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!(net.backward(&[1.0, -1.0]).unwrap().is_empty());
        assert!(net.trainable_params().is_empty());
    }

    #[test]
    fn zero_b_gives_zero_grad_for_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DenseLayer::<f64>::random(4, 6, Activation::Tanh, &mut rng).unwrap();
        let b = DenseLayer::<f64>::random(6, 3, Activation::Identity, &mut rng).unwrap();
        let mut net = Network::new(vec![a, b]).unwrap();
        net.freeze_all();
        net.attach_adapter(0, LoraAdapter::new(4, 6, 2, 1.0, &mut rng).unwrap())
            .unwrap();
        net.forward(&[0.5, -0.2, 0.1, 0.9]).unwrap();
        let g = net.backward(&[0.3, -0.1, 0.2]).unwrap();
        assert!(g.get(ParamId::LoraA(0)).unwrap().iter().all(|&v| v == 0.0));
        assert!(g.get(ParamId::LoraB(0)).unwrap().iter().any(|&v| v != 0.0));
        assert!(g.get(ParamId::Weight(0)).is_none());
    }

    #[test]
    fn merged_matches_adapted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DenseLayer::<f64>::random(4, 6, Activation::Tanh, &mut rng).unwrap();
        let b = DenseLayer::<f64>::random(6, 3, Activation::Identity, &mut rng).unwrap();
        let mut net = Network::new(vec![a, b]).unwrap();
        let mut ad = LoraAdapter::new(4, 6, 3, 0.5, &mut rng).unwrap();
        for v in ad.b.as_mut_slice() {
            *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
        net.attach_adapter(0, ad).unwrap();
        let x = [0.2, -0.4, 0.6, 0.1];
        let y1 = net.infer(&x).unwrap();
        let y2 = net.merged().infer(&x).unwrap();
        for (p, q) in y1.iter().zip(&y2) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn pass_counter_counts_and_resets_on_clone() {
        let net = identity_net();
        net.infer(&[1.0, 1.0]).unwrap();
        net.infer(&[1.0, 1.0]).unwrap();
        assert_eq!(net.pass_count(), 2);
        assert_eq!(net.clone().pass_count(), 0);
        net.reset_pass_count();
        assert_eq!(net.pass_count(), 0);
    }
}
