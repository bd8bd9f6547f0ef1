//! Small dense networks with optional additive conditioning.
//!
//! A conditioned layer computes `act(W·h + b + P·c)` where `c` is the
//! condition vector shared by all layers and `P` is that layer's
//! projection. Without conditioning it is the plain `act(W·h + b)`.

use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::rng::SeededRng;
use crate::error::{ensure_dims, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
    conditioning: Option<Vec<DenseMatrix>>,
    /// Bumped by every parameter update; lets backward reject caches taken
    /// from an older state of the same model.
    revision: u64,
}

impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.conditioning == other.conditioning
    }
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>, conditioning: Option<Vec<DenseMatrix>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Model("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            ensure_dims(layer.out_dim(), layer.bias.len(), "layer bias")?;
            if i > 0 {
                ensure_dims(layers[i - 1].out_dim(), layer.in_dim(), "layer chain")?;
            }
            if layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer bias".into()));
            }
        }
        if let Some(proj) = &conditioning {
            ensure_dims(layers.len(), proj.len(), "conditioning projections per layer")?;
            let cond_dim = proj[0].cols();
            for (layer, p) in layers.iter().zip(proj) {
                ensure_dims(layer.out_dim(), p.rows(), "conditioning projection rows")?;
                ensure_dims(cond_dim, p.cols(), "conditioning projection cols")?;
            }
        }
        Ok(Self {
            layers,
            conditioning,
            revision: 0,
        })
    }

    /// Glorot-initialized network over `dims` (input first). Hidden layers
    /// use ReLU, the output layer is linear. Biases start at zero.
    pub fn init(dims: &[usize], condition_dim: Option<usize>, rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Model(format!("invalid layer dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| DenseLayer {
                weights: DenseMatrix::glorot(dims[i + 1], dims[i], rng),
                bias: vec![0.0; dims[i + 1]],
                activation: if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        let conditioning = condition_dim.map(|c| {
            (0..n)
                .map(|i| DenseMatrix::glorot(dims[i + 1], c, rng))
                .collect()
        });
        Self::new(layers, conditioning)
    }

    pub fn with_activation(mut self, layer: usize, activation: Activation) -> Self {
        self.layers[layer].activation = activation;
        self
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn conditioning(&self) -> Option<&[DenseMatrix]> {
        self.conditioning.as_deref()
    }

    pub fn conditioning_mut(&mut self) -> Option<&mut [DenseMatrix]> {
        self.revision += 1;
        self.conditioning.as_deref_mut()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn condition_dim(&self) -> Option<usize> {
        self.conditioning.as_ref().map(|p| p[0].cols())
    }

    fn signature(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.out_dim()));
        s.push(self.condition_dim().unwrap_or(0));
        s
    }

    pub fn forward(&self, input: &[f64], condition: Option<&[f64]>) -> Result<ForwardCache> {
        ensure_dims(self.input_dim(), input.len(), "network input")?;
        match (&self.conditioning, condition) {
            (Some(p), Some(c)) => ensure_dims(p[0].cols(), c.len(), "condition vector")?,
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::invalid("conditioned network called without a condition"))
            }
            (None, Some(_)) => {
                return Err(Error::invalid("unconditioned network called with a condition"))
            }
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let h = if i == 0 { input } else { &post[i - 1] };
            let mut z = layer.bias.clone();
            layer.weights.matvec_add(h, &mut z);
            if let (Some(p), Some(c)) = (&self.conditioning, condition) {
                p[i].matvec_add(c, &mut z);
            }
            let a: Vec<f64> = z.iter().map(|v| layer.activation.apply(*v)).collect();
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache {
            revision: self.revision,
            signature: self.signature(),
            input: input.to_vec(),
            condition: condition.map(<[f64]>::to_vec),
            pre,
            post,
        })
    }

    /// Forward pass returning only the output.
    pub fn predict(&self, input: &[f64], condition: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut cache = self.forward(input, condition)?;
        Ok(cache.post.pop().expect("non-empty network"))
    }

    /// Backpropagate `grad_output` (dL/d output) through a cached forward
    /// pass, adding parameter gradients into `acc`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        acc: &mut MlpGradients,
    ) -> Result<InputGradients> {
        if cache.revision != self.revision || cache.signature != self.signature() {
            return Err(Error::StaleCache(
                "forward cache was produced by a different model state".into(),
            ));
        }
        if !acc.matches(self) {
            return Err(Error::Model("gradient accumulator shape mismatch".into()));
        }
        ensure_dims(self.output_dim(), grad_output.len(), "output gradient")?;
        let mut cond_grad = cache.condition.as_ref().map(|c| vec![0.0; c.len()]);
        let mut delta: Vec<f64> = Vec::new();
        let mut upstream = grad_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            delta.clear();
            delta.extend(
                upstream
                    .iter()
                    .zip(&cache.pre[i])
                    .map(|(g, z)| g * layer.activation.derivative(*z)),
            );
            let h = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let g = &mut acc.layers[i];
            g.weights.add_outer(1.0, &delta, h);
            for (b, d) in g.bias.iter_mut().zip(&delta) {
                *b += d;
            }
            if let (Some(proj), Some(c), Some(cg)) =
                (&self.conditioning, &cache.condition, &mut cond_grad)
            {
                let pg = acc
                    .conditioning
                    .as_mut()
                    .expect("accumulator matches model");
                pg[i].add_outer(1.0, &delta, c);
                proj[i].matvec_t_add(&delta, cg);
            }
            let mut next = vec![0.0; layer.in_dim()];
            layer.weights.matvec_t_add(&delta, &mut next);
            upstream = next;
        }
        Ok(InputGradients {
            input: upstream,
            condition: cond_grad,
        })
    }

    /// Backward pass producing a fresh gradient set.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<Backward> {
        let mut params = MlpGradients::zeros_like(self);
        let inputs = self.backward_into(cache, grad_output, &mut params)?;
        Ok(Backward {
            params,
            input: inputs.input,
            condition: inputs.condition,
        })
    }

    /// Plain SGD: `p ← p − lr·∇p`.
    pub fn sgd_step(&mut self, grads: &MlpGradients, lr: f64) -> Result<()> {
        if !grads.matches(self) {
            return Err(Error::Model("gradient shape does not match model".into()));
        }
        if !lr.is_finite() {
            return Err(Error::NonFinite("learning rate".into()));
        }
        self.revision += 1;
        if lr == 0.0 {
            return Ok(());
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.add_scaled(-lr, &g.weights);
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        if let (Some(p), Some(gp)) = (&mut self.conditioning, &grads.conditioning) {
            for (m, g) in p.iter_mut().zip(gp) {
                m.add_scaled(-lr, g);
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let layers: usize = self
            .layers
            .iter()
            .map(|l| l.weights.values().len() + l.bias.len())
            .sum();
        let cond: usize = self
            .conditioning
            .iter()
            .flatten()
            .map(|m| m.values().len())
            .sum();
        layers + cond
    }

    /// All parameters in a fixed order: per layer weights then bias, then
    /// the conditioning projections.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.values());
            out.extend_from_slice(&l.bias);
        }
        for m in self.conditioning.iter().flatten() {
            out.extend_from_slice(m.values());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure_dims(self.num_params(), flat.len(), "flat parameter vector")?;
        self.revision += 1;
        let mut off = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[off..off + dst.len()]);
            off += dst.len();
        };
        for l in &mut self.layers {
            take(l.weights.values_mut());
            take(&mut l.bias);
        }
        for m in self.conditioning.iter_mut().flatten() {
            take(m.values_mut());
        }
        Ok(())
    }

    pub fn to_document(&self) -> MlpDocument {
        MlpDocument {
            version: MLP_DOCUMENT_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    weights: l.weights.values().to_vec(),
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
                .collect(),
            conditioning: self
                .conditioning
                .iter()
                .flatten()
                .map(|m| ProjectionDocument {
                    rows: m.rows(),
                    cols: m.cols(),
                    weights: m.values().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &MlpDocument) -> Result<Self> {
        if doc.version != MLP_DOCUMENT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model document version {}",
                doc.version
            )));
        }
        let layers = doc
            .layers
            .iter()
            .map(|l| {
                Ok(DenseLayer {
                    weights: DenseMatrix::new(l.rows, l.cols, l.weights.clone())?,
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let conditioning = if doc.conditioning.is_empty() {
            None
        } else {
            Some(
                doc.conditioning
                    .iter()
                    .map(|p| DenseMatrix::new(p.rows, p.cols, p.weights.clone()))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Self::new(layers, conditioning).map_err(|e| Error::Model(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    revision: u64,
    signature: Vec<usize>,
    input: Vec<f64>,
    condition: Option<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("non-empty network")
    }

    /// Post-activation output of layer `i`.
    pub fn activation(&self, i: usize) -> &[f64] {
        &self.post[i]
    }

    pub fn pre_activation(&self, i: usize) -> &[f64] {
        &self.pre[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of an [`MlpModel`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGradient>,
    pub conditioning: Option<Vec<DenseMatrix>>,
}

impl MlpGradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            conditioning: model.conditioning.as_ref().map(|p| {
                p.iter()
                    .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                    .collect()
            }),
        }
    }

    pub fn matches(&self, model: &MlpModel) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weights.same_shape(&l.weights) && g.bias.len() == l.bias.len())
            && match (&self.conditioning, &model.conditioning) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_shape(y))
                }
                _ => false,
            }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &MlpGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_scaled(alpha, &b.weights);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += alpha * y;
            }
        }
        if let (Some(a), Some(b)) = (&mut self.conditioning, &other.conditioning) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_scaled(alpha, y);
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in &mut self.layers {
            g.weights.scale(alpha);
            g.bias.iter_mut().for_each(|b| *b *= alpha);
        }
        for m in self.conditioning.iter_mut().flatten() {
            m.scale(alpha);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weights.values());
            out.extend_from_slice(&g.bias);
        }
        for m in self.conditioning.iter().flatten() {
            out.extend_from_slice(m.values());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct InputGradients {
    pub input: Vec<f64>,
    pub condition: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub params: MlpGradients,
    pub input: Vec<f64>,
    pub condition: Option<Vec<f64>>,
}

pub const MLP_DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDocument {
    pub version: u32,
    pub layers: Vec<LayerDocument>,
    #[serde(default)]
    pub conditioning: Vec<ProjectionDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDocument {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionDocument {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::vector::dot;

    fn identity_layer(n: usize) -> MlpModel {
        MlpModel::new(
            vec![DenseLayer {
                weights: DenseMatrix::identity(n),
                bias: vec![0.0; n],
                activation: Activation::Identity,
            }],
            None,
        )
        .unwrap()
    }

    #[test]
    fn identity_forward() {
        let m = identity_layer(2);
        assert_eq!(m.predict(&[2.0, 3.0], None).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn zero_condition_matches_unconditioned() {
        let mut rng = SeededRng::new(11);
        let cond = MlpModel::init(&[5, 7, 3], Some(4), &mut rng).unwrap();
        let plain = MlpModel::new(cond.layers().to_vec(), None).unwrap();
        let x = rng.normal_vec(5, 1.0);
        let a = cond.predict(&x, Some(&[0.0; 4])).unwrap();
        let b = plain.predict(&x, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = SeededRng::new(5);
        let m = MlpModel::init(&[6, 8, 5, 3], Some(2), &mut rng).unwrap();
        let x = rng.normal_vec(6, 1.0);
        let c = rng.normal_vec(2, 1.0);
        // Independent oracle: explicit index loops, naive summation.
        let mut h = x.clone();
        for (i, l) in m.layers().iter().enumerate() {
            let p = &m.conditioning().unwrap()[i];
            let mut next = vec![0.0; l.out_dim()];
            for r in 0..l.out_dim() {
                let mut z = l.bias[r];
                for k in 0..l.in_dim() {
                    z += l.weights.get(r, k) * h[k];
                }
                for k in 0..2 {
                    z += p.get(r, k) * c[k];
                }
                next[r] = if l.activation == Activation::Relu { z.max(0.0) } else { z };
            }
            h = next;
        }
        let out = m.predict(&x, Some(&c)).unwrap();
        for (a, b) in out.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let mut rng = SeededRng::new(1);
        let m = MlpModel::init(&[3, 2], Some(2), &mut rng).unwrap();
        assert!(m.forward(&[1.0, 2.0], Some(&[0.0, 0.0])).is_err());
        assert!(m.forward(&[1.0, 2.0, 3.0], None).is_err());
        assert!(m.forward(&[1.0, 2.0, 3.0], Some(&[0.0])).is_err());
        let plain = MlpModel::init(&[3, 2], None, &mut rng).unwrap();
        assert!(plain.forward(&[1.0, 2.0, 3.0], Some(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradient() {
        let mut rng = SeededRng::new(2);
        let m = MlpModel::init(&[4, 6, 3], Some(2), &mut rng).unwrap();
        let cache = m.forward(&rng.normal_vec(4, 1.0), Some(&[0.3, -0.2])).unwrap();
        let b = m.backward(&cache, &[0.0; 3]).unwrap();
        assert!(b.params.is_zero());
        assert!(b.input.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_squared_loss_closed_form() {
        // L = ||Wx - y||², dL/dW = 2 (Wx - y) xᵀ
        let mut rng = SeededRng::new(9);
        let m = MlpModel::init(&[3, 2], None, &mut rng).unwrap();
        let x = vec![0.5, -1.0, 2.0];
        let y = vec![1.0, -1.0];
        let cache = m.forward(&x, None).unwrap();
        let r: Vec<f64> = cache.output().iter().zip(&y).map(|(a, b)| a - b).collect();
        let g: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let b = m.backward(&cache, &g).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let expected = 2.0 * r[i] * x[j];
                assert!((b.params.layers[0].weights.get(i, j) - expected).abs() < 1e-12);
            }
        }
        // input gradient is Wᵀ g
        for j in 0..3 {
            let col: Vec<f64> = (0..2).map(|i| m.layers()[0].weights.get(i, j)).collect();
            assert!((b.input[j] - dot(&col, &g)).abs() < 1e-12);
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = SeededRng::new(4);
        let mut m = MlpModel::init(&[3, 2], None, &mut rng).unwrap();
        let cache = m.forward(&[1.0, 0.0, 0.0], None).unwrap();
        let g = MlpGradients::zeros_like(&m);
        m.sgd_step(&g, 0.1).unwrap();
        assert!(matches!(
            m.backward(&cache, &[1.0, 1.0]),
            Err(Error::StaleCache(_))
        ));
        let other = MlpModel::init(&[3, 4], None, &mut rng).unwrap();
        let c2 = other.forward(&[1.0, 0.0, 0.0], None).unwrap();
        assert!(m.backward(&c2, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut m = MlpModel::new(
            vec![DenseLayer {
                weights: DenseMatrix::new(1, 1, vec![1.0]).unwrap(),
                bias: vec![0.0],
                activation: Activation::Identity,
            }],
            None,
        )
        .unwrap();
        let mut g = MlpGradients::zeros_like(&m);
        g.layers[0].weights.set(0, 0, 2.0);
        let before = m.clone();
        m.sgd_step(&g, 0.0).unwrap();
        assert_eq!(m, before);
        m.sgd_step(&g, 0.1).unwrap();
        assert!((m.layers()[0].weights.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_decreases_convex_quadratic() {
        let mut rng = SeededRng::new(21);
        let mut m = MlpModel::init(&[4, 3], None, &mut rng).unwrap();
        let data: Vec<(Vec<f64>, Vec<f64>)> = (0..10)
            .map(|_| (rng.normal_vec(4, 1.0), rng.normal_vec(3, 1.0)))
            .collect();
        let loss_and_grad = |m: &MlpModel| {
            let mut g = MlpGradients::zeros_like(m);
            let mut loss = 0.0;
            for (x, y) in &data {
                let c = m.forward(x, None).unwrap();
                let r: Vec<f64> = c.output().iter().zip(y).map(|(a, b)| a - b).collect();
                loss += dot(&r, &r);
                let go: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
                m.backward_into(&c, &go, &mut g).unwrap();
            }
            (loss, g)
        };
        let (l0, g0) = loss_and_grad(&m);
        m.sgd_step(&g0, 0.01).unwrap();
        let (l1, g1) = loss_and_grad(&m);
        m.sgd_step(&g1, 0.01).unwrap();
        let (l2, _) = loss_and_grad(&m);
        assert!(l1 < l0 && l2 < l1, "{l0} {l1} {l2}");
    }

    #[test]
    fn shape_mismatch_in_sgd() {
        let mut rng = SeededRng::new(4);
        let mut a = MlpModel::init(&[3, 2], None, &mut rng).unwrap();
        let b = MlpModel::init(&[3, 4], None, &mut rng).unwrap();
        assert!(a.sgd_step(&MlpGradients::zeros_like(&b), 0.1).is_err());
    }

    #[test]
    fn document_round_trip() {
        let mut rng = SeededRng::new(8);
        let m = MlpModel::init(&[4, 5, 2], Some(3), &mut rng).unwrap();
        let json = serde_json::to_string(&m.to_document()).unwrap();
        assert!(json.starts_with("{\"version\":1,\"layers\":[{\"rows\":5,\"cols\":4,"));
        let back: MlpDocument = serde_json::from_str(&json).unwrap();
        let m2 = MlpModel::from_document(&back).unwrap();
        assert_eq!(m, m2);
        assert_eq!(json, serde_json::to_string(&m2.to_document()).unwrap());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = SeededRng::new(8);
        let mut m = MlpModel::init(&[4, 5, 2], Some(3), &mut rng).unwrap();
        let flat = m.flat_params();
        assert_eq!(flat.len(), m.num_params());
        let orig = m.clone();
        m.set_flat_params(&vec![0.0; flat.len()]).unwrap();
        m.set_flat_params(&flat).unwrap();
        assert_eq!(m, orig);
    }
}
