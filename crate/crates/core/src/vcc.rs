//! Viewpoint-conditioned encoder.
//!
//! Two branches share the raw input. The viewpoint branch is a small trunk
//! producing a viewpoint feature followed by a 3-way classifier head. The
//! appearance branch adds a learned projection of the (unnormalized)
//! viewpoint feature to the pre-activation of every layer, so appearance
//! gradients also shape the viewpoint trunk. An identity classifier over the
//! training identities sits on top of the appearance feature.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};
use crate::nn::loss::{
    batch_hard_triplets, cross_entropy_grad, loss_view_grad, triplet_grad,
    DEFAULT_TRIPLET_MARGIN, VIEWPOINT_CLASSES,
};
use crate::nn::mlp::{Activation, MlpDocument, MlpGradients, ProjectionDocument};
use crate::nn::vector::{l2_normalize, softmax_unchecked};
use crate::nn::{DenseMatrix, MlpModel, Parameterized, SeededRng};
use crate::synth::RawRecord;
use crate::viewpoint::Viewpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VccArchitecture {
    pub viewpoint_hidden: usize,
    pub viewpoint_dim: usize,
    pub appearance_hidden: usize,
    pub appearance_dim: usize,
}

impl Default for VccArchitecture {
    fn default() -> Self {
        Self {
            viewpoint_hidden: 64,
            viewpoint_dim: 16,
            appearance_hidden: 128,
            appearance_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VccModel {
    viewpoint_trunk: MlpModel,
    viewpoint_head: MlpModel,
    appearance: MlpModel,
    id_head: MlpModel,
}

/// Unit-norm features of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub appearance: Vec<f64>,
    pub viewpoint: Vec<f64>,
}

impl VccModel {
    pub fn init(
        input_dim: usize,
        num_identities: usize,
        arch: &VccArchitecture,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if num_identities < 2 {
            return Err(Error::Model("identity head needs at least 2 classes".into()));
        }
        let viewpoint_trunk = MlpModel::init(
            &[input_dim, arch.viewpoint_hidden, arch.viewpoint_dim],
            None,
            rng,
        )?
        .with_activation(1, Activation::Relu);
        let viewpoint_head = MlpModel::init(&[arch.viewpoint_dim, VIEWPOINT_CLASSES], None, rng)?;
        let appearance = MlpModel::init(
            &[input_dim, arch.appearance_hidden, arch.appearance_dim],
            Some(arch.viewpoint_dim),
            rng,
        )?;
        let id_head = MlpModel::init(&[arch.appearance_dim, num_identities], None, rng)?;
        Self::from_parts(viewpoint_trunk, viewpoint_head, appearance, id_head)
    }

    pub fn from_parts(
        viewpoint_trunk: MlpModel,
        viewpoint_head: MlpModel,
        appearance: MlpModel,
        id_head: MlpModel,
    ) -> Result<Self> {
        ensure_dims(
            viewpoint_trunk.input_dim(),
            appearance.input_dim(),
            "branch input dims",
        )?;
        ensure_dims(
            viewpoint_trunk.output_dim(),
            viewpoint_head.input_dim(),
            "viewpoint head input",
        )?;
        ensure_dims(VIEWPOINT_CLASSES, viewpoint_head.output_dim(), "viewpoint classes")?;
        let cond = appearance
            .condition_dim()
            .ok_or_else(|| Error::Model("appearance branch lacks conditioning".into()))?;
        ensure_dims(viewpoint_trunk.output_dim(), cond, "conditioning input")?;
        ensure_dims(appearance.output_dim(), id_head.input_dim(), "identity head input")?;
        if viewpoint_head.condition_dim().is_some()
            || viewpoint_trunk.condition_dim().is_some()
            || id_head.condition_dim().is_some()
        {
            return Err(Error::Model("only the appearance branch is conditioned".into()));
        }
        Ok(Self {
            viewpoint_trunk,
            viewpoint_head,
            appearance,
            id_head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.appearance.input_dim()
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance.output_dim()
    }

    pub fn viewpoint_dim(&self) -> usize {
        self.viewpoint_trunk.output_dim()
    }

    pub fn num_identities(&self) -> usize {
        self.id_head.output_dim()
    }

    pub fn appearance_branch(&self) -> &MlpModel {
        &self.appearance
    }

    pub fn appearance_branch_mut(&mut self) -> &mut MlpModel {
        &mut self.appearance
    }

    /// Raw (unnormalized) viewpoint and appearance features.
    pub fn features(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let v = self.viewpoint_trunk.predict(x, None)?;
        let a = self.appearance.predict(x, Some(&v))?;
        Ok((v, a))
    }

    pub fn embed(&self, x: &[f64]) -> Result<Embedding> {
        let (v, a) = self.features(x)?;
        let degenerate = |what: &str| {
            Error::DegenerateData(format!("{what} feature has zero norm for this input"))
        };
        Ok(Embedding {
            appearance: l2_normalize(&a).map_err(|_| degenerate("appearance"))?,
            viewpoint: l2_normalize(&v).map_err(|_| degenerate("viewpoint"))?,
        })
    }

    /// Predicted viewpoint (ties to the smallest class index) and class
    /// probabilities.
    pub fn predict_viewpoint(&self, x: &[f64]) -> Result<(Viewpoint, [f64; 3])> {
        let v = self.viewpoint_trunk.predict(x, None)?;
        let logits = self.viewpoint_head.predict(&v, None)?;
        let p = softmax_unchecked(&logits);
        let mut best = 0;
        for i in 1..VIEWPOINT_CLASSES {
            if p[i] > p[best] {
                best = i;
            }
        }
        Ok((
            Viewpoint::from_index(best).expect("three classes"),
            [p[0], p[1], p[2]],
        ))
    }

    fn parts(&self) -> [&MlpModel; 4] {
        [
            &self.viewpoint_trunk,
            &self.viewpoint_head,
            &self.appearance,
            &self.id_head,
        ]
    }

    fn parts_mut(&mut self) -> [&mut MlpModel; 4] {
        [
            &mut self.viewpoint_trunk,
            &mut self.viewpoint_head,
            &mut self.appearance,
            &mut self.id_head,
        ]
    }

    pub fn to_document(&self) -> VccDocument {
        let mut viewpoint_branch = self.viewpoint_trunk.to_document();
        viewpoint_branch
            .layers
            .extend(self.viewpoint_head.to_document().layers);
        let mut appearance_branch = self.appearance.to_document();
        let conditioning = std::mem::take(&mut appearance_branch.conditioning);
        VccDocument {
            vcc: VccBody {
                viewpoint_branch,
                appearance_branch,
                conditioning,
                id_head: self.id_head.to_document(),
            },
        }
    }

    pub fn from_document(doc: &VccDocument) -> Result<Self> {
        let body = &doc.vcc;
        let mut trunk = body.viewpoint_branch.clone();
        if trunk.layers.len() < 2 {
            return Err(Error::Model("viewpoint branch needs a trunk and a head".into()));
        }
        let head_layer = trunk.layers.pop().expect("checked length");
        let head = MlpDocument {
            version: trunk.version,
            layers: vec![head_layer],
            conditioning: Vec::new(),
        };
        let mut appearance = body.appearance_branch.clone();
        appearance.conditioning = body.conditioning.clone();
        Self::from_parts(
            MlpModel::from_document(&trunk)?,
            MlpModel::from_document(&head)?,
            MlpModel::from_document(&appearance)?,
            MlpModel::from_document(&body.id_head)?,
        )
    }
}

impl Parameterized for VccModel {
    fn flat_params(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|m| m.flat_params()).collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.parts().iter().map(|m| m.num_params()).sum();
        ensure_dims(total, flat.len(), "flat parameter vector")?;
        let mut off = 0;
        for m in self.parts_mut() {
            let n = m.num_params();
            m.set_flat_params(&flat[off..off + n])?;
            off += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VccDocument {
    pub vcc: VccBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VccBody {
    pub viewpoint_branch: MlpDocument,
    pub appearance_branch: MlpDocument,
    pub conditioning: Vec<ProjectionDocument>,
    pub id_head: MlpDocument,
}

/// Gradients for all four networks of a [`VccModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct VccGradients {
    parts: [MlpGradients; 4],
}

impl VccGradients {
    pub fn zeros_like(model: &VccModel) -> Self {
        Self {
            parts: model.parts().map(MlpGradients::zeros_like),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.parts.iter().flat_map(|g| g.flat()).collect()
    }
}

/// One training example: raw input plus identity class and viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub identity: usize,
    pub viewpoint: Viewpoint,
}

/// Map raw records onto training samples with dense identity classes
/// assigned in sorted vehicle-id order. Returns the class names too.
pub fn training_samples(records: &[RawRecord]) -> (Vec<TrainSample>, Vec<String>) {
    let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        classes.entry(r.vehicle_id.as_str()).or_insert(0);
    }
    for (i, v) in classes.values_mut().enumerate() {
        *v = i;
    }
    let samples = records
        .iter()
        .map(|r| TrainSample {
            input: r.input.clone(),
            identity: classes[r.vehicle_id.as_str()],
            viewpoint: r.viewpoint,
        })
        .collect();
    (samples, classes.keys().map(|s| s.to_string()).collect())
}

/// Loss components of the combined objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct VccLoss {
    pub view: f64,
    pub identity: f64,
    pub triplet: f64,
}

impl VccLoss {
    pub fn appearance(&self) -> f64 {
        self.identity + self.triplet
    }

    pub fn total(&self) -> f64 {
        self.view + self.appearance()
    }
}

/// Combined loss on a batch; when `grads` is given, the gradient of the
/// total is accumulated into it.
pub fn batch_loss(
    model: &VccModel,
    batch: &[&TrainSample],
    margin: f64,
    grads: Option<&mut VccGradients>,
) -> Result<VccLoss> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let mut trunk_caches = Vec::with_capacity(batch.len());
    let mut head_caches = Vec::with_capacity(batch.len());
    let mut app_caches = Vec::with_capacity(batch.len());
    let mut id_caches = Vec::with_capacity(batch.len());
    for s in batch {
        let t = model.viewpoint_trunk.forward(&s.input, None)?;
        let h = model.viewpoint_head.forward(t.output(), None)?;
        let a = model.appearance.forward(&s.input, Some(t.output()))?;
        let i = model.id_head.forward(a.output(), None)?;
        trunk_caches.push(t);
        head_caches.push(h);
        app_caches.push(a);
        id_caches.push(i);
    }
    let view_logits =
        DenseMatrix::from_rows(&head_caches.iter().map(|c| c.output().to_vec()).collect::<Vec<_>>())?;
    let view_labels: Vec<usize> = batch.iter().map(|s| s.viewpoint.index()).collect();
    let (view, view_grad) = loss_view_grad(&view_logits, &view_labels)?;

    let id_logits =
        DenseMatrix::from_rows(&id_caches.iter().map(|c| c.output().to_vec()).collect::<Vec<_>>())?;
    let id_labels: Vec<usize> = batch.iter().map(|s| s.identity).collect();
    let (identity, id_grad) = cross_entropy_grad(&id_logits, &id_labels)?;

    let features: Vec<Vec<f64>> = app_caches.iter().map(|c| c.output().to_vec()).collect();
    let triplets = batch_hard_triplets(&features, &id_labels)?;
    let (triplet, tri_grads) = triplet_grad(&features, &triplets, margin)?;

    let loss = VccLoss {
        view,
        identity,
        triplet,
    };
    if !loss.total().is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let Some(g) = grads else {
        return Ok(loss);
    };
    let [g_trunk, g_head, g_app, g_id] = &mut g.parts;
    for n in 0..batch.len() {
        let from_id = model.id_head.backward_into(&id_caches[n], id_grad.row(n), g_id)?;
        let grad_feature: Vec<f64> = from_id
            .input
            .iter()
            .zip(&tri_grads[n])
            .map(|(a, b)| a + b)
            .collect();
        let from_app = model
            .appearance
            .backward_into(&app_caches[n], &grad_feature, g_app)?;
        let from_head = model
            .viewpoint_head
            .backward_into(&head_caches[n], view_grad.row(n), g_head)?;
        let mut grad_trunk = from_head.input;
        for (t, c) in grad_trunk
            .iter_mut()
            .zip(from_app.condition.as_deref().unwrap_or(&[]))
        {
            *t += c;
        }
        model
            .viewpoint_trunk
            .backward_into(&trunk_caches[n], &grad_trunk, g_trunk)?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VccTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of all steps spent in linear warmup.
    pub warmup_fraction: f64,
    /// Epoch fractions at which the learning rate is multiplied by
    /// `decay_factor`.
    pub decay_at: Vec<f64>,
    pub decay_factor: f64,
    pub identities_per_batch: usize,
    pub instances_per_identity: usize,
    pub margin: f64,
    pub architecture: VccArchitecture,
    pub seed: u64,
}

impl Default for VccTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 0.05,
            warmup_fraction: 0.05,
            decay_at: vec![0.75, 0.94],
            decay_factor: 0.1,
            identities_per_batch: 6,
            instances_per_identity: 6,
            margin: DEFAULT_TRIPLET_MARGIN,
            architecture: VccArchitecture::default(),
            seed: 0,
        }
    }
}

impl VccTrainConfig {
    pub fn batch_size(&self) -> usize {
        self.identities_per_batch * self.instances_per_identity
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.identities_per_batch < 2 || self.instances_per_identity < 2 {
            return bad("batches need at least 2 identities with 2 instances each");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction)
            || self.decay_at.iter().any(|d| !(0.0..=1.0).contains(d))
        {
            return bad("warmup and decay points are fractions in [0, 1]");
        }
        if !(self.margin >= 0.0) {
            return bad("margin must be non-negative");
        }
        Ok(())
    }

    /// Learning rate for `step` (0-based) of `total_steps`, in `epoch`.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize, epoch: usize) -> f64 {
        let warmup = (self.warmup_fraction * total_steps as f64).ceil() as usize;
        let mut lr = self.learning_rate;
        if step < warmup {
            lr *= (step + 1) as f64 / warmup as f64;
        }
        for d in &self.decay_at {
            if epoch as f64 >= d * self.epochs as f64 {
                lr *= self.decay_factor;
            }
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VccTraceRow {
    pub epoch: usize,
    pub learning_rate: f64,
    pub view: f64,
    pub identity: f64,
    pub triplet: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct VccTraining {
    pub model: VccModel,
    pub identities: usize,
    /// Row 0 evaluates the initial model, row `e` the model after epoch `e`.
    pub trace: Vec<VccTraceRow>,
}

struct BatchSampler {
    by_identity: Vec<Vec<usize>>,
    p: usize,
    k: usize,
}

impl BatchSampler {
    fn batches_per_epoch(&self) -> usize {
        self.by_identity.len().div_ceil(self.p)
    }

    /// One epoch of P×K batches: identities are shuffled and chunked; the
    /// last chunk is topped up with other identities.
    fn epoch(&self, rng: &mut SeededRng) -> Vec<Vec<usize>> {
        let n = self.by_identity.len();
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut batches = Vec::with_capacity(self.batches_per_epoch());
        for chunk in order.chunks(self.p) {
            let mut ids = chunk.to_vec();
            while ids.len() < self.p {
                let extra = rng.below(n);
                if !ids.contains(&extra) {
                    ids.push(extra);
                }
            }
            let mut batch = Vec::with_capacity(self.p * self.k);
            for id in ids {
                let members = &self.by_identity[id];
                for i in rng.sample_indices(members.len(), self.k) {
                    batch.push(members[i]);
                }
            }
            batches.push(batch);
        }
        batches
    }
}

fn check_training_set(samples: &[TrainSample], k: usize) -> Result<Vec<Vec<usize>>> {
    let Some(first) = samples.first() else {
        return Err(Error::DegenerateData("empty training set".into()));
    };
    let dim = first.input.len();
    let classes = samples.iter().map(|s| s.identity).max().unwrap_or(0) + 1;
    let mut by_identity = vec![Vec::new(); classes];
    let mut views = [false; 3];
    for (i, s) in samples.iter().enumerate() {
        ensure_dims(dim, s.input.len(), "training input")?;
        by_identity[s.identity].push(i);
        views[s.viewpoint.index()] = true;
    }
    if let Some(id) = by_identity.iter().position(Vec::is_empty) {
        return Err(Error::DegenerateData(format!(
            "identity classes must be dense; class {id} has no samples"
        )));
    }
    if classes < 2 {
        return Err(Error::DegenerateData(
            "training needs at least 2 identities".into(),
        ));
    }
    if let Some(v) = views.iter().position(|p| !p) {
        return Err(Error::DegenerateData(format!(
            "no training samples with viewpoint {}",
            Viewpoint::ALL[v]
        )));
    }
    if let Some(id) = by_identity.iter().position(|m| m.len() < k) {
        return Err(Error::DegenerateData(format!(
            "identity class {id} has {} samples, batches need {k}",
            by_identity[id].len()
        )));
    }
    Ok(by_identity)
}

pub fn train_vcc(samples: &[TrainSample], config: &VccTrainConfig) -> Result<VccTraining> {
    config.validate()?;
    let by_identity = check_training_set(samples, config.instances_per_identity)?;
    let classes = by_identity.len();
    if classes < config.identities_per_batch {
        return Err(Error::DegenerateData(format!(
            "{classes} identities cannot fill batches of {}",
            config.identities_per_batch
        )));
    }
    let root = SeededRng::new(config.seed);
    let mut model = VccModel::init(
        samples[0].input.len(),
        classes,
        &config.architecture,
        &mut root.fork(0),
    )?;
    let sampler = BatchSampler {
        by_identity,
        p: config.identities_per_batch,
        k: config.instances_per_identity,
    };
    let eval_batches = sampler.epoch(&mut root.fork(1));
    let evaluate = |model: &VccModel| -> Result<VccLoss> {
        let mut acc = VccLoss::default();
        for b in &eval_batches {
            let refs: Vec<&TrainSample> = b.iter().map(|&i| &samples[i]).collect();
            let l = batch_loss(model, &refs, config.margin, None)?;
            acc.view += l.view;
            acc.identity += l.identity;
            acc.triplet += l.triplet;
        }
        let n = eval_batches.len() as f64;
        Ok(VccLoss {
            view: acc.view / n,
            identity: acc.identity / n,
            triplet: acc.triplet / n,
        })
    };
    let row = |epoch: usize, lr: f64, l: VccLoss| VccTraceRow {
        epoch,
        learning_rate: lr,
        view: l.view,
        identity: l.identity,
        triplet: l.triplet,
        total: l.total(),
    };
    let mut trace = vec![row(0, 0.0, evaluate(&model)?)];
    let total_steps = config.epochs * sampler.batches_per_epoch();
    let mut shuffle_rng = root.fork(2);
    let mut step = 0;
    let mut lr = 0.0;
    for epoch in 0..config.epochs {
        for batch in sampler.epoch(&mut shuffle_rng) {
            let refs: Vec<&TrainSample> = batch.iter().map(|&i| &samples[i]).collect();
            let mut grads = VccGradients::zeros_like(&model);
            batch_loss(&model, &refs, config.margin, Some(&mut grads))?;
            lr = config.learning_rate_at(step, total_steps, epoch);
            for (m, g) in model.parts_mut().into_iter().zip(&grads.parts) {
                m.sgd_step(g, lr)?;
            }
            step += 1;
        }
        trace.push(row(epoch + 1, lr, evaluate(&model)?));
    }
    Ok(VccTraining {
        model,
        identities: classes,
        trace,
    })
}

/// Per-viewpoint centroids of the normalized viewpoint features of
/// `inputs`, each re-normalized. Used as stand-ins for the viewpoint
/// feature of a missing query view.
pub fn viewpoint_centroids(
    model: &VccModel,
    inputs: &[(&[f64], Viewpoint)],
) -> Result<[Vec<f64>; 3]> {
    let d = model.viewpoint_dim();
    let mut sums = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for (x, view) in inputs {
        let e = model.embed(x)?;
        for (s, v) in sums[view.index()].iter_mut().zip(&e.viewpoint) {
            *s += v;
        }
    }
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (i, s) in sums.iter().enumerate() {
        out[i] = l2_normalize(s).map_err(|_| {
            Error::DegenerateData(format!("no usable samples for viewpoint {}", Viewpoint::ALL[i]))
        })?;
    }
    Ok(out)
}
