//! Cross-view feature recovery.
//!
//! Every viewpoint has an encoder into a shared latent size and a decoder
//! back to appearance space; every ordered viewpoint pair has a latent
//! predictor. Training runs over the three unordered viewpoint pairs with
//! four terms per pair: reconstruction, the contrastive information term,
//! latent prediction in both directions, and reconstruction of each view
//! from the other view's predicted latent. A missing view is recovered by
//! decoding its latent as predicted from each available view.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};
use crate::inference::FeatureRecord;
use crate::nn::loss::{contrastive_grad, squared_error_grad, DEFAULT_CONTRASTIVE_ALPHA};
use crate::nn::mlp::{ForwardCache, MlpDocument, MlpGradients};
use crate::nn::vector::{l2_normalize, mean, norm};
use crate::nn::{MlpModel, Parameterized, SeededRng};
use crate::viewpoint::Viewpoint;

/// The three unordered viewpoint pairs, as index pairs.
pub const VIEW_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Slot of the predictor for `from → to` in the predictor list: ordered
/// pairs in (from, to) lexicographic order.
pub fn predictor_slot(from: usize, to: usize) -> usize {
    debug_assert!(from != to && from < 3 && to < 3);
    from * 2 + if to > from { to - 1 } else { to }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvfrModel {
    encoders: [MlpModel; 3],
    decoders: [MlpModel; 3],
    predictors: [MlpModel; 6],
    latent_dim: usize,
    centroids: Option<[Vec<f64>; 3]>,
}

impl CvfrModel {
    pub fn init(appearance_dim: usize, latent_dim: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        if latent_dim < 2 {
            return Err(Error::Config("latent dim must be at least 2".into()));
        }
        let enc = [appearance_dim, hidden, hidden, latent_dim];
        let dec = [latent_dim, hidden, hidden, appearance_dim];
        let pred = [latent_dim, hidden, hidden, latent_dim];
        let encoders = [(); 3].map(|_| MlpModel::init(&enc, None, rng));
        let decoders = [(); 3].map(|_| MlpModel::init(&dec, None, rng));
        let predictors = [(); 6].map(|_| MlpModel::init(&pred, None, rng));
        Self::from_parts(
            collect_parts(encoders)?,
            collect_parts(decoders)?,
            collect_parts(predictors)?,
            None,
        )
    }

    pub fn from_parts(
        encoders: [MlpModel; 3],
        decoders: [MlpModel; 3],
        predictors: [MlpModel; 6],
        centroids: Option<[Vec<f64>; 3]>,
    ) -> Result<Self> {
        let latent_dim = encoders[0].output_dim();
        let appearance_dim = encoders[0].input_dim();
        for m in encoders.iter().chain(&decoders).chain(&predictors) {
            if m.condition_dim().is_some() {
                return Err(Error::Model("recovery networks are unconditioned".into()));
            }
        }
        for e in &encoders {
            ensure_dims(appearance_dim, e.input_dim(), "encoder input")?;
            ensure_dims(latent_dim, e.output_dim(), "encoder latent")?;
        }
        for d in &decoders {
            ensure_dims(latent_dim, d.input_dim(), "decoder latent")?;
            ensure_dims(appearance_dim, d.output_dim(), "decoder output")?;
        }
        for p in &predictors {
            ensure_dims(latent_dim, p.input_dim(), "predictor input")?;
            ensure_dims(latent_dim, p.output_dim(), "predictor output")?;
        }
        if let Some(c) = &centroids {
            let d = c[0].len();
            for v in c {
                ensure_dims(d, v.len(), "viewpoint centroid")?;
            }
        }
        Ok(Self {
            encoders,
            decoders,
            predictors,
            latent_dim,
            centroids,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn appearance_dim(&self) -> usize {
        self.encoders[0].input_dim()
    }

    pub fn with_centroids(mut self, centroids: [Vec<f64>; 3]) -> Result<Self> {
        let d = centroids[0].len();
        let normalized = centroids.map(|c| {
            ensure_dims(d, c.len(), "viewpoint centroid")?;
            l2_normalize(&c)
        });
        let [a, b, c] = normalized;
        self.centroids = Some([a?, b?, c?]);
        Ok(self)
    }

    /// Stand-in viewpoint feature for a missing view.
    pub fn viewpoint_centroid(&self, view: Viewpoint) -> Result<&[f64]> {
        self.centroids
            .as_ref()
            .map(|c| c[view.index()].as_slice())
            .ok_or_else(|| Error::Model("recovery model carries no viewpoint centroids".into()))
    }

    pub fn encoder(&self, view: Viewpoint) -> &MlpModel {
        &self.encoders[view.index()]
    }

    pub fn decoder(&self, view: Viewpoint) -> &MlpModel {
        &self.decoders[view.index()]
    }

    pub fn encode(&self, view: Viewpoint, x: &[f64]) -> Result<Vec<f64>> {
        self.encoders[view.index()].predict(x, None)
    }

    pub fn decode(&self, view: Viewpoint, z: &[f64]) -> Result<Vec<f64>> {
        self.decoders[view.index()].predict(z, None)
    }

    pub fn predict_latent(&self, from: Viewpoint, to: Viewpoint, z: &[f64]) -> Result<Vec<f64>> {
        if from == to {
            return Err(Error::invalid("predictor needs two different viewpoints"));
        }
        self.predictors[predictor_slot(from.index(), to.index())].predict(z, None)
    }

    /// `D_v(E_v(x))`.
    pub fn autoencode(&self, view: Viewpoint, x: &[f64]) -> Result<Vec<f64>> {
        self.decode(view, &self.encode(view, x)?)
    }

    /// Candidate for `missing` from one available view.
    pub fn recover_from(&self, from: Viewpoint, x: &[f64], missing: Viewpoint) -> Result<Vec<f64>> {
        let z = self.encode(from, x)?;
        self.decode(missing, &self.predict_latent(from, missing, &z)?)
    }

    /// Mean of the candidates from every available view, L2-normalized.
    pub fn recover(&self, available: &BTreeMap<Viewpoint, Vec<f64>>, missing: Viewpoint) -> Result<Vec<f64>> {
        if available.is_empty() {
            return Err(Error::invalid("recovery needs at least one available view"));
        }
        if available.contains_key(&missing) {
            return Err(Error::invalid(format!(
                "viewpoint {missing} is both available and missing"
            )));
        }
        let candidates: Vec<Vec<f64>> = available
            .iter()
            .map(|(&from, x)| self.recover_from(from, x, missing))
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = candidates.iter().map(Vec::as_slice).collect();
        l2_normalize(&mean(&refs)?)
            .map_err(|_| Error::DegenerateData("recovered feature has zero norm".into()))
    }

    fn parts(&self) -> impl Iterator<Item = &MlpModel> {
        self.encoders
            .iter()
            .chain(&self.decoders)
            .chain(&self.predictors)
    }

    fn parts_mut(&mut self) -> impl Iterator<Item = &mut MlpModel> {
        self.encoders
            .iter_mut()
            .chain(&mut self.decoders)
            .chain(&mut self.predictors)
    }

    pub fn to_document(&self) -> CvfrDocument {
        let mut predictors = Vec::with_capacity(6);
        for from in Viewpoint::ALL {
            for to in Viewpoint::ALL {
                if from != to {
                    predictors.push(PredictorDocument {
                        from,
                        to,
                        network: self.predictors[predictor_slot(from.index(), to.index())]
                            .to_document(),
                    });
                }
            }
        }
        CvfrDocument {
            cvfr: CvfrBody {
                encoders: self.encoders.iter().map(MlpModel::to_document).collect(),
                decoders: self.decoders.iter().map(MlpModel::to_document).collect(),
                predictors,
                latent_dim: self.latent_dim,
                viewpoint_centroids: self.centroids.clone().map(|c| CentroidDocument {
                    front: c[0].clone(),
                    side: c[1].clone(),
                    rear: c[2].clone(),
                }),
            },
        }
    }

    pub fn from_document(doc: &CvfrDocument) -> Result<Self> {
        let body = &doc.cvfr;
        let load = |docs: &[MlpDocument], n: usize, what: &str| -> Result<Vec<MlpModel>> {
            if docs.len() != n {
                return Err(Error::Model(format!("expected {n} {what}, found {}", docs.len())));
            }
            docs.iter().map(MlpModel::from_document).collect()
        };
        let encoders = load(&body.encoders, 3, "encoders")?;
        let decoders = load(&body.decoders, 3, "decoders")?;
        if body.predictors.len() != 6 {
            return Err(Error::Model(format!(
                "expected 6 predictors, found {}",
                body.predictors.len()
            )));
        }
        let mut slots: [Option<MlpModel>; 6] = Default::default();
        for p in &body.predictors {
            if p.from == p.to {
                return Err(Error::Model("predictor maps a viewpoint onto itself".into()));
            }
            let slot = predictor_slot(p.from.index(), p.to.index());
            if slots[slot].replace(MlpModel::from_document(&p.network)?).is_some() {
                return Err(Error::Model(format!("duplicate predictor {} → {}", p.from, p.to)));
            }
        }
        let predictors = slots.map(|s| s.expect("six distinct slots filled"));
        let to_array = |v: Vec<MlpModel>| -> [MlpModel; 3] { v.try_into().expect("length checked") };
        let model = Self::from_parts(
            to_array(encoders),
            to_array(decoders),
            predictors,
            body.viewpoint_centroids
                .clone()
                .map(|c| [c.front, c.side, c.rear]),
        )?;
        ensure_dims(body.latent_dim, model.latent_dim, "declared latent dim")?;
        Ok(model)
    }
}

fn collect_parts<const N: usize>(parts: [Result<MlpModel>; N]) -> Result<[MlpModel; N]> {
    let v: Vec<MlpModel> = parts.into_iter().collect::<Result<_>>()?;
    Ok(v.try_into().expect("length preserved"))
}

impl Parameterized for CvfrModel {
    fn flat_params(&self) -> Vec<f64> {
        self.parts().flat_map(|m| m.flat_params()).collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.parts().map(|m| m.num_params()).sum();
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
pub struct CvfrDocument {
    pub cvfr: CvfrBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvfrBody {
    /// Front, side, rear.
    pub encoders: Vec<MlpDocument>,
    pub decoders: Vec<MlpDocument>,
    pub predictors: Vec<PredictorDocument>,
    pub latent_dim: usize,
    #[serde(default)]
    pub viewpoint_centroids: Option<CentroidDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorDocument {
    pub from: Viewpoint,
    pub to: Viewpoint,
    pub network: MlpDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentroidDocument {
    pub front: Vec<f64>,
    pub side: Vec<f64>,
    pub rear: Vec<f64>,
}

/// Gradients for every network of a [`CvfrModel`], in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct CvfrGradients {
    encoders: Vec<MlpGradients>,
    decoders: Vec<MlpGradients>,
    predictors: Vec<MlpGradients>,
}

impl CvfrGradients {
    pub fn zeros_like(model: &CvfrModel) -> Self {
        Self {
            encoders: model.encoders.iter().map(MlpGradients::zeros_like).collect(),
            decoders: model.decoders.iter().map(MlpGradients::zeros_like).collect(),
            predictors: model.predictors.iter().map(MlpGradients::zeros_like).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.encoders
            .iter()
            .chain(&self.decoders)
            .chain(&self.predictors)
            .flat_map(|g| g.flat())
            .collect()
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut MlpGradients> {
        self.encoders
            .iter_mut()
            .chain(&mut self.decoders)
            .chain(&mut self.predictors)
    }

    fn iter(&self) -> impl Iterator<Item = &MlpGradients> {
        self.encoders
            .iter()
            .chain(&self.decoders)
            .chain(&self.predictors)
    }
}

/// One aligned training example: the appearance features of one identity
/// from the front, side and rear.
pub type AlignedTriplet = [Vec<f64>; 3];

/// Aligned triplets plus per-viewpoint viewpoint-feature centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSet {
    pub triplets: Vec<AlignedTriplet>,
    pub centroids: [Vec<f64>; 3],
}

impl AlignedSet {
    /// Draw `per_identity` random (front, side, rear) combinations of each
    /// identity's records. Every identity must show all three viewpoints.
    pub fn from_records(records: &[FeatureRecord], per_identity: usize, seed: u64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::DegenerateData("no training records".into()));
        }
        let dv = records[0].viewpoint_feature.len();
        let mut by_identity: BTreeMap<&str, [Vec<&FeatureRecord>; 3]> = BTreeMap::new();
        let mut sums = [vec![0.0; dv], vec![0.0; dv], vec![0.0; dv]];
        for r in records {
            ensure_dims(dv, r.viewpoint_feature.len(), "viewpoint feature")?;
            by_identity.entry(&r.vehicle_id).or_default()[r.viewpoint.index()].push(r);
            for (s, v) in sums[r.viewpoint.index()].iter_mut().zip(&r.viewpoint_feature) {
                *s += v;
            }
        }
        let rng = SeededRng::new(seed);
        let mut triplets = Vec::with_capacity(by_identity.len() * per_identity);
        for (n, (vid, views)) in by_identity.iter().enumerate() {
            if let Some(v) = views.iter().position(Vec::is_empty) {
                return Err(Error::DegenerateData(format!(
                    "training identity {vid} has no {} record; recovery training needs all three viewpoints",
                    Viewpoint::ALL[v]
                )));
            }
            let mut r = rng.fork(n as u64);
            for _ in 0..per_identity {
                triplets.push([0, 1, 2].map(|v| views[v][r.below(views[v].len())].appearance.clone()));
            }
        }
        let normalize = |s: &Vec<f64>| {
            l2_normalize(s).map_err(|_| Error::DegenerateData("viewpoint centroid has zero norm".into()))
        };
        Ok(Self {
            triplets,
            centroids: [normalize(&sums[0])?, normalize(&sums[1])?, normalize(&sums[2])?],
        })
    }
}

/// Loss terms summed over the three viewpoint pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CvfrLoss {
    pub reconstruction: f64,
    pub contrastive: f64,
    pub prediction: f64,
    pub cross_reconstruction: f64,
}

impl CvfrLoss {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.contrastive + self.prediction + self.cross_reconstruction
    }

    fn add(&mut self, other: &CvfrLoss) {
        self.reconstruction += other.reconstruction;
        self.contrastive += other.contrastive;
        self.prediction += other.prediction;
        self.cross_reconstruction += other.cross_reconstruction;
    }

    fn scaled(&self, s: f64) -> CvfrLoss {
        CvfrLoss {
            reconstruction: self.reconstruction * s,
            contrastive: self.contrastive * s,
            prediction: self.prediction * s,
            cross_reconstruction: self.cross_reconstruction * s,
        }
    }
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>], scale: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += scale * y;
        }
    }
}

/// Total objective on a batch of aligned triplets; accumulates gradients
/// into `grads` when given.
pub fn batch_loss(
    model: &CvfrModel,
    batch: &[&AlignedTriplet],
    alpha: f64,
    mut grads: Option<&mut CvfrGradients>,
) -> Result<CvfrLoss> {
    if batch.len() < 2 {
        return Err(Error::invalid("recovery batches need at least 2 samples"));
    }
    let m = batch.len();
    let da = model.appearance_dim();
    for t in batch {
        for x in t.iter() {
            ensure_dims(da, x.len(), "aligned appearance feature")?;
        }
    }
    // per view: encoder caches and latents
    let enc: Vec<Vec<ForwardCache>> = (0..3)
        .map(|v| {
            batch
                .iter()
                .map(|t| model.encoders[v].forward(&t[v], None))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let z: Vec<Vec<Vec<f64>>> = enc
        .iter()
        .map(|c| c.iter().map(|f| f.output().to_vec()).collect())
        .collect();
    let mut dz: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; model.latent_dim]; m]; 3];
    let mut loss = CvfrLoss::default();

    // Reconstruction appears in the two pairs containing each view.
    for v in 0..3 {
        let dec: Vec<ForwardCache> = z[v]
            .iter()
            .map(|zi| model.decoders[v].forward(zi, None))
            .collect::<Result<_>>()?;
        let recon: Vec<Vec<f64>> = dec.iter().map(|c| c.output().to_vec()).collect();
        let x: Vec<Vec<f64>> = batch.iter().map(|t| t[v].clone()).collect();
        let (l, g) = squared_error_grad(&x, &recon)?;
        loss.reconstruction += 2.0 * l;
        if let Some(gr) = grads.as_deref_mut() {
            for i in 0..m {
                let go: Vec<f64> = g[i].iter().map(|x| 2.0 * x).collect();
                let back = model.decoders[v].backward_into(&dec[i], &go, &mut gr.decoders[v])?;
                add_into(std::slice::from_mut(&mut dz[v][i]), &[back.input], 1.0);
            }
        }
    }

    for &(u, v) in &VIEW_PAIRS {
        let (c, gu, gv) = contrastive_grad(&z[u], &z[v], alpha)?;
        loss.contrastive += c;
        if grads.is_some() {
            add_into(&mut dz[u], &gu, 1.0);
            add_into(&mut dz[v], &gv, 1.0);
        }
        for (from, to) in [(u, v), (v, u)] {
            let slot = predictor_slot(from, to);
            let pred: Vec<ForwardCache> = z[from]
                .iter()
                .map(|zi| model.predictors[slot].forward(zi, None))
                .collect::<Result<_>>()?;
            let g_lat: Vec<Vec<f64>> = pred.iter().map(|c| c.output().to_vec()).collect();
            // latent prediction: ‖G(z_from) − z_to‖²
            let (lp, gp) = squared_error_grad(&z[to], &g_lat)?;
            loss.prediction += lp;
            // decoded prediction: ‖D_to(G(z_from)) − x_to‖²
            let dec: Vec<ForwardCache> = g_lat
                .iter()
                .map(|gi| model.decoders[to].forward(gi, None))
                .collect::<Result<_>>()?;
            let xr: Vec<Vec<f64>> = dec.iter().map(|c| c.output().to_vec()).collect();
            let x_to: Vec<Vec<f64>> = batch.iter().map(|t| t[to].clone()).collect();
            let (lc, gc) = squared_error_grad(&x_to, &xr)?;
            loss.cross_reconstruction += lc;
            if let Some(gr) = grads.as_deref_mut() {
                for i in 0..m {
                    let back_dec = model.decoders[to].backward_into(&dec[i], &gc[i], &mut gr.decoders[to])?;
                    let mut g_out = gp[i].clone();
                    for (a, b) in g_out.iter_mut().zip(&back_dec.input) {
                        *a += b;
                    }
                    let back = model.predictors[slot].backward_into(&pred[i], &g_out, &mut gr.predictors[slot])?;
                    for (a, b) in dz[from][i].iter_mut().zip(&back.input) {
                        *a += b;
                    }
                    // the target latent also receives the prediction gradient
                    for (a, b) in dz[to][i].iter_mut().zip(&gp[i]) {
                        *a -= b;
                    }
                }
            }
        }
    }
    if !loss.total().is_finite() {
        return Err(Error::NonFinite("recovery training loss".into()));
    }
    if let Some(gr) = grads {
        for v in 0..3 {
            for i in 0..m {
                model.encoders[v].backward_into(&enc[v][i], &dz[v][i], &mut gr.encoders[v])?;
            }
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvfrTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
    /// Hidden width of every network; `None` means 4 × latent dim.
    pub hidden_width: Option<usize>,
    pub alpha: f64,
    /// Random (front, side, rear) combinations drawn per training identity.
    pub triplets_per_identity: usize,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for CvfrTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.005,
            batch_size: 32,
            latent_dim: 32,
            hidden_width: None,
            alpha: DEFAULT_CONTRASTIVE_ALPHA,
            triplets_per_identity: 6,
            max_grad_norm: Some(10.0),
            seed: 0,
        }
    }
}

impl CvfrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.latent_dim < 2 {
            return bad("latent dim must be at least 2");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.hidden_width == Some(0) || self.triplets_per_identity == 0 {
            return bad("hidden width and triplets per identity must be positive");
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.hidden_width.unwrap_or(4 * self.latent_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvfrTraceRow {
    pub epoch: usize,
    pub reconstruction: f64,
    pub contrastive: f64,
    pub prediction: f64,
    pub cross_reconstruction: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct CvfrTraining {
    pub model: CvfrModel,
    /// Row 0 evaluates the initial model, row `e` the model after epoch `e`;
    /// values are per-batch means over a fixed batching of the whole set.
    pub trace: Vec<CvfrTraceRow>,
}

/// Contiguous batches of `size`; a trailing batch shorter than 2 is merged
/// into the previous one.
fn chunk_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

pub fn train_cvfr(set: &AlignedSet, config: &CvfrTrainConfig) -> Result<CvfrTraining> {
    config.validate()?;
    let data = &set.triplets;
    if data.len() < 2 {
        return Err(Error::DegenerateData("recovery training needs at least 2 triplets".into()));
    }
    let da = data[0][0].len();
    let root = SeededRng::new(config.seed);
    let mut model = CvfrModel::init(da, config.latent_dim, config.hidden(), &mut root.fork(0))?
        .with_centroids(set.centroids.clone())?;
    let fixed: Vec<usize> = (0..data.len()).collect();
    let eval_batches = chunk_batches(&fixed, config.batch_size);
    let evaluate = |model: &CvfrModel| -> Result<CvfrLoss> {
        let mut acc = CvfrLoss::default();
        for b in &eval_batches {
            let refs: Vec<&AlignedTriplet> = b.iter().map(|&i| &data[i]).collect();
            acc.add(&batch_loss(model, &refs, config.alpha, None)?);
        }
        Ok(acc.scaled(1.0 / eval_batches.len() as f64))
    };
    let row = |epoch: usize, l: CvfrLoss| CvfrTraceRow {
        epoch,
        reconstruction: l.reconstruction,
        contrastive: l.contrastive,
        prediction: l.prediction,
        cross_reconstruction: l.cross_reconstruction,
        total: l.total(),
    };
    let mut trace = vec![row(0, evaluate(&model)?)];
    let mut rng = root.fork(1);
    let mut order = fixed.clone();
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        for b in chunk_batches(&order, config.batch_size) {
            let refs: Vec<&AlignedTriplet> = b.iter().map(|&i| &data[i]).collect();
            let mut grads = CvfrGradients::zeros_like(&model);
            batch_loss(&model, &refs, config.alpha, Some(&mut grads))?;
            if let Some(max) = config.max_grad_norm {
                let n = norm(&grads.flat());
                if n > max {
                    grads.iter_mut().for_each(|g| g.scale(max / n));
                }
            }
            let updates: Vec<&MlpGradients> = grads.iter().collect();
            for (m, g) in model.parts_mut().zip(updates) {
                m.sgd_step(g, config.learning_rate)?;
            }
        }
        trace.push(row(epoch + 1, evaluate(&model)?));
    }
    Ok(CvfrTraining { model, trace })
}
