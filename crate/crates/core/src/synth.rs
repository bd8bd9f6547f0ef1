//! Seeded generator of vehicle observations across a camera network.
//!
//! Each observation is a raw input vector built from additive factors:
//!
//! ```text
//! x = identity + viewpoint_offset(identity, view) + camera_style + illumination + noise
//! ```
//!
//! The viewpoint offset is a class-wide direction rotated by a fixed angle
//! in an identity-specific plane, so every identity looks different from
//! each side while the three classes stay separable. Identities live in a
//! low-rank subspace, and the plane is a fixed per-view linear function of
//! the identity's coordinates in it, which makes one side of a vehicle
//! predictable from another. Observations come in
//! camera visits: all records of a visit share camera, viewpoint and
//! illumination and differ only by noise.
//!
//! Evaluation identities never appear in the training split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::vector::{dot, l2_normalize, norm};
use crate::nn::SeededRng;
use crate::viewpoint::Viewpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Identities in the evaluation (query + gallery) split.
    pub num_identities: usize,
    /// Identities in the disjoint training split.
    pub num_train_identities: usize,
    pub num_cameras: usize,
    /// Inclusive range of distinct cameras each identity passes.
    pub cameras_per_identity: [usize; 2],
    /// Target mean of the per-identity camera count.
    pub mean_cameras_per_identity: f64,
    /// Inclusive range of records captured per camera visit.
    pub records_per_visit: [usize; 2],
    pub input_dim: usize,
    /// Dimension of the subspace identity vectors are drawn from.
    pub identity_rank: usize,
    pub identity_scale: f64,
    pub viewpoint_offset: f64,
    /// Angle (radians) by which each identity's viewpoint offsets are
    /// rotated away from the class direction.
    pub viewpoint_rotation: f64,
    /// Per-record noise σ_a.
    pub appearance_noise: f64,
    /// Per-camera style noise σ_c.
    pub camera_noise: f64,
    /// Shift magnitudes for the morning, afternoon and night levels.
    pub illumination: [f64; 3],
    /// Query records per evaluation identity beyond the three-view set;
    /// they repeat viewpoints.
    pub extra_queries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 50,
            num_train_identities: 600,
            num_cameras: 200,
            cameras_per_identity: [30, 50],
            mean_cameras_per_identity: 34.6,
            records_per_visit: [1, 2],
            input_dim: 96,
            identity_rank: 6,
            identity_scale: 1.0,
            viewpoint_offset: 1.0,
            viewpoint_rotation: 1.2,
            appearance_noise: 0.7,
            camera_noise: 0.7,
            illumination: [0.15, 0.0, 0.3],
            extra_queries: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_identities == 0 || self.num_train_identities < 2 {
            return bad("need at least 1 evaluation and 2 training identities".into());
        }
        if self.input_dim == 0 || self.num_cameras == 0 {
            return bad("dimensions and camera count must be positive".into());
        }
        if self.identity_rank == 0 || self.identity_rank > self.input_dim {
            return bad(format!(
                "identity_rank must be in 1..={}, got {}",
                self.input_dim, self.identity_rank
            ));
        }
        let [lo, hi] = self.cameras_per_identity;
        if lo > hi || hi > self.num_cameras {
            return bad(format!(
                "cameras_per_identity {lo}..={hi} infeasible with {} cameras",
                self.num_cameras
            ));
        }
        if lo < 3 {
            return bad("every identity needs at least 3 cameras to show all viewpoints".into());
        }
        let mean = self.mean_cameras_per_identity;
        if !(mean >= lo as f64 && mean <= hi as f64) {
            return bad(format!("mean camera count {mean} outside {lo}..={hi}"));
        }
        let [rlo, rhi] = self.records_per_visit;
        if rlo == 0 || rlo > rhi {
            return bad("records_per_visit must be a positive range".into());
        }
        let scalars = [
            self.identity_scale,
            self.viewpoint_offset,
            self.viewpoint_rotation,
            self.appearance_noise,
            self.camera_noise,
        ];
        if scalars
            .iter()
            .chain(&self.illumination)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return bad("scales and noise levels must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    Morning,
    Afternoon,
    Night,
}

impl Illumination {
    const ALL: [Illumination; 3] = [
        Illumination::Morning,
        Illumination::Afternoon,
        Illumination::Night,
    ];
}

/// One raw observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub record_id: String,
    pub vehicle_id: String,
    pub camera_id: String,
    pub viewpoint: Viewpoint,
    pub input: Vec<f64>,
}

/// Generative factors behind a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFactors {
    pub record_id: String,
    pub identity: usize,
    pub camera: usize,
    pub visit: usize,
    pub illumination: Illumination,
}

/// Query records for one evaluation identity: one per viewpoint, in
/// front/side/rear order, plus extras that repeat viewpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthQuery {
    pub vehicle_id: String,
    pub records: Vec<RawRecord>,
    pub extra: Vec<RawRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub identity_vectors: Vec<Vec<f64>>,
    pub viewpoint_directions: Vec<Vec<f64>>,
    pub camera_styles: Vec<Vec<f64>>,
    pub illumination_shifts: Vec<Vec<f64>>,
    pub factors: Vec<RecordFactors>,
    pub cameras_per_identity: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub train: Vec<RawRecord>,
    pub queries: Vec<SynthQuery>,
    pub gallery: Vec<RawRecord>,
    pub truth: GroundTruth,
}

impl SynthDataset {
    /// Distinct training identities in first-appearance order.
    pub fn train_identities(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.train {
            if seen.last() != Some(&r.vehicle_id) && !seen.contains(&r.vehicle_id) {
                seen.push(r.vehicle_id.clone());
            }
        }
        seen
    }
}

pub fn vehicle_id(identity: usize) -> String {
    format!("v{identity:04}")
}

pub fn camera_id(camera: usize) -> String {
    format!("c{camera:04}")
}

/// Exponent `k` such that `lo + floor((hi − lo) · u^k)`, `u ~ U[0,1)`, has
/// the requested mean.
fn camera_count_exponent(lo: usize, hi: usize, mean: f64) -> f64 {
    let span = (hi - lo) as f64;
    if span == 0.0 {
        return 1.0;
    }
    // E[floor(span · u^k)] = Σ_{j=1}^{span-1} (1 − (j/span)^{1/k}), decreasing in k
    let expected = |k: f64| -> f64 {
        (1..(hi - lo))
            .map(|j| 1.0 - (j as f64 / span).powf(1.0 / k))
            .sum()
    };
    let target = mean - lo as f64;
    let (mut a, mut b) = (1e-3_f64, 1e3_f64);
    for _ in 0..200 {
        let mid = (a * b).sqrt();
        if expected(mid) > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    (a * b).sqrt()
}

fn random_direction(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let v = rng.normal_vec(dim, 1.0);
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Unit vector along the part of `v` orthogonal to unit vector `base`, or
/// `None` when `v` is (nearly) parallel to it.
fn orthogonal_part(v: &[f64], base: &[f64]) -> Option<Vec<f64>> {
    let p = dot(v, base);
    let w: Vec<f64> = v.iter().zip(base).map(|(x, b)| x - p * b).collect();
    if norm(&w) > 1e-6 {
        l2_normalize(&w).ok()
    } else {
        None
    }
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

struct World {
    /// d × r map from identity coordinates into input space.
    identity_basis: Vec<Vec<f64>>,
    viewpoint_dirs: Vec<Vec<f64>>,
    /// Per viewpoint, a random r × r map taking identity coordinates to the
    /// coordinates of the direction its viewpoint offset is rotated towards.
    view_maps: Vec<Vec<Vec<f64>>>,
    camera_styles: Vec<Vec<f64>>,
    illumination: Vec<Vec<f64>>,
}

struct IdentitySample {
    vector: Vec<f64>,
    offsets: [Vec<f64>; 3],
    visits: Vec<(usize, Viewpoint, Illumination, usize)>,
}

impl World {
    fn lift(&self, coords: &[f64]) -> Vec<f64> {
        self.identity_basis.iter().map(|row| dot(row, coords)).collect()
    }
}

fn sample_identity(
    cfg: &SynthConfig,
    world: &World,
    exponent: f64,
    rng: &mut SeededRng,
) -> Result<IdentitySample> {
    let d = cfg.input_dim;
    let coords = random_direction(rng, cfg.identity_rank);
    let vector = l2_normalize(&world.lift(&coords))
        .map_err(|_| Error::DegenerateData("identity vector has zero norm".into()))?;
    let vector = scaled(&vector, cfg.identity_scale);
    let (c, s) = (cfg.viewpoint_rotation.cos(), cfg.viewpoint_rotation.sin());
    let offsets = [0, 1, 2].map(|v| {
        let base = &world.viewpoint_dirs[v];
        let turned_coords: Vec<f64> = world.view_maps[v].iter().map(|row| dot(row, &coords)).collect();
        let turned = world.lift(&turned_coords);
        let perp = orthogonal_part(&turned, base).unwrap_or_else(|| vec![0.0; d]);
        base.iter()
            .zip(&perp)
            .map(|(b, p)| cfg.viewpoint_offset * (c * b + s * p))
            .collect::<Vec<f64>>()
    });
    let [lo, hi] = cfg.cameras_per_identity;
    let extra = ((hi - lo) as f64 * rng.uniform().powf(exponent)).floor() as usize;
    let n_cameras = (lo + extra).min(hi);
    let cameras = rng.sample_indices(cfg.num_cameras, n_cameras);
    let [rlo, rhi] = cfg.records_per_visit;
    let visits = cameras
        .into_iter()
        .enumerate()
        .map(|(i, cam)| {
            // the first three visits cover all viewpoints
            let view = if i < 3 {
                Viewpoint::ALL[i]
            } else {
                Viewpoint::ALL[rng.below(3)]
            };
            let illum = Illumination::ALL[rng.below(3)];
            let records = rlo + rng.below(rhi - rlo + 1);
            (cam, view, illum, records)
        })
        .collect();
    Ok(IdentitySample {
        vector,
        offsets,
        visits,
    })
}

/// Generate a dataset. Identical configs (including the seed) produce
/// bitwise-identical datasets.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let d = config.input_dim;
    let root = SeededRng::new(config.seed);
    let mut wrng = root.fork(1);
    let identity_basis = (0..d).map(|_| wrng.normal_vec(config.identity_rank, 1.0)).collect();
    let viewpoint_dirs: Vec<Vec<f64>> = (0..3).map(|_| random_direction(&mut wrng, d)).collect();
    let view_maps = (0..3)
        .map(|_| (0..config.identity_rank).map(|_| wrng.normal_vec(config.identity_rank, 1.0)).collect())
        .collect();
    let camera_styles = (0..config.num_cameras)
        .map(|_| wrng.normal_vec(d, config.camera_noise / (d as f64).sqrt()))
        .collect();
    let illumination = config
        .illumination
        .iter()
        .map(|m| scaled(&random_direction(&mut wrng, d), *m))
        .collect();
    let world = World {
        identity_basis,
        viewpoint_dirs,
        view_maps,
        camera_styles,
        illumination,
    };
    let [lo, hi] = config.cameras_per_identity;
    let exponent = camera_count_exponent(lo, hi, config.mean_cameras_per_identity);
    let noise_sd = config.appearance_noise / (d as f64).sqrt();

    let total = config.num_train_identities + config.num_identities;
    let mut records_by_identity: Vec<Vec<RawRecord>> = Vec::with_capacity(total);
    let mut identity_vectors = Vec::with_capacity(total);
    let mut factors = Vec::new();
    let mut cameras_per_identity = Vec::with_capacity(total);
    let mut next_record = 0usize;
    for identity in 0..total {
        let mut rng = root.fork(1000 + identity as u64);
        let sample = sample_identity(config, &world, exponent, &mut rng)?;
        cameras_per_identity.push(sample.visits.len());
        let mut records = Vec::new();
        for (visit, &(cam, view, illum, count)) in sample.visits.iter().enumerate() {
            for _ in 0..count {
                let mut x = sample.vector.clone();
                let parts = [
                    &sample.offsets[view.index()],
                    &world.camera_styles[cam],
                    &world.illumination[illum as usize],
                ];
                for part in parts {
                    for (xi, p) in x.iter_mut().zip(part.iter()) {
                        *xi += p;
                    }
                }
                for xi in x.iter_mut() {
                    *xi += noise_sd * rng.normal();
                }
                let record_id = format!("r{next_record:07}");
                next_record += 1;
                factors.push(RecordFactors {
                    record_id: record_id.clone(),
                    identity,
                    camera: cam,
                    visit,
                    illumination: illum,
                });
                records.push(RawRecord {
                    record_id,
                    vehicle_id: vehicle_id(identity),
                    camera_id: camera_id(cam),
                    viewpoint: view,
                    input: x,
                });
            }
        }
        identity_vectors.push(sample.vector);
        records_by_identity.push(records);
    }

    let mut train = Vec::new();
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for (identity, records) in records_by_identity.into_iter().enumerate() {
        if identity < config.num_train_identities {
            train.extend(records);
            continue;
        }
        let mut rng = root.fork(500_000 + identity as u64);
        let mut chosen: Vec<usize> = Vec::new();
        for view in Viewpoint::ALL {
            let candidates: Vec<usize> = (0..records.len())
                .filter(|&i| records[i].viewpoint == view)
                .collect();
            chosen.push(candidates[rng.below(candidates.len())]);
        }
        let rest: Vec<usize> = (0..records.len()).filter(|i| !chosen.contains(i)).collect();
        let extra_pick: Vec<usize> = rng
            .sample_indices(rest.len(), config.extra_queries)
            .into_iter()
            .map(|i| rest[i])
            .collect();
        let query_records = chosen.iter().map(|&i| records[i].clone()).collect();
        let mut extra_sorted = extra_pick.clone();
        extra_sorted.sort_unstable();
        let extra = extra_sorted.iter().map(|&i| records[i].clone()).collect();
        queries.push(SynthQuery {
            vehicle_id: vehicle_id(identity),
            records: query_records,
            extra,
        });
        gallery.extend(
            records
                .into_iter()
                .enumerate()
                .filter(|(i, _)| !chosen.contains(i) && !extra_pick.contains(i))
                .map(|(_, r)| r),
        );
    }

    Ok(SynthDataset {
        config: config.clone(),
        train,
        queries,
        gallery,
        truth: GroundTruth {
            identity_vectors,
            viewpoint_directions: world.viewpoint_dirs,
            camera_styles: world.camera_styles,
            illumination_shifts: world.illumination,
            factors,
            cameras_per_identity,
        },
    })
}

/// Per identity: add `add_k` near-duplicates of one randomly chosen record
/// (same camera and viewpoint) and remove `add_k` of that identity's
/// records from other cameras, keeping the per-identity count fixed.
///
/// For a fixed seed the modifications are nested: the changes made for a
/// smaller `add_k` are a subset of those for a larger one.
pub fn modify_gallery(
    gallery: &[RawRecord],
    add_k: usize,
    seed: u64,
    duplicate_noise: f64,
) -> Result<Vec<RawRecord>> {
    if add_k == 0 {
        return Ok(gallery.to_vec());
    }
    let mut by_identity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in gallery.iter().enumerate() {
        by_identity.entry(r.vehicle_id.as_str()).or_default().push(i);
    }
    let root = SeededRng::new(seed);
    let mut removed = vec![false; gallery.len()];
    let mut added = Vec::new();
    for (n, (vid, members)) in by_identity.iter().enumerate() {
        let mut rng = root.fork(n as u64);
        let source = &gallery[members[rng.below(members.len())]];
        let mut removable: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| gallery[i].camera_id != source.camera_id)
            .collect();
        if removable.len() < add_k {
            return Err(Error::DegenerateData(format!(
                "vehicle {vid} has {} removable cross-camera records, need {add_k}",
                removable.len()
            )));
        }
        rng.shuffle(&mut removable);
        for &i in &removable[..add_k] {
            removed[i] = true;
        }
        let sd = duplicate_noise / (source.input.len() as f64).sqrt();
        for j in 0..add_k {
            let mut jitter = rng.fork(1 + j as u64);
            let input = source.input.iter().map(|x| x + sd * jitter.normal()).collect();
            added.push(RawRecord {
                record_id: format!("{}-dup{j:02}", source.record_id),
                vehicle_id: source.vehicle_id.clone(),
                camera_id: source.camera_id.clone(),
                viewpoint: source.viewpoint,
                input,
            });
        }
    }
    let mut out: Vec<RawRecord> = gallery
        .iter()
        .zip(&removed)
        .filter(|(_, r)| !**r)
        .map(|(rec, _)| rec.clone())
        .collect();
    out.extend(added);
    Ok(out)
}
