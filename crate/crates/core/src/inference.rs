//! Single, average and viewpoint-weighted multi-query ranking.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cvfr::CvfrModel;
use crate::error::{ensure_dims, Error, Result};
use crate::nn::vector::{dot, l2_normalize, norm, softmax_unchecked};
use crate::viewpoint::Viewpoint;

/// Tolerance on the unit norm of stored features.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub record_id: String,
    pub vehicle_id: String,
    pub camera_id: String,
    pub viewpoint: Viewpoint,
    pub appearance: Vec<f64>,
    pub viewpoint_feature: Vec<f64>,
}

impl FeatureRecord {
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        for (name, v) in [
            ("appearance", &self.appearance),
            ("viewpoint_feature", &self.viewpoint_feature),
        ] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{name} of {}", self.record_id)));
            }
            let n = norm(v);
            if (n - 1.0).abs() > tolerance {
                return Err(Error::invalid(format!(
                    "{name} of record {} has norm {n}, expected unit norm",
                    self.record_id
                )));
            }
        }
        Ok(())
    }
}

/// Up to three query records with distinct viewpoints, plus the viewpoints
/// that are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub vehicle_id: String,
    pub records: Vec<FeatureRecord>,
    pub missing: Vec<Viewpoint>,
}

impl QuerySet {
    /// Build a query set; the missing set is the complement of the records'
    /// viewpoints.
    pub fn new(records: Vec<FeatureRecord>) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::invalid("query set needs at least one record"));
        };
        let vehicle_id = first.vehicle_id.clone();
        let mut seen = [false; 3];
        for r in &records {
            if r.vehicle_id != vehicle_id {
                return Err(Error::invalid(format!(
                    "query set mixes vehicles {vehicle_id} and {}",
                    r.vehicle_id
                )));
            }
            if std::mem::replace(&mut seen[r.viewpoint.index()], true) {
                return Err(Error::invalid(format!(
                    "query set for {vehicle_id} repeats viewpoint {}",
                    r.viewpoint
                )));
            }
        }
        let missing = Viewpoint::ALL
            .into_iter()
            .filter(|v| !seen[v.index()])
            .collect();
        Ok(Self {
            vehicle_id,
            records,
            missing,
        })
    }

    /// Same set with the record of `view` removed.
    pub fn without(&self, view: Viewpoint) -> Result<Self> {
        Self::new(
            self.records
                .iter()
                .filter(|r| r.viewpoint != view)
                .cloned()
                .collect(),
        )
    }
}

/// Gallery indices in descending score order with their scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// How per-query similarities are fused in multi-query mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// `Σ wᵢ · cos(qᵢ, g)`.
    #[default]
    WeightedSum,
    /// `cos(Σ wᵢ · qᵢ, g)`: weight the query features, then compare.
    FusedCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceOptions {
    /// Drop gallery records sharing vehicle and camera with a query record.
    pub junk_filter: bool,
    pub fusion: Fusion,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            junk_filter: true,
            fusion: Fusion::WeightedSum,
        }
    }
}

/// Read-only gallery with cached inverse norms and tie-break order.
#[derive(Debug, Clone)]
pub struct Gallery {
    records: Vec<FeatureRecord>,
    inv_appearance: Vec<f64>,
    inv_viewpoint: Vec<f64>,
    /// Position of each record in ascending record-id order.
    id_rank: Vec<usize>,
}

impl Gallery {
    pub fn new(records: Vec<FeatureRecord>) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::invalid("gallery is empty"));
        };
        let (da, dv) = (first.appearance.len(), first.viewpoint_feature.len());
        let mut ids = HashSet::with_capacity(records.len());
        let mut inv_appearance = Vec::with_capacity(records.len());
        let mut inv_viewpoint = Vec::with_capacity(records.len());
        for r in &records {
            ensure_dims(da, r.appearance.len(), "gallery appearance feature")?;
            ensure_dims(dv, r.viewpoint_feature.len(), "gallery viewpoint feature")?;
            if !ids.insert(r.record_id.as_str()) {
                return Err(Error::invalid(format!("duplicate record id {}", r.record_id)));
            }
            inv_appearance.push(inverse_norm(&r.appearance, &r.record_id)?);
            inv_viewpoint.push(inverse_norm(&r.viewpoint_feature, &r.record_id)?);
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| records[a].record_id.cmp(&records[b].record_id));
        let mut id_rank = vec![0; records.len()];
        for (pos, &i) in order.iter().enumerate() {
            id_rank[i] = pos;
        }
        Ok(Self {
            records,
            inv_appearance,
            inv_viewpoint,
            id_rank,
        })
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn appearance_dim(&self) -> usize {
        self.records[0].appearance.len()
    }

    pub fn viewpoint_dim(&self) -> usize {
        self.records[0].viewpoint_feature.len()
    }

    /// Sort admitted indices by descending score, ties by ascending record id.
    fn rank(&self, admitted: &[usize], mut scores: Vec<f64>) -> Result<RankedList> {
        // −0.0 and 0.0 must tie
        scores.iter_mut().for_each(|s| *s += 0.0);
        if admitted.is_empty() {
            return Err(Error::DegenerateData("no admitted gallery records".into()));
        }
        if let Some(p) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "score of gallery record {}",
                self.records[admitted[p]].record_id
            )));
        }
        let mut order: Vec<usize> = (0..admitted.len()).collect();
        order.sort_unstable_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(self.id_rank[admitted[a]].cmp(&self.id_rank[admitted[b]]))
        });
        Ok(RankedList {
            indices: order.iter().map(|&i| admitted[i]).collect(),
            scores: order.iter().map(|&i| scores[i]).collect(),
        })
    }
}

fn inverse_norm(v: &[f64], record: &str) -> Result<f64> {
    let n = norm(v);
    if n > 0.0 && n.is_finite() {
        Ok(1.0 / n)
    } else {
        Err(Error::invalid(format!("feature of record {record} has zero norm")))
    }
}

/// Gallery indices admitted for a query made of `queries`.
pub fn admit_gallery(queries: &[&FeatureRecord], gallery: &Gallery, junk_filter: bool) -> Vec<usize> {
    if !junk_filter {
        return (0..gallery.len()).collect();
    }
    let junk: HashSet<(&str, &str)> = queries
        .iter()
        .map(|q| (q.vehicle_id.as_str(), q.camera_id.as_str()))
        .collect();
    gallery
        .records
        .iter()
        .enumerate()
        .filter(|(_, g)| !junk.contains(&(g.vehicle_id.as_str(), g.camera_id.as_str())))
        .map(|(i, _)| i)
        .collect()
}

/// A query feature pair prepared for scoring: unit appearance and
/// viewpoint vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub appearance: Vec<f64>,
    pub viewpoint: Vec<f64>,
}

impl QueryFeatures {
    pub fn from_record(r: &FeatureRecord) -> Result<Self> {
        Ok(Self {
            appearance: l2_normalize(&r.appearance)?,
            viewpoint: l2_normalize(&r.viewpoint_feature)?,
        })
    }
}

fn check_query_dims(q: &[f64], gallery: &Gallery, viewpoint: bool) -> Result<()> {
    if viewpoint {
        ensure_dims(gallery.viewpoint_dim(), q.len(), "query viewpoint feature")
    } else {
        ensure_dims(gallery.appearance_dim(), q.len(), "query appearance feature")
    }
}

/// Rank `admitted` by cosine similarity to one appearance feature.
pub fn rank_by_appearance(
    appearance: &[f64],
    gallery: &Gallery,
    admitted: &[usize],
) -> Result<RankedList> {
    check_query_dims(appearance, gallery, false)?;
    let q = l2_normalize(appearance)?;
    let scores = admitted
        .iter()
        .map(|&i| dot(&q, &gallery.records[i].appearance) * gallery.inv_appearance[i])
        .collect();
    gallery.rank(admitted, scores)
}

pub fn score_single(
    query: &FeatureRecord,
    gallery: &Gallery,
    options: &InferenceOptions,
) -> Result<RankedList> {
    let admitted = admit_gallery(&[query], gallery, options.junk_filter);
    rank_by_appearance(&query.appearance, gallery, &admitted)
}

/// Normalized mean of appearance features.
pub fn mean_appearance(features: &[&[f64]]) -> Result<Vec<f64>> {
    let mean = crate::nn::vector::mean(features)?;
    l2_normalize(&mean).map_err(|_| {
        Error::DegenerateData("query features cancel out; their mean has zero norm".into())
    })
}

pub fn score_average(
    queries: &QuerySet,
    gallery: &Gallery,
    options: &InferenceOptions,
) -> Result<RankedList> {
    let refs: Vec<&FeatureRecord> = queries.records.iter().collect();
    let admitted = admit_gallery(&refs, gallery, options.junk_filter);
    let normalized: Vec<Vec<f64>> = queries
        .records
        .iter()
        .map(|r| l2_normalize(&r.appearance))
        .collect::<Result<_>>()?;
    let views: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
    rank_by_appearance(&mean_appearance(&views)?, gallery, &admitted)
}

/// Softmax of the cosine similarities between each query viewpoint feature
/// and the gallery viewpoint feature.
pub fn viewpoint_weights(query_viewpoints: &[&[f64]], gallery_viewpoint: &[f64]) -> Result<Vec<f64>> {
    if query_viewpoints.is_empty() {
        return Err(Error::invalid("no query viewpoint features"));
    }
    let sims = query_viewpoints
        .iter()
        .map(|q| crate::nn::cosine_sim(q, gallery_viewpoint))
        .collect::<Result<Vec<_>>>()?;
    crate::nn::softmax(&sims)
}

/// Viewpoint-weighted fusion over an arbitrary list of prepared queries.
pub fn rank_fused(
    queries: &[QueryFeatures],
    gallery: &Gallery,
    admitted: &[usize],
    fusion: Fusion,
) -> Result<RankedList> {
    if queries.is_empty() {
        return Err(Error::invalid("no query features"));
    }
    for q in queries {
        check_query_dims(&q.appearance, gallery, false)?;
        check_query_dims(&q.viewpoint, gallery, true)?;
    }
    let mut sims = vec![0.0; queries.len()];
    let mut cos = vec![0.0; queries.len()];
    let mut fused = vec![0.0; gallery.appearance_dim()];
    let mut scores = Vec::with_capacity(admitted.len());
    for &i in admitted {
        let g = &gallery.records[i];
        for (s, q) in sims.iter_mut().zip(queries) {
            *s = dot(&q.viewpoint, &g.viewpoint_feature) * gallery.inv_viewpoint[i];
        }
        let w = softmax_unchecked(&sims);
        let score = match fusion {
            Fusion::WeightedSum => {
                for (c, q) in cos.iter_mut().zip(queries) {
                    *c = dot(&q.appearance, &g.appearance) * gallery.inv_appearance[i];
                }
                dot(&w, &cos)
            }
            Fusion::FusedCosine => {
                fused.iter_mut().for_each(|v| *v = 0.0);
                for (wi, q) in w.iter().zip(queries) {
                    crate::nn::vector::axpy(*wi, &q.appearance, &mut fused);
                }
                let n = norm(&fused);
                if n == 0.0 {
                    return Err(Error::DegenerateData(
                        "weighted query features cancel out".into(),
                    ));
                }
                dot(&fused, &g.appearance) * gallery.inv_appearance[i] / n
            }
        };
        scores.push(score);
    }
    gallery.rank(admitted, scores)
}

/// Query features for all three viewpoints, filling missing ones with
/// recovered appearance features and class-centroid viewpoint features.
pub fn complete_query(queries: &QuerySet, cvfr: Option<&CvfrModel>) -> Result<Vec<QueryFeatures>> {
    let mut out: Vec<QueryFeatures> = queries
        .records
        .iter()
        .map(QueryFeatures::from_record)
        .collect::<Result<_>>()?;
    if queries.missing.is_empty() {
        return Ok(out);
    }
    let Some(model) = cvfr else {
        return Err(Error::Model(format!(
            "query set for {} lacks viewpoint(s) {} and no recovery model was given",
            queries.vehicle_id,
            queries
                .missing
                .iter()
                .map(|v| v.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    };
    let available: BTreeMap<Viewpoint, Vec<f64>> = queries
        .records
        .iter()
        .zip(&out)
        .map(|(r, f)| (r.viewpoint, f.appearance.clone()))
        .collect();
    for &view in &queries.missing {
        out.push(QueryFeatures {
            appearance: model.recover(&available, view)?,
            viewpoint: model.viewpoint_centroid(view)?.to_vec(),
        });
    }
    Ok(out)
}

/// Multi-query ranking over all three viewpoints, recovering missing ones
/// with `cvfr`.
pub fn score_multi(
    queries: &QuerySet,
    gallery: &Gallery,
    cvfr: Option<&CvfrModel>,
    options: &InferenceOptions,
) -> Result<RankedList> {
    let features = complete_query(queries, cvfr)?;
    let refs: Vec<&FeatureRecord> = queries.records.iter().collect();
    let admitted = admit_gallery(&refs, gallery, options.junk_filter);
    rank_fused(&features, gallery, &admitted, options.fusion)
}

/// Multi-query ranking over the available records only; the softmax runs
/// over as many queries as are present.
pub fn score_multi_available(
    records: &[FeatureRecord],
    gallery: &Gallery,
    options: &InferenceOptions,
) -> Result<RankedList> {
    let features: Vec<QueryFeatures> = records
        .iter()
        .map(QueryFeatures::from_record)
        .collect::<Result<_>>()?;
    let refs: Vec<&FeatureRecord> = records.iter().collect();
    let admitted = admit_gallery(&refs, gallery, options.junk_filter);
    rank_fused(&features, gallery, &admitted, options.fusion)
}
