//! Ranking metrics over judged lists.
//!
//! All per-query metrics take a [`JudgedItem`] slice in rank order and
//! return `None` when the list holds no positive; [`evaluate`] applies the
//! configured empty-positive policy when aggregating.

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure_dims, Error, Result};
use crate::inference::{FeatureRecord, RankedList};
use crate::nn::vector::squared_distance;
use crate::viewpoint::Viewpoint;

/// One ranked gallery entry as seen by the metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgedItem<'a> {
    pub positive: bool,
    pub camera_id: &'a str,
    pub viewpoint: Viewpoint,
    pub viewpoint_feature: &'a [f64],
}

/// How two same-camera positives are judged to share a viewpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewpointSimilarity {
    /// Euclidean distance between viewpoint features below ε.
    Feature,
    /// Identical viewpoint labels; for galleries without usable features.
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyPolicy {
    /// The query contributes 0 to every aggregate and is flagged.
    Zero,
    /// The query is reported and flagged but left out of the aggregates.
    Exclude,
}

pub const DEFAULT_EPSILON: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub cmc_ranks: Vec<usize>,
    pub epsilon: f64,
    pub similarity: ViewpointSimilarity,
    pub empty_policy: EmptyPolicy,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            cmc_ranks: vec![1, 5, 10],
            epsilon: DEFAULT_EPSILON,
            similarity: ViewpointSimilarity::Feature,
            empty_policy: EmptyPolicy::Zero,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be positive and finite".into()));
        }
        if self.cmc_ranks.is_empty() || self.cmc_ranks.contains(&0) {
            return Err(Error::Config("cmc ranks must be positive".into()));
        }
        Ok(())
    }
}

fn count_positives(list: &[JudgedItem]) -> usize {
    list.iter().filter(|i| i.positive).count()
}

/// 1 if a positive appears within the first `k` positions (the whole list
/// when it is shorter than `k`).
pub fn cmc_at_k(list: &[JudgedItem], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("cmc rank must be at least 1"));
    }
    Ok(if list.iter().take(k).any(|i| i.positive) {
        1.0
    } else {
        0.0
    })
}

fn ap_of_flags(flags: impl Iterator<Item = bool>) -> Option<f64> {
    let mut hits = 0usize;
    let mut precisions = Vec::new();
    for (r, positive) in flags.enumerate() {
        if positive {
            hits += 1;
            precisions.push(hits as f64 / (r + 1) as f64);
        }
    }
    if hits == 0 {
        None
    } else {
        Some(crate::nn::vector::sum(&precisions) / hits as f64)
    }
}

/// Mean over positives of the precision at each positive's rank.
pub fn average_precision(list: &[JudgedItem]) -> Option<f64> {
    ap_of_flags(list.iter().map(|i| i.positive))
}

/// Number of positives divided by the rank of the last positive.
pub fn inp(list: &[JudgedItem]) -> Option<f64> {
    let last = list.iter().rposition(|i| i.positive)?;
    Some(count_positives(list) as f64 / (last + 1) as f64)
}

/// CGM variant: keep only the best-ranked positive of every camera, then
/// take the average precision of the shortened list.
pub fn cgm(list: &[JudgedItem]) -> Option<f64> {
    let mut seen: Vec<&str> = Vec::new();
    let keep = list.iter().filter(|item| {
        if !item.positive {
            return true;
        }
        if seen.contains(&item.camera_id) {
            false
        } else {
            seen.push(item.camera_id);
            true
        }
    });
    ap_of_flags(keep.map(|i| i.positive))
}

fn similar(a: &JudgedItem, b: &JudgedItem, epsilon: f64, mode: ViewpointSimilarity) -> bool {
    match mode {
        ViewpointSimilarity::Feature => {
            squared_distance(a.viewpoint_feature, b.viewpoint_feature) < epsilon * epsilon
        }
        ViewpointSimilarity::Label => a.viewpoint == b.viewpoint,
    }
}

/// Cross-scene suppression mask: `true` marks a positive removed because an
/// earlier retained positive of the same camera has a similar viewpoint.
pub fn suppressed(list: &[JudgedItem], epsilon: f64, mode: ViewpointSimilarity) -> Vec<bool> {
    let mut retained: Vec<usize> = Vec::new();
    list.iter()
        .enumerate()
        .map(|(i, item)| {
            if !item.positive {
                return false;
            }
            let hit = retained.iter().any(|&j| {
                list[j].camera_id == item.camera_id && similar(&list[j], item, epsilon, mode)
            });
            if !hit {
                retained.push(i);
            }
            hit
        })
        .collect()
}

/// Cross-scene precision: average precision after greedily deleting
/// positives that repeat a retained same-camera positive's viewpoint.
pub fn csp(list: &[JudgedItem], epsilon: f64, mode: ViewpointSimilarity) -> Option<f64> {
    let mask = suppressed(list, epsilon, mode);
    ap_of_flags(
        list.iter()
            .zip(&mask)
            .filter(|(_, s)| !**s)
            .map(|(i, _)| i.positive),
    )
}

/// Judge a ranked list against the target identity.
pub fn judge<'a>(
    ranked: &RankedList,
    gallery: &'a [FeatureRecord],
    target_vehicle: &str,
) -> Result<Vec<JudgedItem<'a>>> {
    ranked
        .indices
        .iter()
        .map(|&i| {
            let g = gallery.get(i).ok_or_else(|| {
                Error::invalid(format!(
                    "ranked index {i} outside gallery of {}",
                    gallery.len()
                ))
            })?;
            Ok(JudgedItem {
                positive: g.vehicle_id == target_vehicle,
                camera_id: &g.camera_id,
                viewpoint: g.viewpoint,
                viewpoint_feature: &g.viewpoint_feature,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    pub target_vehicle: String,
    pub positives: usize,
    /// Positives left after cross-scene suppression.
    pub retained_positives: usize,
    /// Aligned with [`MetricConfig::cmc_ranks`].
    pub cmc: Vec<f64>,
    pub ap: f64,
    pub inp: f64,
    pub cgm: f64,
    pub csp: f64,
    pub no_positives: bool,
}

pub fn query_metrics(
    query_id: &str,
    target_vehicle: &str,
    list: &[JudgedItem],
    config: &MetricConfig,
) -> Result<QueryMetrics> {
    let mask = suppressed(list, config.epsilon, config.similarity);
    let positives = count_positives(list);
    let cmc = config
        .cmc_ranks
        .iter()
        .map(|&k| cmc_at_k(list, k))
        .collect::<Result<_>>()?;
    Ok(QueryMetrics {
        query_id: query_id.to_string(),
        target_vehicle: target_vehicle.to_string(),
        positives,
        retained_positives: positives - mask.iter().filter(|s| **s).count(),
        cmc,
        ap: average_precision(list).unwrap_or(0.0),
        inp: inp(list).unwrap_or(0.0),
        cgm: cgm(list).unwrap_or(0.0),
        csp: csp(list, config.epsilon, config.similarity).unwrap_or(0.0),
        no_positives: positives == 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub cmc_ranks: Vec<usize>,
    pub cmc: Vec<f64>,
    pub map: f64,
    pub minp: f64,
    pub mcgm: f64,
    pub mcsp: f64,
}

impl Aggregates {
    pub fn rank(&self, k: usize) -> Option<f64> {
        self.cmc_ranks
            .iter()
            .position(|r| *r == k)
            .map(|i| self.cmc[i])
    }
}

impl Serialize for Aggregates {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.cmc.len() + 4))?;
        for (k, v) in self.cmc_ranks.iter().zip(&self.cmc) {
            m.serialize_entry(&format!("rank{k}"), v)?;
        }
        m.serialize_entry("map", &self.map)?;
        m.serialize_entry("minp", &self.minp)?;
        m.serialize_entry("mcgm", &self.mcgm)?;
        m.serialize_entry("mcsp", &self.mcsp)?;
        m.end()
    }
}

struct PerQuery<'a>(&'a QueryMetrics, &'a [usize]);

impl Serialize for PerQuery<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let q = self.0;
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("query", &q.query_id)?;
        m.serialize_entry("vehicle_id", &q.target_vehicle)?;
        m.serialize_entry("positives", &q.positives)?;
        m.serialize_entry("retained_positives", &q.retained_positives)?;
        for (k, v) in self.1.iter().zip(&q.cmc) {
            m.serialize_entry(&format!("rank{k}"), v)?;
        }
        m.serialize_entry("ap", &q.ap)?;
        m.serialize_entry("inp", &q.inp)?;
        m.serialize_entry("cgm", &q.cgm)?;
        m.serialize_entry("csp", &q.csp)?;
        m.serialize_entry("no_positives", &q.no_positives)?;
        m.end()
    }
}

/// Configuration echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub metric: MetricConfig,
    /// Command-specific settings (mode, files, models).
    pub run: serde_json::Value,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of `metric`, `run` and `seed`.
    pub config_hash: String,
    pub cgm: &'static str,
}

pub const CGM_LABEL: &str = "CGM-variant: per-camera collapse to the best-ranked positive, then AP";

impl ReportConfig {
    pub fn new(metric: MetricConfig, run: serde_json::Value, seed: u64) -> Self {
        let canonical = serde_json::json!({ "metric": &metric, "run": &run, "seed": seed });
        Self {
            config_hash: sha256_hex(canonical.to_string().as_bytes()),
            metric,
            run,
            seed,
            cgm: CGM_LABEL,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub aggregates: Aggregates,
    pub per_query: Vec<QueryMetrics>,
}

impl Serialize for EvalReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let ranks = &self.config.metric.cmc_ranks;
        let per: Vec<PerQuery> = self.per_query.iter().map(|q| PerQuery(q, ranks)).collect();
        let mut m = s.serialize_map(Some(3))?;
        m.serialize_entry("config", &self.config)?;
        m.serialize_entry("aggregates", &self.aggregates)?;
        m.serialize_entry("per_query", &per)?;
        m.end()
    }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per query.
    pub fn to_csv(&self) -> String {
        let ranks = &self.config.metric.cmc_ranks;
        let mut out = String::from("query,vehicle_id,positives,retained_positives");
        for k in ranks {
            out.push_str(&format!(",rank{k}"));
        }
        out.push_str(",ap,inp,cgm_variant,csp,no_positives\n");
        for q in &self.per_query {
            out.push_str(&format!(
                "{},{},{},{}",
                q.query_id, q.target_vehicle, q.positives, q.retained_positives
            ));
            for v in &q.cmc {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(
                ",{},{},{},{},{}\n",
                q.ap, q.inp, q.cgm, q.csp, q.no_positives
            ));
        }
        out
    }
}

/// Aggregate per-query metrics according to the empty-positive policy.
pub fn aggregate(per_query: &[QueryMetrics], config: &MetricConfig) -> Aggregates {
    let counted: Vec<&QueryMetrics> = per_query
        .iter()
        .filter(|q| config.empty_policy == EmptyPolicy::Zero || !q.no_positives)
        .collect();
    let mean = |f: &dyn Fn(&QueryMetrics) -> f64| -> f64 {
        if counted.is_empty() {
            return 0.0;
        }
        let values: Vec<f64> = counted.iter().map(|q| f(q)).collect();
        crate::nn::vector::sum(&values) / values.len() as f64
    };
    Aggregates {
        cmc_ranks: config.cmc_ranks.clone(),
        cmc: (0..config.cmc_ranks.len())
            .map(|i| mean(&|q| q.cmc[i]))
            .collect(),
        map: mean(&|q| q.ap),
        minp: mean(&|q| q.inp),
        mcgm: mean(&|q| q.cgm),
        mcsp: mean(&|q| q.csp),
    }
}

/// A ranked list to be judged, with the query it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub query_id: String,
    pub target_vehicle: String,
    pub ranked: RankedList,
}

pub fn evaluate(
    queries: &[RankedQuery],
    gallery: &[FeatureRecord],
    config: &MetricConfig,
    report: ReportConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let mut per_query = Vec::with_capacity(queries.len());
    for q in queries {
        ensure_dims(q.ranked.indices.len(), q.ranked.scores.len(), "ranked list scores")?;
        let list = judge(&q.ranked, gallery, &q.target_vehicle)?;
        if config.similarity == ViewpointSimilarity::Feature {
            if let Some(first) = list.first() {
                for item in &list {
                    ensure_dims(
                        first.viewpoint_feature.len(),
                        item.viewpoint_feature.len(),
                        "gallery viewpoint feature",
                    )?;
                }
            }
        }
        per_query.push(query_metrics(&q.query_id, &q.target_vehicle, &list, config)?);
    }
    Ok(EvalReport {
        config: report,
        aggregates: aggregate(&per_query, config),
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SeededRng;

    struct Spec {
        positive: bool,
        camera: String,
        feature: Vec<f64>,
    }

    fn specs(items: &[(bool, &str, [f64; 2])]) -> Vec<Spec> {
        items
            .iter()
            .map(|(p, c, f)| Spec {
                positive: *p,
                camera: c.to_string(),
                feature: f.to_vec(),
            })
            .collect()
    }

    fn judged(s: &[Spec]) -> Vec<JudgedItem<'_>> {
        s.iter()
            .map(|x| JudgedItem {
                positive: x.positive,
                camera_id: &x.camera,
                viewpoint: Viewpoint::Front,
                viewpoint_feature: &x.feature,
            })
            .collect()
    }

    fn flags(f: &[bool]) -> Vec<Spec> {
        f.iter()
            .enumerate()
            .map(|(i, p)| Spec {
                positive: *p,
                camera: format!("c{i}"),
                feature: vec![i as f64, 0.0],
            })
            .collect()
    }

    #[test]
    fn cmc_examples() {
        let s = flags(&[false, false, true, false]);
        let l = judged(&s);
        assert_eq!(cmc_at_k(&l, 1).unwrap(), 0.0);
        assert_eq!(cmc_at_k(&l, 5).unwrap(), 1.0);
        assert_eq!(cmc_at_k(&l, 100).unwrap(), 1.0);
        assert!(cmc_at_k(&l, 0).is_err());
        let s = flags(&[true]);
        assert_eq!(cmc_at_k(&judged(&s), 1).unwrap(), 1.0);
    }

    #[test]
    fn ap_and_inp_examples() {
        let s = flags(&[true, false, true]);
        let l = judged(&s);
        assert!((average_precision(&l).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let s = flags(&[true, true, false, false]);
        assert_eq!(average_precision(&judged(&s)), Some(1.0));
        assert_eq!(inp(&judged(&s)), Some(1.0));
        let s = flags(&[true, false, false, true]);
        assert_eq!(inp(&judged(&s)), Some(0.5));
        let s = flags(&[false, false]);
        assert_eq!(average_precision(&judged(&s)), None);
        assert_eq!(csp(&judged(&s), 0.5, ViewpointSimilarity::Feature), None);
    }

    #[test]
    fn cgm_collapses_cameras() {
        let s = specs(&[
            (true, "c1", [0.0, 0.0]),
            (true, "c1", [0.0, 0.0]),
            (true, "c2", [0.0, 0.0]),
        ]);
        assert_eq!(cgm(&judged(&s)), Some(1.0));
        let s = specs(&[
            (false, "c1", [0.0, 0.0]),
            (true, "c1", [0.0, 0.0]),
            (true, "c1", [0.0, 0.0]),
            (true, "c2", [0.0, 0.0]),
        ]);
        // collapsed [−, +, +]: (1/2 + 2/3)/2
        assert!((cgm(&judged(&s)).unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn csp_fixture() {
        let s = specs(&[
            (true, "c1", [1.0, 0.0]),
            (true, "c1", [0.98, 0.199]),
            (false, "c3", [0.0, 1.0]),
            (true, "c2", [0.0, 1.0]),
            (false, "c4", [1.0, 0.0]),
        ]);
        let l = judged(&s);
        assert_eq!(
            suppressed(&l, 0.5, ViewpointSimilarity::Feature),
            vec![false, true, false, false, false]
        );
        let v = csp(&l, 0.5, ViewpointSimilarity::Feature).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15, "{v}");
        // label mode treats all of these as one viewpoint
        assert!((csp(&l, 0.5, ViewpointSimilarity::Label).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        // tiny ε: nothing suppressed
        assert_eq!(csp(&l, 1e-9, ViewpointSimilarity::Feature), average_precision(&l));
    }

    #[test]
    fn distinct_cameras_make_csp_and_cgm_equal_ap() {
        let mut rng = SeededRng::new(3);
        for _ in 0..200 {
            let n = 1 + rng.below(20);
            let f: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            let s = flags(&f);
            let l = judged(&s);
            assert_eq!(csp(&l, 1.0, ViewpointSimilarity::Feature), average_precision(&l));
            assert_eq!(cgm(&l), average_precision(&l));
        }
    }

    fn random_list(rng: &mut SeededRng) -> Vec<Spec> {
        let n = 1 + rng.below(30);
        (0..n)
            .map(|_| {
                let a = rng.uniform_range(0.0, std::f64::consts::TAU);
                Spec {
                    positive: rng.bernoulli(0.4),
                    camera: format!("c{}", rng.below(4)),
                    feature: vec![a.cos(), a.sin()],
                }
            })
            .collect()
    }

    #[test]
    fn enlarging_epsilon_never_retains_more() {
        let mut rng = SeededRng::new(4);
        for _ in 0..300 {
            let s = random_list(&mut rng);
            let l = judged(&s);
            let count = |e: f64| {
                suppressed(&l, e, ViewpointSimilarity::Feature)
                    .iter()
                    .filter(|x| !**x)
                    .count()
            };
            let (a, b) = (rng.uniform_range(0.05, 1.5), rng.uniform_range(0.05, 1.5));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(count(hi) <= count(lo));
        }
    }

    #[test]
    fn trailing_negative_never_increases() {
        let mut rng = SeededRng::new(5);
        for _ in 0..300 {
            let s = random_list(&mut rng);
            let mut longer: Vec<Spec> = s
                .iter()
                .map(|x| Spec {
                    positive: x.positive,
                    camera: x.camera.clone(),
                    feature: x.feature.clone(),
                })
                .collect();
            longer.push(Spec {
                positive: false,
                camera: "c9".into(),
                feature: vec![1.0, 0.0],
            });
            let (a, b) = (judged(&s), judged(&longer));
            let e = 0.7;
            let m = ViewpointSimilarity::Feature;
            assert!(average_precision(&b) <= average_precision(&a));
            assert!(inp(&b) <= inp(&a));
            assert!(cgm(&b) <= cgm(&a));
            assert!(csp(&b, e, m) <= csp(&a, e, m));
        }
    }

    #[test]
    fn values_in_unit_interval_and_relabel_invariant() {
        let mut rng = SeededRng::new(6);
        for _ in 0..300 {
            let s = random_list(&mut rng);
            let l = judged(&s);
            let relabeled: Vec<Spec> = s
                .iter()
                .map(|x| Spec {
                    positive: x.positive,
                    camera: format!("cam-{}", x.camera.len() * 7 + x.camera.as_bytes()[1] as usize),
                    // rotate every feature by the same angle
                    feature: vec![
                        0.6 * x.feature[0] - 0.8 * x.feature[1],
                        0.8 * x.feature[0] + 0.6 * x.feature[1],
                    ],
                })
                .collect();
            let r = judged(&relabeled);
            for v in [
                average_precision(&l),
                inp(&l),
                cgm(&l),
                csp(&l, 0.5, ViewpointSimilarity::Feature),
            ]
            .into_iter()
            .flatten()
            {
                assert!(v > 0.0 && v <= 1.0);
            }
            assert_eq!(cgm(&l), cgm(&r));
            let (x, y) = (
                csp(&l, 0.5, ViewpointSimilarity::Feature),
                csp(&r, 0.5, ViewpointSimilarity::Feature),
            );
            match (x, y) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                (x, y) => assert_eq!(x, y),
            }
        }
    }

    fn gallery() -> Vec<FeatureRecord> {
        let rec = |id: &str, v: &str, c: &str| FeatureRecord {
            record_id: id.into(),
            vehicle_id: v.into(),
            camera_id: c.into(),
            viewpoint: Viewpoint::Front,
            appearance: vec![1.0, 0.0],
            viewpoint_feature: vec![1.0, 0.0],
        };
        vec![rec("g0", "a", "c0"), rec("g1", "b", "c1"), rec("g2", "a", "c2")]
    }

    #[test]
    fn evaluate_perfect_and_duplicated_queries() {
        let g = gallery();
        let q = RankedQuery {
            query_id: "q0".into(),
            target_vehicle: "a".into(),
            ranked: RankedList {
                indices: vec![0, 2, 1],
                scores: vec![1.0, 0.9, 0.1],
            },
        };
        let cfg = MetricConfig::default();
        let report = |qs: &[RankedQuery]| {
            evaluate(qs, &g, &cfg, ReportConfig::new(cfg.clone(), serde_json::Value::Null, 0))
                .unwrap()
        };
        let one = report(std::slice::from_ref(&q));
        let a = &one.aggregates;
        assert_eq!((a.map, a.minp, a.mcgm, a.mcsp), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(a.cmc, vec![1.0, 1.0, 1.0]);

        let mut worse = q.clone();
        worse.ranked.indices = vec![1, 0, 2];
        let two = report(&[q.clone(), worse.clone()]);
        let three = report(&[q.clone(), worse.clone(), worse]);
        assert!((two.aggregates.map - (1.0 + 7.0 / 12.0) / 2.0).abs() < 1e-12);
        assert_ne!(two.aggregates, three.aggregates);
        let four = report(&[q.clone(), q.clone()]);
        assert_eq!(four.aggregates, one.aggregates);

        let json = one.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["aggregates"]["rank1"], 1.0);
        assert_eq!(v["aggregates"]["mcsp"], 1.0);
        let agg = json.find("\"aggregates\"").unwrap();
        let order: Vec<usize> = ["rank1", "rank5", "rank10", "map", "minp", "mcgm", "mcsp"]
            .iter()
            .map(|k| json[agg..].find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert!(one.to_csv().starts_with("query,vehicle_id,positives"));
        assert_eq!(one.to_csv().lines().count(), 2);
    }

    #[test]
    fn empty_policy() {
        let g = gallery();
        let q = RankedQuery {
            query_id: "q".into(),
            target_vehicle: "zzz".into(),
            ranked: RankedList {
                indices: vec![0, 1],
                scores: vec![1.0, 0.5],
            },
        };
        let good = RankedQuery {
            query_id: "g".into(),
            target_vehicle: "b".into(),
            ranked: RankedList {
                indices: vec![1, 0],
                scores: vec![1.0, 0.5],
            },
        };
        let mut cfg = MetricConfig::default();
        let r = evaluate(
            &[q.clone(), good.clone()],
            &g,
            &cfg,
            ReportConfig::new(cfg.clone(), serde_json::Value::Null, 0),
        )
        .unwrap();
        assert!(r.per_query[0].no_positives);
        assert_eq!(r.aggregates.map, 0.5);
        cfg.empty_policy = EmptyPolicy::Exclude;
        let r = evaluate(
            &[q, good],
            &g,
            &cfg,
            ReportConfig::new(cfg.clone(), serde_json::Value::Null, 0),
        )
        .unwrap();
        assert_eq!(r.aggregates.map, 1.0);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let g = gallery();
        let q = RankedQuery {
            query_id: "q".into(),
            target_vehicle: "a".into(),
            ranked: RankedList {
                indices: vec![7],
                scores: vec![1.0],
            },
        };
        let cfg = MetricConfig::default();
        assert!(evaluate(&[q], &g, &cfg, ReportConfig::new(cfg.clone(), serde_json::Value::Null, 0)).is_err());
    }
}
