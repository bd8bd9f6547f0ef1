//! End-to-end pipelines: embedding raw data, evaluating inference modes,
//! and the gallery-modification, missing-viewpoint and query-count
//! experiments.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cvfr::{train_cvfr, AlignedSet, CvfrModel, CvfrTrainConfig, CvfrTraining};
use crate::error::{Error, Result};
use crate::inference::{
    admit_gallery, complete_query, mean_appearance, rank_by_appearance, rank_fused,
    FeatureRecord, Gallery, InferenceOptions, QueryFeatures, QuerySet,
};
use crate::io::quantize;
use crate::metrics::{evaluate, EvalReport, MetricConfig, RankedQuery, ReportConfig};
use crate::nn::vector::cosine_sim;
use crate::nn::SeededRng;
use crate::synth::{generate, modify_gallery, RawRecord, SynthConfig, SynthDataset};
use crate::vcc::{train_vcc, training_samples, VccModel, VccTrainConfig, VccTraining};
use crate::viewpoint::Viewpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Average,
    Multi,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Single, Mode::Average, Mode::Multi];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Average => "average",
            Mode::Multi => "multi",
        }
    }
}

/// Embed raw records, rounding features to the precision of a feature
/// file so in-memory and on-disk pipelines agree exactly.
pub fn embed_records(model: &VccModel, records: &[RawRecord]) -> Result<Vec<FeatureRecord>> {
    records
        .par_iter()
        .map(|r| {
            let e = model.embed(&r.input)?;
            Ok(FeatureRecord {
                record_id: r.record_id.clone(),
                vehicle_id: r.vehicle_id.clone(),
                camera_id: r.camera_id.clone(),
                viewpoint: r.viewpoint,
                appearance: quantize(&e.appearance),
                viewpoint_feature: quantize(&e.viewpoint),
            })
        })
        .collect()
}

/// Run `f` over `items`, in parallel or not, keeping input order.
fn map_ordered<T, U, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// How a query set is turned into ranked lists.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    /// Every available record ranks on its own.
    Single,
    /// Normalized mean of the available records' appearance features,
    /// plus recovered features when a model is given.
    Average(Option<&'a CvfrModel>),
    /// Viewpoint-weighted fusion over all three viewpoints, recovering
    /// missing ones (an error without a model).
    Multi(Option<&'a CvfrModel>),
    /// Viewpoint-weighted fusion over the available records only.
    MultiAvailable,
}

impl<'a> Strategy<'a> {
    pub fn for_mode(mode: Mode, cvfr: Option<&'a CvfrModel>) -> Self {
        match mode {
            Mode::Single => Strategy::Single,
            Mode::Average => Strategy::Average(None),
            Mode::Multi => Strategy::Multi(cvfr),
        }
    }
}

/// Rank the gallery for one query (a list of records sharing a vehicle).
/// Admission always considers every record of the query.
pub fn rank_query(
    records: &[FeatureRecord],
    strategy: Strategy,
    gallery: &Gallery,
    options: &InferenceOptions,
    set_id: &str,
) -> Result<Vec<RankedQuery>> {
    let Some(first) = records.first() else {
        return Err(Error::invalid("empty query"));
    };
    let refs: Vec<&FeatureRecord> = records.iter().collect();
    let admitted = admit_gallery(&refs, gallery, options.junk_filter);
    let one = |ranked| {
        vec![RankedQuery {
            query_id: set_id.to_string(),
            target_vehicle: first.vehicle_id.clone(),
            ranked,
        }]
    };
    match strategy {
        Strategy::Single => records
            .iter()
            .map(|r| {
                Ok(RankedQuery {
                    query_id: format!("{set_id}/{}", r.record_id),
                    target_vehicle: r.vehicle_id.clone(),
                    ranked: rank_by_appearance(&r.appearance, gallery, &admitted)?,
                })
            })
            .collect(),
        Strategy::Average(cvfr) => {
            let features = match cvfr {
                Some(model) => complete_query(&QuerySet::new(records.to_vec())?, Some(model))?,
                None => records
                    .iter()
                    .map(QueryFeatures::from_record)
                    .collect::<Result<_>>()?,
            };
            let views: Vec<&[f64]> = features.iter().map(|f| f.appearance.as_slice()).collect();
            let fused = mean_appearance(&views)?;
            Ok(one(rank_by_appearance(&fused, gallery, &admitted)?))
        }
        Strategy::Multi(cvfr) => {
            let features = complete_query(&QuerySet::new(records.to_vec())?, cvfr)?;
            Ok(one(rank_fused(&features, gallery, &admitted, options.fusion)?))
        }
        Strategy::MultiAvailable => {
            let features: Vec<QueryFeatures> = records
                .iter()
                .map(QueryFeatures::from_record)
                .collect::<Result<_>>()?;
            Ok(one(rank_fused(&features, gallery, &admitted, options.fusion)?))
        }
    }
}

/// Evaluate one strategy over many queries.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_queries(
    queries: &[Vec<FeatureRecord>],
    strategy: Strategy,
    gallery: &Gallery,
    options: &InferenceOptions,
    metric: &MetricConfig,
    report: ReportConfig,
    parallel: bool,
) -> Result<EvalReport> {
    let ranked = map_ordered(queries, parallel, |q| {
        let id = q.first().map_or("", |r| r.vehicle_id.as_str());
        rank_query(q, strategy, gallery, options, id)
    })?;
    let flat: Vec<RankedQuery> = ranked.into_iter().flatten().collect();
    evaluate(&flat, gallery.records(), metric, report)
}

pub fn query_records(sets: &[QuerySet]) -> Vec<Vec<FeatureRecord>> {
    sets.iter().map(|s| s.records.clone()).collect()
}

/// Raw inputs of an experiment: one three-view query per evaluation
/// identity, extra repeat-view query records, and the gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSplit {
    pub queries: Vec<Vec<RawRecord>>,
    pub extra: Vec<Vec<RawRecord>>,
    pub gallery: Vec<RawRecord>,
}

impl RawSplit {
    pub fn from_dataset(ds: &SynthDataset) -> Self {
        Self {
            queries: ds.queries.iter().map(|q| q.records.clone()).collect(),
            extra: ds.queries.iter().map(|q| q.extra.clone()).collect(),
            gallery: ds.gallery.clone(),
        }
    }

    /// Group flat query files by vehicle, in first-appearance order.
    pub fn from_records(queries: &[RawRecord], extra: &[RawRecord], gallery: Vec<RawRecord>) -> Self {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<RawRecord>> = BTreeMap::new();
        for r in queries {
            if !groups.contains_key(r.vehicle_id.as_str()) {
                order.push(&r.vehicle_id);
            }
            groups.entry(&r.vehicle_id).or_default().push(r.clone());
        }
        let mut extras: BTreeMap<&str, Vec<RawRecord>> = BTreeMap::new();
        for r in extra {
            extras.entry(&r.vehicle_id).or_default().push(r.clone());
        }
        Self {
            queries: order.iter().map(|v| groups[v].clone()).collect(),
            extra: order
                .iter()
                .map(|v| extras.get(v).cloned().unwrap_or_default())
                .collect(),
            gallery,
        }
    }
}

/// Embedded counterpart of [`RawSplit`].
#[derive(Debug, Clone)]
pub struct EmbeddedSplit {
    pub queries: Vec<QuerySet>,
    pub extra: Vec<Vec<FeatureRecord>>,
    pub gallery: Gallery,
}

pub fn embed_split(model: &VccModel, split: &RawSplit) -> Result<EmbeddedSplit> {
    let queries = split
        .queries
        .iter()
        .map(|q| QuerySet::new(embed_records(model, q)?))
        .collect::<Result<_>>()?;
    let extra = split
        .extra
        .iter()
        .map(|q| embed_records(model, q))
        .collect::<Result<_>>()?;
    Ok(EmbeddedSplit {
        queries,
        extra,
        gallery: Gallery::new(embed_records(model, &split.gallery)?)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    pub metric: MetricConfig,
    pub inference: InferenceOptions,
    /// Seeds gallery modification and missing-view choices.
    pub seed: u64,
    pub add_k: Vec<usize>,
    /// Noise level of the near-duplicates added to the gallery.
    pub duplicate_noise: f64,
    /// Evaluate query sets on the rayon pool.
    pub parallel: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            metric: MetricConfig::default(),
            inference: InferenceOptions::default(),
            seed: 0,
            add_k: vec![0, 5, 10],
            duplicate_noise: 0.05,
            parallel: true,
        }
    }
}

/// One setting of an experiment and its report.
#[derive(Debug, Clone)]
pub struct SettingResult {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: String,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
    pub minp: f64,
    pub mcgm: f64,
    pub mcsp: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: &'static str,
    pub settings: Vec<SettingResult>,
    /// Extra scalar measurements (e.g. recovery cosine).
    pub measurements: BTreeMap<String, f64>,
}

impl ExperimentResult {
    pub fn summary(&self) -> Vec<SummaryRow> {
        self.settings
            .iter()
            .map(|s| {
                let a = &s.report.aggregates;
                SummaryRow {
                    setting: s.label.clone(),
                    rank1: a.rank(1).unwrap_or(f64::NAN),
                    rank5: a.rank(5).unwrap_or(f64::NAN),
                    rank10: a.rank(10).unwrap_or(f64::NAN),
                    map: a.map,
                    minp: a.minp,
                    mcgm: a.mcgm,
                    mcsp: a.mcsp,
                }
            })
            .collect()
    }

    pub fn setting(&self, label: &str) -> Option<&EvalReport> {
        self.settings
            .iter()
            .find(|s| s.label == label)
            .map(|s| &s.report)
    }
}

fn report_config(settings: &ExperimentSettings, run: serde_json::Value) -> ReportConfig {
    ReportConfig::new(
        settings.metric.clone(),
        serde_json::json!({ "inference": settings.inference, "experiment": run }),
        settings.seed,
    )
}

/// Compare the three inference modes on full query sets.
pub fn run_modes(split: &EmbeddedSplit, settings: &ExperimentSettings) -> Result<ExperimentResult> {
    let queries = query_records(&split.queries);
    let settings_out = Mode::ALL
        .iter()
        .map(|&mode| {
            let report = evaluate_queries(
                &queries,
                Strategy::for_mode(mode, None),
                &split.gallery,
                &settings.inference,
                &settings.metric,
                report_config(settings, serde_json::json!({ "mode": mode })),
                settings.parallel,
            )?;
            Ok(SettingResult {
                label: mode.as_str().to_string(),
                report,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        name: "modes",
        settings: settings_out,
        measurements: BTreeMap::new(),
    })
}

/// Multi-query evaluation on galleries modified with each `add_k`.
pub fn run_fig8(
    vcc: &VccModel,
    split: &RawSplit,
    settings: &ExperimentSettings,
) -> Result<ExperimentResult> {
    let embedded = embed_split(vcc, &RawSplit {
        queries: split.queries.clone(),
        extra: Vec::new(),
        gallery: split.gallery.clone(),
    })?;
    let queries = query_records(&embedded.queries);
    let mut out = Vec::new();
    for &k in &settings.add_k {
        let modified = modify_gallery(&split.gallery, k, settings.seed, settings.duplicate_noise)?;
        let gallery = Gallery::new(embed_records(vcc, &modified)?)?;
        let report = evaluate_queries(
            &queries,
            Strategy::Multi(None),
            &gallery,
            &settings.inference,
            &settings.metric,
            report_config(settings, serde_json::json!({ "name": "fig8", "add_k": k })),
            settings.parallel,
        )?;
        out.push(SettingResult {
            label: format!("add_k={k}"),
            report,
        });
    }
    Ok(ExperimentResult {
        name: "fig8",
        settings: out,
        measurements: BTreeMap::new(),
    })
}

pub const TABLE5_ROWS: [&str; 5] = [
    "(a) single",
    "(b) average",
    "(c) cvfr+average",
    "(d) multi (2 views)",
    "(e) cvfr+multi",
];

/// Drop one seeded-random viewpoint from every query set. Returns the
/// reduced sets and the held-out records.
pub fn drop_random_view(sets: &[QuerySet], seed: u64) -> Result<(Vec<QuerySet>, Vec<FeatureRecord>)> {
    let rng = SeededRng::new(seed);
    let mut reduced = Vec::with_capacity(sets.len());
    let mut held_out = Vec::with_capacity(sets.len());
    for (i, s) in sets.iter().enumerate() {
        if s.records.len() < 2 {
            return Err(Error::DegenerateData(format!(
                "query set {} has fewer than 2 views",
                s.vehicle_id
            )));
        }
        let drop = rng.fork(i as u64).below(s.records.len());
        held_out.push(s.records[drop].clone());
        reduced.push(s.without(s.records[drop].viewpoint)?);
    }
    Ok((reduced, held_out))
}

/// The five missing-viewpoint settings, plus the mean cosine between
/// recovered and held-out appearance features.
pub fn run_table5(
    split: &EmbeddedSplit,
    cvfr: &CvfrModel,
    settings: &ExperimentSettings,
) -> Result<ExperimentResult> {
    let (reduced, held_out) = drop_random_view(&split.queries, settings.seed)?;
    let queries = query_records(&reduced);
    let strategies = [
        Strategy::Single,
        Strategy::Average(None),
        Strategy::Average(Some(cvfr)),
        Strategy::MultiAvailable,
        Strategy::Multi(Some(cvfr)),
    ];
    let mut out = Vec::new();
    for (label, strategy) in TABLE5_ROWS.iter().zip(strategies) {
        let report = evaluate_queries(
            &queries,
            strategy,
            &split.gallery,
            &settings.inference,
            &settings.metric,
            report_config(settings, serde_json::json!({ "name": "table5", "row": label })),
            settings.parallel,
        )?;
        out.push(SettingResult {
            label: label.to_string(),
            report,
        });
    }
    let mut measurements = BTreeMap::new();
    measurements.insert(
        "recovery_cosine".to_string(),
        recovery_cosine(cvfr, &reduced, &held_out)?,
    );
    Ok(ExperimentResult {
        name: "table5",
        settings: out,
        measurements,
    })
}

/// Mean cosine between the recovered feature of each reduced set's missing
/// view and the held-out record.
pub fn recovery_cosine(cvfr: &CvfrModel, reduced: &[QuerySet], held_out: &[FeatureRecord]) -> Result<f64> {
    let mut total = 0.0;
    for (s, truth) in reduced.iter().zip(held_out) {
        let available: BTreeMap<Viewpoint, Vec<f64>> = s
            .records
            .iter()
            .map(|r| (r.viewpoint, r.appearance.clone()))
            .collect();
        let rec = cvfr.recover(&available, truth.viewpoint)?;
        total += cosine_sim(&rec, &truth.appearance)?;
    }
    Ok(total / reduced.len().max(1) as f64)
}

/// Multi-query evaluation with 1, 2 and 3 distinct viewpoints, then three
/// views plus repeated-viewpoint extras.
pub fn run_fig10(split: &EmbeddedSplit, settings: &ExperimentSettings) -> Result<ExperimentResult> {
    let rng = SeededRng::new(settings.seed);
    let ordered: Vec<Vec<FeatureRecord>> = split
        .queries
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = s.records.clone();
            rng.fork(i as u64).shuffle(&mut r);
            r
        })
        .collect();
    let max_extra = split.extra.iter().map(Vec::len).min().unwrap_or(0);
    let mut counts: Vec<(String, usize, usize)> = (1..=3).map(|n| (n.to_string(), n, 0)).collect();
    for k in 1..=max_extra {
        counts.push((format!("3+repeat({k})"), 3, k));
    }
    let mut out = Vec::new();
    for (label, n, k) in counts {
        let queries: Vec<Vec<FeatureRecord>> = ordered
            .iter()
            .zip(&split.extra)
            .map(|(q, e)| {
                let mut v: Vec<FeatureRecord> = q.iter().take(n).cloned().collect();
                v.extend(e.iter().take(k).cloned());
                v
            })
            .collect();
        let report = evaluate_queries(
            &queries,
            Strategy::MultiAvailable,
            &split.gallery,
            &settings.inference,
            &settings.metric,
            report_config(settings, serde_json::json!({ "name": "fig10", "queries": label })),
            settings.parallel,
        )?;
        out.push(SettingResult { label, report });
    }
    Ok(ExperimentResult {
        name: "fig10",
        settings: out,
        measurements: BTreeMap::new(),
    })
}

/// Everything needed to run the experiments from a synthetic config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub vcc: VccTrainConfig,
    pub cvfr: CvfrTrainConfig,
    pub experiment: ExperimentSettings,
}

impl PipelineConfig {
    /// Default config with every seed derived from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut c = Self::default();
        c.synth.seed = seed;
        c.vcc.seed = seed;
        c.cvfr.seed = seed;
        c.experiment.seed = seed;
        c
    }
}

/// A generated dataset with trained models and embedded evaluation split.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub dataset: SynthDataset,
    pub raw: RawSplit,
    pub vcc: VccTraining,
    pub train_features: Vec<FeatureRecord>,
    pub cvfr: CvfrTraining,
    pub split: EmbeddedSplit,
}

pub fn train_recovery(
    train_features: &[FeatureRecord],
    config: &CvfrTrainConfig,
) -> Result<CvfrTraining> {
    let set = AlignedSet::from_records(train_features, config.triplets_per_identity, config.seed)?;
    train_cvfr(&set, config)
}

pub fn build_pipeline(config: &PipelineConfig) -> Result<Pipeline> {
    let dataset = generate(&config.synth)?;
    let (samples, _) = training_samples(&dataset.train);
    let vcc = train_vcc(&samples, &config.vcc)?;
    let train_features = embed_records(&vcc.model, &dataset.train)?;
    let cvfr = train_recovery(&train_features, &config.cvfr)?;
    let raw = RawSplit::from_dataset(&dataset);
    let split = embed_split(&vcc.model, &raw)?;
    Ok(Pipeline {
        dataset,
        raw,
        vcc,
        train_features,
        cvfr,
        split,
    })
}
