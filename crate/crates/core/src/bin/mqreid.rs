use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use mqreid_core::cvfr::CvfrTrainConfig;
use mqreid_core::error::{Error, ErrorKind, Result};
use mqreid_core::experiment::{
    embed_records, embed_split, evaluate_queries, run_fig10, run_fig8, run_table5,
    train_recovery, ExperimentResult, ExperimentSettings, Mode, RawSplit, Strategy,
};
use mqreid_core::inference::{Gallery, InferenceOptions};
use mqreid_core::io::{
    group_query_sets, load_cvfr, load_features, load_vcc, read_raw, read_text, save_cvfr,
    save_vcc, to_csv, write_cache, write_features, write_raw, write_text,
};
use mqreid_core::metrics::{sha256_hex, MetricConfig, ReportConfig};
use mqreid_core::synth::{generate, SynthConfig};
use mqreid_core::vcc::{train_vcc, training_samples, VccTrainConfig};

#[derive(Parser)]
#[command(name = "mqreid", version, about = "Multi-query vehicle re-identification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (raw train/query/gallery JSONL).
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write it with its loss trace.
    Train {
        #[arg(value_enum)]
        model: ModelKind,
        /// Raw training records (vcc) or training feature records (cvfr).
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Embed raw records into a feature file.
    Embed {
        #[arg(long)]
        vcc: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output feature file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the packed binary cache next to the output.
        #[arg(long)]
        cache: bool,
    },
    /// Rank a gallery for every query set and write the metric report.
    Eval {
        #[arg(long, value_enum)]
        mode: CliMode,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// Recovery model for multi-mode queries with missing viewpoints.
        #[arg(long)]
        cvfr: Option<PathBuf>,
        #[arg(long)]
        metric_epsilon: Option<f64>,
        #[arg(long)]
        no_junk_filter: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a comparative experiment on a synthetic data directory.
    Experiment {
        #[arg(value_enum)]
        name: ExperimentName,
        /// Directory written by `mqreid synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vcc: Option<PathBuf>,
        #[arg(long)]
        cvfr: Option<PathBuf>,
        #[arg(long)]
        metric_epsilon: Option<f64>,
        #[arg(long)]
        no_junk_filter: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config document for the command.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Vcc,
    Cvfr,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Single,
    Average,
    Multi,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::Single => Mode::Single,
            CliMode::Average => Mode::Average,
            CliMode::Multi => Mode::Multi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    Fig8,
    Table5,
    Fig10,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    metric: MetricConfig,
    inference: InferenceOptions,
    seed: u64,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_synth(common: &Common) -> Result<()> {
    let mut config: SynthConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let ds = generate(&config)?;
    let out = &common.out;
    let extra: Vec<_> = ds.queries.iter().flat_map(|q| q.extra.clone()).collect();
    let query: Vec<_> = ds.queries.iter().flat_map(|q| q.records.clone()).collect();
    write_raw(&out.join("train.jsonl"), &ds.train)?;
    write_raw(&out.join("query.jsonl"), &query)?;
    write_raw(&out.join("gallery.jsonl"), &ds.gallery)?;
    write_raw(&out.join("query_extra.jsonl"), &extra)?;
    write_text(
        &out.join("ground_truth.json"),
        &(serde_json::to_string(&ds.truth)? + "\n"),
    )?;
    let manifest = json!({
        "seed": config.seed,
        "config_hash": config_hash(&config)?,
        "config": config,
        "files": ["train.jsonl", "query.jsonl", "gallery.jsonl"],
        "extra_queries": "query_extra.jsonl",
        "ground_truth": "ground_truth.json",
        "counts": {
            "train": ds.train.len(),
            "query": query.len(),
            "query_extra": extra.len(),
            "gallery": ds.gallery.len(),
        },
    });
    write_text(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )
}

fn cmd_train(kind: ModelKind, train: &Path, common: &Common) -> Result<()> {
    let out = &common.out;
    match kind {
        ModelKind::Vcc => {
            let mut config: VccTrainConfig = load_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            let (samples, _) = training_samples(&read_raw(train)?);
            let trained = train_vcc(&samples, &config)?;
            save_vcc(&out.join("vcc.json"), &trained.model)?;
            write_text(&out.join("vcc_trace.csv"), &to_csv(&trained.trace)?)
        }
        ModelKind::Cvfr => {
            let mut config: CvfrTrainConfig = load_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            let trained = train_recovery(&load_features(train)?, &config)?;
            save_cvfr(&out.join("cvfr.json"), &trained.model)?;
            write_text(&out.join("cvfr_trace.csv"), &to_csv(&trained.trace)?)
        }
    }
}

fn cmd_embed(vcc: &Path, input: &Path, out: &Path, cache: bool) -> Result<()> {
    let model = load_vcc(vcc)?;
    let features = embed_records(&model, &read_raw(input)?)?;
    write_features(out, &features)?;
    if cache {
        write_cache(&out.with_extension("murf"), &features)?;
    }
    Ok(())
}

fn write_report(dir: &Path, stem: &str, report: &mqreid_core::metrics::EvalReport) -> Result<()> {
    write_text(&dir.join(format!("{stem}.json")), &report.to_json()?)?;
    write_text(&dir.join(format!("{stem}.csv")), &report.to_csv())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    mode: Mode,
    query: &Path,
    gallery: &Path,
    cvfr: Option<&Path>,
    epsilon: Option<f64>,
    no_junk_filter: bool,
    common: &Common,
) -> Result<()> {
    let mut config: EvalConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(eps) = epsilon {
        config.metric.epsilon = eps;
    }
    if no_junk_filter {
        config.inference.junk_filter = false;
    }
    config.metric.validate()?;
    let cvfr_model = cvfr.map(load_cvfr).transpose()?;
    let sets = group_query_sets(&load_features(query)?)?;
    let gallery_set = Gallery::new(load_features(gallery)?)?;
    let queries: Vec<_> = sets.iter().map(|s| s.records.clone()).collect();
    let run = json!({
        "command": "eval",
        "mode": mode,
        "query": path_str(query),
        "gallery": path_str(gallery),
        "cvfr": cvfr.map(path_str),
        "inference": config.inference,
    });
    let report = evaluate_queries(
        &queries,
        Strategy::for_mode(mode, cvfr_model.as_ref()),
        &gallery_set,
        &config.inference,
        &config.metric,
        ReportConfig::new(config.metric.clone(), run, config.seed),
        true,
    )?;
    write_report(&common.out, "report", &report)
}

fn require(path: Option<&Path>, what: &str) -> Result<PathBuf> {
    path.map(Path::to_path_buf)
        .ok_or_else(|| Error::Model(format!("this experiment needs a trained {what} model (--{what})")))
}

fn cmd_experiment(
    name: ExperimentName,
    data: &Path,
    vcc: Option<&Path>,
    cvfr: Option<&Path>,
    epsilon: Option<f64>,
    no_junk_filter: bool,
    common: &Common,
) -> Result<()> {
    let mut settings: ExperimentSettings = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        settings.seed = seed;
    }
    if let Some(eps) = epsilon {
        settings.metric.epsilon = eps;
    }
    if no_junk_filter {
        settings.inference.junk_filter = false;
    }
    settings.metric.validate()?;
    let vcc_model = load_vcc(&require(vcc, "vcc")?)?;
    let cvfr_model = match name {
        ExperimentName::Table5 => Some(load_cvfr(&require(cvfr, "cvfr")?)?),
        _ => None,
    };
    let extra_path = data.join("query_extra.jsonl");
    let extra = if extra_path.exists() {
        read_raw(&extra_path)?
    } else {
        Vec::new()
    };
    let raw = RawSplit::from_records(
        &read_raw(&data.join("query.jsonl"))?,
        &extra,
        read_raw(&data.join("gallery.jsonl"))?,
    );
    let result: ExperimentResult = match name {
        ExperimentName::Fig8 => run_fig8(&vcc_model, &raw, &settings)?,
        ExperimentName::Table5 => {
            let split = embed_split(&vcc_model, &raw)?;
            run_table5(&split, cvfr_model.as_ref().expect("loaded above"), &settings)?
        }
        ExperimentName::Fig10 => run_fig10(&embed_split(&vcc_model, &raw)?, &settings)?,
    };
    let out = &common.out;
    for (i, s) in result.settings.iter().enumerate() {
        write_report(out, &format!("{}_{i}", result.name), &s.report)?;
    }
    write_text(&out.join("summary.csv"), &to_csv(&result.summary())?)?;
    if !result.measurements.is_empty() {
        write_text(
            &out.join("measurements.json"),
            &(serde_json::to_string_pretty(&result.measurements)? + "\n"),
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => cmd_synth(&common),
        Command::Train {
            model,
            train,
            common,
        } => cmd_train(model, &train, &common),
        Command::Embed {
            vcc,
            input,
            out,
            cache,
        } => cmd_embed(&vcc, &input, &out, cache),
        Command::Eval {
            mode,
            query,
            gallery,
            cvfr,
            metric_epsilon,
            no_junk_filter,
            common,
        } => cmd_eval(
            mode.into(),
            &query,
            &gallery,
            cvfr.as_deref(),
            metric_epsilon,
            no_junk_filter,
            &common,
        ),
        Command::Experiment {
            name,
            data,
            vcc,
            cvfr,
            metric_epsilon,
            no_junk_filter,
            common,
        } => cmd_experiment(
            name,
            &data,
            vcc.as_deref(),
            cvfr.as_deref(),
            metric_epsilon,
            no_junk_filter,
            &common,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Model => 4,
            })
        }
    }
}
