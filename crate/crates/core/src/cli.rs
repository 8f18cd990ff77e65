//! The `invaff` command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::correlation::{sign_vector, RepresentationMatrix, SignConfig};
use crate::corpus::{Corpus, DEFAULT_P_T};
use crate::error::{Error, Result};
use crate::eval::{
    experiment_splits_prepared, lambda_sweep_prepared, lopo_cv_prepared, random_subset_control_prepared,
    MaskScope, ModelConfig, PreparedCorpus, SplitReports, SubsetOutcome,
};
use crate::io::{read_document, write_document, write_table};
use crate::manifest::{load_corpus, load_manifest, write_corpus, ManifestConfig};
use crate::ocsvm::{partition_representations, DetectConfig, KernelChoice, Partition, SolverConfig, DEFAULT_NU};
use crate::preflearn::{self, TrainConfig};
use crate::seed::sub_seed;
use crate::synth::{generate, SynthSpec};

pub const LOG_ENV: &str = "INVAFF_LOG";

#[derive(Debug, Parser)]
#[command(name = "invaff", version, about = "Invariant-feature affect modelling pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus and its ground truth
    Synth(SynthArgs),
    /// Detect outlier environments
    Detect(DetectArgs),
    /// Select invariant features over a subset
    Select(SelectArgs),
    /// Train a preference model over a subset
    Train(TrainArgs),
    /// Leave-one-out accuracy over all environments, inliers and outliers
    Eval(EvalArgs),
    /// Random-subset control experiments
    Control(ControlArgs),
    /// Accuracy and feature counts over a grid of lambda values
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Inliers,
    Outliers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeArg {
    Subset,
    Corpus,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 50)]
    pub n_envs: usize,
    #[arg(long, default_value_t = 16)]
    pub n_outliers: usize,
    #[arg(long, default_value_t = 4)]
    pub sessions_per_env: usize,
    #[arg(long, default_value_t = 60)]
    pub windows_per_session: usize,
    #[arg(long, default_value_t = 768)]
    pub d: usize,
    #[arg(long, default_value_t = 150)]
    pub n_invariant: usize,
    #[arg(long, default_value_t = 0.6)]
    pub flip_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0.5)]
    pub spurious_scale: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArgs {
    /// Corpus manifest
    #[arg(long)]
    pub corpus: PathBuf,
    /// Pair threshold; defaults to the manifest's value
    #[arg(long)]
    pub p_t: Option<f64>,
    /// Emit each pair in both orders; defaults to the manifest's value
    #[arg(long)]
    pub symmetric_pairs: Option<bool>,
    /// Zero the sign of correlations whose p-value exceeds this level
    #[arg(long)]
    pub p_value_gate: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectorArgs {
    #[arg(long, default_value_t = DEFAULT_NU)]
    pub nu: f64,
    #[arg(long, value_enum, default_value_t = KernelKind::Rbf)]
    pub kernel: KernelKind,
    /// RBF width; defaults to 1/d
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    pub solver_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub solver_max_iter_per_point: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PartitionArgs {
    /// Partition report from `detect`; detection runs in-process when absent
    #[arg(long)]
    pub partition: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnerArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub reg: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Environments the fold mask is counted over
    #[arg(long, value_enum, default_value_t = ScopeArg::Subset)]
    pub mask_scope: ScopeArg,
    /// Re-detect and drop outliers among each fold's training environments
    #[arg(long)]
    pub per_fold_detection: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub partition: PartitionArgs,
    #[arg(long, value_enum, default_value_t = Subset::Inliers)]
    pub subset: Subset,
    #[arg(long, default_value_t = 0.7)]
    pub lambda: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub partition: PartitionArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[arg(long, value_enum, default_value_t = Subset::Inliers)]
    pub subset: Subset,
    #[arg(long, default_value_t = 0.7)]
    pub lambda: f64,
    /// Train on every feature instead of the invariant mask
    #[arg(long)]
    pub all_features: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub partition: PartitionArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    /// Restrict each fold to invariant features at this threshold
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ControlArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub partition: PartitionArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Random subsets drawn per control
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub partition: PartitionArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    /// `start:stop:step` (endpoints inclusive) or a comma-separated list
    #[arg(long, default_value = "0:1:0.1")]
    pub lambdas: String,
}

/// Parses a λ grid. `start:stop:step` includes `stop` when it lies within
/// 1e-12 of a grid point; values are rounded to 12 decimals.
pub fn parse_lambda_grid(spec: &str) -> Result<Vec<f64>> {
    let round = |v: f64| (v * 1e12).round() / 1e12;
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("'{s}' is not a number in lambda grid '{spec}'")))
    };
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("lambda grid '{spec}' must be start:stop:step")));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid(format!("lambda grid step must be positive, got {step}")));
        }
        if stop < start {
            return Err(Error::invalid(format!("lambda grid stop {stop} is below start {start}")));
        }
        let n = ((stop - start) / step + 1e-12).floor() as usize;
        let mut v: Vec<f64> = (0..=n).map(|k| round(start + k as f64 * step)).collect();
        if let Some(last) = v.last_mut() {
            if (*last - stop).abs() <= 1e-12 {
                *last = stop;
            }
        }
        v
    } else {
        spec.split(',').map(|s| num(s).map(round)).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    for &v in &values {
        check_lambda(v)?;
    }
    Ok(values)
}

fn check_lambda(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}

/// Fully resolved settings of one run, validated before any computation and
/// written to `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub p_t: f64,
    pub symmetric_pairs: bool,
    pub sign: SignConfig,
    pub detect: DetectConfig,
    pub model: ModelConfig,
    pub subset: Option<Subset>,
    pub lambdas: Vec<f64>,
    pub runs: Option<usize>,
    pub synth: Option<SynthSpec>,
}

impl RunConfig {
    fn base(command: &str, seed: u64) -> Self {
        RunConfig {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            corpus: None,
            partition: None,
            p_t: DEFAULT_P_T,
            symmetric_pairs: true,
            sign: SignConfig::default(),
            detect: DetectConfig::default(),
            model: ModelConfig::default(),
            subset: None,
            lambdas: Vec::new(),
            runs: None,
            synth: None,
        }
    }

    fn with_corpus(mut self, c: &CorpusArgs) -> Result<Self> {
        let manifest = load_manifest(&c.corpus)?;
        self.corpus = Some(c.corpus.clone());
        self.p_t = c.p_t.unwrap_or(manifest.config.p_t);
        self.symmetric_pairs = c.symmetric_pairs.unwrap_or(manifest.config.symmetric_pairs);
        check(self.p_t.is_finite() && self.p_t >= 0.0, || {
            format!("p_t must be finite and non-negative, got {}", self.p_t)
        })?;
        if let Some(g) = c.p_value_gate {
            check(g > 0.0 && g <= 1.0, || format!("p-value gate must lie in (0, 1], got {g}"))?;
        }
        self.sign = SignConfig {
            p_value_gate: c.p_value_gate,
            ..SignConfig::default()
        };
        self.detect.p_t = self.p_t;
        self.detect.symmetric_pairs = self.symmetric_pairs;
        self.detect.sign = self.sign;
        self.model.p_t = self.p_t;
        self.model.symmetric_pairs = self.symmetric_pairs;
        self.model.sign = self.sign;
        Ok(self)
    }

    fn with_detector(mut self, a: &DetectorArgs) -> Result<Self> {
        check(a.nu > 0.0 && a.nu <= 1.0, || format!("nu must lie in (0, 1], got {}", a.nu))?;
        if let Some(g) = a.gamma {
            check(g > 0.0 && g.is_finite(), || format!("gamma must be positive, got {g}"))?;
            check(a.kernel == KernelKind::Rbf, || "gamma applies to the rbf kernel only".into())?;
        }
        check(a.solver_tol > 0.0, || format!("solver tolerance must be positive, got {}", a.solver_tol))?;
        self.detect.nu = a.nu;
        self.detect.kernel = match a.kernel {
            KernelKind::Rbf => KernelChoice::Rbf { gamma: a.gamma },
            KernelKind::Linear => KernelChoice::Linear,
        };
        self.detect.solver = SolverConfig {
            tol: a.solver_tol,
            max_iter_per_point: a.solver_max_iter_per_point,
        };
        Ok(self)
    }

    fn with_partition(mut self, p: &PartitionArgs) -> Self {
        self.partition = p.partition.clone();
        self
    }

    fn with_learner(mut self, a: &LearnerArgs) -> Result<Self> {
        check(a.reg >= 0.0 && a.reg.is_finite(), || format!("reg must be non-negative, got {}", a.reg))?;
        check(a.tol > 0.0, || format!("tol must be positive, got {}", a.tol))?;
        check(a.max_iter > 0, || "max_iter must be positive".into())?;
        self.model.train = TrainConfig {
            reg: a.reg,
            tol: a.tol,
            max_iter: a.max_iter,
            ..TrainConfig::default()
        };
        self.model.mask_scope = match a.mask_scope {
            ScopeArg::Subset => MaskScope::Subset,
            ScopeArg::Corpus => MaskScope::Corpus,
        };
        self.model.per_fold_detection = a.per_fold_detection.then_some(self.detect);
        Ok(self)
    }

    fn with_lambda(mut self, lambda: Option<f64>) -> Result<Self> {
        if let Some(l) = lambda {
            check_lambda(l)?;
        }
        self.model.lambda = lambda;
        Ok(self)
    }
}

fn write_config(out: &Path, config: &RunConfig) -> Result<()> {
    write_document(&out.join("config.json"), "config", config)
}

fn partition_for(config: &RunConfig, prepared: &PreparedCorpus) -> Result<Partition> {
    if let Some(path) = &config.partition {
        let doc = read_document::<Partition>(path)?;
        if doc.kind != "partition" {
            return Err(Error::invalid(format!(
                "{} holds a '{}' document, not a partition",
                path.display(),
                doc.kind
            )));
        }
        return Ok(doc.payload);
    }
    detect_prepared(prepared, &config.detect)
}

fn detect_prepared(prepared: &PreparedCorpus, detect: &DetectConfig) -> Result<Partition> {
    let matrix = representations(prepared)?;
    partition_representations(&matrix, detect.nu, detect.kernel, &detect.solver)
}

fn representations(prepared: &PreparedCorpus) -> Result<RepresentationMatrix> {
    let rows = prepared
        .env_ids()
        .iter()
        .map(|e| match prepared.signs(e)? {
            Some(s) => Ok(s.clone()),
            None => sign_vector(prepared.pairs(e)?, &SignConfig::default()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepresentationMatrix { rows })
}

fn subset_envs(subset: Subset, corpus: &Corpus, partition: &Partition) -> Vec<String> {
    match subset {
        Subset::All => corpus.env_ids(),
        Subset::Inliers => partition.inliers.clone(),
        Subset::Outliers => partition.outliers.clone(),
    }
}

struct Loaded {
    corpus: Corpus,
    prepared: PreparedCorpus,
}

fn load(config: &RunConfig) -> Result<Loaded> {
    let path = config.corpus.as_ref().expect("corpus commands set the corpus path");
    let corpus = load_corpus(path)?;
    let prepared = PreparedCorpus::for_config(&corpus, &config.model)?;
    Ok(Loaded { corpus, prepared })
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_envs: a.n_envs,
        n_outliers: a.n_outliers,
        sessions_per_env: a.sessions_per_env,
        windows_per_session: a.windows_per_session,
        d: a.d,
        n_invariant: a.n_invariant,
        flip_fraction: a.flip_fraction,
        noise_sd: a.noise_sd,
        spurious_scale: a.spurious_scale,
        seed: sub_seed(a.out.seed, "synth"),
    };
    spec.validate()?;
    let mut config = RunConfig::base("synth", a.out.seed);
    config.synth = Some(spec.clone());
    let (corpus, truth) = generate(&spec)?;
    write_corpus(&corpus, &ManifestConfig::default(), &a.out.out)?;
    write_document(&a.out.out.join("ground_truth.json"), "ground_truth", &truth)?;
    write_config(&a.out.out, &config)
}

fn run_detect(a: &DetectArgs) -> Result<()> {
    let config = RunConfig::base("detect", a.out.seed)
        .with_corpus(&a.corpus)?
        .with_detector(&a.detector)?;
    let loaded = load(&config)?;
    let matrix = representations(&loaded.prepared)?;
    let partition = partition_representations(&matrix, config.detect.nu, config.detect.kernel, &config.detect.solver)?;
    let out = &a.out.out;
    matrix.write_csv(&out.join("representations.csv"))?;
    partition.write_csv(&out.join("partition.csv"))?;
    write_document(&out.join("partition.json"), "partition", &partition)?;
    write_config(out, &config)
}

fn run_select(a: &SelectArgs) -> Result<()> {
    let mut config = RunConfig::base("select", a.out.seed)
        .with_corpus(&a.corpus)?
        .with_detector(&a.detector)?
        .with_partition(&a.partition)
        .with_lambda(Some(a.lambda))?;
    config.subset = Some(a.subset);
    let loaded = load(&config)?;
    let partition = partition_for(&config, &loaded.prepared)?;
    let envs = subset_envs(a.subset, &loaded.corpus, &partition);
    if envs.is_empty() {
        return Err(Error::invalid(format!("subset {:?} is empty", a.subset)));
    }
    let mask = loaded.prepared.mask_over(&envs, a.lambda)?;
    let out = &a.out.out;
    mask.write_csv(&out.join("mask.csv"))?;
    write_document(&out.join("mask.json"), "mask", &mask)?;
    write_config(out, &config)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let lambda = (!a.all_features).then_some(a.lambda);
    let mut config = RunConfig::base("train", a.out.seed)
        .with_corpus(&a.corpus)?
        .with_detector(&a.detector)?
        .with_partition(&a.partition)
        .with_learner(&a.learner)?
        .with_lambda(lambda)?;
    config.subset = Some(a.subset);
    let loaded = load(&config)?;
    let partition = partition_for(&config, &loaded.prepared)?;
    let envs = subset_envs(a.subset, &loaded.corpus, &partition);
    if envs.is_empty() {
        return Err(Error::invalid(format!("subset {:?} is empty", a.subset)));
    }
    let mask = match lambda {
        Some(l) => Some(loaded.prepared.mask_over(&envs, l)?),
        None => None,
    };
    let sets = envs
        .iter()
        .map(|e| loaded.prepared.pairs(e))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>();
    if sets.is_empty() {
        return Err(Error::invalid("subset has no pairs to train on"));
    }
    let model = preflearn::train(&sets, mask.as_ref(), &config.model.train)?;
    let out = &a.out.out;
    write_document(&out.join("model.json"), "model", &model)?;
    write_config(out, &config)
}

fn write_split_tables(out: &Path, splits: &SplitReports) -> Result<()> {
    let header = ["subset", "status", "n_envs", "mean_accuracy", "ci_lo", "ci_hi"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    for (name, outcome) in [("all", &splits.all), ("inliers", &splits.inliers), ("outliers", &splits.outliers)] {
        match outcome {
            SubsetOutcome::Computed { report } => {
                report.write_csv(&out.join(format!("folds_{name}.csv")))?;
                rows.push(vec![
                    name.to_string(),
                    "computed".into(),
                    report.envs.len().to_string(),
                    report.mean_accuracy.to_string(),
                    report.ci95.lo.to_string(),
                    report.ci95.hi.to_string(),
                ]);
            }
            SubsetOutcome::NotComputable { n_envs, .. } => rows.push(vec![
                name.to_string(),
                "not_computable".into(),
                n_envs.to_string(),
                String::new(),
                String::new(),
                String::new(),
            ]),
        }
    }
    write_table(&out.join("summary.csv"), &header, &rows)
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let config = RunConfig::base("eval", a.out.seed)
        .with_corpus(&a.corpus)?
        .with_detector(&a.detector)?
        .with_partition(&a.partition)
        .with_learner(&a.learner)?
        .with_lambda(a.lambda)?;
    let loaded = load(&config)?;
    let partition = partition_for(&config, &loaded.prepared)?;
    let splits = experiment_splits_prepared(&loaded.prepared, &partition, &config.model)?;
    let out = &a.out.out;
    write_split_tables(out, &splits)?;
    write_document(&out.join("splits.json"), "splits", &splits)?;
    write_config(out, &config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEntry {
    pub experiment: String,
    pub outcome: ControlOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ControlOutcome {
    Single { report: crate::eval::Report },
    Random { report: crate::eval::ControlReport },
    NotComputable { reason: String },
}

fn run_control(a: &ControlArgs) -> Result<()> {
    let mut config = RunConfig::base("control", a.out.seed)
        .with_corpus(&a.corpus)?
        .with_detector(&a.detector)?
        .with_partition(&a.partition)
        .with_learner(&a.learner)?
        .with_lambda(a.lambda)?;
    check(a.runs > 0, || "runs must be at least 1".into())?;
    config.runs = Some(a.runs);
    let loaded = load(&config)?;
    let partition = partition_for(&config, &loaded.prepared)?;
    let k = partition.outliers.len();
    let mut entries = Vec::new();

    let outcome = if k < 2 {
        ControlOutcome::NotComputable {
            reason: format!("{k} outliers; leave-one-out needs 2"),
        }
    } else {
        ControlOutcome::Single {
            report: lopo_cv_prepared(&loaded.prepared, &partition.outliers, &config.model)?,
        }
    };
    entries.push(ControlEntry {
        experiment: "outliers".into(),
        outcome,
    });
    let all = loaded.corpus.env_ids();
    for (name, pool) in [("random_inliers", &partition.inliers), ("random_all", &all)] {
        let outcome = if k < 2 || pool.len() < k {
            ControlOutcome::NotComputable {
                reason: format!("cannot draw {k} of {} environments for leave-one-out", pool.len()),
            }
        } else {
            let seed = sub_seed(a.out.seed, &format!("control/{name}"));
            ControlOutcome::Random {
                report: random_subset_control_prepared(&loaded.prepared, pool, k, a.runs, seed, &config.model)?,
            }
        };
        entries.push(ControlEntry {
            experiment: name.into(),
            outcome,
        });
    }

    let header = ["experiment", "status", "mean_accuracy", "ci_lo", "ci_hi"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            let (status, ci) = match &e.outcome {
                ControlOutcome::Single { report } => ("computed", Some(report.ci95)),
                ControlOutcome::Random { report } => ("computed", Some(report.ci95)),
                ControlOutcome::NotComputable { .. } => ("not_computable", None),
            };
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            vec![
                e.experiment.clone(),
                status.into(),
                f(ci.map(|c| c.mean)),
                f(ci.map(|c| c.lo)),
                f(ci.map(|c| c.hi)),
            ]
        })
        .collect();
    let out = &a.out.out;
    write_table(&out.join("control.csv"), &header, &rows)?;
    write_document(&out.join("control.json"), "control", &entries)?;
    write_config(out, &config)
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let lambdas = parse_lambda_grid(&a.lambdas)?;
    let mut config = RunConfig::base("sweep", a.out.seed)
        .with_corpus(&a.corpus)?
        .with_detector(&a.detector)?
        .with_partition(&a.partition)
        .with_learner(&a.learner)?;
    config.lambdas = lambdas.clone();
    let loaded = load(&config)?;
    let partition = partition_for(&config, &loaded.prepared)?;
    let table = lambda_sweep_prepared(&loaded.prepared, &partition, &lambdas, &config.model)?;
    let out = &a.out.out;
    table.write_csv(&out.join("sweep.csv"))?;
    write_document(&out.join("sweep.json"), "sweep", &table)?;
    write_config(out, &config)
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => run_synth(a),
        Command::Detect(a) => run_detect(a),
        Command::Select(a) => run_select(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Control(a) => run_control(a),
        Command::Sweep(a) => run_sweep(a),
    }
}

/// Exit code of a failed run: 2 for solver non-convergence, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotConverged { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_grid_inclusive() {
        let g = parse_lambda_grid("0.0:1.0:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[7], 0.7);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert_eq!(parse_lambda_grid("0.5:0.5:0.1").unwrap(), vec![0.5]);
        assert_eq!(parse_lambda_grid("0.2,0.7").unwrap(), vec![0.2, 0.7]);
    }

    #[test]
    fn lambda_grid_errors() {
        for bad in ["0:1", "0:1:0", "1:0:0.1", "0:2:0.5", "a:1:0.1", "1.5", ""] {
            assert!(parse_lambda_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["invaff", "detect", "--bogus"]), 1);
        assert_eq!(run(["invaff", "frobnicate"]), 1);
        assert_eq!(run(["invaff", "--help"]), 0);
    }

    #[test]
    fn validation_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["invaff", "synth", "--out", out, "--n-envs", "3", "--n-outliers", "3"]), 1);
        assert!(!dir.path().join("manifest.json").exists());
    }

    #[test]
    fn non_convergence_exit_two() {
        assert_eq!(
            exit_code(&Error::NotConverged {
                iterations: 1,
                kkt_residual: 1.0
            }),
            2
        );
    }
}
