//! Experiment runner: one binary, one output directory, reproducible runs.
//!
//! Every command loads the experiment config (JSON, all fields defaulted),
//! applies the optional `--seed` override, then writes or checks the run
//! manifest in the output directory before touching any artifact. The
//! manifest records a config hash so artifacts from different configurations
//! cannot be silently mixed.

mod report;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    load_captions, load_ratings, save_captions, save_ratings, save_vocab, Caption,
    CaptionDataset, Context, RatingsDataset, Vocabulary,
};
use crate::error::{Error, Result};
use crate::estimator::{
    load_estimator, probe_estimator, save_estimator, train_estimator, EstimatorConfig,
    EstimatorParams, EstimatorReport, ProbeReport,
};
use crate::eval::{goodness_eval, sxs_eval, EvalConfig, GoodnessResult, SxsResult};
use crate::model::{beam_search, load_model, save_model, ModelDims, ModelParams};
use crate::oracle::exact_objective;
use crate::rng::{fnv1a64, sub_seed};
use crate::synthworld::{
    build_datasets, gen_world, gt_caption, load_world, rating_components, save_world, true_rating,
    World, WorldSpec,
};
use crate::trainers::{
    train, BaselineMode, OracleAttach, TrainConfig, TrainInputs, TrainMode,
};

#[derive(Debug, Parser)]
#[command(name = "ratings-pg", version, about = "Caption-model training on human ratings, with exact-enumeration diagnostics")]
pub struct Cli {
    /// Experiment config file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override the config's world and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress the one-line summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic world and its caption/ratings datasets.
    GenWorld,
    /// Train one model; non-baseline modes fine-tune from baseline.ckpt.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        /// Initial checkpoint (defaults to baseline.ckpt for non-baseline modes).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Rating threshold for baseline_plus (overrides the config value).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Rate every trained checkpoint on held-out contexts and compare each
    /// against the baseline side by side.
    Eval,
    /// Fine-tune onpg and offpg across the configured alpha grid.
    SweepAlpha,
    /// Score the rating estimator on ill-formed probe captions.
    ProbeEstimator,
    /// Summarize eval (and sweep, when present) artifacts into tables.
    Report,
}

// ---- experiment config -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed: usize,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed: 3,
            hidden: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    /// Fine-tuning steps per (method, alpha) cell.
    pub steps: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: vec![0.1, 1.0, 10.0, 100.0],
            steps: 6000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub model: ModelConfig,
    pub estimator: EstimatorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.eval.validate()?;
        self.estimator.validate()?;
        // Mode-specific train checks happen per command; the baseline rules
        // cover the mode-independent fields.
        self.train.validate(TrainMode::Baseline)?;
        if self.model.embed == 0 || self.model.hidden == 0 {
            return Err(Error::Config("model embed/hidden must be positive".into()));
        }
        if self.sweep.alphas.is_empty() || self.sweep.steps == 0 {
            return Err(Error::Config("sweep needs alphas and positive steps".into()));
        }
        if self.sweep.alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config("sweep alphas must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Stable hash of the effective config (after seed overrides).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

pub fn load_config(path: Option<&Path>, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let s = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&s)
                .map_err(|e| Error::Config(format!("invalid config {}: {e}", p.display())))?
        }
    };
    if let Some(s) = seed_override {
        cfg.world.seed = s;
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---- manifest ----------------------------------------------------------------

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

pub fn version_string() -> String {
    format!("{}-v{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Create the output directory and write the manifest, or verify it against
/// an existing one. Any disagreement aborts the run.
pub fn ensure_manifest(out: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(MANIFEST_FILE);
    if path.exists() {
        let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let existing: Manifest = serde_json::from_str(&s).map_err(|e| Error::json(&path, e))?;
        if existing != *manifest {
            return Err(Error::Manifest(format!(
                "{} was written by config_hash={} seed={} ({}), current run is config_hash={} seed={} ({})",
                out.display(),
                existing.config_hash,
                existing.seed,
                existing.version,
                manifest.config_hash,
                manifest.seed,
                manifest.version
            )));
        }
        return Ok(());
    }
    write_json(&path, manifest)
}

// ---- shared plumbing -----------------------------------------------------------

const TAG_ESTIMATOR: u64 = 0x31;
const TAG_EVAL_GOODNESS: u64 = 0x41;
const TAG_EVAL_SXS: u64 = 0x42;

/// Steps at which intermediate baseline-run checkpoints serve as candidate
/// caption generators for the ratings dataset. The early checkpoint seeds the
/// pool with weak captions so ratings span the full scale.
const CANDIDATE_STEPS: [usize; 6] = [100, 1200, 1400, 1600, 1800, 1950];

struct Env {
    out: PathBuf,
    cfg: ExperimentConfig,
    manifest: Manifest,
    quiet: bool,
}

impl Env {
    fn new(cli_out: &Path, cfg: ExperimentConfig, quiet: bool) -> Result<Self> {
        let manifest = Manifest {
            version: version_string(),
            config_hash: cfg.hash(),
            seed: cfg.world.seed,
        };
        ensure_manifest(cli_out, &manifest)?;
        Ok(Env {
            out: cli_out.to_path_buf(),
            cfg,
            manifest,
            quiet,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, line: String) {
        if !self.quiet {
            println!("{line}");
        }
    }

    fn model_dims(&self, vocab: &Vocabulary, feature_dim: usize) -> ModelDims {
        ModelDims {
            vocab: vocab.size(),
            embed: self.cfg.model.embed,
            hidden: self.cfg.model.hidden,
            ctx: feature_dim,
        }
    }

    fn load_world(&self) -> Result<World> {
        let path = self.path("world.json");
        if !path.exists() {
            return Err(Error::Validation(format!(
                "missing {}: run gen-world first",
                path.display()
            )));
        }
        load_world(&path)
    }

    fn load_captions(&self, vocab: &Vocabulary) -> Result<CaptionDataset> {
        load_captions(&self.path("dic.jsonl"), vocab, self.cfg.world.l_max)
    }

    fn load_ratings(&self, vocab: &Vocabulary) -> Result<RatingsDataset> {
        load_ratings(&self.path("dcr.jsonl"), vocab, self.cfg.world.l_max)
    }

    fn load_baseline(&self) -> Result<ModelParams> {
        let path = self.path("baseline.ckpt");
        if !path.exists() {
            return Err(Error::Validation(format!(
                "missing {}: train the baseline first",
                path.display()
            )));
        }
        load_model(&path)
    }

    /// Load the saved estimator or train and save one.
    fn ensure_estimator(
        &self,
        ratings: &RatingsDataset,
        vocab: &Vocabulary,
    ) -> Result<EstimatorParams> {
        let path = self.path("estimator.ckpt");
        if path.exists() {
            return load_estimator(&path);
        }
        let (params, report) = train_estimator(
            ratings,
            vocab,
            self.cfg.world.l_max,
            &self.cfg.estimator,
            estimator_seed(&self.cfg.train),
        )?;
        save_estimator(&path, &params)?;
        write_json(
            &self.path("estimator_report.json"),
            &EstimatorArtifact {
                version: self.manifest.version.clone(),
                config_hash: self.manifest.config_hash.clone(),
                seed: self.manifest.seed,
                report,
            },
        )?;
        Ok(params)
    }
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_string(path, &(s + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::Validation(format!(
            "missing artifact {}",
            path.display()
        )));
    }
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

/// Checkpoint/trace base name for a training run.
pub fn run_name(mode: TrainMode, threshold: f64) -> String {
    match mode {
        TrainMode::BaselinePlus => {
            format!("baseline_plus_t{}", (threshold * 100.0).round() as u32)
        }
        other => other.to_string(),
    }
}

/// Training config for a mode: picks the baseline kind the mode requires and
/// applies an optional merge-threshold override.
pub fn mode_config(base: &TrainConfig, mode: TrainMode, threshold: Option<f64>) -> TrainConfig {
    let mut c = base.clone();
    match mode {
        TrainMode::OffPg => c.b_mode = BaselineMode::DatasetMean,
        TrainMode::OnPg => c.b_mode = BaselineMode::MovingAverage,
        _ => {}
    }
    if let Some(t) = threshold {
        c.t_threshold = t;
    }
    c
}

/// Seed for the rating-estimator fit, derived from the training seed.
pub fn estimator_seed(train: &TrainConfig) -> u64 {
    sub_seed(train.seed, TAG_ESTIMATOR)
}

// ---- artifact schemas ----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EstimatorArtifact {
    version: String,
    config_hash: String,
    seed: u64,
    report: EstimatorReport,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct GoodnessRow {
    pub model: String,
    /// Exact expected true rating on the held-out contexts.
    pub exact_expected_rating: f64,
    pub result: GoodnessResult,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct GoodnessArtifact {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub models: Vec<GoodnessRow>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SxsRow {
    pub model: String,
    pub result: SxsResult,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SxsArtifact {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// All comparisons are against this model; positive favors the row model.
    pub reference: String,
    pub models: Vec<SxsRow>,
}

#[derive(Serialize, Deserialize)]
struct ProbeArtifact {
    version: String,
    config_hash: String,
    seed: u64,
    report: ProbeReport,
}

// ---- commands ------------------------------------------------------------------

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let env = Env::new(&cli.out, cfg, cli.quiet)?;
    match cli.command {
        Command::GenWorld => cmd_gen_world(&env),
        Command::Train {
            mode,
            init,
            threshold,
        } => cmd_train(&env, mode, init.as_deref(), threshold),
        Command::Eval => cmd_eval(&env),
        Command::SweepAlpha => cmd_sweep_alpha(&env),
        Command::ProbeEstimator => cmd_probe_estimator(&env),
        Command::Report => report::cmd_report(&env),
    }
}

/// Generate the world plus both datasets: the ground-truth caption set and
/// the rated caption pool produced by intermediate baseline-run checkpoints
/// (same seed and config, fewer steps, so each is a true prefix of the run).
pub fn world_artifacts(
    cfg: &ExperimentConfig,
) -> Result<(World, CaptionDataset, RatingsDataset)> {
    let world = gen_world(&cfg.world)?;
    let gt_pairs = world
        .contexts
        .iter()
        .map(|c| Ok((c.clone(), gt_caption(c, &world.vocab)?)))
        .collect::<Result<Vec<_>>>()?;
    let gt = CaptionDataset::new(gt_pairs)?;

    let dims = ModelDims {
        vocab: world.vocab.size(),
        embed: cfg.model.embed,
        hidden: cfg.model.hidden,
        ctx: gt.feature_dim(),
    };
    let mut steps: Vec<usize> = CANDIDATE_STEPS
        .iter()
        .map(|&s| s.min(cfg.train.steps))
        .collect();
    steps.dedup();
    let mut candidates = Vec::with_capacity(steps.len());
    for s in steps {
        let train_cfg = TrainConfig {
            steps: s,
            exact_trace_every: 0,
            ..cfg.train.clone()
        };
        let inputs = TrainInputs {
            captions: &gt,
            ratings: None,
            estimator: None,
            init: None,
            oracle: None,
        };
        let (params, _) = train(
            TrainMode::Baseline,
            dims,
            &world.vocab,
            &inputs,
            &train_cfg,
            cfg.world.l_max,
        )?;
        candidates.push(params);
    }
    // Later checkpoints first: the pool keeps the strongest beams when slots
    // run out.
    candidates.reverse();

    let (dic, dcr) = build_datasets(&world, &candidates)?;
    Ok((world, dic, dcr))
}

fn cmd_gen_world(env: &Env) -> Result<()> {
    let (world, dic, dcr) = world_artifacts(&env.cfg)?;
    save_vocab(&env.path("vocab.json"), &world.vocab)?;
    save_world(&env.path("world.json"), &world)?;
    save_captions(&env.path("dic.jsonl"), &dic)?;
    save_ratings(&env.path("dcr.jsonl"), &dcr)?;
    env.say(format!(
        "gen-world: {} contexts, {} gt captions, {} rated captions -> {}",
        world.contexts.len(),
        dic.len(),
        dcr.n_rated(),
        env.out.display()
    ));
    Ok(())
}

fn cmd_train(
    env: &Env,
    mode: TrainMode,
    init: Option<&Path>,
    threshold: Option<f64>,
) -> Result<()> {
    if threshold.is_some() && mode != TrainMode::BaselinePlus {
        return Err(Error::Config(
            "--threshold only applies to --mode baseline_plus".into(),
        ));
    }
    let world = env.load_world()?;
    let vocab = &world.vocab;
    let l_max = env.cfg.world.l_max;
    let captions = env.load_captions(vocab)?;
    let config = mode_config(&env.cfg.train, mode, threshold);
    config.validate(mode)?;

    let ratings = if mode == TrainMode::Baseline {
        None
    } else {
        Some(env.load_ratings(vocab)?)
    };
    let estimator = match mode {
        TrainMode::OnPg => Some(env.ensure_estimator(ratings.as_ref().expect("loaded"), vocab)?),
        _ => None,
    };
    // Likelihood-only modes train from scratch; policy-gradient modes
    // fine-tune the trained baseline.
    let init_params = match (init, mode) {
        (Some(p), _) => Some(load_model(p)?),
        (None, TrainMode::Baseline | TrainMode::BaselinePlus) => None,
        (None, _) => Some(env.load_baseline()?),
    };

    let dims = env.model_dims(vocab, captions.feature_dim());
    let inputs = TrainInputs {
        captions: &captions,
        ratings: ratings.as_ref(),
        estimator: estimator.as_ref(),
        init: init_params.as_ref(),
        oracle: Some(OracleAttach {
            contexts: &world.contexts,
            rating: &true_rating,
        }),
    };
    let (params, trace) = train(mode, dims, vocab, &inputs, &config, l_max)?;

    let name = run_name(mode, config.t_threshold);
    save_model(&env.path(&format!("{name}.ckpt")), &params)?;
    write_string(
        &env.path(&format!("trace_{name}.csv")),
        &trace.to_csv_string(),
    )?;
    let last_exact = trace
        .rows
        .iter()
        .rev()
        .find_map(|r| r.exact_expected_rating)
        .map(|v| v.to_string())
        .unwrap_or_else(|| "n/a".into());
    env.say(format!(
        "train {name}: {} steps, exact E[r*] {last_exact} -> {}",
        config.steps,
        env.out.display()
    ));
    Ok(())
}

/// Model checkpoints in the output directory, baseline first, then sorted.
fn list_model_names(out: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(out).map_err(|e| Error::io(out, e))? {
        let entry = entry.map_err(|e| Error::io(out, e))?;
        let file = entry.file_name();
        let Some(file) = file.to_str() else { continue };
        if let Some(stem) = file.strip_suffix(".ckpt") {
            if stem != "estimator" {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    if let Some(pos) = names.iter().position(|n| n == "baseline") {
        let b = names.remove(pos);
        names.insert(0, b);
    }
    Ok(names)
}

fn sxs_components(ctx: &Context, caption: &Caption) -> [f64; 3] {
    let c = rating_components(ctx, caption);
    [c.recall, c.precision, c.grammar]
}

fn cmd_eval(env: &Env) -> Result<()> {
    let world = env.load_world()?;
    let vocab = &world.vocab;
    let l_max = env.cfg.world.l_max;
    let names = list_model_names(&env.out)?;
    if !names.iter().any(|n| n == "baseline") {
        return Err(Error::Validation(
            "no baseline.ckpt in the output directory; train the baseline first".into(),
        ));
    }
    let seed = env.cfg.world.seed;

    let mut goodness_rows = Vec::new();
    let mut sxs_rows = Vec::new();
    let baseline = env.load_baseline()?;
    for name in &names {
        let params = load_model(&env.path(&format!("{name}.ckpt")))?;
        let result = goodness_eval(
            &params,
            vocab,
            &world.eval_contexts,
            l_max,
            &true_rating,
            &env.cfg.eval,
            sub_seed(sub_seed(seed, TAG_EVAL_GOODNESS), fnv1a64(name.as_bytes())),
        )?;
        let exact = exact_objective(&params, vocab, &world.eval_contexts, l_max, &true_rating)?;
        goodness_rows.push(GoodnessRow {
            model: name.clone(),
            exact_expected_rating: exact,
            result,
        });
        if name != "baseline" {
            let result = sxs_eval(
                &params,
                &baseline,
                vocab,
                &world.eval_contexts,
                l_max,
                &sxs_components,
                &env.cfg.eval,
                sub_seed(sub_seed(seed, TAG_EVAL_SXS), fnv1a64(name.as_bytes())),
            )?;
            sxs_rows.push(SxsRow {
                model: name.clone(),
                result,
            });
        }
    }

    let goodness = GoodnessArtifact {
        version: env.manifest.version.clone(),
        config_hash: env.manifest.config_hash.clone(),
        seed,
        models: goodness_rows,
    };
    write_json(&env.path("eval_goodness.json"), &goodness)?;
    write_string(
        &env.path("eval_goodness.csv"),
        &report::goodness_flat_csv(&goodness),
    )?;

    let sxs = SxsArtifact {
        version: env.manifest.version.clone(),
        config_hash: env.manifest.config_hash.clone(),
        seed,
        reference: "baseline".into(),
        models: sxs_rows,
    };
    write_json(&env.path("eval_sxs.json"), &sxs)?;
    write_string(&env.path("eval_sxs.csv"), &report::sxs_flat_csv(&sxs))?;

    env.say(format!(
        "eval: {} models on {} held-out contexts, {} side-by-side comparisons -> {}",
        goodness.models.len(),
        world.eval_contexts.len(),
        sxs.models.len(),
        env.out.display()
    ));
    Ok(())
}

/// Count distinct beam captions across contexts (the mode-collapse gauge).
pub fn distinct_beam_captions(
    params: &ModelParams,
    vocab: &Vocabulary,
    contexts: &[Context],
    beam: usize,
    l_max: usize,
) -> Result<usize> {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    for ctx in contexts {
        let c = beam_search(params, vocab, ctx, beam, l_max)?;
        seen.insert(c.token_ids().to_vec());
    }
    Ok(seen.len())
}

pub const SWEEP_CSV_HEADER: &str =
    "method,alpha,exact_expected_rating,distinct_captions,eta_clip_count";

/// One fine-tuning cell of the alpha sweep.
pub struct SweepRow {
    pub mode: TrainMode,
    pub alpha: f64,
    /// Exact expected true rating on the training contexts.
    pub exact: f64,
    /// Distinct beam-decoded captions across the training contexts.
    pub distinct: usize,
    pub eta_clips: u64,
}

/// Fine-tune the baseline with onpg and offpg at every configured alpha and
/// measure each result exactly.
pub fn sweep_rows(
    cfg: &ExperimentConfig,
    world: &World,
    captions: &CaptionDataset,
    ratings: &RatingsDataset,
    baseline: &ModelParams,
    estimator: &EstimatorParams,
) -> Result<Vec<SweepRow>> {
    let vocab = &world.vocab;
    let l_max = cfg.world.l_max;
    let dims = ModelDims {
        vocab: vocab.size(),
        embed: cfg.model.embed,
        hidden: cfg.model.hidden,
        ctx: captions.feature_dim(),
    };
    let mut rows = Vec::new();
    for mode in [TrainMode::OnPg, TrainMode::OffPg] {
        for &alpha in &cfg.sweep.alphas {
            let config = TrainConfig {
                alpha,
                steps: cfg.sweep.steps,
                exact_trace_every: 0,
                ..mode_config(&cfg.train, mode, None)
            };
            let inputs = TrainInputs {
                captions,
                ratings: Some(ratings),
                estimator: (mode == TrainMode::OnPg).then_some(estimator),
                init: Some(baseline),
                oracle: None,
            };
            let (params, trace) = train(mode, dims, vocab, &inputs, &config, l_max)?;
            let exact = exact_objective(&params, vocab, &world.contexts, l_max, &true_rating)?;
            let distinct = distinct_beam_captions(
                &params,
                vocab,
                &world.contexts,
                cfg.eval.beam,
                l_max,
            )?;
            let clips: u64 = trace.rows.iter().map(|r| r.eta_clip_count).sum();
            rows.push(SweepRow {
                mode,
                alpha,
                exact,
                distinct,
                eta_clips: clips,
            });
        }
    }
    Ok(rows)
}

fn cmd_sweep_alpha(env: &Env) -> Result<()> {
    let world = env.load_world()?;
    let vocab = &world.vocab;
    let captions = env.load_captions(vocab)?;
    let ratings = env.load_ratings(vocab)?;
    let baseline = env.load_baseline()?;
    let estimator = env.ensure_estimator(&ratings, vocab)?;

    let rows = sweep_rows(&env.cfg, &world, &captions, &ratings, &baseline, &estimator)?;
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.mode, r.alpha, r.exact, r.distinct, r.eta_clips
        ));
    }
    write_string(&env.path("sweep_alpha.csv"), &csv)?;
    env.say(format!(
        "sweep-alpha: {} runs of {} steps each -> {}",
        rows.len(),
        env.cfg.sweep.steps,
        env.path("sweep_alpha.csv").display()
    ));
    Ok(())
}

fn cmd_probe_estimator(env: &Env) -> Result<()> {
    let world = env.load_world()?;
    let vocab = &world.vocab;
    let ratings = env.load_ratings(vocab)?;
    let estimator = env.ensure_estimator(&ratings, vocab)?;
    let report = probe_estimator(
        &estimator,
        &world.contexts,
        vocab,
        env.cfg.world.l_max,
        Some(&true_rating),
    )?;

    let mut csv = String::from("family,n,mean_pred,max_pred,frac_high,mean_true\n");
    for f in &report.families {
        let mean_true = f.mean_true.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.family, f.n, f.mean_pred, f.max_pred, f.frac_high, mean_true
        ));
    }
    write_string(&env.path("probe_report.csv"), &csv)?;
    write_json(
        &env.path("probe_report.json"),
        &ProbeArtifact {
            version: env.manifest.version.clone(),
            config_hash: env.manifest.config_hash.clone(),
            seed: env.manifest.seed,
            report: report.clone(),
        },
    )?;

    let worst = report
        .families
        .iter()
        .max_by(|a, b| a.mean_pred.total_cmp(&b.mean_pred))
        .expect("families non-empty");
    env.say(format!(
        "probe-estimator: {} families, highest mean prediction {:.3} ({}) -> {}",
        report.families.len(),
        worst.mean_pred,
        worst.family,
        env.out.display()
    ));
    Ok(())
}
