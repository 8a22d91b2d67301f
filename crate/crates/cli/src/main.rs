use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rls_core::baseline::sweep_sequencer;
use rls_core::config::RunConfig;
use rls_core::io::{gen_fluence, read_corpus, read_fluence, write_fluence, write_plan, Manifest, ManifestEntry, Split, SynthConfig};
use rls_core::metrics::{leaf_speed_stats, mnse, normalized_error, reconstruct};
use rls_core::ppo::{sequence_with_alpha, train, write_metrics_csv, Checkpoint, TrainReport};
use rls_core::{Error, FluenceGrid, PlanSequence};

const MANIFEST_NAME: &str = "manifest.txt";
const PROBE_SIZE: usize = 8;

#[derive(Parser)]
#[command(name = "rls", version, about = "Reinforced leaf sequencing: fluence maps to MLC leaf positions and MUs")]
struct Cli {
    /// Caps the number of rollout worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fluence corpus and its manifest.
    Gen(GenArgs),
    /// Train a policy on a corpus.
    Train(TrainArgs),
    /// Sequence one fluence map with a trained policy.
    Sequence(SequenceArgs),
    /// Compare a policy and the sweep baseline on a corpus.
    Eval(EvalArgs),
    /// Sweep one reward weight and report corpus MNSE per value.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Seed; falls back to RLS_SEED, then to the config value.
    #[arg(long, env = "RLS_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    /// Grid shape as ROWSxCOLS.
    #[arg(long, default_value = "8x32", value_parser = parse_shape)]
    shape: (usize, usize),
    /// Superpose 2-4 disjoint islands per map.
    #[arg(long)]
    hard: bool,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Flat key = value file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct SequenceArgs {
    #[arg(long)]
    fluence: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Control points in the output plan; defaults to the policy's K.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    alpha: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Also run the sweep baseline (implied without --ckpt).
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    out: PathBuf,
    /// Control points; defaults to the policy's K, or 8 without a policy.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    alpha: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// One of lambda1..lambda5.
    #[arg(long)]
    param: String,
    /// Comma-separated weights.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(['x', 'X']).ok_or("expected ROWSxCOLS")?;
    let x = x.trim().parse().map_err(|_| format!("bad row count `{x}`"))?;
    let y = y.trim().parse().map_err(|_| format!("bad column count `{y}`"))?;
    Ok((x, y))
}

/// Process exit status for a failure.
#[derive(Debug, Clone, Copy)]
enum Failure {
    Usage = 2,
    Data = 3,
    Numeric = 4,
}

fn classify(err: &anyhow::Error) -> Failure {
    if let Some(f) = err.downcast_ref::<Tagged>() {
        return f.0;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonFinite(_) => Failure::Numeric,
                Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage,
                _ => Failure::Data,
            };
        }
    }
    Failure::Data
}

/// An error carrying its exit status explicitly.
#[derive(Debug)]
struct Tagged(Failure, String);

impl std::fmt::Display for Tagged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Tagged {}

fn fail(kind: Failure, msg: impl Into<String>) -> anyhow::Error {
    Tagged(kind, msg.into()).into()
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::parse(&text).map_err(|e| fail(Failure::Usage, format!("in config {}: {e}", p.display())))
        }
    }
}

fn load_manifest(path: &Path) -> anyhow::Result<Manifest> {
    let m = Manifest::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
    if m.entries.is_empty() {
        bail!(fail(Failure::Data, format!("manifest {} lists no files", path.display())));
    }
    Ok(m)
}

/// Training corpus plus the small probe set logged every iteration: the val
/// split when present, otherwise the first few training maps.
fn training_data(m: &Manifest) -> anyhow::Result<(Vec<FluenceGrid>, Vec<FluenceGrid>)> {
    let paths = m.training_paths();
    if paths.is_empty() {
        bail!(fail(Failure::Data, "manifest has no training files"));
    }
    let corpus = read_corpus(&paths)?;
    let probe = if m.has_split(Split::Val) {
        read_corpus(&m.paths(Some(Split::Val)))?
    } else {
        corpus.iter().take(PROBE_SIZE).cloned().collect()
    };
    Ok((corpus, probe))
}

fn run_training(cfg: &RunConfig, corpus: &[FluenceGrid], probe: &[FluenceGrid]) -> anyhow::Result<TrainReport> {
    Ok(train(&cfg.train, &cfg.env, corpus, probe, |_| {})?)
}

fn aborted(reason: &str) -> anyhow::Error {
    fail(Failure::Numeric, format!("training aborted: {reason}"))
}

fn cmd_gen(a: GenArgs) -> anyhow::Result<()> {
    if a.count == 0 {
        bail!(fail(Failure::Usage, "--count must be at least 1"));
    }
    let cfg = SynthConfig {
        shape: a.shape,
        hard: a.hard,
        seed: a.seed.seed.unwrap_or(0),
        ..SynthConfig::default()
    };
    cfg.validate().map_err(|e| fail(Failure::Usage, e.to_string()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = a.count.to_string().len().max(4);
    let mut manifest = Manifest::default();
    for i in 0..a.count {
        let grid = gen_fluence(&cfg, &mut rng)?;
        let name = format!("fluence_{i:0width$}.txt");
        write_fluence(&a.out.join(&name), &grid)?;
        manifest.entries.push(ManifestEntry {
            path: PathBuf::from(name),
            split: None,
        });
    }
    let path = a.out.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_text()).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed.seed {
        cfg.train.seed = seed;
    }
    let manifest = load_manifest(&a.corpus)?;
    let (corpus, probe) = training_data(&manifest)?;
    info!("training on {} maps for {} iterations", corpus.len(), cfg.train.iterations);
    let report = run_training(&cfg, &corpus, &probe)?;
    // an aborted run still leaves the last finite parameters behind
    Checkpoint {
        params: report.params,
        env: cfg.env,
    }
    .save(&a.out)?;
    write_metrics_csv(&a.metrics, &report.metrics)?;
    match report.aborted {
        Some(reason) => Err(aborted(&reason)),
        None => Ok(()),
    }
}

fn cmd_sequence(a: SequenceArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let target = read_fluence(&a.fluence)?;
    let k = a.k.unwrap_or(ckpt.env.control_points);
    if k == 0 {
        bail!(fail(Failure::Usage, "--k must be at least 1"));
    }
    let plan = sequence_with_alpha(&target, &ckpt.params, &ckpt.env, k, a.alpha)?;
    write_plan(&a.out, &plan)?;
    let err = normalized_error(&target, &reconstruct(&plan)?)?;
    println!("mnse={err}");
    Ok(())
}

fn plan_error(target: &FluenceGrid, plan: &PlanSequence) -> anyhow::Result<f64> {
    Ok(normalized_error(target, &reconstruct(plan)?)?)
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&a.corpus)?;
    let ckpt = a.ckpt.as_deref().map(Checkpoint::load).transpose()?;
    let env = ckpt.as_ref().map(|c| c.env.clone()).unwrap_or_default();
    let k = a.k.unwrap_or(env.control_points);
    if k == 0 {
        bail!(fail(Failure::Usage, "--k must be at least 1"));
    }
    let run_baseline = a.baseline || ckpt.is_none();

    let mut rows: Vec<(String, Option<f64>, Option<f64>, f64)> = Vec::new();
    for path in manifest.eval_paths() {
        let target = read_fluence(path)?;
        let rls_plan = ckpt
            .as_ref()
            .map(|c| sequence_with_alpha(&target, &c.params, &c.env, k, a.alpha))
            .transpose()?;
        let base_plan = run_baseline
            .then(|| sweep_sequencer(&target, k, env.mu_range, env.max_step))
            .transpose()?;
        let rls = rls_plan.as_ref().map(|p| plan_error(&target, p)).transpose()?;
        let base = base_plan.as_ref().map(|p| plan_error(&target, p)).transpose()?;
        let speed_plan = rls_plan.as_ref().or(base_plan.as_ref()).expect("at least one plan");
        let delta = leaf_speed_stats(speed_plan)?.mean_abs_delta;
        rows.push((path.display().to_string(), rls, base, delta));
    }

    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    w.write_record(["file", "mnse_rls", "mnse_baseline", "mean_abs_delta"])?;
    for (file, rls, base, delta) in &rows {
        w.write_record([file.clone(), opt_field(*rls), opt_field(*base), delta.to_string()])?;
    }
    let mean_rls = mean(rows.iter().filter_map(|r| r.1));
    let mean_base = mean(rows.iter().filter_map(|r| r.2));
    let mean_delta = mean(rows.iter().map(|r| r.3));
    w.write_record(["mean".to_string(), opt_field(mean_rls), opt_field(mean_base), opt_field(mean_delta)])?;
    w.flush()?;
    if let Some(v) = mean_rls {
        println!("mnse_rls={v}");
    }
    if let Some(v) = mean_base {
        println!("mnse_baseline={v}");
    }
    Ok(())
}

fn weight_index(param: &str) -> Option<usize> {
    let i: usize = param.strip_prefix("lambda")?.parse().ok()?;
    (1..=5).contains(&i).then(|| i - 1)
}

fn cmd_ablate(a: AblateArgs) -> anyhow::Result<()> {
    let idx = weight_index(&a.param)
        .ok_or_else(|| fail(Failure::Usage, format!("unknown param `{}`; expected lambda1..lambda5", a.param)))?;
    let mut base = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed.seed {
        base.train.seed = seed;
    }
    let manifest = load_manifest(&a.corpus)?;
    let (corpus, probe) = training_data(&manifest)?;
    let eval = read_corpus(&manifest.eval_paths())?;

    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    w.write_record(["param", "value", "mnse"])?;
    for &v in &a.values {
        let mut cfg = base.clone();
        cfg.env.rewards.weights.0[idx] = v;
        cfg.validate().map_err(|e| fail(Failure::Usage, format!("{}={v}: {e}", a.param)))?;
        info!("{} = {v}", a.param);
        let report = run_training(&cfg, &corpus, &probe)?;
        if let Some(reason) = report.aborted {
            return Err(aborted(&reason));
        }
        let params = report.params;
        let k = cfg.env.control_points;
        let recon = eval
            .iter()
            .map(|f| reconstruct(&sequence_with_alpha(f, &params, &cfg.env, k, cfg.ridge_alpha)?))
            .collect::<rls_core::Result<Vec<_>>>()?;
        let score = mnse(eval.iter().zip(&recon))?;
        w.write_record([a.param.clone(), v.to_string(), score.to_string()])?;
        w.flush()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(fail(Failure::Usage, "--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("configuring worker pool: {e}"))?;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Sequence(a) => cmd_sequence(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}
