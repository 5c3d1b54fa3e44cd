//! Command-line front end. Every subcommand reads JSON configs, writes its
//! artifacts under an output directory, and maps errors to stable exit codes:
//! 0 on success, 1 on a runtime failure, 2 on a configuration error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::diagnose;
use crate::envs::{read_frames, EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::eval::{
    cross_play, predator_prey_eval, scalability_sweep, self_play_game, win_rate_slope, write_csv, FrameWriter,
    MatchupResult, WeightRecorder,
};
use crate::training::{write_metrics, Checkpoint, Trainer, TrainerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const PROVENANCE_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "cmfq", version, about = "Causal mean-field Q-learning on gridworld battles")]
pub struct Cli {
    /// Root under which runs without an explicit --out are written.
    #[arg(long, global = true, env = "CMFQ_OUTPUT_ROOT", default_value = "runs")]
    pub output_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Self-play training; writes metrics.csv, checkpoints and provenance.json.
    Train(TrainArgs),
    /// Cross-play (battle) or predator-prey evaluation of two checkpoints.
    Eval(ConfigArgs),
    /// Candidates against a fixed opponent across team sizes.
    Sweep(ConfigArgs),
    /// Remainder, cancellation and reduction checks on a checkpoint.
    Diagnose(DiagnoseArgs),
    /// Per-step neighbour weights from greedy self-play, as JSON lines.
    ExportWeights(ExportArgs),
    /// Prints a JSON-lines frame trace as ASCII maps.
    RenderTrace(RenderArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub trainer: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the trainer seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// After training, write trace.jsonl of one greedy self-play game.
    #[arg(long)]
    pub trace: bool,
    /// After training, write weights.jsonl for one greedy self-play game.
    #[arg(long)]
    pub export_weights: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Battle environment used to roll out the checkpoint for samples.
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub games: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Print only this frame index.
    #[arg(long)]
    pub frame: Option<usize>,
}

/// `eval` config. The environment kind picks the protocol: battle runs
/// cross-play of A against B, predator-prey runs A's predators against B's
/// prey at each multiplier in `scales`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub env: PathBuf,
    pub checkpoint_a: PathBuf,
    pub checkpoint_b: PathBuf,
    #[serde(default = "default_games")]
    pub games: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scales")]
    pub scales: Vec<usize>,
}

/// `sweep` config: each candidate against `opponent` at every team size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub env: PathBuf,
    pub candidates: Vec<PathBuf>,
    pub opponent: PathBuf,
    pub scales: Vec<usize>,
    #[serde(default = "default_games")]
    pub games: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_games() -> usize {
    200
}

fn default_scales() -> Vec<usize> {
    vec![1]
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub code_version: String,
    pub command: String,
    pub seed: u64,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub results: Vec<MatchupResult>,
    /// Win rate per agent of team size, one entry per candidate.
    pub slopes: Vec<Option<f64>>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_env(path: &Path) -> Result<EnvConfig> {
    let env: EnvConfig = read_json(path)?;
    env.validate()?;
    Ok(env)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn out_dir(cli_root: &Path, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let dir = explicit.clone().unwrap_or_else(|| cli_root.join(name));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_configuration() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let root = &cli.output_root;
    match &cli.command {
        Command::Train(a) => cmd_train(root, a),
        Command::Eval(a) => cmd_eval(root, a),
        Command::Sweep(a) => cmd_sweep(root, a),
        Command::Diagnose(a) => cmd_diagnose(root, a),
        Command::ExportWeights(a) => cmd_export_weights(root, a),
        Command::RenderTrace(a) => cmd_render_trace(a),
    }
}

pub fn cmd_train(root: &Path, args: &TrainArgs) -> Result<i32> {
    let env = load_env(&args.env)?;
    let mut trainer_cfg: TrainerConfig = read_json(&args.trainer)?;
    if let Some(seed) = args.seed {
        trainer_cfg.seed = seed;
    }
    trainer_cfg.validate()?;
    let dir = out_dir(root, &args.out, "train")?;
    write_json(
        &dir.join("provenance.json"),
        &Provenance {
            schema_version: PROVENANCE_SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            command: "train".into(),
            seed: trainer_cfg.seed,
            env: env.clone(),
            trainer: trainer_cfg.clone(),
        },
    )?;

    let mut trainer = Trainer::new(&env, &trainer_cfg)?;
    let mut metrics = Vec::with_capacity(2 * trainer_cfg.episodes);
    for ep in 1..=trainer_cfg.episodes {
        metrics.extend(trainer.run_episode()?);
        if trainer_cfg.checkpoint_every > 0 && ep % trainer_cfg.checkpoint_every == 0 {
            trainer.checkpoint().save(&dir.join(format!("checkpoint_ep{ep:06}.json")))?;
        }
    }
    let metrics_path = dir.join("metrics.csv");
    let w = create(&metrics_path)?;
    write_metrics(w, &metrics)?;
    let ck = trainer.checkpoint();
    ck.save(&dir.join("checkpoint.json"))?;

    if args.trace {
        let path = dir.join("trace.jsonl");
        let mut fw = FrameWriter::new(create(&path)?);
        self_play_game(&ck, &env, 0, trainer_cfg.seed, &mut fw)?;
        flush(fw.into_inner(), &path)?;
    }
    if args.export_weights {
        write_weights(&ck, &env, 1, trainer_cfg.seed, &dir.join("weights.jsonl"))?;
    }
    eprintln!("trained {} episodes; artifacts in {}", trainer_cfg.episodes, dir.display());
    Ok(EXIT_OK)
}

pub fn cmd_eval(root: &Path, args: &ConfigArgs) -> Result<i32> {
    let cfg: EvalConfig = read_json(&args.config)?;
    let env = load_env(&cfg.env)?;
    let a = Checkpoint::load(&cfg.checkpoint_a)?;
    let b = Checkpoint::load(&cfg.checkpoint_b)?;
    let dir = out_dir(root, &args.out, "eval")?;
    match env.kind {
        EnvKind::Battle => {
            let mut rows = Vec::with_capacity(cfg.scales.len());
            for &k in &cfg.scales {
                if k == 0 {
                    return Err(Error::config("scales", "scale multipliers must be >= 1"));
                }
                let scaled = env.with_team_sizes([env.team_sizes[0] * k, env.team_sizes[1] * k]);
                rows.push(cross_play(&a, &b, &scaled, cfg.games, cfg.seed)?);
            }
            emit_results(&dir, &rows)?;
        }
        EnvKind::PredatorPrey => {
            let rows = predator_prey_eval(&a, &b, &env, &cfg.scales, cfg.games, cfg.seed)?;
            emit_results(&dir, &rows)?;
        }
    }
    eprintln!("results in {}", dir.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Results<'a, T> {
    schema_version: u32,
    results: &'a [T],
}

fn emit_results<T: Serialize>(dir: &Path, rows: &[T]) -> Result<()> {
    let csv_path = dir.join("results.csv");
    write_csv(create(&csv_path)?, rows)?;
    write_json(
        &dir.join("results.json"),
        &Results {
            schema_version: RESULTS_SCHEMA_VERSION,
            results: rows,
        },
    )
}

pub fn cmd_sweep(root: &Path, args: &ConfigArgs) -> Result<i32> {
    let cfg: SweepConfig = read_json(&args.config)?;
    let env = load_env(&cfg.env)?;
    if cfg.candidates.is_empty() || cfg.scales.is_empty() {
        return Err(Error::config("candidates/scales", "need at least one candidate and one scale"));
    }
    let candidates = cfg
        .candidates
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let opponent = Checkpoint::load(&cfg.opponent)?;
    let refs: Vec<&Checkpoint> = candidates.iter().collect();
    let results = scalability_sweep(&refs, &opponent, &env, &cfg.scales, cfg.games, cfg.seed)?;
    let slopes = results.chunks(cfg.scales.len()).map(win_rate_slope).collect();
    let dir = out_dir(root, &args.out, "sweep")?;
    write_csv(create(&dir.join("sweep.csv"))?, &results)?;
    write_json(
        &dir.join("sweep.json"),
        &SweepSummary {
            schema_version: RESULTS_SCHEMA_VERSION,
            results,
            slopes,
        },
    )?;
    eprintln!("results in {}", dir.display());
    Ok(EXIT_OK)
}

pub fn cmd_diagnose(root: &Path, args: &DiagnoseArgs) -> Result<i32> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let env = load_env(&args.env)?;
    if args.samples == 0 {
        return Err(Error::config("samples", "must be >= 1"));
    }
    let report = diagnose(&ck, &env, args.samples, args.margin, args.seed)?;
    let dir = out_dir(root, &args.out, "diagnose")?;
    write_json(&dir.join("diagnostics.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.passed {
        Ok(EXIT_OK)
    } else {
        eprintln!("diagnostics found invariant violations");
        Ok(EXIT_RUNTIME)
    }
}

fn write_weights(ck: &Checkpoint, env: &EnvConfig, games: usize, seed: u64, path: &Path) -> Result<usize> {
    let mut w = create(path)?;
    let mut count = 0;
    for game in 0..games {
        let mut rec = WeightRecorder {
            game,
            records: Vec::new(),
        };
        self_play_game(ck, env, game, seed, &mut rec)?;
        for r in &rec.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        count += rec.records.len();
    }
    flush(w, path)?;
    Ok(count)
}

pub fn cmd_export_weights(root: &Path, args: &ExportArgs) -> Result<i32> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let env = load_env(&args.env)?;
    ck.check_compatible(&env)?;
    let dir = out_dir(root, &args.out, "export-weights")?;
    let path = dir.join("weights.jsonl");
    let n = write_weights(&ck, &env, args.games, args.seed, &path)?;
    eprintln!("{n} records written to {}", path.display());
    Ok(EXIT_OK)
}

pub fn cmd_render_trace(args: &RenderArgs) -> Result<i32> {
    let file = File::open(&args.trace).map_err(|e| Error::io(&args.trace, e))?;
    let frames = read_frames(BufReader::new(file))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let pick: Vec<_> = match args.frame {
        Some(i) => {
            let f = frames
                .get(i)
                .ok_or_else(|| Error::config("frame", format!("trace has {} frames", frames.len())))?;
            vec![f]
        }
        None => frames.iter().collect(),
    };
    for f in pick {
        let io_err = |e| Error::io("stdout", e);
        out.write_all(f.render_ascii().as_bytes()).map_err(io_err)?;
        writeln!(out).map_err(io_err)?;
    }
    Ok(EXIT_OK)
}
