//! `rmon`: simulate, train, calibrate, monitor and evaluate from the shell.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use rollout_monitor::ace::{fit_ace_ranges, AceConfig};
use rollout_monitor::aggregate::window_sum;
use rollout_monitor::calibrate::{
    calibrate, Grid, ProfileFile, ProfileTarget, SchemeChoice, PROFILE_SCHEMA_VERSION,
};
use rollout_monitor::config::RunConfig;
use rollout_monitor::detect::{detect_rollout, CombineMode, MonitorSpec};
use rollout_monitor::eval::{report_csv, score_set, sweep, SweepConfig};
use rollout_monitor::rnd::{init_rnd_with, load_checkpoint, save_checkpoint, train_rnd, RndArch};
use rollout_monitor::stamp::{config_hash, Stamp, TOOL_VERSION};
use rollout_monitor::synth::generate_dataset;
use rollout_monitor::trace::{
    load_rollouts, save_rollouts, split_calibration, Distribution, Outcome, RolloutSet,
    TraceHeader, TRACE_SCHEMA_VERSION,
};

#[derive(Parser)]
#[command(name = "rmon", version, about = "Runtime failure prediction for action-chunk policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic rollouts from a run config.
    Simulate(SimulateArgs),
    /// Train the RND predictor on the embeddings of successful ID rollouts.
    TrainRnd(TrainArgs),
    /// Calibrate threshold profiles on successful ID rollouts.
    Calibrate(CalibrateArgs),
    /// Run the detector over a trace file, one JSON record per rollout.
    Monitor(MonitorArgs),
    /// Sweep schemes, windows and quantiles and write a CSV report.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Run config (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_env()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also split off `calibration_size` successful ID rollouts into this file.
    #[arg(long)]
    calib_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    width_scale: Option<f64>,
    /// RND output dimension.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScoreArg {
    Obs,
    Act,
    Both,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    rnd: PathBuf,
    /// constant, band, tvar (tvar-gaussian) or tvar-quantile.
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    w_obs: Option<usize>,
    #[arg(long)]
    w_act: Option<usize>,
    /// Which score to calibrate; `both` writes `<out>.obs.json` and `<out>.act.json`.
    #[arg(long, value_enum, default_value_t = ScoreArg::Both)]
    score: ScoreArg,
    #[arg(long)]
    ace_alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    rnd: PathBuf,
    #[arg(long)]
    profile_obs: PathBuf,
    #[arg(long)]
    profile_act: PathBuf,
    #[arg(long, default_value = "and")]
    mode: String,
    /// Write records here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    rnd: PathBuf,
    /// Comma-separated scheme names.
    #[arg(long)]
    schemes: Option<String>,
    /// Window sizes: `a..b` (inclusive) or a comma-separated list.
    #[arg(long)]
    w: Option<String>,
    /// Comma-separated quantile levels.
    #[arg(long)]
    deltas: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    ace_alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::TrainRnd(a) => train(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Monitor(a) => monitor(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<rollout_monitor::Error>()
                .map_or("cli", rollout_monitor::Error::kind);
            eprintln!("{}", json!({ "level": "error", "kind": kind, "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}

fn warn(kind: &str, detail: serde_json::Value) {
    eprintln!("{}", json!({ "level": "warning", "kind": kind, "detail": detail }));
}

fn header(provenance: String, hash: &str, seed: u64) -> TraceHeader {
    TraceHeader {
        schema_version: TRACE_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        provenance,
        config_hash: hash.to_string(),
        seed,
    }
}

fn stamped(mut set: RolloutSet, provenance: &str, hash: &str, seed: u64) -> RolloutSet {
    set.header = Some(header(provenance.to_string(), hash, seed));
    set
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.apply_env()?;
    let seeds = cfg.seeds();
    let hash = cfg.hash();
    let set = generate_dataset(&cfg.scenario, &cfg.counts, seeds.simulate)?;
    match &a.calib_out {
        Some(calib_path) => {
            let (calib, rest) = split_calibration(&set, cfg.calibration_size, seeds.split)?;
            save_rollouts(&stamped(calib, "simulate: calibration split", &hash, cfg.seed), calib_path)?;
            save_rollouts(&stamped(rest, "simulate: held-out split", &hash, cfg.seed), &a.out)?;
        }
        None => save_rollouts(&stamped(set, "simulate", &hash, cfg.seed), &a.out)?,
    }
    Ok(())
}

fn success_id(set: &RolloutSet) -> RolloutSet {
    set.filter(Outcome::Success, Distribution::Id)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let arch = RndArch {
        width_scale: a.width_scale.unwrap_or(cfg.rnd.width_scale),
        out_dim: a.m.unwrap_or(cfg.rnd.out_dim),
        ..cfg.rnd
    };
    let mut train_cfg = cfg.train.clone();
    if let Some(e) = a.epochs {
        train_cfg.epochs = e;
    }
    let seeds = cfg.seeds();
    train_cfg.seed = seeds.train;

    let set = success_id(&load_rollouts(&a.traces)?);
    if set.is_empty() {
        bail!(rollout_monitor::Error::Empty("successful ID rollouts in training traces"));
    }
    let embeddings: Vec<Vec<f64>> = set
        .rollouts
        .iter()
        .flat_map(|r| r.steps.iter().map(|s| s.embedding.clone()))
        .collect();
    let model = init_rnd_with(set.meta.embed_dim, arch, seeds.rnd_init)?;
    let (model, history) = train_rnd(&model, &embeddings, &train_cfg)?;
    let hash = config_hash(&(&arch, &train_cfg, cfg.seed, set.ids().collect::<Vec<_>>()));
    save_checkpoint(&model, &Stamp::new(hash, cfg.seed), &a.out)?;
    if let Some(last) = history.epochs.last() {
        eprintln!(
            "{}",
            json!({
                "level": "info",
                "embeddings": embeddings.len(),
                "initial_train_loss": history.initial.map(|l| l.train),
                "final_train_loss": last.train,
                "final_val_loss": last.val,
            })
        );
    }
    Ok(())
}

fn with_suffix(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}.json"),
    };
    path.with_file_name(name)
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let w_obs = a.w_obs.unwrap_or(cfg.windows.obs);
    let w_act = a.w_act.unwrap_or(cfg.windows.act);
    let alpha = a.ace_alpha.unwrap_or(cfg.ace_alpha);
    let choice = SchemeChoice::parse(&a.scheme, cfg.seeds().band_split)?;

    let calib = success_id(&load_rollouts(&a.traces)?);
    if calib.is_empty() {
        bail!(rollout_monitor::Error::Empty("successful ID rollouts in calibration traces"));
    }
    let (rnd, _) = load_checkpoint(&a.rnd)?;
    let ace = fit_ace_ranges(&calib, alpha)?;
    let raw = score_set(&calib, &rnd, &ace)?;
    let grid = Grid::new(calib.meta.stride, calib.meta.t_max)?;
    let hash = config_hash(&(
        &a.scheme,
        a.delta,
        w_obs,
        w_act,
        alpha,
        rnd.target.checksum(),
        calib.ids().collect::<Vec<_>>(),
    ));
    let stamp = Stamp::new(hash, cfg.seed);

    let build = |target: ProfileTarget| -> Result<ProfileFile> {
        let w = match target {
            ProfileTarget::Obs => w_obs,
            ProfileTarget::Act => w_act,
        };
        let series = raw
            .iter()
            .map(|r| {
                window_sum(
                    match target {
                        ProfileTarget::Obs => &r.rnd,
                        ProfileTarget::Act => &r.ace,
                    },
                    w,
                )
            })
            .collect::<rollout_monitor::Result<Vec<_>>>()?;
        Ok(ProfileFile {
            schema_version: PROFILE_SCHEMA_VERSION,
            stamp: stamp.clone(),
            target,
            window: w,
            choice,
            profile: calibrate(&series, choice, a.delta, grid)?,
            ace: (target == ProfileTarget::Act).then(|| ace.clone()),
            rnd_checksum: (target == ProfileTarget::Obs).then(|| rnd.target.checksum()),
        })
    };
    match a.score {
        ScoreArg::Obs => build(ProfileTarget::Obs)?.save(&a.out)?,
        ScoreArg::Act => build(ProfileTarget::Act)?.save(&a.out)?,
        ScoreArg::Both => {
            build(ProfileTarget::Obs)?.save(with_suffix(&a.out, "obs"))?;
            build(ProfileTarget::Act)?.save(with_suffix(&a.out, "act"))?;
        }
    }
    Ok(())
}

fn monitor(a: MonitorArgs) -> Result<()> {
    let mode = CombineMode::parse(&a.mode)?;
    let set = load_rollouts(&a.traces)?;
    let (rnd, _) = load_checkpoint(&a.rnd)?;
    let obs = ProfileFile::load(&a.profile_obs)?;
    let act = ProfileFile::load(&a.profile_act)?;
    if obs.target != ProfileTarget::Obs || act.target != ProfileTarget::Act {
        bail!("--profile-obs and --profile-act must hold obs and act profiles respectively");
    }
    if obs.rnd_checksum.as_deref() != Some(rnd.target.checksum().as_str()) {
        warn(
            "checkpoint_mismatch",
            json!("observation profile was calibrated with a different RND checkpoint"),
        );
    }
    let ace: AceConfig = act
        .ace
        .clone()
        .context("action profile carries no ACE binning config")?;
    let spec = MonitorSpec {
        rnd: &rnd,
        ace: &ace,
        obs_profile: &obs.profile,
        act_profile: &act.profile,
        w_obs: obs.window,
        w_act: act.window,
        mode,
    };
    let hash = config_hash(&(&obs.stamp.config_hash, &act.stamp.config_hash, mode));
    let mut out: Box<dyn io::Write> = match &a.out {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    };
    writeln!(
        out,
        "{}",
        json!({
            "schema_version": 1,
            "tool_version": TOOL_VERSION,
            "config_hash": hash,
            "seed": obs.stamp.seed,
            "mode": mode,
        })
    )?;
    for r in &set.rollouts {
        let d = detect_rollout(&spec, r)?.combined;
        writeln!(
            out,
            "{}",
            json!({
                "id": d.rollout_id,
                "flagged": d.flagged,
                "t_star": d.detection_time,
                "normalized_dt": d.normalized_dt,
            })
        )?;
    }
    out.flush()?;
    Ok(())
}

fn parse_windows(s: &str) -> Result<Vec<usize>> {
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().context("window range start")?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().context("window range end")?;
        if lo == 0 || lo > hi {
            bail!("window range {s:?} must satisfy 1 <= a <= b");
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("window {t:?}")))
        .collect()
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| anyhow::anyhow!("bad {what} {t:?}")))
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = &a.schemes {
        cfg.schemes = parse_list(s, "scheme")?;
    }
    if let Some(w) = &a.w {
        cfg.windows.sweep = parse_windows(w)?;
    }
    if let Some(d) = &a.deltas {
        cfg.deltas = parse_list(d, "delta")?;
    }
    if let Some(m) = &a.mode {
        cfg.mode = CombineMode::parse(m)?;
    }
    if let Some(alpha) = a.ace_alpha {
        cfg.ace_alpha = alpha;
    }
    cfg.validate()?;

    let dataset = load_rollouts(&a.traces)?;
    let calib = success_id(&load_rollouts(&a.calib)?);
    if calib.is_empty() {
        bail!(rollout_monitor::Error::Empty("successful ID rollouts in calibration traces"));
    }
    let calib_ids: HashSet<&str> = calib.ids().collect();
    let overlap: Vec<&str> = dataset.ids().filter(|id| calib_ids.contains(id)).collect();
    if !overlap.is_empty() {
        warn(
            "calibration_overlap",
            json!({ "count": overlap.len(), "ids": overlap }),
        );
    }
    let (rnd, _) = load_checkpoint(&a.rnd)?;
    let ace = fit_ace_ranges(&calib, cfg.ace_alpha)?;
    let sweep_cfg = SweepConfig {
        schemes: cfg.scheme_choices()?,
        windows: cfg.windows.sweep.clone(),
        deltas: cfg.deltas.clone(),
        mode: cfg.mode,
    };
    let report = sweep(&dataset, &calib, &rnd, &ace, &sweep_cfg)?;
    let hash = config_hash(&(
        &sweep_cfg,
        cfg.ace_alpha,
        rnd.target.checksum(),
        dataset.ids().collect::<Vec<_>>(),
        calib.ids().collect::<Vec<_>>(),
    ));
    let csv = report_csv(&report, &Stamp::new(hash, cfg.seed));
    fs::write(&a.out, csv).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
