//! Command-line front end: dataset generation, training, evaluation,
//! sweeps, and report rendering.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use ddpred::baselines::{linear_ar_fit, MethodKind, Tmlp, TrainedMethod};
use ddpred::chansim::{Descriptor, SimConfig};
use ddpred::dataset::{load_dataset, save_dataset, DatasetSplit};
use ddpred::eval::{
    emit_report, evaluate_method, parse_report_csv, train_model, LrSchedule, OptimizerKind,
    SweepConfig, SweepVariable, TrainConfig,
};
use ddpred::model::{pretrain_then_finetune, Predictor, PredictorConfig};
use ddpred::{Error, Result};

#[derive(Parser)]
#[command(name = "ddpred", version, about = "Delay-Doppler channel prediction lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mixed-velocity dataset file.
    Gen(GenArgs),
    /// Train a predictor on a dataset file.
    Train(TrainArgs),
    /// Evaluate a method on the test split of a dataset file.
    Eval(EvalArgs),
    /// Run a velocity or horizon sweep and emit CSV + SVG reports.
    Sweep(SweepArgs),
    /// Re-render the SVG plot from a previously written sweep CSV.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct CommonSimArgs {
    /// Plain `key = value` config file; CLI flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    n_p: Option<usize>,
    #[arg(long)]
    n_f: Option<usize>,
    /// Comma-separated velocity grid in km/h.
    #[arg(long)]
    velocities: Option<String>,
    #[arg(long)]
    frame_spacing_s: Option<f64>,
    #[arg(long)]
    channel_len: Option<usize>,
    #[arg(long)]
    nonzero_taps: Option<usize>,
    #[arg(long)]
    carrier_freq_hz: Option<f64>,
    /// Std of complex observation noise added to history frames only.
    #[arg(long)]
    history_noise_std: Option<f64>,
    /// Per-realization history SNR range in dB as "min,max", or "none" to disable.
    #[arg(long)]
    history_snr_db: Option<String>,
    /// Discrete per-realization history SNR levels in dB (comma-separated),
    /// or "none". Overrides --history-snr-db when set.
    #[arg(long)]
    history_snr_levels: Option<String>,
    /// Comma-separated descriptor labels (max_doppler_hz, velocity_kmh, snr_db).
    #[arg(long)]
    descriptors: Option<String>,
}

#[derive(clap::Args)]
struct GenArgs {
    #[command(flatten)]
    sim: CommonSimArgs,
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct CommonTrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// constant | cosine
    #[arg(long)]
    lr_schedule: Option<String>,
    /// adam_moments | sgd
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    mlp_ratio: Option<f64>,
    #[arg(long)]
    freeze_core: Option<bool>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file produced by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// physics | ablation | tmlp
    #[arg(long)]
    method: String,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional second dataset for a fine-tuning phase after pretraining.
    #[arg(long)]
    finetune_data: Option<PathBuf>,
    #[command(flatten)]
    train: CommonTrainArgs,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// physics | ablation | tmlp | linear_ar | persistence
    #[arg(long)]
    method: String,
    /// Required for physics, ablation, and tmlp.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score only the first N predicted frames.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    ar_order: Option<usize>,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[command(flatten)]
    sim: CommonSimArgs,
    /// velocity | horizon
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated method tags.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated horizons for the horizon sweep.
    #[arg(long)]
    horizons: Option<String>,
    #[arg(long)]
    fixed_velocity: Option<f64>,
    #[arg(long)]
    retrain_per_horizon: Option<bool>,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long)]
    ar_order: Option<usize>,
    #[command(flatten)]
    train: CommonTrainArgs,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// CSV written by a previous `sweep` run.
    #[arg(long)]
    csv: PathBuf,
    /// velocity | horizon
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out_dir: PathBuf,
}

/// `key = value` lines; `#` starts a comment.
fn load_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    fn new(config: Option<&PathBuf>) -> Result<Self> {
        let file = match config {
            Some(p) => load_kv(p)?,
            None => BTreeMap::new(),
        };
        Ok(Resolver { file, resolved: BTreeMap::new() })
    }

    /// Flag beats config file beats default; records the winner for the manifest.
    fn get<T: FromStr + ToString + Clone>(
        &mut self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Parse(format!("config key {key}: cannot parse {s:?}")))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn manifest(&self) -> String {
        let mut out = format!("version = {}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Parse(format!("bad {what} entry: {p:?}"))))
        .collect()
}

fn default_velocities() -> String {
    (2..=10).map(|k| (50 * k).to_string()).collect::<Vec<_>>().join(",")
}

fn resolve_sweep_config(
    r: &mut Resolver,
    sim: CommonSimArgs,
    train: Option<CommonTrainArgs>,
) -> Result<SweepConfig> {
    let mut sc = SweepConfig::default();
    sc.train_realizations = r.get(sim.realizations, "realizations", sc.train_realizations)?;
    sc.n_p = r.get(sim.n_p, "n_p", sc.n_p)?;
    sc.n_f = r.get(sim.n_f, "n_f", sc.n_f)?;
    sc.velocities_kmh =
        parse_list(&r.get(sim.velocities, "velocities", default_velocities())?, "velocity")?;
    sc.history_noise_std =
        r.get(sim.history_noise_std, "history_noise_std", sc.history_noise_std)?;
    let snr_default = match sc.history_snr_db_range {
        Some((lo, hi)) => format!("{},{}", lo, hi),
        None => "none".into(),
    };
    let snr_raw = r.get(sim.history_snr_db, "history_snr_db", snr_default)?;
    sc.history_snr_db_range = if snr_raw.trim().eq_ignore_ascii_case("none") {
        None
    } else {
        let range = parse_list(&snr_raw, "history_snr_db")?;
        if range.len() != 2 {
            return Err(Error::Config(format!(
                "history_snr_db expects \"min,max\" or \"none\", got {:?}",
                snr_raw
            )));
        }
        Some((range[0], range[1]))
    };
    let levels_raw = r.get(sim.history_snr_levels, "history_snr_levels", "none".to_string())?;
    sc.history_snr_db_levels = if levels_raw.trim().eq_ignore_ascii_case("none") {
        None
    } else {
        Some(parse_list(&levels_raw, "history_snr_levels")?)
    };
    sc.sim = SimConfig {
        frame_spacing_s: r.get(sim.frame_spacing_s, "frame_spacing_s", sc.sim.frame_spacing_s)?,
        channel_len: r.get(sim.channel_len, "channel_len", sc.sim.channel_len)?,
        nonzero_taps: r.get(sim.nonzero_taps, "nonzero_taps", sc.sim.nonzero_taps)?,
        carrier_freq_hz: r.get(sim.carrier_freq_hz, "carrier_freq_hz", sc.sim.carrier_freq_hz)?,
        ..sc.sim
    };
    let desc = r.get(sim.descriptors, "descriptors", "max_doppler_hz,snr_db".to_string())?;
    sc.descriptors = desc
        .split(',')
        .map(|d| Descriptor::parse(d.trim()))
        .collect::<Result<_>>()?;
    if let Some(t) = train {
        sc.train = resolve_train_config(r, &t, 1)?;
        sc.model = resolve_model_config(r, &t)?;
    }
    Ok(sc)
}

fn resolve_train_config(r: &mut Resolver, t: &CommonTrainArgs, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let schedule = match r.get(t.lr_schedule.clone(), "lr_schedule", "cosine".to_string())?.as_str()
    {
        "constant" => LrSchedule::Constant,
        "cosine" => LrSchedule::Cosine,
        other => return Err(Error::Parse(format!("unknown lr schedule: {other}"))),
    };
    let optimizer = match r.get(t.optimizer.clone(), "optimizer", "adam_moments".to_string())?.as_str()
    {
        "adam_moments" => OptimizerKind::AdamMoments,
        "sgd" => OptimizerKind::Sgd,
        other => return Err(Error::Parse(format!("unknown optimizer: {other}"))),
    };
    Ok(TrainConfig {
        epochs: r.get(t.epochs, "epochs", d.epochs)?,
        batch_size: r.get(t.batch_size, "batch_size", d.batch_size)?,
        lr: r.get(t.lr, "lr", d.lr)?,
        lr_schedule: schedule,
        optimizer,
        early_stop_patience: r.get(t.patience, "patience", d.early_stop_patience)?,
        seed,
    })
}

fn resolve_model_config(r: &mut Resolver, t: &CommonTrainArgs) -> Result<PredictorConfig> {
    let d = PredictorConfig::default();
    Ok(PredictorConfig {
        d_model: r.get(t.d_model, "d_model", d.d_model)?,
        depth: r.get(t.depth, "depth", d.depth)?,
        heads: r.get(t.heads, "heads", d.heads)?,
        mlp_ratio: r.get(t.mlp_ratio, "mlp_ratio", d.mlp_ratio)?,
        freeze_core: r.get(t.freeze_core, "freeze_core", d.freeze_core)?,
        ..d
    })
}

fn write_manifest(r: &Resolver, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.manifest")), r.manifest())?;
    Ok(())
}

/// Model dimensions implied by a dataset's sample shapes.
fn data_dims(ds: &DatasetSplit) -> Result<(usize, usize, usize, usize)> {
    let s = ds
        .train
        .first()
        .ok_or_else(|| Error::Config("dataset has an empty training split".into()))?;
    Ok((s.history.rows() / 2, s.history.cols(), s.target.cols(), s.physics.rows()))
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut r = Resolver::new(args.sim.config.as_ref())?;
    let seed = r.get(args.sim.seed, "seed", 1u64)?;
    let sc = resolve_sweep_config(&mut r, args.sim, None)?;
    let ds = ddpred::eval::build_mixed_dataset(&sc, sc.n_f, seed)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    save_dataset(&ds, &args.out)?;
    let dir = args.out.parent().unwrap_or(Path::new("."));
    let stem = args.out.file_stem().unwrap_or_default().to_string_lossy().to_string();
    write_manifest(&r, dir, &stem)?;
    println!(
        "wrote {} ({} train / {} val / {} test samples)",
        args.out.display(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut r = Resolver::new(args.config.as_ref())?;
    let seed = r.get(args.seed, "seed", 1u64)?;
    let method = MethodKind::parse(&args.method)?;
    let ds = load_dataset(&args.data)?;
    let (l, n_p, n_f, k_d) = data_dims(&ds)?;
    let tc = resolve_train_config(&mut r, &args.train, seed)?;
    let model_cfg = resolve_model_config(&mut r, &args.train)?;

    match method {
        MethodKind::Physics | MethodKind::Ablation => {
            let cfg = PredictorConfig {
                l,
                n_p,
                n_f,
                k_d,
                physics_enabled: method == MethodKind::Physics,
                ..model_cfg
            };
            let mut p = Predictor::new(cfg, seed)?;
            if args.finetune_data.is_none() {
                p.set_frozen(p.cfg.freeze_core);
            }
            let log = if let Some(ft) = &args.finetune_data {
                let target = load_dataset(ft)?;
                let (_, log2) = pretrain_then_finetune(&mut p, &ds, &target, &tc, &tc)?;
                log2
            } else {
                train_model(&mut p, &ds, &tc)?
            };
            p.save_checkpoint(&args.out)?;
            for (i, (tl, vn)) in log.train_loss.iter().zip(&log.val_nmse).enumerate() {
                println!("epoch {i}: train_mse {tl:.6} val_nmse {vn:.6}");
            }
            println!(
                "trained {} for {} epochs; best val NMSE {:.6} at epoch {}",
                method.tag(),
                log.train_loss.len(),
                log.best_val_nmse,
                log.best_epoch
            );
        }
        MethodKind::Tmlp => {
            let mut m = Tmlp::new(2 * l, n_p, n_f, seed);
            let log = train_model(&mut m, &ds, &tc)?;
            m.save_checkpoint(&args.out)?;
            println!(
                "trained tmlp for {} epochs; best val NMSE {:.6} at epoch {}",
                log.train_loss.len(),
                log.best_val_nmse,
                log.best_epoch
            );
        }
        MethodKind::LinearAr | MethodKind::Persistence => {
            return Err(Error::Config(format!(
                "{} has no trainable checkpoint; use `eval` directly",
                method.tag()
            )));
        }
    }
    let dir = args.out.parent().unwrap_or(Path::new("."));
    let stem = args.out.file_stem().unwrap_or_default().to_string_lossy().to_string();
    write_manifest(&r, dir, &stem)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let method = MethodKind::parse(&args.method)?;
    let ds = load_dataset(&args.data)?;
    let need_ckpt = || {
        args.checkpoint
            .clone()
            .ok_or_else(|| Error::Config(format!("--checkpoint is required for {}", method.tag())))
    };
    let trained = match method {
        MethodKind::Physics => TrainedMethod::Physics(Predictor::load_checkpoint(&need_ckpt()?)?),
        MethodKind::Ablation => TrainedMethod::Ablation(Predictor::load_checkpoint(&need_ckpt()?)?),
        MethodKind::Tmlp => TrainedMethod::Tmlp(Tmlp::load_checkpoint(&need_ckpt()?)?),
        MethodKind::LinearAr => {
            TrainedMethod::LinearAr(linear_ar_fit(&ds.train, args.ar_order.unwrap_or(4), {
                let (_, _, n_f, _) = data_dims(&ds)?;
                n_f
            })?)
        }
        MethodKind::Persistence => TrainedMethod::Persistence,
    };
    let (nmse, excluded) = evaluate_method(&trained, &ds.test, &ds.stats, args.horizon)?;
    println!(
        "method={} test_samples={} excluded={} nmse={}",
        method.tag(),
        ds.test.len(),
        excluded,
        nmse
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut r = Resolver::new(args.sim.config.as_ref())?;
    let kind = SweepVariable::parse(&args.kind)?;
    let seeds = r.get(args.seeds, "seeds", "1,2,3".to_string())?;
    let methods = r.get(args.methods, "methods", "physics,ablation,persistence".to_string())?;
    let horizons = r.get(args.horizons, "horizons", "1,2,3,4,5,6,7,8,9,10".to_string())?;
    let fixed_velocity = r.get(args.fixed_velocity, "fixed_velocity", 300.0)?;
    let retrain = r.get(args.retrain_per_horizon, "retrain_per_horizon", false)?;
    let test_samples = r.get(args.test_samples, "test_samples", 150usize)?;
    let ar_order = r.get(args.ar_order, "ar_order", 4usize)?;

    let mut sc = resolve_sweep_config(&mut r, args.sim, Some(args.train))?;
    sc.seeds = parse_list(&seeds, "seed")?;
    sc.methods = methods
        .split(',')
        .map(|m| MethodKind::parse(m.trim()))
        .collect::<Result<_>>()?;
    sc.horizons = parse_list(&horizons, "horizon")?;
    sc.fixed_velocity_kmh = fixed_velocity;
    sc.retrain_per_horizon = retrain;
    sc.test_samples = test_samples;
    sc.ar_order = ar_order;

    let (reports, _) = match kind {
        SweepVariable::VelocityKmh => ddpred::eval::run_velocity_sweep(&sc)?,
        SweepVariable::Horizon => ddpred::eval::run_horizon_sweep(&sc)?,
    };
    let (csv, svg) = emit_report(&reports, &args.out_dir)?;
    write_manifest(&r, &args.out_dir, &format!("sweep_{}", kind.tag()))?;
    println!("wrote {} and {}", csv.display(), svg.display());
    for rep in &reports {
        for p in &rep.points {
            println!("{} x={} nmse={}", rep.method, p.x, p.nmse_mean);
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let kind = SweepVariable::parse(&args.kind)?;
    let text = fs::read_to_string(&args.csv)?;
    let reports = parse_report_csv(&text, kind)?;
    let (csv, svg) = emit_report(&reports, &args.out_dir)?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    if let Err(e) = out {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
