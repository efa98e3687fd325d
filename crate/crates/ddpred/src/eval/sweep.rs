//! Velocity and horizon sweep experiments over mixed-velocity datasets.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::baselines::{ablation_predictor, linear_ar_fit, MethodKind, Tmlp, TrainedMethod};
use crate::chansim::{self, derive_seed, physics_track, realization_rng, Descriptor, SimConfig};
use crate::dataset::{make_samples, split, DatasetSplit, Sample};
use crate::eval::{evaluate_method, train_model, EvalReport, ReportPoint, SweepVariable, TrainConfig};
use crate::model::{Predictor, PredictorConfig};
use crate::{Error, Result};

/// One (method, seed, x) measurement before aggregation.
#[derive(Clone, Debug)]
pub struct SweepObservation {
    pub method: MethodKind,
    pub seed: u64,
    pub x: f64,
    pub nmse: f64,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    /// Base channel config; `velocity_kmh` and `rng_seed` are overridden
    /// per realization.
    pub sim: SimConfig,
    pub n_p: usize,
    pub n_f: usize,
    /// Velocities sampled during dataset generation and swept at test time.
    pub velocities_kmh: Vec<f64>,
    pub horizons: Vec<usize>,
    pub fixed_velocity_kmh: f64,
    /// When false the horizon sweep trains one model at the largest horizon
    /// and scores truncated prefixes; when true it retrains per horizon.
    pub retrain_per_horizon: bool,
    pub train_realizations: usize,
    pub test_samples: usize,
    /// Std of complex Gaussian observation noise added to history frames
    /// (targets stay clean). Models the estimated-CSI setting; 0 disables.
    pub history_noise_std: f64,
    /// When set, each realization draws an estimation SNR uniformly from
    /// this dB range and the active history taps are corrupted by an
    /// independent fading process (same Doppler statistics) at that SNR.
    /// The channel config's noise power is tied to the same draw so the
    /// `snr_db` descriptor reports it. Targets stay clean. Overrides
    /// `history_noise_std`.
    pub history_snr_db_range: Option<(f64, f64)>,
    /// When set, the per-realization SNR is drawn uniformly from these
    /// discrete dB levels instead of the continuous range.
    pub history_snr_db_levels: Option<Vec<f64>>,
    pub methods: Vec<MethodKind>,
    pub seeds: Vec<u64>,
    pub model: PredictorConfig,
    pub train: TrainConfig,
    pub ar_order: usize,
    pub descriptors: Vec<Descriptor>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        // The sweep operating point uses a tighter frame spacing than the
        // slot-length default so consecutive frames stay correlated across
        // the whole velocity range.
        let sim = SimConfig { frame_spacing_s: 1e-4, ..SimConfig::default() };
        SweepConfig {
            sim,
            n_p: 16,
            n_f: 4,
            velocities_kmh: (2..=10).map(|k| 50.0 * k as f64).collect(),
            horizons: (1..=10).collect(),
            fixed_velocity_kmh: 300.0,
            retrain_per_horizon: false,
            train_realizations: 2500,
            test_samples: 150,
            history_noise_std: 0.0,
            history_snr_db_range: Some((-20.0, 40.0)),
            history_snr_db_levels: None,
            methods: vec![MethodKind::Physics, MethodKind::Ablation, MethodKind::Persistence],
            seeds: vec![1, 2, 3],
            model: PredictorConfig::default(),
            train: TrainConfig::default(),
            ar_order: 4,
            descriptors: vec![Descriptor::MaxDopplerHz, Descriptor::SnrDb],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.velocities_kmh.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("sweep needs velocities, seeds, and methods".into()));
        }
        if self.train_realizations < 10 {
            return Err(Error::Config("sweep needs at least 10 train realizations".into()));
        }
        if !(self.history_noise_std >= 0.0 && self.history_noise_std.is_finite()) {
            return Err(Error::Config("history_noise_std must be finite and >= 0".into()));
        }
        if let Some((lo, hi)) = self.history_snr_db_range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(
                    "history_snr_db_range must be finite with min <= max".into(),
                ));
            }
        }
        if let Some(levels) = &self.history_snr_db_levels {
            if levels.is_empty() || levels.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(
                    "history_snr_db_levels must be non-empty and finite".into(),
                ));
            }
        }
        if self.horizons.iter().any(|&h| h == 0) {
            return Err(Error::Config("horizons must be >= 1".into()));
        }
        Ok(())
    }

    fn model_cfg(&self, n_f: usize, physics: bool) -> PredictorConfig {
        PredictorConfig {
            l: self.sim.channel_len,
            n_p: self.n_p,
            n_f,
            k_d: self.descriptors.len(),
            physics_enabled: physics,
            ..self.model.clone()
        }
    }
}

fn one_realization(
    sc: &SweepConfig,
    n_f: usize,
    seed: u64,
    index: u64,
    velocity: Option<f64>,
) -> Result<Vec<Sample>> {
    let mut rng = realization_rng(seed, index);
    let v = velocity
        .unwrap_or_else(|| sc.velocities_kmh[rng.gen_range(0..sc.velocities_kmh.len())]);
    let mut cfg = SimConfig { velocity_kmh: v, ..sc.sim.clone() };
    let seq = chansim::generate_taps_with(&cfg, sc.n_p + n_f, &mut rng)?;
    // Per-realization estimation SNR: the impairment is an independent
    // fading process with the same Doppler statistics as the channel, so
    // its level cannot be inferred from a short history window; only the
    // snr_db descriptor (tied to the same draw) carries it.
    let snr_draw = if let Some(levels) = &sc.history_snr_db_levels {
        Some(levels[rng.gen_range(0..levels.len())])
    } else {
        sc.history_snr_db_range.map(|(lo, hi)| rng.gen_range(lo..=hi))
    };
    if let Some(snr_db) = snr_draw {
        let gcfg = SimConfig { nonzero_taps: cfg.channel_len, ..cfg.clone() };
        let gseq = chansim::generate_taps_with(&gcfg, sc.n_p + n_f, &mut rng)?;
        // scale the interferer to this realization's actual channel power
        // so the draw is an exact per-realization SNR even in deep fades
        let active_power = |frames: &[Vec<Complex64>]| {
            let mut ms = 0.0;
            let mut cnt = 0usize;
            for frame in frames {
                for (tap, h) in frame.iter().enumerate() {
                    if seq.tap_mask[tap] {
                        ms += h.norm_sqr();
                        cnt += 1;
                    }
                }
            }
            if cnt > 0 { ms / cnt as f64 } else { 0.0 }
        };
        let ms_h = active_power(&seq.frames);
        let ms_g = active_power(&gseq.frames);
        let alpha =
            if ms_g > 0.0 { (ms_h / ms_g).sqrt() * 10f64.powf(-snr_db / 20.0) } else { 0.0 };
        // tie the channel noise floor to the same draw so the snr_db
        // descriptor reports it (up to per-frame energy fluctuation)
        let frame_energy = ms_h * seq.tap_mask.iter().filter(|&&m| m).count() as f64;
        cfg.noise_power = cfg.transmit_power * frame_energy * 10f64.powf(-snr_db / 10.0);
        let track = physics_track(&seq, &cfg, &sc.descriptors, &mut rng)?;
        let f_d = cfg.max_doppler_hz()?;
        let mut noisy = seq.clone();
        for (t, frame) in noisy.frames.iter_mut().enumerate() {
            for (tap, h) in frame.iter_mut().enumerate() {
                if seq.tap_mask[tap] {
                    *h += alpha * gseq.frames[t][tap];
                }
            }
        }
        // renormalize the corrupted window to the clean power so the
        // observed magnitude carries no information about the draw
        let ms_mix = active_power(&noisy.frames);
        if ms_mix > 0.0 {
            let kappa = (ms_h / ms_mix).sqrt();
            for frame in noisy.frames.iter_mut() {
                for (tap, h) in frame.iter_mut().enumerate() {
                    if seq.tap_mask[tap] {
                        *h *= kappa;
                    }
                }
            }
        }
        // noisy history, clean targets, descriptors from the clean track
        let mut samples = make_samples(&seq, &track, sc.n_p, n_f, n_f, v, f_d)?;
        let corrupted = make_samples(&noisy, &track, sc.n_p, n_f, n_f, v, f_d)?;
        for (s, c) in samples.iter_mut().zip(corrupted) {
            s.history = c.history;
        }
        return Ok(samples);
    }
    let noise_std = sc.history_noise_std;
    let track = physics_track(&seq, &cfg, &sc.descriptors, &mut rng)?;
    let f_d = cfg.max_doppler_hz()?;
    let l = cfg.channel_len;
    let mut samples = make_samples(&seq, &track, sc.n_p, n_f, n_f, v, f_d)?;
    if noise_std > 0.0 {
        // estimation error hits the estimated (active) taps only; each
        // real/imag entry picks up N(0, sigma^2/2) so the complex
        // perturbation has std sigma
        let s = noise_std / std::f64::consts::SQRT_2;
        for sample in &mut samples {
            for tap in 0..l {
                if !seq.tap_mask[tap] {
                    continue;
                }
                for row in [tap, tap + l] {
                    for c in 0..sample.history.cols() {
                        let (u1, u2): (f64, f64) =
                            (rng.gen_range(f64::EPSILON..1.0), rng.gen());
                        let n = s * (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos();
                        let old = sample.history.get(row, c);
                        sample.history.set(row, c, old + n);
                    }
                }
            }
        }
    }
    Ok(samples)
}

/// Generates `train_realizations` mixed-velocity realizations and splits
/// them 8/1/1. Deterministic in `seed` regardless of thread count.
pub fn build_mixed_dataset(sc: &SweepConfig, n_f: usize, seed: u64) -> Result<DatasetSplit> {
    sc.validate()?;
    let samples: Vec<Vec<Sample>> = (0..sc.train_realizations as u64)
        .into_par_iter()
        .map(|i| one_realization(sc, n_f, seed, i, None))
        .collect::<Result<_>>()?;
    let all: Vec<Sample> = samples.into_iter().flatten().collect();
    split(all, (0.8, 0.1, 0.1), derive_seed(seed, u64::MAX))
}

/// Fresh test realizations at one fixed velocity, disjoint from the
/// training seed stream.
pub fn build_test_samples(
    sc: &SweepConfig,
    n_f: usize,
    seed: u64,
    velocity_kmh: f64,
    stream: u64,
) -> Result<Vec<Sample>> {
    let base = (1u64 << 40) + stream * (sc.test_samples as u64);
    let samples: Vec<Vec<Sample>> = (0..sc.test_samples as u64)
        .into_par_iter()
        .map(|i| one_realization(sc, n_f, seed, base + i, Some(velocity_kmh)))
        .collect::<Result<_>>()?;
    Ok(samples.into_iter().flatten().collect())
}

/// Trains (or fits) one method on a mixed dataset.
pub fn train_method(
    kind: MethodKind,
    sc: &SweepConfig,
    ds: &DatasetSplit,
    n_f: usize,
    seed: u64,
) -> Result<TrainedMethod> {
    let init_seed = derive_seed(seed, kind as u64 + 17);
    let tc = TrainConfig { seed: derive_seed(seed, kind as u64 + 91), ..sc.train.clone() };
    match kind {
        MethodKind::Physics => {
            let mut p = Predictor::new(sc.model_cfg(n_f, true), init_seed)?;
            p.set_frozen(p.cfg.freeze_core);
            train_model(&mut p, ds, &tc)?;
            Ok(TrainedMethod::Physics(p))
        }
        MethodKind::Ablation => {
            let mut p = ablation_predictor(&sc.model_cfg(n_f, true), init_seed)?;
            p.set_frozen(p.cfg.freeze_core);
            train_model(&mut p, ds, &tc)?;
            Ok(TrainedMethod::Ablation(p))
        }
        MethodKind::Tmlp => {
            let mut m = Tmlp::new(2 * sc.sim.channel_len, sc.n_p, n_f, init_seed);
            train_model(&mut m, ds, &tc)?;
            Ok(TrainedMethod::Tmlp(m))
        }
        MethodKind::LinearAr => {
            Ok(TrainedMethod::LinearAr(linear_ar_fit(&ds.train, sc.ar_order, n_f)?))
        }
        MethodKind::Persistence => Ok(TrainedMethod::Persistence),
    }
}

fn aggregate(
    obs: &[SweepObservation],
    methods: &[MethodKind],
    xs: &[f64],
    n_seeds: usize,
    variable: SweepVariable,
    runtime_s: f64,
) -> Vec<EvalReport> {
    methods
        .iter()
        .map(|&m| {
            let points = xs
                .iter()
                .map(|&x| {
                    let vals: Vec<f64> = obs
                        .iter()
                        .filter(|o| o.method == m && o.x == x)
                        .map(|o| o.nmse)
                        .collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / vals.len() as f64;
                    ReportPoint { x, nmse_mean: mean, nmse_std: var.sqrt(), n_seeds: vals.len() }
                })
                .collect();
            EvalReport {
                method: m.tag().to_string(),
                sweep_variable: variable,
                points,
                runtime_s,
                n_seeds,
            }
        })
        .collect()
}

/// Trains every method per seed on a mixed-velocity dataset, then scores
/// each on fixed-velocity test sets across the velocity grid.
pub fn run_velocity_sweep(sc: &SweepConfig) -> Result<(Vec<EvalReport>, Vec<SweepObservation>)> {
    sc.validate()?;
    let t0 = Instant::now();
    let per_seed: Vec<Vec<SweepObservation>> = sc
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SweepObservation>> {
            let ds = build_mixed_dataset(sc, sc.n_f, seed)?;
            let mut obs = Vec::new();
            let trained: Vec<TrainedMethod> = sc
                .methods
                .iter()
                .map(|&k| train_method(k, sc, &ds, sc.n_f, seed))
                .collect::<Result<_>>()?;
            for (vi, &v) in sc.velocities_kmh.iter().enumerate() {
                let test = build_test_samples(sc, sc.n_f, seed, v, vi as u64)?;
                for t in &trained {
                    let (nmse, _) = evaluate_method(t, &test, &ds.stats, None)?;
                    obs.push(SweepObservation { method: t.kind(), seed, x: v, nmse });
                }
            }
            Ok(obs)
        })
        .collect::<Result<_>>()?;
    let obs: Vec<SweepObservation> = per_seed.into_iter().flatten().collect();
    let reports = aggregate(
        &obs,
        &sc.methods,
        &sc.velocities_kmh,
        sc.seeds.len(),
        SweepVariable::VelocityKmh,
        t0.elapsed().as_secs_f64(),
    );
    Ok((reports, obs))
}

/// Sweeps the prediction horizon at `fixed_velocity_kmh`.
pub fn run_horizon_sweep(sc: &SweepConfig) -> Result<(Vec<EvalReport>, Vec<SweepObservation>)> {
    sc.validate()?;
    let t0 = Instant::now();
    let max_h = *sc.horizons.iter().max().unwrap();
    let per_seed: Vec<Vec<SweepObservation>> = sc
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SweepObservation>> {
            let mut obs = Vec::new();
            if sc.retrain_per_horizon {
                for &h in &sc.horizons {
                    let ds = build_mixed_dataset(sc, h, seed)?;
                    let test = build_test_samples(sc, h, seed, sc.fixed_velocity_kmh, h as u64)?;
                    for &k in &sc.methods {
                        let t = train_method(k, sc, &ds, h, seed)?;
                        let (nmse, _) = evaluate_method(&t, &test, &ds.stats, None)?;
                        obs.push(SweepObservation { method: k, seed, x: h as f64, nmse });
                    }
                }
            } else {
                let ds = build_mixed_dataset(sc, max_h, seed)?;
                let test = build_test_samples(sc, max_h, seed, sc.fixed_velocity_kmh, 0)?;
                let trained: Vec<TrainedMethod> = sc
                    .methods
                    .iter()
                    .map(|&k| train_method(k, sc, &ds, max_h, seed))
                    .collect::<Result<_>>()?;
                for &h in &sc.horizons {
                    for t in &trained {
                        let (nmse, _) = evaluate_method(t, &test, &ds.stats, Some(h))?;
                        obs.push(SweepObservation { method: t.kind(), seed, x: h as f64, nmse });
                    }
                }
            }
            Ok(obs)
        })
        .collect::<Result<_>>()?;
    let obs: Vec<SweepObservation> = per_seed.into_iter().flatten().collect();
    let xs: Vec<f64> = sc.horizons.iter().map(|&h| h as f64).collect();
    let reports = aggregate(
        &obs,
        &sc.methods,
        &xs,
        sc.seeds.len(),
        SweepVariable::Horizon,
        t0.elapsed().as_secs_f64(),
    );
    Ok((reports, obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sweep() -> SweepConfig {
        SweepConfig {
            train_realizations: 20,
            test_samples: 4,
            velocities_kmh: vec![100.0, 400.0],
            horizons: vec![1, 2],
            n_p: 6,
            n_f: 2,
            methods: vec![MethodKind::Persistence, MethodKind::LinearAr],
            seeds: vec![1, 2],
            sim: SimConfig {
                frame_spacing_s: 1e-4,
                num_rays: 4,
                num_clusters: 3,
                channel_len: 4,
                nonzero_taps: 2,
                ..SimConfig::default()
            },
            ar_order: 2,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn mixed_dataset_split_counts() {
        let sc = tiny_sweep();
        let ds = build_mixed_dataset(&sc, sc.n_f, 7).unwrap();
        assert_eq!(ds.train.len() + ds.val.len() + ds.test.len(), 20);
        assert_eq!(ds.train.len(), 16);
        // only the configured velocities appear
        for s in &ds.train {
            assert!(sc.velocities_kmh.contains(&s.velocity_kmh));
        }
    }

    #[test]
    fn mixed_dataset_deterministic() {
        let sc = tiny_sweep();
        let a = build_mixed_dataset(&sc, sc.n_f, 7).unwrap();
        let b = build_mixed_dataset(&sc, sc.n_f, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
    }

    #[test]
    fn test_samples_fixed_velocity_and_disjoint_streams() {
        let sc = tiny_sweep();
        let t0 = build_test_samples(&sc, 2, 7, 400.0, 0).unwrap();
        let t1 = build_test_samples(&sc, 2, 7, 400.0, 1).unwrap();
        assert_eq!(t0.len(), 4);
        assert!(t0.iter().all(|s| s.velocity_kmh == 400.0));
        assert_ne!(t0[0].history, t1[0].history);
    }

    #[test]
    fn velocity_sweep_shape_and_determinism() {
        let sc = tiny_sweep();
        let (reports, obs) = run_velocity_sweep(&sc).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(obs.len(), 2 * 2 * 2); // methods x velocities x seeds
        for r in &reports {
            assert_eq!(r.points.len(), 2);
            for p in &r.points {
                assert_eq!(p.n_seeds, 2);
                assert!(p.nmse_mean.is_finite() && p.nmse_mean >= 0.0);
            }
        }
        let (again, _) = run_velocity_sweep(&sc).unwrap();
        for (a, b) in reports.iter().zip(&again) {
            for (pa, pb) in a.points.iter().zip(&b.points) {
                assert_eq!(pa.nmse_mean.to_bits(), pb.nmse_mean.to_bits());
            }
        }
    }

    #[test]
    fn horizon_sweep_truncation_mode() {
        let sc = tiny_sweep();
        let (reports, _) = run_horizon_sweep(&sc).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert_eq!(r.points.len(), 2);
            assert_eq!(r.points[0].x, 1.0);
            assert_eq!(r.points[1].x, 2.0);
        }
    }
}
