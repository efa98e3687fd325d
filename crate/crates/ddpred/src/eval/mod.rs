//! NMSE metric, the minibatch trainer, the velocity/horizon sweep
//! experiments, and report emission.

mod report;
mod sweep;

pub use report::{emit_report, parse_report_csv, EvalReport, ReportPoint, SweepVariable};
pub use sweep::{
    build_mixed_dataset, build_test_samples, run_horizon_sweep, run_velocity_sweep, train_method,
    SweepConfig, SweepObservation,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::TrainedMethod;
use crate::dataset::{apply_norm, CMat, DatasetSplit, NormStats, Sample};
use crate::model::SeqModel;
use crate::nn::{Mat, Tape};
use crate::{Error, Result};

/// `||truth - pred||_F^2 / ||truth||_F^2`.
pub fn nmse(truth: &CMat, pred: &CMat) -> Result<f64> {
    if truth.rows != pred.rows || truth.cols != pred.cols {
        return Err(Error::Shape(format!(
            "nmse: {}x{} vs {}x{}",
            truth.rows, truth.cols, pred.rows, pred.cols
        )));
    }
    let energy: f64 = truth.data.iter().map(|v| v.norm_sqr()).sum();
    if energy <= 0.0 {
        return Err(Error::Config("nmse: zero-energy truth".into()));
    }
    let err: f64 = truth
        .data
        .iter()
        .zip(&pred.data)
        .map(|(t, p)| (t - p).norm_sqr())
        .sum();
    Ok(err / energy)
}

fn truncate_cols(m: &CMat, cols: usize) -> CMat {
    let mut out = CMat::zeros(m.rows, cols);
    for r in 0..m.rows {
        for c in 0..cols {
            out.set(r, c, m.get(r, c));
        }
    }
    out
}

/// Mean NMSE of a method over raw test samples. Zero-energy-truth samples
/// are excluded and counted. `horizon` restricts scoring to the first
/// `h` predicted frames.
pub fn evaluate_method(
    method: &TrainedMethod,
    samples: &[Sample],
    stats: &NormStats,
    horizon: Option<usize>,
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut excluded = 0usize;
    for s in samples {
        let truth_full = s.target_complex();
        let pred_full = method.predict_sample(s, stats)?;
        let (truth, pred) = match horizon {
            Some(h) => {
                if h > truth_full.cols {
                    return Err(Error::Range(format!(
                        "horizon {h} exceeds target width {}",
                        truth_full.cols
                    )));
                }
                (truncate_cols(&truth_full, h), truncate_cols(&pred_full, h))
            }
            None => (truth_full, pred_full),
        };
        match nmse(&truth, &pred) {
            Ok(v) => {
                total += v;
                counted += 1;
            }
            Err(Error::Config(_)) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if counted == 0 {
        return Err(Error::Config("evaluate_method: every sample excluded".into()));
    }
    Ok((total / counted as f64, excluded))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    AdamMoments,
    Sgd,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            optimizer: OptimizerKind::AdamMoments,
            early_stop_patience: 20,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::Config("lr must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub val_nmse: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_nmse: f64,
}

struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
}

/// Minibatch gradient descent on MSE in normalized feature space.
/// Returns the loss curve; the model is left at its best-validation state
/// (final state when there is no validation split).
pub fn train_model<M: SeqModel>(
    model: &mut M,
    split: &DatasetSplit,
    tc: &TrainConfig,
) -> Result<TrainLog> {
    tc.validate()?;
    if split.train.is_empty() {
        return Err(Error::Train("empty training split".into()));
    }
    let stats = &split.stats;
    let train: Vec<Sample> = split
        .train
        .iter()
        .map(|s| apply_norm(s, stats))
        .collect::<Result<_>>()?;
    let val_raw = &split.val;

    let n_params = model.store().len();
    let mut adam = AdamState {
        m: model.store().iter().map(|p| Mat::zeros(p.value.rows(), p.value.cols())).collect(),
        v: model.store().iter().map(|p| Mat::zeros(p.value.rows(), p.value.cols())).collect(),
        step: 0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog { best_val_nmse: f64::INFINITY, ..TrainLog::default() };
    let mut best_store: Option<crate::nn::ParamStore> = None;
    let mut since_best = 0usize;

    for epoch in 0..tc.epochs {
        let lr = match tc.lr_schedule {
            LrSchedule::Constant => tc.lr,
            LrSchedule::Cosine => {
                let frac = epoch as f64 / tc.epochs.max(1) as f64;
                tc.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        };
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let mut grads: Vec<Option<Mat>> = (0..n_params).map(|_| None).collect();
            let mut batch_loss = 0.0;
            for &si in batch {
                let s = &train[si];
                let mut tape = Tape::new();
                let (pred, binds) = model.build_forward(&mut tape, &s.history, &s.physics)?;
                let loss = tape.mse_loss(pred, &s.target)?;
                let lv = tape.value(loss).get(0, 0);
                if !lv.is_finite() {
                    return Err(Error::Train(format!(
                        "non-finite loss at epoch {epoch}, sample {si}, lr {lr}"
                    )));
                }
                batch_loss += lv;
                tape.backward(loss)?;
                for (pidx, node) in binds {
                    if !model.store().get(pidx).trainable {
                        continue;
                    }
                    let g = tape.grad(node)?;
                    match &mut grads[pidx] {
                        Some(acc) => acc.add_assign(g),
                        slot => *slot = Some(g.clone()),
                    }
                }
            }
            epoch_loss += batch_loss;
            let inv_b = 1.0 / batch.len() as f64;

            adam.step += 1;
            for (pidx, grad) in grads.into_iter().enumerate() {
                let Some(mut g) = grad else { continue };
                g.scale_assign(inv_b);
                let p = model.store_mut().get_mut(pidx);
                match tc.optimizer {
                    OptimizerKind::Sgd => {
                        for (w, gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                            *w -= lr * gv;
                        }
                    }
                    OptimizerKind::AdamMoments => {
                        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                        let t = adam.step as f64;
                        let (bc1, bc2) = (1.0 - b1.powf(t), 1.0 - b2.powf(t));
                        let m = &mut adam.m[pidx];
                        let v = &mut adam.v[pidx];
                        for (((w, gv), mv), vv) in p
                            .value
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .zip(m.data_mut())
                            .zip(v.data_mut())
                        {
                            *mv = b1 * *mv + (1.0 - b1) * gv;
                            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                            let mhat = *mv / bc1;
                            let vhat = *vv / bc2;
                            *w -= lr * mhat / (vhat.sqrt() + eps);
                        }
                    }
                }
            }
        }
        log.train_loss.push(epoch_loss / train.len() as f64);

        if !val_raw.is_empty() {
            let method_nmse = validation_nmse(model, val_raw, stats)?;
            log.val_nmse.push(method_nmse);
            if method_nmse < log.best_val_nmse {
                log.best_val_nmse = method_nmse;
                log.best_epoch = epoch;
                best_store = Some(model.store().clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > tc.early_stop_patience {
                    break;
                }
            }
        }
    }
    if let Some(best) = best_store {
        *model.store_mut() = best;
    }
    Ok(log)
}

fn validation_nmse<M: SeqModel>(
    model: &M,
    val_raw: &[Sample],
    stats: &NormStats,
) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for s in val_raw {
        let normed = apply_norm(s, stats)?;
        let mut tape = Tape::new();
        let (pred, _) = model.build_forward(&mut tape, &normed.history, &normed.physics)?;
        let cpred = crate::model::reconstruct_complex(tape.value(pred), stats)?;
        match nmse(&s.target_complex(), &cpred) {
            Ok(v) => {
                total += v;
                counted += 1;
            }
            Err(Error::Config(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if counted == 0 {
        return Err(Error::Train("validation: every sample has zero-energy truth".into()));
    }
    Ok(total / counted as f64)
}

/// Median helper for seed aggregation.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::Rng;

    fn random_cmat(seed: u64, r: usize, c: usize) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = CMat::zeros(r, c);
        for v in m.data.iter_mut() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        m
    }

    #[test]
    fn nmse_analytic_cases() {
        let truth = random_cmat(1, 4, 3);
        assert_eq!(nmse(&truth, &truth).unwrap(), 0.0);
        let zero = CMat::zeros(4, 3);
        assert_eq!(nmse(&truth, &zero).unwrap(), 1.0);
        let mut double = truth.clone();
        for v in double.data.iter_mut() {
            *v *= 2.0;
        }
        assert!((nmse(&truth, &double).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_matches_brute_force() {
        // independently coded double-loop implementation
        for seed in 0..50u64 {
            let truth = random_cmat(seed, 5, 4);
            let pred = random_cmat(seed + 1000, 5, 4);
            let mut num = 0.0;
            let mut den = 0.0;
            for r in 0..5 {
                for c in 0..4 {
                    let d = truth.get(r, c) - pred.get(r, c);
                    num += d.re * d.re + d.im * d.im;
                    let t = truth.get(r, c);
                    den += t.re * t.re + t.im * t.im;
                }
            }
            let got = nmse(&truth, &pred).unwrap();
            assert!((got - num / den).abs() <= 1e-12 * (1.0 + got));
        }
    }

    #[test]
    fn nmse_zero_energy_rejected() {
        let zero = CMat::zeros(2, 2);
        let pred = random_cmat(3, 2, 2);
        assert!(matches!(nmse(&zero, &pred), Err(Error::Config(_))));
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
