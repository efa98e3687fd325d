//! Comparison predictors: history-only ablation of the physics-aware model,
//! a temporal-mixing MLP, a linear autoregressive predictor, and a
//! repeat-last-frame persistence floor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{apply_norm, real_mat_to_complex, CMat, NormStats, Sample};
use crate::model::{reconstruct_complex, Predictor, PredictorConfig, SeqModel};
use crate::nn::params::{read_exact, read_u32, write_u32};
use crate::nn::{read_archive, write_archive, Mat, NodeId, ParamStore, Tape};
use crate::{Error, Result};

const TMLP_MAGIC: &[u8; 4] = b"DDTM";
const TMLP_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Physics,
    Ablation,
    Tmlp,
    LinearAr,
    Persistence,
}

impl MethodKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "physics" => Ok(MethodKind::Physics),
            "ablation" => Ok(MethodKind::Ablation),
            "tmlp" => Ok(MethodKind::Tmlp),
            "linear_ar" => Ok(MethodKind::LinearAr),
            "persistence" => Ok(MethodKind::Persistence),
            other => Err(Error::Config(format!("unknown method tag: {other}"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            MethodKind::Physics => "physics",
            MethodKind::Ablation => "ablation",
            MethodKind::Tmlp => "tmlp",
            MethodKind::LinearAr => "linear_ar",
            MethodKind::Persistence => "persistence",
        }
    }
}

/// The model-module predictor with the physics branch removed; everything
/// else identical.
pub fn ablation_predictor(cfg: &PredictorConfig, seed: u64) -> Result<Predictor> {
    Predictor::new(
        PredictorConfig { physics_enabled: false, ..cfg.clone() },
        seed,
    )
}

// ---- temporal-mixing MLP ----

/// Encoder-free temporal mixer: `O = W2 ReLU(W1 X^T)`, applied along the
/// frame axis with weights shared across feature rows.
pub struct Tmlp {
    pub feature_dim: usize,
    pub n_p: usize,
    pub n_f: usize,
    pub hidden: usize,
    store: ParamStore,
}

impl Tmlp {
    pub fn new(feature_dim: usize, n_p: usize, n_f: usize, seed: u64) -> Self {
        // hidden width 4 * N_P by analogy with MLP expansion ratios
        let hidden = 4 * n_p;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut xavier = |name: &str, rows: usize, cols: usize, store: &mut ParamStore| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
            store.insert(name, "mix", true, Mat::from_vec(rows, cols, data).unwrap());
        };
        xavier("tmlp.w1", hidden, n_p, &mut store);
        xavier("tmlp.w2", n_f, hidden, &mut store);
        Tmlp { feature_dim, n_p, n_f, hidden, store }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(TMLP_MAGIC)?;
        write_u32(&mut w, TMLP_VERSION)?;
        for v in [self.feature_dim, self.n_p, self.n_f, self.hidden] {
            write_u32(&mut w, v as u32)?;
        }
        write_archive(&mut w, &self.store)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "tmlp magic")?;
        if &magic != TMLP_MAGIC {
            return Err(Error::BadMagic(format!(
                "expected {:?}, found {:?}",
                TMLP_MAGIC, magic
            )));
        }
        let version = read_u32(&mut r, "tmlp version")?;
        if version != TMLP_VERSION {
            return Err(Error::Version { found: version, expected: TMLP_VERSION });
        }
        let feature_dim = read_u32(&mut r, "feature_dim")? as usize;
        let n_p = read_u32(&mut r, "n_p")? as usize;
        let n_f = read_u32(&mut r, "n_f")? as usize;
        let hidden = read_u32(&mut r, "hidden")? as usize;
        let store = read_archive(&mut r)?;
        Ok(Tmlp { feature_dim, n_p, n_f, hidden, store })
    }
}

impl SeqModel for Tmlp {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.feature_dim, self.n_f)
    }

    fn build_forward(
        &self,
        tape: &mut Tape,
        history: &Mat,
        _physics: &Mat,
    ) -> Result<(NodeId, Vec<(usize, NodeId)>)> {
        if history.rows() != self.feature_dim || history.cols() != self.n_p {
            return Err(Error::Shape(format!(
                "tmlp expects {}x{} history, got {}x{}",
                self.feature_dim,
                self.n_p,
                history.rows(),
                history.cols()
            )));
        }
        let x = tape.leaf(history.clone());
        let w1 = tape.leaf(self.store.by_name("tmlp.w1").unwrap().value.clone());
        let w2 = tape.leaf(self.store.by_name("tmlp.w2").unwrap().value.clone());
        let xt = tape.transpose(x);
        let mid = tape.matmul(w1, xt)?;
        let act = tape.relu(mid);
        let o = tape.matmul(w2, act)?;
        let pred = tape.transpose(o);
        let binds = vec![(0, w1), (1, w2)];
        Ok((pred, binds))
    }
}

/// Direct (tape-free) evaluation of the temporal mixing formula.
pub fn tmlp_forward(x: &Mat, w1: &Mat, w2: &Mat) -> Result<Mat> {
    if w1.cols() != x.cols() || w2.cols() != w1.rows() {
        return Err(Error::Shape("tmlp_forward: shapes do not conform".into()));
    }
    let mut mid = w1.matmul(&x.transposed());
    for v in mid.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(w2.matmul(&mid).transposed())
}

// ---- linear autoregressive baseline ----

/// Per-feature AR(p) coefficients fitted by least squares on raw history
/// windows; prediction rolls forward recursively.
#[derive(Clone, Debug)]
pub struct ArModel {
    pub order: usize,
    pub feature_dim: usize,
    pub n_f: usize,
    /// `coeffs[f][k]` multiplies the value `k+1` steps back.
    pub coeffs: Vec<Vec<f64>>,
    pub used_ridge: bool,
}

pub fn linear_ar_fit(train: &[Sample], order: usize, n_f: usize) -> Result<ArModel> {
    let first = train
        .first()
        .ok_or_else(|| Error::Config("linear_ar_fit: empty training set".into()))?;
    let fdim = first.feature_dim();
    let n_p = first.n_p();
    if order >= n_p {
        return Err(Error::Config(format!(
            "AR order {order} must be < N_P {n_p}"
        )));
    }
    let mut coeffs = Vec::with_capacity(fdim);
    let mut used_ridge = false;
    for f in 0..fdim {
        let mut gram = vec![vec![0.0; order]; order];
        let mut rhs = vec![0.0; order];
        for s in train {
            for t in order..n_p {
                let y = s.history.get(f, t);
                for i in 0..order {
                    let xi = s.history.get(f, t - 1 - i);
                    rhs[i] += xi * y;
                    for j in i..order {
                        gram[i][j] += xi * s.history.get(f, t - 1 - j);
                    }
                }
            }
        }
        for i in 0..order {
            for j in 0..i {
                gram[i][j] = gram[j][i];
            }
        }
        let sol = match solve_real(&gram, &rhs) {
            Ok(s) => s,
            Err(_) => {
                // ridge fallback for singular normal equations
                used_ridge = true;
                let mut ridged = gram.clone();
                for (i, row) in ridged.iter_mut().enumerate() {
                    row[i] += 1e-8;
                }
                solve_real(&ridged, &rhs)?
            }
        };
        coeffs.push(sol);
    }
    Ok(ArModel { order, feature_dim: fdim, n_f, coeffs, used_ridge })
}

impl ArModel {
    /// Rolls the recursion forward `n_f` steps from the end of the history.
    pub fn predict(&self, history: &Mat) -> Result<Mat> {
        if history.rows() != self.feature_dim || history.cols() < self.order {
            return Err(Error::Shape("ar predict: history shape mismatch".into()));
        }
        let n_p = history.cols();
        let mut out = Mat::zeros(self.feature_dim, self.n_f);
        for f in 0..self.feature_dim {
            let mut past: Vec<f64> = (0..n_p).map(|t| history.get(f, t)).collect();
            for step in 0..self.n_f {
                let mut v = 0.0;
                for k in 0..self.order {
                    v += self.coeffs[f][k] * past[past.len() - 1 - k];
                }
                out.set(f, step, v);
                past.push(v);
            }
        }
        Ok(out)
    }
}

fn solve_real(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    let scale: f64 = a
        .iter()
        .enumerate()
        .map(|(i, r)| r[i].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col].abs() < 1e-12 * scale {
            return Err(Error::Fit("singular normal equations".into()));
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = rhs[col];
        for k in (col + 1)..n {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Ok(x)
}

// ---- persistence ----

/// Repeats the last observed frame across the whole horizon.
pub fn persistence_predict(history: &Mat, n_f: usize) -> Result<CMat> {
    if history.cols() == 0 {
        return Err(Error::Shape("persistence needs at least one frame".into()));
    }
    let l = history.rows() / 2;
    let last = history.cols() - 1;
    let mut out = CMat::zeros(l, n_f);
    for c in 0..n_f {
        for r in 0..l {
            out.set(
                r,
                c,
                Complex64::new(history.get(r, last), history.get(l + r, last)),
            );
        }
    }
    Ok(out)
}

// ---- method-agnostic predict surface ----

/// A trained method behind the shared `(history, track, stats) -> L x N_F`
/// prediction signature used by the evaluation harness.
pub enum TrainedMethod {
    Physics(Predictor),
    Ablation(Predictor),
    Tmlp(Tmlp),
    LinearAr(ArModel),
    Persistence,
}

impl TrainedMethod {
    pub fn kind(&self) -> MethodKind {
        match self {
            TrainedMethod::Physics(_) => MethodKind::Physics,
            TrainedMethod::Ablation(_) => MethodKind::Ablation,
            TrainedMethod::Tmlp(_) => MethodKind::Tmlp,
            TrainedMethod::LinearAr(_) => MethodKind::LinearAr,
            TrainedMethod::Persistence => MethodKind::Persistence,
        }
    }

    /// Predicts the complex channel for one raw (unnormalized) sample.
    pub fn predict_sample(&self, raw: &Sample, stats: &NormStats) -> Result<CMat> {
        match self {
            TrainedMethod::Physics(p) | TrainedMethod::Ablation(p) => {
                let normed = apply_norm(raw, stats)?;
                reconstruct_complex(&p.forward(&normed)?, stats)
            }
            TrainedMethod::Tmlp(m) => {
                let normed = apply_norm(raw, stats)?;
                let mut tape = Tape::new();
                let (pred, _) = m.build_forward(&mut tape, &normed.history, &normed.physics)?;
                reconstruct_complex(tape.value(pred), stats)
            }
            TrainedMethod::LinearAr(ar) => {
                let pred = ar.predict(&raw.history)?;
                Ok(real_mat_to_complex(&pred))
            }
            TrainedMethod::Persistence => persistence_predict(&raw.history, raw.n_f()),
        }
    }
}
