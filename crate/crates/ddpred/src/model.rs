//! Physics-aware transformer channel predictor: dual embedding with additive
//! fusion, sinusoidal positional encoding, a causal pre-norm transformer
//! backbone with group-wise freezing, and a full-readout output head.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    apply_norm, denorm_features, real_mat_to_complex, CMat, DatasetSplit, NormStats, Sample,
};
use crate::eval::{train_model, TrainConfig, TrainLog};
use crate::nn::params::{read_exact, read_f64, read_u32, write_f64, write_u32};
use crate::nn::{positional_encoding, read_archive, write_archive, Mat, NodeId, ParamStore, Tape};
use crate::{Error, Result};

const CKPT_MAGIC: &[u8; 4] = b"DDCK";
const CKPT_VERSION: u32 = 1;

/// Parameter group names. `CORE` holds the attention and MLP weights that
/// freeze during fine-tuning; norms, embeddings and the head stay trainable.
pub const GROUP_EMBED: &str = "embed";
pub const GROUP_CORE: &str = "core";
pub const GROUP_NORM: &str = "norm";
pub const GROUP_HEAD: &str = "head";

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorConfig {
    pub l: usize,
    pub n_p: usize,
    pub n_f: usize,
    pub k_d: usize,
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub physics_enabled: bool,
    pub freeze_core: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            l: 10,
            n_p: 16,
            n_f: 4,
            k_d: 1,
            d_model: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4.0,
            physics_enabled: true,
            freeze_core: false,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.n_p == 0 || self.n_f == 0 || self.l == 0 || self.depth == 0 {
            return Err(Error::Config("l, n_p, n_f, depth must be >= 1".into()));
        }
        if self.physics_enabled && self.k_d == 0 {
            return Err(Error::Config("physics_enabled requires k_d >= 1".into()));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::Config("mlp_ratio must be > 0".into()));
        }
        Ok(())
    }

    fn mlp_hidden(&self) -> usize {
        ((self.d_model as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// Common interface for gradient-trained sequence predictors.
pub trait SeqModel {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Output shape in normalized feature space: (2L, N_F).
    fn output_shape(&self) -> (usize, usize);
    /// Records the forward pass on `tape`; returns the prediction node and
    /// the (param index, leaf node) bindings for gradient collection.
    fn build_forward(
        &self,
        tape: &mut Tape,
        history: &Mat,
        physics: &Mat,
    ) -> Result<(NodeId, Vec<(usize, NodeId)>)>;
}

pub struct Predictor {
    pub cfg: PredictorConfig,
    store: ParamStore,
    pos: Mat,
}

impl Predictor {
    pub fn new(cfg: PredictorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let mut xavier = |store: &mut ParamStore, name: &str, group: &str, rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
            store.insert(name, group, true, Mat::from_vec(rows, cols, data).unwrap());
        };
        let zeros = |store: &mut ParamStore, name: &str, group: &str, rows: usize| {
            store.insert(name, group, true, Mat::zeros(rows, 1));
        };
        let ones = |store: &mut ParamStore, name: &str, group: &str, rows: usize| {
            let m = Mat::from_vec(rows, 1, vec![1.0; rows]).unwrap();
            store.insert(name, group, true, m);
        };

        xavier(&mut store, "embed_h.w", GROUP_EMBED, d, 2 * cfg.l);
        zeros(&mut store, "embed_h.b", GROUP_EMBED, d);
        if cfg.physics_enabled {
            xavier(&mut store, "embed_d.w", GROUP_EMBED, d, cfg.k_d);
            zeros(&mut store, "embed_d.b", GROUP_EMBED, d);
        }
        let hidden = cfg.mlp_hidden();
        for i in 0..cfg.depth {
            ones(&mut store, &format!("blk{i}.ln1.g"), GROUP_NORM, d);
            zeros(&mut store, &format!("blk{i}.ln1.b"), GROUP_NORM, d);
            for w in ["wq", "wk", "wv", "wo"] {
                xavier(&mut store, &format!("blk{i}.attn.{w}"), GROUP_CORE, d, d);
            }
            for b in ["bq", "bk", "bv", "bo"] {
                zeros(&mut store, &format!("blk{i}.attn.{b}"), GROUP_CORE, d);
            }
            ones(&mut store, &format!("blk{i}.ln2.g"), GROUP_NORM, d);
            zeros(&mut store, &format!("blk{i}.ln2.b"), GROUP_NORM, d);
            xavier(&mut store, &format!("blk{i}.mlp.w1"), GROUP_CORE, hidden, d);
            zeros(&mut store, &format!("blk{i}.mlp.b1"), GROUP_CORE, hidden);
            xavier(&mut store, &format!("blk{i}.mlp.w2"), GROUP_CORE, d, hidden);
            zeros(&mut store, &format!("blk{i}.mlp.b2"), GROUP_CORE, d);
        }
        ones(&mut store, "ln_f.g", GROUP_NORM, d);
        zeros(&mut store, "ln_f.b", GROUP_NORM, d);
        xavier(&mut store, "head.w", GROUP_HEAD, 2 * cfg.l * cfg.n_f, d * cfg.n_p);
        zeros(&mut store, "head.b", GROUP_HEAD, 2 * cfg.l * cfg.n_f);

        let pos = scaled_positional_encoding(cfg.n_p, d);
        Ok(Predictor { cfg, store, pos })
    }

    /// Applies the freeze policy: when `freeze_core` is set, attention and
    /// MLP weights stop receiving updates while norms, embeddings and the
    /// head remain trainable.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.store.set_group_trainable(GROUP_CORE, !frozen);
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count(false)
    }

    fn shape_check(&self, history: &Mat, physics: &Mat) -> Result<()> {
        if history.rows() != 2 * self.cfg.l || history.cols() != self.cfg.n_p {
            return Err(Error::Shape(format!(
                "history must be {}x{}, got {}x{}",
                2 * self.cfg.l,
                self.cfg.n_p,
                history.rows(),
                history.cols()
            )));
        }
        if self.cfg.physics_enabled
            && (physics.rows() != self.cfg.k_d || physics.cols() != self.cfg.n_p)
        {
            return Err(Error::Shape(format!(
                "physics must be {}x{}, got {}x{}",
                self.cfg.k_d,
                self.cfg.n_p,
                physics.rows(),
                physics.cols()
            )));
        }
        Ok(())
    }

    /// Fused and position-encoded embedding `E_in` for normalized inputs.
    pub fn embed(&self, history: &Mat, physics: &Mat) -> Result<Mat> {
        self.shape_check(history, physics)?;
        let wh = &self.store.by_name("embed_h.w").unwrap().value;
        let bh = &self.store.by_name("embed_h.b").unwrap().value;
        let mut e = wh.matmul(history);
        for r in 0..e.rows() {
            let b = bh.get(r, 0);
            for v in e.row_mut(r) {
                *v += b;
            }
        }
        if self.cfg.physics_enabled {
            let wd = &self.store.by_name("embed_d.w").unwrap().value;
            let bd = &self.store.by_name("embed_d.b").unwrap().value;
            let mut ed = wd.matmul(physics);
            for r in 0..ed.rows() {
                let b = bd.get(r, 0);
                for v in ed.row_mut(r) {
                    *v += b;
                }
            }
            e.add_assign(&ed);
        }
        e.add_assign(&self.pos);
        Ok(e)
    }

    /// Forward pass on an already-normalized sample; output stays in
    /// normalized feature space.
    pub fn forward(&self, sample: &Sample) -> Result<Mat> {
        if sample.history.has_non_finite() || sample.physics.has_non_finite() {
            return Err(Error::Train("non-finite values in model input".into()));
        }
        let mut tape = Tape::new();
        let (pred, _) = self.build_forward(&mut tape, &sample.history, &sample.physics)?;
        Ok(tape.value(pred).clone())
    }

    /// Full prediction pipeline from raw (unnormalized) history frames.
    pub fn predict(
        &self,
        history: &[Vec<num_complex::Complex64>],
        physics: &[Vec<f64>],
        stats: &NormStats,
    ) -> Result<CMat> {
        if history.len() != self.cfg.n_p || (self.cfg.physics_enabled && physics.len() != self.cfg.n_p) {
            return Err(Error::Shape(format!(
                "predict needs exactly {} history/physics frames, got {}/{}",
                self.cfg.n_p,
                history.len(),
                physics.len()
            )));
        }
        let mut hist = Mat::zeros(2 * self.cfg.l, self.cfg.n_p);
        for (t, frame) in history.iter().enumerate() {
            let col = crate::dataset::complex_to_real(frame);
            for (r, v) in col.iter().enumerate() {
                hist.set(r, t, *v);
            }
        }
        let k_d = self.cfg.k_d.max(1);
        let mut phys = Mat::zeros(k_d, self.cfg.n_p);
        if self.cfg.physics_enabled {
            for (t, frame) in physics.iter().enumerate() {
                for (r, v) in frame.iter().enumerate() {
                    phys.set(r, t, *v);
                }
            }
        }
        let raw = Sample {
            history: hist,
            physics: phys,
            target: Mat::zeros(2 * self.cfg.l, self.cfg.n_f),
            velocity_kmh: 0.0,
            max_doppler_hz: 0.0,
            sample_id: 0,
        };
        let normed = apply_norm(&raw, stats)?;
        let out = self.forward(&normed)?;
        reconstruct_complex(&out, stats)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        write_u32(&mut w, CKPT_VERSION)?;
        for v in [
            self.cfg.l,
            self.cfg.n_p,
            self.cfg.n_f,
            self.cfg.k_d,
            self.cfg.d_model,
            self.cfg.depth,
            self.cfg.heads,
        ] {
            write_u32(&mut w, v as u32)?;
        }
        write_f64(&mut w, self.cfg.mlp_ratio)?;
        w.write_all(&[self.cfg.physics_enabled as u8, self.cfg.freeze_core as u8])?;
        write_archive(&mut w, &self.store)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "checkpoint magic")?;
        if &magic != CKPT_MAGIC {
            return Err(Error::BadMagic(format!(
                "expected {:?}, found {:?}",
                CKPT_MAGIC, magic
            )));
        }
        let version = read_u32(&mut r, "checkpoint version")?;
        if version != CKPT_VERSION {
            return Err(Error::Version { found: version, expected: CKPT_VERSION });
        }
        let mut next = |what: &str| -> Result<usize> { Ok(read_u32(&mut r, what)? as usize) };
        let (l, n_p, n_f, k_d, d_model, depth, heads) = (
            next("l")?,
            next("n_p")?,
            next("n_f")?,
            next("k_d")?,
            next("d_model")?,
            next("depth")?,
            next("heads")?,
        );
        let mlp_ratio = read_f64(&mut r, "mlp_ratio")?;
        let mut flags = [0u8; 2];
        read_exact(&mut r, &mut flags, "flags")?;
        let cfg = PredictorConfig {
            l,
            n_p,
            n_f,
            k_d,
            d_model,
            depth,
            heads,
            mlp_ratio,
            physics_enabled: flags[0] != 0,
            freeze_core: flags[1] != 0,
        };
        let store = read_archive(&mut r)?;
        // validate shapes against the config
        let expect_head = 2 * cfg.l * cfg.n_f;
        let head = store
            .by_name("head.w")
            .ok_or_else(|| Error::Parse("checkpoint missing head.w".into()))?;
        if head.value.rows() != expect_head || head.value.cols() != cfg.d_model * cfg.n_p {
            return Err(Error::Shape("checkpoint tensor shapes disagree with header".into()));
        }
        let pos = scaled_positional_encoding(cfg.n_p, cfg.d_model);
        Ok(Predictor { cfg, store, pos })
    }
}

/// Positional-encoding amplitude relative to the embedded features.
/// Unit-amplitude sinusoids would dominate the Xavier-scale embeddings of
/// z-scored inputs and slow training badly.
pub const POS_SCALE: f64 = 0.1;

fn scaled_positional_encoding(n_p: usize, d: usize) -> Mat {
    let mut pos = positional_encoding(n_p, d);
    pos.scale_assign(POS_SCALE);
    pos
}

impl SeqModel for Predictor {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn output_shape(&self) -> (usize, usize) {
        (2 * self.cfg.l, self.cfg.n_f)
    }

    fn build_forward(
        &self,
        tape: &mut Tape,
        history: &Mat,
        physics: &Mat,
    ) -> Result<(NodeId, Vec<(usize, NodeId)>)> {
        self.shape_check(history, physics)?;
        let mut binds = Vec::with_capacity(self.store.len());
        let mut leaf = |tape: &mut Tape, name: &str| -> NodeId {
            let idx = self
                .store
                .by_name(name)
                .unwrap_or_else(|| panic!("missing param {name}"))
                .value
                .clone();
            let id = tape.leaf(idx);
            let pidx = self
                .store
                .iter()
                .position(|p| p.name == name)
                .expect("param index");
            binds.push((pidx, id));
            id
        };

        let d = self.cfg.d_model;
        let heads = self.cfg.heads;
        let d_h = d / heads;
        let xh = tape.leaf(history.clone());

        // dual embedding with additive fusion
        let wh = leaf(tape, "embed_h.w");
        let bh = leaf(tape, "embed_h.b");
        let eh = tape.matmul(wh, xh)?;
        let mut e = tape.add_bias_col(eh, bh)?;
        if self.cfg.physics_enabled {
            let xd = tape.leaf(physics.clone());
            let wd = leaf(tape, "embed_d.w");
            let bd = leaf(tape, "embed_d.b");
            let ed = tape.matmul(wd, xd)?;
            let ed = tape.add_bias_col(ed, bd)?;
            e = tape.add(e, ed)?;
        }
        let pos = tape.leaf(self.pos.clone());
        let mut x = tape.add(e, pos)?;

        for i in 0..self.cfg.depth {
            // attention sublayer (pre-norm)
            let g1 = leaf(tape, &format!("blk{i}.ln1.g"));
            let b1 = leaf(tape, &format!("blk{i}.ln1.b"));
            let normed = tape.layer_norm_cols(x, g1, b1)?;

            let wq = leaf(tape, &format!("blk{i}.attn.wq"));
            let bq = leaf(tape, &format!("blk{i}.attn.bq"));
            let wk = leaf(tape, &format!("blk{i}.attn.wk"));
            let bk = leaf(tape, &format!("blk{i}.attn.bk"));
            let wv = leaf(tape, &format!("blk{i}.attn.wv"));
            let bv = leaf(tape, &format!("blk{i}.attn.bv"));
            let wo = leaf(tape, &format!("blk{i}.attn.wo"));
            let bo = leaf(tape, &format!("blk{i}.attn.bo"));

            let q = tape.matmul(wq, normed)?;
            let q = tape.add_bias_col(q, bq)?;
            let k = tape.matmul(wk, normed)?;
            let k = tape.add_bias_col(k, bk)?;
            let v = tape.matmul(wv, normed)?;
            let v = tape.add_bias_col(v, bv)?;

            let mut head_outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_rows(q, h * d_h, d_h)?;
                let kh = tape.slice_rows(k, h * d_h, d_h)?;
                let vh = tape.slice_rows(v, h * d_h, d_h)?;
                let qt = tape.transpose(qh);
                let scores = tape.matmul(qt, kh)?;
                let scaled = tape.scale(scores, 1.0 / (d_h as f64).sqrt());
                let attn = tape.softmax_rows(scaled, true)?;
                let at = tape.transpose(attn);
                let ctx = tape.matmul(vh, at)?;
                head_outs.push(ctx);
            }
            let ctx = tape.concat_rows(&head_outs)?;
            let proj = tape.matmul(wo, ctx)?;
            let proj = tape.add_bias_col(proj, bo)?;
            x = tape.add(x, proj)?;

            // MLP sublayer (pre-norm, GELU)
            let g2 = leaf(tape, &format!("blk{i}.ln2.g"));
            let b2 = leaf(tape, &format!("blk{i}.ln2.b"));
            let normed = tape.layer_norm_cols(x, g2, b2)?;
            let w1 = leaf(tape, &format!("blk{i}.mlp.w1"));
            let bb1 = leaf(tape, &format!("blk{i}.mlp.b1"));
            let w2 = leaf(tape, &format!("blk{i}.mlp.w2"));
            let bb2 = leaf(tape, &format!("blk{i}.mlp.b2"));
            let hmid = tape.matmul(w1, normed)?;
            let hmid = tape.add_bias_col(hmid, bb1)?;
            let act = tape.gelu(hmid);
            let out = tape.matmul(w2, act)?;
            let out = tape.add_bias_col(out, bb2)?;
            x = tape.add(x, out)?;
        }

        let gf = leaf(tape, "ln_f.g");
        let bf = leaf(tape, "ln_f.b");
        let z = tape.layer_norm_cols(x, gf, bf)?;

        // full-token readout: flatten d x N_P, then linear to 2L x N_F
        let flat = tape.reshape(z, d * self.cfg.n_p, 1)?;
        let hw = leaf(tape, "head.w");
        let hb = leaf(tape, "head.b");
        let o = tape.matmul(hw, flat)?;
        let o = tape.add_bias_col(o, hb)?;
        let pred = tape.reshape(o, 2 * self.cfg.l, self.cfg.n_f)?;
        Ok((pred, binds))
    }
}

/// De-normalizes a predicted `2L x N_F` matrix and reassembles the complex
/// channel: `h = x[0:L] + j x[L:2L]` per column.
pub fn reconstruct_complex(pred: &Mat, stats: &NormStats) -> Result<CMat> {
    let denormed = denorm_features(pred, stats)?;
    Ok(real_mat_to_complex(&denormed))
}

/// Two-phase training: phase 1 fits all parameter groups on the broad
/// mixture; phase 2 freezes the backbone core (when configured) and
/// fine-tunes norms, embeddings and the head on the target scenario.
pub fn pretrain_then_finetune(
    p: &mut Predictor,
    broad: &DatasetSplit,
    target: &DatasetSplit,
    tc_pretrain: &TrainConfig,
    tc_finetune: &TrainConfig,
) -> Result<(TrainLog, TrainLog)> {
    p.set_frozen(false);
    let log1 = train_model(p, broad, tc_pretrain)?;
    if p.cfg.freeze_core {
        p.set_frozen(true);
    }
    let log2 = train_model(p, target, tc_finetune)?;
    Ok((log1, log2))
}
