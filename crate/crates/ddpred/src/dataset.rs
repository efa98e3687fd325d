//! Supervised sample construction, normalization statistics, dataset splits,
//! and the bit-exact `DDP1` dataset file format.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::chansim::{PhysicsTrack, TapSequence};
use crate::nn::Mat;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DDP1";
const VERSION: u32 = 1;

/// Complex matrix used for channel targets and predictions (`L x N_F`).
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }
}

/// One supervised pair: `N_P` history frames plus descriptors, `N_F` target
/// frames. History and target use the real-on-top/imag-below `2L` stacking.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `2L x N_P`
    pub history: Mat,
    /// `K_d x N_P`
    pub physics: Mat,
    /// `2L x N_F`
    pub target: Mat,
    pub velocity_kmh: f64,
    pub max_doppler_hz: f64,
    pub sample_id: u64,
}

impl Sample {
    pub fn feature_dim(&self) -> usize {
        self.history.rows()
    }

    pub fn n_p(&self) -> usize {
        self.history.cols()
    }

    pub fn n_f(&self) -> usize {
        self.target.cols()
    }

    pub fn k_d(&self) -> usize {
        self.physics.rows()
    }

    /// Target as a complex `L x N_F` matrix.
    pub fn target_complex(&self) -> CMat {
        real_mat_to_complex(&self.target)
    }
}

/// Per-feature z-score statistics, fitted on the training split only.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub physics_mean: Vec<f64>,
    pub physics_std: Vec<f64>,
}

impl NormStats {
    /// Identity stats (no-op normalization) for the given dimensions.
    pub fn identity(feature_dim: usize, k_d: usize) -> Self {
        NormStats {
            mean: vec![0.0; feature_dim],
            std: vec![1.0; feature_dim],
            physics_mean: vec![0.0; k_d],
            physics_std: vec![1.0; k_d],
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: NormStats,
}

impl DatasetSplit {
    pub fn feature_dim(&self) -> usize {
        self.stats.mean.len()
    }

    pub fn all_len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// Dimension check against a consumer's expectations (e.g. a checkpoint).
    pub fn check_dims(&self, l: usize, n_p: usize, n_f: usize, k_d: usize) -> Result<()> {
        let probe = self
            .train
            .first()
            .or(self.val.first())
            .or(self.test.first())
            .ok_or_else(|| Error::Config("empty dataset".into()))?;
        if probe.feature_dim() != 2 * l
            || probe.n_p() != n_p
            || probe.n_f() != n_f
            || probe.k_d() != k_d
        {
            return Err(Error::Shape(format!(
                "dataset has 2L={} N_P={} N_F={} K_d={}, consumer expects 2L={} N_P={} N_F={} K_d={}",
                probe.feature_dim(),
                probe.n_p(),
                probe.n_f(),
                probe.k_d(),
                2 * l,
                n_p,
                n_f,
                k_d
            )));
        }
        Ok(())
    }
}

/// `concat(Re(h), Im(h))`.
pub fn complex_to_real(h: &[Complex64]) -> Vec<f64> {
    h.iter().map(|v| v.re).chain(h.iter().map(|v| v.im)).collect()
}

pub fn real_to_complex(x: &[f64]) -> Vec<Complex64> {
    let l = x.len() / 2;
    (0..l).map(|i| Complex64::new(x[i], x[l + i])).collect()
}

/// Columns of `m` (a `2L x T` stacked matrix) as a complex `L x T` matrix.
pub fn real_mat_to_complex(m: &Mat) -> CMat {
    let l = m.rows() / 2;
    let mut out = CMat::zeros(l, m.cols());
    for c in 0..m.cols() {
        for r in 0..l {
            out.set(r, c, Complex64::new(m.get(r, c), m.get(l + r, c)));
        }
    }
    out
}

/// Sliding-window samples: sample `k` covers frames
/// `[k*stride, k*stride + n_p + n_f)`. Too-short sequences yield an empty
/// list rather than an error.
pub fn make_samples(
    seq: &TapSequence,
    track: &PhysicsTrack,
    n_p: usize,
    n_f: usize,
    stride: usize,
    velocity_kmh: f64,
    max_doppler_hz: f64,
) -> Result<Vec<Sample>> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    if track.frames.len() != seq.len() {
        return Err(Error::Shape("physics track length differs from sequence".into()));
    }
    let l2 = 2 * seq.channel_len();
    let k_d = track.dim();
    let window = n_p + n_f;
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= seq.len() {
        let mut history = Mat::zeros(l2, n_p);
        let mut physics = Mat::zeros(k_d, n_p);
        let mut target = Mat::zeros(l2, n_f);
        for t in 0..n_p {
            let col = complex_to_real(&seq.frames[start + t]);
            for (r, v) in col.iter().enumerate() {
                history.set(r, t, *v);
            }
            for (r, v) in track.frames[start + t].iter().enumerate() {
                physics.set(r, t, *v);
            }
        }
        for t in 0..n_f {
            let col = complex_to_real(&seq.frames[start + n_p + t]);
            for (r, v) in col.iter().enumerate() {
                target.set(r, t, *v);
            }
        }
        out.push(Sample {
            history,
            physics,
            target,
            velocity_kmh,
            max_doppler_hz,
            sample_id: 0,
        });
        start += stride;
    }
    Ok(out)
}

/// Per-feature mean/std over all history columns of the training samples.
pub fn fit_norm(train: &[Sample]) -> Result<NormStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::Config("fit_norm: empty training set".into()))?;
    let fdim = first.feature_dim();
    let k_d = first.k_d();
    let mut mean = vec![0.0; fdim];
    let mut pmean = vec![0.0; k_d];
    let mut n_cols = 0usize;
    for s in train {
        for c in 0..s.n_p() {
            for r in 0..fdim {
                mean[r] += s.history.get(r, c);
            }
            for r in 0..k_d {
                pmean[r] += s.physics.get(r, c);
            }
        }
        n_cols += s.n_p();
    }
    for m in mean.iter_mut().chain(pmean.iter_mut()) {
        *m /= n_cols as f64;
    }
    let mut var = vec![0.0; fdim];
    let mut pvar = vec![0.0; k_d];
    for s in train {
        for c in 0..s.n_p() {
            for r in 0..fdim {
                let d = s.history.get(r, c) - mean[r];
                var[r] += d * d;
            }
            for r in 0..k_d {
                let d = s.physics.get(r, c) - pmean[r];
                pvar[r] += d * d;
            }
        }
    }
    let floor = 1e-8;
    let std: Vec<f64> = var.iter().map(|v| (v / n_cols as f64).sqrt().max(floor)).collect();
    let pstd: Vec<f64> = pvar.iter().map(|v| (v / n_cols as f64).sqrt().max(floor)).collect();
    Ok(NormStats { mean, std, physics_mean: pmean, physics_std: pstd })
}

/// Z-scores history, target (same feature stats), and physics descriptors.
pub fn apply_norm(s: &Sample, stats: &NormStats) -> Result<Sample> {
    check_norm_dims(s, stats)?;
    let mut out = s.clone();
    norm_mat(&mut out.history, &stats.mean, &stats.std, false);
    norm_mat(&mut out.target, &stats.mean, &stats.std, false);
    norm_mat(&mut out.physics, &stats.physics_mean, &stats.physics_std, false);
    Ok(out)
}

pub fn invert_norm(s: &Sample, stats: &NormStats) -> Result<Sample> {
    check_norm_dims(s, stats)?;
    let mut out = s.clone();
    norm_mat(&mut out.history, &stats.mean, &stats.std, true);
    norm_mat(&mut out.target, &stats.mean, &stats.std, true);
    norm_mat(&mut out.physics, &stats.physics_mean, &stats.physics_std, true);
    Ok(out)
}

/// De-normalizes a `2L x T` feature matrix column-wise.
pub fn denorm_features(m: &Mat, stats: &NormStats) -> Result<Mat> {
    if m.rows() != stats.mean.len() {
        return Err(Error::Shape(format!(
            "denorm: {} feature rows vs {} stats entries",
            m.rows(),
            stats.mean.len()
        )));
    }
    let mut out = m.clone();
    norm_mat(&mut out, &stats.mean, &stats.std, true);
    Ok(out)
}

fn check_norm_dims(s: &Sample, stats: &NormStats) -> Result<()> {
    if s.feature_dim() != stats.mean.len() || s.k_d() != stats.physics_mean.len() {
        return Err(Error::Shape(format!(
            "sample dims (2L={}, K_d={}) do not match stats (2L={}, K_d={})",
            s.feature_dim(),
            s.k_d(),
            stats.mean.len(),
            stats.physics_mean.len()
        )));
    }
    Ok(())
}

fn norm_mat(m: &mut Mat, mean: &[f64], std: &[f64], invert: bool) {
    for r in 0..m.rows() {
        let (mu, sd) = (mean[r], std[r]);
        for v in m.row_mut(r) {
            *v = if invert { *v * sd + mu } else { (*v - mu) / sd };
        }
    }
}

/// Deterministic shuffled split; assigns sequential sample ids and fits
/// normalization statistics on the training portion only.
pub fn split(mut all: Vec<Sample>, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (tr, va, te) = ratios;
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            tr + va + te
        )));
    }
    if all.is_empty() {
        return Err(Error::Config("split: empty sample list".into()));
    }
    for (i, s) in all.iter_mut().enumerate() {
        s.sample_id = i as u64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = all.len();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        all.swap(i, j);
    }
    let n_va = (n as f64 * va).floor() as usize;
    let n_te = (n as f64 * te).floor() as usize;
    let n_tr = n - n_va - n_te;
    let test = all.split_off(n_tr + n_va);
    let val = all.split_off(n_tr);
    let train = all;
    let stats = fit_norm(&train)?;
    Ok(DatasetSplit { train, val, test, stats })
}

// ---- DDP1 file format ----

use crate::nn::params::{read_exact, read_f64, read_u32, read_u64, write_f64, write_u32, write_u64};

pub fn save_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    let probe = split
        .train
        .first()
        .or(split.val.first())
        .or(split.test.first())
        .ok_or_else(|| Error::Config("save_dataset: empty dataset".into()))?;
    let l = probe.feature_dim() / 2;
    let (n_p, n_f, k_d) = (probe.n_p(), probe.n_f(), probe.k_d());
    for s in split.train.iter().chain(&split.val).chain(&split.test) {
        if s.feature_dim() != 2 * l || s.n_p() != n_p || s.n_f() != n_f || s.k_d() != k_d {
            return Err(Error::Shape("save_dataset: inconsistent sample shapes".into()));
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    for v in [l, n_p, n_f, k_d, split.train.len(), split.val.len(), split.test.len()] {
        write_u32(&mut w, v as u32)?;
    }
    for v in split
        .stats
        .mean
        .iter()
        .chain(&split.stats.std)
        .chain(&split.stats.physics_mean)
        .chain(&split.stats.physics_std)
    {
        write_f64(&mut w, *v)?;
    }
    for s in split.train.iter().chain(&split.val).chain(&split.test) {
        write_u64(&mut w, s.sample_id)?;
        write_f64(&mut w, s.velocity_kmh)?;
        write_f64(&mut w, s.max_doppler_hz)?;
        for v in s.history.data().iter().chain(s.physics.data()).chain(s.target.data()) {
            write_f64(&mut w, *v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "dataset magic")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic(format!(
            "expected {:?}, found {:?}",
            MAGIC, magic
        )));
    }
    let version = read_u32(&mut r, "dataset version")?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let l = read_u32(&mut r, "L")? as usize;
    let n_p = read_u32(&mut r, "N_P")? as usize;
    let n_f = read_u32(&mut r, "N_F")? as usize;
    let k_d = read_u32(&mut r, "K_d")? as usize;
    let n_tr = read_u32(&mut r, "N_tr")? as usize;
    let n_va = read_u32(&mut r, "N_va")? as usize;
    let n_te = read_u32(&mut r, "N_te")? as usize;

    let mut read_vec = |n: usize, what: &str| -> Result<Vec<f64>> {
        let mut v = vec![0.0; n];
        for x in v.iter_mut() {
            *x = read_f64(&mut r, what)?;
        }
        Ok(v)
    };
    let stats = NormStats {
        mean: read_vec(2 * l, "stats mean")?,
        std: read_vec(2 * l, "stats std")?,
        physics_mean: read_vec(k_d, "stats physics mean")?,
        physics_std: read_vec(k_d, "stats physics std")?,
    };

    let mut read_sample = |what: &str| -> Result<Sample> {
        let sample_id = read_u64(&mut r, what)?;
        let velocity_kmh = read_f64(&mut r, what)?;
        let max_doppler_hz = read_f64(&mut r, what)?;
        let history = Mat::from_vec(2 * l, n_p, read_vec_inner(&mut r, 2 * l * n_p, what)?)?;
        let physics = Mat::from_vec(k_d, n_p, read_vec_inner(&mut r, k_d * n_p, what)?)?;
        let target = Mat::from_vec(2 * l, n_f, read_vec_inner(&mut r, 2 * l * n_f, what)?)?;
        Ok(Sample { history, physics, target, velocity_kmh, max_doppler_hz, sample_id })
    };
    let train: Vec<Sample> = (0..n_tr).map(|_| read_sample("train sample")).collect::<Result<_>>()?;
    let val: Vec<Sample> = (0..n_va).map(|_| read_sample("val sample")).collect::<Result<_>>()?;
    let test: Vec<Sample> = (0..n_te).map(|_| read_sample("test sample")).collect::<Result<_>>()?;
    Ok(DatasetSplit { train, val, test, stats })
}

fn read_vec_inner<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    for x in v.iter_mut() {
        *x = read_f64(r, what)?;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chansim::{generate_taps, physics_track, Descriptor, SimConfig};
    use rand::SeedableRng;

    fn seq_and_track(frames: usize) -> (TapSequence, PhysicsTrack, SimConfig) {
        let cfg = SimConfig {
            num_rays: 4,
            num_clusters: 4,
            ..SimConfig::default()
        };
        let seq = generate_taps(&cfg, frames).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let track = physics_track(&seq, &cfg, &[Descriptor::MaxDopplerHz], &mut rng).unwrap();
        (seq, track, cfg)
    }

    fn make(frames: usize, n_p: usize, n_f: usize, stride: usize) -> Vec<Sample> {
        let (seq, track, cfg) = seq_and_track(frames);
        make_samples(&seq, &track, n_p, n_f, stride, cfg.velocity_kmh, cfg.max_doppler_hz().unwrap()).unwrap()
    }

    #[test]
    fn complex_real_stacking() {
        let h = vec![Complex64::new(1.0, 2.0), Complex64::new(0.0, 0.0)];
        assert_eq!(complex_to_real(&h), vec![1.0, 0.0, 2.0, 0.0]);
        assert_eq!(complex_to_real(&[Complex64::new(0.0, 0.0)]), vec![0.0, 0.0]);
        assert_eq!(real_to_complex(&complex_to_real(&h)), h);
    }

    #[test]
    fn window_counts() {
        assert_eq!(make(20, 16, 4, 1).len(), 1);
        assert_eq!(make(24, 16, 4, 1).len(), 5);
        assert_eq!(make(19, 16, 4, 1).len(), 0);
    }

    #[test]
    fn temporal_ordering_of_target() {
        let (seq, track, cfg) = seq_and_track(24);
        let samples =
            make_samples(&seq, &track, 16, 4, 1, cfg.velocity_kmh, cfg.max_doppler_hz().unwrap())
                .unwrap();
        for (k, s) in samples.iter().enumerate() {
            // target frame 0 equals source frame at history end + 1
            let src = complex_to_real(&seq.frames[k + 16]);
            for (r, v) in src.iter().enumerate() {
                assert_eq!(s.target.get(r, 0), *v);
            }
        }
    }

    #[test]
    fn fit_norm_degenerate_variance_floored() {
        let mut samples = make(20, 4, 2, 1);
        // force all-equal feature rows
        for s in &mut samples {
            for r in 0..s.feature_dim() {
                for c in 0..s.n_p() {
                    s.history.set(r, c, 3.25);
                }
            }
        }
        let stats = fit_norm(&samples).unwrap();
        for (r, sd) in stats.std.iter().enumerate() {
            assert_eq!(*sd, 1e-8);
            let n = apply_norm(&samples[0], &stats).unwrap();
            assert_eq!(n.history.get(r, 0), 0.0);
        }
    }

    #[test]
    fn fit_norm_rejects_empty() {
        assert!(fit_norm(&[]).is_err());
    }

    #[test]
    fn norm_round_trip_identity() {
        let samples = make(24, 8, 2, 1);
        let stats = fit_norm(&samples).unwrap();
        let s = &samples[0];
        let back = invert_norm(&apply_norm(s, &stats).unwrap(), &stats).unwrap();
        for (a, b) in back.history.data().iter().zip(s.history.data()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for (a, b) in back.target.data().iter().zip(s.target.data()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn identity_stats_are_noop() {
        let samples = make(20, 4, 2, 1);
        let stats = NormStats::identity(samples[0].feature_dim(), samples[0].k_d());
        let n = apply_norm(&samples[0], &stats).unwrap();
        assert_eq!(n.history, samples[0].history);
    }

    #[test]
    fn normalized_train_set_standardized() {
        // recomputation oracle: stats of normalized set are ~(0, 1)
        let mut samples = Vec::new();
        for seed in 0..40u64 {
            let cfg = SimConfig { rng_seed: seed, num_rays: 4, num_clusters: 4, ..SimConfig::default() };
            let seq = generate_taps(&cfg, 20).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let track = physics_track(&seq, &cfg, &[Descriptor::MaxDopplerHz], &mut rng).unwrap();
            samples.extend(
                make_samples(&seq, &track, 16, 4, 4, cfg.velocity_kmh, cfg.max_doppler_hz().unwrap())
                    .unwrap(),
            );
        }
        let stats = fit_norm(&samples).unwrap();
        let normed: Vec<Sample> =
            samples.iter().map(|s| apply_norm(s, &stats).unwrap()).collect();
        let re_stats = fit_norm(&normed).unwrap();
        for (r, (m, sd)) in re_stats.mean.iter().zip(&re_stats.std).enumerate() {
            assert!(m.abs() <= 1e-10, "row {r} mean {m}");
            // rows that hit the variance floor stay floored
            if stats.std[r] > 1e-8 {
                assert!((sd - 1.0).abs() <= 1e-6, "row {r} std {sd}");
            }
        }
    }

    #[test]
    fn split_counts_and_determinism() {
        let mut all = Vec::new();
        for _ in 0..25 {
            all.extend(make(20, 4, 2, 1));
        }
        let n = all.len();
        let a = split(all.clone(), (0.8, 0.1, 0.1), 7).unwrap();
        let b = split(all.clone(), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a.train.len() + a.val.len() + a.test.len(), n);
        assert_eq!(a.val.len(), (n as f64 * 0.1).floor() as usize);
        let ids = |v: &[Sample]| -> Vec<u64> { v.iter().map(|s| s.sample_id).collect() };
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.val), ids(&b.val));
        assert_eq!(ids(&a.test), ids(&b.test));

        // union = input set, pairwise disjoint
        let mut all_ids: Vec<u64> = ids(&a.train).into_iter().chain(ids(&a.val)).chain(ids(&a.test)).collect();
        all_ids.sort_unstable();
        assert_eq!(all_ids, (0..n as u64).collect::<Vec<_>>());

        assert!(split(b.train.clone(), (0.5, 0.2, 0.2), 1).is_err());
    }

    #[test]
    fn stats_isolated_from_val_test() {
        let mut all = Vec::new();
        for _ in 0..10 {
            all.extend(make(20, 4, 2, 1));
        }
        let mut sp = split(all, (0.6, 0.2, 0.2), 3).unwrap();
        let before = sp.stats.clone();
        for s in sp.val.iter_mut().chain(sp.test.iter_mut()) {
            for v in s.history.data_mut() {
                *v += 1000.0;
            }
        }
        let recomputed = fit_norm(&sp.train).unwrap();
        assert_eq!(before, recomputed);
    }

    #[test]
    fn dataset_file_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ddp");
        let mut all = Vec::new();
        for _ in 0..10 {
            all.extend(make(20, 8, 4, 4));
        }
        let sp = split(all, (0.8, 0.1, 0.1), 11).unwrap();
        save_dataset(&sp, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.stats, sp.stats);
        assert_eq!(loaded.train.len(), sp.train.len());
        for (a, b) in loaded
            .train
            .iter()
            .chain(&loaded.val)
            .chain(&loaded.test)
            .zip(sp.train.iter().chain(&sp.val).chain(&sp.test))
        {
            assert_eq!(a, b);
            // bit-level check on the payload
            let ab: Vec<u64> = a.history.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.history.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ddp");
        let all = make(24, 8, 4, 4);
        let sp = split(all, (0.8, 0.1, 0.1), 1).unwrap();
        save_dataset(&sp, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // corrupted magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let p2 = dir.path().join("bad_magic.ddp");
        std::fs::write(&p2, &bad).unwrap();
        assert!(matches!(load_dataset(&p2), Err(Error::BadMagic(_))));

        // version mismatch
        let mut badv = bytes.clone();
        badv[4] = 99;
        let p3 = dir.path().join("bad_version.ddp");
        std::fs::write(&p3, &badv).unwrap();
        assert!(matches!(load_dataset(&p3), Err(Error::Version { .. })));

        // truncation
        let p4 = dir.path().join("short.ddp");
        std::fs::write(&p4, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_dataset(&p4), Err(Error::Truncated(_))));

        // shape mismatch against a consumer expecting different L
        let loaded = load_dataset(&path).unwrap();
        assert!(matches!(loaded.check_dims(99, 8, 4, 1), Err(Error::Shape(_))));
    }
}
