//! Time-varying sparse tap-delay channel generator with a Jakes Doppler
//! spectrum, complex-exponential basis expansion fitting, and per-frame
//! physical descriptors (max Doppler, velocity, SNR).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::ops::Range;

use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Descriptor floor so log-scale SNR stays finite on a dead channel.
pub const SNR_FLOOR_DB: f64 = -60.0;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub delay_bins: usize,
    pub doppler_bins: usize,
    pub channel_len: usize,
    pub nonzero_taps: usize,
    pub velocity_kmh: f64,
    pub num_rays: usize,
    pub num_clusters: usize,
    pub frame_spacing_s: f64,
    pub transmit_power: f64,
    pub noise_power: f64,
    /// e-folding length (in taps) of the exponential power-delay profile.
    pub pdp_efold_taps: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let doppler_bins = 16;
        let subcarrier_spacing_hz = 15e3;
        SimConfig {
            carrier_freq_hz: 3e9,
            subcarrier_spacing_hz,
            delay_bins: 64,
            doppler_bins,
            channel_len: 10,
            nonzero_taps: 4,
            velocity_kmh: 300.0,
            num_rays: 20,
            num_clusters: 21,
            // one OTFS frame duration N / delta_f
            frame_spacing_s: doppler_bins as f64 / subcarrier_spacing_hz,
            transmit_power: (64 * 16) as f64,
            noise_power: 1.0,
            pdp_efold_taps: 5.0,
            rng_seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nonzero_taps == 0 || self.nonzero_taps > self.channel_len {
            return Err(Error::Config(format!(
                "nonzero_taps must satisfy 0 < K <= L, got K={} L={}",
                self.nonzero_taps, self.channel_len
            )));
        }
        if self.delay_bins == 0 || self.doppler_bins == 0 || self.num_rays == 0 || self.num_clusters == 0 {
            return Err(Error::Config("M, N, num_rays, num_clusters must be >= 1".into()));
        }
        for (name, v) in [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("frame_spacing_s", self.frame_spacing_s),
            ("transmit_power", self.transmit_power),
            ("noise_power", self.noise_power),
            ("pdp_efold_taps", self.pdp_efold_taps),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.velocity_kmh < 0.0 {
            return Err(Error::Config("velocity_kmh must be >= 0".into()));
        }
        Ok(())
    }

    pub fn max_doppler_hz(&self) -> Result<f64> {
        max_doppler(self.velocity_kmh, self.carrier_freq_hz)
    }
}

/// Complex channel gains over consecutive frames; `frames[t][l]` is tap `l`
/// at frame `t`. Gains at masked-off taps are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TapSequence {
    pub frames: Vec<Vec<Complex64>>,
    pub frame_spacing_s: f64,
    pub tap_mask: Vec<bool>,
}

impl TapSequence {
    pub fn channel_len(&self) -> usize {
        self.tap_mask.len()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Least-squares complex-exponential basis fit over a frame window.
#[derive(Clone, Debug)]
pub struct BemFit {
    pub order: usize,
    /// `coeffs[q][l]`: coefficient of basis `q` at tap `l`.
    pub coeffs: Vec<Vec<Complex64>>,
    pub window_start: usize,
    pub window_len: usize,
    pub residual_energy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Descriptor {
    MaxDopplerHz,
    VelocityKmh,
    SnrDb,
}

impl Descriptor {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max_doppler_hz" => Ok(Descriptor::MaxDopplerHz),
            "velocity_kmh" => Ok(Descriptor::VelocityKmh),
            "snr_db" => Ok(Descriptor::SnrDb),
            other => Err(Error::Config(format!("unknown descriptor label: {other}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Descriptor::MaxDopplerHz => "max_doppler_hz",
            Descriptor::VelocityKmh => "velocity_kmh",
            Descriptor::SnrDb => "snr_db",
        }
    }
}

/// Per-frame physical descriptor vectors paired with a [`TapSequence`].
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsTrack {
    pub frames: Vec<Vec<f64>>,
    pub descriptor_names: Vec<Descriptor>,
}

impl PhysicsTrack {
    pub fn dim(&self) -> usize {
        self.descriptor_names.len()
    }
}

#[derive(Clone, Debug)]
pub struct FrameObservation {
    pub y: Complex64,
    pub x: Vec<Complex64>,
    pub noise_var: f64,
}

/// Maximum Doppler shift `f_d = v f_c / c` for velocity in km/h.
/// Velocity 0 is allowed as the static-channel limit.
pub fn max_doppler(velocity_kmh: f64, carrier_freq_hz: f64) -> Result<f64> {
    if velocity_kmh < 0.0 || !(carrier_freq_hz > 0.0) {
        return Err(Error::Config(format!(
            "max_doppler needs velocity >= 0 and carrier > 0, got v={velocity_kmh} f_c={carrier_freq_hz}"
        )));
    }
    Ok(velocity_kmh / 3.6 * carrier_freq_hz / SPEED_OF_LIGHT)
}

/// splitmix64; used to derive independent per-realization RNG streams from
/// (seed, index) so parallel and serial generation agree.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E3779B97F4A7C15).rotate_left(31);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Generates `num_frames` of a sparse Jakes sum-of-sinusoids channel using
/// the config's own seed.
pub fn generate_taps(cfg: &SimConfig, num_frames: usize) -> Result<TapSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    generate_taps_with(cfg, num_frames, &mut rng)
}

/// Same as [`generate_taps`] but with a caller-provided RNG stream.
///
/// Each active tap evolves as `h[t,l] = sqrt(P_l/R) sum_r exp(j(2 pi f_d
/// cos(theta_r) t dt + psi_r))` with `R = num_clusters * num_rays` rays and
/// i.i.d. uniform ray angles and phases. Tap 0 is always active;
/// the remaining K-1 active positions are drawn uniformly. Per-tap powers
/// decay exponentially along the delay axis and sum to one.
pub fn generate_taps_with(
    cfg: &SimConfig,
    num_frames: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TapSequence> {
    cfg.validate()?;
    let l = cfg.channel_len;
    let k = cfg.nonzero_taps;
    let f_d = cfg.max_doppler_hz()?;
    let dt = cfg.frame_spacing_s;
    let rays = cfg.num_rays * cfg.num_clusters;

    // tap 0 always active; draw the rest without replacement
    let mut positions: Vec<usize> = (1..l).collect();
    for i in 0..k.saturating_sub(1) {
        let j = rng.gen_range(i..positions.len());
        positions.swap(i, j);
    }
    let mut active: Vec<usize> = std::iter::once(0)
        .chain(positions.into_iter().take(k - 1))
        .collect();
    active.sort_unstable();

    let mut tap_mask = vec![false; l];
    for &p in &active {
        tap_mask[p] = true;
    }

    // exponential power-delay profile over the active taps, unit total power
    let raw: Vec<f64> = active.iter().map(|&p| (-(p as f64) / cfg.pdp_efold_taps).exp()).collect();
    let total: f64 = raw.iter().sum();
    let powers: Vec<f64> = raw.iter().map(|p| p / total).collect();

    let mut frames = vec![vec![Complex64::new(0.0, 0.0); l]; num_frames];
    for (ai, &pos) in active.iter().enumerate() {
        let amp = (powers[ai] / rays as f64).sqrt();
        // per-ray oscillator state advanced by a fixed rotation per frame
        let mut state: Vec<Complex64> = Vec::with_capacity(rays);
        let mut step: Vec<Complex64> = Vec::with_capacity(rays);
        for _ in 0..rays {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let psi = rng.gen_range(0.0..2.0 * PI);
            state.push(Complex64::from_polar(1.0, psi));
            step.push(Complex64::from_polar(1.0, 2.0 * PI * f_d * theta.cos() * dt));
        }
        for frame in frames.iter_mut() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, st) in state.iter_mut().zip(&step) {
                acc += *s;
                *s *= st;
            }
            frame[pos] = amp * acc;
        }
    }

    Ok(TapSequence { frames, frame_spacing_s: dt, tap_mask })
}

fn basis_freq(q: usize, order: usize) -> f64 {
    q as f64 - (order / 2) as f64
}

fn basis_value(q: usize, order: usize, t: usize, window_len: usize) -> Complex64 {
    Complex64::from_polar(
        1.0,
        2.0 * PI * basis_freq(q, order) * t as f64 / window_len as f64,
    )
}

/// Least-squares CE-BEM fit of every tap over `window`.
pub fn bem_fit(seq: &TapSequence, order: usize, window: Range<usize>) -> Result<BemFit> {
    let w = window.len();
    if order == 0 || order > w {
        return Err(Error::Fit(format!(
            "order must satisfy 1 <= Q <= window length, got Q={order} W={w}"
        )));
    }
    if window.end > seq.len() {
        return Err(Error::Range(format!(
            "window {}..{} exceeds sequence length {}",
            window.start,
            window.end,
            seq.len()
        )));
    }
    let l = seq.channel_len();

    // Gram matrix of the basis (shared across taps)
    let mut gram = vec![vec![Complex64::new(0.0, 0.0); order]; order];
    for (qi, row) in gram.iter_mut().enumerate() {
        for (qj, g) in row.iter_mut().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for t in 0..w {
                s += basis_value(qi, order, t, w).conj() * basis_value(qj, order, t, w);
            }
            *g = s;
        }
    }

    let mut coeffs = vec![vec![Complex64::new(0.0, 0.0); l]; order];
    let mut residual_energy = 0.0;
    for tap in 0..l {
        let mut rhs = vec![Complex64::new(0.0, 0.0); order];
        for (q, r) in rhs.iter_mut().enumerate() {
            for t in 0..w {
                *r += basis_value(q, order, t, w).conj() * seq.frames[window.start + t][tap];
            }
        }
        let sol = solve_complex(&gram, &rhs)?;
        for q in 0..order {
            coeffs[q][tap] = sol[q];
        }
        for t in 0..w {
            let mut recon = Complex64::new(0.0, 0.0);
            for q in 0..order {
                recon += sol[q] * basis_value(q, order, t, w);
            }
            residual_energy += (seq.frames[window.start + t][tap] - recon).norm_sqr();
        }
    }

    Ok(BemFit {
        order,
        coeffs,
        window_start: window.start,
        window_len: w,
        residual_energy,
    })
}

/// Evaluates the fitted expansion at absolute frame index `t`.
pub fn bem_reconstruct(fit: &BemFit, t: usize) -> Result<Vec<Complex64>> {
    if t < fit.window_start || t >= fit.window_start + fit.window_len {
        return Err(Error::Range(format!(
            "frame {t} outside fit window {}..{}",
            fit.window_start,
            fit.window_start + fit.window_len
        )));
    }
    let rel = t - fit.window_start;
    let l = fit.coeffs[0].len();
    let mut out = vec![Complex64::new(0.0, 0.0); l];
    for q in 0..fit.order {
        let phi = basis_value(q, fit.order, rel, fit.window_len);
        for (o, c) in out.iter_mut().zip(&fit.coeffs[q]) {
            *o += c * phi;
        }
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting on a small complex system.
fn solve_complex(a: &[Vec<Complex64>], b: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = b.len();
    let mut m: Vec<Vec<Complex64>> = a.iter().map(|r| r.clone()).collect();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[i][col]
                    .norm_sqr()
                    .partial_cmp(&m[j][col].norm_sqr())
                    .unwrap()
            })
            .unwrap();
        if m[pivot][col].norm_sqr() < 1e-24 {
            return Err(Error::Fit("singular basis Gram matrix".into()));
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
            let v = rhs[col];
            rhs[row] -= f * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for col in (0..n).rev() {
        let mut s = rhs[col];
        for k in (col + 1)..n {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Ok(x)
}

/// One noisy received sample `y = h^T x + n` with a random unit-power
/// transmit vector scaled to the configured total transmit power.
pub fn observe_frame(
    h: &[Complex64],
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FrameObservation> {
    cfg.validate()?;
    if h.len() != cfg.channel_len {
        return Err(Error::Shape(format!(
            "observe_frame: |h| = {} but L = {}",
            h.len(),
            cfg.channel_len
        )));
    }
    let scale = (cfg.transmit_power / cfg.channel_len as f64).sqrt();
    let x: Vec<Complex64> = (0..cfg.channel_len)
        .map(|_| scale * complex_gaussian(rng))
        .collect();
    let noise = (cfg.noise_power).sqrt() * complex_gaussian(rng);
    let y = h.iter().zip(&x).map(|(a, b)| a * b).sum::<Complex64>() + noise;
    Ok(FrameObservation { y, x, noise_var: cfg.noise_power })
}

/// Empirical SNR descriptor `P_T ||h||^2 / noise_var` in dB, clamped at the
/// configured floor.
pub fn snr_db(h: &[Complex64], cfg: &SimConfig) -> f64 {
    let energy: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    let snr = cfg.transmit_power * energy / cfg.noise_power;
    if snr <= 0.0 {
        SNR_FLOOR_DB
    } else {
        (10.0 * snr.log10()).max(SNR_FLOOR_DB)
    }
}

/// Unit-variance complex Gaussian (CN(0,1)) via Box-Muller.
fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let r = (-u1.ln()).sqrt(); // sigma^2 = 1/2 per component
    Complex64::from_polar(r, 2.0 * PI * u2)
}

/// Per-frame descriptor vectors for the selected labels.
pub fn physics_track(
    seq: &TapSequence,
    cfg: &SimConfig,
    descriptors: &[Descriptor],
    rng: &mut ChaCha8Rng,
) -> Result<PhysicsTrack> {
    if descriptors.is_empty() {
        return Err(Error::Config(
            "physics conditioning needs at least one descriptor".into(),
        ));
    }
    let f_d = cfg.max_doppler_hz()?;
    // long-term SNR: a receiver tracks its estimation SNR over many frames,
    // so the descriptor uses the realization-average channel energy rather
    // than the instantaneous (fading) per-frame energy
    let mean_energy = seq
        .frames
        .iter()
        .map(|h| h.iter().map(|v| v.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        / seq.len().max(1) as f64;
    let long_term_snr_db = {
        let snr = cfg.transmit_power * mean_energy / cfg.noise_power;
        if snr <= 0.0 { SNR_FLOOR_DB } else { (10.0 * snr.log10()).max(SNR_FLOOR_DB) }
    };
    let mut frames = Vec::with_capacity(seq.len());
    for h in &seq.frames {
        let mut v = Vec::with_capacity(descriptors.len());
        for d in descriptors {
            let val = match d {
                Descriptor::MaxDopplerHz => f_d,
                Descriptor::VelocityKmh => cfg.velocity_kmh,
                Descriptor::SnrDb => {
                    observe_frame(h, cfg, rng)?;
                    long_term_snr_db
                }
            };
            v.push(val);
        }
        frames.push(v);
    }
    Ok(PhysicsTrack { frames, descriptor_names: descriptors.to_vec() })
}
