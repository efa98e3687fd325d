//! Minimal tensor math and reverse-mode differentiation.
//!
//! Everything is a dense row-major `f64` matrix. A [`Tape`] records the
//! forward computation; [`Tape::backward`] walks it in reverse to produce
//! gradients. Parameters live in a [`ParamStore`] grouped by role with
//! per-group trainable flags, which is how partial freezing of the backbone
//! is expressed.

mod mat;
pub(crate) mod params;
mod tape;

pub use mat::Mat;
pub use params::{read_archive, write_archive, Param, ParamStore};
pub use tape::{NodeId, Tape};

/// Sinusoidal positional encoding table, `d x t_len`.
///
/// `PE[2i, t] = sin(t / 10000^(2i/d))`, `PE[2i+1, t] = cos(.)`.
pub fn positional_encoding(t_len: usize, d: usize) -> Mat {
    let mut pe = Mat::zeros(d, t_len);
    for i in 0..d {
        let pair = (i / 2) as f64;
        let rate = (10000.0_f64).powf(2.0 * pair / d as f64);
        for t in 0..t_len {
            let arg = t as f64 / rate;
            let v = if i % 2 == 0 { arg.sin() } else { arg.cos() };
            pe.set(i, t, v);
        }
    }
    pe
}
