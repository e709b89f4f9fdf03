//! Seeded randomness. Every random quantity in the crate is drawn from a
//! ChaCha20 stream selected by `(seed, stream)`, so results are reproducible
//! across platforms and independent of evaluation order.
//!
//! Stream layout:
//! - `0..2^32`: measurement-operator blocks, stream `q * L_c + p`
//! - [`SIGNAL_STREAM`], [`NOISE_STREAM`]: synthetic instances
//! - [`MC_STREAM_BASE`]` + chunk`: Monte-Carlo oracle chunks

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub const SIGNAL_STREAM: u64 = 1 << 40;
pub const NOISE_STREAM: u64 = (1 << 40) + 1;
pub const MC_STREAM_BASE: u64 = 1 << 48;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Circularly-symmetric complex Gaussian with `E|z|^2 = variance`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}
