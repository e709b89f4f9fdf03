//! Scalar complex AWGN channel `y = x + z / sqrt(ς)` with a Bernoulli-Gaussian
//! prior on `x`: posterior mean, exact MMSE and a Monte-Carlo check of it.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadratureOptions};
use crate::rng::{complex_normal, stream_rng, MC_STREAM_BASE};

/// Sparse prior: zero with probability `1 - rho`, standard complex Gaussian
/// (unit variance) otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BernoulliGaussianPrior {
    rho: f64,
}

impl BernoulliGaussianPrior {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid("rho", format!("density must lie in [0, 1], got {rho}")));
        }
        Ok(BernoulliGaussianPrior { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `E|x|^2`; equal to the density since the nonzero part has unit variance.
    pub fn second_moment(&self) -> f64 {
        self.rho
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        // Both draws are always taken so the stream layout does not depend on rho.
        let active = rng.random::<f64>() < self.rho;
        let g = complex_normal(rng, 1.0);
        if active {
            g
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

impl TryFrom<f64> for BernoulliGaussianPrior {
    type Error = Error;

    fn try_from(rho: f64) -> Result<Self> {
        Self::new(rho)
    }
}

impl From<BernoulliGaussianPrior> for f64 {
    fn from(p: BernoulliGaussianPrior) -> f64 {
        p.rho
    }
}

/// Effective scalar channel with precision `varsigma` (inverse noise variance).
/// `varsigma = 0` carries no information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarChannel {
    varsigma: f64,
}

impl ScalarChannel {
    pub fn new(varsigma: f64) -> Result<Self> {
        if !(varsigma.is_finite() && varsigma >= 0.0) {
            return Err(Error::invalid(
                "varsigma",
                format!("precision must be finite and non-negative, got {varsigma}"),
            ));
        }
        Ok(ScalarChannel { varsigma })
    }

    pub fn varsigma(&self) -> f64 {
        self.varsigma
    }
}

/// `log(e^a + e^b)` without overflow.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Posterior mean `E{x | y}`.
///
/// The weight of the "nonzero" hypothesis is a ratio of two Gaussian
/// densities; it is formed in log space so large `|y|^2 ς` cannot overflow.
/// With `ς = 0` the observation is pure noise and the prior mean `0` is
/// returned.
pub fn posterior_mean(y: Complex64, channel: ScalarChannel, prior: BernoulliGaussianPrior) -> Result<Complex64> {
    if !(y.re.is_finite() && y.im.is_finite()) {
        return Err(Error::invalid("y", "observation must be finite"));
    }
    let s = channel.varsigma;
    let rho = prior.rho;
    if s == 0.0 || rho == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let shrink = s / (1.0 + s);
    if rho == 1.0 {
        return Ok(y * shrink);
    }
    let logit = (rho / (1.0 - rho)).ln() - s.ln_1p() + y.norm_sqr() * s * shrink;
    Ok(y * (sigmoid(logit) * shrink))
}

fn internal_quadrature() -> QuadratureOptions {
    QuadratureOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        max_intervals: 4000,
    }
}

/// Smallest `T >= 40` with `(T + 1) e^{-T} <= bound`.
pub(crate) fn exp_tail_cutoff(bound: f64) -> f64 {
    let mut t: f64 = 40.0;
    while (t + 1.0) * (-t).exp() > bound {
        t += 2.0;
    }
    t
}

/// Breakpoints on `[0, end]` clustered around a transition at `center` of
/// width `width`, plus the bulk of an `e^{-t}` weight near the origin.
pub(crate) fn transition_points(center: f64, width: f64, end: f64) -> Vec<f64> {
    let mut pts = vec![0.0, end.min(1.0), end.min(4.0), end];
    if center.is_finite() && width.is_finite() && width > 0.0 {
        for k in [-16.0, -8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let x = center + k * width;
            if x > 0.0 && x < end {
                pts.push(x);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Minimum mean-square error of the scalar channel at precision `varsigma`.
///
/// After reducing the circular complex Gaussian average to a radial integral
/// in `t = |z|^2`, the expression
/// `ρ - ρ²ς/(ς+1) ∫ t e^{-t} / (ρ + (1-ρ)(ς+1) e^{-tς}) dt`
/// is rearranged into the cancellation-free sum
/// `ρ/(1+ς) + ρ(1-ρ) ς/(1+ς)² ∫ s e^{-s} / (ρ + (1-ρ)(1+ς) e^{-sς/(1+ς)}) ds`,
/// which keeps full relative accuracy when the MMSE is tiny.
pub fn mmse(varsigma: f64, prior: BernoulliGaussianPrior) -> Result<f64> {
    let s = ScalarChannel::new(varsigma)?.varsigma;
    let rho = prior.rho;
    if s == 0.0 {
        return Ok(rho);
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    if rho == 1.0 {
        return Ok(1.0 / (1.0 + s));
    }
    let c = s / (1.0 + s);
    let log_a = rho.ln();
    let log_b = (1.0 - rho).ln() + s.ln_1p();
    // integrand = s e^{-s} / (ρ + (1-ρ)(1+ς) e^{-cs}) = s exp(-logaddexp(ln ρ + s, ln((1-ρ)(1+ς)) + (1-c)s))
    let f = |t: f64| {
        if t == 0.0 {
            0.0
        } else {
            t * (-log_add_exp(log_a + t, log_b + (1.0 - c) * t)).exp()
        }
    };
    let end = exp_tail_cutoff(1e-17 * rho);
    let center = (log_b - log_a) / c;
    let pts = transition_points(center, 1.0 / c, end);
    let integral = integrate(f, &pts, &internal_quadrature())?;
    Ok(rho / (1.0 + s) + rho * (1.0 - rho) * c / (1.0 + s) * integral.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_err: f64,
}

const MC_CHUNK: usize = 1 << 16;

fn mc_chunk(seed: u64, chunk: usize, len: usize, channel: ScalarChannel, prior: BernoulliGaussianPrior) -> (f64, f64) {
    let mut rng = stream_rng(seed, MC_STREAM_BASE + chunk as u64);
    let noise_var = if channel.varsigma > 0.0 {
        1.0 / channel.varsigma
    } else {
        0.0
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..len {
        let x = prior.sample(&mut rng);
        let z = complex_normal(&mut rng, 1.0);
        let y = x + z * noise_var.sqrt();
        let xhat = if channel.varsigma > 0.0 {
            posterior_mean(y, channel, prior).expect("finite observation")
        } else {
            Complex64::new(0.0, 0.0)
        };
        let e = (x - xhat).norm_sqr();
        sum += e;
        sum_sq += e * e;
    }
    (sum, sum_sq)
}

/// Monte-Carlo estimate of the MMSE: draws `x` from the prior, passes it
/// through the channel and averages `|x - E{x|y}|^2`.
///
/// Samples are split into fixed-size chunks, each with its own random stream,
/// so the result depends only on `(varsigma, prior, n_samples, seed)` and not
/// on how many threads evaluate the chunks. `varsigma = 0` is accepted and
/// uses the zero posterior mean.
pub fn mmse_mc_oracle(varsigma: f64, prior: BernoulliGaussianPrior, n_samples: usize, seed: u64) -> Result<McEstimate> {
    let channel = ScalarChannel::new(varsigma)?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "need at least one sample"));
    }
    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let chunk_len = |i: usize| MC_CHUNK.min(n_samples - i * MC_CHUNK);
    #[cfg(feature = "parallel")]
    let parts: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        (0..n_chunks)
            .into_par_iter()
            .map(|i| mc_chunk(seed, i, chunk_len(i), channel, prior))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(f64, f64)> = (0..n_chunks)
        .map(|i| mc_chunk(seed, i, chunk_len(i), channel, prior))
        .collect();
    let (sum, sum_sq) = parts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: mean,
        std_err: (var / n).sqrt(),
    })
}
