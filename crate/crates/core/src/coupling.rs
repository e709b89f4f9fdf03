//! Seeded band-diagonal coupling designs.
//!
//! Block-row `q` couples to block-columns `q-W+1 ..= q` with strength 1 and
//! to block-column `q+1` with strength `J`. Block-row 0 is the seed and is
//! measured at a higher rate; all other rows use the bulk rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replica::CouplingSpec;
use crate::scalar_channel::BernoulliGaussianPrior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedingParams {
    /// Number of blocks `L` (rows and columns).
    pub blocks: usize,
    /// Band width `W ≥ 1`.
    pub width: usize,
    pub alpha_seed: f64,
    pub alpha_bulk: f64,
    /// Strength of the single super-diagonal link.
    pub j: f64,
    pub sigma2: f64,
    pub rho: f64,
}

/// Builds the square `L × L` design with uniform block fractions `γ_p = 1/L`.
pub fn build_seeding_spec(params: &SeedingParams) -> Result<CouplingSpec> {
    let l = params.blocks;
    if l == 0 {
        return Err(Error::invalid("blocks", "need at least one block"));
    }
    if params.width == 0 || params.width > l {
        return Err(Error::invalid("width", "band width must lie in 1..=blocks"));
    }
    if !(params.j.is_finite() && params.j >= 0.0) {
        return Err(Error::invalid("j", "coupling strength must be non-negative"));
    }
    for (name, v) in [("alpha_seed", params.alpha_seed), ("alpha_bulk", params.alpha_bulk)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, "rate must be positive"));
        }
    }
    let w = params.width;
    let coupling: Vec<Vec<f64>> = (0..l)
        .map(|q| {
            (0..l)
                .map(|p| {
                    if p <= q && q - p < w {
                        1.0
                    } else if p == q + 1 {
                        params.j
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let alpha: Vec<Vec<f64>> = (0..l)
        .map(|q| vec![if q == 0 { params.alpha_seed } else { params.alpha_bulk }; l])
        .collect();
    let prior = BernoulliGaussianPrior::new(params.rho)?;
    CouplingSpec::new(vec![1.0 / l as f64; l], &alpha, &coupling, params.sigma2, prior)
}

/// Overall measurement rate `(α_seed + (L-1) α_bulk) / L`.
pub fn overall_rate(params: &SeedingParams) -> f64 {
    let l = params.blocks as f64;
    (params.alpha_seed + (l - 1.0) * params.alpha_bulk) / l
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SeedingParams {
        SeedingParams {
            blocks: 5,
            width: 2,
            alpha_seed: 0.7,
            alpha_bulk: 0.49,
            j: 0.5,
            sigma2: 1e-6,
            rho: 0.4,
        }
    }

    #[test]
    fn band_structure() {
        let spec = build_seeding_spec(&params()).unwrap();
        let expect = [
            [1.0, 0.5, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.5, 0.0, 0.0],
            [0.0, 1.0, 1.0, 0.5, 0.0],
            [0.0, 0.0, 1.0, 1.0, 0.5],
            [0.0, 0.0, 0.0, 1.0, 1.0],
        ];
        for q in 0..5 {
            for p in 0..5 {
                assert_eq!(spec.coupling(q, p), expect[q][p], "({q},{p})");
            }
        }
        assert_eq!(spec.alpha(0, 3), 0.7);
        assert_eq!(spec.alpha(3, 0), 0.49);
        assert!((spec.row_rate(0) - 0.7 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn overall_rate_matches_spec() {
        let p = params();
        let spec = build_seeding_spec(&p).unwrap();
        assert!((overall_rate(&p) - spec.overall_rate()).abs() < 1e-15);
        assert!((overall_rate(&p) - (0.7 + 4.0 * 0.49) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn single_block_is_uncoupled() {
        let p = SeedingParams {
            blocks: 1,
            width: 1,
            ..params()
        };
        let spec = build_seeding_spec(&p).unwrap();
        let plain = CouplingSpec::uncoupled(0.7, 1e-6, BernoulliGaussianPrior::new(0.4).unwrap()).unwrap();
        assert_eq!(spec, plain);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(build_seeding_spec(&SeedingParams { blocks: 0, ..params() }).is_err());
        assert!(build_seeding_spec(&SeedingParams { width: 0, ..params() }).is_err());
        assert!(build_seeding_spec(&SeedingParams { width: 6, ..params() }).is_err());
        assert!(build_seeding_spec(&SeedingParams { j: -1.0, ..params() }).is_err());
        assert!(build_seeding_spec(&SeedingParams { rho: 1.5, ..params() }).is_err());
    }
}
