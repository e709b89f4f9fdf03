//! Replica-symmetric free entropy of the block measurement system and its
//! conjugate order parameters, for row-orthogonal and i.i.d. Gaussian blocks.

mod spec;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use spec::{BlockMatrix, CouplingSpec};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadratureOptions};
use crate::scalar_channel::{exp_tail_cutoff, log_add_exp, transition_points, BernoulliGaussianPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    /// Blocks drawn by subsampling and reordering rows of a unitary DFT.
    #[serde(rename = "orthogonal")]
    RowOrthogonal,
    #[serde(rename = "gaussian")]
    GaussianIid,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 2] = [EnsembleKind::RowOrthogonal, EnsembleKind::GaussianIid];

    pub fn name(self) -> &'static str {
        match self {
            EnsembleKind::RowOrthogonal => "orthogonal",
            EnsembleKind::GaussianIid => "gaussian",
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "orthogonal" | "orth" | "row-orthogonal" | "dft" => Ok(EnsembleKind::RowOrthogonal),
            "gaussian" | "gauss" | "iid" => Ok(EnsembleKind::GaussianIid),
            other => Err(Error::invalid(
                "ensemble",
                format!("unknown ensemble {other:?} (expected orthogonal or gaussian)"),
            )),
        }
    }
}

/// Per-block order parameters: MSE `eps[p]` and the conjugates
/// `varsigma[q][p]`, `lambda[q][p]`, `delta[q][p]`.
///
/// Blocks with zero coupling carry `varsigma = delta = 0` and
/// `lambda = 1 / eps`. For the Gaussian ensemble `lambda` and `delta` have no
/// role in the update; they are filled from `lambda = 1/eps - varsigma` and
/// `delta = varsigma * eps` so the same consistency relations hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateState {
    pub eps: Vec<f64>,
    pub varsigma: BlockMatrix,
    pub lambda: BlockMatrix,
    pub delta: BlockMatrix,
}

impl ConjugateState {
    /// Effective scalar-channel precision `Σ_q varsigma[q][p]` of each block.
    pub fn channel_precisions(&self) -> Vec<f64> {
        self.varsigma.column_sums()
    }
}

/// Controls the damped fixed-point solve for the orthogonal extremizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the previous iterate, applied to `ln Λ`.
    pub damping: f64,
}

impl Default for InnerSolveOptions {
    fn default() -> Self {
        InnerSolveOptions {
            tol: 1e-12,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

/// Smallest admissible `Λ`; solves that would go non-positive are clamped here.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Stationary point of the orthogonal `G` for one block-row.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthRow {
    pub value: f64,
    pub lambda: Vec<f64>,
    pub delta: Vec<f64>,
    /// Some `Λ` had to be clamped to [`LAMBDA_FLOOR`].
    pub clamped: bool,
}

pub(crate) fn validate_eps(eps: &[f64], spec: &CouplingSpec) -> Result<()> {
    if eps.len() != spec.cols() {
        return Err(Error::Dimension {
            expected: spec.cols(),
            got: eps.len(),
        });
    }
    if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::invalid(
            "eps",
            "per-block MSE values must be positive and finite",
        ));
    }
    Ok(())
}

/// `Δ_{q,p}` for every coupled block of row `q` given `Λ_{q,·}`.
pub(crate) fn orth_delta_row(spec: &CouplingSpec, q: usize, lambda: &[f64], out: &mut [f64]) {
    let gamma = spec.gamma();
    let mut total = spec.sigma2();
    for p in 0..spec.cols() {
        let j = spec.coupling(q, p);
        if j > 0.0 {
            total += gamma[p] * j / lambda[p];
        }
    }
    for p in 0..spec.cols() {
        let j = spec.coupling(q, p);
        out[p] = if j > 0.0 {
            spec.alpha(q, p) * (gamma[p] * j / lambda[p]) / total
        } else {
            0.0
        };
    }
}

/// Solves `Λ_{q,p} = (1 - Δ_{q,p}) / ε_p` for block-row `q`, iterating on
/// `ln Λ` with damping. Uncoupled entries are pinned at `Λ = 1/ε`.
pub fn solve_orth_row(
    eps: &[f64],
    spec: &CouplingSpec,
    q: usize,
    opts: &InnerSolveOptions,
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let cols = spec.cols();
    let mut lambda: Vec<f64> = eps.iter().map(|e| 1.0 / e).collect();
    let mut delta = vec![0.0; cols];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        orth_delta_row(spec, q, &lambda, &mut delta);
        residual = 0.0;
        let mut step_clamped = false;
        for p in 0..cols {
            if spec.coupling(q, p) == 0.0 {
                continue;
            }
            let mut target = (1.0 - delta[p]) / eps[p];
            if target <= LAMBDA_FLOOR {
                target = LAMBDA_FLOOR;
                step_clamped = true;
            }
            let diff = target.ln() - lambda[p].ln();
            residual = f64::max(residual, diff.abs());
            lambda[p] = (lambda[p].ln() + (1.0 - opts.damping) * diff).exp();
        }
        if residual <= opts.tol {
            orth_delta_row(spec, q, &lambda, &mut delta);
            return Ok((lambda, delta, step_clamped));
        }
    }
    Err(Error::Convergence {
        what: "orthogonal extremization",
        iterations: opts.max_iter,
        residual,
    })
}

/// Value of the orthogonal `G` for row `q` at given `Λ`.
fn orth_g_value(eps: &[f64], spec: &CouplingSpec, q: usize, lambda: &[f64]) -> f64 {
    let gamma = spec.gamma();
    let mut sum = 0.0;
    let mut bracket = 0.0;
    for p in 0..spec.cols() {
        if spec.coupling(q, p) == 0.0 {
            continue;
        }
        sum += gamma[p] * spec.coupling(q, p) / (spec.sigma2() * lambda[p]);
        let le = lambda[p] * eps[p];
        bracket += gamma[p] * (le - le.ln() - 1.0);
    }
    -spec.row_rate(q) * sum.ln_1p() + bracket
}

/// Orthogonal-ensemble `G` for block-row `q` at its stationary point in `Λ`.
///
/// Stationarity `∂G/∂Λ_{q,p} = 0` is equivalent to `ε_p = (1 - Δ_{q,p}) / Λ_{q,p}`;
/// that system is solved by [`solve_orth_row`]. Needs `σ² > 0`: the
/// log term diverges in the noise-free limit.
pub fn g_orth(eps: &[f64], spec: &CouplingSpec, q: usize) -> Result<OrthRow> {
    validate_eps(eps, spec)?;
    if q >= spec.rows() {
        return Err(Error::invalid("q", format!("block-row {q} out of range")));
    }
    if spec.sigma2() == 0.0 {
        return Err(Error::Domain("orthogonal G diverges at zero noise".into()));
    }
    let (lambda, delta, clamped) = solve_orth_row(eps, spec, q, &InnerSolveOptions::default())?;
    Ok(OrthRow {
        value: orth_g_value(eps, spec, q, &lambda),
        lambda,
        delta,
        clamped,
    })
}

/// Gaussian-ensemble `G` for block-row `q`: `-(M_q/N) log(1 + Σ_p γ_p J_{q,p} ε_p / σ²)`.
pub fn g_gauss(eps: &[f64], spec: &CouplingSpec, q: usize) -> Result<f64> {
    if eps.len() != spec.cols() {
        return Err(Error::Dimension {
            expected: spec.cols(),
            got: eps.len(),
        });
    }
    if q >= spec.rows() {
        return Err(Error::invalid("q", format!("block-row {q} out of range")));
    }
    if spec.sigma2() == 0.0 {
        return Err(Error::Domain("Gaussian G diverges at zero noise".into()));
    }
    let gamma = spec.gamma();
    let load: f64 = (0..spec.cols()).map(|p| gamma[p] * spec.coupling(q, p) * eps[p]).sum();
    Ok(-spec.row_rate(q) * (load / spec.sigma2()).ln_1p())
}

/// Conjugates `(ς, Λ, Δ)` stationary for a given per-block MSE `eps`.
///
/// Orthogonal: `Λ, Δ` from the row-wise extremization, then
/// `ς = ΛΔ/(1-Δ) = Δ/ε`. Gaussian: `ς_{q,p} = α_{q,p} γ_p J_{q,p} / (σ² + Σ_l γ_l J_{q,l} ε_l)`,
/// which stays finite at `σ² = 0`.
pub fn conjugate_fixed_point(eps: &[f64], spec: &CouplingSpec, kind: EnsembleKind) -> Result<ConjugateState> {
    conjugate_fixed_point_with(eps, spec, kind, &InnerSolveOptions::default()).map(|(s, _)| s)
}

pub(crate) fn conjugate_fixed_point_with(
    eps: &[f64],
    spec: &CouplingSpec,
    kind: EnsembleKind,
    opts: &InnerSolveOptions,
) -> Result<(ConjugateState, bool)> {
    validate_eps(eps, spec)?;
    let (rows, cols) = (spec.rows(), spec.cols());
    let mut varsigma = BlockMatrix::filled(rows, cols, 0.0);
    let mut lambda = BlockMatrix::filled(rows, cols, 0.0);
    let mut delta = BlockMatrix::filled(rows, cols, 0.0);
    let mut clamped = false;
    let gamma = spec.gamma();
    for q in 0..rows {
        match kind {
            EnsembleKind::RowOrthogonal => {
                let (l, d, c) = solve_orth_row(eps, spec, q, opts)?;
                clamped |= c;
                for p in 0..cols {
                    lambda.set(q, p, l[p]);
                    delta.set(q, p, d[p]);
                    if spec.coupling(q, p) > 0.0 {
                        // ΛΔ/(1-Δ) reduces to Δ/ε at the stationary point and
                        // stays finite as Δ → 1 (full-rate noise-free rows)
                        let s = if d[p] <= 1.0 {
                            d[p] / eps[p]
                        } else {
                            l[p] * d[p] / (1.0 - d[p])
                        };
                        varsigma.set(q, p, s);
                    }
                }
            }
            EnsembleKind::GaussianIid => {
                let denom = spec.sigma2() + (0..cols).map(|l| gamma[l] * spec.coupling(q, l) * eps[l]).sum::<f64>();
                for p in 0..cols {
                    let s = spec.alpha(q, p) * gamma[p] * spec.coupling(q, p) / denom;
                    varsigma.set(q, p, s);
                    lambda.set(q, p, 1.0 / eps[p] - s);
                    delta.set(q, p, s * eps[p]);
                }
            }
        }
    }
    Ok((
        ConjugateState {
            eps: eps.to_vec(),
            varsigma,
            lambda,
            delta,
        },
        clamped,
    ))
}

/// `E_y log E_x exp(-ς|y - x|²)` with `y` drawn from the same channel.
///
/// The inner average is `(1-ρ)e^{-ς|y|²} + ρ/(1+ς) e^{-ς|y|²/(1+ς)}`; the
/// outer one splits into the `x = 0` and `x ≠ 0` branches of the prior, each
/// an exponential average in `w` after scaling `|y|²`. Pulling the linear
/// part out of the logarithm leaves bounded integrands:
///
/// `-(1-ρ)/(1+ς) - ρ + (1-ρ) E_w log(ρ/(1+ς) + (1-ρ)e^{-ςw/(1+ς)})
///                    +   ρ  E_w log(ρ/(1+ς) + (1-ρ)e^{-ςw})`.
///
/// `varsigma = 0` returns the limit `-1`.
pub fn channel_term(varsigma: f64, prior: BernoulliGaussianPrior) -> Result<f64> {
    if !(varsigma.is_finite() && varsigma >= 0.0) {
        return Err(Error::invalid(
            "varsigma",
            format!("precision must be finite and non-negative, got {varsigma}"),
        ));
    }
    let s = varsigma;
    let rho = prior.rho();
    if rho == 0.0 || s == 0.0 {
        return Ok(-1.0);
    }
    if rho == 1.0 {
        return Ok(-1.0 - s.ln_1p());
    }
    let log_a = rho.ln() - s.ln_1p();
    let log_b = (1.0 - rho).ln();
    let opts = QuadratureOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        max_intervals: 4000,
    };
    // |integrand| <= |log_a| e^{-w}
    let end = exp_tail_cutoff(1e-17 / log_a.abs().max(1.0));
    let ln_ratio = log_b - log_a;

    let c1 = s / (1.0 + s);
    let zero_branch = integrate(
        |w: f64| (-w).exp() * log_add_exp(log_a, log_b - c1 * w),
        &transition_points(ln_ratio / c1, 1.0 / c1, end),
        &opts,
    )?;
    let active_branch = integrate(
        |w: f64| (-w).exp() * log_add_exp(log_a, log_b - s * w),
        &transition_points(ln_ratio / s, 1.0 / s, end),
        &opts,
    )?;
    Ok(-(1.0 - rho) / (1.0 + s) - rho + (1.0 - rho) * zero_branch.value + rho * active_branch.value)
}

/// `Σ_q G_q` evaluated at a conjugate state.
fn g_total(state: &ConjugateState, spec: &CouplingSpec, kind: EnsembleKind) -> Result<f64> {
    let mut total = 0.0;
    for q in 0..spec.rows() {
        total += match kind {
            EnsembleKind::RowOrthogonal => orth_g_value(&state.eps, spec, q, state.lambda.row(q)),
            EnsembleKind::GaussianIid => g_gauss(&state.eps, spec, q)?,
        };
    }
    Ok(total)
}

/// Free entropy at a given conjugate state (no re-solve).
pub fn free_entropy_at(state: &ConjugateState, spec: &CouplingSpec, kind: EnsembleKind) -> Result<f64> {
    if spec.sigma2() == 0.0 {
        return Err(Error::Domain("free entropy diverges at zero noise".into()));
    }
    let gamma = spec.gamma();
    let precisions = state.channel_precisions();
    let mut f = 0.0;
    for p in 0..spec.cols() {
        f += gamma[p] * channel_term(precisions[p], spec.prior())?;
        f += gamma[p] * state.eps[p] * precisions[p];
    }
    f += g_total(state, spec, kind)?;
    Ok(f + 1.0 - spec.overall_rate())
}

/// Free entropy as a function of the per-block MSE, with every conjugate
/// parameter at its stationary value for that MSE.
pub fn free_entropy(eps: &[f64], spec: &CouplingSpec, kind: EnsembleKind) -> Result<f64> {
    let state = conjugate_fixed_point(eps, spec, kind)?;
    free_entropy_at(&state, spec, kind)
}

/// Closed-form orthogonal `Δ` for a single block with `γ = J = 1`:
/// the smaller root of `(σ²/ε) Δ² - (1 + σ²/ε) Δ + α = 0`.
pub fn single_block_orth_delta(alpha: f64, sigma2: f64, eps: f64) -> f64 {
    if sigma2 == 0.0 {
        return alpha;
    }
    let k = sigma2 / eps;
    let b = 1.0 + k;
    let disc = (b * b - 4.0 * k * alpha).max(0.0);
    // rationalized smaller root, stable for small k
    2.0 * alpha / (b + disc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior(rho: f64) -> BernoulliGaussianPrior {
        BernoulliGaussianPrior::new(rho).unwrap()
    }

    #[test]
    fn ensemble_names_parse() {
        assert_eq!(
            "orthogonal".parse::<EnsembleKind>().unwrap(),
            EnsembleKind::RowOrthogonal
        );
        assert_eq!("Gaussian".parse::<EnsembleKind>().unwrap(), EnsembleKind::GaussianIid);
        assert!("wishart".parse::<EnsembleKind>().is_err());
        let json = serde_json::to_string(&EnsembleKind::RowOrthogonal).unwrap();
        assert_eq!(json, "\"orthogonal\"");
    }

    #[test]
    fn channel_term_closed_forms() {
        assert_eq!(channel_term(3.0, prior(0.0)).unwrap(), -1.0);
        let s: f64 = 1.0;
        assert!((channel_term(s, prior(1.0)).unwrap() - (-1.0 - s.ln_1p())).abs() < 1e-15);
        // ρ → 1 limit is continuous
        let near = channel_term(s, prior(1.0 - 1e-9)).unwrap();
        assert!((near - (-1.0 - s.ln_1p())).abs() < 1e-7);
    }

    #[test]
    fn g_orth_noise_free_single_block() {
        // σ² = 0 makes Δ = α independent of Λ; then Λ = (1 - α)/ε.
        let spec = CouplingSpec::uncoupled(0.5, 0.0, prior(0.4)).unwrap();
        let (lambda, delta, clamped) = solve_orth_row(&[0.1], &spec, 0, &InnerSolveOptions::default()).unwrap();
        assert!(!clamped);
        assert!((delta[0] - 0.5).abs() < 1e-15);
        assert!((lambda[0] - 5.0).abs() < 1e-10);
        assert!(matches!(g_orth(&[0.1], &spec, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn g_orth_without_coupling_vanishes() {
        // A row whose coupling is zero everywhere except one block leaves the
        // other blocks at Λ = 1/ε, where their bracket is zero.
        let spec = CouplingSpec::new(
            vec![0.5, 0.5],
            &[vec![0.6, 0.6], vec![0.6, 0.6]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            1e-3,
            prior(0.4),
        )
        .unwrap();
        let row = g_orth(&[0.2, 0.05], &spec, 0).unwrap();
        assert_eq!(row.lambda[1], 1.0 / 0.05);
        assert_eq!(row.delta[1], 0.0);
    }

    #[test]
    fn g_gauss_examples() {
        let spec = CouplingSpec::uncoupled(0.5, 0.01, prior(0.4)).unwrap();
        assert!((g_gauss(&[0.02], &spec, 0).unwrap() - (-0.5 * 3f64.ln())).abs() < 1e-15);
        assert_eq!(g_gauss(&[0.0], &spec, 0).unwrap(), 0.0);
        let doubled = CouplingSpec::uncoupled(0.5, 0.02, prior(0.4)).unwrap();
        assert_eq!(
            g_gauss(&[0.04], &doubled, 0).unwrap(),
            g_gauss(&[0.02], &spec, 0).unwrap()
        );
        let free = CouplingSpec::uncoupled(0.5, 0.0, prior(0.4)).unwrap();
        assert!(matches!(g_gauss(&[0.02], &free, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_conjugate_single_block() {
        let spec = CouplingSpec::uncoupled(0.55, 1e-3, prior(0.4)).unwrap();
        let st = conjugate_fixed_point(&[0.07], &spec, EnsembleKind::GaussianIid).unwrap();
        assert!((st.varsigma.get(0, 0) - 0.55 / (1e-3 + 0.07)).abs() < 1e-12);
    }

    #[test]
    fn orth_matches_closed_form_single_block() {
        for &(alpha, sigma2, eps) in &[(0.5, 1e-4, 0.01), (0.7, 1e-2, 1e-3), (0.3, 1.0, 0.2)] {
            let spec = CouplingSpec::uncoupled(alpha, sigma2, prior(0.4)).unwrap();
            let st = conjugate_fixed_point(&[eps], &spec, EnsembleKind::RowOrthogonal).unwrap();
            let d = single_block_orth_delta(alpha, sigma2, eps);
            assert!((st.delta.get(0, 0) - d).abs() < 1e-11);
            assert!((st.varsigma.get(0, 0) * eps - d).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_coupling_blocks_carry_no_precision() {
        let spec = CouplingSpec::new(
            vec![0.5, 0.5],
            &[vec![0.6, 0.6], vec![0.6, 0.6]],
            &[vec![1.0, 0.0], vec![0.3, 1.0]],
            1e-3,
            prior(0.4),
        )
        .unwrap();
        for kind in EnsembleKind::ALL {
            let st = conjugate_fixed_point(&[0.1, 0.2], &spec, kind).unwrap();
            assert_eq!(st.varsigma.get(0, 1), 0.0);
        }
    }

    #[test]
    fn inner_solve_reports_non_convergence() {
        let spec = CouplingSpec::uncoupled(0.5, 1e-2, prior(0.4)).unwrap();
        let opts = InnerSolveOptions {
            tol: 1e-14,
            max_iter: 2,
            damping: 0.5,
        };
        let err = solve_orth_row(&[0.01], &spec, 0, &opts).unwrap_err();
        assert!(matches!(err, Error::Convergence { .. }));
    }

    #[test]
    fn free_entropy_needs_noise() {
        let spec = CouplingSpec::uncoupled(0.5, 0.0, prior(0.4)).unwrap();
        assert!(matches!(
            free_entropy(&[0.1], &spec, EnsembleKind::GaussianIid),
            Err(Error::Domain(_))
        ));
        let spec = CouplingSpec::uncoupled(0.5, 1e-3, prior(0.4)).unwrap();
        assert!(free_entropy(&[0.1, 0.2], &spec, EnsembleKind::GaussianIid).is_err());
        assert!(free_entropy(&[-0.1], &spec, EnsembleKind::GaussianIid).is_err());
    }
}
