//! Per-block MSE state evolution of Bayes-optimal reconstruction.
//!
//! One iteration maps `(ε^{(t-1)}, ς^{(t-1)})` to `(ε^{(t)}, ς^{(t)})`:
//!
//! 1. `ε_p^{(t)} = mmse(Σ_q ς_{q,p}^{(t-1)})`
//! 2. orthogonal, [`Schedule::Literal`]:
//!    `Λ^{(t)} = 1/ε^{(t)} - ς^{(t-1)}`, then `Δ^{(t)}` from `Λ^{(t)}`, then
//!    `ς^{(t)} = Λ^{(t)} Δ^{(t)} / (1 - Δ^{(t)})`;
//!    orthogonal, [`Schedule::Joint`]: `(Λ, Δ, ς)` solved jointly for
//!    `ε^{(t)}` (the inner extremization run to convergence);
//!    Gaussian: `ς^{(t)}` directly from `ε^{(t)}`.
//!
//! Both orthogonal schedules share their fixed points; they differ in the
//! path taken to reach them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replica::{
    conjugate_fixed_point_with, orth_delta_row, BlockMatrix, ConjugateState, CouplingSpec, EnsembleKind,
    InnerSolveOptions, LAMBDA_FLOOR,
};
use crate::scalar_channel::mmse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// One pass of the `Λ → Δ → ς` updates per iteration, reusing `ς^{(t-1)}`.
    #[default]
    Literal,
    /// Conjugates re-solved to stationarity at every iteration.
    Joint,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Schedule::Literal),
            "joint" => Ok(Schedule::Joint),
            other => Err(Error::invalid(
                "schedule",
                format!("unknown schedule {other:?} (expected literal or joint)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionOptions {
    /// Initial per-block MSE; defaults to `ρ` in every block.
    pub init: Option<Vec<f64>>,
    /// Absolute tolerance on `max_p |ε_p^{(t)} - ε_p^{(t-1)}|`.
    pub tol: f64,
    /// Optional relative tolerance; block `p` is settled when its change is
    /// below `max(tol, rel_tol * ε_p)`.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// `ς ← (1-θ) ς_new + θ ς_old`.
    pub damping: f64,
    pub schedule: Schedule,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        EvolutionOptions {
            init: None,
            tol: 1e-12,
            rel_tol: 0.0,
            max_iter: 100_000,
            damping: 0.0,
            schedule: Schedule::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub kind: EnsembleKind,
    pub schedule: Schedule,
    /// `history[t]` is `ε^{(t)}`; `history[0]` is the initialization.
    pub history: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub final_state: ConjugateState,
    /// Iterations in which some `Λ` was clamped to stay positive.
    pub clamped_steps: Vec<usize>,
    /// A period-2 cycle (to 1e-10) was seen before convergence.
    pub oscillation: bool,
}

#[derive(Serialize)]
struct TraceSummary<'a> {
    ensemble: EnsembleKind,
    schedule: Schedule,
    converged: bool,
    iterations: usize,
    oscillation: bool,
    clamped_steps: &'a [usize],
    final_eps: &'a [f64],
    final_state: &'a ConjugateState,
}

impl EvolutionTrace {
    pub fn final_eps(&self) -> &[f64] {
        self.history.last().expect("trace holds the initialization")
    }

    /// First iteration `t` with `max_p ε_p^{(t)} < threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.history
            .iter()
            .position(|eps| eps.iter().copied().fold(f64::MIN, f64::max) < threshold)
    }

    /// CSV with columns `t, eps_1, …, eps_L`.
    pub fn to_csv(&self) -> String {
        let cols = self.history.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for p in 1..=cols {
            let _ = write!(out, ",eps_{p}");
        }
        out.push('\n');
        for (t, eps) in self.history.iter().enumerate() {
            let _ = write!(out, "{t}");
            for e in eps {
                let _ = write!(out, ",{e:e}");
            }
            out.push('\n');
        }
        out
    }

    /// Run metadata and the final conjugate state (the per-iteration
    /// history is left to the CSV).
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(TraceSummary {
            ensemble: self.kind,
            schedule: self.schedule,
            converged: self.converged,
            iterations: self.iterations,
            oscillation: self.oscillation,
            clamped_steps: &self.clamped_steps,
            final_eps: self.final_eps(),
            final_state: &self.final_state,
        })
        .expect("trace summary serializes")
    }
}

/// Initial state: `ε^{(0)}` (default `ρ`) with `ς^{(-1)} = 0`, so the first
/// orthogonal update starts from `Λ = 1/ε^{(0)}`.
pub fn initial_state(
    spec: &CouplingSpec,
    kind: EnsembleKind,
    init: Option<&[f64]>,
    schedule: Schedule,
) -> Result<(ConjugateState, bool)> {
    let rho = spec.prior().rho();
    if rho == 0.0 {
        return Err(Error::invalid("rho", "state evolution needs a nonzero density"));
    }
    let eps = match init {
        Some(e) => {
            if e.len() != spec.cols() {
                return Err(Error::Dimension {
                    expected: spec.cols(),
                    got: e.len(),
                });
            }
            if e.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("init", "initial MSE values must be positive"));
            }
            e.to_vec()
        }
        None => vec![rho; spec.cols()],
    };
    let previous = BlockMatrix::filled(spec.rows(), spec.cols(), 0.0);
    update_conjugates(eps, &previous, spec, kind, schedule)
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn update_conjugates(
    eps: Vec<f64>,
    previous: &BlockMatrix,
    spec: &CouplingSpec,
    kind: EnsembleKind,
    schedule: Schedule,
) -> Result<(ConjugateState, bool)> {
    if kind == EnsembleKind::GaussianIid || schedule == Schedule::Joint {
        return conjugate_fixed_point_with(&eps, spec, kind, &InnerSolveOptions::default());
    }
    let (rows, cols) = (spec.rows(), spec.cols());
    let mut lambda = BlockMatrix::filled(rows, cols, 0.0);
    let mut delta = BlockMatrix::filled(rows, cols, 0.0);
    let mut varsigma = BlockMatrix::filled(rows, cols, 0.0);
    let mut clamped = false;
    for q in 0..rows {
        for p in 0..cols {
            let mut l = 1.0 / eps[p];
            if spec.coupling(q, p) > 0.0 {
                l -= previous.get(q, p);
                if l <= LAMBDA_FLOOR {
                    l = LAMBDA_FLOOR;
                    clamped = true;
                }
            }
            lambda.set(q, p, l);
        }
        orth_delta_row(spec, q, lambda.row(q), delta.row_mut(q));
        for p in 0..cols {
            if spec.coupling(q, p) == 0.0 {
                continue;
            }
            let d = delta.get(q, p);
            if !(d < 1.0) {
                return Err(Error::StepFailure { q, p, delta: d });
            }
            varsigma.set(q, p, lambda.get(q, p) * d / (1.0 - d));
        }
    }
    Ok((
        ConjugateState {
            eps,
            varsigma,
            lambda,
            delta,
        },
        clamped,
    ))
}

/// One state-evolution iteration (literal schedule for the orthogonal kind).
pub fn se_step(state: &ConjugateState, spec: &CouplingSpec, kind: EnsembleKind) -> Result<ConjugateState> {
    se_step_with(state, spec, kind, Schedule::Literal).map(|(s, _)| s)
}

/// One iteration under an explicit schedule; also reports whether `Λ` was clamped.
pub fn se_step_with(
    state: &ConjugateState,
    spec: &CouplingSpec,
    kind: EnsembleKind,
    schedule: Schedule,
) -> Result<(ConjugateState, bool)> {
    let prior = spec.prior();
    let precisions = state.channel_precisions();
    if precisions.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain(
            "channel precision overflowed; the MSE is already below f64 range".into(),
        ));
    }
    let eps = precisions
        .into_iter()
        .map(|s| mmse(s, prior))
        .collect::<Result<Vec<_>>>()?;
    if eps.iter().any(|e| *e <= 0.0) {
        return Err(Error::Domain("per-block MSE underflowed to zero".into()));
    }
    update_conjugates(eps, &state.varsigma, spec, kind, schedule)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iterates [`se_step_with`] from the initialization until the per-block MSE
/// settles or `max_iter` is reached. Non-convergence is reported in the
/// trace, not as an error.
pub fn run_evolution(spec: &CouplingSpec, kind: EnsembleKind, opts: &EvolutionOptions) -> Result<EvolutionTrace> {
    if !(opts.tol >= 0.0 && opts.rel_tol >= 0.0) || (opts.tol == 0.0 && opts.rel_tol == 0.0) {
        return Err(Error::invalid("tol", "tolerance must be positive"));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter", "need at least one iteration"));
    }
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::invalid("damping", "damping must lie in [0, 1)"));
    }
    let (mut state, clamped0) = initial_state(spec, kind, opts.init.as_deref(), opts.schedule)?;
    let mut history = vec![state.eps.clone()];
    let mut clamped_steps = if clamped0 { vec![0] } else { Vec::new() };
    let mut converged = false;
    let mut oscillation = false;
    let mut iterations = 0;
    for t in 1..=opts.max_iter {
        // noise-free exact recovery: the MSE has left the floating-point range
        if state.channel_precisions().iter().any(|s| !s.is_finite()) {
            converged = true;
            break;
        }
        let (mut next, clamped) = se_step_with(&state, spec, kind, opts.schedule)?;
        if clamped {
            clamped_steps.push(t);
        }
        if opts.damping > 0.0 {
            let theta = opts.damping;
            for q in 0..spec.rows() {
                for p in 0..spec.cols() {
                    let mixed = (1.0 - theta) * next.varsigma.get(q, p) + theta * state.varsigma.get(q, p);
                    next.varsigma.set(q, p, mixed);
                }
            }
        }
        iterations = t;
        let prev = &history[t - 1];
        let settled = next
            .eps
            .iter()
            .zip(prev)
            .all(|(e, o)| (e - o).abs() <= opts.tol.max(opts.rel_tol * e));
        if !settled && t >= 2 {
            let two_back = &history[t - 2];
            if max_abs_diff(&next.eps, two_back) < 1e-10 && max_abs_diff(&next.eps, prev) >= 1e-10 {
                oscillation = true;
            }
        }
        history.push(next.eps.clone());
        state = next;
        if settled {
            converged = true;
            break;
        }
    }
    Ok(EvolutionTrace {
        kind,
        schedule: opts.schedule,
        history,
        converged,
        iterations,
        final_state: state,
        clamped_steps,
        oscillation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar_channel::BernoulliGaussianPrior;

    fn uncoupled(alpha: f64, sigma2: f64) -> CouplingSpec {
        CouplingSpec::uncoupled(alpha, sigma2, BernoulliGaussianPrior::new(0.4).unwrap()).unwrap()
    }

    #[test]
    fn gaussian_composite_update() {
        let spec = uncoupled(0.6, 1e-3);
        let (s0, _) = initial_state(&spec, EnsembleKind::GaussianIid, None, Schedule::Literal).unwrap();
        let s1 = se_step(&s0, &spec, EnsembleKind::GaussianIid).unwrap();
        let prior = spec.prior();
        let expect = mmse(0.6 / (1e-3 + 0.4), prior).unwrap();
        assert!((s1.eps[0] - expect).abs() < 1e-15);
        let s2 = se_step(&s1, &spec, EnsembleKind::GaussianIid).unwrap();
        let expect2 = mmse(0.6 / (1e-3 + expect), prior).unwrap();
        assert!((s2.eps[0] - expect2).abs() < 1e-15);
    }

    #[test]
    fn history_starts_at_initialization() {
        let spec = uncoupled(0.6, 1e-3);
        let trace = run_evolution(&spec, EnsembleKind::RowOrthogonal, &EvolutionOptions::default()).unwrap();
        assert_eq!(trace.history[0], vec![0.4]);
        assert!(trace.converged);
        assert_eq!(trace.history.len(), trace.iterations + 1);
        let custom = EvolutionOptions {
            init: Some(vec![0.3]),
            max_iter: 3,
            ..EvolutionOptions::default()
        };
        let t = run_evolution(&spec, EnsembleKind::GaussianIid, &custom).unwrap();
        assert_eq!(t.history[0], vec![0.3]);
        assert!(!t.converged);
        assert_eq!(t.iterations, 3);
    }

    #[test]
    fn noise_free_recovery_stops_cleanly() {
        let spec = uncoupled(0.7, 0.0);
        for kind in EnsembleKind::ALL {
            let trace = run_evolution(
                &spec,
                kind,
                &EvolutionOptions {
                    tol: 1e-300,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(trace.converged);
            assert!(trace.final_eps()[0] < 1e-250, "{kind}: {:?}", trace.final_eps());
        }
    }

    #[test]
    fn option_validation() {
        let spec = uncoupled(0.6, 1e-3);
        for bad in [
            EvolutionOptions {
                tol: 0.0,
                ..Default::default()
            },
            EvolutionOptions {
                max_iter: 0,
                ..Default::default()
            },
            EvolutionOptions {
                damping: 1.0,
                ..Default::default()
            },
            EvolutionOptions {
                init: Some(vec![0.1, 0.1]),
                ..Default::default()
            },
        ] {
            assert!(run_evolution(&spec, EnsembleKind::GaussianIid, &bad).is_err());
        }
        let empty = CouplingSpec::uncoupled(0.6, 1e-3, BernoulliGaussianPrior::new(0.0).unwrap()).unwrap();
        assert!(run_evolution(&empty, EnsembleKind::GaussianIid, &EvolutionOptions::default()).is_err());
    }

    #[test]
    fn delta_at_or_above_one_is_a_step_failure() {
        // α > 1 on a single block drives Δ past 1 once Λ is large
        let spec = uncoupled(1.5, 1e-6);
        let err = run_evolution(&spec, EnsembleKind::RowOrthogonal, &EvolutionOptions::default()).unwrap_err();
        assert!(matches!(err, Error::StepFailure { q: 0, p: 0, .. }), "{err:?}");
    }

    #[test]
    fn csv_layout() {
        let spec = uncoupled(0.6, 1e-3);
        let opts = EvolutionOptions {
            max_iter: 2,
            ..Default::default()
        };
        let trace = run_evolution(&spec, EnsembleKind::GaussianIid, &opts).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,eps_1");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,4e-1"));
        let meta = trace.summary_json();
        assert_eq!(meta["iterations"], 2);
        assert_eq!(meta["ensemble"], "gaussian");
    }
}
