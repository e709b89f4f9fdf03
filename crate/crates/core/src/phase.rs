//! Free-entropy landscapes of a single block and the measurement rates at
//! which their shape changes.
//!
//! - `α_s`: smallest `α` with two local maxima of `F(ε)`
//! - `α_c`: the two maxima have equal height
//! - `α_d`: largest `α` with two local maxima (the BP threshold)
//!
//! With the conjugates held at their stationary values, `dF/dε` has the sign
//! of `mmse(ς(ε)) - ε`. Extrema are therefore located as roots of the slope
//! ratio `r(ε) = mmse(ς(ε))/ε - 1`: a `+ → -` crossing is a maximum, `- → +`
//! a minimum. `F` itself is evaluated at the extrema (heights, prominence)
//! and, for [`scan_curve`], on the full grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replica::{free_entropy, single_block_orth_delta, CouplingSpec, EnsembleKind};
use crate::scalar_channel::{mmse, BernoulliGaussianPrior};
use crate::state_evolution::{run_evolution, EvolutionOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub points: usize,
    /// Lower end of the `ε` grid; defaults to `max(1e-10, 1e-3 σ²)`.
    pub floor: Option<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            points: 2000,
            floor: None,
        }
    }
}

impl GridOptions {
    pub fn floor_for(&self, sigma2: f64) -> f64 {
        self.floor.unwrap_or_else(|| f64::max(1e-10, 1e-3 * sigma2))
    }

    /// Log-spaced grid on `[floor, upper]`.
    pub fn grid(&self, sigma2: f64, upper: f64) -> Result<Vec<f64>> {
        if self.points < 3 {
            return Err(Error::invalid(
                "points",
                "a free-entropy scan needs at least 3 grid points",
            ));
        }
        let lo = self.floor_for(sigma2);
        if !(lo > 0.0 && lo < upper) {
            return Err(Error::invalid(
                "floor",
                format!("grid floor {lo:e} must lie in (0, {upper:e})"),
            ));
        }
        let (a, b) = (lo.ln(), upper.ln());
        let n = self.points - 1;
        let mut grid: Vec<f64> = (0..=n).map(|i| (a + (b - a) * i as f64 / n as f64).exp()).collect();
        grid[0] = lo;
        grid[n] = upper;
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptions {
    pub grid: GridOptions,
    /// Absolute bisection tolerance on `α`.
    pub alpha_tol: f64,
    /// A maximum counts only if it exceeds each neighbouring minimum by this much.
    pub prominence: f64,
    /// Largest `|F(max₁) - F(max₂)|` accepted at `α_c`.
    pub equal_height_tol: f64,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions {
            grid: GridOptions::default(),
            alpha_tol: 1e-5,
            prominence: 1e-10,
            equal_height_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub eps: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEntropyCurve {
    pub alpha: f64,
    pub kind: EnsembleKind,
    pub eps_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Sorted by `ε`.
    pub maxima: Vec<Extremum>,
    /// Interior minima separating the maxima, sorted by `ε`.
    pub minima: Vec<Extremum>,
}

/// Effective precision `ς(ε)` of a single block with `γ = J = 1`.
pub fn single_block_precision(alpha: f64, sigma2: f64, eps: f64, kind: EnsembleKind) -> f64 {
    match kind {
        EnsembleKind::GaussianIid => alpha / (sigma2 + eps),
        EnsembleKind::RowOrthogonal => single_block_orth_delta(alpha, sigma2, eps) / eps,
    }
}

/// Measurement rate at which `ς` is a fixed point, with `ε = mmse(ς)`.
///
/// Gaussian: `α = ς(σ² + ε)`. Orthogonal: `α = ςε + σ²ς(1 - ςε)`.
pub fn fixed_point_rate(varsigma: f64, sigma2: f64, prior: BernoulliGaussianPrior, kind: EnsembleKind) -> Result<f64> {
    let eps = mmse(varsigma, prior)?;
    Ok(match kind {
        EnsembleKind::GaussianIid => varsigma * (sigma2 + eps),
        EnsembleKind::RowOrthogonal => varsigma * eps + sigma2 * varsigma * (1.0 - varsigma * eps),
    })
}

#[derive(Debug, Clone, Copy)]
struct Landscape {
    rho: f64,
    sigma2: f64,
    alpha: f64,
    kind: EnsembleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Max,
    Min,
}

impl Landscape {
    fn prior(&self) -> BernoulliGaussianPrior {
        BernoulliGaussianPrior::new(self.rho).expect("validated density")
    }

    fn upper(&self) -> f64 {
        if self.rho > 0.0 {
            self.rho
        } else {
            1.0
        }
    }

    fn ratio(&self, eps: f64) -> Result<f64> {
        let vs = single_block_precision(self.alpha, self.sigma2, eps, self.kind);
        Ok(mmse(vs, self.prior())? / eps - 1.0)
    }

    fn spec(&self) -> Result<CouplingSpec> {
        CouplingSpec::uncoupled(self.alpha, self.sigma2, self.prior())
    }

    /// Root of `r` in `[lo, hi]` (opposite signs at the ends), bisected in `ln ε`.
    fn refine_root(&self, mut lo: f64, mut hi: f64) -> Result<f64> {
        let lo_positive = self.ratio(lo)? > 0.0;
        while hi / lo - 1.0 > 1e-11 {
            let mid = (lo * hi).sqrt();
            if (self.ratio(mid)? > 0.0) == lo_positive {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo * hi).sqrt())
    }

    /// Golden-section search for the extremum of `sign·r` on `[lo, hi]` in `ln ε`.
    fn golden(&self, lo: f64, hi: f64, sign: f64) -> Result<(f64, f64)> {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let (mut a, mut b) = (lo.ln(), hi.ln());
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = sign * self.ratio(c.exp())?;
        let mut fd = sign * self.ratio(d.exp())?;
        for _ in 0..60 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = sign * self.ratio(c.exp())?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = sign * self.ratio(d.exp())?;
            }
            if b - a < 1e-13 {
                break;
            }
        }
        let x = if fc < fd { c } else { d };
        Ok((x.exp(), sign * fc.min(fd)))
    }

    fn ratios(&self, grid: &[f64]) -> Result<Vec<f64>> {
        map_grid(grid, |e| self.ratio(e))
    }

    /// Extrema of `F` located from the slope ratio on `grid`, before any
    /// prominence filtering.
    fn raw_extrema(&self, grid: &[f64], r: &[f64]) -> Result<Vec<(Kind, f64)>> {
        let n = grid.len();
        let mut out = Vec::new();
        if r[0] <= 0.0 {
            out.push((Kind::Max, grid[0]));
        }
        for i in 0..n - 1 {
            let (a, b) = (r[i] > 0.0, r[i + 1] > 0.0);
            if a != b {
                let root = self.refine_root(grid[i], grid[i + 1])?;
                out.push((if a { Kind::Max } else { Kind::Min }, root));
            }
            // a dip of r through zero between grid points hides a max/min pair
            if i >= 1 && (r[i - 1] > 0.0) == a && a == b {
                let sign = if a { 1.0 } else { -1.0 };
                let is_valley = sign * r[i] <= sign * r[i - 1] && sign * r[i] <= sign * r[i + 1];
                if is_valley {
                    let (x, val) = self.golden(grid[i - 1], grid[i + 1], sign)?;
                    if (val > 0.0) != a {
                        let left = self.refine_root(grid[i - 1], x)?;
                        let right = self.refine_root(x, grid[i + 1])?;
                        let (k1, k2) = if a {
                            (Kind::Max, Kind::Min)
                        } else {
                            (Kind::Min, Kind::Max)
                        };
                        out.push((k1, left));
                        out.push((k2, right));
                    }
                }
            }
        }
        if r[n - 1] > 0.0 {
            out.push((Kind::Max, grid[n - 1]));
        }
        out.sort_by(|x, y| x.1.total_cmp(&y.1));
        Ok(out)
    }

    /// Maxima and interior minima of `F` with weak maxima removed.
    fn extrema(&self, grid: &[f64], r: &[f64], prominence: f64) -> Result<(Vec<Extremum>, Vec<Extremum>)> {
        let raw = self.raw_extrema(grid, r)?;
        let spec = self.spec()?;
        let mut items: Vec<(Kind, Extremum)> = raw
            .into_iter()
            .map(|(k, eps)| {
                Ok((
                    k,
                    Extremum {
                        eps,
                        value: free_entropy(&[eps], &spec, self.kind)?,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        // A minimum must sit between two maxima.
        while matches!(items.first(), Some((Kind::Min, _))) {
            items.remove(0);
        }
        while matches!(items.last(), Some((Kind::Min, _))) {
            items.pop();
        }
        loop {
            let mut weakest: Option<(f64, usize, usize)> = None;
            for (i, (k, m)) in items.iter().enumerate() {
                if *k != Kind::Max {
                    continue;
                }
                for j in [i.checked_sub(1), Some(i + 1)].into_iter().flatten() {
                    if let Some((Kind::Min, n)) = items.get(j) {
                        let gap = m.value - n.value;
                        if weakest.map_or(true, |(g, _, _)| gap < g) {
                            weakest = Some((gap, i, j));
                        }
                    }
                }
            }
            match weakest {
                Some((gap, i, j)) if gap < prominence => {
                    let (first, second) = if i < j { (i, j) } else { (j, i) };
                    items.remove(second);
                    items.remove(first);
                }
                _ => break,
            }
        }
        let maxima = items.iter().filter(|(k, _)| *k == Kind::Max).map(|(_, e)| *e).collect();
        let minima = items.iter().filter(|(k, _)| *k == Kind::Min).map(|(_, e)| *e).collect();
        Ok((maxima, minima))
    }
}

#[cfg(feature = "parallel")]
fn map_grid<F: Fn(f64) -> Result<f64> + Sync>(grid: &[f64], f: F) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    grid.par_iter().map(|&e| f(e)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_grid<F: Fn(f64) -> Result<f64>>(grid: &[f64], f: F) -> Result<Vec<f64>> {
    grid.iter().map(|&e| f(e)).collect()
}

fn validate_point(rho: f64, sigma2: f64, alpha: f64) -> Result<()> {
    BernoulliGaussianPrior::new(rho)?;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "phase analysis needs positive noise variance"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid("alpha", "measurement rate must be positive"));
    }
    Ok(())
}

fn check_template(template: &CouplingSpec) -> Result<()> {
    if template.rows() != 1 || template.cols() != 1 {
        return Err(Error::invalid(
            "spec",
            "free-entropy scans take a single-block template",
        ));
    }
    if template.coupling(0, 0) != 1.0 {
        return Err(Error::invalid("spec", "single-block template must have J = 1"));
    }
    Ok(())
}

/// Samples `F(ε)` of the single-block template at rate `alpha` and locates its maxima.
pub fn scan_curve(
    template: &CouplingSpec,
    alpha: f64,
    kind: EnsembleKind,
    grid: &GridOptions,
    prominence: f64,
) -> Result<FreeEntropyCurve> {
    check_template(template)?;
    let rho = template.prior().rho();
    let sigma2 = template.sigma2();
    validate_point(rho, sigma2, alpha)?;
    let land = Landscape {
        rho,
        sigma2,
        alpha,
        kind,
    };
    let eps_grid = grid.grid(sigma2, land.upper())?;
    let spec = land.spec()?;
    let values = map_grid(&eps_grid, |e| free_entropy(&[e], &spec, kind))?;
    let r = land.ratios(&eps_grid)?;
    let (maxima, minima) = land.extrema(&eps_grid, &r, prominence)?;
    Ok(FreeEntropyCurve {
        alpha,
        kind,
        eps_grid,
        values,
        maxima,
        minima,
    })
}

/// Maxima of `F` at one rate, without sampling `F` on the whole grid.
pub fn maxima_at(rho: f64, sigma2: f64, alpha: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<Vec<Extremum>> {
    validate_point(rho, sigma2, alpha)?;
    let land = Landscape {
        rho,
        sigma2,
        alpha,
        kind,
    };
    let grid = opts.grid.grid(sigma2, land.upper())?;
    let r = land.ratios(&grid)?;
    Ok(land.extrema(&grid, &r, opts.prominence)?.0)
}

fn two_maxima(rho: f64, sigma2: f64, alpha: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<bool> {
    Ok(maxima_at(rho, sigma2, alpha, kind, opts)?.len() >= 2)
}

/// `(α_s, α_d)` read off the fixed-point rate curve `α(ς)`: its local
/// minimum and maximum. `None` when the curve is monotone over the grid.
pub fn fold_thresholds(rho: f64, sigma2: f64, kind: EnsembleKind, grid: &GridOptions) -> Result<Option<(f64, f64)>> {
    validate_point(rho, sigma2, 1.0)?;
    if rho == 0.0 {
        return Ok(None);
    }
    let prior = BernoulliGaussianPrior::new(rho)?;
    let floor = grid.floor_for(sigma2);
    let points = grid.points.max(3) * 2;
    let (a, b) = ((1e-3f64).ln(), (10.0 * rho / floor).ln());
    let xs: Vec<f64> = (0..points)
        .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
        .collect();
    let rate = |x: f64| fixed_point_rate(x.exp(), sigma2, prior, kind);
    let ys = map_grid(&xs, rate)?;
    let refine = |i: usize, sign: f64| -> Result<f64> {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let (mut lo, mut hi) = (xs[i - 1], xs[i + 1]);
        let mut c = hi - INV_PHI * (hi - lo);
        let mut d = lo + INV_PHI * (hi - lo);
        let (mut fc, mut fd) = (sign * rate(c)?, sign * rate(d)?);
        while hi - lo > 1e-12 {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - INV_PHI * (hi - lo);
                fc = sign * rate(c)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + INV_PHI * (hi - lo);
                fd = sign * rate(d)?;
            }
        }
        Ok(sign * fc.max(fd))
    };
    let peak = (1..points - 1).find(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1]);
    let Some(i) = peak else { return Ok(None) };
    let Some(j) = (i + 1..points - 1).find(|&j| ys[j] < ys[j - 1] && ys[j] <= ys[j + 1]) else {
        return Ok(None);
    };
    Ok(Some((refine(j, -1.0)?, refine(i, 1.0)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// Bisection bracket at termination.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha_s: Threshold,
    pub alpha_c: Threshold,
    pub alpha_d: Threshold,
}

/// Some `α` with two maxima, or a no-transition error.
fn window_seed(rho: f64, sigma2: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<f64> {
    if let Some((s, d)) = fold_thresholds(rho, sigma2, kind, &opts.grid)? {
        let mid = 0.5 * (s + d);
        if mid <= 1.0 && two_maxima(rho, sigma2, mid, kind, opts)? {
            return Ok(mid);
        }
    }
    // coarse scan of the initial bracket
    let (lo, hi) = (0.1 * rho, 1.0);
    for k in 1..64 {
        let a = lo + (hi - lo) * k as f64 / 64.0;
        if two_maxima(rho, sigma2, a, kind, opts)? {
            return Ok(a);
        }
    }
    Err(Error::NoTransition(format!(
        "no two-maxima window for {kind} at rho = {rho}, sigma2 = {sigma2:e}"
    )))
}

fn bisect<F: FnMut(f64) -> Result<bool>>(mut lo: f64, mut hi: f64, tol: f64, mut at_lo: F) -> Result<Threshold> {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if at_lo(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Threshold {
        value: 0.5 * (lo + hi),
        lower: lo,
        upper: hi,
    })
}

fn upper_edge(rho: f64, sigma2: f64, kind: EnsembleKind, seed: f64, opts: &PhaseOptions) -> Result<Threshold> {
    let hi = 1.0;
    if two_maxima(rho, sigma2, hi, kind, opts)? {
        return Err(Error::NoTransition(format!("two maxima persist up to alpha = {hi}")));
    }
    bisect(seed, hi, opts.alpha_tol, |a| two_maxima(rho, sigma2, a, kind, opts))
}

fn lower_edge(rho: f64, sigma2: f64, kind: EnsembleKind, seed: f64, opts: &PhaseOptions) -> Result<Threshold> {
    let mut lo = (0.1 * rho).min(seed * 0.5);
    while two_maxima(rho, sigma2, lo, kind, opts)? {
        lo *= 0.5;
        if lo < 1e-8 {
            return Err(Error::NoTransition("two maxima persist down to alpha = 1e-8".into()));
        }
    }
    let t = bisect(lo, seed, opts.alpha_tol, |a| {
        Ok(!two_maxima(rho, sigma2, a, kind, opts)?)
    })?;
    Ok(t)
}

/// Largest `α` whose free entropy has two local maxima.
pub fn find_alpha_d(rho: f64, sigma2: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<f64> {
    let seed = window_seed(rho, sigma2, kind, opts)?;
    Ok(upper_edge(rho, sigma2, kind, seed, opts)?.value)
}

/// Smallest `α` whose free entropy has two local maxima.
pub fn find_alpha_s(rho: f64, sigma2: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<f64> {
    let seed = window_seed(rho, sigma2, kind, opts)?;
    Ok(lower_edge(rho, sigma2, kind, seed, opts)?.value)
}

/// Rate at which the two maxima have equal height.
pub fn find_alpha_c(rho: f64, sigma2: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<f64> {
    Ok(find_thresholds(rho, sigma2, kind, opts)?.alpha_c.value)
}

/// `F(low-ε max) - F(high-ε max)`, `None` unless exactly the two-maxima shape.
fn height_gap(rho: f64, sigma2: f64, alpha: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<Option<f64>> {
    let maxima = maxima_at(rho, sigma2, alpha, kind, opts)?;
    Ok(match maxima.as_slice() {
        [first, .., last] => Some(first.value - last.value),
        _ => None,
    })
}

/// All three thresholds from one window seed.
pub fn find_thresholds(rho: f64, sigma2: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<Thresholds> {
    let seed = window_seed(rho, sigma2, kind, opts)?;
    let alpha_d = upper_edge(rho, sigma2, kind, seed, opts)?;
    let alpha_s = lower_edge(rho, sigma2, kind, seed, opts)?;
    let (mut lo, mut hi) = (alpha_s.upper, alpha_d.lower);
    let gap = |a: f64| -> Result<f64> {
        height_gap(rho, sigma2, a, kind, opts)?
            .ok_or_else(|| Error::NoTransition(format!("lost the second maximum at alpha = {a}")))
    };
    if gap(lo)? >= 0.0 || gap(hi)? <= 0.0 {
        return Err(Error::NoTransition(
            "maxima heights do not cross inside the window".into(),
        ));
    }
    let mut mid = 0.5 * (lo + hi);
    let mut value = gap(mid)?;
    for _ in 0..200 {
        if hi - lo <= opts.alpha_tol && value.abs() <= 0.1 * opts.equal_height_tol {
            break;
        }
        if value < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        value = gap(mid)?;
        if hi - lo < 1e-15 {
            break;
        }
    }
    if value.abs() > opts.equal_height_tol {
        return Err(Error::Convergence {
            what: "equal-height bisection",
            iterations: 200,
            residual: value.abs(),
        });
    }
    Ok(Thresholds {
        alpha_s,
        alpha_c: Threshold {
            value: mid,
            lower: lo,
            upper: hi,
        },
        alpha_d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpMse {
    /// `ε` of the rightmost maximum of `F`.
    pub curve: f64,
    /// Converged state evolution from `ε = ρ`.
    pub evolution: f64,
    pub iterations: usize,
}

/// Both routes to the MSE reached by message passing from the uninformed start.
pub fn bp_mse_routes(rho: f64, sigma2: f64, alpha: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<BpMse> {
    let maxima = maxima_at(rho, sigma2, alpha, kind, opts)?;
    let curve = maxima.last().map(|m| m.eps).expect("F always has a maximum");
    let spec = CouplingSpec::uncoupled(alpha, sigma2, BernoulliGaussianPrior::new(rho)?)?;
    let trace = run_evolution(&spec, kind, &EvolutionOptions::default())?;
    if !trace.converged {
        return Err(Error::Convergence {
            what: "state evolution",
            iterations: trace.iterations,
            residual: f64::NAN,
        });
    }
    Ok(BpMse {
        curve,
        evolution: trace.final_eps()[0],
        iterations: trace.iterations,
    })
}

/// MSE of the rightmost free-entropy maximum, cross-checked against state
/// evolution (the two must agree to 1e-8).
pub fn bp_mse_at(rho: f64, sigma2: f64, alpha: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<f64> {
    let routes = bp_mse_routes(rho, sigma2, alpha, kind, opts)?;
    let gap = (routes.curve - routes.evolution).abs();
    if gap > 1e-8 {
        return Err(Error::Convergence {
            what: "free-entropy and state-evolution agreement",
            iterations: routes.iterations,
            residual: gap,
        });
    }
    Ok(routes.curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub sigma2: f64,
    pub kind: EnsembleKind,
    pub alpha_d: Option<f64>,
    pub alpha_c: Option<f64>,
    pub alpha_s: Option<f64>,
    pub sharp: bool,
    /// `ok`, `no-transition`, or the error message of a failed point.
    pub status: String,
}

impl PhasePoint {
    fn compute(rho: f64, sigma2: f64, kind: EnsembleKind, opts: &PhaseOptions) -> PhasePoint {
        let mut point = PhasePoint {
            sigma2,
            kind,
            alpha_d: None,
            alpha_c: None,
            alpha_s: None,
            sharp: false,
            status: "ok".into(),
        };
        match find_thresholds(rho, sigma2, kind, opts) {
            Ok(t) => {
                point.alpha_d = Some(t.alpha_d.value);
                point.alpha_c = Some(t.alpha_c.value);
                point.alpha_s = Some(t.alpha_s.value);
                point.sharp = true;
            }
            Err(Error::NoTransition(_)) => point.status = "no-transition".into(),
            Err(e) => point.status = format!("error: {e}"),
        }
        point
    }

    pub fn failed(&self) -> bool {
        self.status.starts_with("error")
    }
}

/// One [`PhasePoint`] per noise level. Failures are recorded in the point.
pub fn sweep_phase_diagram(
    rho: f64,
    sigma2_grid: &[f64],
    kind: EnsembleKind,
    opts: &PhaseOptions,
) -> Result<Vec<PhasePoint>> {
    if sigma2_grid.is_empty() {
        return Err(Error::invalid("sigma2", "noise grid is empty"));
    }
    BernoulliGaussianPrior::new(rho)?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok(sigma2_grid
            .par_iter()
            .map(|&s| PhasePoint::compute(rho, s, kind, opts))
            .collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(sigma2_grid
            .iter()
            .map(|&s| PhasePoint::compute(rho, s, kind, opts))
            .collect())
    }
}

/// CSV with columns `sigma2,alpha_d,alpha_c,alpha_s,sharp,ensemble,status`.
pub fn sweep_csv(points: &[PhasePoint]) -> String {
    let mut out = String::from("sigma2,alpha_d,alpha_c,alpha_s,sharp,ensemble,status\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
    for p in points {
        let status = p.status.replace([',', '\n'], ";");
        let _ = writeln!(
            out,
            "{:e},{},{},{},{},{},{}",
            p.sigma2,
            cell(p.alpha_d),
            cell(p.alpha_c),
            cell(p.alpha_s),
            p.sharp,
            p.kind,
            status
        );
    }
    out
}

/// Whether a two-maxima window exists at this noise level.
pub fn is_sharp(rho: f64, sigma2: f64, kind: EnsembleKind, opts: &PhaseOptions) -> Result<bool> {
    match window_seed(rho, sigma2, kind, opts) {
        Ok(_) => Ok(true),
        Err(Error::NoTransition(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Noise level at which the two-maxima window closes, bisected in `ln σ²`
/// to relative tolerance `rel_tol`. Needs a sharp `lo` and a non-sharp `hi`.
pub fn find_sharp_limit(
    rho: f64,
    kind: EnsembleKind,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    opts: &PhaseOptions,
) -> Result<f64> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid("sigma2", "need 0 < lo < hi"));
    }
    if !is_sharp(rho, lo, kind, opts)? {
        return Err(Error::NoTransition(format!(
            "not sharp at the lower end sigma2 = {lo:e}"
        )));
    }
    if is_sharp(rho, hi, kind, opts)? {
        return Err(Error::NoTransition(format!(
            "still sharp at the upper end sigma2 = {hi:e}"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    while b / a - 1.0 > rel_tol {
        let mid = (a * b).sqrt();
        if is_sharp(rho, mid, kind, opts)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((a * b).sqrt())
}
