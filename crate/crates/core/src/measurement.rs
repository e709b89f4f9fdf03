//! Concrete block measurement operators and synthetic instances.
//!
//! Orthogonal blocks are `scale · S F P / √N_p`: a column permutation `P`,
//! the unnormalized `N_p`-point DFT `F`, and a selection `S` of `M_q`
//! distinct rows. They are applied with an FFT. Gaussian blocks are dense
//! with i.i.d. circular entries of variance `J_{q,p}/N`.
//!
//! Sizes: `N_p = ⌊γ_p N⌋` with the remainder added to the last block, and
//! `M_q = round(N · M_q/N)`. The DFT scale is `√(J_{q,p} N_p / N)`, so every
//! entry has squared modulus `J_{q,p}/N` even when `γ_p N` is not an integer.

use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::{index, SliceRandom};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replica::{CouplingSpec, EnsembleKind};
use crate::rng::{complex_normal, stream_rng, NOISE_STREAM, SIGNAL_STREAM};
use crate::scalar_channel::BernoulliGaussianPrior;

/// Largest `N` (and `M`) accepted by [`dense_materialize`].
pub const DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DftBlock {
    pub n: usize,
    pub m: usize,
    pub row_selection: Vec<usize>,
    pub col_permutation: Vec<usize>,
    pub scale: f64,
}

impl DftBlock {
    pub fn new(n: usize, row_selection: Vec<usize>, col_permutation: Vec<usize>, scale: f64) -> Result<Self> {
        let m = row_selection.len();
        if m > n {
            return Err(Error::invalid(
                "row_selection",
                format!("{m} rows requested from an {n}-point DFT"),
            ));
        }
        let mut seen = vec![false; n];
        for &r in &row_selection {
            if r >= n || std::mem::replace(&mut seen[r], true) {
                return Err(Error::invalid(
                    "row_selection",
                    "row indices must be distinct and below n",
                ));
            }
        }
        let mut seen = vec![false; n];
        if col_permutation.len() != n
            || col_permutation
                .iter()
                .any(|&c| c >= n || std::mem::replace(&mut seen[c], true))
        {
            return Err(Error::invalid("col_permutation", "not a permutation of 0..n"));
        }
        Ok(DftBlock {
            n,
            m,
            row_selection,
            col_permutation,
            scale,
        })
    }

    /// Entry `(i, j)` of the block.
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        // column j of the block is DFT column k with perm[k] = j
        let k = self.col_permutation.iter().position(|&c| c == j).expect("bijective");
        self.entry_at_dft_column(i, k)
    }

    fn entry_at_dft_column(&self, i: usize, k: usize) -> Complex64 {
        let phase = -2.0 * PI * ((self.row_selection[i] * k) % self.n) as f64 / self.n as f64;
        Complex64::from_polar(self.scale / (self.n as f64).sqrt(), phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlock {
    pub m: usize,
    pub n: usize,
    /// Row-major `m × n`.
    pub entries: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Empty,
    Dft(DftBlock),
    Gaussian(GaussianBlock),
}

#[derive(Clone)]
pub struct CoupledOperator {
    spec: CouplingSpec,
    kind: EnsembleKind,
    seed: u64,
    row_sizes: Vec<usize>,
    col_sizes: Vec<usize>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
    blocks: Vec<Block>,
    forward: Vec<Option<Arc<dyn Fft<f64>>>>,
    inverse: Vec<Option<Arc<dyn Fft<f64>>>>,
}

impl fmt::Debug for CoupledOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoupledOperator")
            .field("kind", &self.kind)
            .field("seed", &self.seed)
            .field("row_sizes", &self.row_sizes)
            .field("col_sizes", &self.col_sizes)
            .finish_non_exhaustive()
    }
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

/// `(M_q, N_p)` for a total signal dimension `n`.
pub fn block_sizes(spec: &CouplingSpec, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut cols: Vec<usize> = spec.gamma().iter().map(|g| (g * n as f64).floor() as usize).collect();
    let used: usize = cols.iter().sum();
    if let Some(last) = cols.last_mut() {
        *last += n.saturating_sub(used);
    }
    let rows = (0..spec.rows())
        .map(|q| (spec.row_rate(q) * n as f64).round() as usize)
        .collect();
    (rows, cols)
}

/// Draws `n` i.i.d. samples of the prior.
pub fn sample_signal(n: usize, prior: BernoulliGaussianPrior, seed: u64) -> Vec<Complex64> {
    let mut rng = stream_rng(seed, SIGNAL_STREAM);
    (0..n).map(|_| prior.sample(&mut rng)).collect()
}

/// Builds the operator for `spec` at total signal dimension `n`.
///
/// Block `(q, p)` draws from stream `q · L_c + p`, so blocks are
/// independent of each other and of construction order.
pub fn build_coupled_operator(spec: &CouplingSpec, n: usize, seed: u64, kind: EnsembleKind) -> Result<CoupledOperator> {
    if n == 0 {
        return Err(Error::invalid("n", "signal dimension must be positive"));
    }
    let (row_sizes, col_sizes) = block_sizes(spec, n);
    let (rows, cols) = (spec.rows(), spec.cols());
    let mut blocks = Vec::with_capacity(rows * cols);
    for q in 0..rows {
        for p in 0..cols {
            let j = spec.coupling(q, p);
            let (m, np) = (row_sizes[q], col_sizes[p]);
            if j == 0.0 || m == 0 || np == 0 {
                blocks.push(Block::Empty);
                continue;
            }
            let mut rng = stream_rng(seed, (q * cols + p) as u64);
            let block = match kind {
                EnsembleKind::RowOrthogonal => {
                    if m > np {
                        return Err(Error::invalid(
                            "n",
                            format!("block ({q}, {p}) needs {m} distinct rows of a {np}-point DFT"),
                        ));
                    }
                    let selection = index::sample(&mut rng, np, m).into_vec();
                    let mut perm: Vec<usize> = (0..np).collect();
                    perm.shuffle(&mut rng);
                    let scale = (j * np as f64 / n as f64).sqrt();
                    Block::Dft(DftBlock::new(np, selection, perm, scale)?)
                }
                EnsembleKind::GaussianIid => {
                    let var = j / n as f64;
                    let entries = (0..m * np).map(|_| complex_normal(&mut rng, var)).collect();
                    Block::Gaussian(GaussianBlock { m, n: np, entries })
                }
            };
            blocks.push(block);
        }
    }
    let mut planner = FftPlanner::new();
    let mut forward = Vec::with_capacity(cols);
    let mut inverse = Vec::with_capacity(cols);
    for &np in &col_sizes {
        let used = kind == EnsembleKind::RowOrthogonal && np > 0;
        forward.push(used.then(|| planner.plan_fft_forward(np)));
        inverse.push(used.then(|| planner.plan_fft_inverse(np)));
    }
    Ok(CoupledOperator {
        spec: spec.clone(),
        kind,
        seed,
        row_offsets: offsets(&row_sizes),
        col_offsets: offsets(&col_sizes),
        row_sizes,
        col_sizes,
        blocks,
        forward,
        inverse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStatistic {
    pub q: usize,
    pub p: usize,
    pub rows: usize,
    pub cols: usize,
    /// Mean squared modulus of the block entries.
    pub empirical_variance: f64,
    /// `J_{q,p} / N`.
    pub expected_variance: f64,
    pub ratio: f64,
}

impl CoupledOperator {
    pub fn spec(&self) -> &CouplingSpec {
        &self.spec
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Total signal dimension `N`.
    pub fn n(&self) -> usize {
        *self.col_offsets.last().expect("offsets start at 0")
    }

    /// Total measurement count `M`.
    pub fn m(&self) -> usize {
        *self.row_offsets.last().expect("offsets start at 0")
    }

    pub fn row_sizes(&self) -> &[usize] {
        &self.row_sizes
    }

    pub fn col_sizes(&self) -> &[usize] {
        &self.col_sizes
    }

    pub fn block(&self, q: usize, p: usize) -> &Block {
        &self.blocks[q * self.spec.cols() + p]
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: x.len(),
            });
        }
        let mut y = vec![Complex64::new(0.0, 0.0); self.m()];
        let mut buf = Vec::new();
        for q in 0..self.spec.rows() {
            let yq = &mut y[self.row_offsets[q]..self.row_offsets[q + 1]];
            for p in 0..self.spec.cols() {
                let xp = &x[self.col_offsets[p]..self.col_offsets[p + 1]];
                match self.block(q, p) {
                    Block::Empty => {}
                    Block::Dft(b) => {
                        buf.clear();
                        buf.extend(b.col_permutation.iter().map(|&c| xp[c]));
                        self.forward[p].as_ref().expect("planned").process(&mut buf);
                        let s = b.scale / (b.n as f64).sqrt();
                        for (yi, &r) in yq.iter_mut().zip(&b.row_selection) {
                            *yi += buf[r] * s;
                        }
                    }
                    Block::Gaussian(b) => {
                        for (yi, row) in yq.iter_mut().zip(b.entries.chunks_exact(b.n)) {
                            *yi += row.iter().zip(xp).map(|(a, v)| a * v).sum::<Complex64>();
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// `x = Aᴴ y`.
    pub fn adjoint_apply(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        if y.len() != self.m() {
            return Err(Error::Dimension {
                expected: self.m(),
                got: y.len(),
            });
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut x = vec![zero; self.n()];
        let mut buf = Vec::new();
        for p in 0..self.spec.cols() {
            let xp = &mut x[self.col_offsets[p]..self.col_offsets[p + 1]];
            for q in 0..self.spec.rows() {
                let yq = &y[self.row_offsets[q]..self.row_offsets[q + 1]];
                match self.block(q, p) {
                    Block::Empty => {}
                    Block::Dft(b) => {
                        buf.clear();
                        buf.resize(b.n, zero);
                        for (&r, v) in b.row_selection.iter().zip(yq) {
                            buf[r] = *v;
                        }
                        self.inverse[p].as_ref().expect("planned").process(&mut buf);
                        let s = b.scale / (b.n as f64).sqrt();
                        for (k, &c) in b.col_permutation.iter().enumerate() {
                            xp[c] += buf[k] * s;
                        }
                    }
                    Block::Gaussian(b) => {
                        for (row, v) in b.entries.chunks_exact(b.n).zip(yq) {
                            for (xi, a) in xp.iter_mut().zip(row) {
                                *xi += a.conj() * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(x)
    }

    /// Entries of block `(q, p)` in row-major order, computed from their
    /// definition rather than through the FFT.
    pub fn block_entries(&self, q: usize, p: usize) -> Vec<Complex64> {
        let (m, n) = (self.row_sizes[q], self.col_sizes[p]);
        match self.block(q, p) {
            Block::Empty => vec![Complex64::new(0.0, 0.0); m * n],
            Block::Gaussian(b) => b.entries.clone(),
            Block::Dft(b) => {
                let mut out = vec![Complex64::new(0.0, 0.0); m * n];
                for i in 0..m {
                    for (k, &c) in b.col_permutation.iter().enumerate() {
                        out[i * n + c] = b.entry_at_dft_column(i, k);
                    }
                }
                out
            }
        }
    }

    /// Per-block empirical entry variance against `J_{q,p}/N`.
    pub fn block_statistics(&self) -> Vec<BlockStatistic> {
        let n_total = self.n() as f64;
        let mut out = Vec::new();
        for q in 0..self.spec.rows() {
            for p in 0..self.spec.cols() {
                if matches!(self.block(q, p), Block::Empty) {
                    continue;
                }
                let entries = self.block_entries(q, p);
                let emp = entries.iter().map(|a| a.norm_sqr()).sum::<f64>() / entries.len() as f64;
                let expected = self.spec.coupling(q, p) / n_total;
                out.push(BlockStatistic {
                    q,
                    p,
                    rows: self.row_sizes[q],
                    cols: self.col_sizes[p],
                    empirical_variance: emp,
                    expected_variance: expected,
                    ratio: emp / expected,
                });
            }
        }
        out
    }
}

/// Full `M × N` matrix (row-major) assembled block by block from the
/// entry definitions. Guarded to `N, M ≤` [`DENSE_LIMIT`].
pub fn dense_materialize(op: &CoupledOperator) -> Result<Vec<Vec<Complex64>>> {
    if op.n() > DENSE_LIMIT || op.m() > DENSE_LIMIT {
        return Err(Error::invalid(
            "n",
            format!("dense materialization is limited to {DENSE_LIMIT} rows and columns"),
        ));
    }
    let mut dense = vec![vec![Complex64::new(0.0, 0.0); op.n()]; op.m()];
    for q in 0..op.spec.rows() {
        for p in 0..op.spec.cols() {
            let n = op.col_sizes[p];
            let entries = op.block_entries(q, p);
            for i in 0..op.row_sizes[q] {
                let row = &mut dense[op.row_offsets[q] + i];
                row[op.col_offsets[p]..op.col_offsets[p + 1]].copy_from_slice(&entries[i * n..(i + 1) * n]);
            }
        }
    }
    Ok(dense)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub sigma: f64,
    pub seed: u64,
}

/// `y = A x + σ z` with `x` from the prior and `z` standard complex Gaussian.
pub fn gen_instance(
    op: &CoupledOperator,
    prior: BernoulliGaussianPrior,
    sigma: f64,
    seed: u64,
) -> Result<SyntheticInstance> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid("sigma", "noise magnitude must be non-negative"));
    }
    let x = sample_signal(op.n(), prior, seed);
    let mut y = op.apply(&x)?;
    if sigma > 0.0 {
        let mut rng = stream_rng(seed, NOISE_STREAM);
        for v in &mut y {
            *v += complex_normal(&mut rng, 1.0) * sigma;
        }
    }
    Ok(SyntheticInstance { x, y, sigma, seed })
}

#[derive(Serialize)]
struct InstanceHeader<'a> {
    format: &'static str,
    n: usize,
    m: usize,
    row_sizes: &'a [usize],
    col_sizes: &'a [usize],
    ensemble: EnsembleKind,
    operator_seed: u64,
    instance_seed: u64,
    sigma: f64,
    spec: serde_json::Value,
}

/// JSON header describing an instance and the operator that produced it.
pub fn instance_header(op: &CoupledOperator, inst: &SyntheticInstance) -> serde_json::Value {
    let spec: serde_json::Value = serde_json::from_str(&op.spec.to_json()).expect("spec JSON is valid");
    serde_json::to_value(InstanceHeader {
        format: "scorth-instance-v1",
        n: op.n(),
        m: op.m(),
        row_sizes: &op.row_sizes,
        col_sizes: &op.col_sizes,
        ensemble: op.kind,
        operator_seed: op.seed,
        instance_seed: inst.seed,
        sigma: inst.sigma,
        spec,
    })
    .expect("header serializes")
}

/// Two-column `re,im` CSV.
pub fn vector_csv(v: &[Complex64]) -> String {
    let mut out = String::from("re,im\n");
    for z in v {
        let _ = writeln!(out, "{:e},{:e}", z.re, z.im);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> BernoulliGaussianPrior {
        BernoulliGaussianPrior::new(0.4).unwrap()
    }

    #[test]
    fn block_sizing_puts_remainder_last() {
        let spec = CouplingSpec::new(
            vec![0.3, 0.3, 0.4],
            &[vec![0.5, 0.5, 0.375]],
            &[vec![1.0, 1.0, 1.0]],
            0.0,
            prior(),
        )
        .unwrap();
        let (rows, cols) = block_sizes(&spec, 101);
        assert_eq!(cols, vec![30, 30, 41]);
        assert_eq!(rows, vec![15]);
    }

    #[test]
    fn dft_block_validation() {
        assert!(DftBlock::new(4, vec![0, 0], vec![0, 1, 2, 3], 1.0).is_err());
        assert!(DftBlock::new(4, vec![0, 1], vec![0, 1, 1, 3], 1.0).is_err());
        assert!(DftBlock::new(2, vec![0, 1, 2], vec![0, 1], 1.0).is_err());
        let b = DftBlock::new(4, vec![1], vec![3, 2, 1, 0], 2.0).unwrap();
        // column 3 is DFT column 0
        assert!((b.entry(0, 3) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn oversubscribed_dft_is_rejected() {
        let spec = CouplingSpec::uncoupled(0.9, 0.0, prior()).unwrap();
        let spec2 = CouplingSpec::new(vec![0.5, 0.5], &[vec![1.8, 1.8]], &[vec![1.0, 1.0]], 0.0, prior()).unwrap();
        assert!(build_coupled_operator(&spec, 10, 1, EnsembleKind::RowOrthogonal).is_ok());
        assert!(build_coupled_operator(&spec2, 10, 1, EnsembleKind::RowOrthogonal).is_err());
        assert!(build_coupled_operator(&spec2, 10, 1, EnsembleKind::GaussianIid).is_ok());
    }

    #[test]
    fn dimension_checks() {
        let spec = CouplingSpec::uncoupled(0.5, 0.0, prior()).unwrap();
        let op = build_coupled_operator(&spec, 16, 3, EnsembleKind::RowOrthogonal).unwrap();
        assert!(op.apply(&[Complex64::new(0.0, 0.0); 15]).is_err());
        assert!(op.adjoint_apply(&[Complex64::new(0.0, 0.0); 9]).is_err());
        assert!(gen_instance(&op, prior(), -1.0, 0).is_err());
    }

    #[test]
    fn csv_and_header() {
        let spec = CouplingSpec::uncoupled(0.5, 0.0, prior()).unwrap();
        let op = build_coupled_operator(&spec, 8, 3, EnsembleKind::RowOrthogonal).unwrap();
        let inst = gen_instance(&op, prior(), 0.1, 9).unwrap();
        let h = instance_header(&op, &inst);
        assert_eq!(h["n"], 8);
        assert_eq!(h["m"], 4);
        assert_eq!(h["spec"]["schema"], "v1");
        let csv = vector_csv(&inst.y);
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv.lines().next(), Some("re,im"));
    }
}
