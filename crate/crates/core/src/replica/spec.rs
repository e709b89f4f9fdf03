use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar_channel::BernoulliGaussianPrior;

const SCHEMA: &str = "v1";

/// Dense `rows x cols` matrix of per-block quantities, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BlockMatrix {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        BlockMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::invalid("matrix", "rows have different lengths"));
        }
        Ok(BlockMatrix {
            rows: n_rows,
            cols: n_cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, q: usize, p: usize) -> f64 {
        self.data[q * self.cols + p]
    }

    pub fn set(&mut self, q: usize, p: usize, value: f64) {
        self.data[q * self.cols + p] = value;
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.cols..(q + 1) * self.cols]
    }

    pub fn row_mut(&mut self, q: usize) -> &mut [f64] {
        &mut self.data[q * self.cols..(q + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Column sums `Σ_q m[q][p]`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for q in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(q)) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &BlockMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Block structure of a (possibly spatially-coupled) measurement system.
///
/// Signal blocks `p` hold a fraction `gamma[p]` of the variables, block-row
/// `q` holds `alpha[q][p] * N_p` measurements, and block `(q, p)` has entry
/// variance `coupling[q][p] / N`. Because the number of rows in block-row `q`
/// cannot depend on `p`, `alpha[q][p] * gamma[p]` must be constant along each
/// row; construction enforces that along with `Σ gamma = 1` and that every
/// block-row and block-column has a nonzero coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecDocument", into = "SpecDocument")]
pub struct CouplingSpec {
    gamma: Vec<f64>,
    alpha: BlockMatrix,
    coupling: BlockMatrix,
    sigma2: f64,
    prior: BernoulliGaussianPrior,
}

/// On-disk JSON layout of a [`CouplingSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDocument {
    schema: String,
    gamma: Vec<f64>,
    alpha: Vec<Vec<f64>>,
    coupling: Vec<Vec<f64>>,
    sigma2: f64,
    rho: f64,
}

impl TryFrom<SpecDocument> for CouplingSpec {
    type Error = Error;

    fn try_from(doc: SpecDocument) -> Result<Self> {
        if doc.schema != SCHEMA {
            return Err(Error::invalid(
                "schema",
                format!("unsupported schema {:?}, expected {SCHEMA:?}", doc.schema),
            ));
        }
        CouplingSpec::new(
            doc.gamma,
            &doc.alpha,
            &doc.coupling,
            doc.sigma2,
            BernoulliGaussianPrior::new(doc.rho)?,
        )
    }
}

impl From<CouplingSpec> for SpecDocument {
    fn from(spec: CouplingSpec) -> Self {
        SpecDocument {
            schema: SCHEMA.to_string(),
            alpha: spec.alpha.to_rows(),
            coupling: spec.coupling.to_rows(),
            gamma: spec.gamma,
            sigma2: spec.sigma2,
            rho: spec.prior.rho(),
        }
    }
}

const SPEC_TOL: f64 = 1e-12;

impl CouplingSpec {
    pub fn new(
        gamma: Vec<f64>,
        alpha: &[Vec<f64>],
        coupling: &[Vec<f64>],
        sigma2: f64,
        prior: BernoulliGaussianPrior,
    ) -> Result<Self> {
        let alpha = BlockMatrix::from_rows(alpha).map_err(|_| Error::invalid("alpha", "ragged matrix"))?;
        let coupling = BlockMatrix::from_rows(coupling).map_err(|_| Error::invalid("coupling", "ragged matrix"))?;
        let cols = gamma.len();
        if cols == 0 {
            return Err(Error::invalid("gamma", "need at least one signal block"));
        }
        if alpha.rows() == 0 {
            return Err(Error::invalid("alpha", "need at least one measurement block-row"));
        }
        if alpha.cols() != cols {
            return Err(Error::invalid(
                "alpha",
                format!("expected {cols} columns, got {}", alpha.cols()),
            ));
        }
        if coupling.rows() != alpha.rows() || coupling.cols() != cols {
            return Err(Error::invalid(
                "coupling",
                format!(
                    "expected a {}x{cols} matrix, got {}x{}",
                    alpha.rows(),
                    coupling.rows(),
                    coupling.cols()
                ),
            ));
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::invalid("gamma", "block fractions must be positive"));
        }
        let total: f64 = gamma.iter().sum();
        if (total - 1.0).abs() > SPEC_TOL {
            return Err(Error::invalid(
                "gamma",
                format!("block fractions must sum to 1, got {total}"),
            ));
        }
        for q in 0..alpha.rows() {
            let row = alpha.row(q);
            if row.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::invalid("alpha", format!("row {q} has a non-positive rate")));
            }
            let rate = row[0] * gamma[0];
            for (p, (a, g)) in row.iter().zip(&gamma).enumerate() {
                if (a * g - rate).abs() > SPEC_TOL * rate.max(1.0) {
                    return Err(Error::invalid(
                        "alpha",
                        format!(
                            "alpha[{q}][{p}] * gamma[{p}] = {} differs from the row rate {rate}",
                            a * g
                        ),
                    ));
                }
            }
        }
        for q in 0..coupling.rows() {
            let row = coupling.row(q);
            if row.iter().any(|j| !(j.is_finite() && *j >= 0.0)) {
                return Err(Error::invalid(
                    "coupling",
                    format!("row {q} has a negative or non-finite entry"),
                ));
            }
            if row.iter().all(|j| *j == 0.0) {
                return Err(Error::invalid("coupling", format!("block-row {q} is entirely zero")));
            }
        }
        for p in 0..cols {
            if (0..coupling.rows()).all(|q| coupling.get(q, p) == 0.0) {
                return Err(Error::invalid("coupling", format!("block-column {p} is entirely zero")));
            }
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::invalid(
                "sigma2",
                format!("noise variance must be non-negative, got {sigma2}"),
            ));
        }
        Ok(CouplingSpec {
            gamma,
            alpha,
            coupling,
            sigma2,
            prior,
        })
    }

    /// Single block, `gamma = J = 1`.
    pub fn uncoupled(alpha: f64, sigma2: f64, prior: BernoulliGaussianPrior) -> Result<Self> {
        CouplingSpec::new(vec![1.0], &[vec![alpha]], &[vec![1.0]], sigma2, prior)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            // Validation failures surface through serde as custom messages.
            Error::invalid("spec", e.to_string())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn rows(&self) -> usize {
        self.alpha.rows()
    }

    pub fn cols(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn alpha(&self, q: usize, p: usize) -> f64 {
        self.alpha.get(q, p)
    }

    pub fn coupling(&self, q: usize, p: usize) -> f64 {
        self.coupling.get(q, p)
    }

    pub fn alpha_matrix(&self) -> &BlockMatrix {
        &self.alpha
    }

    pub fn coupling_matrix(&self) -> &BlockMatrix {
        &self.coupling
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn prior(&self) -> BernoulliGaussianPrior {
        self.prior
    }

    /// `M_q / N`, the same for every `p`.
    pub fn row_rate(&self, q: usize) -> f64 {
        self.alpha.get(q, 0) * self.gamma[0]
    }

    /// Overall measurement ratio `M / N = Σ_q M_q / N`.
    pub fn overall_rate(&self) -> f64 {
        (0..self.rows()).map(|q| self.row_rate(q)).sum()
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        CouplingSpec::new(
            self.gamma.clone(),
            &self.alpha.to_rows(),
            &self.coupling.to_rows(),
            sigma2,
            self.prior,
        )
    }

    /// Applies the block relabelling `perm` (new block `i` is old block
    /// `perm[i]`) to signal blocks and, when `rows == cols`, to block-rows.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.cols() {
            return Err(Error::Dimension {
                expected: self.cols(),
                got: perm.len(),
            });
        }
        let row_perm: Vec<usize> = if self.rows() == self.cols() {
            perm.to_vec()
        } else {
            (0..self.rows()).collect()
        };
        let gamma = perm.iter().map(|&p| self.gamma[p]).collect();
        let pick = |m: &BlockMatrix| -> Vec<Vec<f64>> {
            row_perm
                .iter()
                .map(|&q| perm.iter().map(|&p| m.get(q, p)).collect())
                .collect()
        };
        CouplingSpec::new(
            gamma,
            &pick(&self.alpha),
            &pick(&self.coupling),
            self.sigma2,
            self.prior,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> BernoulliGaussianPrior {
        BernoulliGaussianPrior::new(0.4).unwrap()
    }

    #[test]
    fn uncoupled_rate() {
        let s = CouplingSpec::uncoupled(0.6, 1e-4, prior()).unwrap();
        assert_eq!(s.overall_rate(), 0.6);
        assert_eq!((s.rows(), s.cols()), (1, 1));
    }

    #[test]
    fn rejects_bad_gamma() {
        let e = CouplingSpec::new(vec![0.5, 0.6], &[vec![1.0, 1.0]], &[vec![1.0, 1.0]], 0.0, prior()).unwrap_err();
        assert!(matches!(e, Error::InvalidInput { ref field, .. } if field == "gamma"));
    }

    #[test]
    fn rejects_inconsistent_row_rate() {
        let e = CouplingSpec::new(vec![0.5, 0.5], &[vec![1.0, 0.8]], &[vec![1.0, 1.0]], 0.0, prior()).unwrap_err();
        assert!(matches!(e, Error::InvalidInput { ref field, .. } if field == "alpha"));
    }

    #[test]
    fn rejects_disconnected_blocks() {
        let e = CouplingSpec::new(
            vec![0.5, 0.5],
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
            &[vec![1.0, 0.0], vec![1.0, 0.0]],
            0.0,
            prior(),
        )
        .unwrap_err();
        assert!(matches!(e, Error::InvalidInput { ref field, .. } if field == "coupling"));
        assert!(CouplingSpec::uncoupled(0.5, -1.0, prior()).is_err());
    }

    #[test]
    fn json_round_trip_and_schema() {
        let s = CouplingSpec::new(
            vec![0.25, 0.75],
            &[vec![1.2, 0.4], vec![0.8, 0.8 / 3.0]],
            &[vec![1.0, 0.5], vec![0.0, 1.0]],
            1e-3,
            prior(),
        )
        .unwrap();
        let text = s.to_json();
        assert!(text.contains("\"schema\": \"v1\""));
        assert_eq!(CouplingSpec::from_json(&text).unwrap(), s);
        let bad = text.replace("\"v1\"", "\"v0\"");
        assert!(CouplingSpec::from_json(&bad).is_err());
        let bad_gamma = text.replace("0.75", "0.8");
        let err = CouplingSpec::from_json(&bad_gamma).unwrap_err().to_string();
        assert!(err.contains("gamma"), "{err}");
    }
}
