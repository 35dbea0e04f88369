//! Intrinsic Gaussian Markov random fields: structure matrices, scaling,
//! interaction Kronecker products, sum-to-zero constraints and constrained sampling.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, pinv_sym, sym_eigen, Cholesky, Mat, EIGEN_RANK_TOL};
use crate::stgraph::SpatialGraph;

/// Sparse symmetric PSD structure matrix with an orthonormal basis of its null space.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrix {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
    null_basis: Vec<Vec<f64>>,
    scaled: bool,
}

impl StructureMatrix {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>, null_basis: Vec<Vec<f64>>) -> Self {
        Self {
            dim: rows.len(),
            rows,
            null_basis,
            scaled: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank_deficiency(&self) -> usize {
        self.null_basis.len()
    }

    pub fn is_scaled(&self) -> bool {
        self.scaled
    }

    /// Orthonormal vectors spanning the null space.
    pub fn null_basis(&self) -> &[Vec<f64>] {
        &self.null_basis
    }

    /// Nonzero entries of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `xᵀ R x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        linalg::dot(x, &self.mul_vec(x))
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.dim, self.dim);
        self.add_to(&mut m, 0, 1.0);
        m
    }

    /// Adds `weight · R` into the block of `m` starting at `(offset, offset)`.
    pub fn add_to(&self, m: &mut Mat<f64>, offset: usize, weight: f64) {
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(offset + i, offset + j)] += weight * v;
            }
        }
    }

    pub fn scaled_by(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&(j, v)| (j, c * v)).collect())
                .collect(),
            null_basis: self.null_basis.clone(),
            scaled: self.scaled,
        }
    }

    /// Dense `R + V Vᵀ`, positive definite when `V` spans the null space.
    fn augmented(&self) -> Mat<f64> {
        let mut m = self.to_dense();
        for v in &self.null_basis {
            for i in 0..self.dim {
                if v[i] == 0.0 {
                    continue;
                }
                for j in 0..self.dim {
                    m[(i, j)] += v[i] * v[j];
                }
            }
        }
        m
    }

    /// Projects `x` onto the row space.
    pub fn project_range(&self, x: &mut [f64]) {
        for v in &self.null_basis {
            let c = linalg::dot(v, x);
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi -= c * vi;
            }
        }
    }

    /// Dense Moore–Penrose inverse, `(R + VVᵀ)⁻¹ − VVᵀ`.
    pub fn generalized_inverse(&self) -> Result<Mat<f64>> {
        let mut inv = Cholesky::new(&self.augmented())?.inverse();
        for v in &self.null_basis {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    inv[(i, j)] -= v[i] * v[j];
                }
            }
        }
        Ok(inv)
    }

    /// Sum of log eigenvalues on the row space.
    pub fn log_pdet(&self) -> Result<f64> {
        Ok(Cholesky::new(&self.augmented())?.log_det())
    }

    /// Writes the lower triangle in Matrix Market coordinate format.
    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let lower: Vec<(usize, usize, f64)> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().filter(move |&&(j, _)| j <= i).map(move |&(j, v)| (i, j, v)))
            .collect();
        writeln!(f, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(f, "{} {} {}", self.dim, self.dim, lower.len())?;
        for (i, j, v) in lower {
            writeln!(f, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// ICAR structure: degree on the diagonal, −1 for each adjacency.
pub fn icar_precision(graph: &SpatialGraph) -> StructureMatrix {
    let n = graph.n_areas();
    let rows = (0..n)
        .map(|i| {
            let mut r: Vec<(usize, f64)> = graph.neighbors(i).iter().map(|&j| (j, -1.0)).collect();
            r.push((i, graph.degree(i) as f64));
            r.sort_by_key(|&(j, _)| j);
            r
        })
        .collect();
    let comp = graph.components();
    let n_comp = comp.iter().max().map_or(0, |m| m + 1);
    let null_basis = (0..n_comp)
        .map(|c| {
            let size = comp.iter().filter(|&&x| x == c).count() as f64;
            comp.iter().map(|&x| if x == c { 1.0 / size.sqrt() } else { 0.0 }).collect()
        })
        .collect();
    StructureMatrix::from_rows(rows, null_basis)
}

/// First-order random walk structure on `t` periods.
pub fn rw1_precision(t: usize) -> Result<StructureMatrix> {
    if t < 2 {
        return Err(Error::DegenerateInput(format!("RW1 needs at least 2 periods, got {t}")));
    }
    let rows = (0..t)
        .map(|i| {
            let mut r = Vec::with_capacity(3);
            if i > 0 {
                r.push((i - 1, -1.0));
            }
            r.push((i, if i == 0 || i + 1 == t { 1.0 } else { 2.0 }));
            if i + 1 < t {
                r.push((i + 1, -1.0));
            }
            r
        })
        .collect();
    let c = 1.0 / (t as f64).sqrt();
    Ok(StructureMatrix::from_rows(rows, vec![vec![c; t]]))
}

/// Diagonal of the generalized inverse.
pub fn generalized_inverse_diag(r: &StructureMatrix) -> Result<Vec<f64>> {
    let inv = r.generalized_inverse()?;
    Ok((0..r.dim).map(|i| inv[(i, i)]).collect())
}

/// Scales `R` so the geometric mean of its generalized-inverse diagonal is 1.
///
/// Entries belonging to isolated areas (zero generalized variance) are skipped.
pub fn scale_structure(r: &StructureMatrix) -> Result<StructureMatrix> {
    let diag = generalized_inverse_diag(r)?;
    let max = diag.iter().fold(0.0_f64, |a, &d| a.max(d));
    let logs: Vec<f64> = diag.iter().filter(|&&d| d > 1e-12 * max).map(|d| d.ln()).collect();
    if logs.is_empty() {
        return Err(Error::DegenerateInput("structure matrix has no row space".into()));
    }
    let c = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
    let mut out = r.scaled_by(c);
    out.scaled = true;
    Ok(out)
}

/// Interaction types of the space-time term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InteractionType {
    I,
    II,
    III,
    IV,
}

impl InteractionType {
    pub const ALL: [InteractionType; 4] = [Self::I, Self::II, Self::III, Self::IV];

    pub fn number(self) -> u8 {
        match self {
            Self::I => 1,
            Self::II => 2,
            Self::III => 3,
            Self::IV => 4,
        }
    }
}

impl std::fmt::Display for InteractionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
            Self::IV => "IV",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for InteractionType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1" | "I" => Ok(Self::I),
            "2" | "II" => Ok(Self::II),
            "3" | "III" => Ok(Self::III),
            "4" | "IV" => Ok(Self::IV),
            other => Err(format!("unknown interaction type `{other}` (expected 1-4 or I-IV)")),
        }
    }
}

/// Orthonormal basis of the row space of a small dense symmetric matrix.
fn range_basis(r: &StructureMatrix) -> Result<Vec<Vec<f64>>> {
    let (values, vectors) = sym_eigen(&r.to_dense())?;
    let max = values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    Ok(values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > EIGEN_RANK_TOL * max)
        .map(|(k, _)| (0..r.dim).map(|i| vectors[(i, k)]).collect())
        .collect())
}

fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

/// `A ⊗ B`; with cells indexed `t·n + i`, `A` is the temporal factor.
pub fn kronecker(a: &StructureMatrix, b: &StructureMatrix) -> Result<StructureMatrix> {
    let nb = b.dim;
    let mut rows = Vec::with_capacity(a.dim * nb);
    for ra in &a.rows {
        for rb in &b.rows {
            let mut r = Vec::with_capacity(ra.len() * rb.len());
            for &(ja, va) in ra {
                for &(jb, vb) in rb {
                    r.push((ja * nb + jb, va * vb));
                }
            }
            rows.push(r);
        }
    }
    // null(A ⊗ B) = null(A) ⊗ Rⁿ ⊕ range(A) ⊗ null(B)
    let mut null_basis = Vec::new();
    for v in &a.null_basis {
        for j in 0..nb {
            let mut e = vec![0.0; nb];
            e[j] = 1.0;
            null_basis.push(kron_vec(v, &e));
        }
    }
    if !b.null_basis.is_empty() {
        let range = if a.null_basis.is_empty() && is_identity(a) {
            (0..a.dim)
                .map(|t| {
                    let mut e = vec![0.0; a.dim];
                    e[t] = 1.0;
                    e
                })
                .collect()
        } else {
            range_basis(a)?
        };
        for u in &range {
            for w in &b.null_basis {
                null_basis.push(kron_vec(u, w));
            }
        }
    }
    Ok(StructureMatrix::from_rows(rows, null_basis))
}

fn is_identity(m: &StructureMatrix) -> bool {
    m.rows.iter().enumerate().all(|(i, r)| r.len() == 1 && r[0] == (i, 1.0))
}

/// Structure matrix of the interaction term for `n` areas and `t` periods.
pub fn interaction_structure(
    kind: InteractionType,
    r_gamma: &StructureMatrix,
    r_xi: &StructureMatrix,
    n: usize,
    t: usize,
) -> Result<StructureMatrix> {
    if r_gamma.dim != t || r_xi.dim != n {
        return Err(Error::DimensionMismatch(format!(
            "interaction needs {t}x{t} temporal and {n}x{n} spatial structures, got {} and {}",
            r_gamma.dim, r_xi.dim
        )));
    }
    match kind {
        InteractionType::I => Ok(StructureMatrix::identity(n * t)),
        InteractionType::II => kronecker(r_gamma, &StructureMatrix::identity(n)),
        InteractionType::III => kronecker(&StructureMatrix::identity(t), r_xi),
        InteractionType::IV => kronecker(r_gamma, r_xi),
    }
}

/// Sparse linear equality constraints `A x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl ConstraintSet {
    pub fn new(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self { dim, rows }
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Row residuals `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn dense_rows(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0.0; self.dim];
                for &(j, v) in r {
                    d[j] += v;
                }
                d
            })
            .collect()
    }

    pub fn rank(&self) -> usize {
        linalg::rank_of_rows(&self.dense_rows())
    }

    /// Re-indexes into a larger vector where this block starts at `offset`.
    pub fn embedded(&self, offset: usize, dim: usize) -> Self {
        Self {
            dim,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&(j, v)| (j + offset, v)).collect())
                .collect(),
        }
    }

    /// Stacks two sets over the same vector.
    pub fn stacked(mut self, other: &ConstraintSet) -> Self {
        assert_eq!(self.dim, other.dim, "stacking constraints over different dimensions");
        self.rows.extend(other.rows.iter().cloned());
        self
    }
}

fn sum_row(idx: impl Iterator<Item = usize>) -> Vec<(usize, f64)> {
    idx.map(|j| (j, 1.0)).collect()
}

/// Sum-to-zero constraints on an interaction vector of `n` areas by `t` periods.
pub fn interaction_constraints(kind: InteractionType, n: usize, t: usize) -> ConstraintSet {
    let per_area = |i: usize| sum_row((0..t).map(move |p| p * n + i));
    let per_period = |p: usize| sum_row((0..n).map(move |i| p * n + i));
    let rows = match kind {
        InteractionType::I => vec![sum_row(0..n * t)],
        InteractionType::II => (0..n).map(per_area).collect(),
        InteractionType::III => (0..t).map(per_period).collect(),
        // One per area and one per period; the last period row is implied by the others.
        InteractionType::IV => (0..n).map(per_area).chain((0..t.saturating_sub(1)).map(per_period)).collect(),
    };
    ConstraintSet::new(n * t, rows)
}

/// Constraints on the stacked vector `(ξ, γ, δ)`: Σξ = 0, Σγ = 0 and the interaction rows.
pub fn constraint_set(kind: InteractionType, n: usize, t: usize) -> ConstraintSet {
    let dim = n + t + n * t;
    let base = ConstraintSet::new(dim, vec![sum_row(0..n), sum_row(n..n + t)]);
    base.stacked(&interaction_constraints(kind, n, t).embedded(n + t, dim))
}

/// `τ⁻¹[(1 − φ) I + φ R⁺]` for a scaled spatial structure.
pub fn bym2_covariance(r_scaled: &StructureMatrix, phi: f64, tau: f64) -> Result<Mat<f64>> {
    let mut c = r_scaled.generalized_inverse()?;
    for i in 0..r_scaled.dim {
        for j in 0..r_scaled.dim {
            c[(i, j)] *= phi;
        }
        c[(i, i)] += 1.0 - phi;
    }
    for i in 0..r_scaled.dim {
        for j in 0..r_scaled.dim {
            c[(i, j)] /= tau;
        }
    }
    Ok(c)
}

/// Draws from `N(0, (τR)⁺)` conditioned on `A x = 0`.
#[derive(Debug)]
pub struct ConstrainedSampler {
    chol: Cholesky,
    null_basis: Vec<Vec<f64>>,
    inv_sd: f64,
    /// Constraint rows projected onto the row space of `R`.
    a: Vec<Vec<f64>>,
    /// Kriging gain `R⁺ Ãᵀ (Ã R⁺ Ãᵀ)⁺`, one column per row of `a`.
    gain: Vec<Vec<f64>>,
}

impl ConstrainedSampler {
    pub fn new(structure: &StructureMatrix, precision: f64, constraints: &ConstraintSet) -> Result<Self> {
        let d = structure.dim;
        if constraints.dim != d {
            return Err(Error::InfeasibleConstraints(format!(
                "constraints act on {} values, structure has dimension {d}",
                constraints.dim
            )));
        }
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(Error::DegenerateInput(format!("precision must be positive, got {precision}")));
        }
        let chol = Cholesky::new(&structure.augmented())?;
        let mut a = Vec::new();
        for mut row in constraints.dense_rows() {
            let norm = linalg::dot(&row, &row).sqrt();
            structure.project_range(&mut row);
            if linalg::dot(&row, &row).sqrt() > 1e-10 * norm.max(1.0) {
                a.push(row);
            }
        }
        let w: Vec<Vec<f64>> = a.iter().map(|r| chol.solve(r)).collect();
        let k = a.len();
        let g = Mat::from_fn(k, k, |i, j| linalg::dot(&a[i], &w[j]));
        let (g_inv, _) = pinv_sym(&g)?;
        let gain = (0..k)
            .map(|c| {
                let mut col = vec![0.0; d];
                for (j, wj) in w.iter().enumerate() {
                    let s = g_inv[(j, c)];
                    if s != 0.0 {
                        for (o, x) in col.iter_mut().zip(wj) {
                            *o += s * x;
                        }
                    }
                }
                col
            })
            .collect();
        Ok(Self {
            chol,
            null_basis: structure.null_basis.clone(),
            inv_sd: 1.0 / precision.sqrt(),
            a,
            gain,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = self.chol.solve_lt(&z);
        for v in &self.null_basis {
            let c = linalg::dot(v, &x);
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi -= c * vi;
            }
        }
        for xi in &mut x {
            *xi *= self.inv_sd;
        }
        // Two passes keep the constraint residual at round-off level.
        for _ in 0..2 {
            let r: Vec<f64> = self.a.iter().map(|row| linalg::dot(row, &x)).collect();
            for (g, rj) in self.gain.iter().zip(&r) {
                for (xi, gi) in x.iter_mut().zip(g) {
                    *xi -= gi * rj;
                }
            }
        }
        x
    }
}

/// One constrained draw seeded by `seed`.
pub fn sample_constrained(
    structure: &StructureMatrix,
    precision: f64,
    constraints: &ConstraintSet,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = ConstrainedSampler::new(structure, precision, constraints)?;
    Ok(sampler.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Covariance of the constrained draw, `Σ − ΣÃᵀ(ÃΣÃᵀ)⁺ÃΣ` with `Σ = (τR)⁺`, by eigendecomposition.
pub fn constrained_covariance(structure: &StructureMatrix, precision: f64, constraints: &ConstraintSet) -> Result<Mat<f64>> {
    let (rp, _) = pinv_sym(&structure.to_dense())?;
    let d = structure.dim;
    let sigma = Mat::from_fn(d, d, |i, j| rp[(i, j)] / precision);
    let rows = constraints.dense_rows();
    if rows.is_empty() {
        return Ok(sigma);
    }
    let a = linalg::mat_from_rows(&rows, d);
    let sa = &sigma * a.transpose();
    let g = &a * &sa;
    let (g_inv, _) = pinv_sym(&g)?;
    Ok(&sigma - &sa * &g_inv * sa.transpose())
}
