//! Cluster-aware Poisson log-linear risk model.
//!
//! `log r = α + ξ_i + γ_t + δ_it + Σ_j β_j·1[cell ∈ C_j]` with a BYM2 spatial
//! effect, an RW1 temporal effect and one of four interaction structures.
//! Hyperparameters are set at the mode of the Laplace-approximated marginal
//! likelihood; latent uncertainty comes from the Gaussian approximation at the
//! constrained posterior mode.
//!
//! The BYM2 term is carried in augmented form: `u` is the scaled ICAR component
//! and `ξ | u ~ N(√(λ/τ)·u, (1−λ)/τ·I)`, so every prior block is a sparse precision.
//!
//! Latent layout: `[α | ξ (n) | u (n) | γ (T) | δ (nT) | β (c)]`, with `δ` indexed `t·n + i`.

mod fit;
mod posterior;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{self, ConstraintSet, InteractionType, StructureMatrix};
use crate::linalg::{Cholesky, Mat};
use crate::scan::{ClusterSet, Direction};
use crate::stdata::{StCell, StDataset};
use crate::stgraph::SpatialGraph;

pub use fit::{
    fit, fit_mode, laplace_log_marginal, optimize_hyper, HyperOptimum, ModeFit, RestartTrace, RiskFit,
};
pub use posterior::{
    exceedance_prob, information_criteria, posterior_samples, risk_summary, write_risk_csv, CellRisk, Convergence, Criteria,
    FitReport, Posterior, Tail,
};

/// One cluster indicator column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTerm {
    pub direction: Option<Direction>,
    pub cells: Vec<StCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub restarts: usize,
    /// Nelder–Mead iterations per restart.
    pub max_iters: u64,
    /// Stop when the simplex cost values have this standard deviation.
    pub sd_tolerance: f64,
    pub log_tau_bounds: (f64, f64),
    pub logit_lambda_bounds: (f64, f64),
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_iters: 150,
            sd_tolerance: 1e-4,
            log_tau_bounds: (-4.0, 14.0),
            logit_lambda_bounds: (-7.0, 7.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub interaction: InteractionType,
    pub clusters: Vec<ClusterTerm>,
    pub prior_beta_sd: f64,
    pub optimizer: OptimizerSettings,
    pub seed: u64,
}

impl ModelSpec {
    /// Model without cluster terms.
    pub fn new(interaction: InteractionType) -> Self {
        Self {
            interaction,
            clusters: Vec::new(),
            prior_beta_sd: 1000.0,
            optimizer: OptimizerSettings::default(),
            seed: 0,
        }
    }

    /// One indicator column per detected cluster.
    pub fn with_clusters(mut self, set: &ClusterSet) -> Self {
        self.clusters = set
            .clusters
            .iter()
            .map(|c| ClusterTerm {
                direction: Some(c.window.direction),
                cells: c.window.cells.clone(),
            })
            .collect();
        self
    }

    pub fn with_terms(mut self, terms: Vec<ClusterTerm>) -> Self {
        self.clusters = terms;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Precisions of the random effects and the BYM2 mixing weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub tau_xi: f64,
    pub lambda_xi: f64,
    pub tau_gamma: f64,
    pub tau_delta: f64,
}

impl Hyper {
    pub fn new(tau_xi: f64, lambda_xi: f64, tau_gamma: f64, tau_delta: f64) -> Self {
        Self {
            tau_xi,
            lambda_xi,
            tau_gamma,
            tau_delta,
        }
    }

    /// `(log τ_ξ, logit λ_ξ, log τ_γ, log τ_δ)`.
    pub fn to_theta(self) -> [f64; 4] {
        let l = self.lambda_xi;
        [self.tau_xi.ln(), (l / (1.0 - l)).ln(), self.tau_gamma.ln(), self.tau_delta.ln()]
    }

    pub fn from_theta(theta: &[f64]) -> Self {
        Self {
            tau_xi: theta[0].exp(),
            lambda_xi: 1.0 / (1.0 + (-theta[1]).exp()),
            tau_gamma: theta[2].exp(),
            tau_delta: theta[3].exp(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.tau_xi) && pos(self.tau_gamma) && pos(self.tau_delta)) {
            return Err(Error::DegenerateInput(format!("precisions must be positive and finite, got {self:?}")));
        }
        if !(self.lambda_xi > 0.0 && self.lambda_xi < 1.0) {
            return Err(Error::DegenerateInput(format!(
                "mixing weight must lie strictly inside (0, 1), got {}",
                self.lambda_xi
            )));
        }
        Ok(())
    }
}

/// Offsets of each block in the latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub t: usize,
    pub c: usize,
}

impl Layout {
    pub const ALPHA: usize = 0;

    pub fn xi(&self, i: usize) -> usize {
        1 + i
    }

    pub fn u(&self, i: usize) -> usize {
        1 + self.n + i
    }

    pub fn gamma(&self, t: usize) -> usize {
        1 + 2 * self.n + t
    }

    pub fn delta(&self, k: usize) -> usize {
        1 + 2 * self.n + self.t + k
    }

    pub fn beta(&self, j: usize) -> usize {
        1 + 2 * self.n + self.t + self.n * self.t + j
    }

    pub fn dim(&self) -> usize {
        1 + 2 * self.n + self.t + self.n * self.t + self.c
    }
}

/// Latent vector split into its blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub alpha: f64,
    pub xi: Vec<f64>,
    pub u: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Value, gradient and Hessian of the negative log posterior.
#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Mat<f64>,
}

/// Assembled model: data, prior structures, constraints and design.
#[derive(Debug)]
pub struct RiskModel {
    layout: Layout,
    interaction: InteractionType,
    observed: Vec<f64>,
    expected: Vec<f64>,
    log_factorial_sum: f64,
    area_ids: Vec<String>,
    period_labels: Vec<String>,
    r_star: StructureMatrix,
    r_gamma: StructureMatrix,
    r_delta: StructureMatrix,
    delta_rank: usize,
    terms: Vec<ClusterTerm>,
    membership: Vec<Vec<usize>>,
    beta_precision: f64,
    constraints: ConstraintSet,
    a: Mat<f64>,
    aat: Cholesky,
    optimizer: OptimizerSettings,
    seed: u64,
}

/// Builds the model for `data` on `graph`.
pub fn build_model(data: &StDataset, graph: &SpatialGraph, spec: &ModelSpec) -> Result<RiskModel> {
    graph.check_matches(data)?;
    if !graph.is_connected() {
        return Err(Error::DegenerateInput(format!(
            "the risk model needs a connected graph, got {} components",
            graph.n_components()
        )));
    }
    if !(spec.prior_beta_sd > 0.0 && spec.prior_beta_sd.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "prior_beta_sd must be positive, got {}",
            spec.prior_beta_sd
        )));
    }
    let (n, t) = (data.n_areas(), data.n_periods());
    let r_xi = gmrf::icar_precision(graph);
    let r_star = gmrf::scale_structure(&r_xi)?;
    let r_gamma = gmrf::rw1_precision(t)?;
    let r_delta = gmrf::interaction_structure(spec.interaction, &r_gamma, &r_xi, n, t)?;

    let mut seen = BTreeSet::new();
    let mut terms = Vec::new();
    for (j, term) in spec.clusters.iter().enumerate() {
        let mut key: Vec<StCell> = term.cells.clone();
        key.sort();
        key.dedup();
        if let Some(c) = key.iter().find(|c| c.area >= n || c.period >= t) {
            return Err(Error::DimensionMismatch(format!(
                "cluster {} cell ({}, {}) outside the {n}x{t} lattice",
                j + 1,
                c.area,
                c.period
            )));
        }
        if key.is_empty() {
            log::warn!("cluster {} has no cells; dropped", j + 1);
            continue;
        }
        if !seen.insert(key.clone()) {
            log::warn!("cluster {} duplicates an earlier cluster; collapsed", j + 1);
            continue;
        }
        terms.push(ClusterTerm {
            direction: term.direction,
            cells: key,
        });
    }
    let layout = Layout { n, t, c: terms.len() };
    let mut membership = vec![Vec::new(); n * t];
    for (j, term) in terms.iter().enumerate() {
        for cell in &term.cells {
            membership[cell.index(n)].push(j);
        }
    }

    let p = layout.dim();
    let delta_c = gmrf::interaction_constraints(spec.interaction, n, t);
    let delta_rank = n * t - delta_c.n_rows();
    let constraints = ConstraintSet::new(
        p,
        vec![
            (0..n).map(|i| (layout.xi(i), 1.0)).collect(),
            (0..n).map(|i| (layout.u(i), 1.0)).collect(),
            (0..t).map(|s| (layout.gamma(s), 1.0)).collect(),
        ],
    )
    .stacked(&delta_c.embedded(layout.delta(0), p));
    let rows = constraints.dense_rows();
    let a = Mat::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let aat = Cholesky::new(&(&a * a.transpose()))?;

    let observed: Vec<f64> = data.observed().iter().map(|&o| o as f64).collect();
    let log_factorial_sum = data
        .observed()
        .iter()
        .map(|&o| statrs::function::gamma::ln_gamma(o as f64 + 1.0))
        .sum();
    Ok(RiskModel {
        layout,
        interaction: spec.interaction,
        observed,
        expected: data.expected().to_vec(),
        log_factorial_sum,
        area_ids: data.area_ids().to_vec(),
        period_labels: data.period_labels().to_vec(),
        r_star,
        r_gamma,
        r_delta,
        delta_rank,
        terms,
        membership,
        beta_precision: 1.0 / (spec.prior_beta_sd * spec.prior_beta_sd),
        constraints,
        a,
        aat,
        optimizer: spec.optimizer.clone(),
        seed: spec.seed,
    })
}

impl RiskModel {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn n_cells(&self) -> usize {
        self.observed.len()
    }

    pub fn interaction(&self) -> InteractionType {
        self.interaction
    }

    pub fn terms(&self) -> &[ClusterTerm] {
        &self.terms
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn expected(&self) -> &[f64] {
        &self.expected
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Column sums of the cluster design.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.cells.len()).collect()
    }

    pub fn split(&self, x: &[f64]) -> Latent {
        let l = self.layout;
        Latent {
            alpha: x[Layout::ALPHA],
            xi: x[l.xi(0)..l.xi(0) + l.n].to_vec(),
            u: x[l.u(0)..l.u(0) + l.n].to_vec(),
            gamma: x[l.gamma(0)..l.gamma(0) + l.t].to_vec(),
            delta: x[l.delta(0)..l.delta(0) + l.n * l.t].to_vec(),
            beta: x[l.beta(0)..l.beta(0) + l.c].to_vec(),
        }
    }

    /// Latent indices entering cell `k`'s linear predictor.
    fn design_row(&self, k: usize, out: &mut Vec<usize>) {
        let l = self.layout;
        out.clear();
        out.push(Layout::ALPHA);
        out.push(l.xi(k % l.n));
        out.push(l.gamma(k / l.n));
        out.push(l.delta(k));
        out.extend(self.membership[k].iter().map(|&j| l.beta(j)));
    }

    /// Log relative risk per cell, without checks.
    pub fn eta_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout;
        (0..self.n_cells())
            .map(|k| {
                x[Layout::ALPHA]
                    + x[l.xi(k % l.n)]
                    + x[l.gamma(k / l.n)]
                    + x[l.delta(k)]
                    + self.membership[k].iter().map(|&j| x[l.beta(j)]).sum::<f64>()
            })
            .collect()
    }

    /// Log relative risk per cell.
    pub fn eta(&self, x: &[f64]) -> Result<Vec<f64>> {
        let eta = self.eta_unchecked(x);
        for (k, (&v, &e)) in eta.iter().zip(&self.expected).enumerate() {
            if !(v.is_finite() && (e * v.exp()).is_finite()) {
                return Err(Error::NumericalOverflow { cell: k });
            }
        }
        Ok(eta)
    }

    /// `Q(θ) x`.
    pub fn prior_mul(&self, x: &[f64], h: &Hyper) -> Vec<f64> {
        let l = self.layout;
        let (a, b, c) = bym2_coefficients(h);
        let mut out = vec![0.0; x.len()];
        let xi = &x[l.xi(0)..l.xi(0) + l.n];
        let u = &x[l.u(0)..l.u(0) + l.n];
        let ru = self.r_star.mul_vec(u);
        for i in 0..l.n {
            out[l.xi(i)] = a * xi[i] - b * u[i];
            out[l.u(i)] = -b * xi[i] + ru[i] + c * u[i];
        }
        let g = self.r_gamma.mul_vec(&x[l.gamma(0)..l.gamma(0) + l.t]);
        for (s, v) in g.into_iter().enumerate() {
            out[l.gamma(s)] = h.tau_gamma * v;
        }
        let d = self.r_delta.mul_vec(&x[l.delta(0)..l.delta(0) + l.n * l.t]);
        for (k, v) in d.into_iter().enumerate() {
            out[l.delta(k)] = h.tau_delta * v;
        }
        for j in 0..l.c {
            out[l.beta(j)] = self.beta_precision * x[l.beta(j)];
        }
        out
    }

    /// Dense `Q(θ)`.
    pub fn prior_dense(&self, h: &Hyper) -> Mat<f64> {
        let l = self.layout;
        let mut q = Mat::<f64>::zeros(l.dim(), l.dim());
        let (a, b, c) = bym2_coefficients(h);
        for i in 0..l.n {
            q[(l.xi(i), l.xi(i))] += a;
            q[(l.xi(i), l.u(i))] -= b;
            q[(l.u(i), l.xi(i))] -= b;
            q[(l.u(i), l.u(i))] += c;
        }
        self.r_star.add_to(&mut q, l.u(0), 1.0);
        self.r_gamma.add_to(&mut q, l.gamma(0), h.tau_gamma);
        self.r_delta.add_to(&mut q, l.delta(0), h.tau_delta);
        for j in 0..l.c {
            q[(l.beta(j), l.beta(j))] += self.beta_precision;
        }
        q
    }

    /// Negative log posterior up to a constant, without derivatives.
    pub fn objective_value(&self, x: &[f64], h: &Hyper) -> Result<f64> {
        let eta = self.eta(x)?;
        let lik: f64 = eta
            .iter()
            .zip(&self.expected)
            .zip(&self.observed)
            .map(|((&v, &e), &o)| e * v.exp() - o * v)
            .sum();
        let qx = self.prior_mul(x, h);
        Ok(lik + 0.5 * crate::linalg::dot(x, &qx))
    }

    /// Half the log pseudo-determinant of `Q(θ)` on the constrained subspace, up to a constant.
    fn half_log_prior_det(&self, h: &Hyper) -> f64 {
        let l = self.layout;
        0.5 * ((l.n - 1) as f64 * (h.tau_xi.ln() - (1.0 - h.lambda_xi).ln())
            + (l.t - 1) as f64 * h.tau_gamma.ln()
            + self.delta_rank as f64 * h.tau_delta.ln())
    }

    /// Projects `g` onto the null space of the constraints.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        let ag = crate::linalg::mat_vec(&self.a, g);
        let nu = self.aat.solve(&ag);
        let mut out = g.to_vec();
        for (r, &v) in nu.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for &(j, w) in &self.constraints.rows()[r] {
                out[j] -= v * w;
            }
        }
        out
    }
}

/// Augmented BYM2 precision entries: `a` on ξξ, `−b` on ξu, `c` added to the u diagonal.
fn bym2_coefficients(h: &Hyper) -> (f64, f64, f64) {
    let one_m = 1.0 - h.lambda_xi;
    (
        h.tau_xi / one_m,
        (h.lambda_xi * h.tau_xi).sqrt() / one_m,
        h.lambda_xi / one_m,
    )
}

/// Value, analytic gradient and dense Hessian of the negative log posterior.
///
/// `Σ [E·exp(η) − O·η] + ½ xᵀ Q(θ) x`, with the `β` prior inside `Q`.
pub fn neg_log_posterior(model: &RiskModel, x: &[f64], h: &Hyper) -> Result<Objective> {
    h.check()?;
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "latent vector has {} entries, model has {}",
            x.len(),
            model.dim()
        )));
    }
    let eta = model.eta(x)?;
    let mut gradient = model.prior_mul(x, h);
    let mut value = 0.5 * crate::linalg::dot(x, &gradient);
    let mut hessian = model.prior_dense(h);
    let mut idx = Vec::with_capacity(8);
    for (k, &v) in eta.iter().enumerate() {
        let mu = model.expected[k] * v.exp();
        let o = model.observed[k];
        value += mu - o * v;
        model.design_row(k, &mut idx);
        for &i in &idx {
            gradient[i] += mu - o;
            for &j in &idx {
                hessian[(i, j)] += mu;
            }
        }
    }
    Ok(Objective {
        value,
        gradient,
        hessian,
    })
}
