use std::cell::{Cell, RefCell};

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use super::{neg_log_posterior, Hyper, Layout, RiskModel};
use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky, Mat};

const MAX_NEWTON: usize = 100;
const GRAD_TOL: f64 = 1e-8;

/// Constrained posterior mode with its Gaussian approximation.
///
/// The approximation is `N(x̂, Σ)` with `Σ = H̃⁻¹ − W G⁻¹ Wᵀ`, where
/// `H̃ = H + κ AᵀA`, `W = H̃⁻¹ Aᵀ` and `G = A W`; `Σ` is the inverse of the
/// Hessian restricted to the constraint subspace.
#[derive(Debug)]
pub struct ModeFit {
    pub x: Vec<f64>,
    pub hyper: Hyper,
    pub value: f64,
    pub iterations: usize,
    /// Norm of the gradient projected on the constraint subspace.
    pub gradient_norm: f64,
    /// Log determinant of the Hessian restricted to the constraint subspace.
    pub log_det_hessian: f64,
    /// Cheap lower bound on the condition number of `H̃`.
    pub condition: f64,
    pub(crate) chol: Cholesky,
    pub(crate) w: Mat<f64>,
    pub(crate) g_chol: Cholesky,
    pub(crate) a: Mat<f64>,
}

impl ModeFit {
    pub fn alpha(&self) -> f64 {
        self.x[Layout::ALPHA]
    }

    /// Cluster coefficients in model term order.
    pub fn beta(&self, model: &RiskModel) -> Vec<f64> {
        let l = model.layout();
        (0..l.c).map(|j| self.x[l.beta(j)]).collect()
    }
}

struct Factored {
    chol: Cholesky,
    w: Mat<f64>,
    g_chol: Cholesky,
    condition: f64,
}

fn factor(model: &RiskModel, hessian: &Mat<f64>) -> Result<Factored> {
    let p = model.dim();
    let kappa = (0..p).fold(1.0_f64, |m, i| m.max(hessian[(i, i)]));
    let mut h = hessian.clone();
    for row in model.constraints().rows() {
        for &(i, a) in row {
            for &(j, b) in row {
                h[(i, j)] += kappa * a * b;
            }
        }
    }
    let chol = Cholesky::new(&h)?;
    let w = chol.solve_mat(&model.a.transpose().to_owned());
    let g = &model.a * &w;
    let g_chol = Cholesky::new(&g)?;
    let condition = chol.pivot_condition();
    Ok(Factored {
        chol,
        w,
        g_chol,
        condition,
    })
}

/// Newton step for `min f` subject to `A x = 0`, given a feasible `x`.
fn kkt_step(model: &RiskModel, f: &Factored, gradient: &[f64], x: &[f64]) -> Vec<f64> {
    let hg = f.chol.solve(gradient);
    let ax = linalg::mat_vec(&model.a, x);
    let ahg = linalg::mat_vec(&model.a, &hg);
    let rhs: Vec<f64> = ax.iter().zip(&ahg).map(|(a, b)| a - b).collect();
    let nu = f.g_chol.solve(&rhs);
    let wnu = linalg::mat_vec(&f.w, &nu);
    hg.iter().zip(&wnu).map(|(a, b)| -(a + b)).collect()
}

/// Starting point: the flat fit `α = log(ΣO/ΣE)` and zero elsewhere.
fn flat_start(model: &RiskModel) -> Vec<f64> {
    let mut x = vec![0.0; model.dim()];
    let o: f64 = model.observed().iter().sum();
    let e: f64 = model.expected().iter().sum();
    x[Layout::ALPHA] = if o > 0.0 { (o / e).ln() } else { -10.0 };
    x
}

/// Constrained posterior mode at fixed hyperparameters.
pub fn fit_mode(model: &RiskModel, hyper: &Hyper) -> Result<ModeFit> {
    fit_mode_from(model, hyper, None)
}

pub(crate) fn fit_mode_from(model: &RiskModel, hyper: &Hyper, start: Option<&[f64]>) -> Result<ModeFit> {
    hyper.check()?;
    let mut x = match start {
        Some(s) if s.len() == model.dim() => model.project(s),
        _ => flat_start(model),
    };
    if model.objective_value(&x, hyper).is_err() {
        x = flat_start(model);
    }
    let mut trace = Vec::new();
    for it in 0..=MAX_NEWTON {
        let obj = neg_log_posterior(model, &x, hyper)?;
        let pg = model.project(&obj.gradient);
        let norm = linalg::dot(&pg, &pg).sqrt();
        trace.push(norm);
        let f = factor(model, &obj.hessian)?;
        if norm <= GRAD_TOL * (1.0 + obj.value.abs()) {
            let log_det_hessian = f.chol.log_det() + f.g_chol.log_det() - model.aat.log_det();
            return Ok(ModeFit {
                x,
                hyper: *hyper,
                value: obj.value,
                iterations: it,
                gradient_norm: norm,
                log_det_hessian,
                condition: f.condition,
                chol: f.chol,
                w: f.w,
                g_chol: f.g_chol,
                a: model.a.clone(),
            });
        }
        if it == MAX_NEWTON {
            break;
        }
        let dx = kkt_step(model, &f, &obj.gradient, &x);
        let slope = linalg::dot(&obj.gradient, &dx);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + step * b).collect();
            if let Ok(v) = model.objective_value(&trial, hyper) {
                if v <= obj.value + 1e-4 * step * slope.min(0.0) {
                    x = trial;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let tail: Vec<String> = trace.iter().rev().take(5).rev().map(|v| format!("{v:.3e}")).collect();
    Err(Error::NoConvergence {
        iterations: trace.len(),
        detail: format!("projected gradient norms (last {}): {}", tail.len(), tail.join(", ")),
    })
}

/// Laplace approximation to the log marginal likelihood, up to a constant independent of the hyperparameters.
pub fn laplace_log_marginal(model: &RiskModel, fit: &ModeFit) -> f64 {
    -fit.value - model.log_factorial_sum + model.half_log_prior_det(&fit.hyper) - 0.5 * fit.log_det_hessian
}

/// Log density of the hyperparameter prior in the `θ` parametrization.
///
/// Flat priors on the standard deviations give `−½ log τ` per precision; the uniform
/// mixing weight gives `log λ + log(1 − λ)`.
fn log_hyper_prior(theta: &[f64]) -> f64 {
    let l = 1.0 / (1.0 + (-theta[1]).exp());
    -0.5 * (theta[0] + theta[2] + theta[3]) + l.ln() + (1.0 - l).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub start: [f64; 4],
    pub theta: [f64; 4],
    /// Log marginal likelihood plus log hyperprior at `theta`.
    pub objective: f64,
    pub iterations: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperOptimum {
    pub hyper: Hyper,
    pub theta: [f64; 4],
    pub log_marginal: f64,
    pub evaluations: usize,
    pub restarts: Vec<RestartTrace>,
}

const PENALTY: f64 = 1e12;

struct Problem<'a> {
    model: &'a RiskModel,
    lo: [f64; 4],
    hi: [f64; 4],
    warm: RefCell<Option<Vec<f64>>>,
    evaluations: Cell<usize>,
}

impl Problem<'_> {
    fn evaluate(&self, theta: &[f64]) -> f64 {
        self.evaluations.set(self.evaluations.get() + 1);
        let outside: f64 = (0..4)
            .map(|i| (self.lo[i] - theta[i]).max(0.0) + (theta[i] - self.hi[i]).max(0.0))
            .sum();
        if outside > 0.0 || theta.iter().any(|v| !v.is_finite()) {
            return PENALTY * (1.0 + outside);
        }
        let hyper = Hyper::from_theta(theta);
        let warm = self.warm.borrow().clone();
        match fit_mode_from(self.model, &hyper, warm.as_deref()) {
            Ok(fit) => {
                let v = -(laplace_log_marginal(self.model, &fit) + log_hyper_prior(theta));
                *self.warm.borrow_mut() = Some(fit.x);
                v
            }
            Err(err) => {
                log::debug!("hyper evaluation at {theta:?} failed: {err}");
                PENALTY
            }
        }
    }
}

/// Hyperparameters at the maximum of the Laplace marginal likelihood times the hyperprior.
///
/// Nelder–Mead over `(log τ_ξ, logit λ_ξ, log τ_γ, log τ_δ)`; restarts after the
/// first begin from the best point found so far and from a fixed spread of starts.
pub fn optimize_hyper(model: &RiskModel) -> Result<HyperOptimum> {
    let s = &model.optimizer;
    let (tl, th) = s.log_tau_bounds;
    let (ll, lh) = s.logit_lambda_bounds;
    let problem = Problem {
        model,
        lo: [tl, ll, tl, tl],
        hi: [th, lh, th, th],
        warm: RefCell::new(None),
        evaluations: Cell::new(0),
    };
    let fixed = [[2.0, 0.0, 2.0, 4.0], [6.0, 1.5, 6.0, 8.0], [0.0, -1.5, 3.0, 1.0]];
    let mut best: Option<([f64; 4], f64)> = None;
    let mut restarts = Vec::new();
    for r in 0..s.restarts.max(1) {
        let start = match (r, best) {
            (0, _) | (_, None) => fixed[r % fixed.len()],
            (r, Some((b, _))) if r % 2 == 1 => b,
            _ => fixed[r % fixed.len()],
        };
        let start = clamp(start, &problem.lo, &problem.hi);
        let step = if r == 0 { 1.5 } else { 0.75 };
        let mut simplex = vec![start.to_vec()];
        for i in 0..4 {
            let mut v = start.to_vec();
            v[i] += if v[i] + step <= problem.hi[i] { step } else { -step };
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(s.sd_tolerance)
            .map_err(|e| Error::DegenerateInput(format!("optimizer settings: {e}")))?;
        let run = Executor::new(&problem, solver)
            .configure(|st| st.max_iters(s.max_iters))
            .run();
        let trace = match run {
            Ok(res) => {
                let state = res.state();
                let theta = state
                    .get_best_param()
                    .map(|p| [p[0], p[1], p[2], p[3]])
                    .unwrap_or(start);
                let cost = state.get_best_cost();
                RestartTrace {
                    start,
                    theta,
                    objective: -cost,
                    iterations: state.get_iter(),
                    ok: cost.is_finite() && cost < PENALTY,
                }
            }
            Err(e) => {
                log::warn!("hyperparameter restart {r} failed: {e}");
                RestartTrace {
                    start,
                    theta: start,
                    objective: f64::NEG_INFINITY,
                    iterations: 0,
                    ok: false,
                }
            }
        };
        if trace.ok && best.is_none_or(|(_, v)| trace.objective > v) {
            best = Some((trace.theta, trace.objective));
        }
        restarts.push(trace);
    }
    let (theta, objective) = best.ok_or_else(|| Error::NoConvergence {
        iterations: restarts.len(),
        detail: "every hyperparameter restart failed".into(),
    })?;
    Ok(HyperOptimum {
        hyper: Hyper::from_theta(&theta),
        theta,
        log_marginal: objective - log_hyper_prior(&theta),
        evaluations: problem.evaluations.get(),
        restarts,
    })
}

impl CostFunction for &Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.evaluate(theta))
    }
}

fn clamp(v: [f64; 4], lo: &[f64; 4], hi: &[f64; 4]) -> [f64; 4] {
    let mut out = v;
    for i in 0..4 {
        out[i] = v[i].clamp(lo[i], hi[i]);
    }
    out
}

/// Empirical-Bayes fit: hyperparameters first, then the mode at those values.
#[derive(Debug)]
pub struct RiskFit {
    pub mode: ModeFit,
    pub hyper: HyperOptimum,
}

pub fn fit(model: &RiskModel) -> Result<RiskFit> {
    let hyper = optimize_hyper(model)?;
    let mode = fit_mode(model, &hyper.hyper)?;
    if mode.condition > 1e8 {
        log::warn!(
            "Hessian condition estimate {:.2e} exceeds 1e8; cluster effects may be confounded with the intercept",
            mode.condition
        );
    }
    Ok(RiskFit { mode, hyper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::InteractionType;
    use crate::riskmodel::{build_model, ClusterTerm, ModelSpec};
    use crate::stdata::{StCell, StDataset};
    use crate::stgraph::SpatialGraph;

    pub(crate) fn on_graph(g: &SpatialGraph, t: usize, obs: Vec<u64>, exp: Vec<f64>) -> StDataset {
        StDataset::new(g.area_ids().to_vec(), (1..=t).map(|p| p.to_string()).collect(), obs, exp).unwrap()
    }

    #[test]
    fn single_cell_poisson_mle() {
        let g = SpatialGraph::grid(2, 1);
        let d = on_graph(&g, 2, vec![20, 20, 20, 20], vec![10.0; 4]);
        let m = build_model(&d, &g, &ModelSpec::new(InteractionType::I)).unwrap();
        let f = fit_mode(&m, &Hyper::new(1.0, 0.5, 1.0, 1.0)).unwrap();
        assert!((f.alpha() - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn intercept_matches_totals_and_constraints_hold() {
        let g = SpatialGraph::grid(3, 3);
        let obs: Vec<u64> = (0..27).map(|k| (k * 7 % 11) as u64).collect();
        let exp: Vec<f64> = (0..27).map(|k| 2.0 + (k % 4) as f64).collect();
        let d = on_graph(&g, 3, obs, exp);
        for kind in InteractionType::ALL {
            let m = build_model(&d, &g, &ModelSpec::new(kind)).unwrap();
            let f = fit_mode(&m, &Hyper::new(3.0, 0.4, 8.0, 5.0)).unwrap();
            assert!(m.constraints().max_violation(&f.x) < 1e-8, "{kind}");
            let eta = m.eta(&f.x).unwrap();
            let fitted: f64 = eta.iter().zip(m.expected()).map(|(v, e)| e * v.exp()).sum();
            let total: f64 = m.observed().iter().sum();
            assert!((fitted - total).abs() < 1e-6 * total, "{kind}: {fitted} vs {total}");
        }
    }

    #[test]
    fn cluster_term_lowers_penalized_deviance() {
        let g = SpatialGraph::grid(4, 4);
        let n = 16;
        let hot = [5usize, 6, 9, 10];
        let obs: Vec<u64> = (0..n * 2)
            .map(|k| if hot.contains(&(k % n)) { 14 } else { 5 + (k % 3) as u64 })
            .collect();
        let d = on_graph(&g, 2, obs, vec![5.0; n * 2]);
        let h = Hyper::new(20.0, 0.5, 20.0, 20.0);
        let plain = build_model(&d, &g, &ModelSpec::new(InteractionType::I)).unwrap();
        let term = ClusterTerm {
            direction: None,
            cells: hot.iter().flat_map(|&a| (0..2).map(move |t| StCell::new(a, t))).collect(),
        };
        let clustered = build_model(&d, &g, &ModelSpec::new(InteractionType::I).with_terms(vec![term])).unwrap();
        let a = fit_mode(&plain, &h).unwrap();
        let b = fit_mode(&clustered, &h).unwrap();
        assert!(b.value < a.value);
        assert!(b.beta(&clustered)[0] > 0.5);
    }

    /// Orthonormal basis of `{x : A x = 0}` from the eigenvectors of `AᵀA`.
    fn null_space(model: &RiskModel) -> Mat<f64> {
        let ata = model.a.transpose() * &model.a;
        let (vals, vecs) = linalg::sym_eigen(&ata).unwrap();
        let keep: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] < 1e-9).collect();
        Mat::from_fn(model.dim(), keep.len(), |i, j| vecs[(i, keep[j])])
    }

    fn log_det_restricted(v: &Mat<f64>, m: &Mat<f64>) -> f64 {
        let r = v.transpose() * m * v;
        Cholesky::new(&r).unwrap().log_det()
    }

    fn test_model(kind: InteractionType) -> RiskModel {
        let g = SpatialGraph::grid(3, 2);
        let obs: Vec<u64> = (0..18).map(|k| (k * 5 % 7) as u64 + 1).collect();
        let exp: Vec<f64> = (0..18).map(|k| 2.0 + (k % 3) as f64).collect();
        let d = on_graph(&g, 3, obs, exp);
        let term = ClusterTerm {
            direction: None,
            cells: vec![StCell::new(0, 0), StCell::new(1, 0)],
        };
        build_model(&d, &g, &ModelSpec::new(kind).with_terms(vec![term])).unwrap()
    }

    #[test]
    fn restricted_hessian_determinant_matches_basis() {
        for kind in InteractionType::ALL {
            let m = test_model(kind);
            let f = fit_mode(&m, &Hyper::new(2.0, 0.6, 5.0, 3.0)).unwrap();
            let v = null_space(&m);
            assert_eq!(v.ncols(), m.dim() - m.constraints().n_rows());
            let h = neg_log_posterior(&m, &f.x, &f.hyper).unwrap().hessian;
            let want = log_det_restricted(&v, &h);
            assert!((f.log_det_hessian - want).abs() < 1e-8 * want.abs().max(1.0), "{kind}: {} vs {want}", f.log_det_hessian);
        }
    }

    #[test]
    fn prior_determinant_terms_match_basis() {
        // Only differences across hyperparameters are defined; compare two settings.
        for kind in InteractionType::ALL {
            let m = test_model(kind);
            let l = m.layout();
            let v = null_space(&m);
            // Drop the intercept and cluster directions, which carry no random-effect prior.
            let fixed: Vec<usize> = std::iter::once(0).chain((0..l.c).map(|j| l.beta(j))).collect();
            let rnd = |h: &Hyper| {
                let mut q = m.prior_dense(h);
                for &i in &fixed {
                    q[(i, i)] = 1.0;
                }
                log_det_restricted(&v, &q)
            };
            let h1 = Hyper::new(2.0, 0.3, 5.0, 3.0);
            let h2 = Hyper::new(7.0, 0.8, 0.5, 40.0);
            let want = 0.5 * (rnd(&h2) - rnd(&h1));
            let got = m.half_log_prior_det(&h2) - m.half_log_prior_det(&h1);
            assert!((got - want).abs() < 1e-8, "{kind}: {got} vs {want}");
        }
    }
}
