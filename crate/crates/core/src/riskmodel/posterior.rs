use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Hyper, HyperOptimum, ModeFit, RiskModel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::stdata::format_f64;

/// `S` draws from the constrained Gaussian approximation at the mode.
pub fn posterior_samples(fit: &ModeFit, s: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = fit.x.len();
    (0..s)
        .map(|_| {
            let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let mut y = fit.chol.solve_lt(&z);
            // kriging onto A y = 0, twice to clean round-off
            for _ in 0..2 {
                let ay = linalg::mat_vec(&fit.a, &y);
                let nu = fit.g_chol.solve(&ay);
                let corr = linalg::mat_vec(&fit.w, &nu);
                for (yi, c) in y.iter_mut().zip(&corr) {
                    *yi -= c;
                }
            }
            y.iter().zip(&fit.x).map(|(a, b)| a + b).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    Above,
    Below,
}

/// Posterior summary of one cell's relative risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRisk {
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Model-fit criteria from posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub n_draws: usize,
    pub deviance_bar: f64,
    pub p_d: f64,
    pub dic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub waic: f64,
    /// Mean negative log CPO over cells.
    pub ls: f64,
    /// Cells whose CPO importance weights have effective sample size below 10.
    pub flagged_cells: Vec<usize>,
}

/// Linear predictor draws with everything derived from them.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// `eta[s][k]`: log relative risk of cell `k` in draw `s`.
    pub eta: Vec<Vec<f64>>,
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Posterior {
    pub fn new(model: &RiskModel, fit: &ModeFit, s: usize, seed: u64) -> Self {
        let eta = posterior_samples(fit, s, seed)
            .iter()
            .map(|x| model.eta_unchecked(x))
            .collect();
        Self { eta }
    }

    pub fn from_eta(eta: Vec<Vec<f64>>) -> Self {
        Self { eta }
    }

    pub fn n_draws(&self) -> usize {
        self.eta.len()
    }

    fn n_cells(&self) -> usize {
        self.eta.first().map_or(0, Vec::len)
    }

    /// DIC, WAIC and the log score.
    pub fn criteria(&self, model: &RiskModel) -> Criteria {
        let s = self.n_draws();
        let n = self.n_cells();
        let o = model.observed();
        let e = model.expected();
        let lf: Vec<f64> = o.iter().map(|&v| statrs::function::gamma::ln_gamma(v + 1.0)).collect();
        let log_p = |k: usize, eta: f64| o[k] * (e[k].ln() + eta) - e[k] * eta.exp() - lf[k];

        let mut dev_bar = 0.0;
        let mut mean_eta = vec![0.0; n];
        for draw in &self.eta {
            for (k, &v) in draw.iter().enumerate() {
                dev_bar += -2.0 * log_p(k, v);
                mean_eta[k] += v / s as f64;
            }
        }
        dev_bar /= s as f64;
        let dev_mean: f64 = mean_eta.iter().enumerate().map(|(k, &v)| -2.0 * log_p(k, v)).sum();

        let (mut lppd, mut p_waic, mut ls) = (0.0, 0.0, 0.0);
        let mut flagged = Vec::new();
        let ln_s = (s as f64).ln();
        let mut lp = vec![0.0; s];
        for k in 0..n {
            for (j, draw) in self.eta.iter().enumerate() {
                lp[j] = log_p(k, draw[k]);
            }
            lppd += log_sum_exp(lp.iter().copied()) - ln_s;
            let m = lp.iter().sum::<f64>() / s as f64;
            if s > 1 {
                p_waic += lp.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s - 1) as f64;
            }
            let log_cpo = -(log_sum_exp(lp.iter().map(|v| -v)) - ln_s);
            ls -= log_cpo;
            let wmax = lp.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
            let (sw, sw2) = lp.iter().fold((0.0, 0.0), |(a, b), v| {
                let w = (-v - wmax).exp();
                (a + w, b + w * w)
            });
            if sw * sw / sw2 < 10.0 {
                flagged.push(k);
            }
        }
        let p_d = dev_bar - dev_mean;
        Criteria {
            n_draws: s,
            deviance_bar: dev_bar,
            p_d,
            dic: dev_bar + p_d,
            lppd,
            p_waic,
            waic: -2.0 * (lppd - p_waic),
            ls: ls / n as f64,
            flagged_cells: flagged,
        }
    }

    /// Fraction of draws with relative risk beyond `threshold`, per cell.
    pub fn exceedance(&self, threshold: f64, tail: Tail) -> Vec<f64> {
        let cut = threshold.ln();
        let s = self.n_draws().max(1) as f64;
        (0..self.n_cells())
            .map(|k| {
                self.eta
                    .iter()
                    .filter(|d| match tail {
                        Tail::Above => d[k] > cut,
                        Tail::Below => d[k] < cut,
                    })
                    .count() as f64
                    / s
            })
            .collect()
    }

    /// Median and 95% interval of the relative risk, per cell.
    pub fn risk_summary(&self) -> Vec<CellRisk> {
        let mut buf = Vec::with_capacity(self.n_draws());
        (0..self.n_cells())
            .map(|k| {
                buf.clear();
                buf.extend(self.eta.iter().map(|d| d[k].exp()));
                buf.sort_by(f64::total_cmp);
                CellRisk {
                    median: quantile(&buf, 0.5),
                    lo95: quantile(&buf, 0.025),
                    hi95: quantile(&buf, 0.975),
                }
            })
            .collect()
    }
}

/// Criteria from `S ≥ 100` posterior draws.
pub fn information_criteria(model: &RiskModel, fit: &ModeFit, s: usize, seed: u64) -> Result<Criteria> {
    if s < 100 {
        return Err(Error::DegenerateInput(format!("need at least 100 posterior draws, got {s}")));
    }
    Ok(Posterior::new(model, fit, s, seed).criteria(model))
}

pub fn exceedance_prob(model: &RiskModel, fit: &ModeFit, threshold: f64, tail: Tail, s: usize, seed: u64) -> Vec<f64> {
    Posterior::new(model, fit, s, seed).exceedance(threshold, tail)
}

pub fn risk_summary(model: &RiskModel, fit: &ModeFit, s: usize, seed: u64) -> Vec<CellRisk> {
    Posterior::new(model, fit, s, seed).risk_summary()
}

/// Writes `area_id,period,median_risk,lo95,hi95,p_exceed_above_1,p_exceed_below_1`.
pub fn write_risk_csv(path: impl AsRef<Path>, model: &RiskModel, posterior: &Posterior) -> Result<()> {
    let summary = posterior.risk_summary();
    let above = posterior.exceedance(1.0, Tail::Above);
    let below = posterior.exceedance(1.0, Tail::Below);
    let n = model.layout().n;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "area_id",
        "period",
        "median_risk",
        "lo95",
        "hi95",
        "p_exceed_above_1",
        "p_exceed_below_1",
    ])?;
    for (k, r) in summary.iter().enumerate() {
        w.write_record([
            model.area_ids()[k % n].as_str(),
            model.period_labels()[k / n].as_str(),
            &format_f64(r.median),
            &format_f64(r.lo95),
            &format_f64(r.hi95),
            &format_f64(above[k]),
            &format_f64(below[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub newton_iterations: usize,
    pub gradient_norm: f64,
    pub condition_estimate: f64,
    pub ill_conditioned: bool,
    pub hyper_evaluations: usize,
    pub restarts: Vec<super::RestartTrace>,
}

/// Fit report: hyperparameters, criteria and convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub interaction: String,
    pub n_clusters: usize,
    pub hyper: Hyper,
    pub log_marginal: Option<f64>,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub criteria: Criteria,
    pub convergence: Convergence,
}

impl FitReport {
    pub fn new(model: &RiskModel, mode: &ModeFit, hyper: Option<&HyperOptimum>, criteria: Criteria) -> Self {
        Self {
            interaction: model.interaction().to_string(),
            n_clusters: model.terms().len(),
            hyper: mode.hyper,
            log_marginal: hyper.map(|h| h.log_marginal),
            alpha: mode.alpha(),
            beta: mode.beta(model),
            criteria,
            convergence: Convergence {
                newton_iterations: mode.iterations,
                gradient_norm: mode.gradient_norm,
                condition_estimate: mode.condition,
                ill_conditioned: mode.condition > 1e8,
                hyper_evaluations: hyper.map_or(0, |h| h.evaluations),
                restarts: hyper.map(|h| h.restarts.clone()).unwrap_or_default(),
            },
        }
    }
}
