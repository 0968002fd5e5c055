//! Reset-time extraction from count rate versus incident rate.
//!
//! The model is the non-paralyzable rate equation plus a dark floor,
//! `R(φ) = εφ / (1 + εφτ) + D`, fitted by bounded Levenberg-Marquardt on
//! relative residuals so that every decade of the sweep carries equal weight.

use super::{AnalysisError, SweepResult};

const TAU_MAX_NS: f64 = 1000.0;
const TAU_START_NS: f64 = 5.0;
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetFit {
    pub tau_ns: f64,
    pub eps: f64,
    pub dark_hz: f64,
    /// Root sum of squared relative residuals.
    pub residual_norm: f64,
    /// The sweep never drove the element far enough into saturation
    /// (`max φ·τ < 0.1`) to pin down τ.
    pub tau_unconstrained: bool,
    pub iterations: usize,
}

/// Registered rate for per-element incident rate `phi` (1/s), dead time `tau_s`.
pub fn count_rate_model(phi: f64, eps: f64, tau_s: f64, dark: f64) -> f64 {
    let x = eps * phi;
    x / (1.0 + x * tau_s) + dark
}

pub fn fit_reset_time(sweep: &SweepResult, channel: usize) -> Result<ResetFit, AnalysisError> {
    if channel >= sweep.coupling.len() {
        return Err(AnalysisError::InvalidInput(format!("no channel {channel}")));
    }
    sweep.validate_for_fit()?;
    fit_count_rate_curve(&sweep.element_incident(channel), &sweep.counted(channel))
}

type Params = [f64; 3];

struct Problem<'a> {
    phi: &'a [f64],
    counted: &'a [f64],
}

impl Problem<'_> {
    fn residuals(&self, p: &Params) -> Vec<f64> {
        self.phi
            .iter()
            .zip(self.counted)
            .map(|(&phi, &r)| count_rate_model(phi, p[0], p[1] * 1e-9, p[2]) / r - 1.0)
            .collect()
    }

    fn cost(&self, p: &Params) -> f64 {
        self.residuals(p).iter().map(|r| r * r).sum()
    }

    /// Rows of d(residual)/d(eps, tau_ns, dark).
    fn jacobian(&self, p: &Params) -> Vec<[f64; 3]> {
        let (eps, tau) = (p[0], p[1] * 1e-9);
        self.phi
            .iter()
            .zip(self.counted)
            .map(|(&phi, &r)| {
                let denom = 1.0 + eps * phi * tau;
                let d2 = denom * denom;
                [
                    phi / d2 / r,
                    -(eps * phi) * (eps * phi) / d2 * 1e-9 / r,
                    1.0 / r,
                ]
            })
            .collect()
    }
}

fn clamp(p: Params) -> Params {
    [
        p[0].clamp(0.0, 1.0),
        p[1].clamp(0.0, TAU_MAX_NS),
        p[2].max(0.0),
    ]
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][3] - s) / m[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn initial_guess(phi: &[f64], counted: &[f64]) -> Params {
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[a].total_cmp(&phi[b]));
    let dark = order
        .iter()
        .find(|&&i| phi[i] == 0.0)
        .map(|&i| counted[i])
        .unwrap_or_else(|| {
            // extrapolate the two lowest-flux points to zero flux
            let (a, b) = (order[0], order[1]);
            let slope = (counted[b] - counted[a]) / (phi[b] - phi[a]);
            (counted[a] - slope * phi[a]).max(0.0)
        });
    let lowest = order
        .iter()
        .copied()
        .find(|&i| phi[i] > 0.0)
        .expect("at least one lit point");
    let eps = ((counted[lowest] - dark) / phi[lowest]).clamp(1e-3, 1.0);
    [eps, TAU_START_NS, dark]
}

/// Fit `counted = εφ/(1+εφτ) + D` over per-element incident rates `phi`.
pub fn fit_count_rate_curve(phi: &[f64], counted: &[f64]) -> Result<ResetFit, AnalysisError> {
    if phi.len() != counted.len() {
        return Err(AnalysisError::InvalidInput("length mismatch".into()));
    }
    if phi.len() < 6 {
        return Err(AnalysisError::InvalidInput(format!(
            "{} points, need at least 6",
            phi.len()
        )));
    }
    if phi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(AnalysisError::InvalidInput(
            "incident rates must be finite and >= 0".into(),
        ));
    }
    if counted.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(AnalysisError::InvalidInput(
            "counted rates must be finite and positive".into(),
        ));
    }
    let lit: Vec<f64> = phi.iter().copied().filter(|&v| v > 0.0).collect();
    let lo = lit.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lit.iter().copied().fold(0.0, f64::max);
    if lit.is_empty() || hi / lo < 1e3 * (1.0 - 1e-9) {
        return Err(AnalysisError::InvalidInput(
            "sweep must span at least 3 decades of incident rate".into(),
        ));
    }

    let problem = Problem { phi, counted };
    let mut p = initial_guess(phi, counted);
    let mut cost = problem.cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let r = problem.residuals(&p);
        let jac = problem.jacobian(&p);
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (row, ri) in jac.iter().zip(&r) {
            for a in 0..3 {
                jtr[a] += row[a] * ri;
                for b in 0..3 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let gradient = jtr.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if cost < 1e-30 || gradient < 1e-300 {
            converged = true;
            break;
        }

        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for k in 0..3 {
                a[k][k] += lambda * jtj[k][k].max(1e-300);
            }
            let Some(step) = solve3(a, jtr.map(|g| -g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = clamp([p[0] + step[0], p[1] + step[1], p[2] + step[2]]);
            let trial_cost = problem.cost(&trial);
            if trial_cost < cost {
                let rel_step = (0..3)
                    .map(|k| (trial[k] - p[k]).abs() / (p[k].abs() + 1e-12))
                    .fold(0.0, f64::max);
                let rel_drop = (cost - trial_cost) / cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel_drop < 1e-14 || rel_step < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        // no downhill step at any damping: a (bounded) minimum
        if !improved || converged {
            converged = true;
            break;
        }
    }

    let tau_s = p[1] * 1e-9;
    let fit = ResetFit {
        tau_ns: p[1],
        eps: p[0],
        dark_hz: p[2],
        residual_norm: cost.sqrt(),
        tau_unconstrained: hi * tau_s < 0.1,
        iterations,
    };
    if converged {
        Ok(fit)
    } else {
        Err(AnalysisError::NoConvergence {
            iterations,
            best: fit,
        })
    }
}

/// Maximum full-efficiency count rate, `1/τ`, in Hz.
pub fn max_full_rate(fit: &ResetFit) -> Result<f64, AnalysisError> {
    if !(fit.tau_ns > 0.0) {
        return Err(AnalysisError::Unbounded);
    }
    Ok(1e9 / fit.tau_ns)
}

/// Per-element maximum rates and the two ways of averaging them.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxRateSummary {
    pub per_element_hz: Vec<f64>,
    /// Mean of the per-element `1/τ_i`.
    pub mean_of_rates_hz: f64,
    /// `1 / mean(τ_i)`.
    pub rate_of_mean_tau_hz: f64,
}

pub fn max_rate_summary(fits: &[ResetFit]) -> Result<MaxRateSummary, AnalysisError> {
    if fits.is_empty() {
        return Err(AnalysisError::InvalidInput("no fits".into()));
    }
    let per_element_hz = fits
        .iter()
        .map(max_full_rate)
        .collect::<Result<Vec<_>, _>>()?;
    let n = fits.len() as f64;
    let mean_tau = fits.iter().map(|f| f.tau_ns).sum::<f64>() / n;
    Ok(MaxRateSummary {
        mean_of_rates_hz: per_element_hz.iter().sum::<f64>() / n,
        rate_of_mean_tau_hz: 1e9 / mean_tau,
        per_element_hz,
    })
}
