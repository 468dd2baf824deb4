//! Sums of Gaussians fitted to one or more binned projections.
//!
//! Components share their amplitudes across projections; each projection
//! has its own center and width per component. The fit is a
//! Levenberg–Marquardt least-squares solve whose bin weights are refreshed
//! from the model prediction between solves, which converges to the
//! Poisson maximum-likelihood point.

use nalgebra::{DMatrix, DVector};

use super::histogram::Histogram;
use crate::error::{Error, Result};
use crate::stats::normal_cdf;

const MAX_LM_ITERATIONS: usize = 200;
const REWEIGHT_ROUNDS: usize = 4;

/// Parameter layout: `[A_0..A_n, (μ_{a,i}, σ_{a,i}) for axis a, component i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSum {
    pub n_components: usize,
    pub n_axes: usize,
    pub params: Vec<f64>,
}

impl GaussianSum {
    pub fn new(amplitudes: &[f64], axes: &[Vec<(f64, f64)>]) -> Self {
        let n = amplitudes.len();
        let mut params = amplitudes.to_vec();
        for axis in axes {
            assert_eq!(axis.len(), n);
            for &(mu, sigma) in axis {
                params.push(mu);
                params.push(sigma);
            }
        }
        Self {
            n_components: n,
            n_axes: axes.len(),
            params,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn amplitude(&self, i: usize) -> f64 {
        self.params[i]
    }

    fn mu_index(&self, axis: usize, i: usize) -> usize {
        self.n_components + 2 * (axis * self.n_components + i)
    }

    pub fn mu(&self, axis: usize, i: usize) -> f64 {
        self.params[self.mu_index(axis, i)]
    }

    pub fn sigma(&self, axis: usize, i: usize) -> f64 {
        self.params[self.mu_index(axis, i) + 1]
    }

    /// Expected count in `[a, b)` on `axis`; fills `grad` (length `n_params`).
    fn bin_expectation(&self, p: &[f64], axis: usize, a: f64, b: f64, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for i in 0..self.n_components {
            let m = self.mu_index(axis, i);
            let (amp, mu, sigma) = (p[i], p[m], p[m + 1]);
            let za = (a - mu) / sigma;
            let zb = (b - mu) / sigma;
            let mass = normal_cdf(zb) - normal_cdf(za);
            let (pa, pb) = (std_pdf(za), std_pdf(zb));
            total += amp * mass;
            grad[i] = mass;
            grad[m] = -amp * (pb - pa) / sigma;
            grad[m + 1] = -amp * (zb * pb - za * pa) / sigma;
        }
        total
    }

    /// Expected count in bin `k` of `hist` on `axis`.
    pub fn expected(&self, hist: &Histogram, axis: usize, k: usize) -> f64 {
        let mut scratch = vec![0.0; self.n_params()];
        let (a, b) = hist.edges(k);
        self.bin_expectation(&self.params, axis, a, b, &mut scratch)
    }
}

fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: GaussianSum,
    pub chi2: f64,
    pub dof: usize,
    /// Parameter covariance from the weighted normal equations.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

struct Problem<'a> {
    hists: &'a [Histogram],
    weights: Vec<Vec<f64>>,
}

impl Problem<'_> {
    fn n_bins(&self) -> usize {
        self.hists.iter().map(Histogram::len).sum()
    }

    /// Weighted residuals `√w (y - f)` and Jacobian of `f` scaled by `√w`.
    fn linearize(&self, model: &GaussianSum, p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n_bins();
        let np = p.len();
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, np);
        let mut grad = vec![0.0; np];
        let mut row = 0;
        for (axis, hist) in self.hists.iter().enumerate() {
            for k in 0..hist.len() {
                let (a, b) = hist.edges(k);
                let f = model.bin_expectation(p, axis, a, b, &mut grad);
                let sw = self.weights[axis][k].sqrt();
                r[row] = sw * (hist.counts[k] - f);
                for (j, g) in grad.iter().enumerate() {
                    jac[(row, j)] = sw * g;
                }
                row += 1;
            }
        }
        (r, jac)
    }

    fn chi2(&self, model: &GaussianSum, p: &[f64]) -> f64 {
        let mut grad = vec![0.0; p.len()];
        let mut acc = 0.0;
        for (axis, hist) in self.hists.iter().enumerate() {
            for k in 0..hist.len() {
                let (a, b) = hist.edges(k);
                let f = model.bin_expectation(p, axis, a, b, &mut grad);
                let d = hist.counts[k] - f;
                acc += self.weights[axis][k] * d * d;
            }
        }
        acc
    }

    fn reweight(&mut self, model: &GaussianSum) {
        for (axis, hist) in self.hists.iter().enumerate() {
            for k in 0..hist.len() {
                self.weights[axis][k] = 1.0 / model.expected(hist, axis, k).max(0.5);
            }
        }
    }
}

/// Box constraints for one axis: means stay on the histogram and widths
/// between half a bin and the full span, so no component can vanish into
/// an empty gap or flatten out of sight.
#[derive(Debug, Clone, Copy)]
struct AxisBounds {
    lo: f64,
    hi: f64,
    min_sigma: f64,
    max_sigma: f64,
}

impl AxisBounds {
    fn of(h: &Histogram) -> Self {
        Self {
            lo: h.lo,
            hi: h.lo + h.width * h.len() as f64,
            min_sigma: 0.5 * h.width,
            max_sigma: h.width * h.len() as f64,
        }
    }
}

fn clamp_params(model: &GaussianSum, p: &mut [f64], bounds: &[AxisBounds]) {
    for amp in p.iter_mut().take(model.n_components) {
        *amp = amp.max(0.0);
    }
    for (axis, b) in bounds.iter().enumerate() {
        for i in 0..model.n_components {
            let m = model.mu_index(axis, i);
            p[m] = p[m].clamp(b.lo, b.hi);
            p[m + 1] = p[m + 1].clamp(b.min_sigma, b.max_sigma);
        }
    }
}

/// Fits `model` (initial guess) to `hists`, one histogram per axis.
pub fn fit_gaussian_sum(hists: &[Histogram], initial: GaussianSum) -> Result<FitOutcome> {
    assert_eq!(hists.len(), initial.n_axes);
    let bounds: Vec<AxisBounds> = hists.iter().map(AxisBounds::of).collect();
    let mut problem = Problem {
        hists,
        weights: hists
            .iter()
            .map(|h| h.counts.iter().map(|&c| 1.0 / c.max(1.0)).collect())
            .collect(),
    };
    let np = initial.n_params();
    let n_bins = problem.n_bins();
    if n_bins <= np {
        return Err(Error::degenerate(format!("{n_bins} bins cannot constrain {np} parameters")));
    }
    let mut model = initial;
    let mut total_iterations = 0;
    let mut last_chi2 = f64::INFINITY;
    for round in 0..REWEIGHT_ROUNDS {
        if round > 0 {
            problem.reweight(&model);
        }
        let (params, chi2, iterations, converged) = levenberg_marquardt(&problem, &model, &bounds);
        total_iterations += iterations;
        model.params = params;
        if !converged {
            let (r, _) = problem.linearize(&model, &model.params);
            return Err(Error::Fit {
                iterations: total_iterations,
                chi2,
                residuals: r.iter().copied().collect(),
            });
        }
        let settled = (last_chi2 - chi2).abs() <= 1e-6 * chi2.max(1.0);
        last_chi2 = chi2;
        if settled {
            break;
        }
    }
    let (_, jac) = problem.linearize(&model, &model.params);
    let normal = jac.transpose() * &jac;
    let covariance = normal
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| normal.try_inverse())
        .ok_or_else(|| Error::degenerate("singular normal equations at the fit optimum"))?;
    Ok(FitOutcome {
        chi2: last_chi2,
        dof: n_bins - np,
        covariance,
        iterations: total_iterations,
        model,
    })
}

fn levenberg_marquardt(
    problem: &Problem<'_>,
    model: &GaussianSum,
    bounds: &[AxisBounds],
) -> (Vec<f64>, f64, usize, bool) {
    let mut p = model.params.clone();
    let mut chi2 = problem.chi2(model, &p);
    let mut lambda = 1e-3;
    for it in 1..=MAX_LM_ITERATIONS {
        let (r, jac) = problem.linearize(model, &p);
        let jt = jac.transpose();
        let normal = &jt * &jac;
        let rhs = &jt * &r;
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..30 {
            let mut damped = normal.clone();
            for d in 0..damped.nrows() {
                damped[(d, d)] += lambda * normal[(d, d)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&rhs);
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            clamp_params(model, &mut trial, bounds);
            let trial_chi2 = problem.chi2(model, &trial);
            if trial_chi2 <= chi2 {
                let rel = (chi2 - trial_chi2) / chi2.max(1e-300);
                let step_norm: f64 = step
                    .iter()
                    .zip(p.iter())
                    .map(|(s, a)| (s / a.abs().max(1e-9)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                small_step = rel < 1e-10 || step_norm < 1e-9;
                p = trial;
                chi2 = trial_chi2;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || small_step {
            // no downhill step left: we are at the minimum to numerical precision
            return (p, chi2, it, true);
        }
    }
    (p, chi2, MAX_LM_ITERATIONS, false)
}
