//! Bounded Levenberg–Marquardt least squares with a numerical Jacobian, and
//! the Lorentzian line shapes used by the sideband analysis.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when the relative decrease of the cost falls below this.
    pub tolerance: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-12,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Standard errors from s²(JᵀJ)⁻¹, empty if the normal matrix is singular.
    pub std_errors: Vec<f64>,
}

fn project(p: &mut [f64], opts: &FitOptions) {
    if let Some(lo) = &opts.lower {
        for (x, l) in p.iter_mut().zip(lo) {
            *x = x.max(*l);
        }
    }
    if let Some(hi) = &opts.upper {
        for (x, h) in p.iter_mut().zip(hi) {
            *x = x.min(*h);
        }
    }
}

fn jacobian(residuals: &dyn Fn(&[f64]) -> Vec<f64>, p: &[f64], r0: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(r0.len(), p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-7 * p[k].abs().max(1e-3);
        q[k] = p[k] + h;
        let rp = residuals(&q);
        q[k] = p[k] - h;
        let rm = residuals(&q);
        q[k] = p[k];
        for i in 0..r0.len() {
            j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    j
}

/// Minimise ½‖r(p)‖² from `initial`.
pub fn levenberg_marquardt(
    residuals: impl Fn(&[f64]) -> Vec<f64>,
    initial: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let n_par = initial.len();
    let mut p = initial.to_vec();
    project(&mut p, opts);
    let mut r = residuals(&p);
    if r.len() < n_par {
        return Err(Error::Fit {
            reason: format!("{} data points for {} parameters", r.len(), n_par),
        });
    }
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut c = cost(&r);
    if !c.is_finite() {
        return Err(Error::Fit {
            reason: format!("non-finite residuals at the initial guess {initial:?}"),
        });
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut jac = jacobian(&residuals, &p, &r);
    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = a.clone();
            for k in 0..n_par {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
            project(&mut trial, opts);
            let rt = residuals(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct < c {
                let rel = (c - ct) / c.max(f64::MIN_POSITIVE);
                p = trial;
                r = rt;
                c = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < opts.tolerance {
                    return Ok(finish(&residuals, p, r, iterations));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            return Ok(finish(&residuals, p, r, iterations));
        }
        jac = jacobian(&residuals, &p, &r);
    }
    let res = finish(&residuals, p, r, iterations);
    Err(Error::Fit {
        reason: format!(
            "no convergence after {} iterations from {:?}; last parameters {:?}",
            iterations, initial, res.params
        ),
    })
}

fn finish(residuals: &dyn Fn(&[f64]) -> Vec<f64>, p: Vec<f64>, r: Vec<f64>, iterations: usize) -> FitResult {
    let rss: f64 = r.iter().map(|x| x * x).sum();
    let dof = r.len().saturating_sub(p.len()).max(1) as f64;
    let j = jacobian(residuals, &p, &r);
    let std_errors = (j.transpose() * &j)
        .try_inverse()
        .map(|cov| (0..p.len()).map(|k| (cov[(k, k)] * rss / dof).max(0.0).sqrt()).collect())
        .unwrap_or_default();
    FitResult {
        params: p,
        residual_norm: rss.sqrt(),
        iterations,
        std_errors,
    }
}

/// Lorentzian of peak height `amplitude` and full width at half maximum `fwhm`.
pub fn lorentzian(x: f64, center: f64, fwhm: f64, amplitude: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    amplitude / (1.0 + u * u)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorentzianPeak {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoubleLorentzian {
    pub peaks: [LorentzianPeak; 2],
    pub offset: f64,
    pub r_squared: f64,
    pub residual_norm: f64,
}

impl DoubleLorentzian {
    pub fn eval(&self, x: f64) -> f64 {
        self.offset
            + self
                .peaks
                .iter()
                .map(|p| lorentzian(x, p.center, p.fwhm, p.amplitude))
                .sum::<f64>()
    }

    pub fn separation(&self) -> f64 {
        (self.peaks[1].center - self.peaks[0].center).abs()
    }
}

fn double_eval(p: &[f64], x: f64) -> f64 {
    p[6] + lorentzian(x, p[1], p[2], p[0]) + lorentzian(x, p[4], p[5], p[3])
}

pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Fit a single Lorentzian plus constant to (x, y).
pub fn fit_lorentzian(x: &[f64], y: &[f64], guess: LorentzianPeak, offset: f64) -> Result<(LorentzianPeak, f64, f64)> {
    let res = levenberg_marquardt(
        |p| x.iter().zip(y).map(|(&xi, &yi)| p[3] + lorentzian(xi, p[0], p[1], p[2]) - yi).collect(),
        &[guess.center, guess.fwhm, guess.amplitude, offset],
        &FitOptions {
            lower: Some(vec![f64::NEG_INFINITY, 1e-9, f64::NEG_INFINITY, f64::NEG_INFINITY]),
            ..FitOptions::default()
        },
    )?;
    let p = &res.params;
    let fitted: Vec<f64> = x.iter().map(|&xi| p[3] + lorentzian(xi, p[0], p[1], p[2])).collect();
    Ok((
        LorentzianPeak {
            center: p[0],
            fwhm: p[1],
            amplitude: p[2],
        },
        p[3],
        r_squared(y, &fitted),
    ))
}

/// Fit two Lorentzians plus a constant. Each center is confined to its
/// `windows` entry, which keeps the peaks from swapping or merging. Residuals
/// are divided by `sigma` when given.
#[allow(clippy::too_many_arguments)]
pub fn fit_double_lorentzian(
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    guess: [LorentzianPeak; 2],
    offset: f64,
    windows: [(f64, f64); 2],
    max_fwhm: f64,
) -> Result<DoubleLorentzian> {
    let init = [
        guess[0].amplitude,
        guess[0].center,
        guess[0].fwhm,
        guess[1].amplitude,
        guess[1].center,
        guess[1].fwhm,
        offset,
    ];
    let opts = FitOptions {
        lower: Some(vec![0.0, windows[0].0, 1e-6, 0.0, windows[1].0, 1e-6, f64::NEG_INFINITY]),
        upper: Some(vec![f64::INFINITY, windows[0].1, max_fwhm, f64::INFINITY, windows[1].1, max_fwhm, f64::INFINITY]),
        ..FitOptions::default()
    };
    let res = levenberg_marquardt(
        |p| {
            x.iter()
                .zip(y)
                .enumerate()
                .map(|(i, (&xi, &yi))| (double_eval(p, xi) - yi) / sigma.map_or(1.0, |s| s[i]))
                .collect()
        },
        &init,
        &opts,
    )?;
    let p = &res.params;
    let fitted: Vec<f64> = x.iter().map(|&xi| double_eval(p, xi)).collect();
    let peak = |k: usize| LorentzianPeak {
        amplitude: p[3 * k],
        center: p[3 * k + 1],
        fwhm: p[3 * k + 2],
    };
    Ok(DoubleLorentzian {
        peaks: [peak(0), peak(1)],
        offset: p[6],
        r_squared: r_squared(y, &fitted),
        residual_norm: res.residual_norm,
    })
}
