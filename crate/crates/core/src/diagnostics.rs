//! Measurement chain: momentum distributions of vibrational populations,
//! time-of-flight arrival signals with optional Stern-Gerlach separation,
//! temperature fits, Boltzmann factors and the sideband scan analysis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_rate_model, evolve, long_time_limit, observables, steady_state, CoolingParameters, PopulationVector, StateSpace};
use crate::fit::{fit_double_lorentzian, levenberg_marquardt, DoubleLorentzian, FitOptions, LorentzianPeak};
use crate::levels::{resonance_field, LevelScheme, SidebandAxis};
use crate::potential::WellExpansion;
use crate::units::constants::{BOHR_MAGNETON, BOLTZMANN, STANDARD_GRAVITY};
use crate::units::UnitSystem;
use crate::{Error, Result, Vec2};

/// Normalized Hermite functions ψ₀ … ψ_n at ξ.
fn hermite_functions(n: usize, xi: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(std::f64::consts::PI.powf(-0.25) * (-0.5 * xi * xi).exp());
    if n >= 1 {
        out.push(std::f64::consts::SQRT_2 * xi * out[0]);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * xi * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
        out.push(next);
    }
    out
}

/// Tabulated inverse CDF of |ψ_n(ξ)|².
#[derive(Clone, Debug)]
struct HermiteSampler {
    xi: Vec<f64>,
    cdf: Vec<f64>,
}

const SAMPLER_POINTS: usize = 4097;

impl HermiteSampler {
    fn new(n: usize) -> Self {
        let half = (2.0 * n as f64 + 1.0).sqrt() + 9.0;
        let dx = 2.0 * half / (SAMPLER_POINTS - 1) as f64;
        let xi: Vec<f64> = (0..SAMPLER_POINTS).map(|i| -half + dx * i as f64).collect();
        let dens: Vec<f64> = xi.iter().map(|&x| hermite_functions(n, x)[n].powi(2)).collect();
        let mut cdf = vec![0.0; SAMPLER_POINTS];
        for i in 1..SAMPLER_POINTS {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * dx;
        }
        let total = cdf[SAMPLER_POINTS - 1];
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Self { xi, cdf }
    }

    fn sample(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, SAMPLER_POINTS - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.xi[k - 1] + f * (self.xi[k] - self.xi[k - 1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumSample {
    /// Momentum along the measurement axis, ħk.
    pub p: f64,
    pub m: i32,
    pub weight: f64,
}

/// Mixture of harmonic-oscillator momentum densities projected on an axis.
#[derive(Clone, Debug)]
pub struct MomentumDistribution {
    /// (weight, n_x, n_y, m)
    pub components: Vec<(f64, u32, u32, i32)>,
    /// Ground-state momentum spread √⟨p²⟩ per principal axis, ħk.
    pub sigma: [f64; 2],
    pub axis: Vec2,
}

pub fn momentum_distribution(
    space: &StateSpace,
    p: &PopulationVector,
    well: &WellExpansion,
    axis: Vec2,
) -> Result<MomentumDistribution> {
    if ((axis.norm() - 1.0).abs()) > 1e-9 {
        return Err(Error::invalid("axis", "measurement axis must be a unit vector"));
    }
    let components = space
        .states()
        .iter()
        .zip(&p.p)
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, &w)| (w, s.n_x, s.n_y, s.m))
        .collect();
    Ok(MomentumDistribution {
        components,
        sigma: [(well.omega_x / 4.0).sqrt(), (well.omega_y / 4.0).sqrt()],
        axis,
    })
}

impl MomentumDistribution {
    /// Pure ground state along `axis`.
    pub fn ground(well: &WellExpansion, m: i32, axis: Vec2) -> Self {
        Self {
            components: vec![(1.0, 0, 0, m)],
            sigma: [(well.omega_x / 4.0).sqrt(), (well.omega_y / 4.0).sqrt()],
            axis,
        }
    }

    /// ⟨p²⟩ per principal axis.
    pub fn axis_variances(&self) -> [f64; 2] {
        let mut v = [0.0; 2];
        for &(w, nx, ny, _) in &self.components {
            v[0] += w * (2.0 * nx as f64 + 1.0) * self.sigma[0].powi(2);
            v[1] += w * (2.0 * ny as f64 + 1.0) * self.sigma[1].powi(2);
        }
        v
    }

    /// ⟨p²⟩ along the measurement axis.
    pub fn variance(&self) -> f64 {
        let v = self.axis_variances();
        self.axis.x.powi(2) * v[0] + self.axis.y.powi(2) * v[1]
    }

    pub fn temperature(&self, units: &UnitSystem) -> f64 {
        units.temperature_from_p2(self.variance())
    }

    fn axis_density(n: u32, sigma: f64, p: f64) -> f64 {
        let s = sigma * std::f64::consts::SQRT_2;
        hermite_functions(n as usize, p / s)[n as usize].powi(2) / s
    }

    /// Probability density of the projected momentum.
    pub fn density(&self, p: f64) -> f64 {
        let (c, s) = (self.axis.x, self.axis.y);
        let aligned = s.abs() < 1e-12 || c.abs() < 1e-12;
        self.components
            .iter()
            .map(|&(w, nx, ny, _)| {
                if aligned {
                    return if s.abs() < 1e-12 {
                        w * Self::axis_density(nx, self.sigma[0], p / c) / c.abs()
                    } else {
                        w * Self::axis_density(ny, self.sigma[1], p / s) / s.abs()
                    };
                }
                // p = c·p_x + s·p_y, integrate over p_x
                let span = (2.0 * nx as f64 + 1.0).sqrt() * self.sigma[0] + 10.0 * self.sigma[0];
                let k = 600;
                let h = 2.0 * span / k as f64;
                let f = |px: f64| {
                    Self::axis_density(nx, self.sigma[0], px) * Self::axis_density(ny, self.sigma[1], (p - c * px) / s)
                        / s.abs()
                };
                let mut acc = 0.5 * (f(-span) + f(span));
                for i in 1..k {
                    acc += f(-span + h * i as f64);
                }
                w * acc * h
            })
            .sum()
    }

    /// `n` equally weighted samples, atom `i` drawn from stream `i` of `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<MomentumSample> {
        let max_n = self.components.iter().map(|c| c.1.max(c.2)).max().unwrap_or(0) as usize;
        let samplers: Vec<HermiteSampler> = (0..=max_n).map(HermiteSampler::new).collect();
        let mut acc = 0.0;
        let cum: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                acc += c.0;
                acc
            })
            .collect();
        let total = acc;
        let (c, s) = (self.axis.x, self.axis.y);
        let scale = [self.sigma[0] * std::f64::consts::SQRT_2, self.sigma[1] * std::f64::consts::SQRT_2];
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let u: f64 = rng.random::<f64>() * total;
                let k = cum.partition_point(|&x| x <= u).min(cum.len() - 1);
                let (_, nx, ny, m) = self.components[k];
                let px = samplers[nx as usize].sample(rng.random()) * scale[0];
                let py = samplers[ny as usize].sample(rng.random()) * scale[1];
                MomentumSample {
                    p: c * px + s * py,
                    m,
                    weight: 1.0 / n as f64,
                }
            })
            .collect()
    }
}

/// Gaussian momenta at kinetic temperature `t_nk`, sublevels drawn from
/// `m_weights`.
pub fn gaussian_momenta(t_nk: f64, m_weights: &[(i32, f64)], n: usize, seed: u64, units: &UnitSystem) -> Vec<MomentumSample> {
    let sigma = units.p2_from_temperature(t_nk).sqrt();
    let total: f64 = m_weights.iter().map(|w| w.1).sum();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut u: f64 = rng.random::<f64>() * total;
            let mut m = m_weights.last().map(|w| w.0).unwrap_or(0);
            for &(mm, w) in m_weights {
                if u < w {
                    m = mm;
                    break;
                }
                u -= w;
            }
            let z: f64 = rng.sample(StandardNormal);
            MomentumSample {
                p: sigma * z,
                m,
                weight: 1.0 / n as f64,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TofGeometry {
    /// Lattice to probe-slab midplane distance, cm.
    pub drop_height_cm: f64,
    pub probe_thickness_um: f64,
    /// Cloud diameter (taken as four standard deviations), μm.
    pub cloud_diameter_um: f64,
    pub bin_width_ms: f64,
}

impl Default for TofGeometry {
    fn default() -> Self {
        Self {
            drop_height_cm: 4.7,
            probe_thickness_um: 50.0,
            cloud_diameter_um: 400.0,
            bin_width_ms: 0.05,
        }
    }
}

impl TofGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_height_cm > 0.0) {
            return Err(Error::invalid("drop_height_cm", "must be positive"));
        }
        if !(self.probe_thickness_um >= 0.0 && self.cloud_diameter_um >= 0.0) {
            return Err(Error::invalid("tof geometry", "sizes must be non-negative"));
        }
        if !(self.bin_width_ms > 0.0) {
            return Err(Error::invalid("bin_width_ms", "must be positive"));
        }
        Ok(())
    }

    fn h(&self) -> f64 {
        self.drop_height_cm * 1e-2
    }

    fn w(&self) -> f64 {
        self.probe_thickness_um * 1e-6
    }

    fn sigma_z(&self) -> f64 {
        self.cloud_diameter_um * 1e-6 / 4.0
    }

    /// Arrival time of an atom at rest from the cloud center, ms.
    pub fn free_fall_time_ms(&self) -> f64 {
        (2.0 * self.h() / STANDARD_GRAVITY).sqrt() * 1e3
    }
}

/// Downward acceleration of sublevel `m` in a vertical gradient (G/cm), m/s².
pub fn stern_gerlach_acceleration(m: i32, gradient_g_per_cm: f64, units: &UnitSystem) -> f64 {
    // 1 G/cm = 1e-2 T/m
    STANDARD_GRAVITY + m as f64 * units.g_f * BOHR_MAGNETON * gradient_g_per_cm * 1e-2 / units.mass
}

#[derive(Clone, Debug, PartialEq)]
pub struct TofSignal {
    /// Bin centers in ms.
    pub t_ms: Vec<f64>,
    pub counts: Vec<f64>,
    pub bin_width_ms: f64,
    pub geometry: TofGeometry,
    pub gradient: f64,
    pub n_atoms: usize,
    /// Atoms that never reach the probe.
    pub escaped: usize,
}

impl TofSignal {
    pub fn arrived(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn populated_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0.0).count()
    }

    fn edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.t_ms.iter().map(|t| t - 0.5 * self.bin_width_ms).collect();
        e.push(self.t_ms.last().copied().unwrap_or(0.0) + 0.5 * self.bin_width_ms);
        e
    }
}

/// Ballistic arrival of each atom at the probe-slab, with a uniform crossing
/// depth across the slab.
pub fn simulate_tof(
    samples: &[MomentumSample],
    geometry: &TofGeometry,
    gradient: f64,
    seed: u64,
    units: &UnitSystem,
) -> Result<TofSignal> {
    geometry.validate()?;
    let v_unit = units.momentum_unit() / units.mass;
    let (h, w, sz) = (geometry.h(), geometry.w(), geometry.sigma_z());
    let arrivals: Vec<Option<f64>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5deece66d);
            rng.set_stream(i as u64);
            let z0: f64 = sz * rng.sample::<f64, _>(StandardNormal);
            let depth = h + w * (rng.random::<f64>() - 0.5);
            let v0 = s.p * v_unit;
            let g = stern_gerlach_acceleration(s.m, gradient, units);
            if g <= 0.0 {
                return None;
            }
            // z0 + v0 t − g t²/2 = −depth
            let disc = v0 * v0 + 2.0 * g * (z0 + depth);
            if disc < 0.0 {
                return None;
            }
            Some((v0 + disc.sqrt()) / g * 1e3)
        })
        .collect();
    let escaped = arrivals.iter().filter(|a| a.is_none()).count();
    let times: Vec<f64> = arrivals.into_iter().flatten().collect();
    let bw = geometry.bin_width_ms;
    if times.is_empty() {
        return Ok(TofSignal {
            t_ms: Vec::new(),
            counts: Vec::new(),
            bin_width_ms: bw,
            geometry: geometry.clone(),
            gradient,
            n_atoms: samples.len(),
            escaped,
        });
    }
    let lo = (times.iter().copied().fold(f64::INFINITY, f64::min) / bw).floor() - 2.0;
    let hi = (times.iter().copied().fold(f64::NEG_INFINITY, f64::max) / bw).ceil() + 2.0;
    let nbins = (hi - lo) as usize;
    let mut counts = vec![0.0; nbins];
    for t in &times {
        let k = ((t / bw).floor() - lo) as usize;
        counts[k.min(nbins - 1)] += 1.0;
    }
    Ok(TofSignal {
        t_ms: (0..nbins).map(|k| (lo + k as f64 + 0.5) * bw).collect(),
        counts,
        bin_width_ms: bw,
        geometry: geometry.clone(),
        gradient,
        n_atoms: samples.len(),
        escaped,
    })
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// ∫ Φ(x) dx antiderivative.
fn phi_integral(x: f64) -> f64 {
    x * normal_cdf(x) + normal_pdf(x)
}

/// Fraction of atoms of one sublevel that crossed the slab by `t_ms`, for a
/// Gaussian velocity spread `sigma_v` (m/s).
fn arrival_cdf(t_ms: f64, sigma_v: f64, g: f64, geometry: &TofGeometry) -> f64 {
    let t = t_ms * 1e-3;
    if t <= 0.0 {
        return 0.0;
    }
    let (h, w, sz) = (geometry.h(), geometry.w(), geometry.sigma_z());
    let s = (sz * sz + sigma_v * sigma_v * t * t).sqrt();
    let a = 0.5 * g * t * t - h;
    if s == 0.0 {
        return if w > 0.0 { ((a + 0.5 * w) / w).clamp(0.0, 1.0) } else { f64::from(u8::from(a >= 0.0)) };
    }
    if w == 0.0 {
        return normal_cdf(a / s);
    }
    s / w * (phi_integral((a + 0.5 * w) / s) - phi_integral((a - 0.5 * w) / s))
}

/// Predicted fraction of atoms per bin for one sublevel.
pub fn tof_bin_probabilities(
    signal: &TofSignal,
    t_nk: f64,
    m: i32,
    units: &UnitSystem,
) -> Vec<f64> {
    let sigma_v = (BOLTZMANN * t_nk.max(0.0) * 1e-9 / units.mass).sqrt();
    let g = stern_gerlach_acceleration(m, signal.gradient, units);
    let edges = signal.edges();
    let cdf: Vec<f64> = edges.iter().map(|&t| arrival_cdf(t, sigma_v, g, &signal.geometry)).collect();
    cdf.windows(2).map(|c| (c[1] - c[0]).max(0.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureFit {
    pub t_nk: f64,
    pub std_error: f64,
    /// Norm of the Poisson-weighted residuals.
    pub residual_norm: f64,
    pub reduced_chi2: f64,
    /// Moment-based estimate from the arrival-time variance.
    pub moment_t_nk: f64,
    /// Velocity spread contributes less to the arrival width than the cloud.
    pub cloud_limited: bool,
}

pub const MIN_POPULATED_BINS: usize = 10;

/// Temperature from Var(t): σ_v² t₀² ≈ v² Var(t) − σ_z² − w²/12 at the free-fall
/// arrival with v = g t₀.
pub fn moment_temperature(signal: &TofSignal, units: &UnitSystem) -> f64 {
    let n = signal.arrived();
    let mean = signal.t_ms.iter().zip(&signal.counts).map(|(t, c)| t * c).sum::<f64>() / n;
    let var = signal.t_ms.iter().zip(&signal.counts).map(|(t, c)| (t - mean).powi(2) * c).sum::<f64>() / n
        - signal.bin_width_ms.powi(2) / 12.0;
    let t0 = mean * 1e-3;
    let v = STANDARD_GRAVITY * t0;
    let g = &signal.geometry;
    let sv2 = (v * v * var * 1e-6 - g.sigma_z().powi(2) - g.w().powi(2) / 12.0) / (t0 * t0);
    sv2 * units.mass / BOLTZMANN * 1e9
}

pub fn fit_temperature(signal: &TofSignal, units: &UnitSystem) -> Result<TemperatureFit> {
    if signal.populated_bins() < MIN_POPULATED_BINS {
        return Err(Error::Fit {
            reason: format!(
                "{} populated bins, at least {} required",
                signal.populated_bins(),
                MIN_POPULATED_BINS
            ),
        });
    }
    let moment = moment_temperature(signal, units);
    let start = moment.max(10.0);
    let n = signal.arrived();
    let m = 0;
    let residuals = |p: &[f64]| -> Vec<f64> {
        let probs = tof_bin_probabilities(signal, p[0].exp(), m, units);
        signal
            .counts
            .iter()
            .zip(&probs)
            .map(|(c, q)| {
                let model = n * q;
                (model - c) / model.max(1.0).sqrt()
            })
            .collect()
    };
    let res = levenberg_marquardt(residuals, &[start.ln()], &FitOptions::default()).map_err(|e| Error::Fit {
        reason: format!("{e}; initial guess {start:.1} nK from the arrival-time variance"),
    })?;
    let t_nk = res.params[0].exp();
    let dof = (signal.counts.len() - 1).max(1) as f64;
    let sigma_v = (BOLTZMANN * t_nk * 1e-9 / units.mass).sqrt();
    let t0 = signal.geometry.free_fall_time_ms() * 1e-3;
    Ok(TemperatureFit {
        t_nk,
        std_error: res.std_errors.first().copied().unwrap_or(f64::NAN) * t_nk,
        residual_norm: res.residual_norm,
        reduced_chi2: res.residual_norm.powi(2) / dof,
        moment_t_nk: moment,
        cloud_limited: sigma_v * t0 < signal.geometry.sigma_z(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoltzmannEstimate {
    pub q_b: f64,
    /// False when T < T₀ makes q_B negative.
    pub physical: bool,
}

pub fn boltzmann_from_temperature(t_nk: f64, t0_nk: f64) -> Result<BoltzmannEstimate> {
    if !(t_nk > 0.0 && t0_nk > 0.0) {
        return Err(Error::Domain {
            value: t_nk.min(t0_nk),
            domain: "T, T0 > 0",
        });
    }
    let q_b = (t_nk - t0_nk) / (t_nk + t0_nk);
    Ok(BoltzmannEstimate {
        q_b,
        physical: q_b >= 0.0,
    })
}

/// Two-dimensional ground-state population (1 − q_B)².
pub fn ground_state_population(q_b: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q_b) {
        return Err(Error::Domain {
            value: q_b,
            domain: "[0, 1)",
        });
    }
    Ok((1.0 - q_b).powi(2))
}

/// Adjacent sublevel peaks must be further apart than their FWHM.
fn check_separation(signal: &TofSignal, m_values: &[i32], t_nk: f64, units: &UnitSystem) -> Result<()> {
    let sigma_v = (BOLTZMANN * t_nk * 1e-9 / units.mass).sqrt();
    let geo = &signal.geometry;
    let arrival = |m: i32| (2.0 * geo.h() / stern_gerlach_acceleration(m, signal.gradient, units)).sqrt();
    let mut sorted = m_values.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        let (ta, tb) = (arrival(pair[0]), arrival(pair[1]));
        let v = STANDARD_GRAVITY * ta.min(tb);
        let width = 2.0 * (2.0 * 2f64.ln()).sqrt() * ((sigma_v * ta).powi(2) + geo.sigma_z().powi(2)).sqrt() / v;
        let spacing = (ta - tb).abs();
        if !(spacing > width) {
            return Err(Error::UnderSeparated {
                spacing_ms: spacing * 1e3,
                width_ms: width * 1e3,
            });
        }
    }
    Ok(())
}

/// Sublevel fractions from a Stern-Gerlach separated signal. Peak positions
/// follow from the kinematics; a common temperature and one amplitude per
/// sublevel are fitted.
pub fn stern_gerlach_populations(signal: &TofSignal, m_values: &[i32], units: &UnitSystem) -> Result<Vec<(i32, f64)>> {
    if m_values.is_empty() {
        return Err(Error::invalid("m_values", "at least one sublevel"));
    }
    let n = signal.arrived();
    if n == 0.0 {
        return Err(Error::Fit {
            reason: "no arrivals".into(),
        });
    }
    let plain = TofSignal {
        gradient: 0.0,
        ..signal.clone()
    };
    let guess = moment_temperature(&plain, units).clamp(50.0, 20_000.0);
    let k = m_values.len();
    let model = |p: &[f64]| -> Vec<f64> {
        let t = p[0].exp();
        let mut out = vec![0.0; signal.counts.len()];
        for (j, &m) in m_values.iter().enumerate() {
            for (o, q) in out.iter_mut().zip(tof_bin_probabilities(signal, t, m, units)) {
                *o += p[j + 1] * q;
            }
        }
        out
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        model(p)
            .iter()
            .zip(&signal.counts)
            .map(|(mo, c)| (mo - c) / mo.max(1.0).sqrt())
            .collect()
    };
    let mut init = vec![(guess.min(3000.0)).ln()];
    init.extend(std::iter::repeat_n(n / k as f64, k));
    let mut lower = vec![f64::NEG_INFINITY];
    lower.extend(std::iter::repeat_n(0.0, k));
    let res = levenberg_marquardt(
        residuals,
        &init,
        &FitOptions {
            lower: Some(lower),
            ..FitOptions::default()
        },
    );
    let res = match res {
        Ok(r) => r,
        Err(e) => {
            check_separation(signal, m_values, guess, units)?;
            return Err(e);
        }
    };
    check_separation(signal, m_values, res.params[0].exp(), units)?;
    let total: f64 = res.params[1..].iter().sum();
    Ok(m_values.iter().zip(&res.params[1..]).map(|(&m, a)| (m, a / total)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScanMode {
    /// Unique stationary distribution; non-unique cases are errors.
    SteadyState,
    /// t → ∞ from `initial`, which is the steady state whenever it is unique.
    LongTime { initial: InitialState },
    /// Evolve from `initial` for `t` (ħ/Eᵣ).
    Timed { t: f64, initial: InitialState },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    Ground,
    /// Uniform over states with at most `n` quanta in both sublevels.
    Uniform { n: u32 },
    /// Thermal in the stretched sublevel at a kinetic temperature, nK.
    Thermal { t_nk: f64 },
}

impl InitialState {
    pub fn populations(&self, space: &StateSpace, well: &WellExpansion, units: &UnitSystem) -> Result<PopulationVector> {
        Ok(match *self {
            InitialState::Ground => PopulationVector::delta(space, space.ground()),
            InitialState::Uniform { n } => PopulationVector::uniform(space, n),
            InitialState::Thermal { t_nk } => {
                if !(t_nk > 0.0) {
                    return Err(Error::invalid("initial temperature", "must be positive"));
                }
                let kt = units.nk_to_energy(t_nk);
                PopulationVector::thermal(space, [(-well.omega_x / kt).exp(), (-well.omega_y / kt).exp()])
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    /// mG
    pub b_z: f64,
    pub inv_qb: f64,
    pub t_nk: f64,
    pub nbar: [f64; 2],
    /// T ≤ T₀ so 1/q_B is not physical; excluded from fits.
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct SidebandScan {
    pub points: Vec<ScanPoint>,
    pub t0_nk: f64,
    pub fit: Option<DoubleLorentzian>,
    pub fit_error: Option<String>,
    /// Expected first and second red-sideband fields, mG.
    pub expected_centers: [f64; 2],
}

impl SidebandScan {
    /// Fitted peak (first sideband first) in mG.
    pub fn first_sideband(&self) -> Option<LorentzianPeak> {
        self.fit.as_ref().map(|f| f.peaks[0])
    }
}

/// Kinetic temperature of a population along `axis` in the harmonic model.
pub fn population_temperature(space: &StateSpace, p: &PopulationVector, well: &WellExpansion, axis: Vec2, units: &UnitSystem) -> f64 {
    let d = MomentumDistribution {
        components: space.states().iter().zip(&p.p).map(|(s, &w)| (w, s.n_x, s.n_y, s.m)).collect(),
        sigma: [(well.omega_x / 4.0).sqrt(), (well.omega_y / 4.0).sqrt()],
        axis,
    };
    d.temperature(units)
}

/// Ground-state kinetic temperature along `axis` in the harmonic model.
pub fn reference_temperature(well: &WellExpansion, axis: Vec2, units: &UnitSystem) -> f64 {
    MomentumDistribution::ground(well, well.stretched_m, axis).temperature(units)
}

/// How each scan point's kinetic temperature is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum ScanThermometry {
    /// Exact second moment of the populations.
    Observables,
    /// Sampled time of flight followed by a temperature fit; point `i` uses
    /// seed `seed + i`.
    Tof { geometry: TofGeometry, atoms: usize, seed: u64 },
}

#[allow(clippy::too_many_arguments)]
pub fn sideband_scan(
    scheme: &LevelScheme,
    params: &CoolingParameters,
    b_values: &[f64],
    mode: &ScanMode,
    thermometry: &ScanThermometry,
    axis: Vec2,
    units: &UnitSystem,
) -> Result<SidebandScan> {
    if b_values.len() < 8 {
        return Err(Error::invalid("b_z range", "a scan needs at least 8 points"));
    }
    let well = &scheme.well;
    let t0 = reference_temperature(well, axis, units);
    let points = b_values
        .par_iter()
        .enumerate()
        .map(|(i, &b)| -> Result<ScanPoint> {
            let s = scheme.clone().with_field(b, units);
            let model = build_rate_model(&s, params)?;
            let p = match mode {
                ScanMode::SteadyState => steady_state(&model)?,
                ScanMode::LongTime { initial } => long_time_limit(&model, &initial.populations(&model.space, well, units)?)?,
                ScanMode::Timed { t, initial } => {
                    let p0 = initial.populations(&model.space, well, units)?;
                    evolve(&model, &p0, *t, crate::dynamics::DEFAULT_CHUNK)?
                }
            };
            let t_nk = match thermometry {
                ScanThermometry::Observables => population_temperature(&model.space, &p, well, axis, units),
                ScanThermometry::Tof { geometry, atoms, seed } => {
                    let samples = momentum_distribution(&model.space, &p, well, axis)?.sample(*atoms, seed.wrapping_add(i as u64));
                    let signal = simulate_tof(&samples, geometry, 0.0, seed.wrapping_add(i as u64), units)?;
                    fit_temperature(&signal, units)?.t_nk
                }
            };
            let q = boltzmann_from_temperature(t_nk, t0)?;
            Ok(ScanPoint {
                b_z: b,
                inv_qb: 1.0 / q.q_b,
                t_nk,
                nbar: observables(&model.space, &p).nbar,
                flagged: !(q.q_b > 0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let r1 = resonance_field(scheme, 1, SidebandAxis::Mean, 1e4, units)?;
    let r2 = resonance_field(scheme, 2, SidebandAxis::Mean, 1e4, units)?;
    let expected = [r1.b_z, r2.b_z];
    let (fit, fit_error) = match fit_scan(&points, expected, params.gamma_p, units) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(SidebandScan {
        points,
        t0_nk: t0,
        fit,
        fit_error,
        expected_centers: expected,
    })
}

/// Two-Lorentzian fit in B_z with relative residuals. Centers are confined to
/// half the separation of the expected resonances around each.
pub fn fit_scan(points: &[ScanPoint], expected: [f64; 2], gamma_p: f64, units: &UnitSystem) -> Result<DoubleLorentzian> {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().filter(|p| !p.flagged).map(|p| (p.b_z, p.inv_qb)).unzip();
    if x.len() < 8 {
        return Err(Error::Fit {
            reason: format!("{} unflagged points, at least 8 required", x.len()),
        });
    }
    let half = 0.5 * (expected[1] - expected[0]).abs();
    let near = |c: f64| {
        x.iter()
            .zip(&y)
            .filter(|(xi, _)| (**xi - c).abs() < 0.5 * half)
            .map(|(_, yi)| *yi)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let baseline = y.iter().copied().fold(f64::INFINITY, f64::min);
    let width = units.field_for_zeeman_energy(gamma_p.max(0.5)).abs();
    let guess = |k: usize| LorentzianPeak {
        center: expected[k],
        fwhm: width,
        amplitude: (near(expected[k]) - baseline).max(1e-6),
    };
    let window = |c: f64| (c - half, c + half);
    let sigma: Vec<f64> = y.iter().map(|v| v.abs().max(1e-12)).collect();
    let fit = fit_double_lorentzian(
        &x,
        &y,
        Some(&sigma),
        [guess(0), guess(1)],
        baseline,
        [window(expected[0]), window(expected[1])],
        2.0 * half,
    )?;
    let floor = MIN_PEAK_CONTRAST * fit.offset.abs().max(f64::MIN_POSITIVE);
    if let Some(k) = fit.peaks.iter().position(|p| !(p.amplitude > floor)) {
        return Err(Error::Fit {
            reason: format!(
                "resonance {} not resolved: amplitude {:.3e} against baseline {:.3e}",
                k + 1,
                fit.peaks[k].amplitude,
                fit.offset
            ),
        });
    }
    Ok(fit)
}

/// Smallest peak height, relative to the baseline, counted as a resolved
/// resonance.
pub const MIN_PEAK_CONTRAST: f64 = 0.05;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{standard_beam_set, PhaseChoice};
    use crate::levels::LevelModel;
    use crate::potential::{principal_well, LatticePotential};
    use crate::units::AtomSpecies;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn setup() -> (WellExpansion, UnitSystem, LatticePotential) {
        let cs = AtomSpecies::cesium();
        let beams = standard_beam_set(1.0, 0.3, FRAC_PI_2, PhaseChoice::SigmaPlusAtOrigin).unwrap();
        let p = LatticePotential::new(beams, 54.0, &cs).unwrap();
        (principal_well(&p).unwrap(), UnitSystem::new(&cs), p)
    }

    fn x_prime() -> Vec2 {
        Vec2::new(30f64.to_radians().cos(), 30f64.to_radians().sin())
    }

    #[test]
    fn hermite_functions_are_orthonormal() {
        let h = 0.01;
        let grid: Vec<Vec<f64>> = (-1500..=1500).map(|i| hermite_functions(6, i as f64 * h)).collect();
        for a in 0..=6 {
            for b in 0..=6 {
                let s: f64 = grid.iter().map(|v| v[a] * v[b]).sum::<f64>() * h;
                assert!((s - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ground_state_momentum() {
        let (w, units, _) = setup();
        let d = MomentumDistribution::ground(&w, 4, Vec2::x());
        assert_relative_eq!(d.temperature(&units), units.energy_to_nk(w.omega_x / 2.0), max_relative = 1e-12);
        let s = d.sample(100_000, 3);
        let var = s.iter().map(|x| x.p * x.p).sum::<f64>() / s.len() as f64;
        assert!((var / d.variance() - 1.0).abs() < 0.015);
        let h = 0.01;
        let norm: f64 = (-2000..=2000).map(|i| d.density(i as f64 * h)).sum::<f64>() * h;
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn projection_consistency_and_density() {
        let (w, _, _) = setup();
        let space = StateSpace::planar(4).unwrap();
        let p = PopulationVector::uniform(&space, 2);
        let d = momentum_distribution(&space, &p, &w, x_prime()).unwrap();
        let v = d.axis_variances();
        assert_relative_eq!(d.variance(), 0.75 * v[0] + 0.25 * v[1], max_relative = 1e-12);
        let h = 0.02;
        let (mut norm, mut second) = (0.0, 0.0);
        for i in -1500..=1500 {
            let x = i as f64 * h;
            let f = d.density(x);
            norm += f * h;
            second += f * x * x * h;
        }
        assert!((norm - 1.0).abs() < 1e-5, "{norm}");
        assert!((second / d.variance() - 1.0).abs() < 1e-4);
        assert!(momentum_distribution(&space, &p, &w, Vec2::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn zero_temperature_point_cloud_falls_freely() {
        let (_, units, _) = setup();
        let geo = TofGeometry {
            cloud_diameter_um: 0.0,
            probe_thickness_um: 0.0,
            ..TofGeometry::default()
        };
        let s = vec![MomentumSample { p: 0.0, m: 4, weight: 1.0 }; 10];
        let sig = simulate_tof(&s, &geo, 0.0, 1, &units).unwrap();
        let k = sig.counts.iter().position(|&c| c > 0.0).unwrap();
        assert_eq!(sig.counts[k], 10.0);
        assert!((sig.t_ms[k] - geo.free_fall_time_ms()).abs() <= 0.5 * sig.bin_width_ms);
        assert!((geo.free_fall_time_ms() - 97.9).abs() < 0.2);
    }

    #[test]
    fn no_gradient_means_no_m_dependence() {
        let (_, units, _) = setup();
        let a = gaussian_momenta(900.0, &[(4, 1.0)], 5000, 9, &units);
        let b: Vec<MomentumSample> = a.iter().map(|s| MomentumSample { m: -2, ..*s }).collect();
        let geo = TofGeometry::default();
        assert_eq!(simulate_tof(&a, &geo, 0.0, 2, &units).unwrap().counts, simulate_tof(&b, &geo, 0.0, 2, &units).unwrap().counts);
    }

    #[test]
    fn upward_escape_is_counted() {
        let (_, units, _) = setup();
        let s = vec![MomentumSample { p: 0.0, m: -4, weight: 1.0 }; 4];
        // strong gradient overcomes gravity for m = −4
        let sig = simulate_tof(&s, &TofGeometry::default(), 200.0, 1, &units).unwrap();
        assert_eq!(sig.escaped, 4);
        assert_eq!(sig.arrived(), 0.0);
    }

    #[test]
    fn temperature_fit_closed_loop() {
        let (_, units, _) = setup();
        let geo = TofGeometry::default();
        for (t, seed) in [(966.0, 1u64), (3000.0, 2)] {
            let s = gaussian_momenta(t, &[(4, 1.0)], 100_000, seed, &units);
            let sig = simulate_tof(&s, &geo, 0.0, seed, &units).unwrap();
            let f = fit_temperature(&sig, &units).unwrap();
            assert!((f.t_nk / t - 1.0).abs() < 0.02, "{t}: {}", f.t_nk);
            assert!((f.moment_t_nk / t - 1.0).abs() < 0.05, "{t}: moment {}", f.moment_t_nk);
            assert!(!f.cloud_limited);
            assert!(f.reduced_chi2 < 2.0);
        }
    }

    #[test]
    fn cold_cloud_is_flagged() {
        let (_, units, _) = setup();
        let s = gaussian_momenta(5.0, &[(4, 1.0)], 50_000, 4, &units);
        let f = fit_temperature(&simulate_tof(&s, &TofGeometry::default(), 0.0, 4, &units).unwrap(), &units).unwrap();
        assert!(f.cloud_limited);
        assert!(f.t_nk < 50.0);
    }

    #[test]
    fn boltzmann_and_ground_population() {
        assert_eq!(boltzmann_from_temperature(951.0, 951.0).unwrap().q_b, 0.0);
        let q = boltzmann_from_temperature(966.0, 951.0).unwrap();
        assert_relative_eq!(q.q_b, 15.0 / 1917.0);
        assert!((q.q_b - 0.008).abs() < 5e-4);
        assert_relative_eq!(boltzmann_from_temperature(3.0, 1.0).unwrap().q_b, 0.5);
        assert!(!boltzmann_from_temperature(900.0, 951.0).unwrap().physical);
        assert!(boltzmann_from_temperature(0.0, 951.0).is_err());
        assert_eq!(ground_state_population(0.0).unwrap(), 1.0);
        assert_relative_eq!(ground_state_population(0.008).unwrap(), 0.984064);
        assert_relative_eq!(ground_state_population(0.5).unwrap(), 0.25);
        assert!(ground_state_population(1.0).is_err());
        assert!(ground_state_population(-0.1).is_err());
    }

    #[test]
    fn stern_gerlach_recovers_fractions() {
        let (_, units, _) = setup();
        let geo = TofGeometry::default();
        let one = gaussian_momenta(1000.0, &[(4, 1.0)], 50_000, 5, &units);
        let sig = simulate_tof(&one, &geo, 10.0, 5, &units).unwrap();
        let f = stern_gerlach_populations(&sig, &[3, 4], &units).unwrap();
        assert!(f.iter().find(|x| x.0 == 4).unwrap().1 >= 0.99);

        let all: Vec<(i32, f64)> = (-4..=4).map(|m| (m, 1.0)).collect();
        let s = gaussian_momenta(1000.0, &all, 90_000, 6, &units);
        let sig = simulate_tof(&s, &geo, 10.0, 6, &units).unwrap();
        let ms: Vec<i32> = (-4..=4).collect();
        let f = stern_gerlach_populations(&sig, &ms, &units).unwrap();
        let sigma = (1.0f64 / 9.0 * 8.0 / 9.0 / 90_000.0).sqrt();
        for (m, x) in f {
            assert!((x - 1.0 / 9.0).abs() < 4.0 * sigma, "m {m}: {x}");
        }

        let weak = simulate_tof(&one, &geo, 0.5, 5, &units).unwrap();
        assert!(matches!(
            stern_gerlach_populations(&weak, &[3, 4], &units),
            Err(Error::UnderSeparated { .. })
        ));
    }

    #[test]
    fn q_b_round_trip() {
        let (w, units, _) = setup();
        let space = StateSpace::planar(60).unwrap();
        let t0 = reference_temperature(&w, Vec2::x(), &units);
        for q in [0.01, 0.1, 0.3] {
            let p = PopulationVector::thermal(&space, [q, q]);
            let t = population_temperature(&space, &p, &w, Vec2::x(), &units);
            let est = boltzmann_from_temperature(t, t0).unwrap();
            assert!((est.q_b - q).abs() < 1e-3, "{q}: {}", est.q_b);
        }
    }

    #[test]
    fn scan_requires_points() {
        let (w, units, p) = setup();
        let s = LevelScheme::new(&p, &w, 4, LevelModel::Harmonic).unwrap();
        let params = CoolingParameters { n_max: 4, ..CoolingParameters::default() };
        assert!(sideband_scan(&s, &params, &[0.0, 1.0], &ScanMode::SteadyState, &ScanThermometry::Observables, x_prime(), &units).is_err());
    }

    #[test]
    fn flat_scan_has_no_resolved_resonance() {
        let (_, units, _) = setup();
        let points: Vec<ScanPoint> = (0..20)
            .map(|i| ScanPoint {
                b_z: -130.0 + 7.0 * i as f64,
                inv_qb: 1.2,
                t_nk: 1e4,
                nbar: [5.0; 2],
                flagged: false,
            })
            .collect();
        let e = fit_scan(&points, [-5.0, -117.0], 0.8, &units).unwrap_err();
        assert!(matches!(e, Error::Fit { .. }), "{e}");
    }
}
