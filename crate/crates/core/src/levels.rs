//! Vibrational level scheme of a well for the stretched sublevel and its
//! Raman partner, thermometry of the ground state and the Zeeman field that
//! brings a red sideband into resonance.
//!
//! Anharmonic ladders come from a sine-DVR (Colbert–Miller) diagonalization
//! of the exact diabatic potential along a 1D cut through the well center,
//! bounded by the nearest potential maxima on either side.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::potential::{omega_from_curvature, LatticePotential, WellExpansion, WellSite};
use crate::units::UnitSystem;
use crate::{Error, Result, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelModel {
    Harmonic,
    Anharmonic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }

    pub fn unit(self) -> Vec2 {
        match self {
            Axis::X => Vec2::x(),
            Axis::Y => Vec2::y(),
        }
    }
}

/// Which vibrational excitation defines a sideband when ω_x ≠ ω_y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidebandAxis {
    X,
    Y,
    /// Average of the x and y excitation energies.
    Mean,
    /// The lower of the degenerate n = r states; x wins ties.
    Lowest,
}

/// Sine-DVR grid points, sorted eigenvalues and eigenvectors (columns) of
/// −d²/ds² + V(s) on (a, b) with Dirichlet walls.
#[derive(Clone, Debug)]
pub struct DvrSpectrum {
    pub points: Vec<f64>,
    pub energies: Vec<f64>,
    pub states: DMatrix<f64>,
    pub kinetic: DMatrix<f64>,
}

impl DvrSpectrum {
    /// ⟨p²⟩ of eigenstate `k` in units of (ħk)².
    pub fn momentum_variance(&self, k: usize) -> f64 {
        let psi = self.states.column(k);
        (psi.transpose() * &self.kinetic * psi)[(0, 0)]
    }
}

/// Kinetic matrix for ħ²/2M = 1 on N − 1 interior points of (a, b).
pub fn sine_dvr_kinetic(a: f64, b: f64, n: usize) -> DMatrix<f64> {
    let pre = PI * PI / (2.0 * (b - a).powi(2));
    let nf = n as f64;
    let dim = n - 1;
    DMatrix::from_fn(dim, dim, |r, c| {
        let (i, j) = ((r + 1) as f64, (c + 1) as f64);
        if r == c {
            pre * ((2.0 * nf * nf + 1.0) / 3.0 - 1.0 / (PI * i / nf).sin().powi(2))
        } else {
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            pre * sign
                * (1.0 / (PI * (i - j) / (2.0 * nf)).sin().powi(2) - 1.0 / (PI * (i + j) / (2.0 * nf)).sin().powi(2))
        }
    })
}

pub fn sine_dvr(v: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Result<DvrSpectrum> {
    if !(b > a) || n < 3 {
        return Err(Error::invalid("dvr grid", "needs b > a and at least three intervals"));
    }
    let dx = (b - a) / n as f64;
    let points: Vec<f64> = (1..n).map(|i| a + dx * i as f64).collect();
    let kinetic = sine_dvr_kinetic(a, b, n);
    let mut h = kinetic.clone();
    for (i, &x) in points.iter().enumerate() {
        h[(i, i)] += v(x);
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let states = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<DVector<f64>>>());
    Ok(DvrSpectrum {
        points,
        energies,
        states,
        kinetic,
    })
}

/// Default DVR intervals across one well.
pub const DVR_INTERVALS: usize = 256;

const BARRIER_STEP: f64 = 0.01;

/// Distance along `dir` from `center` to the first maximum of surface `m`.
fn barrier_distance(potential: &LatticePotential, m: i32, center: Vec2, dir: Vec2, limit: f64) -> Option<f64> {
    let slope = |s: f64| potential.diabatic_gradient(m, center + dir * s).dot(&dir);
    let mut s = BARRIER_STEP;
    while s < limit {
        if slope(s) <= 0.0 {
            let (mut lo, mut hi) = (s - BARRIER_STEP, s);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        s += BARRIER_STEP;
    }
    None
}

/// One sublevel's ladder along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisLadder {
    pub axis: Axis,
    /// ħω from the curvature at the center.
    pub omega: f64,
    /// Level energies minus the potential at the center, n = 0 … n_max.
    pub excitation: Vec<f64>,
    /// ⟨p²⟩ of the axis ground state in (ħk)².
    pub ground_p2: f64,
    /// Lower of the two barrier heights above the center value.
    pub barrier: f64,
    /// Cut window (a, b) relative to the center, if anharmonic.
    pub window: Option<(f64, f64)>,
}

impl AxisLadder {
    /// Number of levels below the lower barrier.
    pub fn bound_levels(&self) -> usize {
        self.excitation.iter().take_while(|&&e| e < self.barrier).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SublevelLadders {
    pub m: i32,
    /// Diabatic potential at the well center.
    pub bottom: f64,
    pub axes: [AxisLadder; 2],
}

pub fn axis_ladder(
    potential: &LatticePotential,
    m: i32,
    center: Vec2,
    axis: Axis,
    n_max: usize,
    model: LevelModel,
    intervals: usize,
) -> Result<AxisLadder> {
    let hess = potential.diabatic_hessian(m, center, 1e-4);
    let curvature = hess[(axis.index(), axis.index())];
    if !(curvature > 0.0) {
        return Err(Error::NotConfining {
            m,
            axis: ["x", "y"][axis.index()],
            curvature,
        });
    }
    let omega = omega_from_curvature(curvature);
    let dir = axis.unit();
    let [a1, a2] = potential.beams.lattice_vectors();
    let limit = 2.0 * a1.norm().max(a2.norm());
    let not_confining = || Error::NotConfining {
        m,
        axis: ["x", "y"][axis.index()],
        curvature,
    };
    let hi = barrier_distance(potential, m, center, dir, limit).ok_or_else(not_confining)?;
    let lo = barrier_distance(potential, m, center, -dir, limit).ok_or_else(not_confining)?;
    let v0 = potential.diabatic(m, center);
    let barrier = (potential.diabatic(m, center + dir * hi) - v0).min(potential.diabatic(m, center - dir * lo) - v0);
    match model {
        LevelModel::Harmonic => Ok(AxisLadder {
            axis,
            omega,
            excitation: (0..=n_max).map(|n| omega * (n as f64 + 0.5)).collect(),
            ground_p2: omega / 4.0,
            barrier,
            window: None,
        }),
        LevelModel::Anharmonic => {
            if intervals < n_max + 2 {
                return Err(Error::invalid("intervals", "DVR grid has fewer points than requested levels"));
            }
            let spec = sine_dvr(|s| potential.diabatic(m, center + dir * s) - v0, -lo, hi, intervals)?;
            Ok(AxisLadder {
                axis,
                omega,
                excitation: spec.energies[..=n_max].to_vec(),
                ground_p2: spec.momentum_variance(0),
                barrier,
                window: Some((-lo, hi)),
            })
        }
    }
}

/// Level energies E(n_x, n_y, m) for the stretched sublevel and its partner
/// at one well, with an optional uniform Zeeman shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelScheme {
    pub well: WellExpansion,
    pub n_max: usize,
    pub model: LevelModel,
    pub stretched: SublevelLadders,
    pub partner: SublevelLadders,
    /// Applied field in mG.
    pub b_z: f64,
    /// g_F μ_B B_z in Eᵣ.
    pub zeeman_per_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    pub n_x: usize,
    pub n_y: usize,
    pub m: i32,
    pub energy: f64,
}

impl LevelScheme {
    pub fn new(potential: &LatticePotential, well: &WellExpansion, n_max: usize, model: LevelModel) -> Result<Self> {
        Self::with_intervals(potential, well, n_max, model, DVR_INTERVALS)
    }

    pub fn with_intervals(
        potential: &LatticePotential,
        well: &WellExpansion,
        n_max: usize,
        model: LevelModel,
        intervals: usize,
    ) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::invalid("n_max", "level scheme needs n_max >= 2"));
        }
        let ladders = |m: i32| -> Result<SublevelLadders> {
            let ax = |a| axis_ladder(potential, m, well.center, a, n_max, model, intervals);
            Ok(SublevelLadders {
                m,
                bottom: potential.diabatic(m, well.center),
                axes: [ax(Axis::X)?, ax(Axis::Y)?],
            })
        };
        Ok(Self {
            well: well.clone(),
            n_max,
            model,
            stretched: ladders(well.stretched_m)?,
            partner: ladders(well.partner_m)?,
            b_z: 0.0,
            zeeman_per_m: 0.0,
        })
    }

    pub fn with_field(mut self, b_z_mg: f64, units: &UnitSystem) -> Self {
        self.b_z = b_z_mg;
        self.zeeman_per_m = units.zeeman_energy(b_z_mg);
        self
    }

    pub fn with_zeeman_energy(mut self, zeeman_per_m: f64, units: &UnitSystem) -> Self {
        self.zeeman_per_m = zeeman_per_m;
        self.b_z = units.field_for_zeeman_energy(zeeman_per_m);
        self
    }

    pub fn sublevel(&self, m: i32) -> Result<&SublevelLadders> {
        if m == self.stretched.m {
            Ok(&self.stretched)
        } else if m == self.partner.m {
            Ok(&self.partner)
        } else {
            Err(Error::UnsupportedSublevel(m))
        }
    }

    /// Energy without the Zeeman term.
    pub fn bare_energy(&self, n_x: usize, n_y: usize, m: i32) -> Result<f64> {
        if n_x > self.n_max || n_y > self.n_max {
            return Err(Error::invalid("n", "vibrational index exceeds n_max"));
        }
        let s = self.sublevel(m)?;
        Ok(s.bottom + s.axes[0].excitation[n_x] + s.axes[1].excitation[n_y])
    }

    pub fn energy(&self, n_x: usize, n_y: usize, m: i32) -> Result<f64> {
        Ok(self.bare_energy(n_x, n_y, m)? + self.zeeman_per_m * m as f64)
    }

    /// Single-axis excitation E(n) − E(0) of the stretched sublevel.
    pub fn axis_spacing(&self, axis: Axis, n: usize) -> f64 {
        let e = &self.stretched.axes[axis.index()].excitation;
        e[n] - e[0]
    }

    /// Energy of the stretched sublevel with `r` quanta along the chosen axis.
    pub fn sideband_energy(&self, r: usize, axis: SidebandAxis) -> Result<f64> {
        let m = self.stretched.m;
        let along = |a: Axis| match a {
            Axis::X => self.bare_energy(r, 0, m),
            Axis::Y => self.bare_energy(0, r, m),
        };
        Ok(match axis {
            SidebandAxis::X => along(Axis::X)?,
            SidebandAxis::Y => along(Axis::Y)?,
            SidebandAxis::Mean => 0.5 * (along(Axis::X)? + along(Axis::Y)?),
            SidebandAxis::Lowest => {
                let mut best = f64::INFINITY;
                for nx in (0..=r).rev() {
                    best = best.min(self.bare_energy(nx, r - nx, m)?);
                }
                best
            }
        })
    }
}

pub fn level_energies(scheme: &LevelScheme, m: i32) -> Result<Vec<Level>> {
    scheme.sublevel(m)?;
    let n = scheme.n_max;
    let mut out = Vec::with_capacity((n + 1) * (n + 1));
    for n_y in 0..=n {
        for n_x in 0..=n {
            out.push(Level {
                n_x,
                n_y,
                m,
                energy: scheme.energy(n_x, n_y, m)?,
            });
        }
    }
    Ok(out)
}

/// Kinetic temperature ⟨p²⟩/(k_B M) of the stretched-state ground level along
/// one axis, in nK.
pub fn ground_state_temperature(scheme: &LevelScheme, axis: Axis, units: &UnitSystem) -> f64 {
    units.temperature_from_p2(scheme.stretched.axes[axis.index()].ground_p2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResonanceSolution {
    pub sideband_order: usize,
    /// Field in mG.
    pub b_z: f64,
    /// g_F μ_B B_z in Eᵣ.
    pub zeeman_per_m: f64,
    pub residual: f64,
}

const RESONANCE_TOL: f64 = 1e-10;

/// Field at which |r, stretched⟩ and |0, partner⟩ are degenerate.
pub fn resonance_field(
    scheme: &LevelScheme,
    order: usize,
    axis: SidebandAxis,
    bound_mg: f64,
    units: &UnitSystem,
) -> Result<ResonanceSolution> {
    if !(1..=2).contains(&order) {
        return Err(Error::invalid("sideband_order", "supported red sidebands are 1 and 2"));
    }
    let upper = scheme.sideband_energy(order, axis)?;
    let lower = scheme.bare_energy(0, 0, scheme.partner.m)?;
    let dm = (scheme.stretched.m - scheme.partner.m) as f64;
    let residual = |b: f64| upper - lower + dm * units.zeeman_energy(b);
    let (mut lo, mut hi) = (-bound_mg, bound_mg);
    let (rlo, rhi) = (residual(lo), residual(hi));
    if rlo.signum() == rhi.signum() {
        return Err(Error::NoResonance { order: order as u32, bound_mg });
    }
    let increasing = rhi > rlo;
    let mut b = 0.5 * (lo + hi);
    for _ in 0..200 {
        b = 0.5 * (lo + hi);
        let r = residual(b);
        if r.abs() < RESONANCE_TOL {
            break;
        }
        if (r > 0.0) == increasing {
            hi = b;
        } else {
            lo = b;
        }
    }
    Ok(ResonanceSolution {
        sideband_order: order,
        b_z: b,
        zeeman_per_m: units.zeeman_energy(b),
        residual: residual(b),
    })
}

fn with_u1(potential: &LatticePotential, u1: f64) -> LatticePotential {
    LatticePotential {
        beams: potential.beams.clone(),
        u1,
        f: potential.f,
    }
}

fn spacing_at(potential: &LatticePotential, site: &WellSite, axis: Axis, model: LevelModel) -> Result<f64> {
    let a = axis_ladder(potential, potential.stretched(site.helicity), site.center, axis, 2, model, DVR_INTERVALS)?;
    Ok(a.excitation[2] - a.excitation[1])
}

/// Single-beam light shift U₁ whose stretched-state ladder has the given
/// spacing E(2) − E(1) along `axis`. The geometry is taken from `potential`.
pub fn depth_from_spacing(
    potential: &LatticePotential,
    site: &WellSite,
    spacing: f64,
    axis: Axis,
    model: LevelModel,
) -> Result<f64> {
    if !(spacing > 0.0) {
        return Err(Error::invalid("spacing", "must be positive"));
    }
    let f = |u1: f64| spacing_at(&with_u1(potential, u1), site, axis, model).map(|s| s - spacing);
    let (mut lo, mut hi) = (potential.u1 / 16.0, potential.u1 * 16.0);
    if f(lo)? > 0.0 || f(hi)? < 0.0 {
        return Err(Error::NoConvergence {
            what: "depth from spacing",
            iterations: 0,
            detail: format!("spacing {spacing} outside the bracket [{lo}, {hi}] in U1"),
        });
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Ground-state temperature implied by a measured sideband spacing, in nK.
pub fn spacing_temperature(
    potential: &LatticePotential,
    site: &WellSite,
    spacing: f64,
    axis: Axis,
    model: LevelModel,
    units: &UnitSystem,
) -> Result<f64> {
    let u1 = depth_from_spacing(potential, site, spacing, axis, model)?;
    let p = with_u1(potential, u1);
    let a = axis_ladder(&p, p.stretched(site.helicity), site.center, axis, 2, model, DVR_INTERVALS)?;
    Ok(units.temperature_from_p2(a.ground_p2))
}

#[derive(Clone, Debug)]
pub struct PlanarSpectrum {
    /// Eigenvalues relative to the potential at the center.
    pub energies: Vec<f64>,
    /// ⟨p_x²⟩ and ⟨p_y²⟩ of the ground state.
    pub ground_p2: [f64; 2],
}

/// 2D levels of surface `m` around `center` in a product basis of the lowest
/// `basis` eigenstates of each axis cut, with the non-separable remainder
/// V(x, y) − V(x, 0) − V(0, y) + V(0, 0) evaluated on the DVR product grid.
pub fn planar_levels(
    potential: &LatticePotential,
    m: i32,
    center: Vec2,
    basis: usize,
    intervals: usize,
) -> Result<PlanarSpectrum> {
    let v0 = potential.diabatic(m, center);
    let [a1, a2] = potential.beams.lattice_vectors();
    let limit = 2.0 * a1.norm().max(a2.norm());
    let mut cuts = Vec::with_capacity(2);
    for axis in Axis::BOTH {
        let dir = axis.unit();
        let err = || Error::NotConfining {
            m,
            axis: ["x", "y"][axis.index()],
            curvature: f64::NAN,
        };
        let hi = barrier_distance(potential, m, center, dir, limit).ok_or_else(err)?;
        let lo = barrier_distance(potential, m, center, -dir, limit).ok_or_else(err)?;
        cuts.push(sine_dvr(|s| potential.diabatic(m, center + dir * s) - v0, -lo, hi, intervals)?);
    }
    let (sx, sy) = (&cuts[0], &cuts[1]);
    let k = basis.min(intervals - 1);
    let np = intervals - 1;
    let dv = DMatrix::from_fn(np, np, |a, b| {
        let (x, y) = (sx.points[a], sy.points[b]);
        potential.diabatic(m, center + Vec2::new(x, y)) - potential.diabatic(m, center + Vec2::new(x, 0.0))
            - potential.diabatic(m, center + Vec2::new(0.0, y))
            + v0
    });
    let phx = sx.states.columns(0, k).into_owned();
    let phy = sy.states.columns(0, k).into_owned();
    // ⟨i j|ΔV|i' j'⟩ = Σ_ab φᵢ(a) φᵢ'(a) ΔV(a,b) χⱼ(b) χⱼ'(b)
    let dim = k * k;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..k {
        for jp in 0..k {
            // W(a) = Σ_b ΔV(a,b) χ_j(b) χ_j'(b)
            let w: DVector<f64> = DVector::from_fn(np, |a, _| {
                (0..np).map(|b| dv[(a, b)] * phy[(b, j)] * phy[(b, jp)]).sum::<f64>()
            });
            for i in 0..k {
                for ip in 0..k {
                    let val: f64 = (0..np).map(|a| phx[(a, i)] * phx[(a, ip)] * w[a]).sum();
                    h[(i + k * j, ip + k * jp)] = val;
                }
            }
        }
    }
    for j in 0..k {
        for i in 0..k {
            h[(i + k * j, i + k * j)] += sx.energies[i] + sy.energies[j];
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let g = eig.eigenvectors.column(order[0]);
    let px = &phx.transpose() * &sx.kinetic * &phx;
    let py = &phy.transpose() * &sy.kinetic * &phy;
    let mut p2 = [0.0; 2];
    for j in 0..k {
        for i in 0..k {
            for ip in 0..k {
                p2[0] += g[i + k * j] * g[ip + k * j] * px[(i, ip)];
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            for jp in 0..k {
                p2[1] += g[i + k * j] * g[i + k * jp] * py[(j, jp)];
            }
        }
    }
    Ok(PlanarSpectrum {
        energies: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        ground_p2: p2,
    })
}
