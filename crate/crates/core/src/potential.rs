//! Light-shift operator of the far-detuned lattice on the ground hyperfine
//! manifold, its diabatic surfaces, and the harmonic / Lamb-Dicke expansion
//! of a well.
//!
//! The operator is
//!
//! ```text
//! U(x) = −(2/3) U₁ |ε(x)|² I + (U₁/3) B(x)·F / F,     B = i(ε* × ε)
//! ```
//!
//! in the basis m = −F … +F (index `m + F`). Spin matrices follow the
//! Condon–Shortley phase convention. The Raman coupling element reported as
//! `U₄,₃` is ⟨m = F−1| U |m = F⟩, the operator that lowers the sublevel.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use rayon::prelude::*;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::field::{effective_field, field_at, field_with_gradient, BeamSet, GridSpec, LocalField};
use crate::units::{AtomSpecies, UnitSystem};
use crate::{Error, Result, Vec2, C64};

/// Spin-F angular momentum matrices in the basis m = −F … +F.
#[derive(Clone, Debug)]
pub struct SpinMatrices {
    pub f: u32,
    pub fx: DMatrix<C64>,
    pub fy: DMatrix<C64>,
    pub fz: DMatrix<C64>,
}

pub fn spin_matrices(f: u32) -> SpinMatrices {
    let dim = 2 * f as usize + 1;
    let ff = f as f64;
    let mut fp = DMatrix::<C64>::zeros(dim, dim);
    let mut fz = DMatrix::<C64>::zeros(dim, dim);
    for i in 0..dim {
        let m = i as f64 - ff;
        fz[(i, i)] = C64::from(m);
        if i + 1 < dim {
            // ⟨m+1|F₊|m⟩
            fp[(i + 1, i)] = C64::from((ff * (ff + 1.0) - m * (m + 1.0)).sqrt());
        }
    }
    let fm = fp.adjoint();
    let fx = (&fp + &fm) * C64::from(0.5);
    let fy = (&fp - &fm) * C64::new(0.0, -0.5);
    SpinMatrices { f, fx, fy, fz }
}

#[derive(Clone, Debug)]
pub struct LightShiftOperator {
    pub matrix: DMatrix<C64>,
    pub position: Vec2,
    pub u1: f64,
    pub f: u32,
}

impl LightShiftOperator {
    fn index(&self, m: i32) -> usize {
        let idx = m + self.f as i32;
        assert!(idx >= 0 && idx <= 2 * self.f as i32, "m = {m} outside the F = {} manifold", self.f);
        idx as usize
    }

    /// ⟨m_row| U |m_col⟩
    pub fn element(&self, m_row: i32, m_col: i32) -> C64 {
        self.matrix[(self.index(m_row), self.index(m_col))]
    }

    pub fn diagonal(&self, m: i32) -> f64 {
        self.element(m, m).re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).norm() / self.matrix.norm().max(f64::MIN_POSITIVE)
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// Eigenvalues in ascending order (adiabatic potentials).
    pub fn adiabatic_levels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

pub fn light_shift_operator(f: &LocalField, u1: f64, species: &AtomSpecies) -> LightShiftOperator {
    light_shift_operator_for_spin(f, u1, &spin_matrices(species.f))
}

pub fn light_shift_operator_for_spin(f: &LocalField, u1: f64, spin: &SpinMatrices) -> LightShiftOperator {
    let dim = 2 * spin.f as usize + 1;
    let [bx, by, bz] = f.effective_field();
    let scalar = -2.0 / 3.0 * u1 * f.intensity();
    let vector = u1 / (3.0 * spin.f as f64);
    let matrix = DMatrix::<C64>::identity(dim, dim) * C64::from(scalar)
        + (&spin.fx * C64::from(bx) + &spin.fy * C64::from(by) + &spin.fz * C64::from(bz)) * C64::from(vector);
    LightShiftOperator {
        matrix,
        position: f.position,
        u1,
        f: spin.f,
    }
}

/// Uniform magnetic field along ẑ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeemanTerm {
    pub b_z: f64,
    pub g_f: f64,
    /// g_F μ_B B_z in Eᵣ.
    pub energy_per_m: f64,
}

impl ZeemanTerm {
    pub fn new(b_z_mg: f64, units: &UnitSystem) -> Self {
        Self {
            b_z: b_z_mg,
            g_f: units.g_f,
            energy_per_m: units.zeeman_energy(b_z_mg),
        }
    }
}

pub fn add_zeeman(op: &LightShiftOperator, z: &ZeemanTerm) -> LightShiftOperator {
    let mut out = op.clone();
    let f = op.f as i32;
    for m in -f..=f {
        let i = (m + f) as usize;
        out.matrix[(i, i)] += C64::from(z.energy_per_m * m as f64);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Helicity {
    SigmaPlus,
    SigmaMinus,
}

impl Helicity {
    pub fn sign(self) -> i32 {
        match self {
            Helicity::SigmaPlus => 1,
            Helicity::SigmaMinus => -1,
        }
    }
}

impl std::fmt::Display for Helicity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Helicity::SigmaPlus => "sigma+",
            Helicity::SigmaMinus => "sigma-",
        })
    }
}

/// Lattice beams together with the light-shift scale and the spin of the
/// trapped manifold. All evaluations are analytic in the beam sum.
#[derive(Clone, Debug)]
pub struct LatticePotential {
    pub beams: BeamSet,
    pub u1: f64,
    pub f: u32,
}

impl LatticePotential {
    pub fn new(beams: BeamSet, u1: f64, species: &AtomSpecies) -> Result<Self> {
        if !(u1 > 0.0 && u1.is_finite()) {
            return Err(Error::invalid("u1", "single-beam light shift must be positive"));
        }
        Ok(Self { beams, u1, f: species.f })
    }

    pub fn operator(&self, x: Vec2) -> LightShiftOperator {
        light_shift_operator_for_spin(&field_at(&self.beams, x), self.u1, &spin_matrices(self.f))
    }

    fn check_m(&self, m: i32) {
        assert!(m.unsigned_abs() <= self.f, "m = {m} outside the F = {} manifold", self.f);
    }

    /// Diagonal element for sublevel `m`.
    pub fn diabatic(&self, m: i32, x: Vec2) -> f64 {
        self.check_m(m);
        let f = field_at(&self.beams, x);
        -2.0 / 3.0 * self.u1 * f.intensity() + self.u1 / 3.0 * f.helicity() * m as f64 / self.f as f64
    }

    /// Analytic gradient of the diagonal element for sublevel `m`.
    pub fn diabatic_gradient(&self, m: i32, x: Vec2) -> Vec2 {
        self.check_m(m);
        let [e, dx, dy] = field_with_gradient(&self.beams, &x);
        let grad = |d: &nalgebra::Vector3<C64>| {
            let di = 2.0 * e.iter().zip(d.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            // ∂[i(ε*ₓε_y − ε*_yεₓ)]
            let dbz = (C64::i()
                * (d.x.conj() * e.y + e.x.conj() * d.y - d.y.conj() * e.x - e.y.conj() * d.x))
                .re;
            -2.0 / 3.0 * self.u1 * di + self.u1 / 3.0 * dbz * m as f64 / self.f as f64
        };
        Vec2::new(grad(&dx), grad(&dy))
    }

    /// Hessian of the diagonal element from central differences of the
    /// analytic gradient with one Richardson step.
    pub fn diabatic_hessian(&self, m: i32, x: Vec2, h: f64) -> Matrix2<f64> {
        let diff = |h: f64| {
            let gx = (self.diabatic_gradient(m, x + Vec2::x() * h) - self.diabatic_gradient(m, x - Vec2::x() * h)) / (2.0 * h);
            let gy = (self.diabatic_gradient(m, x + Vec2::y() * h) - self.diabatic_gradient(m, x - Vec2::y() * h)) / (2.0 * h);
            Matrix2::new(gx.x, gy.x, gx.y, gy.y)
        };
        let rich = (diff(h / 2.0) * 4.0 - diff(h)) / 3.0;
        (rich + rich.transpose()) * 0.5
    }

    /// Raman element ⟨m_to| U |m_from⟩ for |m_to − m_from| = 1.
    pub fn raman(&self, m_to: i32, m_from: i32, x: Vec2) -> C64 {
        self.check_m(m_to);
        self.check_m(m_from);
        assert_eq!((m_to - m_from).abs(), 1, "Raman element requires Δm = ±1");
        let f = field_at(&self.beams, x);
        let [bx, by, _] = effective_field(&f.eps);
        let ff = self.f as f64;
        let (m, ladder) = (m_from as f64, if m_to < m_from { C64::new(bx, by) } else { C64::new(bx, -by) });
        let mm = m_to as f64;
        // ⟨m∓1|F∓|m⟩ = √(F(F+1) − m(m∓1))
        let cg = (ff * (ff + 1.0) - m * mm).sqrt();
        ladder * (0.5 * cg * self.u1 / (3.0 * ff))
    }

    pub fn stretched(&self, helicity: Helicity) -> i32 {
        helicity.sign() * self.f as i32
    }

    pub fn partner(&self, helicity: Helicity) -> i32 {
        helicity.sign() * (self.f as i32 - 1)
    }
}

#[derive(Clone, Debug)]
pub struct SurfaceMap {
    pub grid: GridSpec,
    /// Sublevels in column order, −F … +F.
    pub m_values: Vec<i32>,
    /// Row-major over the grid; each entry holds one value per sublevel.
    pub values: Vec<Vec<f64>>,
}

pub fn diabatic_surfaces(beams: &BeamSet, u1: f64, species: &AtomSpecies, grid: &GridSpec) -> Result<SurfaceMap> {
    grid.validate()?;
    let spin = spin_matrices(species.f);
    let f = species.f as i32;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let op = light_shift_operator_for_spin(&field_at(beams, grid.point(i)), u1, &spin);
            (-f..=f).map(|m| op.diagonal(m)).collect()
        })
        .collect();
    Ok(SurfaceMap {
        grid: *grid,
        m_values: (-f..=f).collect(),
        values,
    })
}

pub fn adiabatic_surfaces(beams: &BeamSet, u1: f64, species: &AtomSpecies, grid: &GridSpec) -> Result<SurfaceMap> {
    grid.validate()?;
    let spin = spin_matrices(species.f);
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| light_shift_operator_for_spin(&field_at(beams, grid.point(i)), u1, &spin).adiabatic_levels())
        .collect();
    Ok(SurfaceMap {
        grid: *grid,
        m_values: (0..=2 * species.f as i32).collect(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WellSite {
    pub center: Vec2,
    pub helicity: Helicity,
}

const WELL_SEEDS: usize = 48;
const NEWTON_MAX_ITER: usize = 100;
const GRADIENT_TOL: f64 = 1e-10;

fn fractional(beams: &BeamSet, x: Vec2) -> Vec2 {
    let [b1, b2] = beams.reciprocal_vectors();
    Vec2::new(b1.dot(&x), b2.dot(&x)) / (2.0 * std::f64::consts::PI)
}

/// Wrap a point into the primitive cell a₁[0,1) + a₂[0,1).
fn wrap_cell(beams: &BeamSet, x: Vec2) -> Vec2 {
    let [a1, a2] = beams.lattice_vectors();
    let mut s = fractional(beams, x);
    for c in s.iter_mut() {
        *c -= c.floor();
        if *c > 1.0 - 1e-9 {
            *c = 0.0;
        }
    }
    a1 * s.x + a2 * s.y
}

/// Damped Newton iteration on the diabatic surface `m`.
pub fn minimize_surface(potential: &LatticePotential, m: i32, seed: Vec2) -> Result<Vec2> {
    let mut x = seed;
    for it in 0..NEWTON_MAX_ITER {
        let g = potential.diabatic_gradient(m, x);
        if g.norm() < GRADIENT_TOL {
            return Ok(x);
        }
        let h = potential.diabatic_hessian(m, x, 1e-4);
        let eig = h.symmetric_eigenvalues();
        let step = if eig.min() > 0.0 {
            -(h.try_inverse().expect("positive-definite Hessian")) * g
        } else {
            -g / g.norm().max(1.0) * 0.1
        };
        let v0 = potential.diabatic(m, x);
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-6 {
            let trial = x + step * lambda;
            let vt = potential.diabatic(m, trial);
            // near the minimum the energy change drops below rounding; accept
            // any step that reduces the gradient there
            if vt < v0 || (vt - v0).abs() < 1e-12 * v0.abs() && potential.diabatic_gradient(m, trial).norm() < g.norm() {
                x = trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                what: "well minimization",
                iterations: it,
                detail: format!("line search stalled at ({:.6}, {:.6}), |grad| = {:.3e}", x.x, x.y, g.norm()),
            });
        }
    }
    Err(Error::NoConvergence {
        what: "well minimization",
        iterations: NEWTON_MAX_ITER,
        detail: format!(
            "|grad| = {:.3e} at ({:.6}, {:.6})",
            potential.diabatic_gradient(m, x).norm(),
            x.x,
            x.y
        ),
    })
}

/// All distinct minima of the m = +F (σ₊) and m = −F (σ₋) surfaces inside
/// one primitive cell, seeded from a coarse grid.
pub fn find_wells(potential: &LatticePotential) -> Result<Vec<WellSite>> {
    let beams = &potential.beams;
    let [a1, a2] = beams.lattice_vectors();
    let n = WELL_SEEDS;
    let point = |i: usize, j: usize| a1 * (i as f64 / n as f64) + a2 * (j as f64 / n as f64);
    let mut sites: Vec<WellSite> = Vec::new();
    for helicity in [Helicity::SigmaPlus, Helicity::SigmaMinus] {
        let m = potential.stretched(helicity);
        let v: Vec<f64> = (0..n * n).map(|k| potential.diabatic(m, point(k % n, k / n))).collect();
        let at = |i: isize, j: isize| v[(i.rem_euclid(n as isize) + n as isize * j.rem_euclid(n as isize)) as usize];
        for j in 0..n as isize {
            for i in 0..n as isize {
                let c = at(i, j);
                let is_min = (-1..=1)
                    .flat_map(|dj| (-1..=1).map(move |di| (di, dj)))
                    .filter(|&d| d != (0, 0))
                    .all(|(di, dj)| c <= at(i + di, j + dj));
                if !is_min {
                    continue;
                }
                let x = minimize_surface(potential, m, point(i as usize, j as usize))?;
                let x = wrap_cell(beams, x);
                let duplicate = sites.iter().any(|s| {
                    let d = fractional(beams, s.center - x);
                    s.helicity == helicity && d.iter().all(|c| (c - c.round()).abs() < 1e-6)
                });
                if !duplicate {
                    sites.push(WellSite { center: x, helicity });
                }
            }
        }
    }
    Ok(sites)
}

/// Harmonic and first/second-order Lamb-Dicke expansion of one well.
///
/// Curvature and couplings refer to the stretched sublevel of the well's
/// helicity (m = 4 on σ₊ sites for F = 4). `omega_*` are ħω in Eᵣ, and
/// `coupling_*` are the Taylor coefficients of ⟨F−1|U|F⟩ in kX, kY.
#[derive(Clone, Debug, PartialEq)]
pub struct WellExpansion {
    pub center: Vec2,
    pub helicity: Helicity,
    pub stretched_m: i32,
    pub partner_m: i32,
    /// U₀, the positive depth of the stretched-state potential at the center.
    pub depth_u0: f64,
    pub omega_x: f64,
    pub omega_y: f64,
    pub hessian_xy: f64,
    pub eta_x: f64,
    pub eta_y: f64,
    pub coupling_const: C64,
    pub coupling_x: C64,
    pub coupling_y: C64,
    pub coupling_xx: C64,
    pub coupling_xy: C64,
    pub coupling_yy: C64,
}

impl WellExpansion {
    /// ħω as a function of axis (0 = x, 1 = y).
    pub fn omega(&self, axis: usize) -> f64 {
        [self.omega_x, self.omega_y][axis]
    }

    pub fn eta(&self, axis: usize) -> f64 {
        [self.eta_x, self.eta_y][axis]
    }
}

/// ħω from a curvature V'' in Eᵣ k²: (1/2) M ω² = V''/2 with M = 1/2.
pub(crate) fn omega_from_curvature(c: f64) -> f64 {
    (2.0 * c).sqrt()
}

pub fn expand_well(potential: &LatticePotential, site: &WellSite) -> Result<WellExpansion> {
    let m = potential.stretched(site.helicity);
    let mp = potential.partner(site.helicity);
    let c = site.center;
    let hess = potential.diabatic_hessian(m, c, 1e-4);
    let eig = hess.symmetric_eigenvalues();
    if !(eig.min() > 0.0) {
        return Err(Error::SaddlePoint {
            x: c.x,
            y: c.y,
            lambda_min: eig.min(),
            lambda_max: eig.max(),
        });
    }
    let omega_x = omega_from_curvature(hess[(0, 0)]);
    let omega_y = omega_from_curvature(hess[(1, 1)]);

    let r = |dx: f64, dy: f64| potential.raman(mp, m, c + Vec2::new(dx, dy));
    let rich = |d: &dyn Fn(f64) -> C64, h: f64| (d(h / 2.0) * 4.0 - d(h)) / 3.0;
    let h = 1e-3;
    let r0 = r(0.0, 0.0);
    let d_x = |h: f64| (r(h, 0.0) - r(-h, 0.0)) / (2.0 * h);
    let d_y = |h: f64| (r(0.0, h) - r(0.0, -h)) / (2.0 * h);
    let d_xx = |h: f64| (r(h, 0.0) - r0 * 2.0 + r(-h, 0.0)) / (h * h);
    let d_yy = |h: f64| (r(0.0, h) - r0 * 2.0 + r(0.0, -h)) / (h * h);
    let d_xy = |h: f64| (r(h, h) - r(h, -h) - r(-h, h) + r(-h, -h)) / (4.0 * h * h);

    Ok(WellExpansion {
        center: c,
        helicity: site.helicity,
        stretched_m: m,
        partner_m: mp,
        depth_u0: -potential.diabatic(m, c),
        omega_x,
        omega_y,
        hessian_xy: hess[(0, 1)],
        eta_x: omega_x.recip().sqrt(),
        eta_y: omega_y.recip().sqrt(),
        coupling_const: r0,
        coupling_x: rich(&d_x, h),
        coupling_y: rich(&d_y, h),
        coupling_xx: rich(&d_xx, h),
        coupling_xy: rich(&d_xy, h),
        coupling_yy: rich(&d_yy, h),
    })
}

/// Find the σ₊ well closest to the origin and expand it.
pub fn principal_well(potential: &LatticePotential) -> Result<WellExpansion> {
    let site = find_wells(potential)?
        .into_iter()
        .filter(|s| s.helicity == Helicity::SigmaPlus)
        .min_by(|a, b| a.center.norm().total_cmp(&b.center.norm()))
        .ok_or_else(|| Error::NoConvergence {
            what: "well search",
            iterations: 0,
            detail: "no sigma+ minimum found".into(),
        })?;
    expand_well(potential, &site)
}

/// ⟨n′|(a + a†)|n⟩
fn ladder1(to: u32, from: u32) -> f64 {
    if to + 1 == from {
        (from as f64).sqrt()
    } else if to == from + 1 {
        (to as f64).sqrt()
    } else {
        0.0
    }
}

/// ⟨n′|(a + a†)²|n⟩
fn ladder2(to: u32, from: u32) -> f64 {
    let n = from as f64;
    if to + 2 == from {
        (n * (n - 1.0)).sqrt()
    } else if to == from + 2 {
        ((n + 1.0) * (n + 2.0)).sqrt()
    } else if to == from {
        2.0 * n + 1.0
    } else {
        0.0
    }
}

/// Order of the Lamb-Dicke expansion used for Raman matrix elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LambDickeOrder {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
}

/// ⟨n_to, partner| U |n_from, stretched⟩ of the first-order expansion
/// between harmonic product states.
pub fn coupling_matrix_element(w: &WellExpansion, n_from: (u32, u32), n_to: (u32, u32)) -> C64 {
    coupling_element(w, n_from, n_to, LambDickeOrder::First)
}

pub fn coupling_element(w: &WellExpansion, n_from: (u32, u32), n_to: (u32, u32), order: LambDickeOrder) -> C64 {
    let (fx, fy) = n_from;
    let (tx, ty) = n_to;
    let mut v = C64::from(0.0);
    if n_from == n_to {
        v += w.coupling_const;
    }
    if ty == fy {
        v += w.coupling_x * (w.eta_x * ladder1(tx, fx));
    }
    if tx == fx {
        v += w.coupling_y * (w.eta_y * ladder1(ty, fy));
    }
    if order == LambDickeOrder::Second {
        if ty == fy {
            v += w.coupling_xx * (0.5 * w.eta_x * w.eta_x * ladder2(tx, fx));
        }
        if tx == fx {
            v += w.coupling_yy * (0.5 * w.eta_y * w.eta_y * ladder2(ty, fy));
        }
        v += w.coupling_xy * (w.eta_x * w.eta_y * ladder1(tx, fx) * ladder1(ty, fy));
    }
    v
}

/// Closed-form first-order coefficients −i (U₁/4√2)(E_π/E₁)·(2, 1, −3i) for the
/// standard geometry at φ = π/2.
pub fn closed_form_coupling(u1: f64, epi_ratio: f64) -> [C64; 3] {
    let pre = C64::new(0.0, -u1 * epi_ratio * FRAC_1_SQRT_2 / 4.0);
    [pre * 2.0, pre, pre * C64::new(0.0, -3.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{standard_beam_set, PhaseChoice};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn cs() -> AtomSpecies {
        AtomSpecies::cesium()
    }

    fn lattice(epi: f64) -> LatticePotential {
        let beams = standard_beam_set(1.0, epi, FRAC_PI_2, PhaseChoice::SigmaPlusAtOrigin).unwrap();
        LatticePotential::new(beams, 54.0, &cs()).unwrap()
    }

    #[test]
    fn spin_matrices_algebra() {
        let s = spin_matrices(4);
        let comm = &s.fx * &s.fy - &s.fy * &s.fx;
        assert!((comm - &s.fz * C64::i()).norm() < 1e-12);
        let casimir = &s.fx * &s.fx + &s.fy * &s.fy + &s.fz * &s.fz;
        assert!((casimir - DMatrix::identity(9, 9) * C64::from(20.0)).norm() < 1e-12);
    }

    #[test]
    fn stretched_light_shift_at_sigma_plus_site() {
        let p = lattice(0.0);
        let op = p.operator(Vec2::zeros());
        assert_relative_eq!(op.diagonal(4), -243.0, max_relative = 1e-12);
        // m = 3 depth ratio 11/12
        assert_relative_eq!(op.diagonal(3) / op.diagonal(4), 11.0 / 12.0, max_relative = 1e-12);
        assert!(op.element(4, 3).norm() < 1e-12);
    }

    #[test]
    fn in_plane_field_is_diagonal() {
        let p = lattice(0.0);
        for x in [Vec2::new(0.3, 0.7), Vec2::new(-1.1, 2.9)] {
            let op = p.operator(x);
            for i in 0..9 {
                for j in 0..9 {
                    if i != j {
                        assert!(op.matrix[(i, j)].norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pure_pi_field_is_scalar() {
        let f = LocalField {
            eps: nalgebra::Vector3::new(C64::from(0.0), C64::from(0.0), C64::from(1.0)),
            position: Vec2::zeros(),
        };
        let op = light_shift_operator(&f, 54.0, &cs());
        for m in -4..=4 {
            assert_relative_eq!(op.diagonal(m), -36.0, max_relative = 1e-14);
        }
        assert!((op.matrix.clone() - DMatrix::identity(9, 9) * C64::from(-36.0)).norm() < 1e-12);
    }

    #[test]
    fn fast_paths_match_full_operator() {
        let p = lattice(0.3);
        for x in [Vec2::new(0.13, -0.4), Vec2::new(1.7, 0.9), Vec2::zeros()] {
            let op = p.operator(x);
            for m in -4..=4 {
                assert_relative_eq!(p.diabatic(m, x), op.diagonal(m), epsilon = 1e-11);
            }
            for m in -3..=4 {
                assert!((p.raman(m - 1, m, x) - op.element(m - 1, m)).norm() < 1e-11);
                assert!((p.raman(m, m - 1, x) - op.element(m, m - 1)).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn zeeman_term() {
        let units = UnitSystem::new(&cs());
        let op = lattice(0.3).operator(Vec2::new(0.2, 0.1));
        let same = add_zeeman(&op, &ZeemanTerm::new(0.0, &units));
        assert_eq!(same.matrix, op.matrix);
        let one = ZeemanTerm { b_z: 0.0, g_f: 0.25, energy_per_m: 1.0 };
        let z = add_zeeman(&op, &one);
        for m in -4..=4 {
            assert_relative_eq!(z.diagonal(m) - op.diagonal(m), m as f64, epsilon = 1e-12);
        }
        assert!(z.hermiticity_defect() < 1e-12);
        let b = ZeemanTerm::new(7.0, &units);
        let nb = ZeemanTerm::new(-7.0, &units);
        let (zp, zm) = (add_zeeman(&op, &b), add_zeeman(&op, &nb));
        for m in -4..=4 {
            assert_relative_eq!(zp.diagonal(m) - op.diagonal(m), -(zm.diagonal(m) - op.diagonal(m)), epsilon = 1e-12);
        }
    }

    #[test]
    fn well_at_origin_and_alternating_helicity() {
        let p = lattice(0.3);
        let wells = find_wells(&p).unwrap();
        let plus: Vec<_> = wells.iter().filter(|w| w.helicity == Helicity::SigmaPlus).collect();
        let minus: Vec<_> = wells.iter().filter(|w| w.helicity == Helicity::SigmaMinus).collect();
        assert_eq!(plus.len(), 1);
        assert_eq!(minus.len(), 1);
        assert!(plus[0].center.norm() < 1e-8, "{:?}", plus[0].center);
        // σ₋ site sits at (a₁ − a₂)/3 modulo the lattice, opposite helicity
        let [a1, a2] = p.beams.lattice_vectors();
        let d = fractional(&p.beams, minus[0].center - (a1 - a2) / 3.0);
        assert!(d.iter().all(|c| (c - c.round()).abs() < 1e-6), "{d:?}");
        let hp = field_at(&p.beams, plus[0].center).helicity();
        let hm = field_at(&p.beams, minus[0].center).helicity();
        assert!(hp < 0.0 && hm > 0.0);
        // σ₋ depth for m = −4 equals σ₊ depth for m = +4
        assert_relative_eq!(
            p.diabatic(-4, minus[0].center),
            p.diabatic(4, plus[0].center),
            max_relative = 1e-9
        );
    }

    #[test]
    fn reseeding_is_deterministic() {
        let p = lattice(0.3);
        let a = find_wells(&p).unwrap();
        let b = find_wells(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expansion_matches_closed_form() {
        let p = lattice(0.3);
        let w = principal_well(&p).unwrap();
        let cf = closed_form_coupling(54.0, 0.3);
        for (num, exact) in [(w.coupling_const, cf[0]), (w.coupling_x, cf[1]), (w.coupling_y, cf[2])] {
            assert!((num - exact).norm() < 1e-6 * exact.norm(), "{num} vs {exact}");
        }
        assert_relative_eq!(w.coupling_y.norm() / w.coupling_x.norm(), 3.0, max_relative = 1e-6);
        assert_relative_eq!(w.eta_x, w.omega_x.recip().sqrt(), max_relative = 1e-15);
        // harmonic curvature of the three-beam well: (ħω)² = 7.5 U₁ Eᵣ
        assert_relative_eq!(w.omega_x, (7.5f64 * 54.0).sqrt(), max_relative = 1e-8);
        assert_relative_eq!(w.omega_y, (7.5f64 * 54.0).sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn no_pi_no_coupling() {
        let w = principal_well(&lattice(0.0)).unwrap();
        for c in [w.coupling_const, w.coupling_x, w.coupling_y, w.coupling_xx, w.coupling_xy, w.coupling_yy] {
            assert!(c.norm() < 1e-10);
        }
    }

    #[test]
    fn saddle_rejected() {
        let p = lattice(0.3);
        // the midpoint between two neighbouring σ₊ sites along a₁ is a saddle
        let [a1, _] = p.beams.lattice_vectors();
        let x = minimize_surface(&p, 4, Vec2::zeros()).unwrap() + a1 * 0.5;
        let site = WellSite { center: x, helicity: Helicity::SigmaPlus };
        assert!(matches!(expand_well(&p, &site), Err(Error::SaddlePoint { .. })));
    }

    #[test]
    fn matrix_elements_selection_rules() {
        let w = principal_well(&lattice(0.3)).unwrap();
        let x = coupling_matrix_element(&w, (1, 0), (0, 0)).norm();
        let y = coupling_matrix_element(&w, (0, 1), (0, 0)).norm();
        assert!((x - 0.7).abs() < 0.2 * 0.7, "{x}");
        assert!((y - 2.0).abs() < 0.2 * 2.0, "{y}");
        assert_eq!(coupling_matrix_element(&w, (2, 0), (0, 0)), C64::from(0.0));
        assert_eq!(coupling_matrix_element(&w, (1, 1), (0, 0)), C64::from(0.0));
        assert!(coupling_element(&w, (2, 0), (0, 0), LambDickeOrder::Second).norm() > 0.0);
        assert!(coupling_element(&w, (1, 1), (0, 0), LambDickeOrder::Second).norm() > 0.0);
        // √n scaling of the first sideband
        let x3 = coupling_matrix_element(&w, (3, 0), (2, 0)).norm();
        assert_relative_eq!(x3, x * 3f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn u0_over_u1_and_trace() {
        let p = lattice(0.0);
        let w = principal_well(&p).unwrap();
        assert_relative_eq!(w.depth_u0 / p.u1, 4.5, max_relative = 1e-6);
    }

    #[test]
    fn surfaces_have_expected_structure() {
        let p = lattice(0.3);
        let grid = GridSpec::lattice_cell(&p.beams, 48, 32);
        let map = diabatic_surfaces(&p.beams, p.u1, &cs(), &grid).unwrap();
        let col = |m: i32| (m + 4) as usize;
        for (i, v) in map.values.iter().enumerate() {
            let f = field_at(&p.beams, grid.point(i));
            // m = 0 carries only the scalar term
            assert_relative_eq!(v[col(0)], -2.0 / 3.0 * 54.0 * f.intensity(), epsilon = 1e-10);
        }
        // m = −4 surface equals the m = +4 surface mirrored in x and moved to the σ₋ site
        let [a1, a2] = p.beams.lattice_vectors();
        let shift = (a1 - a2) / 3.0;
        for i in (0..grid.len()).step_by(7) {
            let x = grid.point(i);
            let image = Vec2::new(-x.x, x.y) + shift;
            assert!((p.diabatic(4, x) - p.diabatic(-4, image)).abs() < 1e-9);
        }
        let min4 = map.values.iter().map(|v| v[col(4)]).fold(f64::MAX, f64::min);
        assert!((min4 - p.diabatic(4, Vec2::zeros())).abs() < 1e-9);
    }

    #[test]
    fn adiabatic_levels_bound_diabatic() {
        let p = lattice(0.3);
        let op = p.operator(Vec2::new(0.4, 0.2));
        let ad = op.adiabatic_levels();
        let dia_min = (-4..=4).map(|m| op.diagonal(m)).fold(f64::MAX, f64::min);
        assert!(ad[0] <= dia_min + 1e-12);
        assert_relative_eq!(ad.iter().sum::<f64>(), op.trace().re, max_relative = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn hermitian_and_trace(x in -8.0f64..8.0, y in -8.0f64..8.0, epi in 0.0f64..1.0, phi in -3.2f64..3.2) {
                let beams = standard_beam_set(1.0, epi, phi, PhaseChoice::SigmaPlusAtOrigin).unwrap();
                let p = LatticePotential::new(beams, 54.0, &AtomSpecies::cesium()).unwrap();
                let f = field_at(&p.beams, Vec2::new(x, y));
                let op = p.operator(Vec2::new(x, y));
                prop_assert!(op.hermiticity_defect() < 1e-12);
                let tr = op.trace();
                prop_assert!((tr.re + 9.0 * 2.0 / 3.0 * 54.0 * f.intensity()).abs() < 1e-10);
                prop_assert!(tr.im.abs() < 1e-10);
            }
        }
    }
}
