//! Three-beam coplanar lattice field.
//!
//! Each beam is a plane wave `E_j ε_j exp(i k d_j·x)` with `d_j` its in-plane
//! propagation direction. The in-plane polarization is linear and
//! perpendicular to `d_j`; an optional ẑ amplitude turns the beam elliptical.
//! All fields are expressed relative to the reference single-beam amplitude
//! E₁, so `|ε|²` is dimensionless, and in the gauge that removes the phase
//! `exp(i k d₀·x)` of the first beam. Only `ε* ⊗ ε` enters the light shift, so
//! the gauge is unobservable, and it makes `ε` strictly lattice periodic.
//!
//! Spherical components use the Condon–Shortley basis
//! `e₊ = −(x̂ + iŷ)/√2`, `e₋ = (x̂ − iŷ)/√2`, `e₀ = ẑ`, with
//! `ε = σ₊ e₊ + σ₋ e₋ + π e₀`.

use nalgebra::{Matrix2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::{Error, Result, Vec2, C64};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    pub direction: Vec2,
    pub amplitude_in_plane: f64,
    pub amplitude_pi: f64,
    pub phase_offset: f64,
    /// Phase of the ẑ amplitude relative to the beam's own σ₊ amplitude.
    pub pi_relative_phase: f64,
}

impl Beam {
    pub fn new(
        direction: Vec2,
        amplitude_in_plane: f64,
        amplitude_pi: f64,
        phase_offset: f64,
        pi_relative_phase: f64,
    ) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("direction", format!("|d| = {} is not 1", direction.norm())));
        }
        if !(amplitude_in_plane >= 0.0 && amplitude_pi >= 0.0) {
            return Err(Error::invalid("amplitude", "beam amplitudes must be non-negative"));
        }
        Ok(Self {
            direction,
            amplitude_in_plane,
            amplitude_pi,
            phase_offset,
            pi_relative_phase,
        })
    }

    /// In-plane linear polarization ẑ × d.
    pub fn in_plane_polarization(&self) -> Vec2 {
        Vec2::new(-self.direction.y, self.direction.x)
    }

    /// Complex polarization amplitude at the beam's phase origin.
    pub fn amplitude_vector(&self) -> Vector3<C64> {
        let p = self.in_plane_polarization();
        // σ₊ amplitude of a unit linear polarization at angle θ is −e^{−iθ}/√2
        let sigma_phase = -C64::from_polar(1.0, -p.y.atan2(p.x));
        let z = self.amplitude_pi * C64::from_polar(1.0, self.pi_relative_phase) * sigma_phase;
        Vector3::new(
            C64::from(self.amplitude_in_plane * p.x),
            C64::from(self.amplitude_in_plane * p.y),
            z,
        ) * C64::from_polar(1.0, self.phase_offset)
    }
}

/// Global phase convention for the three beams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseChoice {
    /// σ₊ amplitudes of all three beams interfere constructively at the origin.
    #[default]
    SigmaPlusAtOrigin,
    SigmaMinusAtOrigin,
    /// All beam phase offsets zero.
    Zero,
}

/// Beam orientation and which beam carries the π admixture.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGeometry {
    /// Propagation angles from x̂, radians.
    pub angles: [f64; 3],
    pub pi_beam: usize,
}

impl Default for LatticeGeometry {
    /// One beam counter-propagating along ŷ, the others at 30° and 150°.
    fn default() -> Self {
        Self {
            angles: [-PI / 2.0, PI / 6.0, 5.0 * PI / 6.0],
            pi_beam: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamSet {
    pub beams: [Beam; 3],
    /// k in units of the lattice wavenumber (1 in natural units).
    pub wavenumber: f64,
    /// Reference amplitude E₁ that normalizes ε.
    pub reference_amplitude: f64,
}

/// Three-beam lattice with equal amplitudes `e1`, one beam elliptical with
/// ẑ amplitude `epi_ratio·e1` and relative phase `phi`.
pub fn standard_beam_set(e1: f64, epi_ratio: f64, phi: f64, phase_choice: PhaseChoice) -> Result<BeamSet> {
    BeamSet::standard(e1, epi_ratio, phi, phase_choice, &LatticeGeometry::default(), false)
}

impl BeamSet {
    pub fn standard(
        e1: f64,
        epi_ratio: f64,
        phi: f64,
        phase_choice: PhaseChoice,
        geometry: &LatticeGeometry,
        allow_strong_pi: bool,
    ) -> Result<Self> {
        if !(e1 > 0.0 && e1.is_finite()) {
            return Err(Error::invalid("e1", "reference amplitude must be positive"));
        }
        if !(epi_ratio >= 0.0) {
            return Err(Error::invalid("epi_ratio", "must be non-negative"));
        }
        if epi_ratio > 1.0 && !allow_strong_pi {
            return Err(Error::invalid(
                "epi_ratio",
                format!("{epi_ratio} > 1; set allow_strong_pi to override"),
            ));
        }
        if geometry.pi_beam > 2 {
            return Err(Error::invalid("pi_beam", "must index one of three beams"));
        }
        let mut beams = Vec::with_capacity(3);
        for (j, &angle) in geometry.angles.iter().enumerate() {
            let d = Vec2::new(angle.cos(), angle.sin());
            let p = Vec2::new(-d.y, d.x);
            let theta = p.y.atan2(p.x);
            let phase = match phase_choice {
                PhaseChoice::SigmaPlusAtOrigin => theta,
                PhaseChoice::SigmaMinusAtOrigin => -theta,
                PhaseChoice::Zero => 0.0,
            };
            let epi = if j == geometry.pi_beam { epi_ratio * e1 } else { 0.0 };
            beams.push(Beam::new(d, e1, epi, phase, phi)?);
        }
        let beams: [Beam; 3] = beams.try_into().expect("three beams");
        Ok(Self {
            beams,
            wavenumber: 1.0,
            reference_amplitude: e1,
        })
    }

    /// Pairwise angular separations, radians in [0, π].
    pub fn pairwise_angles(&self) -> [f64; 3] {
        let ang = |a: &Vec2, b: &Vec2| a.dot(b).clamp(-1.0, 1.0).acos();
        let b = &self.beams;
        [
            ang(&b[0].direction, &b[1].direction),
            ang(&b[1].direction, &b[2].direction),
            ang(&b[0].direction, &b[2].direction),
        ]
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairwise_angles()
            .iter()
            .all(|a| (a - 2.0 * PI / 3.0).abs() < 1e-9)
    }

    /// Reciprocal vectors k(d₁ − d₀), k(d₂ − d₀).
    pub fn reciprocal_vectors(&self) -> [Vec2; 2] {
        let k = self.wavenumber;
        let d = |j: usize| self.beams[j].direction;
        [(d(1) - d(0)) * k, (d(2) - d(0)) * k]
    }

    /// Primitive lattice vectors with aᵢ·bⱼ = 2π δᵢⱼ.
    pub fn lattice_vectors(&self) -> [Vec2; 2] {
        let [b1, b2] = self.reciprocal_vectors();
        let b = Matrix2::new(b1.x, b1.y, b2.x, b2.y);
        let a = b.try_inverse().expect("beam directions are not collinear") * (2.0 * PI);
        [a.column(0).into(), a.column(1).into()]
    }

    /// Rectangular cell spanned by a₁ − a₂ and a₁ + a₂ (two primitive cells),
    /// which tiles the plane for the symmetric geometry.
    pub fn rectangular_cell(&self) -> (Vec2, Vec2) {
        let [a1, a2] = self.lattice_vectors();
        (a1 - a2, a1 + a2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalField {
    pub eps: Vector3<C64>,
    pub position: Vec2,
}

impl LocalField {
    pub fn intensity(&self) -> f64 {
        self.eps.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Real effective-field vector i(ε* × ε).
    pub fn effective_field(&self) -> [f64; 3] {
        effective_field(&self.eps)
    }

    /// i(ε* × ε)·ẑ = |σ₋|² − |σ₊|²; negative on σ₊ sites.
    pub fn helicity(&self) -> f64 {
        self.effective_field()[2]
    }
}

pub(crate) fn effective_field(e: &Vector3<C64>) -> [f64; 3] {
    let c = e.map(|z| z.conj()).cross(e);
    [(I * c.x).re, (I * c.y).re, (I * c.z).re]
}

/// ε_L and its x, y derivatives at `x`.
pub(crate) fn field_with_gradient(beams: &BeamSet, x: &Vec2) -> [Vector3<C64>; 3] {
    let mut out = [Vector3::zeros(), Vector3::zeros(), Vector3::zeros()];
    let k = beams.wavenumber;
    let d0 = beams.beams[0].direction;
    for b in &beams.beams {
        let q = (b.direction - d0) * k;
        let v = b.amplitude_vector() * C64::from_polar(1.0, q.dot(x));
        out[0] += v;
        out[1] += v * (I * q.x);
        out[2] += v * (I * q.y);
    }
    let norm = C64::from(1.0 / beams.reference_amplitude);
    out.map(|v| v * norm)
}

pub fn field_at(beams: &BeamSet, x: Vec2) -> LocalField {
    let k = beams.wavenumber;
    let d0 = beams.beams[0].direction;
    let eps: Vector3<C64> = beams
        .beams
        .iter()
        .map(|b| b.amplitude_vector() * C64::from_polar(1.0, k * (b.direction - d0).dot(&x)))
        .fold(Vector3::zeros(), |acc, v| acc + v)
        / C64::from(beams.reference_amplitude);
    LocalField { eps, position: x }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalComponents {
    pub sigma_plus: C64,
    pub sigma_minus: C64,
    pub pi: C64,
}

impl SphericalComponents {
    pub fn reconstruct(&self) -> Vector3<C64> {
        let s = FRAC_1_SQRT_2;
        let e_plus = Vector3::new(C64::from(-s), -I * s, C64::from(0.0));
        let e_minus = Vector3::new(C64::from(s), -I * s, C64::from(0.0));
        let e_zero = Vector3::new(C64::from(0.0), C64::from(0.0), C64::from(1.0));
        e_plus * self.sigma_plus + e_minus * self.sigma_minus + e_zero * self.pi
    }
}

pub fn polarization_components(f: &LocalField) -> SphericalComponents {
    let (ex, ey, ez) = (f.eps.x, f.eps.y, f.eps.z);
    SphericalComponents {
        sigma_plus: -(ex - I * ey) * FRAC_1_SQRT_2,
        sigma_minus: (ex + I * ey) * FRAC_1_SQRT_2,
        pi: ez,
    }
}

/// Rectangular sampling grid; points are `min + i·(max − min)/n`, so the far
/// edge is excluded and periodic cells tile without duplicates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::invalid("grid", "needs at least one point per axis"));
        }
        let degenerate = |n: usize, lo: f64, hi: f64| n > 1 && !(hi - lo).is_normal();
        if degenerate(self.nx, self.x_min, self.x_max) || degenerate(self.ny, self.y_min, self.y_max) {
            return Err(Error::invalid("grid", "zero extent along an axis with several points"));
        }
        if ![self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grid", "bounds must be finite"));
        }
        Ok(())
    }

    /// Grid over the rectangular lattice cell starting at the origin.
    pub fn lattice_cell(beams: &BeamSet, nx: usize, ny: usize) -> Self {
        let (u, v) = beams.rectangular_cell();
        Self {
            x_min: 0.0,
            x_max: u.norm(),
            nx,
            y_min: 0.0,
            y_max: v.norm(),
            ny,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major point `index` (x runs fastest).
    pub fn point(&self, index: usize) -> Vec2 {
        let (i, j) = (index % self.nx, index / self.nx);
        Vec2::new(
            self.x_min + i as f64 * (self.x_max - self.x_min) / self.nx as f64,
            self.y_min + j as f64 * (self.y_max - self.y_min) / self.ny as f64,
        )
    }

    pub fn points(&self) -> impl Iterator<Item = Vec2> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn shifted(&self, by: Vec2) -> Self {
        Self {
            x_min: self.x_min + by.x,
            x_max: self.x_max + by.x,
            y_min: self.y_min + by.y,
            y_max: self.y_max + by.y,
            ..*self
        }
    }
}

#[derive(Clone, Debug)]
pub struct FieldMap {
    pub grid: GridSpec,
    pub values: Vec<LocalField>,
}

pub fn field_map(beams: &BeamSet, grid: &GridSpec) -> Result<FieldMap> {
    grid.validate()?;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| field_at(beams, grid.point(i)))
        .collect();
    Ok(FieldMap { grid: *grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn operating_beams() -> BeamSet {
        standard_beam_set(1.0, 0.3, FRAC_PI_2, PhaseChoice::SigmaPlusAtOrigin).unwrap()
    }

    fn close(a: &Vector3<C64>, b: &Vector3<C64>, tol: f64) -> bool {
        (a - b).iter().all(|c| c.norm() < tol)
    }

    #[test]
    fn sigma_plus_at_origin() {
        let beams = standard_beam_set(1.0, 0.0, 0.0, PhaseChoice::SigmaPlusAtOrigin).unwrap();
        let f = field_at(&beams, Vec2::zeros());
        let c = polarization_components(&f);
        // three in-phase σ₊ amplitudes of 1/√2
        assert_relative_eq!(c.sigma_plus.norm_sqr(), 4.5, max_relative = 1e-12);
        assert!(c.sigma_minus.norm() < 1e-12 && c.pi.norm() < 1e-12);
        assert_relative_eq!(f.intensity(), 4.5, max_relative = 1e-12);
        assert_relative_eq!(f.helicity(), -4.5, max_relative = 1e-12);
    }

    #[test]
    fn no_pi_means_no_z_component() {
        let beams = standard_beam_set(1.0, 0.0, FRAC_PI_2, PhaseChoice::SigmaPlusAtOrigin).unwrap();
        let grid = GridSpec::lattice_cell(&beams, 17, 13);
        let map = field_map(&beams, &grid).unwrap();
        assert!(map.values.iter().all(|f| f.eps.z.norm() == 0.0));
    }

    #[test]
    fn pi_component_scales_with_ratio() {
        let f = field_at(&operating_beams(), Vec2::zeros());
        let c = polarization_components(&f);
        assert_relative_eq!(c.pi.norm(), 0.3, max_relative = 1e-12);
        assert_relative_eq!(c.sigma_plus.norm(), 3.0 * FRAC_1_SQRT_2, max_relative = 1e-12);
        // φ measured from the beam's σ₊ amplitude; σ₊ total is real negative here
        assert_relative_eq!((c.pi / c.sigma_plus).arg(), FRAC_PI_2, max_relative = 1e-12);
    }

    #[test]
    fn rejects_strong_pi_unless_allowed() {
        assert!(standard_beam_set(1.0, 1.5, 0.0, PhaseChoice::SigmaPlusAtOrigin).is_err());
        let g = LatticeGeometry::default();
        assert!(BeamSet::standard(1.0, 1.5, 0.0, PhaseChoice::SigmaPlusAtOrigin, &g, true).is_ok());
        assert!(standard_beam_set(1.0, -0.1, 0.0, PhaseChoice::SigmaPlusAtOrigin).is_err());
    }

    #[test]
    fn geometry_is_symmetric_with_beam_along_y() {
        let b = operating_beams();
        assert!(b.is_symmetric());
        assert!((b.beams[0].direction.y.abs() - 1.0).abs() < 1e-15);
        // x̂′ at 30° coincides with a beam axis
        assert!((b.beams[1].direction.y.atan2(b.beams[1].direction.x) - PI / 6.0).abs() < 1e-15);
    }

    #[test]
    fn basis_definitions() {
        let s = FRAC_1_SQRT_2;
        let f = LocalField {
            eps: Vector3::new(C64::from(s), I * s, C64::from(0.0)),
            position: Vec2::zeros(),
        };
        let c = polarization_components(&f);
        assert_relative_eq!(c.sigma_plus.norm(), 1.0, max_relative = 1e-15);
        assert!(c.sigma_minus.norm() < 1e-15 && c.pi.norm() < 1e-15);
        let f = LocalField {
            eps: Vector3::new(C64::from(0.0), C64::from(0.0), C64::from(1.0)),
            position: Vec2::zeros(),
        };
        let c = polarization_components(&f);
        assert_eq!(c.pi, C64::from(1.0));
        assert!(c.sigma_plus.norm() == 0.0 && c.sigma_minus.norm() == 0.0);
    }

    #[test]
    fn opposite_helicity_in_cell() {
        let beams = standard_beam_set(1.0, 0.0, 0.0, PhaseChoice::SigmaPlusAtOrigin).unwrap();
        let grid = GridSpec::lattice_cell(&beams, 96, 64);
        let map = field_map(&beams, &grid).unwrap();
        let (imax, hmax) = map
            .values
            .iter()
            .map(|f| f.helicity())
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, h)| if h > acc.1 { (i, h) } else { acc });
        let origin = field_at(&beams, Vec2::zeros()).helicity();
        assert!(origin < 0.0 && hmax > 0.0);
        // the σ₋ site sits a third of the way along a₁ − a₂
        let [a1, a2] = beams.lattice_vectors();
        let expected = (a1 - a2) / 3.0;
        let [b1, b2] = beams.reciprocal_vectors();
        let frac = |x: Vec2| Vec2::new(b1.dot(&x), b2.dot(&x)) / (2.0 * PI);
        let d = frac(map.grid.point(imax) - expected);
        assert!(d.iter().all(|c| (c - c.round()).abs() < 0.03), "{d:?}");
        let h_expected = field_at(&beams, expected).helicity();
        assert_relative_eq!(h_expected, 4.5, max_relative = 1e-12);
        assert!(hmax <= h_expected + 1e-12);
    }

    #[test]
    fn max_intensity_at_origin_on_fine_grid() {
        let beams = standard_beam_set(1.0, 0.0, 0.0, PhaseChoice::SigmaPlusAtOrigin).unwrap();
        let grid = GridSpec::lattice_cell(&beams, 64, 64);
        let map = field_map(&beams, &grid).unwrap();
        let max = map.values.iter().map(|f| f.intensity()).fold(f64::MIN, f64::max);
        assert_relative_eq!(max, 4.5, max_relative = 1e-12);
    }

    #[test]
    fn single_point_grid() {
        let beams = operating_beams();
        let g = GridSpec { x_min: 0.0, x_max: 0.0, nx: 1, y_min: 0.0, y_max: 0.0, ny: 1 };
        let map = field_map(&beams, &g).unwrap();
        assert_eq!(map.values.len(), 1);
        assert_eq!(map.values[0], field_at(&beams, Vec2::zeros()));
    }

    #[test]
    fn degenerate_grid_rejected() {
        let beams = operating_beams();
        let g = GridSpec { x_min: 1.0, x_max: 1.0, nx: 4, y_min: 0.0, y_max: 1.0, ny: 4 };
        assert!(field_map(&beams, &g).is_err());
        let g = GridSpec { nx: 0, ..GridSpec::lattice_cell(&beams, 4, 4) };
        assert!(field_map(&beams, &g).is_err());
    }

    #[test]
    fn shifted_grid_is_identical() {
        let beams = operating_beams();
        let [a1, _] = beams.lattice_vectors();
        let g = GridSpec::lattice_cell(&beams, 32, 32);
        let m1 = field_map(&beams, &g).unwrap();
        let m2 = field_map(&beams, &g.shifted(a1)).unwrap();
        for (u, v) in m1.values.iter().zip(&m2.values) {
            assert!(close(&u.eps, &v.eps, 1e-12));
        }
    }

    #[test]
    fn analytic_gradient_matches_difference() {
        let beams = operating_beams();
        let x = Vec2::new(0.37, -0.81);
        let [_, dx, dy] = field_with_gradient(&beams, &x);
        let h = 1e-6;
        let fd = |e: Vec2| (field_at(&beams, x + e * h).eps - field_at(&beams, x - e * h).eps) / C64::from(2.0 * h);
        assert!(close(&dx, &fd(Vec2::x()), 1e-8));
        assert!(close(&dy, &fd(Vec2::y()), 1e-8));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn periodic_under_lattice_translations(
                x in -20.0f64..20.0, y in -20.0f64..20.0,
                n1 in -3i32..=3, n2 in -3i32..=3,
                epi in 0.0f64..1.0, phi in -3.2f64..3.2,
            ) {
                let beams = standard_beam_set(1.0, epi, phi, PhaseChoice::SigmaPlusAtOrigin).unwrap();
                let [a1, a2] = beams.lattice_vectors();
                let p = Vec2::new(x, y);
                let r = a1 * n1 as f64 + a2 * n2 as f64;
                let f0 = field_at(&beams, p);
                let f1 = field_at(&beams, p + r);
                prop_assert!(close(&f0.eps, &f1.eps, 1e-12));
                prop_assert!((f0.intensity() - f1.intensity()).abs() < 1e-12);
            }

            #[test]
            fn spherical_reconstruction(
                re in proptest::array::uniform3(-3.0f64..3.0),
                im in proptest::array::uniform3(-3.0f64..3.0),
            ) {
                let eps = Vector3::new(C64::new(re[0], im[0]), C64::new(re[1], im[1]), C64::new(re[2], im[2]));
                let f = LocalField { eps, position: Vec2::zeros() };
                prop_assert!(close(&polarization_components(&f).reconstruct(), &eps, 1e-12));
            }

            #[test]
            fn intensity_bound(x in -10.0f64..10.0, y in -10.0f64..10.0, epi in 0.0f64..1.0) {
                let beams = standard_beam_set(1.0, epi, FRAC_PI_2, PhaseChoice::SigmaPlusAtOrigin).unwrap();
                let f = field_at(&beams, Vec2::new(x, y));
                prop_assert!(f.intensity() <= 4.5 + epi * epi + 1e-12);
            }
        }
    }
}
