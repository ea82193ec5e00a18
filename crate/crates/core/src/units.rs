//! Species constants and the lattice-natural unit system.
//!
//! Internally every energy is measured in recoil energies Eᵣ = (ħk)²/2M,
//! every length in 1/k, every momentum in ħk and every time in ħ/Eᵣ, so that
//! ħ = k = 1 and M = 1/2. These helpers are the only place SI quantities are
//! converted.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// CODATA 2018 exact / recommended values, SI.
pub mod constants {
    pub const PLANCK: f64 = 6.626_070_15e-34;
    pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);
    pub const BOLTZMANN: f64 = 1.380_649e-23;
    pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
    pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
    pub const STANDARD_GRAVITY: f64 = 9.806_65;

    /// ¹³³Cs atomic mass in u (Steck, "Cesium D Line Data").
    pub const CS_MASS_U: f64 = 132.905_451_961;
    /// Cs D2 vacuum wavelength, m (Steck).
    pub const CS_D2_WAVELENGTH: f64 = 852.347_275_82e-9;
    /// Cs D2 natural linewidth Γ/2π, Hz.
    pub const CS_D2_LINEWIDTH: f64 = 5.22e6;
    /// Nuclear spin of ¹³³Cs.
    pub const CS_NUCLEAR_SPIN: f64 = 3.5;
    /// g_J of 6S₁/₂ in the g_S = 2 approximation.
    pub const CS_GROUND_G_J: f64 = 2.0;
}

/// Landé factor of a hyperfine level, neglecting the nuclear g-factor.
pub fn lande_g_f(g_j: f64, j: f64, i: f64, f: f64) -> f64 {
    g_j * (f * (f + 1.0) + j * (j + 1.0) - i * (i + 1.0)) / (2.0 * f * (f + 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpecies {
    pub name: String,
    /// kg
    pub mass: f64,
    /// m
    pub wavelength: f64,
    /// Γ/2π in Hz
    pub natural_linewidth: f64,
    pub g_f: f64,
    /// Total angular momentum of the trapped ground hyperfine level.
    pub f: u32,
}

impl AtomSpecies {
    pub fn new(
        name: impl Into<String>,
        mass: f64,
        wavelength: f64,
        natural_linewidth: f64,
        g_f: f64,
        f: u32,
    ) -> Result<Self> {
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("mass", mass)?;
        positive("wavelength", wavelength)?;
        positive("natural_linewidth", natural_linewidth)?;
        if !g_f.is_finite() {
            return Err(Error::invalid("g_f", "must be finite"));
        }
        if f < 1 {
            return Err(Error::invalid("f", "a cooling pair needs F >= 1"));
        }
        Ok(Self {
            name: name.into(),
            mass,
            wavelength,
            natural_linewidth,
            g_f,
            f,
        })
    }

    /// ¹³³Cs in the 6S₁/₂(F=4) ground level, trapped near the D2 line.
    pub fn cesium() -> Self {
        use constants::*;
        let g_f = lande_g_f(CS_GROUND_G_J, 0.5, CS_NUCLEAR_SPIN, 4.0);
        Self {
            name: "Cs133".into(),
            mass: CS_MASS_U * ATOMIC_MASS_UNIT,
            wavelength: CS_D2_WAVELENGTH,
            natural_linewidth: CS_D2_LINEWIDTH,
            g_f,
            f: 4,
        }
    }

    /// k = 2π/λ in 1/m.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    /// Detuning expressed in natural linewidths.
    pub fn detuning_in_linewidths(&self, detuning_hz: f64) -> f64 {
        detuning_hz / self.natural_linewidth
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoilEnergy {
    pub joule: f64,
    pub hertz: f64,
}

/// Eᵣ = (ħk)²/2M.
pub fn recoil_energy(species: &AtomSpecies) -> RecoilEnergy {
    let hk = constants::HBAR * species.wavenumber();
    let joule = hk * hk / (2.0 * species.mass);
    RecoilEnergy {
        joule,
        hertz: joule / constants::PLANCK,
    }
}

/// T = ⟨p²⟩/(k_B M) for an rms momentum in kg·m/s, returned in nK.
pub fn kinetic_temperature(p_rms: f64, mass: f64) -> f64 {
    p_rms * p_rms / (constants::BOLTZMANN * mass) * 1e9
}

/// Conversion factors between lattice-natural units and SI.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitSystem {
    pub recoil_energy_j: f64,
    pub recoil_energy_hz: f64,
    /// Eᵣ/k_B in nK.
    pub recoil_temperature_nk: f64,
    /// g_F μ_B / h per milligauss, in Hz.
    pub zeeman_scale: f64,
    pub mass: f64,
    pub wavenumber: f64,
    pub g_f: f64,
}

impl UnitSystem {
    pub fn new(species: &AtomSpecies) -> Self {
        let er = recoil_energy(species);
        Self {
            recoil_energy_j: er.joule,
            recoil_energy_hz: er.hertz,
            recoil_temperature_nk: er.joule / constants::BOLTZMANN * 1e9,
            zeeman_scale: species.g_f * constants::BOHR_MAGNETON * 1e-7 / constants::PLANCK,
            mass: species.mass,
            wavenumber: species.wavenumber(),
            g_f: species.g_f,
        }
    }

    pub fn energy_to_hz(&self, e: f64) -> f64 {
        e * self.recoil_energy_hz
    }

    pub fn hz_to_energy(&self, hz: f64) -> f64 {
        hz / self.recoil_energy_hz
    }

    pub fn energy_to_joule(&self, e: f64) -> f64 {
        e * self.recoil_energy_j
    }

    pub fn energy_to_nk(&self, e: f64) -> f64 {
        e * self.recoil_temperature_nk
    }

    pub fn nk_to_energy(&self, t_nk: f64) -> f64 {
        t_nk / self.recoil_temperature_nk
    }

    /// Zeeman energy g_F μ_B B_z per unit m, in Eᵣ.
    pub fn zeeman_energy(&self, b_z_mg: f64) -> f64 {
        b_z_mg * self.zeeman_scale / self.recoil_energy_hz
    }

    pub fn field_for_zeeman_energy(&self, e: f64) -> f64 {
        e * self.recoil_energy_hz / self.zeeman_scale
    }

    /// One ħ/Eᵣ in seconds.
    pub fn time_unit_s(&self) -> f64 {
        constants::HBAR / self.recoil_energy_j
    }

    pub fn ms_to_time(&self, ms: f64) -> f64 {
        ms * 1e-3 / self.time_unit_s()
    }

    pub fn time_to_ms(&self, t: f64) -> f64 {
        t * self.time_unit_s() * 1e3
    }

    /// Rate in Eᵣ/ħ to 1/s.
    pub fn rate_to_per_s(&self, rate: f64) -> f64 {
        rate / self.time_unit_s()
    }

    /// ħk in kg·m/s.
    pub fn momentum_unit(&self) -> f64 {
        constants::HBAR * self.wavenumber
    }

    /// Kinetic temperature ⟨p²⟩/(k_B M) for ⟨p²⟩ given in (ħk)².
    pub fn temperature_from_p2(&self, p2: f64) -> f64 {
        // (ħk)²/M = 2 Eᵣ
        2.0 * p2 * self.recoil_temperature_nk
    }

    /// ⟨p²⟩ in (ħk)² for a kinetic temperature in nK.
    pub fn p2_from_temperature(&self, t_nk: f64) -> f64 {
        t_nk / (2.0 * self.recoil_temperature_nk)
    }
}
