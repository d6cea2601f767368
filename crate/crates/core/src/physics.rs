//! Atomic forward model: RF interference field, four-level susceptibility,
//! absorption coefficient and its LO-dominant linearization.
//!
//! All quantities are SI. Angular frequencies (decay rates, Rabi
//! frequencies, detunings) are in rad/s.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IseError, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const REDUCED_PLANCK: f64 = 1.054_571_817e-34;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// LO amplitude/signal-sum ratio below which the linearized model is flagged.
pub const LO_DOMINANCE_WARNING_RATIO: f64 = 10.0;

/// Constants entering the steady-state susceptibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomicParams {
    /// Atom density N_a (1/m^3).
    pub atom_density: f64,
    /// Probe transition dipole moment (C m).
    pub probe_dipole: f64,
    /// RF transition dipole moment (C m).
    pub rf_dipole: f64,
    /// Intermediate-state decay rate gamma_21 (rad/s).
    pub decay_21: f64,
    /// Coupling-laser Rabi frequency (rad/s).
    pub coupling_rabi: f64,
    pub probe_detuning: f64,
    pub coupling_detuning: f64,
    pub rf_detuning: f64,
    /// Probe wavelength (m).
    pub probe_wavelength: f64,
    pub vacuum_permittivity: f64,
    pub reduced_planck: f64,
}

impl Default for AtomicParams {
    fn default() -> Self {
        Self::rb_reference()
    }
}

impl AtomicParams {
    /// Rb four-level reference parameters with an on-resonance probe and RF field.
    pub fn rb_reference() -> Self {
        Self {
            atom_density: 4.13e13,
            probe_dipole: 1.06e-29,
            rf_dipole: 7.85e-26,
            decay_21: 2.0 * PI * 6.066e6,
            coupling_rabi: 2.0 * PI * 40e6,
            probe_detuning: 0.0,
            coupling_detuning: 2.0 * PI * 10e3,
            rf_detuning: 0.0,
            probe_wavelength: 780.24e-9,
            vacuum_permittivity: VACUUM_PERMITTIVITY,
            reduced_planck: REDUCED_PLANCK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("atom_density", self.atom_density),
            ("probe_dipole", self.probe_dipole),
            ("rf_dipole", self.rf_dipole),
            ("decay_21", self.decay_21),
            ("coupling_rabi", self.coupling_rabi),
            ("probe_wavelength", self.probe_wavelength),
            ("vacuum_permittivity", self.vacuum_permittivity),
            ("reduced_planck", self.reduced_planck),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("probe_detuning", self.probe_detuning),
            ("coupling_detuning", self.coupling_detuning),
            ("rf_detuning", self.rf_detuning),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if self.coupling_detuning + self.rf_detuning == 0.0 {
            return Err(IseError::DegenerateDetuning(
                "coupling_detuning + rf_detuning = 0".into(),
            ));
        }
        Ok(())
    }

    pub fn probe_wavenumber(&self) -> f64 {
        2.0 * PI / self.probe_wavelength
    }

    /// 2 pi N_a mu_p^2 / (eps0 hbar), the numerator magnitude of chi (rad/s).
    pub fn susceptibility_prefactor(&self) -> f64 {
        2.0 * PI * self.atom_density * self.probe_dipole.powi(2)
            / (self.vacuum_permittivity * self.reduced_planck)
    }
}

/// Optional Rydberg-state decay rates for the full four-level expression.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RydbergDecay {
    pub decay_31: f64,
    pub decay_41: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    /// Field amplitude (V/m).
    pub amplitude: f64,
    /// Phase (rad).
    pub phase: f64,
    /// Angle of arrival (rad), in [-pi/2, pi/2].
    pub angle: f64,
}

impl PlaneWave {
    pub fn new(amplitude: f64, phase: f64, angle: f64) -> Self {
        Self {
            amplitude,
            phase,
            angle,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(invalid(format!("{what}: amplitude must be >= 0")));
        }
        if !self.phase.is_finite() {
            return Err(invalid(format!("{what}: phase must be finite")));
        }
        let half = PI / 2.0;
        if !(self.angle >= -half - 1e-12 && self.angle <= half + 1e-12) {
            return Err(invalid(format!(
                "{what}: angle {} rad outside [-pi/2, pi/2]",
                self.angle
            )));
        }
        Ok(())
    }
}

/// LO plus N incident plane waves at a common carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfScene {
    pub lo: PlaneWave,
    pub signals: Vec<PlaneWave>,
    /// RF carrier frequency (Hz).
    pub carrier_freq: f64,
}

impl RfScene {
    pub fn new(lo: PlaneWave, signals: Vec<PlaneWave>, carrier_freq: f64) -> Result<Self> {
        let scene = Self {
            lo,
            signals,
            carrier_freq,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.lo.validate("lo")?;
        if self.lo.amplitude <= 0.0 {
            return Err(invalid("lo amplitude must be > 0"));
        }
        for (i, s) in self.signals.iter().enumerate() {
            s.validate(&format!("signal {i}"))?;
        }
        if !(self.carrier_freq.is_finite() && self.carrier_freq > 0.0) {
            return Err(invalid("carrier frequency must be > 0"));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// RF wavenumber k = 2 pi f_c / c (rad/m).
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.carrier_freq / SPEED_OF_LIGHT
    }

    pub fn target_count(&self) -> usize {
        self.signals.len()
    }

    /// A_0 / sum A_i; infinite for an LO-only scene.
    pub fn lo_dominance_ratio(&self) -> f64 {
        let total: f64 = self.signals.iter().map(|s| s.amplitude).sum();
        if total == 0.0 {
            f64::INFINITY
        } else {
            self.lo.amplitude / total
        }
    }

    /// Beat wavenumbers k (sin theta_0 - sin theta_i).
    pub fn spatial_frequencies(&self) -> Vec<f64> {
        let k = self.wavenumber();
        let s0 = self.lo.angle.sin();
        self.signals
            .iter()
            .map(|s| k * (s0 - s.angle.sin()))
            .collect()
    }

    /// Phase offsets phi_i - phi_0.
    pub fn phase_offsets(&self) -> Vec<f64> {
        self.signals
            .iter()
            .map(|s| s.phase - self.lo.phase)
            .collect()
    }

    pub fn signal_angles(&self) -> Vec<f64> {
        self.signals.iter().map(|s| s.angle).collect()
    }

    /// True when every beat wavenumber is nonzero and pairwise distinct.
    pub fn is_identifiable(&self) -> bool {
        let dk = self.spatial_frequencies();
        let scale = 1e-12 * self.wavenumber();
        for (i, a) in dk.iter().enumerate() {
            if a.abs() <= scale {
                return false;
            }
            if dk[i + 1..].iter().any(|b| (a - b).abs() <= scale) {
                return false;
            }
        }
        true
    }

    /// Rescale the signal amplitudes (keeping their proportions) so that
    /// A_0 / sum A_i equals `ratio`.
    pub fn with_lo_ratio(&self, ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(invalid(format!("lo ratio must be > 0, got {ratio}")));
        }
        let total: f64 = self.signals.iter().map(|s| s.amplitude).sum();
        if total == 0.0 {
            return Err(invalid("cannot set an LO ratio on a scene without signal power"));
        }
        let scale = self.lo.amplitude / (ratio * total);
        let mut out = self.clone();
        for s in &mut out.signals {
            s.amplitude *= scale;
        }
        Ok(out)
    }
}

/// Local RF Rabi frequency mu_RF |E| / hbar.
pub fn rabi_frequency(params: &AtomicParams, field_magnitude: f64) -> f64 {
    params.rf_dipole * field_magnitude / params.reduced_planck
}

/// |E_RF(x)|^2 expanded term by term: LO self term, signal self terms,
/// signal-LO beats and signal-signal cross terms.
pub fn field_intensity(scene: &RfScene, x: f64) -> f64 {
    let k = scene.wavenumber();
    let a0 = scene.lo.amplitude;
    let mut total = a0 * a0;
    for s in &scene.signals {
        total += s.amplitude * s.amplitude;
    }
    let s0 = scene.lo.angle.sin();
    for s in &scene.signals {
        let dk = k * (s0 - s.angle.sin());
        let dphi = s.phase - scene.lo.phase;
        total += 2.0 * a0 * s.amplitude * (dk * x - dphi).cos();
    }
    for (i, si) in scene.signals.iter().enumerate() {
        for sl in &scene.signals[i + 1..] {
            let beat = k * (si.angle.sin() - sl.angle.sin());
            total += 2.0 * si.amplitude * sl.amplitude * (beat * x + (si.phase - sl.phase)).cos();
        }
    }
    total
}

fn nonzero(d: Complex64, what: &str) -> Result<()> {
    if d.norm() == 0.0 || !d.is_finite() {
        Err(IseError::DegenerateDetuning(format!("{what} vanishes")))
    } else {
        Ok(())
    }
}

/// Nested continued-fraction susceptibility of the four-level ladder.
pub fn susceptibility_full(
    params: &AtomicParams,
    rf_rabi: f64,
    decay: RydbergDecay,
) -> Result<Complex64> {
    let j = Complex64::i();
    let p = params.probe_detuning;
    let c = params.coupling_detuning;
    let rf = params.rf_detuning;

    let d41 = Complex64::new(decay.decay_41, 0.0) - j * (p + c + rf);
    nonzero(d41, "gamma_41 - j(dp + dc + drf)")?;
    let rf_term = (rf_rabi * rf_rabi / 4.0) / d41;
    let d31 = Complex64::new(decay.decay_31, 0.0) - j * (p + c) + rf_term;
    nonzero(d31, "level-3 denominator")?;
    let coupling_term = (params.coupling_rabi.powi(2) / 4.0) / d31;
    let d21 = Complex64::new(params.decay_21, 0.0) - j * p + coupling_term;
    nonzero(d21, "level-2 denominator")?;
    Ok(j * params.susceptibility_prefactor() / d21)
}

/// Weak on-resonance probe, negligible Rydberg decay.
pub fn susceptibility_simplified(params: &AtomicParams, rf_rabi: f64) -> Result<Complex64> {
    if params.probe_detuning != 0.0 {
        return Err(invalid(
            "simplified susceptibility requires an on-resonance probe (probe_detuning = 0)",
        ));
    }
    let j = Complex64::i();
    let rf_den = -j * (params.coupling_detuning + params.rf_detuning);
    nonzero(rf_den, "coupling_detuning + rf_detuning")?;
    let inner = -j * params.coupling_detuning + (rf_rabi * rf_rabi / 4.0) / rf_den;
    nonzero(inner, "dc - beta s")?;
    let den = Complex64::new(params.decay_21, 0.0) + (params.coupling_rabi.powi(2) / 4.0) / inner;
    nonzero(den, "gamma_21 denominator")?;
    Ok(j * params.susceptibility_prefactor() / den)
}

/// Constants of the real-quotient form alpha = C f(s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinConstants {
    /// 2 pi N_a mu_p^2 k_pr gamma_21 / (eps0 hbar).
    pub c: f64,
    /// mu_RF^2 / (4 hbar^2 (dc + drf)).
    pub beta: f64,
}

pub fn lin_constants(params: &AtomicParams) -> Result<LinConstants> {
    let detune = params.coupling_detuning + params.rf_detuning;
    if detune == 0.0 {
        return Err(IseError::DegenerateDetuning(
            "coupling_detuning + rf_detuning = 0".into(),
        ));
    }
    let hbar = params.reduced_planck;
    Ok(LinConstants {
        c: params.susceptibility_prefactor() * params.probe_wavenumber() * params.decay_21,
        beta: params.rf_dipole.powi(2) / (4.0 * hbar * hbar * detune),
    })
}

fn detuning_gap(params: &AtomicParams, beta: f64, s: f64) -> Result<f64> {
    let gap = params.coupling_detuning - beta * s;
    if gap == 0.0 {
        Err(IseError::SingularPoint { s })
    } else {
        Ok(gap)
    }
}

/// f(s) = 1 / (gamma_21^2 + (Omega_c^2/4)^2 / (dc - beta s)^2).
pub fn f_of_s(params: &AtomicParams, s: f64) -> Result<f64> {
    let lc = lin_constants(params)?;
    let gap = detuning_gap(params, lc.beta, s)?;
    let q = (params.coupling_rabi.powi(2) / 4.0).powi(2);
    Ok(1.0 / (params.decay_21.powi(2) + q / (gap * gap)))
}

/// Analytic derivative df/ds.
pub fn f_prime(params: &AtomicParams, s: f64) -> Result<f64> {
    let lc = lin_constants(params)?;
    let gap = detuning_gap(params, lc.beta, s)?;
    let q = (params.coupling_rabi.powi(2) / 4.0).powi(2);
    let den = params.decay_21.powi(2) + q / (gap * gap);
    Ok(-2.0 * lc.beta * q / gap.powi(3) / (den * den))
}

/// k_pr Im chi for a local field intensity s = |E|^2.
pub fn absorption_from_intensity(params: &AtomicParams, s: f64) -> Result<f64> {
    let rabi = rabi_frequency(params, s.max(0.0).sqrt());
    let chi = susceptibility_simplified(params, rabi)?;
    Ok(params.probe_wavenumber() * chi.im)
}

/// Exact local absorption coefficient alpha(x) (1/m).
pub fn absorption_exact(params: &AtomicParams, scene: &RfScene, x: f64) -> Result<f64> {
    absorption_from_intensity(params, field_intensity(scene, x))
}

/// Uniform LO-only absorption alpha_DC = alpha(A_0^2).
pub fn alpha_dc(params: &AtomicParams, scene: &RfScene) -> Result<f64> {
    let a0 = scene.lo.amplitude;
    absorption_from_intensity(params, a0 * a0)
}

/// Effective modulation amplitudes 2 C A_0 A_i f'(A_0^2).
pub fn effective_amplitudes(params: &AtomicParams, scene: &RfScene) -> Result<Vec<f64>> {
    let lc = lin_constants(params)?;
    let a0 = scene.lo.amplitude;
    let slope = f_prime(params, a0 * a0)?;
    Ok(scene
        .signals
        .iter()
        .map(|s| 2.0 * lc.c * a0 * s.amplitude * slope)
        .collect())
}

/// alpha_DC + sum_i A_i cos(dk_i x - dphi_i), with the coefficients frozen at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedAbsorption {
    pub alpha_dc: f64,
    pub amplitudes: Vec<f64>,
    pub spatial_frequencies: Vec<f64>,
    pub phase_offsets: Vec<f64>,
    /// A_0 / sum A_i of the scene this model was built from.
    pub lo_dominance_ratio: f64,
}

impl LinearizedAbsorption {
    pub fn new(params: &AtomicParams, scene: &RfScene) -> Result<Self> {
        let ratio = scene.lo_dominance_ratio();
        if ratio < LO_DOMINANCE_WARNING_RATIO {
            log::warn!(
                "LO dominance ratio {ratio:.3} is below {LO_DOMINANCE_WARNING_RATIO}; \
                 the linearized absorption model is inaccurate in this regime"
            );
        }
        Ok(Self {
            alpha_dc: alpha_dc(params, scene)?,
            amplitudes: effective_amplitudes(params, scene)?,
            spatial_frequencies: scene.spatial_frequencies(),
            phase_offsets: scene.phase_offsets(),
            lo_dominance_ratio: ratio,
        })
    }

    pub fn at(&self, x: f64) -> f64 {
        self.alpha_dc + self.modulation(x)
    }

    /// alpha(x) - alpha_DC.
    pub fn modulation(&self, x: f64) -> f64 {
        self.amplitudes
            .iter()
            .zip(&self.spatial_frequencies)
            .zip(&self.phase_offsets)
            .map(|((a, dk), dphi)| a * (dk * x - dphi).cos())
            .sum()
    }

    pub fn total_modulation_amplitude(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.abs()).sum()
    }
}

/// Linearized absorption at a single point. Loops should build a
/// [`LinearizedAbsorption`] once instead.
pub fn absorption_linearized(params: &AtomicParams, scene: &RfScene, x: f64) -> Result<f64> {
    Ok(LinearizedAbsorption::new(params, scene)?.at(x))
}

/// Two-level photon scattering rate (same units as `gamma`).
pub fn scattering_rate(gamma: f64, intensity_ratio: f64, detuning_ratio: f64) -> f64 {
    if intensity_ratio <= 0.0 {
        return 0.0;
    }
    let detune = 4.0 * detuning_ratio * detuning_ratio;
    if intensity_ratio.is_infinite() {
        return gamma / 2.0;
    }
    gamma / 2.0 * intensity_ratio / (1.0 + intensity_ratio + detune)
}
