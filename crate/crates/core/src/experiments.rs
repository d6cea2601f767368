//! Scenario presets and Monte Carlo sweeps over LO ratio, SNR, aperture and
//! sampling layout, with CSV and JSON writers for external plotting.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crlb;
use crate::error::{invalid, IseError, Result};
use crate::estimation::{self, PronyConfig, SceneMeta};
use crate::physics::{AtomicParams, LinearizedAbsorption, PlaneWave, RfScene};
use crate::sensing::{self, MeasurementSource, SampledAbsorption, SensorGeometry};

pub const CARRIER_FREQ_HZ: f64 = 2.03e9;
/// LO amplitude near the steepest point of the absorption response.
pub const DEFAULT_LO_AMPLITUDE: f64 = 0.014;
pub const LO_RATIO_GRID: [f64; 7] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];
pub const SNR_GRID_DB: [f64; 9] = [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];
pub const LENGTH_GRID_WAVELENGTHS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const DEMO_ANGLE_STEP_DEG: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LoRatio,
    SnrDb,
    /// Values in RF wavelengths.
    CellLength,
    /// Values in RF wavelengths.
    SamplingInterval,
    /// Values in RF wavelengths.
    WindowWidth,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LoRatio => "lo_ratio",
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::CellLength => "cell_length_wavelengths",
            SweepAxis::SamplingInterval => "sampling_interval_wavelengths",
            SweepAxis::WindowWidth => "window_width_wavelengths",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub params: AtomicParams,
    pub scene: RfScene,
    pub geometry: SensorGeometry,
    pub prony: PronyConfig,
    /// `None` runs noiseless trials.
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub synthesis: MeasurementSource,
    pub sweep: Option<SweepSpec>,
}

/// LO at end-fire plus equal-amplitude targets at `angles_deg`, with
/// A_0 / ΣA_i = `ratio`.
pub fn scene_with_targets(angles_deg: &[f64], phases: &[f64], ratio: f64) -> Result<RfScene> {
    if angles_deg.len() != phases.len() {
        return Err(IseError::LengthMismatch {
            expected: angles_deg.len(),
            actual: phases.len(),
        });
    }
    let n = angles_deg.len().max(1) as f64;
    let a0 = DEFAULT_LO_AMPLITUDE;
    let signals = angles_deg
        .iter()
        .zip(phases)
        .map(|(t, p)| PlaneWave::new(a0 / (ratio * n), *p, t.to_radians()))
        .collect();
    RfScene::new(PlaneWave::new(a0, 0.0, PI / 2.0), signals, CARRIER_FREQ_HZ)
}

/// Uniform layout in units of the RF wavelength.
pub fn geometry_in_wavelengths(
    wavelength: f64,
    cell: f64,
    width: f64,
    spacing: f64,
) -> Result<SensorGeometry> {
    SensorGeometry::uniform(cell * wavelength, width * wavelength, spacing * wavelength, wavelength)
}

impl ScenarioConfig {
    /// Two targets at −30° and 45°, L = 4λ, ℓ = Δx = λ/4, p = 4, 30 dB.
    pub fn two_target_default() -> Self {
        let scene = scene_with_targets(&[-30.0, 45.0], &[0.3, 1.1], 20.0).expect("valid preset");
        let geometry =
            geometry_in_wavelengths(scene.wavelength(), 4.0, 0.25, 0.25).expect("valid preset");
        Self {
            params: AtomicParams::rb_reference(),
            scene,
            geometry,
            prony: PronyConfig::for_targets(2),
            snr_db: Some(30.0),
            trials: 100,
            base_seed: 1,
            synthesis: MeasurementSource::AnalyticModel,
            sweep: None,
        }
    }

    /// Preset scene with `angles_deg` (zero phases) on the default layout.
    pub fn with_targets(angles_deg: &[f64]) -> Self {
        let mut cfg = Self::two_target_default();
        let phases = vec![0.0; angles_deg.len()];
        cfg.scene = scene_with_targets(angles_deg, &phases, 20.0).expect("valid preset");
        cfg.prony = PronyConfig::for_targets(angles_deg.len());
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.scene.validate()?;
        self.geometry.validate()?;
        self.prony.validate()?;
        if self.trials < 1 {
            return Err(invalid("trials must be >= 1"));
        }
        if let Some(s) = self.snr_db {
            if s.is_nan() {
                return Err(invalid("snr_db must be a number"));
            }
        }
        if let Some(n) = self.prony.target_count {
            if n != self.scene.target_count() {
                return Err(invalid(format!(
                    "prony target count {n} differs from the scene's {} signals",
                    self.scene.target_count()
                )));
            }
        }
        if self.prony.model_order >= self.geometry.channel_count {
            return Err(IseError::InsufficientSamples {
                samples: self.geometry.channel_count,
                order: self.prony.model_order,
            });
        }
        Ok(())
    }

    pub fn scene_meta(&self) -> SceneMeta {
        SceneMeta {
            wavenumber: self.scene.wavenumber(),
            lo_angle: self.scene.lo.angle,
        }
    }

    /// Copy with one sweep axis set to `value`.
    pub fn at_axis_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut out = self.clone();
        let g = &self.geometry;
        let lam = g.rf_wavelength;
        let relayout = |cell: f64, width: f64, spacing: f64| -> Result<SensorGeometry> {
            SensorGeometry::uniform(cell, width, spacing, lam)?
                .with_grid_resolution(g.grid_points_per_rf_wavelength)
        };
        match axis {
            SweepAxis::LoRatio => out.scene = self.scene.with_lo_ratio(value)?,
            SweepAxis::SnrDb => out.snr_db = Some(value),
            SweepAxis::CellLength => {
                out.geometry = relayout(value * lam, g.window_width, g.spacing)?
            }
            SweepAxis::SamplingInterval => {
                out.geometry = relayout(g.cell_length, g.window_width, value * lam)?
            }
            SweepAxis::WindowWidth => {
                out.geometry = relayout(g.cell_length, value * lam, g.spacing)?
            }
        }
        Ok(out)
    }
}

/// Noise-free calibrated samples for a scenario.
pub fn synthesize_clean(cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    match cfg.synthesis {
        MeasurementSource::AnalyticModel => {
            Ok(sensing::predicted_measurements(&cfg.scene, &cfg.geometry, &cfg.params)?.values)
        }
        MeasurementSource::SimulatedFluorescence => {
            Ok(sensing::simulate_readout(&cfg.params, &cfg.scene, &cfg.geometry)?
                .measurement
                .values)
        }
    }
}

/// Seed of trial `trial` in sweep cell `cell`.
pub fn trial_seed(base_seed: u64, cell: usize, trial: usize) -> u64 {
    base_seed
        .wrapping_add(trial as u64)
        .wrapping_add((cell as u64) << 32)
}

/// Per-target absolute errors under the assignment minimizing total error.
pub fn matched_errors(estimates: &[f64], truths: &[f64]) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() {
        return Err(IseError::LengthMismatch {
            expected: truths.len(),
            actual: estimates.len(),
        });
    }
    let n = truths.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    permute(&mut perm, 0, &mut |p| {
        let cost: f64 = p.iter().enumerate().map(|(i, &j)| (estimates[j] - truths[i]).abs()).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, p.to_vec()));
        }
    });
    let (_, p) = best.unwrap_or((0.0, Vec::new()));
    Ok(p.iter()
        .enumerate()
        .map(|(i, &j)| (estimates[j] - truths[i]).abs())
        .collect())
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOutcome {
    /// Pooled over targets and successful trials (rad); NaN when every trial failed.
    pub rmse: f64,
    /// Matched absolute errors per trial, `None` for a failed trial.
    pub per_trial_errors: Vec<Option<Vec<f64>>>,
    pub trials: usize,
    pub failures: usize,
    pub noise_sigma: f64,
}

/// Monte Carlo RMSE of the Prony estimator for one sweep cell.
pub fn mc_rmse(cfg: &ScenarioConfig, cell: usize) -> Result<McOutcome> {
    cfg.validate()?;
    let clean = synthesize_clean(cfg)?;
    let sigma = match cfg.snr_db {
        Some(snr) => sensing::noise_sigma_for_snr(&clean, snr)?,
        None => 0.0,
    };
    let truths = cfg.scene.signal_angles();
    let meta = cfg.scene_meta();
    let spacing = cfg.geometry.spacing;

    let per_trial_errors: Vec<Option<Vec<f64>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let y = sensing::gaussian_perturbation(&clean, sigma, trial_seed(cfg.base_seed, cell, trial));
            estimation::estimate_from_samples(&y, spacing, meta, &cfg.prony)
                .ok()
                .and_then(|r| matched_errors(&r.doas, &truths).ok())
        })
        .collect();

    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut failures = 0usize;
    for e in &per_trial_errors {
        match e {
            Some(errs) => {
                for v in errs {
                    sum_sq += v * v;
                    count += 1;
                }
            }
            None => failures += 1,
        }
    }
    Ok(McOutcome {
        rmse: if count > 0 { (sum_sq / count as f64).sqrt() } else { f64::NAN },
        per_trial_errors,
        trials: cfg.trials,
        failures,
        noise_sigma: sigma,
    })
}

/// RMS of the per-target CRLB standard deviations (rad), comparable with
/// the pooled RMSE.
pub fn pooled_crlb_std(cfg: &ScenarioConfig) -> Result<f64> {
    let snr = cfg
        .snr_db
        .ok_or_else(|| invalid("the bound needs a finite SNR"))?;
    let rep = crlb::scene_crlb(&cfg.params, &cfg.scene, &cfg.geometry, snr)?;
    let n = rep.per_target_std.len() as f64;
    Ok((rep.per_target_std.iter().map(|s| s * s).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// RMSE per value (rad).
    pub rmse: Vec<f64>,
    /// Pooled CRLB std per value (rad), when defined.
    pub crlb_std: Vec<Option<f64>>,
    pub trials: Vec<usize>,
    pub failures: Vec<usize>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},rmse_deg,crlb_deg,trials,failures", self.axis.name())?;
        for i in 0..self.values.len() {
            let crlb = self.crlb_std[i]
                .map(|c| format!("{:.16e}", c.to_degrees()))
                .unwrap_or_default();
            writeln!(
                w,
                "{:.16e},{:.16e},{},{},{}",
                self.values[i],
                self.rmse[i].to_degrees(),
                crlb,
                self.trials[i],
                self.failures[i]
            )?;
        }
        Ok(())
    }

    pub fn failure_rate(&self, i: usize) -> f64 {
        self.failures[i] as f64 / self.trials[i] as f64
    }
}

/// Sweep manifest: resolved configuration, crate version and wall time.
#[derive(Debug, Clone, Serialize)]
pub struct SweepManifest<'a> {
    pub config: &'a ScenarioConfig,
    pub version: &'static str,
    pub wall_time_s: f64,
}

pub fn manifest_json(cfg: &ScenarioConfig, wall_time_s: f64) -> String {
    serde_json::to_string_pretty(&SweepManifest {
        config: cfg,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_s,
    })
    .expect("plain data serializes")
}

/// Run the sweep named in `cfg.sweep`; cells are indexed by position.
pub fn run_sweep(cfg: &ScenarioConfig) -> Result<SweepResult> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| invalid("scenario has no sweep section"))?;
    if spec.values.is_empty() {
        return Err(invalid("sweep needs at least one value"));
    }
    let mut out = SweepResult {
        axis: spec.axis,
        values: spec.values.clone(),
        rmse: Vec::new(),
        crlb_std: Vec::new(),
        trials: Vec::new(),
        failures: Vec::new(),
    };
    for (cell, &v) in spec.values.iter().enumerate() {
        let c = cfg.at_axis_value(spec.axis, v)?;
        let mc = mc_rmse(&c, cell)?;
        out.rmse.push(mc.rmse);
        out.crlb_std.push(pooled_crlb_std(&c).ok());
        out.trials.push(mc.trials);
        out.failures.push(mc.failures);
        log::info!(
            "{} = {v}: rmse {:.4} deg, {} / {} failures",
            spec.axis.name(),
            mc.rmse.to_degrees(),
            mc.failures,
            mc.trials
        );
    }
    Ok(out)
}

/// RMSE versus LO ratio. The samples come from the full readout chain,
/// because the linearized model is blind to the LO ratio by construction.
pub fn run_lo_ratio_sweep(cfg: &ScenarioConfig, ratios: &[f64]) -> Result<SweepResult> {
    let mut c = cfg.clone();
    c.synthesis = MeasurementSource::SimulatedFluorescence;
    c.sweep = Some(SweepSpec {
        axis: SweepAxis::LoRatio,
        values: ratios.to_vec(),
    });
    run_sweep(&c)
}

pub fn run_snr_sweep(cfg: &ScenarioConfig, snrs_db: &[f64]) -> Result<SweepResult> {
    let mut c = cfg.clone();
    c.sweep = Some(SweepSpec {
        axis: SweepAxis::SnrDb,
        values: snrs_db.to_vec(),
    });
    run_sweep(&c)
}

/// The three scenes compared against the bound: one target, a wide pair and
/// a close pair.
pub fn snr_presets() -> Vec<(&'static str, ScenarioConfig)> {
    vec![
        ("single_15", ScenarioConfig::with_targets(&[15.0])),
        ("wide_pair", ScenarioConfig::with_targets(&[-15.0, 15.0])),
        ("close_pair", ScenarioConfig::with_targets(&[15.0, 20.0])),
    ]
}

/// CRLB std (rad) per target angle and normalized cell length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSweep {
    pub angles_deg: Vec<f64>,
    pub lengths_wavelengths: Vec<f64>,
    pub channel_counts: Vec<usize>,
    /// `crlb_std[a][l]` for angle `a`, length `l`.
    pub crlb_std: Vec<Vec<f64>>,
}

impl LengthSweep {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "cell_length_wavelengths,channel_count")?;
        for a in &self.angles_deg {
            write!(w, ",crlb_deg_theta_{a}")?;
        }
        writeln!(w)?;
        for (l, len) in self.lengths_wavelengths.iter().enumerate() {
            write!(w, "{len:.16e},{}", self.channel_counts[l])?;
            for row in &self.crlb_std {
                write!(w, ",{:.16e}", row[l].to_degrees())?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Phase grid used to average the single-target bound; the short-aperture
/// bound swings by an order of magnitude with the beat phase.
pub const LENGTH_SWEEP_PHASES: usize = 256;

/// Single-target bound versus aperture at fixed spacing and window width.
/// Each entry is the RMS over a uniform phase grid, i.e. the bound for a
/// target whose phase is unknown.
pub fn run_length_sweep(
    cfg: &ScenarioConfig,
    angles_deg: &[f64],
    lengths_wavelengths: &[f64],
) -> Result<LengthSweep> {
    let snr = cfg.snr_db.ok_or_else(|| invalid("length sweep needs an SNR"))?;
    let mut channel_counts = Vec::new();
    let mut crlb_std = vec![Vec::new(); angles_deg.len()];
    for &len in lengths_wavelengths {
        let c = cfg.at_axis_value(SweepAxis::CellLength, len)?;
        channel_counts.push(c.geometry.channel_count);
        for (a, &ang) in angles_deg.iter().enumerate() {
            let var = (0..LENGTH_SWEEP_PHASES)
                .map(|i| {
                    let phase = 2.0 * PI * i as f64 / LENGTH_SWEEP_PHASES as f64;
                    let scene = single_target_like(&cfg.scene, ang, Some(phase))?;
                    let rep = crlb::scene_crlb(&c.params, &scene, &c.geometry, snr)?;
                    Ok(rep.per_target_std[0].powi(2))
                })
                .collect::<Result<Vec<f64>>>()?
                .iter()
                .sum::<f64>()
                / LENGTH_SWEEP_PHASES as f64;
            crlb_std[a].push(var.sqrt());
        }
    }
    Ok(LengthSweep {
        angles_deg: angles_deg.to_vec(),
        lengths_wavelengths: lengths_wavelengths.to_vec(),
        channel_counts,
        crlb_std,
    })
}

/// Residual summary for one LO regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationProfile {
    pub lo_ratio: f64,
    pub alpha_exact: Vec<f64>,
    pub alpha_linearized: Vec<f64>,
    pub rms_residual: f64,
    pub sup_residual: f64,
    /// Σ|𝒜_i| (1/m).
    pub modulation_amplitude: f64,
}

impl LinearizationProfile {
    pub fn normalized_rms(&self) -> f64 {
        if self.modulation_amplitude == 0.0 {
            0.0
        } else {
            self.rms_residual / self.modulation_amplitude
        }
    }

    pub fn normalized_sup(&self) -> f64 {
        if self.modulation_amplitude == 0.0 {
            0.0
        } else {
            self.sup_residual / self.modulation_amplitude
        }
    }
}

pub fn linearization_profile(
    params: &AtomicParams,
    scene: &RfScene,
    geometry: &SensorGeometry,
) -> Result<LinearizationProfile> {
    let model = LinearizedAbsorption::new(params, scene)?;
    let exact = SampledAbsorption::exact(params, scene, geometry)?.values;
    let lin = SampledAbsorption::linearized(&model, geometry)?.values;
    let mut sq = 0.0;
    let mut sup: f64 = 0.0;
    for (e, l) in exact.iter().zip(&lin) {
        let d = e - l;
        sq += d * d;
        sup = sup.max(d.abs());
    }
    Ok(LinearizationProfile {
        lo_ratio: scene.lo_dominance_ratio(),
        rms_residual: (sq / exact.len() as f64).sqrt(),
        sup_residual: sup,
        modulation_amplitude: model.total_modulation_amplitude(),
        alpha_exact: exact,
        alpha_linearized: lin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationCheck {
    pub positions: Vec<f64>,
    pub weak: LinearizationProfile,
    pub strong: LinearizationProfile,
    /// Normalized RMS residual, weak over strong.
    pub residual_ratio: f64,
}

impl LinearizationCheck {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "x_m,alpha_exact_weak,alpha_lin_weak,alpha_exact_strong,alpha_lin_strong"
        )?;
        for i in 0..self.positions.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.positions[i],
                self.weak.alpha_exact[i],
                self.weak.alpha_linearized[i],
                self.strong.alpha_exact[i],
                self.strong.alpha_linearized[i]
            )?;
        }
        Ok(())
    }
}

/// Exact versus linearized absorption in a weak- and a strong-LO regime.
/// Residuals are compared after normalizing by Σ|𝒜_i|.
pub fn run_linearization_check(
    params: &AtomicParams,
    scene_weak: &RfScene,
    scene_strong: &RfScene,
    geometry: &SensorGeometry,
) -> Result<LinearizationCheck> {
    if scene_weak.target_count() != scene_strong.target_count() {
        return Err(invalid("linearization scenes must share their targets"));
    }
    let weak = linearization_profile(params, scene_weak, geometry)?;
    let strong = linearization_profile(params, scene_strong, geometry)?;
    let residual_ratio = weak.normalized_rms() / strong.normalized_rms();
    Ok(LinearizationCheck {
        positions: geometry.grid(),
        weak,
        strong,
        residual_ratio,
    })
}

/// Matched-filter spectrum of the calibrated samples over candidate angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCurve {
    pub label: String,
    pub angles_deg: Vec<f64>,
    /// |Σ ỹ_j e^{-iΔk(θ) x_j}|² over (K max|𝒜| ℓ / 2)², the response of
    /// ideal point samples of the strongest target.
    pub power: Vec<f64>,
}

impl SpectralCurve {
    pub fn peak(&self) -> (f64, f64) {
        let (i, p) = self
            .power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        (self.angles_deg[i], p)
    }

    pub fn max_within(&self, center_deg: f64, half_width_deg: f64) -> f64 {
        self.angles_deg
            .iter()
            .zip(&self.power)
            .filter(|(a, _)| (*a - center_deg).abs() <= half_width_deg + 1e-9)
            .map(|(_, p)| *p)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn at(&self, angle_deg: f64) -> f64 {
        let i = self
            .angles_deg
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - angle_deg).abs().total_cmp(&(b.1 - angle_deg).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.power[i]
    }
}

pub fn demo_angle_grid() -> Vec<f64> {
    let n = (180.0 / DEMO_ANGLE_STEP_DEG).round() as usize;
    (0..=n).map(|i| -90.0 + i as f64 * DEMO_ANGLE_STEP_DEG).collect()
}

pub fn spectral_power(
    params: &AtomicParams,
    scene: &RfScene,
    geometry: &SensorGeometry,
    angles_deg: &[f64],
    label: &str,
) -> Result<SpectralCurve> {
    let model = LinearizedAbsorption::new(params, scene)?;
    let y = sensing::predicted_from_model(&model, geometry)?.values;
    let centers = geometry.centers();
    let k = scene.wavenumber();
    let s0 = scene.lo.angle.sin();
    let a_max = model.amplitudes.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let reference = (centers.len() as f64 * a_max * geometry.window_width / 2.0).powi(2);
    if reference == 0.0 {
        return Err(IseError::ZeroSignalPower);
    }
    let power = angles_deg
        .iter()
        .map(|t| {
            let dk = k * (s0 - t.to_radians().sin());
            let (mut re, mut im) = (0.0, 0.0);
            for (yj, xj) in y.iter().zip(&centers) {
                let (s, c) = (dk * xj).sin_cos();
                re += yj * c;
                im -= yj * s;
            }
            (re * re + im * im) / reference
        })
        .collect();
    Ok(SpectralCurve {
        label: label.to_string(),
        angles_deg: angles_deg.to_vec(),
        power,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDemo {
    /// Target at 60°, Δx = λ/4.
    pub aliasing_compliant: SpectralCurve,
    /// Target at 60°, Δx = λ/2.
    pub aliasing_violated: SpectralCurve,
    /// Target at 0°, ℓ = λ/4.
    pub null_compliant: SpectralCurve,
    /// Target at 0°, ℓ = λ.
    pub null_violated: SpectralCurve,
}

impl SamplingDemo {
    pub fn curves(&self) -> [&SpectralCurve; 4] {
        [
            &self.aliasing_compliant,
            &self.aliasing_violated,
            &self.null_compliant,
            &self.null_violated,
        ]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let curves = self.curves();
        write!(w, "angle_deg")?;
        for c in curves {
            write!(w, ",{}", c.label)?;
        }
        writeln!(w)?;
        for (i, a) in curves[0].angles_deg.iter().enumerate() {
            write!(w, "{a:.16e}")?;
            for c in curves {
                write!(w, ",{:.16e}", c.power[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Spectra for a compliant and a violating layout in each of the two
/// failure modes (aliasing from wide spacing, in-band null from wide windows).
/// `cell_wavelengths` sets the aperture.
pub fn run_sampling_demo(cfg: &ScenarioConfig, cell_wavelengths: f64) -> Result<SamplingDemo> {
    let lam = cfg.scene.wavelength();
    let grid = demo_angle_grid();
    let curve = |angle: f64, width: f64, spacing: f64, label: &str| -> Result<SpectralCurve> {
        let g = geometry_in_wavelengths(lam, cell_wavelengths, width, spacing)?;
        let report = g.sampling_report();
        for w in report.warnings() {
            log::warn!("{label}: {w}");
        }
        let scene = single_target_like(&cfg.scene, angle, None)?;
        spectral_power(&cfg.params, &scene, &g, &grid, label)
    };
    Ok(SamplingDemo {
        aliasing_compliant: curve(60.0, 0.25, 0.25, "theta60_dx_quarter")?,
        aliasing_violated: curve(60.0, 0.25, 0.5, "theta60_dx_half")?,
        null_compliant: curve(0.0, 0.25, 0.25, "theta0_width_quarter")?,
        null_violated: curve(0.0, 1.0, 0.25, "theta0_width_full")?,
    })
}

/// Whole-cell transmission T(θ) over an angle grid.
pub fn transmission_curve(
    params: &AtomicParams,
    base: &RfScene,
    cell_length: f64,
    angles_deg: &[f64],
) -> Result<Vec<f64>> {
    let sig = base
        .signals
        .first()
        .copied()
        .ok_or_else(|| invalid("transmission curve needs one target"))?;
    angles_deg
        .iter()
        .map(|a| {
            let mut s = base.clone();
            s.signals = vec![PlaneWave::new(sig.amplitude, sig.phase, a.to_radians())];
            sensing::integrated_power_transmission(params, &s, cell_length)
        })
        .collect()
}

pub fn is_strictly_monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0]) || v.windows(2).all(|w| w[1] < w[0])
}

/// One target at `angle_deg` with the LO, carrier and LO ratio of `base`;
/// the phase defaults to that of the first signal.
fn single_target_like(base: &RfScene, angle_deg: f64, phase: Option<f64>) -> Result<RfScene> {
    let first = base
        .signals
        .first()
        .ok_or_else(|| invalid("scenario needs at least one target"))?;
    let ratio = base.lo_dominance_ratio();
    let sig = PlaneWave::new(
        base.lo.amplitude / ratio,
        phase.unwrap_or(first.phase),
        angle_deg.to_radians(),
    );
    RfScene::new(base.lo, vec![sig], base.carrier_freq)
}

/// Wall-clock helper for sweep manifests.
pub fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t0 = Instant::now();
    let out = f()?;
    Ok((out, t0.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_preset_is_consistent() {
        let cfg = ScenarioConfig::two_target_default();
        cfg.validate().unwrap();
        assert_eq!(cfg.geometry.channel_count, 16);
        assert!((cfg.scene.lo_dominance_ratio() - 20.0).abs() < 1e-12);
        assert!(cfg.geometry.sampling_report().compliant());
    }

    #[test]
    fn noiseless_trials_are_exact() {
        let mut cfg = ScenarioConfig::two_target_default();
        cfg.snr_db = None;
        cfg.trials = 3;
        let out = mc_rmse(&cfg, 0).unwrap();
        assert_eq!(out.failures, 0);
        assert!(out.rmse < 1e-6);
    }

    #[test]
    fn trials_reproducible_and_seeded() {
        let mut cfg = ScenarioConfig::two_target_default();
        cfg.trials = 1;
        let a = mc_rmse(&cfg, 0).unwrap();
        let b = mc_rmse(&cfg, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(trial_seed(7, 0, 3), 10);
        assert_ne!(trial_seed(7, 1, 3), trial_seed(7, 0, 3));
    }

    #[test]
    fn matching_is_order_invariant() {
        let est = [0.5, -0.2, 1.0];
        let a = matched_errors(&est, &[-0.21, 0.49, 1.02]).unwrap();
        let b = matched_errors(&est, &[1.02, -0.21, 0.49]).unwrap();
        let rms = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        assert!((rms(&a) - rms(&b)).abs() < 1e-15);
        assert!((rms(&a) - (0.01f64.powi(2) * 2.0 + 0.02f64.powi(2))).abs() < 1e-15);
        assert!(matched_errors(&est, &[0.0]).is_err());
    }

    #[test]
    fn axis_values_rebuild_geometry() {
        let cfg = ScenarioConfig::two_target_default();
        for (len, k) in [(1.0, 4), (2.0, 8), (4.0, 16), (8.0, 32)] {
            let c = cfg.at_axis_value(SweepAxis::CellLength, len).unwrap();
            assert_eq!(c.geometry.channel_count, k);
        }
        let c = cfg.at_axis_value(SweepAxis::SamplingInterval, 0.5).unwrap();
        assert!(!c.geometry.sampling_report().spacing_ok);
        let c = cfg.at_axis_value(SweepAxis::LoRatio, 5.0).unwrap();
        assert!((c.scene.lo_dominance_ratio() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_linearization_is_exact() {
        let params = AtomicParams::rb_reference();
        let cfg = ScenarioConfig::two_target_default();
        let mut silent = cfg.scene.clone();
        for s in &mut silent.signals {
            s.amplitude = 0.0;
        }
        let chk = run_linearization_check(&params, &silent, &silent, &cfg.geometry).unwrap();
        assert_eq!(chk.weak.rms_residual, 0.0);
        assert_eq!(chk.strong.sup_residual, 0.0);
        let mut buf = Vec::new();
        chk.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            cfg.geometry.grid().len() + 1
        );
    }

    #[test]
    fn normalized_residual_shrinks_with_lo_ratio() {
        let params = AtomicParams::rb_reference();
        let cfg = ScenarioConfig::two_target_default();
        let mut last = f64::INFINITY;
        for r in [1.0, 2.0, 5.0, 10.0, 20.0, 50.0] {
            let scene = cfg.scene.with_lo_ratio(r).unwrap();
            let p = linearization_profile(&params, &scene, &cfg.geometry).unwrap();
            assert!(p.normalized_sup() < last * 1.1, "ratio {r}");
            last = p.normalized_sup();
        }
    }

    #[test]
    fn sweep_csv_layout() {
        let mut cfg = ScenarioConfig::two_target_default();
        cfg.trials = 4;
        let r = run_snr_sweep(&cfg, &[20.0, 40.0]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "snr_db,rmse_deg,crlb_deg,trials,failures");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 5);
        assert!(r.crlb_std.iter().all(|c| c.is_some()));

        let mut noiseless = cfg.clone();
        noiseless.snr_db = None;
        noiseless.sweep = Some(SweepSpec {
            axis: SweepAxis::LoRatio,
            values: vec![10.0],
        });
        let r = run_sweep(&noiseless).unwrap();
        assert_eq!(r.crlb_std, vec![None]);
        let v: serde_json::Value = serde_json::from_str(&manifest_json(&cfg, 1.5)).unwrap();
        assert_eq!(v["wall_time_s"], 1.5);
        assert_eq!(v["config"]["trials"], 4);
    }

    #[test]
    fn demo_grid_spacing() {
        let g = demo_angle_grid();
        assert_eq!(g.len(), 721);
        assert_eq!(g[0], -90.0);
        assert_eq!(*g.last().unwrap(), 90.0);
    }
}
