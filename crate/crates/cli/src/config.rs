//! TOML run configuration. Every section rejects unknown keys and every
//! physical quantity carries its unit in the key name.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ise_core::estimation::{OrderSelection, PronyConfig};
use ise_core::experiments::{ScenarioConfig, SweepAxis};
use ise_core::physics::{AtomicParams, PlaneWave, RfScene, REDUCED_PLANCK, VACUUM_PERMITTIVITY};
use ise_core::sensing::{MeasurementSource, SensorGeometry};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub atomic: AtomicSection,
    pub scene: SceneSection,
    pub geometry: GeometrySection,
    pub prony: PronySection,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub trials: usize,
    pub base_seed: u64,
    /// Omitted for noiseless runs.
    pub snr_db: Option<f64>,
    #[serde(default = "default_synthesis")]
    pub synthesis: MeasurementSource,
}

fn default_synthesis() -> MeasurementSource {
    MeasurementSource::AnalyticModel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Verbosity {
    Quiet,
    Warn,
    #[default]
    Info,
    Debug,
}

impl Verbosity {
    pub fn level(self) -> log::LevelFilter {
        match self {
            Verbosity::Quiet => log::LevelFilter::Error,
            Verbosity::Warn => log::LevelFilter::Warn,
            Verbosity::Info => log::LevelFilter::Info,
            Verbosity::Debug => log::LevelFilter::Debug,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Restricts tabular outputs to one format; both are written when unset.
    pub format: Option<Format>,
    #[serde(default)]
    pub verbosity: Verbosity,
}

/// Defaults to the Rb reference set. Rates are ordinary frequencies (Hz),
/// converted to rad/s on load.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AtomicSection {
    pub atom_density_per_m3: f64,
    pub probe_dipole_c_m: f64,
    pub rf_dipole_c_m: f64,
    pub probe_wavelength_m: f64,
    pub decay_rate_21_hz: f64,
    pub coupling_rabi_hz: f64,
    pub probe_detuning_hz: f64,
    pub coupling_detuning_hz: f64,
    pub rf_detuning_hz: f64,
}

impl Default for AtomicSection {
    fn default() -> Self {
        let p = AtomicParams::rb_reference();
        let hz = |w: f64| w / (2.0 * PI);
        Self {
            atom_density_per_m3: p.atom_density,
            probe_dipole_c_m: p.probe_dipole,
            rf_dipole_c_m: p.rf_dipole,
            probe_wavelength_m: p.probe_wavelength,
            decay_rate_21_hz: hz(p.decay_21),
            coupling_rabi_hz: hz(p.coupling_rabi),
            probe_detuning_hz: hz(p.probe_detuning),
            coupling_detuning_hz: hz(p.coupling_detuning),
            rf_detuning_hz: hz(p.rf_detuning),
        }
    }
}

impl AtomicSection {
    fn resolve(&self) -> AtomicParams {
        let w = |f: f64| 2.0 * PI * f;
        AtomicParams {
            atom_density: self.atom_density_per_m3,
            probe_dipole: self.probe_dipole_c_m,
            rf_dipole: self.rf_dipole_c_m,
            decay_21: w(self.decay_rate_21_hz),
            coupling_rabi: w(self.coupling_rabi_hz),
            probe_detuning: w(self.probe_detuning_hz),
            coupling_detuning: w(self.coupling_detuning_hz),
            rf_detuning: w(self.rf_detuning_hz),
            probe_wavelength: self.probe_wavelength_m,
            vacuum_permittivity: VACUUM_PERMITTIVITY,
            reduced_planck: REDUCED_PLANCK,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub carrier_freq_hz: f64,
    pub lo_amplitude_v_per_m: f64,
    pub lo_angle_deg: f64,
    #[serde(default)]
    pub lo_phase_deg: f64,
    /// A_0 / ΣA_i. When set, target amplitudes are optional (equal by
    /// default) and are rescaled to this ratio.
    pub lo_ratio: Option<f64>,
    pub targets: Vec<TargetSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub angle_deg: f64,
    #[serde(default)]
    pub phase_deg: f64,
    pub amplitude_v_per_m: Option<f64>,
}

/// Lengths are given either in metres or in RF wavelengths, never both.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub cell_length_m: Option<f64>,
    pub cell_length_wavelengths: Option<f64>,
    pub window_width_m: Option<f64>,
    pub window_width_wavelengths: Option<f64>,
    pub spacing_m: Option<f64>,
    pub spacing_wavelengths: Option<f64>,
    pub grid_points_per_wavelength: Option<usize>,
}

impl GeometrySection {
    fn resolve(&self, wavelength: f64) -> Result<SensorGeometry, CliError> {
        let len = |m: Option<f64>, wl: Option<f64>, key: &str| match (m, wl) {
            (Some(v), None) => Ok(v),
            (None, Some(v)) => Ok(v * wavelength),
            (Some(_), Some(_)) => Err(CliError::Config(format!(
                "geometry: give only one of `{key}_m` and `{key}_wavelengths`"
            ))),
            (None, None) => Err(CliError::Config(format!(
                "geometry: missing key `{key}_m` or `{key}_wavelengths`"
            ))),
        };
        let cell = len(self.cell_length_m, self.cell_length_wavelengths, "cell_length")?;
        let width = len(self.window_width_m, self.window_width_wavelengths, "window_width")?;
        let spacing = len(self.spacing_m, self.spacing_wavelengths, "spacing")?;
        let mut g = SensorGeometry::uniform(cell, width, spacing, wavelength).map_err(config_err)?;
        if let Some(n) = self.grid_points_per_wavelength {
            g = g.with_grid_resolution(n).map_err(config_err)?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PronySection {
    pub model_order: usize,
    /// Defaults to the number of scene targets under fixed order selection.
    pub target_count: Option<usize>,
    #[serde(default = "default_unit_circle_tolerance")]
    pub unit_circle_tolerance: f64,
    #[serde(default)]
    pub order_selection: OrderSelection,
    #[serde(default = "default_sv_threshold")]
    pub sv_threshold: f64,
}

fn default_unit_circle_tolerance() -> f64 {
    0.2
}

fn default_sv_threshold() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Monte Carlo RMSE along `axis`.
    Axis,
    /// Monte Carlo RMSE versus LO ratio on the full readout chain.
    LoRatio,
    /// Monte Carlo RMSE versus SNR for the config scene or each of `scenes`.
    Snr,
    /// Single-target bound versus cell length for each of `angles_deg`.
    Length,
    /// Spectral-power curves for compliant and violating layouts.
    SamplingDemo,
    /// Exact versus linearized absorption at the two LO ratios in `values`.
    Linearization,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub study: Study,
    pub axis: Option<SweepAxis>,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub angles_deg: Vec<f64>,
    #[serde(default)]
    pub scenes: Vec<NamedScene>,
}

/// Equal-amplitude, zero-phase targets at the config's LO ratio.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NamedScene {
    pub name: String,
    pub angles_deg: Vec<f64>,
    /// Defaults to twice the target count.
    pub model_order: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub order: Option<usize>,
}

/// A parsed file together with its resolved scenario.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: RunConfig,
    pub scenario: ScenarioConfig,
}

impl Resolved {
    pub fn study(&self) -> Option<&SweepSection> {
        self.file.sweep.as_ref()
    }
}

pub fn load(path: &Path, overrides: Overrides) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text, overrides).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse(text: &str, overrides: Overrides) -> Result<Resolved, CliError> {
    let mut file: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = overrides.seed {
        file.run.base_seed = seed;
    }
    if let Some(order) = overrides.order {
        file.prony.model_order = order;
    }
    let scenario = resolve(&file)?;
    Ok(Resolved { file, scenario })
}

fn config_err(e: ise_core::IseError) -> CliError {
    CliError::Config(e.to_string())
}

fn resolve(file: &RunConfig) -> Result<ScenarioConfig, CliError> {
    let params = file.atomic.resolve();
    let scene = resolve_scene(&file.scene)?;
    let geometry = file.geometry.resolve(scene.wavelength())?;

    let p = &file.prony;
    let target_count = match (p.order_selection, p.target_count) {
        (_, Some(n)) => Some(n),
        (OrderSelection::Fixed, None) => Some(scene.target_count()),
        (OrderSelection::SingularValueThreshold, None) => None,
    };
    let prony = PronyConfig {
        model_order: p.model_order,
        target_count,
        unit_circle_tolerance: p.unit_circle_tolerance,
        order_selection: p.order_selection,
        sv_threshold: p.sv_threshold,
    };

    if let Some(s) = &file.sweep {
        check_sweep(s)?;
    }
    let sweep = file.sweep.as_ref().and_then(|s| match s.study {
        Study::Axis => s.axis.map(|axis| ise_core::experiments::SweepSpec {
            axis,
            values: s.values.clone(),
        }),
        _ => None,
    });

    let cfg = ScenarioConfig {
        params,
        scene,
        geometry,
        prony,
        snr_db: file.run.snr_db,
        trials: file.run.trials,
        base_seed: file.run.base_seed,
        synthesis: file.run.synthesis,
        sweep,
    };
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn resolve_scene(s: &SceneSection) -> Result<RfScene, CliError> {
    if s.targets.is_empty() {
        return Err(CliError::Config("scene: at least one [[scene.targets]] entry is required".into()));
    }
    let lo = PlaneWave::new(
        s.lo_amplitude_v_per_m,
        s.lo_phase_deg.to_radians(),
        s.lo_angle_deg.to_radians(),
    );
    let signals = s
        .targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let amp = match (t.amplitude_v_per_m, s.lo_ratio) {
                (Some(a), _) => Ok(a),
                (None, Some(_)) => Ok(1.0),
                (None, None) => Err(CliError::Config(format!(
                    "scene.targets[{i}]: missing key `amplitude_v_per_m` (required without `scene.lo_ratio`)"
                ))),
            }?;
            Ok(PlaneWave::new(amp, t.phase_deg.to_radians(), t.angle_deg.to_radians()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let scene = RfScene::new(lo, signals, s.carrier_freq_hz).map_err(config_err)?;
    match s.lo_ratio {
        Some(r) => scene.with_lo_ratio(r).map_err(config_err),
        None => Ok(scene),
    }
}

fn check_sweep(s: &SweepSection) -> Result<(), CliError> {
    let need = |ok: bool, msg: &str| {
        if ok {
            Ok(())
        } else {
            Err(CliError::Config(format!("sweep ({:?}): {msg}", s.study)))
        }
    };
    match s.study {
        Study::Axis => {
            need(s.axis.is_some(), "missing key `axis`")?;
            need(!s.values.is_empty(), "`values` must not be empty")
        }
        Study::LoRatio | Study::Snr => need(!s.values.is_empty(), "`values` must not be empty"),
        Study::Length => {
            need(!s.values.is_empty(), "`values` (cell lengths in wavelengths) must not be empty")?;
            need(!s.angles_deg.is_empty(), "`angles_deg` must not be empty")
        }
        Study::SamplingDemo => Ok(()),
        Study::Linearization => need(
            s.values.len() == 2,
            "`values` must hold exactly two LO ratios (weak, strong)",
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[run]
trials = 10
base_seed = 3
snr_db = 30

[scene]
carrier_freq_hz = 2.03e9
lo_amplitude_v_per_m = 0.014
lo_angle_deg = 90
lo_ratio = 20

[[scene.targets]]
angle_deg = -30

[[scene.targets]]
angle_deg = 45

[geometry]
cell_length_wavelengths = 4
window_width_wavelengths = 0.25
spacing_wavelengths = 0.25

[prony]
model_order = 4
"#;

    #[test]
    fn minimal_config_resolves() {
        let r = parse(MINIMAL, Overrides::default()).unwrap();
        let c = &r.scenario;
        assert_eq!(c.geometry.channel_count, 16);
        assert_eq!(c.prony.target_count, Some(2));
        assert!((c.scene.lo_dominance_ratio() - 20.0).abs() < 1e-12);
        assert!((c.scene.signals[0].angle + 30f64.to_radians()).abs() < 1e-15);
        assert_eq!(c.params, AtomicParams::rb_reference());
    }

    #[test]
    fn unknown_key_rejected() {
        let text = MINIMAL.replace("model_order = 4", "model_order = 4\norder = 4");
        let err = parse(&text, Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("order"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unitless_length_key_rejected() {
        let text = MINIMAL.replace("spacing_wavelengths", "spacing");
        assert_eq!(parse(&text, Overrides::default()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn conflicting_units_rejected() {
        let text = MINIMAL.replace("spacing_wavelengths = 0.25", "spacing_wavelengths = 0.25\nspacing_m = 0.0369");
        let err = parse(&text, Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("spacing"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let r = parse(MINIMAL, Overrides { seed: Some(99), order: Some(6) }).unwrap();
        assert_eq!(r.scenario.base_seed, 99);
        assert_eq!(r.scenario.prony.model_order, 6);
    }

    #[test]
    fn default_atomic_round_trips_hz() {
        let p = AtomicSection::default().resolve();
        let q = AtomicParams::rb_reference();
        assert!((p.decay_21 - q.decay_21).abs() / q.decay_21 < 1e-15);
        assert!((p.coupling_detuning - q.coupling_detuning).abs() / q.coupling_detuning < 1e-15);
    }

    #[test]
    fn amplitude_required_without_ratio() {
        let text = MINIMAL.replace("lo_ratio = 20\n", "");
        let err = parse(&text, Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("amplitude_v_per_m"), "{err}");
    }
}
