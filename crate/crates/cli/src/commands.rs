use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ise_core::crlb;
use ise_core::estimation::{self, PronyConfig};
use ise_core::experiments::{self, ScenarioConfig, SweepResult};
use ise_core::physics::{PlaneWave, RfScene};
use ise_core::sensing::{self, MeasurementSource, SamplingReport};
use ise_core::IseError;
use serde::Serialize;

use crate::config::{Format, NamedScene, Resolved, RunConfig, Study};
use crate::error::CliError;
use crate::output::OutDir;

/// Tolerance of the single-target closed-form cross-check on the bound.
const CLOSED_FORM_TOLERANCE: f64 = 1e-10;
/// Relative deviation allowed between consecutive channel positions.
const SPACING_TOLERANCE: f64 = 1e-9;

fn wants(format: Option<Format>, f: Format) -> bool {
    format.is_none_or(|g| g == f)
}

pub fn warn_sampling(report: &SamplingReport) {
    for w in report.warnings() {
        log::warn!("{w}");
    }
}

fn print_sampling(report: &SamplingReport, spacing: f64, width: f64) {
    let lam = report.rf_wavelength;
    let verdict = |ok: bool| if ok { "ok" } else { "VIOLATED" };
    println!("rf wavelength: {lam:.6e} m");
    println!(
        "spacing: {spacing:.6e} m = {:.4} lambda (limit lambda/4): {}",
        spacing / lam,
        verdict(report.spacing_ok)
    );
    println!(
        "window width: {width:.6e} m = {:.4} lambda (limit below lambda/2): {}",
        width / lam,
        verdict(report.width_ok)
    );
    println!("compliant: {}", report.compliant());
}

pub fn check_sampling(r: &Resolved, format: Option<Format>) -> Result<(), CliError> {
    let g = &r.scenario.geometry;
    let report = sensing::check_sampling(g, r.scenario.scene.wavelength());
    warn_sampling(&report);
    if format == Some(Format::Json) {
        let json = serde_json::to_string_pretty(&report).expect("plain data serializes");
        println!("{json}");
    } else {
        print_sampling(&report, g.spacing, g.window_width);
    }
    Ok(())
}

pub fn simulate(r: &Resolved, out: &mut OutDir, format: Option<Format>) -> Result<(), CliError> {
    let c = &r.scenario;
    let report = c.geometry.sampling_report();
    warn_sampling(&report);
    print_sampling(&report, c.geometry.spacing, c.geometry.window_width);

    let readout = sensing::simulate_readout(&c.params, &c.scene, &c.geometry)?;
    out.write_with("fluorescence.csv", |w| readout.profile.write_csv(w))?;

    let clean = match c.synthesis {
        MeasurementSource::AnalyticModel => {
            sensing::predicted_measurements(&c.scene, &c.geometry, &c.params)?
        }
        MeasurementSource::SimulatedFluorescence => readout.measurement,
    };
    let measurement = match c.snr_db {
        Some(snr) => sensing::add_noise(&clean, snr, experiments::trial_seed(c.base_seed, 0, 0))?,
        None => clean,
    };
    out.write_with("measurement.csv", |w| measurement.write_csv(w))?;
    if format == Some(Format::Json) {
        let json = serde_json::to_string_pretty(&measurement).expect("plain data serializes");
        out.write_str("measurement.json", &json)?;
    }
    println!(
        "simulated {} channels ({:?}, noise sigma {:.3e})",
        measurement.values.len(),
        measurement.source,
        measurement.noise_sigma
    );
    Ok(())
}

pub fn estimate(
    r: &Resolved,
    measurement_path: &Path,
    out: &mut OutDir,
    format: Option<Format>,
) -> Result<(), CliError> {
    let c = &r.scenario;
    let file = std::fs::File::open(measurement_path).map_err(|e| CliError::io(measurement_path, e))?;
    let record = sensing::read_measurement_csv(std::io::BufReader::new(file))?;
    let spacing = uniform_spacing(&record.positions)?;
    if ((spacing - c.geometry.spacing) / c.geometry.spacing).abs() > SPACING_TOLERANCE {
        log::warn!(
            "measurement spacing {spacing:.6e} m differs from the configured {:.6e} m; using the file's",
            c.geometry.spacing
        );
    }
    let result =
        estimation::estimate_from_samples(&record.values, spacing, c.scene_meta(), &c.prony)?;
    if result.rank_deficient {
        log::warn!("prediction system is rank deficient; minimum-norm solution used");
    }
    for (i, (theta, clamped)) in result.doas.iter().zip(&result.clamped_flags).enumerate() {
        let note = if *clamped { " (clamped to end-fire)" } else { "" };
        println!("target {}: {:.6} deg{note}", i + 1, theta.to_degrees());
    }
    if wants(format.or(Some(Format::Json)), Format::Json) {
        out.write_str("estimate.json", &result.to_json())?;
    }
    if format == Some(Format::Csv) {
        out.write_with("estimate.csv", |w| {
            writeln!(w, "target,doa_deg,spatial_frequency_rad_per_m,clamped")?;
            for i in 0..result.doas.len() {
                writeln!(
                    w,
                    "{},{:.16e},{:.16e},{}",
                    i + 1,
                    result.doas[i].to_degrees(),
                    result.spatial_frequencies[i],
                    result.clamped_flags[i]
                )?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Channel spacing of a measurement file, which must be uniform.
fn uniform_spacing(positions: &[f64]) -> Result<f64, CliError> {
    if positions.len() < 2 {
        return Err(IseError::InsufficientSamples {
            samples: positions.len(),
            order: 1,
        }
        .into());
    }
    let k = positions.len();
    let spacing = (positions[k - 1] - positions[0]) / (k - 1) as f64;
    if !(spacing > 0.0) {
        return Err(schema(2, "positions must increase"));
    }
    for j in 1..k {
        let d = positions[j] - positions[j - 1];
        if ((d - spacing) / spacing).abs() > SPACING_TOLERANCE {
            // header is line 1, channel j+1 sits on line j+2
            return Err(schema(j + 2, "channel positions are not uniformly spaced"));
        }
    }
    Ok(spacing)
}

fn schema(row: usize, message: &str) -> CliError {
    IseError::Schema {
        row,
        message: message.to_string(),
    }
    .into()
}

pub fn crlb(r: &Resolved, out: &mut OutDir, format: Option<Format>) -> Result<(), CliError> {
    let c = &r.scenario;
    let snr = c
        .snr_db
        .ok_or_else(|| CliError::Config("crlb needs `run.snr_db`".into()))?;
    warn_sampling(&c.geometry.sampling_report());
    let report = crlb::scene_crlb(&c.params, &c.scene, &c.geometry, snr)?;

    if report.angles.len() == 1 {
        let k = c.scene.wavenumber();
        let theta = report.angles[0];
        let closed = 1.0 / (k * k * theta.cos().powi(2) * report.effective_fim_dk[(0, 0)]);
        let rel = (report.crlb_theta[(0, 0)] - closed).abs() / closed;
        println!("single-target closed form: relative deviation {rel:.2e}");
        if !(rel < CLOSED_FORM_TOLERANCE) {
            return Err(IseError::InvalidParameter(format!(
                "matrix bound disagrees with the single-target closed form (relative deviation {rel:.2e})"
            ))
            .into());
        }
    }
    for (i, (t, s)) in report.angles.iter().zip(&report.per_target_std).enumerate() {
        println!(
            "target {} at {:.4} deg: CRLB std {:.6e} deg",
            i + 1,
            t.to_degrees(),
            s.to_degrees()
        );
    }
    println!("effective FIM condition number: {:.3e}", report.condition_number);

    if wants(format, Format::Json) {
        out.write_str("crlb.json", &report.to_json())?;
    }
    if wants(format, Format::Csv) {
        out.write_with("crlb.csv", |w| report.write_std_csv(w))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    study: Study,
    version: &'static str,
    wall_time_s: f64,
    outputs: Vec<String>,
    config: &'a RunConfig,
    resolved: &'a ScenarioConfig,
}

pub fn sweep(r: &Resolved, out: &mut OutDir, format: Option<Format>) -> Result<(), CliError> {
    let spec = r
        .study()
        .ok_or_else(|| CliError::Config("sweep needs a [sweep] section".into()))?;
    let c = &r.scenario;
    if spec.study != Study::SamplingDemo {
        warn_sampling(&c.geometry.sampling_report());
    }
    let start = Instant::now();
    let format = format.unwrap_or(Format::Csv);

    match spec.study {
        Study::Axis => {
            let res = experiments::run_sweep(c)?;
            write_sweep(out, "sweep", &res, format)?;
        }
        Study::LoRatio => {
            let res = experiments::run_lo_ratio_sweep(c, &spec.values)?;
            write_sweep(out, "sweep", &res, format)?;
        }
        Study::Snr if spec.scenes.is_empty() => {
            let res = experiments::run_snr_sweep(c, &spec.values)?;
            write_sweep(out, "sweep", &res, format)?;
        }
        Study::Snr => {
            for s in &spec.scenes {
                let sc = scenario_for(c, s)?;
                let res = experiments::run_snr_sweep(&sc, &spec.values)?;
                write_sweep(out, &format!("sweep_{}", s.name), &res, format)?;
            }
        }
        Study::Length => {
            let res = experiments::run_length_sweep(c, &spec.angles_deg, &spec.values)?;
            for (a, row) in spec.angles_deg.iter().zip(&res.crlb_std) {
                let cells: Vec<String> = row.iter().map(|s| format!("{:.4}", s.to_degrees())).collect();
                println!("theta {a} deg: CRLB std deg {}", cells.join(" / "));
            }
            match format {
                Format::Csv => out.write_with("length_sweep.csv", |w| res.write_csv(w))?,
                Format::Json => out.write_str("length_sweep.json", &to_json(&res))?,
            };
        }
        Study::SamplingDemo => {
            let cell = c.geometry.cell_length / c.geometry.rf_wavelength;
            let demo = experiments::run_sampling_demo(c, cell)?;
            for curve in demo.curves() {
                let (angle, power) = curve.peak();
                println!("{}: peak {power:.3e} at {angle:.2} deg", curve.label);
            }
            match format {
                Format::Csv => out.write_with("sampling_demo.csv", |w| demo.write_csv(w))?,
                Format::Json => out.write_str("sampling_demo.json", &to_json(&demo))?,
            };
        }
        Study::Linearization => {
            let weak = c.scene.with_lo_ratio(spec.values[0])?;
            let strong = c.scene.with_lo_ratio(spec.values[1])?;
            let check = experiments::run_linearization_check(&c.params, &weak, &strong, &c.geometry)?;
            println!(
                "normalized RMS residual: {:.4e} (LO ratio {}) / {:.4e} (LO ratio {}) = {:.3}",
                check.weak.normalized_rms(),
                spec.values[0],
                check.strong.normalized_rms(),
                spec.values[1],
                check.residual_ratio
            );
            match format {
                Format::Csv => out.write_with("linearization.csv", |w| check.write_csv(w))?,
                Format::Json => out.write_str("linearization.json", &to_json(&check))?,
            };
        }
    }

    let outputs = out
        .written()
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let manifest = Manifest {
        command: "sweep",
        study: spec.study,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
        config: &r.file,
        resolved: c,
    };
    out.write_str("manifest.json", &to_json(&manifest))?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

fn write_sweep(out: &mut OutDir, stem: &str, res: &SweepResult, format: Format) -> Result<(), CliError> {
    for (i, v) in res.values.iter().enumerate() {
        let crlb = res.crlb_std[i]
            .map(|s| format!("{:.4}", s.to_degrees()))
            .unwrap_or_else(|| "-".into());
        println!(
            "{stem} {} = {v}: RMSE {:.4} deg, CRLB {crlb} deg, failures {}/{}",
            res.axis.name(),
            res.rmse[i].to_degrees(),
            res.failures[i],
            res.trials[i]
        );
    }
    match format {
        Format::Csv => out.write_with(&format!("{stem}.csv"), |w| res.write_csv(w))?,
        Format::Json => out.write_str(&format!("{stem}.json"), &to_json(res))?,
    };
    Ok(())
}

/// The config scenario with its targets replaced by `s`: equal amplitudes at
/// the same LO ratio, zero phases, p = 2N unless given.
fn scenario_for(base: &ScenarioConfig, s: &NamedScene) -> Result<ScenarioConfig, CliError> {
    if s.angles_deg.is_empty() {
        return Err(CliError::Config(format!("sweep scene `{}` has no angles", s.name)));
    }
    let signals = s
        .angles_deg
        .iter()
        .map(|a| PlaneWave::new(1.0, 0.0, a.to_radians()))
        .collect();
    let scene = RfScene::new(base.scene.lo, signals, base.scene.carrier_freq)
        .and_then(|sc| sc.with_lo_ratio(base.scene.lo_dominance_ratio()))
        .map_err(|e| CliError::Config(format!("sweep scene `{}`: {e}", s.name)))?;
    let n = s.angles_deg.len();
    let prony = PronyConfig {
        model_order: s.model_order.unwrap_or(2 * n),
        target_count: Some(n),
        ..base.prony.clone()
    };
    let cfg = ScenarioConfig {
        scene,
        prony,
        ..base.clone()
    };
    cfg.validate()
        .map_err(|e| CliError::Config(format!("sweep scene `{}`: {e}", s.name)))?;
    Ok(cfg)
}
