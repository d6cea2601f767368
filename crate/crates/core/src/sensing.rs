//! Probe propagation, fluorescence readout, virtual windowing, calibration,
//! noise and sampling checks, plus the whole-cell integrated-power readout.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IseError, Result};
use crate::physics::{self, AtomicParams, LinearizedAbsorption, RfScene};

pub const DEFAULT_GRID_POINTS_PER_WAVELENGTH: usize = 256;

/// Shifted rectangular windows over a cell of length L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub cell_length: f64,
    pub window_width: f64,
    pub first_center: f64,
    pub spacing: f64,
    pub channel_count: usize,
    pub grid_points_per_rf_wavelength: usize,
    /// RF wavelength used to size the spatial grid.
    pub rf_wavelength: f64,
}

impl SensorGeometry {
    pub fn new(
        cell_length: f64,
        window_width: f64,
        first_center: f64,
        spacing: f64,
        channel_count: usize,
        rf_wavelength: f64,
    ) -> Result<Self> {
        let g = Self {
            cell_length,
            window_width,
            first_center,
            spacing,
            channel_count,
            grid_points_per_rf_wavelength: DEFAULT_GRID_POINTS_PER_WAVELENGTH,
            rf_wavelength,
        };
        g.validate()?;
        Ok(g)
    }

    /// As many windows of width `window_width` and pitch `spacing` as fit in
    /// the cell, starting flush with x = 0.
    pub fn uniform(
        cell_length: f64,
        window_width: f64,
        spacing: f64,
        rf_wavelength: f64,
    ) -> Result<Self> {
        if !(window_width > 0.0 && spacing > 0.0 && cell_length >= window_width) {
            return Err(invalid(format!(
                "uniform layout needs 0 < window_width <= cell_length and spacing > 0 \
                 (L = {cell_length}, l = {window_width}, dx = {spacing})"
            )));
        }
        let k = ((cell_length - window_width) / spacing + 1e-9).floor() as usize + 1;
        Self::new(
            cell_length,
            window_width,
            window_width / 2.0,
            spacing,
            k,
            rf_wavelength,
        )
    }

    pub fn with_grid_resolution(mut self, points_per_wavelength: usize) -> Result<Self> {
        self.grid_points_per_rf_wavelength = points_per_wavelength;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cell_length", self.cell_length),
            ("window_width", self.window_width),
            ("spacing", self.spacing),
            ("rf_wavelength", self.rf_wavelength),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !self.first_center.is_finite() {
            return Err(invalid("first_center must be finite"));
        }
        if self.channel_count < 2 {
            return Err(invalid(format!(
                "need at least 2 channels, got {}",
                self.channel_count
            )));
        }
        if self.grid_points_per_rf_wavelength < 2 {
            return Err(invalid("grid_points_per_rf_wavelength must be >= 2"));
        }
        let tol = 1e-9 * self.cell_length;
        for j in 0..self.channel_count {
            let (a, b) = self.window_bounds(j);
            if a < -tol || b > self.cell_length + tol {
                return Err(IseError::WindowOutOfCell {
                    channel: j + 1,
                    start: a,
                    end: b,
                    cell_start: 0.0,
                    cell_end: self.cell_length,
                });
            }
        }
        Ok(())
    }

    /// Centre of window `j` (0-based).
    pub fn center(&self, j: usize) -> f64 {
        self.first_center + j as f64 * self.spacing
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.channel_count).map(|j| self.center(j)).collect()
    }

    pub fn window_bounds(&self, j: usize) -> (f64, f64) {
        let c = self.center(j);
        (c - self.window_width / 2.0, c + self.window_width / 2.0)
    }

    pub fn grid_intervals(&self) -> usize {
        let n = (self.cell_length / self.rf_wavelength * self.grid_points_per_rf_wavelength as f64
            - 1e-9)
            .ceil();
        (n as usize).max(2)
    }

    /// Uniform spatial grid on [0, L], endpoints included.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_intervals();
        let h = self.cell_length / n as f64;
        (0..=n).map(|i| i as f64 * h).collect()
    }

    pub fn sampling_report(&self) -> SamplingReport {
        check_sampling(self, self.rf_wavelength)
    }
}

/// Absorption coefficient sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAbsorption {
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
}

impl SampledAbsorption {
    pub fn from_fn(geometry: &SensorGeometry, f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let positions = geometry.grid();
        let values = positions.iter().map(|&x| f(x)).collect::<Result<_>>()?;
        Ok(Self { positions, values })
    }

    pub fn exact(params: &AtomicParams, scene: &RfScene, geometry: &SensorGeometry) -> Result<Self> {
        Self::from_fn(geometry, |x| physics::absorption_exact(params, scene, x))
    }

    pub fn linearized(model: &LinearizedAbsorption, geometry: &SensorGeometry) -> Result<Self> {
        Self::from_fn(geometry, |x| Ok(model.at(x)))
    }

    fn step(&self) -> Result<f64> {
        uniform_step(&self.positions)
    }

    /// Running trapezoid integral, starting at 0.
    pub fn cumulative_integral(&self) -> Result<Vec<f64>> {
        let h = self.step()?;
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(acc);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        Ok(out)
    }
}

fn uniform_step(positions: &[f64]) -> Result<f64> {
    if positions.len() < 3 {
        return Err(invalid("sampled profile needs at least 3 grid points"));
    }
    let h = (positions[positions.len() - 1] - positions[0]) / (positions.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(invalid("grid positions must be increasing"));
    }
    Ok(h)
}

/// Probe power and fluorescence along the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FluorescenceProfile {
    pub positions: Vec<f64>,
    pub probe_power: Vec<f64>,
    pub fluorescence: Vec<f64>,
    pub kappa: f64,
}

/// Beer-Lambert propagation: P(x) = P_in exp(-int_0^x alpha).
pub fn propagate_probe(
    alpha: &SampledAbsorption,
    input_power: f64,
    kappa: f64,
) -> Result<FluorescenceProfile> {
    if !(input_power.is_finite() && input_power > 0.0) {
        return Err(invalid(format!("input power must be > 0, got {input_power}")));
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(invalid(format!("kappa must be > 0, got {kappa}")));
    }
    let optical_depth = alpha.cumulative_integral()?;
    let probe_power: Vec<f64> = optical_depth
        .iter()
        .map(|d| input_power * (-d).exp())
        .collect();
    let fluorescence = probe_power.iter().map(|p| kappa * p).collect();
    Ok(FluorescenceProfile {
        positions: alpha.positions.clone(),
        probe_power,
        fluorescence,
        kappa,
    })
}

/// alpha(x) = -d/dx ln P_f(x), second-order differences throughout.
pub fn recover_alpha(profile: &FluorescenceProfile) -> Result<SampledAbsorption> {
    let h = uniform_step(&profile.positions)?;
    let logs: Vec<f64> = profile
        .fluorescence
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value > 0.0 && value.is_finite() {
                Ok(value.ln())
            } else {
                Err(IseError::NonPositiveFluorescence { index, value })
            }
        })
        .collect::<Result<_>>()?;
    let n = logs.len();
    let mut values = vec![0.0; n];
    values[0] = -(-3.0 * logs[0] + 4.0 * logs[1] - logs[2]) / (2.0 * h);
    for i in 1..n - 1 {
        values[i] = -(logs[i + 1] - logs[i - 1]) / (2.0 * h);
    }
    values[n - 1] = -(3.0 * logs[n - 1] - 4.0 * logs[n - 2] + logs[n - 3]) / (2.0 * h);
    Ok(SampledAbsorption {
        positions: profile.positions.clone(),
        values,
    })
}

/// Window integrals y_j = int w_j(x) alpha(x) dx of the piecewise-linear
/// interpolant (the composite trapezoid rule when edges fall on grid nodes).
pub fn channel_measurements(alpha: &SampledAbsorption, geometry: &SensorGeometry) -> Result<Vec<f64>> {
    let h = alpha.step()?;
    let cum = alpha.cumulative_integral()?;
    let x0 = alpha.positions[0];
    let x_end = alpha.positions[alpha.positions.len() - 1];
    let n = alpha.values.len() - 1;
    let tol = 1e-9 * (x_end - x0);

    let integral_to = |t: f64| -> f64 {
        let u = ((t - x0) / h).clamp(0.0, n as f64);
        let i = (u.floor() as usize).min(n - 1);
        let r = (u - i as f64) * h;
        let v_i = alpha.values[i];
        let v_t = v_i + (alpha.values[i + 1] - v_i) * r / h;
        cum[i] + 0.5 * r * (v_i + v_t)
    };

    (0..geometry.channel_count)
        .map(|j| {
            let (a, b) = geometry.window_bounds(j);
            if a < x0 - tol || b > x_end + tol {
                return Err(IseError::WindowOutOfCell {
                    channel: j + 1,
                    start: a,
                    end: b,
                    cell_start: x0,
                    cell_end: x_end,
                });
            }
            Ok(integral_to(b) - integral_to(a))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementSource {
    #[default]
    AnalyticModel,
    SimulatedFluorescence,
}

/// Calibrated channel samples with their provenance and noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub geometry: SensorGeometry,
    pub noise_sigma: f64,
    pub rng_seed: Option<u64>,
    pub source: MeasurementSource,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>, geometry: SensorGeometry, source: MeasurementSource) -> Result<Self> {
        if values.len() != geometry.channel_count {
            return Err(IseError::LengthMismatch {
                expected: geometry.channel_count,
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            geometry,
            noise_sigma: 0.0,
            rng_seed: None,
            source,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "j,x_j_m,y_tilde")?;
        for (j, (x, y)) in self.geometry.centers().iter().zip(&self.values).enumerate() {
            writeln!(w, "{},{:.16e},{:.16e}", j + 1, x, y)?;
        }
        Ok(())
    }
}

/// Rows of a measurement CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn read_measurement_csv<R: BufRead>(r: R) -> Result<MeasurementRecord> {
    let rows = read_rows(r, &["j", "x_j_m", "y_tilde"])?;
    let mut out = MeasurementRecord {
        positions: Vec::with_capacity(rows.len()),
        values: Vec::with_capacity(rows.len()),
    };
    for (i, (row, fields)) in rows.into_iter().enumerate() {
        let j: usize = fields[0].parse().map_err(|_| IseError::Schema {
            row,
            message: format!("channel index {:?} is not a positive integer", fields[0]),
        })?;
        if j != i + 1 {
            return Err(IseError::Schema {
                row,
                message: format!("expected channel index {}, found {j}", i + 1),
            });
        }
        out.positions.push(parse_float(&fields[1], row, "x_j_m")?);
        out.values.push(parse_float(&fields[2], row, "y_tilde")?);
    }
    Ok(out)
}

impl FluorescenceProfile {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x_m,probe_power,fluorescence")?;
        for ((x, p), f) in self
            .positions
            .iter()
            .zip(&self.probe_power)
            .zip(&self.fluorescence)
        {
            writeln!(w, "{x:.16e},{p:.16e},{f:.16e}")?;
        }
        Ok(())
    }

    /// Reads a profile back; kappa is recovered from the first row.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_rows(r, &["x_m", "probe_power", "fluorescence"])?;
        let mut positions = Vec::with_capacity(rows.len());
        let mut probe_power = Vec::with_capacity(rows.len());
        let mut fluorescence = Vec::with_capacity(rows.len());
        for (row, fields) in rows {
            positions.push(parse_float(&fields[0], row, "x_m")?);
            let p = parse_float(&fields[1], row, "probe_power")?;
            if !(p > 0.0) {
                return Err(IseError::Schema {
                    row,
                    message: format!("probe_power must be > 0, got {p}"),
                });
            }
            probe_power.push(p);
            fluorescence.push(parse_float(&fields[2], row, "fluorescence")?);
        }
        if positions.is_empty() {
            return Err(IseError::Schema {
                row: 1,
                message: "no data rows".into(),
            });
        }
        let kappa = fluorescence[0] / probe_power[0];
        Ok(Self {
            positions,
            probe_power,
            fluorescence,
            kappa,
        })
    }
}

/// Splits a CSV body into (1-based line number, fields), checking the header.
fn read_rows<R: BufRead>(r: R, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = r.lines().enumerate();
    let io_err = |row: usize, e: std::io::Error| IseError::Schema {
        row,
        message: e.to_string(),
    };
    let (_, first) = lines.next().ok_or(IseError::Schema {
        row: 1,
        message: "missing header".into(),
    })?;
    let first = first.map_err(|e| io_err(1, e))?;
    let got: Vec<&str> = first.trim().split(',').map(str::trim).collect();
    if got != header {
        return Err(IseError::Schema {
            row: 1,
            message: format!("expected header {:?}, found {:?}", header.join(","), first.trim()),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line.map_err(|e| io_err(row, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != header.len() {
            return Err(IseError::Schema {
                row,
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        rows.push((row, fields));
    }
    Ok(rows)
}

fn parse_float(s: &str, row: usize, column: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IseError::Schema {
            row,
            message: format!("column {column}: {s:?} is not a finite number"),
        }),
    }
}

/// Subtract the LO-only window response alpha_DC * area.
pub fn calibrate(
    y: &[f64],
    geometry: &SensorGeometry,
    alpha_dc: f64,
    source: MeasurementSource,
) -> Result<MeasurementVector> {
    let area = geometry.window_width;
    MeasurementVector::new(
        y.iter().map(|v| v - alpha_dc * area).collect(),
        geometry.clone(),
        source,
    )
}

/// Fourier transform of a centred rectangle of width `ell`:
/// 2 sin(omega ell / 2) / omega.
pub fn window_transform(ell: f64, omega: f64) -> f64 {
    let z = omega * ell / 2.0;
    if z.abs() < 1e-4 {
        let z2 = z * z;
        ell * (1.0 - z2 / 6.0 + z2 * z2 / 120.0)
    } else {
        2.0 * z.sin() / omega
    }
}

/// Complex amplitudes b_i = A_i w0(dk_i) e^{-j dphi_i}.
pub fn sinusoid_coefficients(model: &LinearizedAbsorption, window_width: f64) -> Vec<Complex64> {
    model
        .amplitudes
        .iter()
        .zip(&model.spatial_frequencies)
        .zip(&model.phase_offsets)
        .map(|((a, dk), dphi)| Complex64::from_polar(a * window_transform(window_width, *dk), -dphi))
        .collect()
}

/// Re sum_i b_i e^{j dk_i x_j} at each centre.
pub fn sum_of_sinusoids(
    amplitudes: &[f64],
    spatial_frequencies: &[f64],
    phase_offsets: &[f64],
    window_width: f64,
    centers: &[f64],
) -> Vec<f64> {
    centers
        .iter()
        .map(|&x| {
            amplitudes
                .iter()
                .zip(spatial_frequencies)
                .zip(phase_offsets)
                .map(|((a, dk), dphi)| a * window_transform(window_width, *dk) * (dk * x - dphi).cos())
                .sum()
        })
        .collect()
}

/// Noise-free calibrated samples from the linearized closed form.
pub fn predicted_measurements(
    scene: &RfScene,
    geometry: &SensorGeometry,
    params: &AtomicParams,
) -> Result<MeasurementVector> {
    let model = LinearizedAbsorption::new(params, scene)?;
    predicted_from_model(&model, geometry)
}

pub fn predicted_from_model(
    model: &LinearizedAbsorption,
    geometry: &SensorGeometry,
) -> Result<MeasurementVector> {
    let values = sum_of_sinusoids(
        &model.amplitudes,
        &model.spatial_frequencies,
        &model.phase_offsets,
        geometry.window_width,
        &geometry.centers(),
    );
    MeasurementVector::new(values, geometry.clone(), MeasurementSource::AnalyticModel)
}

/// Intermediate products of the full readout chain.
#[derive(Debug, Clone)]
pub struct SimulatedReadout {
    pub alpha_exact: SampledAbsorption,
    pub profile: FluorescenceProfile,
    pub alpha_recovered: SampledAbsorption,
    pub raw: Vec<f64>,
    pub measurement: MeasurementVector,
}

/// Exact absorption → Beer-Lambert → fluorescence → log-derivative →
/// windows → calibration.
pub fn simulate_readout(
    params: &AtomicParams,
    scene: &RfScene,
    geometry: &SensorGeometry,
) -> Result<SimulatedReadout> {
    let alpha_exact = SampledAbsorption::exact(params, scene, geometry)?;
    let profile = propagate_probe(&alpha_exact, 1.0, 1.0)?;
    let alpha_recovered = recover_alpha(&profile)?;
    let raw = channel_measurements(&alpha_recovered, geometry)?;
    let dc = physics::alpha_dc(params, scene)?;
    let measurement = calibrate(&raw, geometry, dc, MeasurementSource::SimulatedFluorescence)?;
    Ok(SimulatedReadout {
        alpha_exact,
        profile,
        alpha_recovered,
        raw,
        measurement,
    })
}

/// Outcome of the spacing and window-width checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub rf_wavelength: f64,
    /// Δx ≤ λ/4.
    pub spacing_ok: bool,
    /// ℓ < λ/2.
    pub width_ok: bool,
    /// λ/4 − Δx (m); negative when aliasing is possible.
    pub spacing_margin: f64,
    /// λ/2 − ℓ (m); non-positive when a window null falls in band.
    pub width_margin: f64,
}

impl SamplingReport {
    pub fn compliant(&self) -> bool {
        self.spacing_ok && self.width_ok
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.spacing_ok {
            out.push(format!(
                "channel spacing exceeds lambda/4 by {:.3e} m: spatial frequencies may alias to false angles",
                -self.spacing_margin
            ));
        }
        if !self.width_ok {
            out.push(format!(
                "window width is not below lambda/2 (margin {:.3e} m): a window null lies in band and can hide targets",
                self.width_margin
            ));
        }
        out
    }
}

pub fn check_sampling(geometry: &SensorGeometry, rf_wavelength: f64) -> SamplingReport {
    let tol = 1e-12 * rf_wavelength;
    let spacing_margin = rf_wavelength / 4.0 - geometry.spacing;
    let width_margin = rf_wavelength / 2.0 - geometry.window_width;
    SamplingReport {
        rf_wavelength,
        spacing_ok: spacing_margin >= -tol,
        width_ok: width_margin > tol,
        spacing_margin,
        width_margin,
    }
}

/// Noise standard deviation for a per-sample SNR in dB, using the
/// population variance of the clean samples as signal power.
pub fn noise_sigma_for_snr(values: &[f64], snr_db: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(IseError::ZeroSignalPower);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let power = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(power > 0.0) {
        return Err(IseError::ZeroSignalPower);
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(invalid(format!("snr_db must be finite or +inf, got {snr_db}")));
    }
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Add i.i.d. N(0, sigma^2) to each sample, deterministically in `seed`.
pub fn gaussian_perturbation(values: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    values
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sigma * z
        })
        .collect()
}

pub fn add_noise(measurement: &MeasurementVector, snr_db: f64, seed: u64) -> Result<MeasurementVector> {
    let sigma = noise_sigma_for_snr(&measurement.values, snr_db)?;
    Ok(MeasurementVector {
        values: gaussian_perturbation(&measurement.values, sigma, seed),
        geometry: measurement.geometry.clone(),
        noise_sigma: sigma,
        rng_seed: Some(seed),
        source: measurement.source,
    })
}

/// int_0^L cos(dk x - dphi) dx, stable as dk → 0.
fn cosine_integral(dk: f64, dphi: f64, length: f64) -> f64 {
    (dk * length / 2.0 - dphi).cos() * window_transform(length, dk)
}

/// Whole-cell transmission exp(-y_1) for a single target under the
/// linearized model.
pub fn integrated_power_transmission(
    params: &AtomicParams,
    scene: &RfScene,
    cell_length: f64,
) -> Result<f64> {
    if scene.signals.len() != 1 {
        return Err(invalid(format!(
            "integrated-power readout needs exactly one target, got {}",
            scene.signals.len()
        )));
    }
    if !(cell_length > 0.0) {
        return Err(invalid("cell length must be > 0"));
    }
    let model = LinearizedAbsorption::new(params, scene)?;
    let y1 = model.alpha_dc * cell_length
        + model.amplitudes[0]
            * cosine_integral(model.spatial_frequencies[0], model.phase_offsets[0], cell_length);
    Ok((-y1).exp())
}

/// L sinc(dk L) = sin(dk L) / dk.
pub fn sinc_response(dk: f64, length: f64) -> f64 {
    let z = dk * length;
    if z.abs() < 1e-4 {
        let z2 = z * z;
        length * (1.0 - z2 / 6.0 + z2 * z2 / 120.0)
    } else {
        z.sin() / dk
    }
}

/// First positive non-trivial root of tan u = u (≈ 4.4934).
pub fn first_sinc_extremum() -> f64 {
    // sin u - u cos u changes sign once on (pi, 3pi/2)
    let g = |u: f64| u.sin() - u * u.cos();
    let (mut lo, mut hi) = (PI, 1.5 * PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Longest cell for which the whole-cell response is monotone in angle
/// when the LO arrives at end-fire: u1 λ / (4π).
pub fn monotonic_length_bound(rf_wavelength: f64) -> f64 {
    first_sinc_extremum() * rf_wavelength / (4.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::PlaneWave;

    fn lam() -> f64 {
        physics::SPEED_OF_LIGHT / 2.03e9
    }

    fn default_geometry() -> SensorGeometry {
        let l = lam();
        SensorGeometry::uniform(4.0 * l, l / 4.0, l / 4.0, l).unwrap()
    }

    fn two_target_scene(ratio: f64) -> RfScene {
        let lo = PlaneWave::new(0.014, 0.0, PI / 2.0);
        let sig = |deg: f64, ph: f64| PlaneWave::new(1.0, ph, f64::to_radians(deg));
        RfScene::new(lo, vec![sig(-30.0, 0.3), sig(45.0, 1.1)], 2.03e9)
            .unwrap()
            .with_lo_ratio(ratio)
            .unwrap()
    }

    fn constant(geometry: &SensorGeometry, v: f64) -> SampledAbsorption {
        SampledAbsorption::from_fn(geometry, |_| Ok(v)).unwrap()
    }

    #[test]
    fn uniform_layout_fills_cell() {
        let g = default_geometry();
        assert_eq!(g.channel_count, 16);
        let (_, end) = g.window_bounds(15);
        assert!((end - 4.0 * lam()).abs() < 1e-12);
        assert_eq!(g.grid().len(), 1025);
        assert!(SensorGeometry::new(1.0, 0.2, 0.05, 0.1, 4, 1.0).is_err());
        assert!(SensorGeometry::new(1.0, 0.2, 0.1, 0.1, 1, 1.0).is_err());
    }

    #[test]
    fn propagation_closed_forms() {
        let g = default_geometry();
        let p = propagate_probe(&constant(&g, 0.0), 2.5, 1.0).unwrap();
        assert!(p.probe_power.iter().all(|&v| v == 2.5));

        let a = 3.7;
        let p = propagate_probe(&constant(&g, a), 1.0, 1.0).unwrap();
        let expected = (-a * g.cell_length).exp();
        assert!((p.probe_power.last().unwrap() - expected).abs() / expected < 1e-8);
        assert!(p.probe_power.windows(2).all(|w| w[1] <= w[0]));
        assert!(propagate_probe(&constant(&g, a), 0.0, 1.0).is_err());
    }

    #[test]
    fn transmission_matches_quadrature_oracle() {
        let params = AtomicParams::rb_reference();
        let scene = two_target_scene(10.0);
        let g = default_geometry();
        let alpha = SampledAbsorption::exact(&params, &scene, &g).unwrap();
        let t = *propagate_probe(&alpha, 1.0, 1.0).unwrap().probe_power.last().unwrap();
        // composite Simpson at 16x the grid
        let n = 16 * g.grid_intervals();
        let h = g.cell_length / n as f64;
        let f = |x: f64| physics::absorption_exact(&params, &scene, x).unwrap();
        let mut s = f(0.0) + f(g.cell_length);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let oracle = (-(s * h / 3.0)).exp();
        assert!((t - oracle).abs() / oracle < 1e-6);
    }

    #[test]
    fn recover_alpha_constant_and_kappa() {
        let g = default_geometry();
        let p = propagate_probe(&constant(&g, 0.0), 1.0, 1.0).unwrap();
        assert!(recover_alpha(&p).unwrap().values.iter().all(|&v| v.abs() < 1e-12));

        let params = AtomicParams::rb_reference();
        let alpha = SampledAbsorption::exact(&params, &two_target_scene(10.0), &g).unwrap();
        let base = recover_alpha(&propagate_probe(&alpha, 1.0, 1.0).unwrap()).unwrap();
        for kappa in [0.1, 10.0] {
            let r = recover_alpha(&propagate_probe(&alpha, 1.0, kappa).unwrap()).unwrap();
            for (a, b) in r.values.iter().zip(&base.values) {
                assert!((a - b).abs() <= 1e-9 * b.abs());
            }
        }
    }

    #[test]
    fn recover_alpha_round_trip() {
        let params = AtomicParams::rb_reference();
        let g = default_geometry();
        let alpha = SampledAbsorption::exact(&params, &two_target_scene(10.0), &g).unwrap();
        let r = recover_alpha(&propagate_probe(&alpha, 1.0, 1.0).unwrap()).unwrap();
        for (a, b) in r.values.iter().zip(&alpha.values) {
            assert!((a - b).abs() / b < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn non_positive_fluorescence_rejected() {
        let g = default_geometry();
        let mut p = propagate_probe(&constant(&g, 1.0), 1.0, 1.0).unwrap();
        p.fluorescence[7] = 0.0;
        assert!(matches!(
            recover_alpha(&p),
            Err(IseError::NonPositiveFluorescence { index: 7, .. })
        ));
    }

    #[test]
    fn channel_measurements_constant_and_log_ratio() {
        let g = default_geometry();
        let y = channel_measurements(&constant(&g, 2.0), &g).unwrap();
        for v in &y {
            assert!((v - 2.0 * g.window_width).abs() < 1e-12);
        }

        let params = AtomicParams::rb_reference();
        let alpha = SampledAbsorption::exact(&params, &two_target_scene(10.0), &g).unwrap();
        let prof = propagate_probe(&alpha, 1.0, 1.0).unwrap();
        let y = channel_measurements(&alpha, &g).unwrap();
        let step = g.cell_length / g.grid_intervals() as f64;
        for j in 0..g.channel_count {
            let (a, b) = g.window_bounds(j);
            let ia = (a / step).round() as usize;
            let ib = (b / step).round() as usize;
            let lr = -(prof.probe_power[ib] / prof.probe_power[ia]).ln();
            assert!((y[j] - lr).abs() / y[j] < 1e-6);
        }
    }

    #[test]
    fn channel_measurements_single_cosine_closed_form() {
        let l = lam();
        let g = default_geometry().with_grid_resolution(40_000).unwrap();
        let (dk, dphi) = (0.8 * 2.0 * PI / l, 0.4);
        let alpha = SampledAbsorption::from_fn(&g, |x| Ok((dk * x - dphi).cos())).unwrap();
        let y = channel_measurements(&alpha, &g).unwrap();
        for (j, v) in y.iter().enumerate() {
            let (a, b) = g.window_bounds(j);
            let exact = ((dk * b - dphi).sin() - (dk * a - dphi).sin()) / dk;
            assert!((v - exact).abs() <= 1e-8 * exact.abs().max(1e-3 * g.window_width));
        }
    }

    #[test]
    fn window_outside_grid_rejected() {
        let g = default_geometry();
        let short = SampledAbsorption {
            positions: (0..=100).map(|i| i as f64 * g.cell_length / 200.0).collect(),
            values: vec![1.0; 101],
        };
        assert!(matches!(
            channel_measurements(&short, &g),
            Err(IseError::WindowOutOfCell { .. })
        ));
    }

    #[test]
    fn calibrate_nulls_lo_only_scene() {
        let params = AtomicParams::rb_reference();
        let scene = RfScene::new(PlaneWave::new(0.014, 0.0, PI / 2.0), vec![], 2.03e9).unwrap();
        let g = default_geometry();
        let out = simulate_readout(&params, &scene, &g).unwrap();
        for v in &out.measurement.values {
            assert!(v.abs() < 1e-8, "{v}");
        }
        let zero = vec![0.0; g.channel_count];
        let c = calibrate(&zero, &g, 0.0, MeasurementSource::AnalyticModel).unwrap();
        assert_eq!(c.values, zero);
        assert!(calibrate(&zero[1..], &g, 0.0, MeasurementSource::AnalyticModel).is_err());
    }

    #[test]
    fn predicted_matches_windowed_linear_model() {
        let params = AtomicParams::rb_reference();
        let scene = two_target_scene(20.0);
        let g = default_geometry().with_grid_resolution(40_000).unwrap();
        let model = LinearizedAbsorption::new(&params, &scene).unwrap();
        let pred = predicted_from_model(&model, &g).unwrap();
        let y = channel_measurements(&SampledAbsorption::linearized(&model, &g).unwrap(), &g).unwrap();
        let cal = calibrate(&y, &g, model.alpha_dc, MeasurementSource::AnalyticModel).unwrap();
        let scale = model.total_modulation_amplitude() * g.window_width;
        for (a, b) in pred.values.iter().zip(&cal.values) {
            assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn simulated_chain_tracks_prediction() {
        let params = AtomicParams::rb_reference();
        let scene = two_target_scene(50.0);
        let g = default_geometry();
        let sim = simulate_readout(&params, &scene, &g).unwrap();
        let pred = predicted_measurements(&scene, &g, &params).unwrap();
        let scale = pred.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in sim.measurement.values.iter().zip(&pred.values) {
            assert!((a - b).abs() < 0.05 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn window_transform_values() {
        let ell = 0.03;
        assert_eq!(window_transform(ell, 0.0), ell);
        assert!(window_transform(ell, 2.0 * PI / ell).abs() < 1e-17);
        assert!((window_transform(ell, PI / ell) - 2.0 * ell / PI).abs() < 1e-16);
        let w = 1e-3 / ell;
        let direct = 2.0 * (w * ell / 2.0).sin() / w;
        assert!((window_transform(ell, w) - direct).abs() < 1e-15);
    }

    #[test]
    fn sampling_flags() {
        let l = lam();
        let ok = default_geometry().sampling_report();
        assert!(ok.compliant());
        let alias = SensorGeometry::uniform(4.0 * l, l / 4.0, l / 2.0, l).unwrap();
        let r = check_sampling(&alias, l);
        assert!(!r.spacing_ok && r.width_ok);
        let wide = SensorGeometry::uniform(4.0 * l, l, l / 4.0, l).unwrap();
        let r = check_sampling(&wide, l);
        assert!(r.spacing_ok && !r.width_ok);
        assert_eq!(r.warnings().len(), 1);
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let g = default_geometry();
        let params = AtomicParams::rb_reference();
        let clean = predicted_measurements(&two_target_scene(20.0), &g, &params).unwrap();
        let same = add_noise(&clean, f64::INFINITY, 1).unwrap();
        assert_eq!(same.values, clean.values);

        let a = add_noise(&clean, 10.0, 42).unwrap();
        let b = add_noise(&clean, 10.0, 42).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.rng_seed, Some(42));

        let sigma = a.noise_sigma;
        let mut acc = 0.0;
        let mut n = 0usize;
        for seed in 0..(100_000 / g.channel_count + 1) as u64 {
            let noisy = gaussian_perturbation(&clean.values, sigma, seed);
            for (x, y) in noisy.iter().zip(&clean.values) {
                acc += (x - y).powi(2);
                n += 1;
            }
        }
        let var = acc / n as f64;
        assert!((var / sigma.powi(2) - 1.0).abs() < 0.02);

        let flat = MeasurementVector::new(vec![1.0; 16], g, MeasurementSource::AnalyticModel).unwrap();
        assert_eq!(add_noise(&flat, 10.0, 0), Err(IseError::ZeroSignalPower));
    }

    #[test]
    fn csv_round_trip_and_schema_errors() {
        let g = default_geometry();
        let params = AtomicParams::rb_reference();
        let m = predicted_measurements(&two_target_scene(20.0), &g, &params).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let rec = read_measurement_csv(&buf[..]).unwrap();
        assert_eq!(rec.values, m.values);
        assert_eq!(rec.positions, g.centers());

        let bad = b"j,x_j_m,y_tilde\n1,0.0,1.0\n2,0.1,abc\n";
        match read_measurement_csv(&bad[..]) {
            Err(IseError::Schema { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_measurement_csv(&b"a,b,c\n"[..]).is_err());

        let prof = propagate_probe(&constant(&g, 1.0), 1.0, 2.0).unwrap();
        let mut buf = Vec::new();
        prof.write_csv(&mut buf).unwrap();
        let back = FluorescenceProfile::read_csv(&buf[..]).unwrap();
        assert_eq!(back.fluorescence, prof.fluorescence);
        assert!((back.kappa - 2.0).abs() < 1e-15);
    }

    #[test]
    fn integrated_power_special_case() {
        let params = AtomicParams::rb_reference();
        let lo = PlaneWave::new(0.014, 0.0, PI / 2.0);
        // target co-directional with the LO: constant integrand
        let scene = RfScene::new(lo, vec![PlaneWave::new(0.0014, 0.0, PI / 2.0)], 2.03e9).unwrap();
        let model = LinearizedAbsorption::new(&params, &scene).unwrap();
        let length = 0.05;
        let t = integrated_power_transmission(&params, &scene, length).unwrap();
        let expected = (-(model.alpha_dc + model.amplitudes[0]) * length).exp();
        assert!((t - expected).abs() / expected < 1e-12);

        let u1 = first_sinc_extremum();
        assert!((u1.tan() - u1).abs() < 1e-9 && u1 > PI && u1 < 1.5 * PI);
        assert!((u1 - 4.493_409_457_909_064).abs() < 1e-12);
        let bound = monotonic_length_bound(lam());
        assert!((bound / lam() - 0.358).abs() < 1e-3);
        assert!((bound - 0.05287).abs() < 1e-4);
        assert_eq!(sinc_response(0.0, 0.2), 0.2);
        assert!((sinc_response(3.0, 0.2) - (0.6f64).sin() / 3.0).abs() < 1e-16);
    }

    #[test]
    fn transmission_monotonicity_threshold() {
        let params = AtomicParams::rb_reference();
        let lo = PlaneWave::new(0.014, 0.0, PI / 2.0);
        let sweep = |length: f64| -> Vec<f64> {
            (0..=1800)
                .map(|i| {
                    let th = (-90.0 + 0.1 * i as f64).to_radians();
                    let s = RfScene::new(lo, vec![PlaneWave::new(0.0014, 0.0, th)], 2.03e9).unwrap();
                    integrated_power_transmission(&params, &s, length).unwrap()
                })
                .collect()
        };
        let strictly_monotone = |t: &[f64]| {
            t.windows(2).all(|w| w[1] > w[0]) || t.windows(2).all(|w| w[1] < w[0])
        };
        assert!(strictly_monotone(&sweep(0.3 * lam())));
        assert!(!strictly_monotone(&sweep(0.5 * lam())));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn point_sampling_aliases(dk in -50.0..50.0f64, dphi in -3.0..3.0f64, q in -3i32..=3) {
                let dx = lam() / 4.0;
                let centers: Vec<f64> = (0..16).map(|j| j as f64 * dx).collect();
                let ell = 1e-9;
                let a = sum_of_sinusoids(&[1.0], &[dk], &[dphi], ell, &centers);
                let shifted = dk + 2.0 * PI * q as f64 / dx;
                let b = sum_of_sinusoids(&[1.0], &[shifted], &[dphi], ell, &centers);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() / ell < 1e-6);
                }
            }

            #[test]
            fn constant_absorption_gives_window_area(v in 0.0..100.0f64, width_frac in 0.05..0.45f64) {
                let l = lam();
                let g = SensorGeometry::uniform(4.0 * l, width_frac * l, l / 4.0, l).unwrap();
                let y = channel_measurements(&constant(&g, v), &g).unwrap();
                for yj in y {
                    prop_assert!((yj - v * g.window_width).abs() <= 1e-12 * (1.0 + v));
                }
            }

            #[test]
            fn noise_is_deterministic(seed in any::<u64>(), snr in -10.0..60.0f64) {
                let g = default_geometry();
                let params = AtomicParams::rb_reference();
                let clean = predicted_measurements(&two_target_scene(20.0), &g, &params).unwrap();
                let a = add_noise(&clean, snr, seed).unwrap();
                let b = add_noise(&clean, snr, seed).unwrap();
                prop_assert_eq!(a.values, b.values);
            }
        }
    }
}
