//! Prony estimation: Hankel linear prediction, polynomial rooting, signal-root
//! selection and the map from spatial frequency back to angle.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IseError, Result};
use crate::sensing::MeasurementVector;

/// Accepted normalized residual |P(z)| / (1 + |z|^p) of a polynomial root.
pub const ROOT_RESIDUAL_BOUND: f64 = 1e-8;
/// Slack allowed on arcsin arguments before a DoA is flagged as clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderSelection {
    #[default]
    Fixed,
    /// Infer N from the Hankel singular values above `sv_threshold` × largest.
    SingularValueThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PronyConfig {
    pub model_order: usize,
    /// Number of targets; `None` requires singular-value order selection.
    pub target_count: Option<usize>,
    pub unit_circle_tolerance: f64,
    pub order_selection: OrderSelection,
    pub sv_threshold: f64,
}

impl PronyConfig {
    /// p = 2N, δ = 0.2.
    pub fn for_targets(n: usize) -> Self {
        Self {
            model_order: 2 * n,
            target_count: Some(n),
            unit_circle_tolerance: 0.2,
            order_selection: OrderSelection::Fixed,
            sv_threshold: 1e-3,
        }
    }

    pub fn with_order(mut self, p: usize) -> Self {
        self.model_order = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_order < 1 {
            return Err(invalid("model order must be >= 1"));
        }
        if !(self.unit_circle_tolerance > 0.0 && self.unit_circle_tolerance < 1.0) {
            return Err(invalid(format!(
                "unit-circle tolerance must lie in (0, 1), got {}",
                self.unit_circle_tolerance
            )));
        }
        match (self.order_selection, self.target_count) {
            (OrderSelection::Fixed, None) => {
                return Err(invalid("fixed order selection needs a target count"));
            }
            (_, Some(n)) if n == 0 || self.model_order < 2 * n => {
                return Err(invalid(format!(
                    "model order p = {} must be at least 2N = {} with N >= 1",
                    self.model_order,
                    2 * n
                )));
            }
            _ => {}
        }
        if self.order_selection == OrderSelection::SingularValueThreshold
            && !(self.sv_threshold > 0.0 && self.sv_threshold < 1.0)
        {
            return Err(invalid("sv_threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Wavenumber and LO angle needed to turn frequencies into angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub wavenumber: f64,
    pub lo_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    /// Positive beat wavenumbers (rad/m), ascending.
    pub spatial_frequencies: Vec<f64>,
    /// Angles (rad), in the same order as `spatial_frequencies`.
    pub doas: Vec<f64>,
    /// Selected positive-angle roots.
    pub roots: Vec<Complex64>,
    /// Every root of the characteristic polynomial.
    pub all_roots: Vec<Complex64>,
    pub lpc_coefficients: Vec<f64>,
    /// ||H a + y|| / ||y|| of the prediction system.
    pub lpc_residual_norm: f64,
    pub rank_deficient: bool,
    pub clamped_flags: Vec<bool>,
    pub model_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub model_order: usize,
    pub target_count: usize,
    pub spatial_frequencies_rad_per_m: Vec<f64>,
    pub doas_rad: Vec<f64>,
    pub doas_deg: Vec<f64>,
    pub roots: Vec<[f64; 2]>,
    pub all_roots: Vec<[f64; 2]>,
    pub lpc_coefficients: Vec<f64>,
    pub lpc_residual_norm: f64,
    pub rank_deficient: bool,
    pub clamped_flags: Vec<bool>,
}

impl From<&EstimationResult> for EstimationReport {
    fn from(r: &EstimationResult) -> Self {
        let pairs = |v: &[Complex64]| v.iter().map(|z| [z.re, z.im]).collect();
        Self {
            model_order: r.model_order,
            target_count: r.doas.len(),
            spatial_frequencies_rad_per_m: r.spatial_frequencies.clone(),
            doas_rad: r.doas.clone(),
            doas_deg: r.doas.iter().map(|t| t.to_degrees()).collect(),
            roots: pairs(&r.roots),
            all_roots: pairs(&r.all_roots),
            lpc_coefficients: r.lpc_coefficients.clone(),
            lpc_residual_norm: r.lpc_residual_norm,
            rank_deficient: r.rank_deficient,
            clamped_flags: r.clamped_flags.clone(),
        }
    }
}

impl EstimationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&EstimationReport::from(self)).expect("plain data serializes")
    }
}

/// Forward linear-prediction system: row r holds y[p+r-1], ..., y[r] and the
/// right-hand side is -y[p+r].
pub fn build_hankel(y: &[f64], p: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = y.len();
    if p < 1 || k <= p {
        return Err(IseError::InsufficientSamples {
            samples: k,
            order: p,
        });
    }
    let rows = k - p;
    let h = DMatrix::from_fn(rows, p, |r, m| y[p + r - m - 1]);
    let rhs = DVector::from_fn(rows, |r, _| -y[p + r]);
    Ok((h, rhs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpcSolution {
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
    pub rank: usize,
    pub rank_deficient: bool,
    pub singular_values: Vec<f64>,
}

/// Minimum-norm least squares through the SVD.
pub fn solve_lpc(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<LpcSolution> {
    if h.nrows() == 0 || h.ncols() == 0 {
        return Err(invalid("empty prediction matrix"));
    }
    if h.nrows() != rhs.len() {
        return Err(IseError::LengthMismatch {
            expected: h.nrows(),
            actual: rhs.len(),
        });
    }
    let p = h.ncols();
    let svd = h.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let tol = (h.nrows().max(p) as f64) * f64::EPSILON * smax;
    let mut a = DVector::zeros(p);
    let mut rank = 0;
    for i in 0..s.len() {
        if s[i] > tol && s[i] > 0.0 {
            rank += 1;
            let coeff = u.column(i).dot(rhs) / s[i];
            a += v_t.row(i).transpose() * coeff;
        }
    }
    let resid = (h * &a - rhs).norm();
    let scale = rhs.norm();
    Ok(LpcSolution {
        coefficients: a.iter().cloned().collect(),
        residual_norm: if scale > 0.0 { resid / scale } else { resid },
        rank,
        rank_deficient: rank < p,
        singular_values: s.iter().cloned().collect(),
    })
}

fn horner(a: &[f64], z: Complex64) -> (Complex64, Complex64) {
    // monic z^p + a1 z^{p-1} + ... + ap and its derivative
    let mut val = Complex64::new(1.0, 0.0);
    let mut der = Complex64::new(0.0, 0.0);
    for &c in a {
        der = der * z + val;
        val = val * z + c;
    }
    (val, der)
}

fn normalized_residual(a: &[f64], z: Complex64) -> f64 {
    horner(a, z).0.norm() / (1.0 + z.norm().powi(a.len() as i32))
}

/// Roots of z^p + a_1 z^{p-1} + ... + a_p from companion-matrix eigenvalues,
/// each polished by Newton steps that are kept only if they help.
pub fn char_poly_roots(a: &[f64]) -> Result<Vec<Complex64>> {
    let p = a.len();
    if p == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|c| !c.is_finite()) {
        return Err(invalid("prediction coefficients must be finite"));
    }
    let companion = DMatrix::from_fn(p, p, |r, c| {
        if r == 0 {
            -a[c]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    let eig = companion.complex_eigenvalues();
    let mut roots = Vec::with_capacity(p);
    for z0 in eig.iter() {
        let mut z = *z0;
        let mut best = normalized_residual(a, z);
        for _ in 0..8 {
            if best == 0.0 {
                break;
            }
            let (val, der) = horner(a, z);
            if der.norm() == 0.0 {
                break;
            }
            let cand = z - val / der;
            let r = normalized_residual(a, cand);
            if r.is_finite() && r < best {
                z = cand;
                best = r;
            } else {
                break;
            }
        }
        if !(best < ROOT_RESIDUAL_BOUND) {
            return Err(IseError::RootfindingFailure { residual: best });
        }
        roots.push(z);
    }
    Ok(roots)
}

/// Smallest accepted |arg z| for K channels.
pub fn dc_guard(channel_count: usize) -> f64 {
    2.0 * PI / (4.0 * channel_count as f64)
}

/// Pick `n` positive-angle representatives of conjugate pairs closest to
/// the unit circle.
pub fn select_signal_roots(
    roots: &[Complex64],
    n: usize,
    tolerance: f64,
    angle_floor: f64,
) -> Result<Vec<Complex64>> {
    let candidates: Vec<Complex64> = roots
        .iter()
        .copied()
        .filter(|z| (z.norm() - 1.0).abs() <= tolerance && z.arg().abs() >= angle_floor)
        .collect();
    let mut used = vec![false; candidates.len()];
    let mut pairs: Vec<Complex64> = Vec::new();
    for i in 0..candidates.len() {
        let z = candidates[i];
        if used[i] || z.im <= 0.0 {
            continue;
        }
        let pair_tol = 1e-6 * (1.0 + z.norm());
        let partner = (0..candidates.len())
            .filter(|&j| !used[j] && j != i && candidates[j].im < 0.0)
            .map(|j| (j, (candidates[j] - z.conj()).norm()))
            .filter(|&(_, d)| d <= pair_tol)
            .min_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((j, _)) = partner {
            used[i] = true;
            used[j] = true;
            pairs.push(z);
        }
    }
    if pairs.len() < n {
        return Err(IseError::InsufficientSignalRoots {
            found: pairs.len(),
            needed: n,
        });
    }
    let dist = |z: &Complex64| (z.norm() - 1.0).abs();
    pairs.sort_by(|x, y| dist(x).total_cmp(&dist(y)));

    let mut chosen: Vec<Complex64> = Vec::with_capacity(n);
    let mut remaining = pairs;
    while chosen.len() < n {
        let best = dist(&remaining[0]);
        let tied: Vec<usize> = (0..remaining.len())
            .filter(|&i| dist(&remaining[i]) - best <= 1e-12)
            .collect();
        let separation = |z: &Complex64| {
            chosen
                .iter()
                .map(|c| (z.arg() - c.arg()).abs())
                .fold(f64::INFINITY, f64::min)
        };
        let pick = *tied
            .iter()
            .max_by(|&&a, &&b| separation(&remaining[a]).total_cmp(&separation(&remaining[b])))
            .unwrap();
        chosen.push(remaining.remove(pick));
    }
    Ok(chosen)
}

/// Δk = arg z / Δx.
pub fn frequencies_from_roots(roots: &[Complex64], spacing: f64) -> Vec<f64> {
    roots.iter().map(|z| z.arg() / spacing).collect()
}

/// θ = arcsin(sin θ0 − Δk/k); the flag is set when the argument leaves
/// [-1, 1] by more than [`CLAMP_TOLERANCE`].
pub fn doa_from_frequency(dk: f64, wavenumber: f64, lo_angle: f64) -> (f64, bool) {
    let arg = lo_angle.sin() - dk / wavenumber;
    let clamped = arg.abs() > 1.0 + CLAMP_TOLERANCE;
    (arg.clamp(-1.0, 1.0).asin(), clamped)
}

/// Target count from Hankel singular values (two per real sinusoid).
pub fn infer_target_count(singular_values: &[f64], threshold: f64) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let above = singular_values
        .iter()
        .filter(|&&s| s > threshold * smax)
        .count();
    above.div_ceil(2)
}

/// Full Prony pipeline on raw calibrated samples with channel spacing `spacing`.
pub fn estimate_from_samples(
    y: &[f64],
    spacing: f64,
    meta: SceneMeta,
    config: &PronyConfig,
) -> Result<EstimationResult> {
    config.validate()?;
    if !(spacing > 0.0) {
        return Err(invalid("channel spacing must be > 0"));
    }
    if !(meta.wavenumber > 0.0) {
        return Err(invalid("wavenumber must be > 0"));
    }
    let p = config.model_order;
    let (h, rhs) = build_hankel(y, p)?;
    let lpc = solve_lpc(&h, &rhs)?;
    let n = match config.order_selection {
        OrderSelection::Fixed => config.target_count.expect("validated"),
        OrderSelection::SingularValueThreshold => {
            let n = infer_target_count(&lpc.singular_values, config.sv_threshold);
            if n == 0 || 2 * n > p {
                return Err(IseError::InsufficientSignalRoots {
                    found: n,
                    needed: n.max(1),
                });
            }
            n
        }
    };
    let all_roots = char_poly_roots(&lpc.coefficients)?;
    let mut roots = select_signal_roots(
        &all_roots,
        n,
        config.unit_circle_tolerance,
        dc_guard(y.len()),
    )?;
    roots.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    let spatial_frequencies = frequencies_from_roots(&roots, spacing);
    let (doas, clamped_flags) = spatial_frequencies
        .iter()
        .map(|&dk| doa_from_frequency(dk, meta.wavenumber, meta.lo_angle))
        .unzip();
    Ok(EstimationResult {
        spatial_frequencies,
        doas,
        roots,
        all_roots,
        lpc_coefficients: lpc.coefficients,
        lpc_residual_norm: lpc.residual_norm,
        rank_deficient: lpc.rank_deficient,
        clamped_flags,
        model_order: p,
    })
}

pub fn estimate_doa(
    measurement: &MeasurementVector,
    meta: SceneMeta,
    config: &PronyConfig,
) -> Result<EstimationResult> {
    estimate_from_samples(
        &measurement.values,
        measurement.geometry.spacing,
        meta,
        config,
    )
}
