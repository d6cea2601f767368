//! Fisher information of the windowed sum-of-sinusoids model, the
//! nuisance-marginalized information on the beat wavenumbers, and the
//! resulting angle bound.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IseError, Result};
use crate::physics::{AtomicParams, LinearizedAbsorption, RfScene};
use crate::sensing::{self, SensorGeometry};

/// Angles closer than this to ±π/2 are treated as end-fire.
pub const END_FIRE_GUARD: f64 = std::f64::consts::FRAC_PI_2 - 1e-9;

/// Model parameters and noise covariance for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct FimInputs {
    pub geometry: SensorGeometry,
    pub spatial_frequencies: Vec<f64>,
    pub phase_offsets: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub noise_cov: DMatrix<f64>,
}

impl FimInputs {
    pub fn new(
        geometry: SensorGeometry,
        spatial_frequencies: Vec<f64>,
        phase_offsets: Vec<f64>,
        amplitudes: Vec<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n = spatial_frequencies.len();
        for len in [phase_offsets.len(), amplitudes.len()] {
            if len != n {
                return Err(IseError::LengthMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        let k = geometry.channel_count;
        if noise_cov.nrows() != k || noise_cov.ncols() != k {
            return Err(IseError::LengthMismatch {
                expected: k,
                actual: noise_cov.nrows(),
            });
        }
        if let Some(i) = amplitudes.iter().position(|a| *a == 0.0 || !a.is_finite()) {
            return Err(invalid(format!(
                "target {i} has zero or non-finite modulation amplitude; the FIM would be singular"
            )));
        }
        Ok(Self {
            geometry,
            spatial_frequencies,
            phase_offsets,
            amplitudes,
            noise_cov,
        })
    }

    /// Σ_y = σ² I.
    pub fn white(
        geometry: SensorGeometry,
        spatial_frequencies: Vec<f64>,
        phase_offsets: Vec<f64>,
        amplitudes: Vec<f64>,
        sigma: f64,
    ) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(IseError::SingularCovariance);
        }
        let k = geometry.channel_count;
        let cov = DMatrix::from_diagonal_element(k, k, sigma * sigma);
        Self::new(geometry, spatial_frequencies, phase_offsets, amplitudes, cov)
    }

    /// Linearized scene parameters with σ set from a per-sample SNR.
    pub fn from_scene(
        params: &AtomicParams,
        scene: &RfScene,
        geometry: &SensorGeometry,
        snr_db: f64,
    ) -> Result<Self> {
        let model = LinearizedAbsorption::new(params, scene)?;
        let clean = sensing::predicted_from_model(&model, geometry)?;
        let sigma = sensing::noise_sigma_for_snr(&clean.values, snr_db)?;
        Self::white(
            geometry.clone(),
            model.spatial_frequencies,
            model.phase_offsets,
            model.amplitudes,
            sigma,
        )
    }

    pub fn target_count(&self) -> usize {
        self.spatial_frequencies.len()
    }
}

/// Window integrals of cos, sin and -x sin of (Δk x − Δφ) for every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CstVectors {
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

/// 2 ∫_0^h u sin(dk u) du, with a series for small dk h.
fn odd_moment(dk: f64, h: f64) -> f64 {
    let z = dk * h;
    if z.abs() < 1e-3 {
        let z2 = z * z;
        2.0 * h.powi(3) * dk / 3.0 * (1.0 - z2 / 10.0 + z2 * z2 / 280.0)
    } else {
        2.0 * (z.sin() - z * z.cos()) / (dk * dk)
    }
}

/// Closed-form c, s, t written about each window centre.
pub fn cst_vectors(geometry: &SensorGeometry, dk: f64, dphi: f64) -> CstVectors {
    let h = geometry.window_width / 2.0;
    let w = sensing::window_transform(geometry.window_width, dk);
    let g = odd_moment(dk, h);
    let mut out = CstVectors {
        c: Vec::with_capacity(geometry.channel_count),
        s: Vec::with_capacity(geometry.channel_count),
        t: Vec::with_capacity(geometry.channel_count),
    };
    for m in geometry.centers() {
        let psi = dk * m - dphi;
        let (sp, cp) = psi.sin_cos();
        out.c.push(w * cp);
        out.s.push(w * sp);
        out.t.push(-m * w * sp - g * cp);
    }
    out
}

/// Composite Simpson evaluation of the same integrals.
pub fn cst_vectors_quadrature(
    geometry: &SensorGeometry,
    dk: f64,
    dphi: f64,
    intervals: usize,
) -> CstVectors {
    let n = intervals.max(2) + intervals % 2;
    let mut out = CstVectors {
        c: Vec::new(),
        s: Vec::new(),
        t: Vec::new(),
    };
    for j in 0..geometry.channel_count {
        let (a, b) = geometry.window_bounds(j);
        let h = (b - a) / n as f64;
        let (mut c, mut s, mut t) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = a + i as f64 * h;
            let wgt = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let (sp, cp) = (dk * x - dphi).sin_cos();
            c += wgt * cp;
            s += wgt * sp;
            t -= wgt * x * sp;
        }
        out.c.push(c * h / 3.0);
        out.s.push(s * h / 3.0);
        out.t.push(t * h / 3.0);
    }
    out
}

/// Mean of the calibrated measurements, Σ_i 𝒜_i c_i.
pub fn mean_vector(inputs: &FimInputs) -> DVector<f64> {
    let mut mu = DVector::zeros(inputs.geometry.channel_count);
    for i in 0..inputs.target_count() {
        let v = cst_vectors(&inputs.geometry, inputs.spatial_frequencies[i], inputs.phase_offsets[i]);
        mu += DVector::from_vec(v.c) * inputs.amplitudes[i];
    }
    mu
}

/// K × 3N Jacobian with columns ordered (Δk..., Δφ..., 𝒜...).
pub fn mean_jacobian(inputs: &FimInputs) -> DMatrix<f64> {
    let n = inputs.target_count();
    let k = inputs.geometry.channel_count;
    let mut jac = DMatrix::zeros(k, 3 * n);
    for i in 0..n {
        let v = cst_vectors(&inputs.geometry, inputs.spatial_frequencies[i], inputs.phase_offsets[i]);
        let a = inputs.amplitudes[i];
        for r in 0..k {
            jac[(r, i)] = a * v.t[r];
            jac[(r, n + i)] = a * v.s[r];
            jac[(r, 2 * n + i)] = v.c[r];
        }
    }
    jac
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for r in 0..m.nrows() {
        for c in 0..r {
            if (m[(r, c)] - m[(c, r)]).abs() > 1e-12 * scale {
                return Err(IseError::SingularCovariance);
            }
        }
    }
    Ok(())
}

/// Jᵀ Σ⁻¹ J through a Cholesky factor of Σ.
pub fn fisher_information(jacobian: &DMatrix<f64>, noise_cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if noise_cov.nrows() != jacobian.nrows() || !noise_cov.is_square() {
        return Err(IseError::LengthMismatch {
            expected: jacobian.nrows(),
            actual: noise_cov.nrows(),
        });
    }
    check_symmetric(noise_cov)?;
    let chol = noise_cov
        .clone()
        .cholesky()
        .ok_or(IseError::SingularCovariance)?;
    let whitened = chol
        .l()
        .solve_lower_triangular(jacobian)
        .ok_or(IseError::SingularCovariance)?;
    let fim = whitened.transpose() * &whitened;
    // symmetrize away rounding
    Ok((&fim + fim.transpose()) * 0.5)
}

/// Fisher information assembled block by block from inner products of the
/// c, s, t vectors (white noise only).
pub fn fisher_information_blocks(inputs: &FimInputs, sigma: f64) -> DMatrix<f64> {
    let n = inputs.target_count();
    let vecs: Vec<CstVectors> = (0..n)
        .map(|i| cst_vectors(&inputs.geometry, inputs.spatial_frequencies[i], inputs.phase_offsets[i]))
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let a = &inputs.amplitudes;
    let inv = 1.0 / (sigma * sigma);
    let mut fim = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for l in 0..n {
            let (vi, vl) = (&vecs[i], &vecs[l]);
            let aa = a[i] * a[l];
            fim[(i, l)] = aa * dot(&vi.t, &vl.t) * inv;
            fim[(i, n + l)] = aa * dot(&vi.t, &vl.s) * inv;
            fim[(i, 2 * n + l)] = a[i] * dot(&vi.t, &vl.c) * inv;
            fim[(n + i, l)] = aa * dot(&vi.s, &vl.t) * inv;
            fim[(n + i, n + l)] = aa * dot(&vi.s, &vl.s) * inv;
            fim[(n + i, 2 * n + l)] = a[i] * dot(&vi.s, &vl.c) * inv;
            fim[(2 * n + i, l)] = a[l] * dot(&vi.c, &vl.t) * inv;
            fim[(2 * n + i, n + l)] = a[l] * dot(&vi.c, &vl.s) * inv;
            fim[(2 * n + i, 2 * n + l)] = dot(&vi.c, &vl.c) * inv;
        }
    }
    fim
}

/// Schur complement of the nuisance block: information on the first `n`
/// parameters after marginalizing the rest.
pub fn effective_fim(fim: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let total = fim.nrows();
    if !fim.is_square() || n > total {
        return Err(invalid("effective FIM partition does not fit the matrix"));
    }
    let a = fim.view((0, 0), (n, n)).into_owned();
    if n == total {
        return Ok(a);
    }
    let m = total - n;
    let b = fim.view((0, n), (n, m)).into_owned();
    let d = fim.view((n, n), (m, m)).into_owned();
    let chol = d.cholesky().ok_or(IseError::SingularNuisanceBlock)?;
    let x = chol.solve(&b.transpose());
    let eff = a - b * x;
    Ok((&eff + eff.transpose()) * 0.5)
}

/// The angle bound diverges as cos θ → 0; checked before any matrix work so
/// an end-fire target is reported as such rather than as a singular block.
fn check_end_fire(angles: &[f64]) -> Result<()> {
    for (index, th) in angles.iter().enumerate() {
        if th.abs() >= END_FIRE_GUARD {
            return Err(IseError::EndFireSingularity {
                index,
                angle_deg: th.to_degrees(),
            });
        }
    }
    Ok(())
}

/// Angle-domain bound from the effective wavenumber information.
pub fn crlb_theta(
    effective: &DMatrix<f64>,
    angles: &[f64],
    wavenumber: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = angles.len();
    if effective.nrows() != n || effective.ncols() != n {
        return Err(IseError::LengthMismatch {
            expected: n,
            actual: effective.nrows(),
        });
    }
    check_end_fire(angles)?;
    let inv = effective
        .clone()
        .cholesky()
        .ok_or(IseError::SingularNuisanceBlock)?
        .inverse();
    let jd: Vec<f64> = angles.iter().map(|t| -wavenumber * t.cos()).collect();
    let cov = DMatrix::from_fn(n, n, |i, l| inv[(i, l)] / (jd[i] * jd[l]));
    let std = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    Ok((cov, std))
}

/// λ_max / λ_min of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrlbReport {
    pub angles: Vec<f64>,
    pub fim: DMatrix<f64>,
    pub effective_fim_dk: DMatrix<f64>,
    pub crlb_theta: DMatrix<f64>,
    pub per_target_std: Vec<f64>,
    pub condition_number: f64,
}

pub fn crlb_report(inputs: &FimInputs, angles: &[f64], wavenumber: f64) -> Result<CrlbReport> {
    let n = inputs.target_count();
    if angles.len() != n {
        return Err(IseError::LengthMismatch {
            expected: n,
            actual: angles.len(),
        });
    }
    check_end_fire(angles)?;
    let fim = fisher_information(&mean_jacobian(inputs), &inputs.noise_cov)?;
    let eff = effective_fim(&fim, n)?;
    let (cov, std) = crlb_theta(&eff, angles, wavenumber)?;
    Ok(CrlbReport {
        angles: angles.to_vec(),
        condition_number: condition_number(&eff),
        fim,
        effective_fim_dk: eff,
        crlb_theta: cov,
        per_target_std: std,
    })
}

/// Bound for a physical scene at a per-sample SNR.
pub fn scene_crlb(
    params: &AtomicParams,
    scene: &RfScene,
    geometry: &SensorGeometry,
    snr_db: f64,
) -> Result<CrlbReport> {
    check_end_fire(&scene.signal_angles())?;
    let inputs = FimInputs::from_scene(params, scene, geometry, snr_db)?;
    crlb_report(&inputs, &scene.signal_angles(), scene.wavenumber())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDto {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixDto {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbReportDto {
    pub angles_rad: Vec<f64>,
    pub angles_deg: Vec<f64>,
    pub fim: MatrixDto,
    pub effective_fim_dk: MatrixDto,
    pub crlb_theta: MatrixDto,
    pub per_target_std_rad: Vec<f64>,
    pub per_target_std_deg: Vec<f64>,
    pub condition_number: f64,
}

impl CrlbReport {
    pub fn to_dto(&self) -> CrlbReportDto {
        CrlbReportDto {
            angles_rad: self.angles.clone(),
            angles_deg: self.angles.iter().map(|a| a.to_degrees()).collect(),
            fim: (&self.fim).into(),
            effective_fim_dk: (&self.effective_fim_dk).into(),
            crlb_theta: (&self.crlb_theta).into(),
            per_target_std_rad: self.per_target_std.clone(),
            per_target_std_deg: self.per_target_std.iter().map(|s| s.to_degrees()).collect(),
            condition_number: self.condition_number,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_dto()).expect("plain data serializes")
    }

    pub fn write_std_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "target,theta_deg,std_deg")?;
        for (i, (t, s)) in self.angles.iter().zip(&self.per_target_std).enumerate() {
            writeln!(w, "{},{:.16e},{:.16e}", i + 1, t.to_degrees(), s.to_degrees())?;
        }
        Ok(())
    }
}
