//! Inverse lighting on known geometry.
//!
//! All fits minimise the weight-normalised squared residual
//! `Σ w (I/a - row·l)² / Σ w`, optionally plus a ridge term `λ‖l - prior‖²`.
//! With a zero prior this is plain ridge regression; [`biased_estimate`]
//! instead pulls toward an ambient prior and divides by a fixed reference
//! albedo, which is what makes its DC-normalized output depend on skin tone.

use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::image_io::decode_value;
use crate::sh_lighting::{shading_row, Encoding, ImagePlane, NormalMap, ShCoeffs, UnitNormal, SH_COUNT};

type Mat9 = SMatrix<f64, SH_COUNT, SH_COUNT>;
type Vec9 = SVector<f64, SH_COUNT>;

/// Reciprocal condition number below which an unregularised fit is singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadedSample {
    pub normal: UnitNormal,
    pub intensity: f64,
    pub weight: f64,
}

impl ShadedSample {
    pub fn new(normal: UnitNormal, intensity: f64) -> Self {
        Self {
            normal,
            intensity,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub bit_depth: u32,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            bit_depth: 8,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.bit_depth) {
            return Err(precondition(format!("bit depth {} outside 1..=32", self.bit_depth)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(precondition(format!("noise sigma {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub ridge_lambda: f64,
    /// Albedo the estimator assumes for every subject.
    pub reference_albedo: f64,
    /// Light the ridge term pulls toward.
    pub prior_light: ShCoeffs,
    pub sensor: SensorModel,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 1e-3,
            reference_albedo: 0.7,
            prior_light: ShCoeffs::ambient(1.0),
            sensor: SensorModel::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return Err(precondition(format!("ridge lambda {}", self.ridge_lambda)));
        }
        if !(self.reference_albedo > 0.0 && self.reference_albedo <= 1.0) {
            return Err(precondition(format!("reference albedo {} outside (0, 1]", self.reference_albedo)));
        }
        self.sensor.validate()
    }
}

fn normal_system(samples: &[ShadedSample], albedo: f64) -> Result<(Mat9, Vec9)> {
    if samples.len() < SH_COUNT {
        return Err(precondition(format!(
            "{} samples cannot determine {SH_COUNT} coefficients",
            samples.len()
        )));
    }
    if !(albedo.is_finite() && albedo > 0.0) {
        return Err(precondition(format!("albedo {albedo} must be positive")));
    }
    let mut gram = Mat9::zeros();
    let mut rhs = Vec9::zeros();
    let mut total = 0.0;
    for s in samples {
        if !(s.intensity.is_finite() && s.intensity >= 0.0 && s.weight.is_finite() && s.weight > 0.0) {
            return Err(precondition("sample intensity must be >= 0 and weight > 0"));
        }
        let row = Vec9::from(shading_row(s.normal));
        gram += s.weight * row * row.transpose();
        rhs += (s.weight * s.intensity / albedo) * row;
        total += s.weight;
    }
    Ok((gram / total, rhs / total))
}

fn solve_spd(a: Mat9, b: Vec9) -> Result<ShCoeffs> {
    let chol = a.cholesky().ok_or(Error::SingularFit(0.0))?;
    ShCoeffs::new(chol.solve(&b).into())
}

/// Unregularised weighted least-squares fit of `intensity / albedo`.
pub fn fit_sh_least_squares(samples: &[ShadedSample], albedo: f64) -> Result<ShCoeffs> {
    let (gram, rhs) = normal_system(samples, albedo)?;
    let eig = gram.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    let rcond = if max > 0.0 { min / max } else { 0.0 };
    if !(rcond > SINGULAR_RCOND) {
        return Err(Error::SingularFit(rcond));
    }
    solve_spd(gram, rhs)
}

/// Ridge fit shrinking toward zero.
pub fn fit_sh_ridge(samples: &[ShadedSample], albedo: f64, lambda: f64) -> Result<ShCoeffs> {
    fit_sh_map(samples, albedo, lambda, &ShCoeffs::ZERO)
}

/// Ridge fit shrinking toward `prior`. `lambda = 0` is the least-squares fit.
pub fn fit_sh_map(samples: &[ShadedSample], albedo: f64, lambda: f64, prior: &ShCoeffs) -> Result<ShCoeffs> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(precondition(format!("ridge lambda {lambda} must be >= 0")));
    }
    if lambda == 0.0 {
        return fit_sh_least_squares(samples, albedo);
    }
    let (gram, rhs) = normal_system(samples, albedo)?;
    let prior = Vec9::from(prior.to_array());
    solve_spd(gram + Mat9::identity() * lambda, rhs + prior * lambda)
}

/// Simulates a camera: gamma-compress (1/2.2), add seeded Gaussian noise,
/// clamp to [0, 1] and quantize to `2^bit_depth - 1` steps.
pub fn simulate_capture(img: &ImagePlane, sensor: &SensorModel) -> Result<ImagePlane> {
    const GAMMA: f64 = crate::image_io::DEFAULT_GAMMA;
    sensor.validate()?;
    if img.encoding() != Encoding::Linear {
        return Err(precondition("simulate_capture expects a linear image"));
    }
    if img.pixels().iter().any(|&v| v < 0.0) {
        return Err(precondition("negative radiance"));
    }
    let levels = ((1u64 << sensor.bit_depth) - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(sensor.seed);
    let noise = Normal::new(0.0, sensor.noise_sigma).map_err(|e| precondition(e.to_string()))?;
    let px = img
        .pixels()
        .iter()
        .map(|&v| {
            let mut e = v.powf(1.0 / GAMMA);
            if sensor.noise_sigma > 0.0 {
                e += noise.sample(&mut rng);
            }
            (e.clamp(0.0, 1.0) * levels).round() / levels
        })
        .collect();
    Ok(img.with_pixels(px, Encoding::GammaEncoded(GAMMA)))
}

/// Silhouette samples from a captured image. Pixels at either end of the
/// encoded range are clipped and carry no usable shading, so they are skipped.
pub fn samples_from_image(img: &ImagePlane, normals: &NormalMap) -> Result<Vec<ShadedSample>> {
    img.check_dims(normals.width(), normals.height())?;
    let Encoding::GammaEncoded(gamma) = img.encoding() else {
        return Err(precondition("expected a gamma-encoded image"));
    };
    Ok(img
        .pixels()
        .iter()
        .zip(normals.normals())
        .filter_map(|(&v, n)| match n {
            Some(n) if v > 0.0 && v < 1.0 => Some(ShadedSample::new(*n, decode_value(v, gamma))),
            _ => None,
        })
        .collect())
}

/// Fits a light to a captured image assuming a known albedo.
pub fn estimate_light(
    img: &ImagePlane,
    normals: &NormalMap,
    albedo: f64,
    lambda: f64,
    prior: &ShCoeffs,
) -> Result<ShCoeffs> {
    let samples = samples_from_image(img, normals)?;
    fit_sh_map(&samples, albedo, lambda, prior)
}

/// Estimator with a fixed light-skin albedo prior: every image is explained
/// with `cfg.reference_albedo`, so darker subjects receive dimmer lights.
pub fn biased_estimate(img: &ImagePlane, normals: &NormalMap, cfg: &EstimatorConfig) -> Result<ShCoeffs> {
    cfg.validate()?;
    estimate_light(img, normals, cfg.reference_albedo, cfg.ridge_lambda, &cfg.prior_light)
}
