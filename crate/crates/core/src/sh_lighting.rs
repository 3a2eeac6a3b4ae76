//! Real second-order spherical harmonics, Lambertian irradiance shading and
//! the forward renderer `image = albedo × shading`.
//!
//! Coefficient ordering is frozen as
//! `(Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22)`; every serialized
//! coefficient file uses it.

use std::f64::consts::PI;
use std::ops::{Add, Index, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::par;

pub const SH_COUNT: usize = 9;

/// `1 / (2 sqrt(pi))`
pub const Y00: f64 = 0.282_094_791_773_878_14;
/// `sqrt(3 / (4 pi))`
pub const Y1: f64 = 0.488_602_511_902_919_9;
/// `sqrt(15 / (4 pi))`
pub const Y2_XY: f64 = 1.092_548_430_592_079_2;
/// `sqrt(5 / (16 pi))`
pub const Y20: f64 = 0.315_391_565_252_520_05;
/// `sqrt(15 / (16 pi))`
pub const Y22: f64 = 0.546_274_215_296_039_6;

/// Lambertian convolution factor per band.
pub const BAND_ATTENUATION: [f64; 3] = [PI, 2.0 * PI / 3.0, PI / 4.0];

const UNIT_TOLERANCE: f64 = 1e-9;

/// Band index of coefficient `i`.
pub const fn band_of(i: usize) -> usize {
    match i {
        0 => 0,
        1..=3 => 1,
        _ => 2,
    }
}

/// Attenuation applied to coefficient `i` when convolving radiance to irradiance.
pub fn attenuation(i: usize) -> f64 {
    BAND_ATTENUATION[band_of(i)]
}

/// Nine SH coefficients of a monochrome environment light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct ShCoeffs([f64; SH_COUNT]);

impl ShCoeffs {
    pub const ZERO: ShCoeffs = ShCoeffs([0.0; SH_COUNT]);

    pub fn new(c: [f64; SH_COUNT]) -> Result<Self> {
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("coefficient {i} is not finite")));
        }
        Ok(Self(c))
    }

    /// Pure ambient light with the given DC term.
    pub fn ambient(dc: f64) -> Self {
        let mut c = [0.0; SH_COUNT];
        c[0] = dc;
        Self(c)
    }

    pub fn dc(&self) -> f64 {
        self.0[0]
    }

    pub fn as_array(&self) -> &[f64; SH_COUNT] {
        &self.0
    }

    pub fn to_array(self) -> [f64; SH_COUNT] {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.map(|v| v * k))
    }
}

impl TryFrom<[f64; SH_COUNT]> for ShCoeffs {
    type Error = Error;
    fn try_from(c: [f64; SH_COUNT]) -> Result<Self> {
        Self::new(c)
    }
}

impl From<ShCoeffs> for [f64; SH_COUNT] {
    fn from(l: ShCoeffs) -> Self {
        l.0
    }
}

impl Index<usize> for ShCoeffs {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for ShCoeffs {
    type Output = ShCoeffs;
    fn add(self, rhs: ShCoeffs) -> ShCoeffs {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(rhs.0) {
            *a += b;
        }
        ShCoeffs(c)
    }
}

impl Mul<ShCoeffs> for f64 {
    type Output = ShCoeffs;
    fn mul(self, rhs: ShCoeffs) -> ShCoeffs {
        rhs.scaled(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitNormal {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitNormal {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = x * x + y * y + z * z;
        if !n2.is_finite() || (n2 - 1.0).abs() > UNIT_TOLERANCE {
            return Err(precondition(format!(
                "normal ({x}, {y}, {z}) is not unit length (|n|^2 = {n2})"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn normalize(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(precondition("cannot normalize a zero or non-finite vector"));
        }
        Self::new(x / n, y / n, z / n)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
}

/// Per-pixel normals; `None` outside the silhouette. Row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Option<UnitNormal>>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, normals: Vec<Option<UnitNormal>>) -> Result<Self> {
        if normals.len() != width * height {
            return Err(precondition(format!(
                "{} normals for a {width}x{height} map",
                normals.len()
            )));
        }
        Ok(Self {
            width,
            height,
            normals,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn normals(&self) -> &[Option<UnitNormal>] {
        &self.normals
    }
    pub fn get(&self, x: usize, y: usize) -> Option<UnitNormal> {
        self.normals[y * self.width + x]
    }
    pub fn silhouette_len(&self) -> usize {
        self.normals.iter().filter(|n| n.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Encoding {
    Linear,
    GammaEncoded(f64),
}

/// Single-channel floating point image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    encoding: Encoding,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, encoding: Encoding) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(precondition(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("pixel {i} is not finite")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            encoding,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64, encoding: Encoding) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
            encoding,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
    pub fn encoding(&self) -> Encoding {
        self.encoding
    }
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub(crate) fn with_pixels(&self, pixels: Vec<f64>, encoding: Encoding) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            width: self.width,
            height: self.height,
            pixels,
            encoding,
        }
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch {
                expected_w: width,
                expected_h: height,
                got_w: self.width,
                got_h: self.height,
            });
        }
        Ok(())
    }
}

/// Three planes sharing size and encoding, in (R, G, B) order.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    planes: [ImagePlane; 3],
}

impl RgbImage {
    pub fn new(r: ImagePlane, g: ImagePlane, b: ImagePlane) -> Result<Self> {
        g.check_dims(r.width, r.height)?;
        b.check_dims(r.width, r.height)?;
        if g.encoding != r.encoding || b.encoding != r.encoding {
            return Err(Error::Validation("channel encodings differ".into()));
        }
        Ok(Self { planes: [r, g, b] })
    }

    pub fn from_planes(planes: [ImagePlane; 3]) -> Result<Self> {
        let [r, g, b] = planes;
        Self::new(r, g, b)
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }
    pub fn height(&self) -> usize {
        self.planes[0].height
    }
    pub fn encoding(&self) -> Encoding {
        self.planes[0].encoding
    }
    pub fn planes(&self) -> &[ImagePlane; 3] {
        &self.planes
    }
    pub fn red(&self) -> &ImagePlane {
        &self.planes[0]
    }
    pub fn map_planes(&self, f: impl Fn(&ImagePlane) -> ImagePlane) -> Self {
        Self {
            planes: [f(&self.planes[0]), f(&self.planes[1]), f(&self.planes[2])],
        }
    }
}

/// Evaluates the nine real SH basis functions at `n`.
pub fn sh_basis(n: UnitNormal) -> [f64; SH_COUNT] {
    let UnitNormal { x, y, z } = n;
    [
        Y00,
        Y1 * y,
        Y1 * z,
        Y1 * x,
        Y2_XY * x * y,
        Y2_XY * y * z,
        Y20 * (3.0 * z * z - 1.0),
        Y2_XY * x * z,
        Y22 * (x * x - y * y),
    ]
}

/// Basis row scaled by the band attenuation: shading is `row · l`.
pub fn shading_row(n: UnitNormal) -> [f64; SH_COUNT] {
    let mut row = sh_basis(n);
    for (i, v) in row.iter_mut().enumerate() {
        *v *= attenuation(i);
    }
    row
}

/// Lambertian irradiance of light `l` at normal `n` (may be negative).
pub fn irradiance_shading(l: &ShCoeffs, n: UnitNormal) -> f64 {
    shading_row(n)
        .iter()
        .zip(l.as_array())
        .map(|(a, b)| a * b)
        .sum()
}

/// Renders `albedo × max(0, shading)` over the silhouette; zero elsewhere.
pub fn render(normals: &NormalMap, albedo: &ImagePlane, l: &ShCoeffs) -> Result<ImagePlane> {
    albedo.check_dims(normals.width, normals.height)?;
    if albedo.encoding != Encoding::Linear {
        return Err(precondition("albedo must be linear"));
    }
    if albedo.pixels.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(precondition("albedo values must lie in [0, 1]"));
    }
    let idx: Vec<usize> = (0..albedo.pixels.len()).collect();
    let pixels = par::map_slice(&idx, |&i| match normals.normals[i] {
        Some(n) => albedo.pixels[i] * irradiance_shading(l, n).max(0.0),
        None => 0.0,
    });
    Ok(albedo.with_pixels(pixels, Encoding::Linear))
}

/// Renders each channel of a linear RGB albedo with the same light.
pub fn render_rgb(normals: &NormalMap, albedo: &RgbImage, l: &ShCoeffs) -> Result<RgbImage> {
    let [r, g, b] = &albedo.planes;
    RgbImage::new(
        render(normals, r, l)?,
        render(normals, g, l)?,
        render(normals, b, l)?,
    )
}

/// Orthographic front-facing hemisphere on a `resolution × resolution` grid.
/// Pixel centres outside the unit disc carry no normal.
pub fn sphere_normal_map(resolution: usize) -> Result<NormalMap> {
    if resolution < 8 {
        return Err(precondition(format!("resolution {resolution} < 8")));
    }
    let r = resolution as f64;
    let mut normals = Vec::with_capacity(resolution * resolution);
    for row in 0..resolution {
        let v = 1.0 - (row as f64 + 0.5) / r * 2.0;
        for col in 0..resolution {
            let u = (col as f64 + 0.5) / r * 2.0 - 1.0;
            let rho2 = u * u + v * v;
            if rho2 < 1.0 {
                normals.push(Some(UnitNormal::new(u, v, (1.0 - rho2).sqrt())?));
            } else {
                normals.push(None);
            }
        }
    }
    NormalMap::new(resolution, resolution, normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn n(x: f64, y: f64, z: f64) -> UnitNormal {
        UnitNormal::new(x, y, z).unwrap()
    }

    #[test]
    fn basis_at_poles() {
        let up = sh_basis(n(0.0, 0.0, 1.0));
        let expect = [0.282095, 0.0, 0.488603, 0.0, 0.0, 0.0, 0.630784, 0.0, 0.0];
        for (a, b) in up.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
        let right = sh_basis(n(1.0, 0.0, 0.0));
        let expect = [0.282095, 0.0, 0.0, 0.488603, 0.0, 0.0, -0.315392, 0.0, 0.546274];
        for (a, b) in right.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn non_unit_normal_rejected() {
        assert!(UnitNormal::new(1.0, 1.0, 0.0).is_err());
        assert!(UnitNormal::new(0.0, 0.0, 1.0 + 1e-6).is_err());
    }

    #[test]
    fn ambient_and_directional_shading() {
        let amb = ShCoeffs::ambient(1.0);
        assert_abs_diff_eq!(irradiance_shading(&amb, n(0.3, 0.4, 0.866_025_403_784_438_6)), 0.886227, epsilon = 1e-6);
        assert_eq!(irradiance_shading(&ShCoeffs::ZERO, n(0.0, 1.0, 0.0)), 0.0);

        let mut c = [0.0; 9];
        c[0] = 1.0;
        c[2] = 0.5;
        let l = ShCoeffs::new(c).unwrap();
        let diff = irradiance_shading(&l, n(0.0, 0.0, 1.0)) - irradiance_shading(&l, n(0.0, 0.0, -1.0));
        assert_abs_diff_eq!(diff, 2.0 * (2.0 * PI / 3.0) * 0.5 * 0.488603, epsilon = 1e-5);
    }

    #[test]
    fn sphere_map_geometry() {
        let m = sphere_normal_map(33).unwrap();
        let c = m.get(16, 16).unwrap();
        assert_abs_diff_eq!(c.z(), 1.0, epsilon = 1e-12);
        assert!(m.get(0, 0).is_none());
        assert!(m.get(32, 32).is_none());
        let even = sphere_normal_map(64).unwrap();
        assert!(even.get(32, 32).unwrap().z() > 0.999);
        assert!(sphere_normal_map(7).is_err());
    }

    #[test]
    fn render_cases() {
        let map = sphere_normal_map(16).unwrap();
        let zero = ImagePlane::filled(16, 16, 0.0, Encoding::Linear);
        let img = render(&map, &zero, &ShCoeffs::ambient(1.0)).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 0.0));

        let ones = ImagePlane::filled(16, 16, 1.0, Encoding::Linear);
        let img = render(&map, &ones, &ShCoeffs::ambient(1.0)).unwrap();
        for (p, nrm) in img.pixels().iter().zip(map.normals()) {
            match nrm {
                Some(_) => assert_abs_diff_eq!(*p, PI * Y00, epsilon = 1e-12),
                None => assert_eq!(*p, 0.0),
            }
        }
        assert_abs_diff_eq!(PI * Y00, 0.886227, epsilon = 1e-6);

        let wrong = ImagePlane::filled(8, 16, 1.0, Encoding::Linear);
        assert!(matches!(
            render(&map, &wrong, &ShCoeffs::ambient(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn render_clamps_negative_shading() {
        let map = sphere_normal_map(16).unwrap();
        let ones = ImagePlane::filled(16, 16, 1.0, Encoding::Linear);
        let mut c = [0.0; 9];
        c[2] = -1.0;
        let img = render(&map, &ones, &ShCoeffs::new(c).unwrap()).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axis_swap_symmetry() {
        let mut lz = [0.0; 9];
        lz[2] = 1.0;
        let mut lx = [0.0; 9];
        lx[3] = 1.0;
        let (lz, lx) = (ShCoeffs::new(lz).unwrap(), ShCoeffs::new(lx).unwrap());
        let a = n(0.6, 0.0, 0.8);
        let b = n(0.8, 0.0, 0.6);
        assert_abs_diff_eq!(irradiance_shading(&lz, a), irradiance_shading(&lx, b), epsilon = 1e-9);
    }

    fn arb_light() -> impl Strategy<Value = ShCoeffs> {
        (0.5f64..2.0, proptest::array::uniform8(-0.15f64..0.15)).prop_map(|(dc, rest)| {
            let mut c = [0.0; 9];
            c[0] = dc;
            c[1..].copy_from_slice(&rest);
            ShCoeffs::new(c).unwrap()
        })
    }

    proptest! {
        #[test]
        fn render_is_linear(l1 in arb_light(), l2 in arb_light(), a in 0.1f64..2.0, b in 0.1f64..2.0) {
            let map = sphere_normal_map(12).unwrap();
            let alb = ImagePlane::filled(12, 12, 0.7, Encoding::Linear);
            let r1 = render(&map, &alb, &l1).unwrap();
            let r2 = render(&map, &alb, &l2).unwrap();
            let r12 = render(&map, &alb, &(a * l1 + b * l2)).unwrap();
            for i in 0..r1.pixels().len() {
                let expect = a * r1.pixels()[i] + b * r2.pixels()[i];
                prop_assert!((r12.pixels()[i] - expect).abs() < 1e-9);
            }
        }

        #[test]
        fn doubling_light_doubles_image(l in arb_light()) {
            let map = sphere_normal_map(10).unwrap();
            let alb = ImagePlane::filled(10, 10, 0.5, Encoding::Linear);
            let r1 = render(&map, &alb, &l).unwrap();
            let r2 = render(&map, &alb, &l.scaled(2.0)).unwrap();
            for (x, y) in r1.pixels().iter().zip(r2.pixels()) {
                prop_assert_eq!(2.0 * x, *y);
            }
        }

        #[test]
        fn sphere_normals_unit(res in 8usize..80) {
            let m = sphere_normal_map(res).unwrap();
            for nrm in m.normals().iter().flatten() {
                let l2 = nrm.x() * nrm.x() + nrm.y() * nrm.y() + nrm.z() * nrm.z();
                prop_assert!((l2 - 1.0).abs() < 1e-9);
            }
        }
    }
}
