//! Seeded synthetic corpus: tinted Lambertian spheres under random SH
//! environments, with masks, labels and ground truth.
//!
//! Item seeds are `splitmix(splitmix(splitmix(master) ^ class) ^ item)`, so
//! any item can be regenerated on its own.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::image_io::{read_mask, read_png_rgb, write_mask, write_png_rgb, SCHEMA_VERSION};
use crate::light_estimation::{simulate_capture, SensorModel};
use crate::magnitude_scaling::FaceMask;
use crate::par;
use crate::sh_lighting::{irradiance_shading, render_rgb, sphere_normal_map, Encoding, ImagePlane, RgbImage, ShCoeffs};
use crate::skin_tone::{write_labels, SkinTone};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightPrior {
    pub dc_range: (f64, f64),
    /// Band-1 strength as a fraction of DC.
    pub band1_range: (f64, f64),
    /// Band-2 standard deviation as a fraction of DC.
    pub band2_std: f64,
}

impl Default for LightPrior {
    fn default() -> Self {
        Self {
            dc_range: (0.8, 1.2),
            band1_range: (0.2, 0.6),
            band2_std: 0.05,
        }
    }
}

impl LightPrior {
    pub fn validate(&self) -> Result<()> {
        let (d0, d1) = self.dc_range;
        let (b0, b1) = self.band1_range;
        if !(d0 > 0.0 && d1 >= d0 && d1.is_finite()) {
            return Err(precondition(format!("dc range {:?}", self.dc_range)));
        }
        if !(b0 >= 0.0 && b1 >= b0 && b1.is_finite()) || !(self.band2_std >= 0.0 && self.band2_std.is_finite()) {
            return Err(precondition("band ranges must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAlbedoModel {
    /// Red-channel reflectance means, indexed by `SkinTone::index`.
    pub means: [f64; 4],
    pub relative_std: f64,
    pub bounds: (f64, f64),
    /// Per-class `(r, g, b)` ratios to the red reflectance.
    pub tints: [[f64; 3]; 4],
}

impl Default for ClassAlbedoModel {
    fn default() -> Self {
        Self {
            means: [0.60, 0.45, 0.32, 0.18],
            relative_std: 0.08,
            bounds: (0.02, 0.95),
            tints: [
                [1.0, 0.95, 0.675],
                [1.0, 1.0, 0.35],
                [1.0, 0.6, 0.1],
                [1.0, 0.4, 0.375],
            ],
        }
    }
}

impl ClassAlbedoModel {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(precondition(format!("albedo bounds {:?}", self.bounds)));
        }
        if self.means.iter().any(|m| !(lo < *m && *m < hi)) {
            return Err(precondition("class means must lie inside the bounds"));
        }
        if !(self.relative_std > 0.0 && self.relative_std.is_finite()) {
            return Err(precondition("relative std must be positive"));
        }
        if self.tints.iter().flatten().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(precondition("tints must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A sampled reflectance and its RGB albedo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlbedoDraw {
    pub reflectance: f64,
    pub rgb: [f64; 3],
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn item_seed(master: u64, class: SkinTone, item: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ class.index() as u64) ^ item as u64)
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ stream.wrapping_mul(0xd134_2543_de82_ef95))
}

/// Draws a light. The skin-tone class is not an input.
pub fn sample_light(prior: &LightPrior, seed: u64) -> Result<ShCoeffs> {
    prior.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dc = rng.random_range(prior.dc_range.0..=prior.dc_range.1);
    let unit = Normal::new(0.0, 1.0).expect("valid std");
    let dir = loop {
        let v: [f64; 3] = std::array::from_fn(|_| unit.sample(&mut rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            break v.map(|c| c / n);
        }
    };
    let strength = rng.random_range(prior.band1_range.0..=prior.band1_range.1) * dc;
    let mut c = [0.0; 9];
    c[0] = dc;
    c[1] = strength * dir[1];
    c[2] = strength * dir[2];
    c[3] = strength * dir[0];
    for v in &mut c[4..] {
        *v = unit.sample(&mut rng) * prior.band2_std * dc;
    }
    ShCoeffs::new(c)
}

/// Truncated-Gaussian reflectance draw around the class mean.
pub fn sample_albedo(tone: SkinTone, model: &ClassAlbedoModel, seed: u64) -> Result<AlbedoDraw> {
    model.validate()?;
    let mean = model.means[tone.index()];
    let g = Normal::new(mean, mean * model.relative_std).map_err(|e| precondition(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = model.bounds;
    let reflectance = loop {
        let v = g.sample(&mut rng);
        if lo < v && v < hi {
            break v;
        }
    };
    let tint = model.tints[tone.index()];
    Ok(AlbedoDraw {
        reflectance,
        rgb: tint.map(|t| reflectance * t),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub tone: SkinTone,
    pub light: ShCoeffs,
    pub albedo: AlbedoDraw,
    pub image: RgbImage,
    pub mask: FaceMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_per_class: usize,
    pub resolution: usize,
    pub sensor: SensorModel,
    pub master_seed: u64,
    pub light_prior: LightPrior,
    pub albedo_model: ClassAlbedoModel,
}

impl CorpusConfig {
    pub fn new(n_per_class: usize, resolution: usize, sensor: SensorModel, master_seed: u64) -> Self {
        Self {
            n_per_class,
            resolution,
            sensor,
            master_seed,
            light_prior: LightPrior::default(),
            albedo_model: ClassAlbedoModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < 1 {
            return Err(precondition("n_per_class must be >= 1"));
        }
        if self.resolution < 32 {
            return Err(precondition(format!("resolution {} < 32", self.resolution)));
        }
        self.sensor.validate()?;
        self.light_prior.validate()?;
        self.albedo_model.validate()
    }
}

pub fn sample_id(tone: SkinTone, item: usize) -> String {
    format!("{}_{item:05}", tone.as_str())
}

/// Silhouette pixels whose shading lies strictly above the 25th percentile.
pub fn default_mask(shading: &[Option<f64>], width: usize, height: usize) -> Result<FaceMask> {
    let mut vals: Vec<f64> = shading.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::EmptyMask);
    }
    vals.sort_by(f64::total_cmp);
    let q = vals[(vals.len() - 1) / 4];
    FaceMask::new(width, height, shading.iter().map(|s| matches!(s, Some(v) if *v > q)).collect())
}

/// Generates one item from its class and index.
pub fn generate_item(cfg: &CorpusConfig, tone: SkinTone, item: usize) -> Result<LabeledSample> {
    let normals = sphere_normal_map(cfg.resolution)?;
    generate_item_with(cfg, &normals, tone, item)
}

fn generate_item_with(
    cfg: &CorpusConfig,
    normals: &crate::sh_lighting::NormalMap,
    tone: SkinTone,
    item: usize,
) -> Result<LabeledSample> {
    let seed = item_seed(cfg.master_seed, tone, item);
    let light = sample_light(&cfg.light_prior, stream_seed(seed, 0))?;
    let albedo = sample_albedo(tone, &cfg.albedo_model, stream_seed(seed, 1))?;
    let (w, h) = (normals.width(), normals.height());
    let planes = albedo.rgb.map(|a| ImagePlane::filled(w, h, a, Encoding::Linear));
    let radiance = render_rgb(normals, &RgbImage::from_planes(planes)?, &light)?;
    let noise_base = stream_seed(seed, 2) ^ cfg.sensor.seed;
    let captured: Vec<ImagePlane> = radiance
        .planes()
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let sensor = SensorModel {
                seed: stream_seed(noise_base, c as u64),
                ..cfg.sensor
            };
            simulate_capture(p, &sensor)
        })
        .collect::<Result<_>>()?;
    let [r, g, b]: [ImagePlane; 3] = captured.try_into().expect("three planes");
    let shading: Vec<Option<f64>> = normals
        .normals()
        .iter()
        .map(|n| n.map(|n| irradiance_shading(&light, n)))
        .collect();
    Ok(LabeledSample {
        id: sample_id(tone, item),
        tone,
        light,
        albedo,
        image: RgbImage::new(r, g, b)?,
        mask: default_mask(&shading, w, h)?,
    })
}

/// `n_per_class` items for each class, ordered by class then index.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let normals = sphere_normal_map(cfg.resolution)?;
    let n = cfg.n_per_class;
    let jobs: Vec<(SkinTone, usize)> = SkinTone::ALL.iter().flat_map(|&t| (0..n).map(move |i| (t, i))).collect();
    par::try_map_slice(&jobs, |&(t, i)| generate_item_with(cfg, &normals, t, i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub id: String,
    pub class: SkinTone,
    pub albedo: f64,
    pub albedo_rgb: [f64; 3],
    pub light: ShCoeffs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusTruth {
    pub schema: String,
    pub config: CorpusConfig,
    pub items: Vec<TruthRecord>,
}

impl CorpusTruth {
    pub fn from_samples(cfg: &CorpusConfig, samples: &[LabeledSample]) -> Self {
        let mut items: Vec<TruthRecord> = samples
            .iter()
            .map(|s| TruthRecord {
                id: s.id.clone(),
                class: s.tone,
                albedo: s.albedo.reflectance,
                albedo_rgb: s.albedo.rgb,
                light: s.light,
            })
            .collect();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            schema: SCHEMA_VERSION.into(),
            config: *cfg,
            items,
        }
    }

    pub fn by_id(&self) -> BTreeMap<&str, &TruthRecord> {
        self.items.iter().map(|r| (r.id.as_str(), r)).collect()
    }
}

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const TRUTH_FILE: &str = "truth.json";
pub const LABELS_FILE: &str = "labels.csv";

/// Writes `images/`, `masks/`, `truth.json` and `labels.csv` under `dir`.
pub fn write_corpus(dir: &Path, cfg: &CorpusConfig, samples: &[LabeledSample]) -> Result<()> {
    let images = dir.join(IMAGES_DIR);
    let masks = dir.join(MASKS_DIR);
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    par::try_map_slice(samples, |s| -> Result<()> {
        write_png_rgb(&images.join(format!("{}.png", s.id)), &s.image)?;
        write_mask(&masks.join(format!("{}.png", s.id)), &s.mask)
    })?;
    let truth = CorpusTruth::from_samples(cfg, samples);
    fs::write(dir.join(TRUTH_FILE), serde_json::to_string_pretty(&truth)? + "\n")?;
    let labels: BTreeMap<String, SkinTone> = samples.iter().map(|s| (s.id.clone(), s.tone)).collect();
    write_labels(fs::File::create(dir.join(LABELS_FILE))?, &labels)?;
    Ok(())
}

pub fn read_truth(dir: &Path) -> Result<CorpusTruth> {
    let truth: CorpusTruth = serde_json::from_str(&fs::read_to_string(dir.join(TRUTH_FILE))?)?;
    if truth.schema != SCHEMA_VERSION {
        return Err(Error::Parse(format!("unsupported schema `{}`", truth.schema)));
    }
    Ok(truth)
}

/// Image and mask of one stored item.
pub fn read_item(dir: &Path, id: &str) -> Result<(RgbImage, FaceMask)> {
    let image = read_png_rgb(&dir.join(IMAGES_DIR).join(format!("{id}.png")))?;
    let mask = read_mask(&dir.join(MASKS_DIR).join(format!("{id}.png")))?;
    mask.check_image(image.width(), image.height())?;
    Ok((image, mask))
}
