//! Illumination magnitude `m(I)` over facial pixels, the per-class scale
//! factor `s = m(I) / mean_c m` and gamma-domain rescaling
//! `I' = (I^γ · s)^(1/γ)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::image_io::{decode_value, SCHEMA_VERSION};
use crate::numeric::{population_std, stable_mean};
use crate::sh_lighting::{Encoding, ImagePlane, RgbImage};
use crate::skin_tone::SkinTone;

/// Facial pixel set, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl FaceMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(precondition(format!("{} mask bits for {width}x{height}", bits.len())));
        }
        Ok(Self { width, height, bits })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
    pub fn member_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect()
    }

    pub(crate) fn check_image(&self, width: usize, height: usize) -> Result<()> {
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

/// Which pixel values `m(I)` averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagnitudeDomain {
    /// Stored (tonemapped) values, as in `m(I) = mean_P I[p]`.
    Encoded,
    /// Gamma-decoded values; consistent with the linear-light scaling in
    /// [`apply_scale`], so dividing by `s` returns an image to its class mean.
    #[default]
    Linear,
}

/// Mean of the tonemapped pixel values over the mask.
pub fn illum_magnitude(img: &ImagePlane, mask: &FaceMask) -> Result<f64> {
    illum_magnitude_in(img, mask, MagnitudeDomain::Encoded)
}

pub fn illum_magnitude_in(img: &ImagePlane, mask: &FaceMask, domain: MagnitudeDomain) -> Result<f64> {
    mask.check_image(img.width(), img.height())?;
    let members = mask.member_indices();
    if members.is_empty() {
        return Err(Error::EmptyMask);
    }
    let px = img.pixels();
    let values: Vec<f64> = match (domain, img.encoding()) {
        (MagnitudeDomain::Encoded, Encoding::GammaEncoded(_)) => members.iter().map(|&i| px[i]).collect(),
        (MagnitudeDomain::Encoded, Encoding::Linear) => {
            return Err(precondition("encoded-domain magnitude needs a gamma-encoded image"))
        }
        (MagnitudeDomain::Linear, Encoding::GammaEncoded(g)) => {
            members.iter().map(|&i| decode_value(px[i], g)).collect()
        }
        (MagnitudeDomain::Linear, Encoding::Linear) => members.iter().map(|&i| px[i]).collect(),
    };
    Ok(stable_mean(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMagnitude {
    pub mean_m: f64,
    pub count: usize,
}

/// Per-class mean illumination magnitude; classes without items are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMagnitudes {
    pub schema: String,
    pub domain: MagnitudeDomain,
    pub classes: BTreeMap<SkinTone, ClassMagnitude>,
}

impl ClassMagnitudes {
    pub fn get(&self, tone: SkinTone) -> Result<ClassMagnitude> {
        self.classes.get(&tone).copied().ok_or(Error::MissingClass(tone))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cm: Self = serde_json::from_str(s)?;
        if cm.schema != SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported schema `{}`", cm.schema)));
        }
        for (tone, c) in &cm.classes {
            if !(c.mean_m.is_finite() && c.mean_m > 0.0) || c.count == 0 {
                return Err(Error::Validation(format!("class {tone}: mean {} count {}", c.mean_m, c.count)));
            }
        }
        Ok(cm)
    }
}

/// One corpus item for magnitude statistics.
#[derive(Debug, Clone, Copy)]
pub struct MagnitudeItem<'a> {
    pub image: &'a ImagePlane,
    pub mask: &'a FaceMask,
    pub tone: SkinTone,
}

/// Per-class mean of `m`. The reduction is independent of corpus order.
pub fn class_magnitude_means(corpus: &[MagnitudeItem<'_>], domain: MagnitudeDomain) -> Result<ClassMagnitudes> {
    let mags = crate::par::try_map_slice(corpus, |it| illum_magnitude_in(it.image, it.mask, domain))?;
    let mut per_class: BTreeMap<SkinTone, Vec<f64>> = BTreeMap::new();
    for (it, m) in corpus.iter().zip(mags) {
        per_class.entry(it.tone).or_default().push(m);
    }
    let classes = per_class
        .into_iter()
        .map(|(tone, v)| {
            (
                tone,
                ClassMagnitude {
                    mean_m: stable_mean(&v),
                    count: v.len(),
                },
            )
        })
        .collect();
    Ok(ClassMagnitudes {
        schema: SCHEMA_VERSION.into(),
        domain,
        classes,
    })
}

/// `m(img) / mean_m[tone]`, measured in the statistics' own domain.
pub fn scale_factor(img: &ImagePlane, mask: &FaceMask, tone: SkinTone, cm: &ClassMagnitudes) -> Result<f64> {
    let class = cm.get(tone)?;
    if !(class.mean_m > 0.0) {
        return Err(Error::Validation(format!("class {tone} has mean magnitude {}", class.mean_m)));
    }
    Ok(illum_magnitude_in(img, mask, cm.domain)? / class.mean_m)
}

/// Scales the linear light of a gamma-encoded image by `s`:
/// `v' = clamp((v^γ s)^(1/γ), 0, 1) = clamp(v s^(1/γ), 0, 1)`.
pub fn apply_scale(img: &ImagePlane, s: f64) -> Result<ImagePlane> {
    let Encoding::GammaEncoded(gamma) = img.encoding() else {
        return Err(precondition("apply_scale expects a gamma-encoded image"));
    };
    if !(s.is_finite() && s > 0.0) {
        return Err(precondition(format!("scale factor {s} must be positive")));
    }
    let k = s.powf(1.0 / gamma);
    let px = img.pixels().iter().map(|&v| (v * k).clamp(0.0, 1.0)).collect();
    Ok(img.with_pixels(px, img.encoding()))
}

pub fn apply_scale_rgb(img: &RgbImage, s: f64) -> Result<RgbImage> {
    let [r, g, b] = img.planes();
    RgbImage::new(apply_scale(r, s)?, apply_scale(g, s)?, apply_scale(b, s)?)
}

/// Population standard deviation of `m` over a corpus.
pub fn magnitude_std(corpus: &[(&ImagePlane, &FaceMask)], domain: MagnitudeDomain) -> Result<f64> {
    if corpus.len() < 2 {
        return Err(precondition(format!("magnitude_std needs >= 2 items, got {}", corpus.len())));
    }
    let mags = crate::par::try_map_slice(corpus, |(img, mask)| illum_magnitude_in(img, mask, domain))?;
    Ok(population_std(&mags))
}
