//! Skin-tone classes, ITA classification, score consistency and KL divergence.
//!
//! Classification uses the Individual Typology Angle of the masked mean colour:
//! `ITA = atan2(L* - 50, b*)` in degrees, collapsed onto four classes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::image_io::decode_value;
use crate::magnitude_scaling::FaceMask;
use crate::sh_lighting::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkinTone {
    Fair,
    Medium,
    Tan,
    Dark,
}

impl SkinTone {
    pub const ALL: [SkinTone; 4] = [SkinTone::Fair, SkinTone::Medium, SkinTone::Tan, SkinTone::Dark];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SkinTone::Fair => "fair",
            SkinTone::Medium => "medium",
            SkinTone::Tan => "tan",
            SkinTone::Dark => "dark",
        }
    }

    pub fn is_dark(self) -> bool {
        self == SkinTone::Dark
    }
}

impl fmt::Display for SkinTone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for SkinTone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fair" => Ok(SkinTone::Fair),
            "medium" => Ok(SkinTone::Medium),
            "tan" => Ok(SkinTone::Tan),
            "dark" => Ok(SkinTone::Dark),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }
}

/// Lower ITA bounds (exclusive) of fair, medium and tan; anything at or below
/// the last is dark.
pub const ITA_THRESHOLDS: [f64; 3] = [41.0, 19.0, -30.0];
/// Soft-score prototypes. Adjacent midpoints coincide with [`ITA_THRESHOLDS`].
pub const ITA_PROTOTYPES: [f64; 4] = [52.0, 30.0, 8.0, -68.0];
pub const SOFT_SCORE_TEMPERATURE: f64 = 10.0;

/// Four non-negative class scores in (fair, medium, tan, dark) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct SkinToneScore([f64; 4]);

impl SkinToneScore {
    pub fn new(scores: [f64; 4]) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Validation("scores must be finite and non-negative".into()));
        }
        if scores.iter().all(|s| *s == 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(Self(scores))
    }

    pub fn one_hot(tone: SkinTone) -> Self {
        let mut s = [0.0; 4];
        s[tone.index()] = 1.0;
        Self(s)
    }

    pub fn scores(&self) -> &[f64; 4] {
        &self.0
    }

    /// Highest-scoring class; ties resolve toward the darker class.
    pub fn argmax(&self) -> SkinTone {
        let mut best = 0;
        for i in 1..4 {
            if self.0[i] >= self.0[best] {
                best = i;
            }
        }
        SkinTone::ALL[best]
    }
}

impl TryFrom<[f64; 4]> for SkinToneScore {
    type Error = Error;
    fn try_from(s: [f64; 4]) -> Result<Self> {
        Self::new(s)
    }
}

impl From<SkinToneScore> for [f64; 4] {
    fn from(s: SkinToneScore) -> Self {
        s.0
    }
}

/// A categorical distribution over the four classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneDistribution([f64; 4]);

impl ToneDistribution {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(p))
    }

    /// Empirical distribution of a set of labels.
    pub fn from_labels<I: IntoIterator<Item = SkinTone>>(labels: I) -> Result<Self> {
        let mut counts = [0usize; 4];
        for t in labels {
            counts[t.index()] += 1;
        }
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(precondition("no labels"));
        }
        Ok(Self(counts.map(|c| c as f64 / n as f64)))
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.0
    }
}

/// CIELAB coordinates (D65).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
];

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Linear sRGB (D65) to CIELAB. The white point is the image of (1, 1, 1),
/// so neutral greys map to a* = b* = 0.
pub fn linear_rgb_to_lab(rgb: [f64; 3]) -> Lab {
    let xyz = RGB_TO_XYZ.map(|row| row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2]);
    let white = RGB_TO_XYZ.map(|row| row[0] + row[1] + row[2]);
    let f = [0, 1, 2].map(|i| lab_f(xyz[i] / white[i]));
    Lab {
        l: 116.0 * f[1] - 16.0,
        a: 500.0 * (f[0] - f[1]),
        b: 200.0 * (f[1] - f[2]),
    }
}

/// Individual Typology Angle in degrees.
pub fn ita_degrees(lab: Lab) -> f64 {
    (lab.l - 50.0).atan2(lab.b).to_degrees()
}

pub fn tone_from_ita(ita: f64) -> SkinTone {
    if ita > ITA_THRESHOLDS[0] {
        SkinTone::Fair
    } else if ita > ITA_THRESHOLDS[1] {
        SkinTone::Medium
    } else if ita > ITA_THRESHOLDS[2] {
        SkinTone::Tan
    } else {
        SkinTone::Dark
    }
}

/// Softmax of `-|ita - prototype| / 10` over the four class prototypes.
pub fn soft_scores(ita: f64) -> SkinToneScore {
    let logits = ITA_PROTOTYPES.map(|p| -(ita - p).abs() / SOFT_SCORE_TEMPERATURE);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|z| (z - max).exp());
    let total: f64 = e.iter().sum();
    SkinToneScore(e.map(|v| v / total))
}

/// ITA of the masked mean colour of a gamma-encoded RGB image.
pub fn masked_ita(img: &RgbImage, mask: &FaceMask) -> Result<f64> {
    mask.check_image(img.width(), img.height())?;
    let gamma = match img.encoding() {
        crate::sh_lighting::Encoding::GammaEncoded(g) => g,
        crate::sh_lighting::Encoding::Linear => {
            return Err(precondition("classify_ita expects a gamma-encoded image"))
        }
    };
    let members = mask.member_indices();
    if members.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut mean = [0.0; 3];
    for (c, plane) in img.planes().iter().enumerate() {
        let px = plane.pixels();
        let vals: Vec<f64> = members.iter().map(|&i| px[i]).collect();
        mean[c] = crate::numeric::neumaier(&vals) / vals.len() as f64;
    }
    let linear = mean.map(|v| decode_value(v, gamma));
    Ok(ita_degrees(linear_rgb_to_lab(linear)))
}

/// Classifies the masked face pixels by ITA, returning the hard class and the
/// soft score vector.
pub fn classify_ita(img: &RgbImage, mask: &FaceMask) -> Result<(SkinTone, SkinToneScore)> {
    let ita = masked_ita(img, mask)?;
    Ok((tone_from_ita(ita), soft_scores(ita)))
}

/// Cosine similarity of two score vectors, in [0, 1].
pub fn consistency_score(a: &SkinToneScore, b: &SkinToneScore) -> Result<f64> {
    let na = a.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

pub const KL_SMOOTHING: f64 = 1e-6;

/// `KL(p || q)` in nats after additive smoothing of both arguments.
pub fn kl_divergence(p: &ToneDistribution, q: &ToneDistribution) -> f64 {
    let smooth = |d: &[f64; 4]| d.map(|v| (v + KL_SMOOTHING) / (1.0 + 4.0 * KL_SMOOTHING));
    let (ps, qs) = (smooth(&p.0), smooth(&q.0));
    ps.iter()
        .zip(&qs)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Reads an `id,class` label file.
pub fn ingest_labels<R: Read>(reader: R) -> Result<BTreeMap<String, SkinTone>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "class" {
        return Err(Error::Parse(format!(
            "label header must be `id,class`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("label row {} has {} fields", line + 1, rec.len())));
        }
        let tone: SkinTone = rec[1].parse()?;
        let id = rec[0].to_string();
        if out.insert(id.clone(), tone).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(out)
}

/// Writes a label map in the `id,class` format, ids in sorted order.
pub fn write_labels<W: std::io::Write>(
    writer: W,
    labels: &BTreeMap<String, SkinTone>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "class"])?;
    for (id, tone) in labels {
        w.write_record([id.as_str(), tone.as_str()])?;
    }
    w.flush()?;
    Ok(())
}
