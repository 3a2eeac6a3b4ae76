//! Serialization: 8-bit PNG, the power-law transfer curve, coefficient files
//! and scatter-plot emission. Every writer is deterministic and every reader
//! rejects malformed input instead of repairing it.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding_analysis::EmbedPoint;
use crate::error::{precondition, Error, Result};
use crate::magnitude_scaling::FaceMask;
use crate::sh_lighting::{Encoding, ImagePlane, RgbImage, SH_COUNT};
use crate::skin_tone::SkinTone;

pub const DEFAULT_GAMMA: f64 = 2.2;
pub const SCHEMA_VERSION: &str = "v1";

/// `v^gamma`
pub fn decode_value(v: f64, gamma: f64) -> f64 {
    v.powf(gamma)
}

/// `clamp(v, 0, 1)^(1/gamma)`
pub fn encode_value(v: f64, gamma: f64) -> f64 {
    v.clamp(0.0, 1.0).powf(1.0 / gamma)
}

/// Gamma-encodes a linear plane; output values lie in [0, 1].
pub fn encode_gamma(img: &ImagePlane, gamma: f64) -> Result<ImagePlane> {
    if img.encoding() != Encoding::Linear {
        return Err(precondition("encode_gamma expects a linear image"));
    }
    let px = img.pixels().iter().map(|&v| encode_value(v, gamma)).collect();
    Ok(img.with_pixels(px, Encoding::GammaEncoded(gamma)))
}

/// Decodes a gamma-encoded plane back to linear values.
pub fn decode_gamma(img: &ImagePlane) -> Result<ImagePlane> {
    let Encoding::GammaEncoded(gamma) = img.encoding() else {
        return Err(precondition("decode_gamma expects a gamma-encoded image"));
    };
    let px = img.pixels().iter().map(|&v| decode_value(v, gamma)).collect();
    Ok(img.with_pixels(px, Encoding::Linear))
}

/// Any image a PNG file may hold.
#[derive(Debug, Clone, PartialEq)]
pub enum PngImage {
    Gray(ImagePlane),
    Rgb(RgbImage),
}

struct RawPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    line_size: usize,
    data: Vec<u8>,
}

fn decode_raw<R: std::io::BufRead + std::io::Seek>(reader: R) -> Result<RawPng> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("image too large".into()))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data)?;
    data.truncate(info.buffer_size());
    Ok(RawPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        line_size: info.line_size,
        data,
    })
}

fn to_unit(bytes: impl Iterator<Item = u8>) -> Vec<f64> {
    bytes.map(|b| f64::from(b) / 255.0).collect()
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes an 8-bit grayscale or RGB PNG into gamma-encoded (2.2) planes.
pub fn decode_png(bytes: &[u8]) -> Result<PngImage> {
    let raw = decode_raw(Cursor::new(bytes))?;
    if raw.depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "bit depth {:?}; only 8-bit images are supported",
            raw.depth
        )));
    }
    let enc = Encoding::GammaEncoded(DEFAULT_GAMMA);
    let (w, h) = (raw.width, raw.height);
    match raw.color {
        png::ColorType::Grayscale => Ok(PngImage::Gray(ImagePlane::new(
            w,
            h,
            to_unit(raw.data.into_iter()),
            enc,
        )?)),
        png::ColorType::Rgb => {
            let plane = |c: usize| {
                ImagePlane::new(w, h, to_unit(raw.data.iter().skip(c).step_by(3).copied()), enc)
            };
            Ok(PngImage::Rgb(RgbImage::new(plane(0)?, plane(1)?, plane(2)?)?))
        }
        other => Err(Error::UnsupportedFormat(format!("color type {other:?}"))),
    }
}

pub fn read_png(path: &Path) -> Result<PngImage> {
    decode_png(&std::fs::read(path)?)
}

pub fn read_png_rgb(path: &Path) -> Result<RgbImage> {
    match read_png(path)? {
        PngImage::Rgb(img) => Ok(img),
        PngImage::Gray(_) => Err(Error::UnsupportedFormat(format!(
            "{}: expected RGB, found grayscale",
            path.display()
        ))),
    }
}

fn encode_raw(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::Adaptive);
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    Ok(out)
}

fn require_gamma(enc: Encoding) -> Result<()> {
    match enc {
        Encoding::GammaEncoded(_) => Ok(()),
        Encoding::Linear => Err(precondition("PNG output expects gamma-encoded values")),
    }
}

pub fn encode_png_gray(img: &ImagePlane) -> Result<Vec<u8>> {
    require_gamma(img.encoding())?;
    let data: Vec<u8> = img.pixels().iter().map(|&v| quantize(v)).collect();
    encode_raw(img.width(), img.height(), png::ColorType::Grayscale, png::BitDepth::Eight, &data)
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    require_gamma(img.encoding())?;
    let [r, g, b] = img.planes();
    let mut data = Vec::with_capacity(r.pixels().len() * 3);
    for i in 0..r.pixels().len() {
        data.extend([quantize(r.pixels()[i]), quantize(g.pixels()[i]), quantize(b.pixels()[i])]);
    }
    encode_raw(img.width(), img.height(), png::ColorType::Rgb, png::BitDepth::Eight, &data)
}

pub fn write_png_gray(path: &Path, img: &ImagePlane) -> Result<()> {
    std::fs::write(path, encode_png_gray(img)?)?;
    Ok(())
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_png_rgb(img)?)?;
    Ok(())
}

/// Masks are stored as 1-bit grayscale.
pub fn encode_mask(mask: &FaceMask) -> Result<Vec<u8>> {
    let (w, h) = (mask.width(), mask.height());
    let stride = w.div_ceil(8);
    let mut data = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if mask.contains(x, y) {
                data[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    encode_raw(w, h, png::ColorType::Grayscale, png::BitDepth::One, &data)
}

/// Accepts 1-bit masks or 8-bit masks with values in {0, 255}.
pub fn decode_mask(bytes: &[u8]) -> Result<FaceMask> {
    let raw = decode_raw(Cursor::new(bytes))?;
    if raw.color != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!("mask color type {:?}", raw.color)));
    }
    let (w, h) = (raw.width, raw.height);
    let mut bits = Vec::with_capacity(w * h);
    match raw.depth {
        png::BitDepth::One => {
            for y in 0..h {
                let row = &raw.data[y * raw.line_size..];
                for x in 0..w {
                    bits.push(row[x / 8] & (0x80 >> (x % 8)) != 0);
                }
            }
        }
        png::BitDepth::Eight => {
            for &v in &raw.data {
                match v {
                    0 => bits.push(false),
                    255 => bits.push(true),
                    other => {
                        return Err(Error::UnsupportedFormat(format!(
                            "8-bit mask value {other}; expected 0 or 255"
                        )))
                    }
                }
            }
        }
        other => return Err(Error::UnsupportedFormat(format!("mask bit depth {other:?}"))),
    }
    FaceMask::new(w, h, bits)
}

pub fn read_mask(path: &Path) -> Result<FaceMask> {
    decode_mask(&std::fs::read(path)?)
}

pub fn write_mask(path: &Path, mask: &FaceMask) -> Result<()> {
    std::fs::write(path, encode_mask(mask)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoeffKind {
    Raw,
    Normalized,
    Aligned,
}

impl CoeffKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CoeffKind::Raw => "raw",
            CoeffKind::Normalized => "normalized",
            CoeffKind::Aligned => "aligned",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(CoeffKind::Raw),
            "normalized" => Ok(CoeffKind::Normalized),
            "aligned" => Ok(CoeffKind::Aligned),
            other => Err(Error::Parse(format!("unknown coefficient kind `{other}`"))),
        }
    }
}

/// One serialized coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffRecord {
    pub id: String,
    pub coeffs: [f64; SH_COUNT],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<SkinTone>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<CoeffKind>,
}

impl CoeffRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.coeffs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{}: c{i} is not finite", self.id)));
        }
        if matches!(self.kind, Some(CoeffKind::Normalized | CoeffKind::Aligned)) && self.coeffs[0] != 1.0 {
            return Err(Error::Validation(format!(
                "{}: {} record has c0 = {} (must be 1)",
                self.id,
                self.kind.unwrap().as_str(),
                self.coeffs[0]
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoeffFile {
    schema: String,
    records: Vec<CoeffRecord>,
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn coeff_header(with_class: bool, with_kind: bool) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((0..SH_COUNT).map(|i| format!("c{i}")));
    if with_class {
        h.push("class".into());
    }
    if with_kind {
        h.push("kind".into());
    }
    h
}

pub fn write_coeffs_csv<W: Write>(writer: W, records: &[CoeffRecord]) -> Result<()> {
    let with_class = records.iter().any(|r| r.class.is_some());
    let with_kind = records.iter().any(|r| r.kind.is_some());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(coeff_header(with_class, with_kind))?;
    for r in records {
        r.validate()?;
        let mut row = vec![r.id.clone()];
        row.extend(r.coeffs.iter().map(|&v| fmt_real(v)));
        if with_class {
            row.push(r.class.map(|c| c.as_str().to_string()).unwrap_or_default());
        }
        if with_kind {
            row.push(r.kind.map(|k| k.as_str().to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coeffs_csv<R: Read>(reader: R) -> Result<Vec<CoeffRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let with_class;
    let with_kind;
    let base = coeff_header(false, false);
    if headers.len() < base.len() || headers[..base.len()] != base[..] {
        return Err(Error::Parse(format!("coefficient header must start with `{}`", base.join(","))));
    }
    match &headers[base.len()..] {
        [] => (with_class, with_kind) = (false, false),
        [a] if a == "class" => (with_class, with_kind) = (true, false),
        [a] if a == "kind" => (with_class, with_kind) = (false, true),
        [a, b] if a == "class" && b == "kind" => (with_class, with_kind) = (true, true),
        extra => {
            return Err(Error::Parse(format!("unknown columns `{}`", extra.join(","))));
        }
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                headers.len()
            )));
        }
        let mut coeffs = [0.0; SH_COUNT];
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c = rec[i + 1]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {} c{i}: {e}", line + 1)))?;
        }
        let mut col = SH_COUNT + 1;
        let class = if with_class {
            col += 1;
            match &rec[col - 1] {
                "" => None,
                s => Some(s.parse()?),
            }
        } else {
            None
        };
        let kind = if with_kind {
            match &rec[col] {
                "" => None,
                s => Some(CoeffKind::parse(s)?),
            }
        } else {
            None
        };
        let r = CoeffRecord {
            id: rec[0].to_string(),
            coeffs,
            class,
            kind,
        };
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_coeffs_json<W: Write>(writer: W, records: &[CoeffRecord]) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    let file = CoeffFile {
        schema: SCHEMA_VERSION.into(),
        records: records.to_vec(),
    };
    let mut w = BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_coeffs_json<R: Read>(reader: R) -> Result<Vec<CoeffRecord>> {
    let file: CoeffFile = serde_json::from_reader(reader)?;
    if file.schema != SCHEMA_VERSION {
        return Err(Error::Parse(format!("unsupported schema `{}`", file.schema)));
    }
    for r in &file.records {
        r.validate()?;
    }
    Ok(file.records)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads JSON when the extension is `.json`, CSV otherwise.
pub fn read_coeffs(path: &Path) -> Result<Vec<CoeffRecord>> {
    let f = BufReader::new(File::open(path)?);
    if is_json(path) {
        read_coeffs_json(f)
    } else {
        read_coeffs_csv(f)
    }
}

pub fn write_coeffs(path: &Path, records: &[CoeffRecord]) -> Result<()> {
    let f = File::create(path)?;
    if is_json(path) {
        write_coeffs_json(f, records)
    } else {
        write_coeffs_csv(BufWriter::new(f), records)
    }
}

/// Plot colour per class.
pub fn class_color(tone: SkinTone) -> &'static str {
    match tone {
        SkinTone::Fair => "#e8c4a0",
        SkinTone::Medium => "#c68642",
        SkinTone::Tan => "#8d5524",
        SkinTone::Dark => "#3b2219",
    }
}

fn sorted_points(points: &[EmbedPoint]) -> Vec<&EmbedPoint> {
    let mut v: Vec<&EmbedPoint> = points.iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

pub fn scatter_csv(points: &[EmbedPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(precondition("no points to plot"));
    }
    let mut s = String::from("id,x,y,class\n");
    for p in sorted_points(points) {
        writeln!(s, "{},{},{},{}", p.id, fmt_real(p.x), fmt_real(p.y), p.label).unwrap();
    }
    Ok(s)
}

pub fn scatter_svg(points: &[EmbedPoint], title: &str) -> Result<String> {
    if points.is_empty() {
        return Err(precondition("no points to plot"));
    }
    const SIZE: f64 = 600.0;
    const MARGIN: f64 = 40.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let sx = if x1 > x0 { (SIZE - 2.0 * MARGIN) / (x1 - x0) } else { 0.0 };
    let sy = if y1 > y0 { (SIZE - 2.0 * MARGIN) / (y1 - y0) } else { 0.0 };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="16">{}</text>"#,
        escape_xml(title)
    )
    .unwrap();
    for p in sorted_points(points) {
        let cx = MARGIN + (p.x - x0) * sx;
        let cy = SIZE - MARGIN - (p.y - y0) * sy;
        writeln!(
            s,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="3.5" fill="{}"><title>{} ({})</title></circle>"#,
            class_color(p.label),
            escape_xml(&p.id),
            p.label
        )
        .unwrap();
    }
    for (i, tone) in SkinTone::ALL.iter().enumerate() {
        let y = 44.0 + 18.0 * i as f64;
        writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="5" fill="{}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{tone}</text>"#,
            SIZE - 90.0,
            class_color(*tone),
            SIZE - 80.0,
            y + 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>.csv` and `<stem>.svg` side by side.
pub fn emit_scatter(points: &[EmbedPoint], dir: &Path, stem: &str, title: &str) -> Result<()> {
    let csv = scatter_csv(points)?;
    let svg = scatter_svg(points, title)?;
    std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    std::fs::write(dir.join(format!("{stem}.svg")), svg)?;
    Ok(())
}
