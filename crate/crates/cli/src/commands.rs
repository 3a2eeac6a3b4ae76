use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use shdebias::debias::{align, compute_alignment_stats, normalize_dc, AlignmentStats, NormalizedCoeffs};
use shdebias::embedding_analysis::{analysis_protocol, band0_scatter, label_points, pca2, tsne, TsneConfig};
use shdebias::image_io::{emit_scatter, read_coeffs, write_coeffs, write_png_rgb, CoeffKind, CoeffRecord, SCHEMA_VERSION};
use shdebias::light_estimation::{biased_estimate, fit_sh_least_squares, samples_from_image, EstimatorConfig, SensorModel};
use shdebias::magnitude_scaling::{
    apply_scale_rgb, class_magnitude_means, illum_magnitude_in, ClassMagnitudes, MagnitudeDomain, MagnitudeItem,
};
use shdebias::par;
use shdebias::sh_lighting::{sphere_normal_map, ImagePlane, NormalMap, RgbImage, ShCoeffs};
use shdebias::skin_tone::ingest_labels;
use shdebias::synthetic_faces::{generate_corpus, read_item, read_truth, write_corpus, CorpusConfig, LABELS_FILE};
use shdebias::{magnitude_scaling::FaceMask, SkinTone};

use crate::cli::*;
use crate::{usage, Failure};

pub const ALIGNMENT_STATS_FILE: &str = "alignment_stats.json";
pub const CLASS_MAGNITUDES_FILE: &str = "class_magnitudes.json";
pub const SCALE_REPORT_FILE: &str = "scale_report.json";

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value).map_err(shdebias::Error::from)? + "\n")?;
    Ok(())
}

pub(crate) fn read_json_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub(crate) fn read_records(path: &Path) -> Result<Vec<CoeffRecord>, Failure> {
    read_coeffs(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub(crate) fn tone_of(r: &CoeffRecord) -> Result<SkinTone, Failure> {
    r.class
        .ok_or_else(|| Failure::Runtime(format!("record `{}` has no class", r.id)))
}

pub(crate) fn normalized(r: &CoeffRecord) -> Result<NormalizedCoeffs, Failure> {
    let n = match r.kind {
        None | Some(CoeffKind::Raw) => normalize_dc(&ShCoeffs::new(r.coeffs)?),
        Some(CoeffKind::Normalized) => NormalizedCoeffs::new(r.coeffs),
        Some(CoeffKind::Aligned) => {
            return Err(Failure::Runtime(format!("record `{}` is already aligned", r.id)));
        }
    };
    n.map_err(|e| Failure::Runtime(format!("{}: {e}", r.id)))
}

/// A stored corpus item with its label.
pub(crate) struct CorpusItem {
    pub id: String,
    pub tone: SkinTone,
    pub image: RgbImage,
    pub mask: FaceMask,
}

pub(crate) fn corpus_labels(dir: &Path) -> Result<BTreeMap<String, SkinTone>, Failure> {
    let path = dir.join(LABELS_FILE);
    let f = fs::File::open(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    ingest_labels(f).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub(crate) fn load_items(dir: &Path, ids: &[(String, SkinTone)]) -> Result<Vec<CorpusItem>, Failure> {
    par::try_map_slice(ids, |(id, tone)| {
        let (image, mask) = read_item(dir, id).map_err(|e| Failure::Runtime(format!("item `{id}`: {e}")))?;
        Ok(CorpusItem {
            id: id.clone(),
            tone: *tone,
            image,
            mask,
        })
    })
}

fn normals_for(img: &RgbImage) -> Result<NormalMap, Failure> {
    if img.width() != img.height() {
        return Err(Failure::Runtime(format!("image is {}x{}, expected square", img.width(), img.height())));
    }
    Ok(sphere_normal_map(img.width())?)
}

pub fn synth_gen(a: &SynthGenArgs) -> Result<(), Failure> {
    if !(1..=8).contains(&a.bit_depth) {
        return usage(format!("--bit-depth {} outside 1..=8 (corpus images are 8-bit PNG)", a.bit_depth));
    }
    let sensor = SensorModel {
        bit_depth: a.bit_depth,
        noise_sigma: a.noise_sigma,
        seed: 0,
    };
    let cfg = CorpusConfig::new(a.per_class, a.resolution, sensor, a.seed);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let corpus = generate_corpus(&cfg)?;
    write_corpus(&a.out, &cfg, &corpus)?;
    eprintln!("wrote {} items to {}", corpus.len(), a.out.display());
    Ok(())
}

pub fn estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let ec = EstimatorConfig {
        ridge_lambda: a.lambda,
        reference_albedo: a.reference_albedo,
        prior_light: ShCoeffs::ambient(a.prior_dc),
        sensor: SensorModel::default(),
    };
    ec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(a.prior_dc.is_finite()) {
        return usage("--prior-dc must be finite");
    }
    let labels: Vec<(String, SkinTone)> = corpus_labels(&a.corpus)?.into_iter().collect();
    let truth = if a.unbiased { Some(read_truth(&a.corpus)?) } else { None };
    let truth_map = truth.as_ref().map(|t| t.by_id());

    let records = par::try_map_slice(&labels, |(id, tone)| -> Result<CoeffRecord, Failure> {
        let fail = |e: &dyn std::fmt::Display| Failure::Runtime(format!("item `{id}`: {e}"));
        let (image, _) = read_item(&a.corpus, id).map_err(|e| fail(&e))?;
        let normals = normals_for(&image).map_err(|e| fail(&e))?;
        let light = match &truth_map {
            Some(t) => {
                let rec = t.get(id.as_str()).ok_or_else(|| fail(&"missing from truth.json"))?;
                let samples = samples_from_image(image.red(), &normals).map_err(|e| fail(&e))?;
                fit_sh_least_squares(&samples, rec.albedo).map_err(|e| fail(&e))?
            }
            None => biased_estimate(image.red(), &normals, &ec).map_err(|e| fail(&e))?,
        };
        Ok(CoeffRecord {
            id: id.clone(),
            coeffs: light.to_array(),
            class: Some(*tone),
            kind: Some(CoeffKind::Raw),
        })
    })?;
    write_coeffs(&a.out, &records)?;
    eprintln!("estimated {} lights -> {}", records.len(), a.out.display());
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Result<(), Failure> {
    let records = read_records(&a.coeffs)?;
    let mut corpus = Vec::with_capacity(records.len());
    let mut ids = Vec::with_capacity(records.len());
    for r in &records {
        let tone = tone_of(r)?;
        corpus.push((normalized(r)?, tone));
        ids.push((r.id.clone(), tone));
    }
    let stats = compute_alignment_stats(&corpus)?;

    ids.sort();
    let items = load_items(&a.corpus, &ids)?;
    let mag_items: Vec<MagnitudeItem> = items
        .iter()
        .map(|it| MagnitudeItem {
            image: it.image.red(),
            mask: &it.mask,
            tone: it.tone,
        })
        .collect();
    let domain = match a.magnitude_domain {
        DomainArg::Linear => MagnitudeDomain::Linear,
        DomainArg::Encoded => MagnitudeDomain::Encoded,
    };
    let mags = class_magnitude_means(&mag_items, domain)?;

    fs::create_dir_all(&a.out_dir)?;
    fs::write(a.out_dir.join(ALIGNMENT_STATS_FILE), stats.to_json()?)?;
    fs::write(a.out_dir.join(CLASS_MAGNITUDES_FILE), mags.to_json()?)?;
    eprintln!(
        "stats over {} dark / {} non-dark items -> {}",
        stats.n_d,
        stats.n_nd,
        a.out_dir.display()
    );
    Ok(())
}

pub fn align_cmd(a: &AlignArgs) -> Result<(), Failure> {
    let stats = AlignmentStats::from_json(&read_json_file(&a.stats)?)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", a.stats.display())))?;
    let records = read_records(&a.coeffs)?;
    let out = records
        .iter()
        .map(|r| {
            let tone = tone_of(r)?;
            Ok(CoeffRecord {
                id: r.id.clone(),
                coeffs: align(&normalized(r)?, tone, &stats).to_array(),
                class: Some(tone),
                kind: Some(CoeffKind::Aligned),
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    write_coeffs(&a.out, &out)?;
    eprintln!("aligned {} records -> {}", out.len(), a.out.display());
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<(), Failure> {
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iterations,
        seed: a.seed,
        ..TsneConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let raw = read_records(&a.raw)?;
    let aligned: BTreeMap<String, CoeffRecord> =
        read_records(&a.aligned)?.into_iter().map(|r| (r.id.clone(), r)).collect();
    let labels = raw.iter().map(tone_of).collect::<Result<Vec<_>, _>>()?;
    let picked = analysis_protocol(&labels, a.per_class, a.seed)?;

    let ids: Vec<String> = picked.iter().map(|&i| raw[i].id.clone()).collect();
    let tones: Vec<SkinTone> = picked.iter().map(|&i| labels[i]).collect();
    let raw_feats: Vec<Vec<f64>> = picked.iter().map(|&i| raw[i].coeffs.to_vec()).collect();
    let band0: Vec<f64> = picked.iter().map(|&i| raw[i].coeffs[0]).collect();
    let norm_feats = picked
        .iter()
        .map(|&i| Ok(normalized(&raw[i])?.bands().to_vec()))
        .collect::<Result<Vec<_>, Failure>>()?;
    let aligned_feats = ids
        .iter()
        .map(|id| {
            aligned
                .get(id)
                .map(|r| r.coeffs[1..].to_vec())
                .ok_or_else(|| Failure::Runtime(format!("`{id}` missing from {}", a.aligned.display())))
        })
        .collect::<Result<Vec<_>, Failure>>()?;

    let project = |feats: &[Vec<f64>]| -> Result<Vec<[f64; 2]>, Failure> {
        Ok(match a.method {
            EmbedMethod::Tsne => tsne(feats, &cfg)?,
            EmbedMethod::Pca => pca2(feats)?,
        })
    };
    let method = match a.method {
        EmbedMethod::Tsne => "t-SNE",
        EmbedMethod::Pca => "PCA",
    };
    let plots = [
        ("raw_sh", format!("raw SH coefficients ({method})"), project(&raw_feats)?),
        ("band0_strip", "band-0 (DC) with uniform jitter".to_string(), band0_scatter(&band0, a.seed)?),
        ("bands1_8", format!("DC-normalized bands 1-8 ({method})"), project(&norm_feats)?),
        ("aligned", format!("aligned bands 1-8 ({method})"), project(&aligned_feats)?),
    ];
    fs::create_dir_all(&a.out_dir)?;
    for (stem, title, coords) in plots {
        let points = label_points(&coords, &ids, &tones)?;
        emit_scatter(&points, &a.out_dir, stem, &title)?;
    }
    eprintln!("wrote 4 scatter pairs over {} points -> {}", ids.len(), a.out_dir.display());
    Ok(())
}

/// Round to the 8-bit grid the PNG writer stores.
fn quantize8(img: &RgbImage) -> Result<RgbImage, Failure> {
    let planes = img.planes().clone().map(|p| {
        let px = p.pixels().iter().map(|v| (v * 255.0).round() / 255.0).collect();
        ImagePlane::new(p.width(), p.height(), px, p.encoding())
    });
    let [r, g, b] = planes;
    Ok(RgbImage::new(r?, g?, b?)?)
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct ClassScaleSummary {
    pub count: usize,
    pub mean_s: f64,
    pub magnitude_std_before: f64,
    pub magnitude_std_after: f64,
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct ScaleItem {
    pub id: String,
    pub class: SkinTone,
    pub s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct ScaleReport {
    pub schema: &'static str,
    pub domain: MagnitudeDomain,
    pub classes: BTreeMap<SkinTone, ClassScaleSummary>,
    pub items: Vec<ScaleItem>,
}

fn population_std(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / v.len() as f64;
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    (sq.iter().sum::<f64>() / v.len() as f64).sqrt()
}

/// Divides every image by its scale factor. Returns the rescaled images
/// (on the stored 8-bit grid) and per-class magnitude spreads.
pub(crate) fn rescale_corpus(
    items: &[CorpusItem],
    cm: &ClassMagnitudes,
) -> Result<(Vec<RgbImage>, ScaleReport), Failure> {
    let scaled = par::try_map_slice(items, |it| -> Result<(f64, f64, f64, RgbImage), Failure> {
        let m = illum_magnitude_in(it.image.red(), &it.mask, cm.domain)?;
        let class = cm.get(it.tone)?;
        let s = m / class.mean_m;
        let out = quantize8(&apply_scale_rgb(&it.image, 1.0 / s)?)?;
        let m_after = illum_magnitude_in(out.red(), &it.mask, cm.domain)?;
        Ok((s, m, m_after, out))
    })?;
    let mut classes = BTreeMap::new();
    for tone in SkinTone::ALL {
        let group: Vec<&(f64, f64, f64, RgbImage)> =
            items.iter().zip(&scaled).filter(|(it, _)| it.tone == tone).map(|(_, x)| x).collect();
        if group.is_empty() {
            continue;
        }
        let s: Vec<f64> = group.iter().map(|g| g.0).collect();
        let mut s_sorted = s.clone();
        s_sorted.sort_by(f64::total_cmp);
        classes.insert(
            tone,
            ClassScaleSummary {
                count: group.len(),
                mean_s: s_sorted.iter().sum::<f64>() / s.len() as f64,
                magnitude_std_before: population_std(&group.iter().map(|g| g.1).collect::<Vec<_>>()),
                magnitude_std_after: population_std(&group.iter().map(|g| g.2).collect::<Vec<_>>()),
            },
        );
    }
    let report = ScaleReport {
        schema: SCHEMA_VERSION,
        domain: cm.domain,
        classes,
        items: items
            .iter()
            .zip(&scaled)
            .map(|(it, x)| ScaleItem {
                id: it.id.clone(),
                class: it.tone,
                s: x.0,
            })
            .collect(),
    };
    Ok((scaled.into_iter().map(|x| x.3).collect(), report))
}

pub(crate) fn read_magnitudes(path: &Path) -> Result<ClassMagnitudes, Failure> {
    ClassMagnitudes::from_json(&read_json_file(path)?).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub fn relight_scale(a: &RelightScaleArgs) -> Result<(), Failure> {
    let cm = read_magnitudes(&a.magnitudes)?;
    let labels: Vec<(String, SkinTone)> = corpus_labels(&a.corpus)?.into_iter().collect();
    let items = load_items(&a.corpus, &labels)?;
    let (images, report) = rescale_corpus(&items, &cm)?;
    let dir = a.out.join("images");
    fs::create_dir_all(&dir)?;
    let pairs: Vec<(&CorpusItem, &RgbImage)> = items.iter().zip(&images).collect();
    par::try_map_slice(&pairs, |(it, img)| write_png_rgb(&dir.join(format!("{}.png", it.id)), img))?;
    write_json(&a.out.join(SCALE_REPORT_FILE), &report)?;
    for (tone, c) in &report.classes {
        println!(
            "{tone:<6} n={:<4} mean s={:.12} magnitude std {:.6} -> {:.6}",
            c.count, c.mean_s, c.magnitude_std_before, c.magnitude_std_after
        );
    }
    Ok(())
}
