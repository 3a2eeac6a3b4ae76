//! DC normalization and statistical alignment of SH coefficients.
//!
//! Lights are first divided by their DC term, removing the magnitude bias.
//! Dark-tone coefficients (indices 1..9) are then mapped onto the non-dark
//! moments: `l'[i] = (l[i] - mu_d[i]) / sigma_d[i] * sigma_nd[i] + mu_nd[i]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::SCHEMA_VERSION;
use crate::numeric::{population_std, stable_mean};
use crate::sh_lighting::{ShCoeffs, SH_COUNT};
use crate::skin_tone::SkinTone;

pub const DC_EPSILON: f64 = 1e-9;
pub const SIGMA_FLOOR: f64 = 1e-8;
/// Number of aligned indices (1..9).
pub const ALIGNED_DIMS: usize = SH_COUNT - 1;

/// Coefficients divided by their DC term; `c[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCoeffs([f64; SH_COUNT]);

/// Normalized coefficients after alignment; `c[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedCoeffs([f64; SH_COUNT]);

macro_rules! unit_dc_coeffs {
    ($t:ident) => {
        impl $t {
            pub fn new(c: [f64; SH_COUNT]) -> Result<Self> {
                if c[0] != 1.0 {
                    return Err(Error::Validation(format!("c[0] = {} (must be 1)", c[0])));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation("non-finite coefficient".into()));
                }
                Ok(Self(c))
            }

            pub fn as_array(&self) -> &[f64; SH_COUNT] {
                &self.0
            }

            pub fn to_array(self) -> [f64; SH_COUNT] {
                self.0
            }

            /// Indices 1..9.
            pub fn bands(&self) -> &[f64] {
                &self.0[1..]
            }
        }
    };
}

unit_dc_coeffs!(NormalizedCoeffs);
unit_dc_coeffs!(AlignedCoeffs);

impl NormalizedCoeffs {
    pub fn as_light(&self) -> ShCoeffs {
        ShCoeffs::new(self.0).expect("finite by construction")
    }
}

impl AlignedCoeffs {
    pub fn as_light(&self) -> ShCoeffs {
        ShCoeffs::new(self.0).expect("finite by construction")
    }
}

/// `l / l[0]`.
pub fn normalize_dc(l: &ShCoeffs) -> Result<NormalizedCoeffs> {
    let dc = l.dc();
    if !(dc.abs() > DC_EPSILON) {
        return Err(Error::DegenerateLight(dc));
    }
    let mut c = l.to_array().map(|v| v / dc);
    c[0] = 1.0;
    NormalizedCoeffs::new(c)
}

/// Per-index moments of the dark and non-dark groups over indices 1..9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub schema: String,
    pub mu_d: [f64; ALIGNED_DIMS],
    pub sigma_d: [f64; ALIGNED_DIMS],
    pub mu_nd: [f64; ALIGNED_DIMS],
    pub sigma_nd: [f64; ALIGNED_DIMS],
    pub n_d: usize,
    pub n_nd: usize,
}

impl AlignmentStats {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported schema `{}`", self.schema)));
        }
        let all = [&self.mu_d, &self.sigma_d, &self.mu_nd, &self.sigma_nd];
        if all.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation("non-finite statistic".into()));
        }
        if self.sigma_d.iter().chain(&self.sigma_nd).any(|s| *s < SIGMA_FLOOR) {
            return Err(Error::Validation(format!("sigma below floor {SIGMA_FLOOR}")));
        }
        if self.n_d < 2 || self.n_nd < 2 {
            return Err(Error::Validation(format!("group counts {} / {}", self.n_d, self.n_nd)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: Self = serde_json::from_str(s)?;
        stats.validate()?;
        Ok(stats)
    }
}

fn group_moments(items: &[&NormalizedCoeffs]) -> ([f64; ALIGNED_DIMS], [f64; ALIGNED_DIMS]) {
    let mut mu = [0.0; ALIGNED_DIMS];
    let mut sigma = [0.0; ALIGNED_DIMS];
    for k in 0..ALIGNED_DIMS {
        let col: Vec<f64> = items.iter().map(|c| c.0[k + 1]).collect();
        mu[k] = stable_mean(&col);
        sigma[k] = population_std(&col).max(SIGMA_FLOOR);
    }
    (mu, sigma)
}

/// Dark vs non-dark (fair, medium, tan) moments. Independent of corpus order.
pub fn compute_alignment_stats(corpus: &[(NormalizedCoeffs, SkinTone)]) -> Result<AlignmentStats> {
    let dark: Vec<&NormalizedCoeffs> = corpus.iter().filter(|(_, t)| t.is_dark()).map(|(c, _)| c).collect();
    let other: Vec<&NormalizedCoeffs> = corpus.iter().filter(|(_, t)| !t.is_dark()).map(|(c, _)| c).collect();
    for (name, g) in [("dark", &dark), ("non-dark", &other)] {
        if g.len() < 2 {
            return Err(Error::InsufficientGroup {
                group: name.into(),
                count: g.len(),
                required: 2,
            });
        }
    }
    let (mu_d, sigma_d) = group_moments(&dark);
    let (mu_nd, sigma_nd) = group_moments(&other);
    Ok(AlignmentStats {
        schema: SCHEMA_VERSION.into(),
        mu_d,
        sigma_d,
        mu_nd,
        sigma_nd,
        n_d: dark.len(),
        n_nd: other.len(),
    })
}

/// Maps dark-tone coefficients onto non-dark moments; other tones pass through.
pub fn align(l_n: &NormalizedCoeffs, tone: SkinTone, stats: &AlignmentStats) -> AlignedCoeffs {
    if !tone.is_dark() {
        return AlignedCoeffs(l_n.0);
    }
    let mut c = l_n.0;
    for k in 0..ALIGNED_DIMS {
        c[k + 1] = (l_n.0[k + 1] - stats.mu_d[k]) / stats.sigma_d[k] * stats.sigma_nd[k] + stats.mu_nd[k];
    }
    AlignedCoeffs(c)
}

/// Inverse of [`align`].
pub fn unalign(l: &AlignedCoeffs, tone: SkinTone, stats: &AlignmentStats) -> NormalizedCoeffs {
    if !tone.is_dark() {
        return NormalizedCoeffs(l.0);
    }
    let mut c = l.0;
    for k in 0..ALIGNED_DIMS {
        c[k + 1] = (l.0[k + 1] - stats.mu_nd[k]) / stats.sigma_nd[k] * stats.sigma_d[k] + stats.mu_d[k];
    }
    NormalizedCoeffs(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separability {
    /// Centroid distance in units of the mean pooled per-index std.
    pub centroid_gap: f64,
    /// Two-fold cross-validated nearest-centroid accuracy, dark vs non-dark.
    pub nc_accuracy: f64,
}

fn centroid(points: &[&[f64]], dims: usize) -> Vec<f64> {
    (0..dims)
        .map(|k| stable_mean(&points.iter().map(|p| p[k]).collect::<Vec<_>>()))
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// How well dark and non-dark items separate in feature space.
///
/// Accuracy is two-fold cross-validated: within each group, items alternate
/// between the folds in input order; each fold is classified by the
/// centroids of the other. Leave-one-out is avoided because on a corpus whose
/// group means were matched exactly it scores every item wrong.
pub fn separability(features: &[Vec<f64>], tones: &[SkinTone]) -> Result<Separability> {
    if features.len() != tones.len() {
        return Err(crate::error::precondition("features and tones differ in length"));
    }
    let dims = features.first().map_or(0, Vec::len);
    if dims == 0 || features.iter().any(|f| f.len() != dims || f.iter().any(|v| !v.is_finite())) {
        return Err(crate::error::precondition("features must be non-empty, finite and of equal dimension"));
    }
    let mut groups: [Vec<&[f64]>; 2] = [Vec::new(), Vec::new()];
    let mut folds: [[Vec<&[f64]>; 2]; 2] = Default::default();
    for (f, t) in features.iter().zip(tones) {
        let g = usize::from(t.is_dark());
        folds[groups[g].len() % 2][g].push(f);
        groups[g].push(f);
    }
    for (g, name) in [(1, "dark"), (0, "non-dark")] {
        if groups[g].len() < 2 {
            return Err(Error::InsufficientGroup {
                group: name.into(),
                count: groups[g].len(),
                required: 2,
            });
        }
    }

    let c_nd = centroid(&groups[0], dims);
    let c_d = centroid(&groups[1], dims);
    let pooled: Vec<f64> = (0..dims)
        .map(|k| {
            let var = |g: &[&[f64]]| population_std(&g.iter().map(|p| p[k]).collect::<Vec<_>>()).powi(2);
            let (n0, n1) = (groups[0].len() as f64, groups[1].len() as f64);
            ((n0 * var(&groups[0]) + n1 * var(&groups[1])) / (n0 + n1)).sqrt()
        })
        .collect();
    let mean_pooled = pooled.iter().sum::<f64>() / dims as f64;
    let gap = dist2(&c_d, &c_nd).sqrt();
    let centroid_gap = if mean_pooled > 0.0 { gap / mean_pooled } else if gap > 0.0 { f64::INFINITY } else { 0.0 };

    let mut correct = 0usize;
    for test in 0..2 {
        let train = &folds[1 - test];
        let c = [centroid(&train[0], dims), centroid(&train[1], dims)];
        for (g, group) in folds[test].iter().enumerate() {
            for p in group {
                let predicted_dark = dist2(p, &c[1]) < dist2(p, &c[0]);
                if predicted_dark == (g == 1) {
                    correct += 1;
                }
            }
        }
    }
    Ok(Separability {
        centroid_gap,
        nc_accuracy: correct as f64 / features.len() as f64,
    })
}

/// Separability of 9-coefficient vectors using indices 1..9.
pub fn separability_coeffs(corpus: &[([f64; SH_COUNT], SkinTone)]) -> Result<Separability> {
    let features: Vec<Vec<f64>> = corpus.iter().map(|(c, _)| c[1..].to_vec()).collect();
    let tones: Vec<SkinTone> = corpus.iter().map(|(_, t)| *t).collect();
    separability(&features, &tones)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn light(c: [f64; 9]) -> ShCoeffs {
        ShCoeffs::new(c).unwrap()
    }

    fn nc(rest: [f64; 8]) -> NormalizedCoeffs {
        let mut c = [1.0; 9];
        c[1..].copy_from_slice(&rest);
        NormalizedCoeffs::new(c).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_dc(&light([2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(n.as_array(), &[1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let l = light([1.0, 0.3, -0.2, 0.1, 0.0, 0.5, 0.25, -1.0, 2.0]);
        assert_eq!(normalize_dc(&l).unwrap().as_array(), l.as_array());
        assert!(matches!(normalize_dc(&light([0.0; 9])), Err(Error::DegenerateLight(_))));
    }

    #[test]
    fn two_point_stats() {
        let mut rest = [0.0; 8];
        rest[0] = 0.2;
        let a = nc(rest);
        rest[0] = 0.4;
        let b = nc(rest);
        let corpus = vec![
            (a, SkinTone::Dark),
            (b, SkinTone::Dark),
            (a, SkinTone::Fair),
            (a, SkinTone::Tan),
        ];
        let s = compute_alignment_stats(&corpus).unwrap();
        assert_abs_diff_eq!(s.mu_d[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.sigma_d[0], 0.1, epsilon = 1e-15);
        assert_eq!(s.sigma_nd[0], SIGMA_FLOOR);
        assert_eq!((s.n_d, s.n_nd), (2, 2));
        assert!(s.sigma_d[1..].iter().all(|v| *v == SIGMA_FLOOR));
    }

    #[test]
    fn insufficient_groups() {
        let a = nc([0.0; 8]);
        let corpus = vec![(a, SkinTone::Dark), (a, SkinTone::Fair), (a, SkinTone::Medium)];
        assert!(matches!(
            compute_alignment_stats(&corpus),
            Err(Error::InsufficientGroup { group, .. }) if group == "dark"
        ));
    }

    fn stats_example() -> AlignmentStats {
        let mut s = AlignmentStats {
            schema: "v1".into(),
            mu_d: [0.0; 8],
            sigma_d: [1.0; 8],
            mu_nd: [0.0; 8],
            sigma_nd: [1.0; 8],
            n_d: 2,
            n_nd: 2,
        };
        s.mu_d[0] = 0.2;
        s.sigma_d[0] = 0.1;
        s.mu_nd[0] = 0.0;
        s.sigma_nd[0] = 0.2;
        s
    }

    #[test]
    fn align_examples() {
        let s = stats_example();
        let mut rest = [0.1; 8];
        rest[0] = 0.5;
        let l = nc(rest);
        assert_eq!(align(&l, SkinTone::Fair, &s).as_array(), l.as_array());
        let a = align(&l, SkinTone::Dark, &s);
        assert_abs_diff_eq!(a.as_array()[1], 0.6, epsilon = 1e-12);
        assert_eq!(a.as_array()[0], 1.0);

        let same = AlignmentStats {
            mu_nd: s.mu_d,
            sigma_nd: s.sigma_d,
            ..s.clone()
        };
        let a = align(&l, SkinTone::Dark, &same);
        for (x, y) in a.as_array().iter().zip(l.as_array()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-15);
        }
    }

    #[test]
    fn stats_json() {
        let s = stats_example();
        let js = s.to_json().unwrap();
        assert!(js.contains("\"schema\": \"v1\""));
        assert_eq!(AlignmentStats::from_json(&js).unwrap(), s);
        let mut bad = s.clone();
        bad.sigma_d[3] = 0.0;
        assert!(AlignmentStats::from_json(&bad.to_json().unwrap()).is_err());
    }

    fn gaussian_corpus(seed: u64, n_d: usize, n_nd: usize, shift: f64) -> Vec<(NormalizedCoeffs, SkinTone)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 0.25).unwrap();
        let mut out = Vec::new();
        for i in 0..(n_d + n_nd) {
            let dark = i < n_d;
            let rest = std::array::from_fn(|k| g.sample(&mut rng) + if dark { shift * (k as f64 + 1.0) / 8.0 } else { 0.0 });
            let tone = if dark { SkinTone::Dark } else { SkinTone::ALL[rng.random_range(0..3)] };
            out.push((nc(rest), tone));
        }
        out
    }

    #[test]
    fn stats_order_invariant() {
        let corpus = gaussian_corpus(1, 40, 90, 0.3);
        let mut shuffled = corpus.clone();
        shuffled.reverse();
        shuffled.swap(3, 77);
        assert_eq!(compute_alignment_stats(&corpus).unwrap(), compute_alignment_stats(&shuffled).unwrap());
    }

    #[test]
    fn moment_matching_is_exact() {
        let corpus = gaussian_corpus(2, 120, 360, 0.4);
        let stats = compute_alignment_stats(&corpus).unwrap();
        let aligned: Vec<(NormalizedCoeffs, SkinTone)> = corpus
            .iter()
            .map(|(c, t)| (NormalizedCoeffs::new(align(c, *t, &stats).to_array()).unwrap(), *t))
            .collect();
        let after = compute_alignment_stats(&aligned).unwrap();
        for k in 0..8 {
            assert_abs_diff_eq!(after.mu_d[k], stats.mu_nd[k], epsilon = 1e-9);
            assert_abs_diff_eq!(after.sigma_d[k], stats.sigma_nd[k], epsilon = 1e-9);
            assert_eq!(after.mu_nd[k], stats.mu_nd[k]);
        }
    }

    fn to_features(c: &[(NormalizedCoeffs, SkinTone)]) -> (Vec<Vec<f64>>, Vec<SkinTone>) {
        (c.iter().map(|(x, _)| x.bands().to_vec()).collect(), c.iter().map(|(_, t)| *t).collect())
    }

    #[test]
    fn separability_same_distribution_near_chance() {
        let c = gaussian_corpus(3, 500, 500, 0.0);
        let (f, t) = to_features(&c);
        let s = separability(&f, &t).unwrap();
        assert!((s.nc_accuracy - 0.5).abs() <= 0.1, "{}", s.nc_accuracy);
    }

    #[test]
    fn separability_far_groups() {
        // 10 pooled stds along the first axis
        let mut c = gaussian_corpus(4, 200, 200, 0.0);
        for (x, t) in c.iter_mut() {
            if t.is_dark() {
                let mut a = x.to_array();
                a[1] += 2.5;
                *x = NormalizedCoeffs::new(a).unwrap();
            }
        }
        let (f, t) = to_features(&c);
        let s = separability(&f, &t).unwrap();
        assert!(s.nc_accuracy >= 0.99);
        assert!(s.centroid_gap > 4.0);
    }

    #[test]
    fn alignment_removes_separability() {
        let c = gaussian_corpus(5, 500, 1500, 0.5);
        let (f, t) = to_features(&c);
        let before = separability(&f, &t).unwrap();
        assert!(before.nc_accuracy > 0.7);
        let stats = compute_alignment_stats(&c).unwrap();
        let aligned: Vec<Vec<f64>> = c.iter().map(|(x, t)| align(x, *t, &stats).bands().to_vec()).collect();
        let after = separability(&aligned, &t).unwrap();
        assert!((0.4..=0.6).contains(&after.nc_accuracy), "{}", after.nc_accuracy);
        assert!(after.centroid_gap < 1e-6);
    }

    #[test]
    fn separability_errors() {
        let c = gaussian_corpus(6, 1, 10, 0.0);
        let (f, t) = to_features(&c);
        assert!(matches!(separability(&f, &t), Err(Error::InsufficientGroup { .. })));
        assert!(separability(&f[..3], &t).is_err());
    }

    proptest! {
        #[test]
        fn normalize_idempotent_and_scale_invariant(
            dc in prop_oneof![0.01f64..10.0, -10.0f64..-0.01],
            rest in proptest::array::uniform8(-1.0f64..1.0),
            k in prop_oneof![0.1f64..10.0, -10.0f64..-0.1],
        ) {
            let mut c = [dc; 9];
            c[1..].copy_from_slice(&rest);
            let l = light(c);
            let n = normalize_dc(&l).unwrap();
            prop_assert_eq!(normalize_dc(&n.as_light()).unwrap(), n);
            let nk = normalize_dc(&l.scaled(k)).unwrap();
            for (a, b) in nk.as_array().iter().zip(n.as_array()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn align_is_invertible(rest in proptest::array::uniform8(-2.0f64..2.0),
                               mu_d in proptest::array::uniform8(-1.0f64..1.0),
                               sd in proptest::array::uniform8(1e-3f64..2.0),
                               mu_nd in proptest::array::uniform8(-1.0f64..1.0),
                               snd in proptest::array::uniform8(1e-3f64..2.0)) {
            let stats = AlignmentStats { schema: "v1".into(), mu_d, sigma_d: sd, mu_nd, sigma_nd: snd, n_d: 2, n_nd: 2 };
            let l = nc(rest);
            let back = unalign(&align(&l, SkinTone::Dark, &stats), SkinTone::Dark, &stats);
            for (a, b) in back.as_array().iter().zip(l.as_array()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
