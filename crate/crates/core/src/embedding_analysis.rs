//! Exact t-SNE, a PCA projection and the band-0 strip scatter.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::par;
use crate::skin_tone::SkinTone;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub label: SkinTone,
}

impl EmbedPoint {
    pub fn new(id: impl Into<String>, x: f64, y: f64, label: SkinTone) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Validation(format!("non-finite coordinate ({x}, {y})")));
        }
        Ok(Self { id: id.into(), x, y, label })
    }
}

/// Attaches ids and labels to 2-d coordinates.
pub fn label_points(coords: &[[f64; 2]], ids: &[String], labels: &[SkinTone]) -> Result<Vec<EmbedPoint>> {
    if coords.len() != ids.len() || coords.len() != labels.len() {
        return Err(precondition("coords, ids and labels differ in length"));
    }
    coords
        .iter()
        .zip(ids)
        .zip(labels)
        .map(|((c, id), l)| EmbedPoint::new(id.clone(), c[0], c[1], *l))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity > 1.0) || !self.perplexity.is_finite() {
            return Err(precondition(format!("perplexity must be > 1, got {}", self.perplexity)));
        }
        if !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) {
            return Err(precondition("learning_rate must be > 0 and early_exaggeration >= 1"));
        }
        if !(0.0..1.0).contains(&self.initial_momentum) || !(0.0..1.0).contains(&self.final_momentum) {
            return Err(precondition("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub const PERPLEXITY_TOL: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 50;

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(precondition("points must be non-empty vectors"));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(precondition(format!("point {i} has dimension {} (expected {d})", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(precondition(format!("point {i} is not finite")));
        }
    }
    Ok(d)
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    par::map_slice(points, |a| {
        points
            .iter()
            .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
            .collect()
    })
}

/// Conditional distribution `p(j|i)` with entropy matched to `ln(perplexity)`.
fn conditional_row(dist: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let d_min = dist
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = dist.iter().map(|v| v - d_min).collect();
    let mut beta = 1.0;
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut row = vec![0.0; dist.len()];
    for _ in 0..MAX_BISECTION_STEPS {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, d) in shifted.iter().enumerate() {
            let p = if j == i { 0.0 } else { (-beta * d).exp() };
            row[j] = p;
            sum += p;
            weighted += d * p;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        let diff = entropy - target;
        if diff.abs() < PERPLEXITY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    row
}

/// Rows of `p(j|i)`, one per point, each matched to the target perplexity.
pub fn conditional_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<Vec<f64>>> {
    check_points(points)?;
    if !(perplexity > 1.0) || (points.len() as f64) <= 3.0 * perplexity {
        return Err(precondition(format!(
            "t-SNE needs n > 3 * perplexity (n = {}, perplexity = {perplexity}); lower the perplexity",
            points.len()
        )));
    }
    let dist = squared_distances(points);
    Ok(par::map_range(points.len(), |i| conditional_row(&dist[i], i, perplexity)))
}

/// Perplexity `exp(H)` realised by one conditional row.
pub fn row_perplexity(row: &[f64]) -> f64 {
    let h: f64 = row.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    h.exp()
}

/// Symmetrised joint affinities `(p(j|i) + p(i|j)) / 2n`, row-major `n * n`.
pub fn joint_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let cond = conditional_affinities(points, perplexity)?;
    let n = cond.len();
    let denom = 2.0 * n as f64;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i][j] + cond[j][i]) / denom;
        }
    }
    Ok(p)
}

/// Exact O(n^2) t-SNE into two dimensions.
pub fn tsne(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<Vec<[f64; 2]>> {
    cfg.validate()?;
    let p = joint_affinities(points, cfg.perplexity)?;
    let n = points.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    for iter in 0..cfg.iterations {
        let early = iter < cfg.exaggeration_iterations;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { cfg.initial_momentum } else { cfg.final_momentum };

        let kernel: Vec<Vec<f64>> = par::map_range(n, |i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let dx = y[i][0] - y[j][0];
                        let dy = y[i][1] - y[j][1];
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        });
        let z: f64 = kernel.iter().map(|row| row.iter().sum::<f64>()).sum();

        let grad: Vec<[f64; 2]> = par::map_range(n, |i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                let k = kernel[i][j];
                let coeff = (exaggeration * p[i * n + j] - k / z) * k;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        });

        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grad[i][c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(0.01);
                update[i][c] = momentum * update[i][c] - cfg.learning_rate * gains[i][c] * grad[i][c];
                y[i][c] += update[i][c];
            }
        }
        for c in 0..2 {
            let mean = y.iter().map(|v| v[c]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|v| v[c] -= mean);
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("t-SNE diverged".into()));
    }
    Ok(y)
}

/// Projection onto the top two principal components.
///
/// Each component is signed so that its largest-magnitude loading is
/// positive. One-dimensional input yields a zero second coordinate.
pub fn pca2(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    if points.len() < 2 {
        return Err(precondition(format!("pca2 needs at least 2 points, got {}", points.len())));
    }
    let d = check_points(points)?;
    let n = points.len();
    let mean: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, k| points[i][k] - mean[k]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let components: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if lead < 0.0 {
                v.iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();

    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let mut out = [0.0; 2];
            for (c, comp) in components.iter().enumerate() {
                out[c] = row.iter().zip(comp).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect())
}

/// `x` = the value, `y` = seeded uniform jitter in `[0, 1)`.
pub fn band0_scatter(values: &[f64], seed: u64) -> Result<Vec<[f64; 2]>> {
    if values.is_empty() {
        return Err(precondition("band0_scatter needs at least one value"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(values.iter().map(|v| [*v, rng.random::<f64>()]).collect())
}

/// Seeded sample of `per_class` indices from each class, without replacement.
///
/// Classes are drawn in the order fair, medium, tan, dark from one stream;
/// the returned indices are ascending.
pub fn analysis_protocol(labels: &[SkinTone], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(per_class * SkinTone::ALL.len());
    for tone in SkinTone::ALL {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == tone).collect();
        if members.len() < per_class {
            return Err(Error::InsufficientGroup {
                group: tone.as_str().into(),
                count: members.len(),
                required: per_class,
            });
        }
        let mut picks: Vec<usize> = sample(&mut rng, members.len(), per_class).into_iter().collect();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|k| members[k]));
    }
    chosen.sort_unstable();
    Ok(chosen)
}
