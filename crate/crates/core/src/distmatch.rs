//! Matching the silver score distribution to the gold one.
//!
//! Regression tasks use a Gaussian KDE over scores and keep each silver pair
//! with probability `Q(s) = min(1, F_gold(s) / F_silver(s))`. Classification
//! tasks keep every silver positive and subsample negatives to the gold
//! positive/negative ratio.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::LabeledPair;

pub const GRID_POINTS: usize = 512;
pub const MIN_BANDWIDTH: f64 = 1e-3;
pub const DENSITY_FLOOR: f64 = 1e-10;
pub const MIN_KDE_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistError {
    #[error("need at least {MIN_KDE_SAMPLES} scores for KDE, got {0}")]
    TooFewScores(usize),
    #[error("all scores are identical ({0}); density is degenerate")]
    Degenerate(f64),
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("silver set has no positives at threshold {0}")]
    NoPositives(f64),
    #[error(
        "gold ratio needs at least one positive and one negative (got {positives}/{negatives})"
    )]
    BadRatio { positives: usize, negatives: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("silver set is empty")]
    EmptySilver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityKind {
    Gold,
    Silver,
}

/// Reflected Gaussian KDE tabulated on an even grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    pub kind: DensityKind,
    scores: Vec<f64>,
    bandwidth: f64,
    grid: Vec<f64>,
}

pub fn grid_point(i: usize) -> f64 {
    i as f64 / (GRID_POINTS - 1) as f64
}

/// Linear-interpolation quantile (the "type 7" definition) of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, floored at [`MIN_BANDWIDTH`].
pub fn silverman_bandwidth(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = var.sqrt().min(iqr / 1.34);
    (0.9 * spread * n.powf(-0.2)).max(MIN_BANDWIDTH)
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gaussian(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Density at `x` with mirror images of every sample about 0 and 1.
fn reflected_density(scores: &[f64], h: f64, x: f64) -> f64 {
    let mut acc = 0.0;
    for &s in scores {
        acc += gaussian((x - s) / h) + gaussian((x + s) / h) + gaussian((x - (2.0 - s)) / h);
    }
    acc / (scores.len() as f64 * h)
}

impl DensityModel {
    pub fn fit(kind: DensityKind, scores: &[f64]) -> Result<Self, DistError> {
        if scores.len() < MIN_KDE_SAMPLES {
            return Err(DistError::TooFewScores(scores.len()));
        }
        if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(DistError::OutOfRange(bad));
        }
        if scores.iter().all(|&s| s == scores[0]) {
            return Err(DistError::Degenerate(scores[0]));
        }
        let bandwidth = silverman_bandwidth(scores);
        let grid = (0..GRID_POINTS)
            .map(|i| reflected_density(scores, bandwidth, grid_point(i)))
            .collect();
        Ok(Self {
            kind,
            scores: scores.to_vec(),
            bandwidth,
            grid,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Density at `s`, linearly interpolated between grid points.
    pub fn density(&self, s: f64) -> Result<f64, DistError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(DistError::OutOfRange(s));
        }
        let pos = s * (GRID_POINTS - 1) as f64;
        let lo = (pos.floor() as usize).min(GRID_POINTS - 2);
        let t = pos - lo as f64;
        Ok(self.grid[lo] * (1.0 - t) + self.grid[lo + 1] * t)
    }

    /// Trapezoid integral of the tabulated density over `[0, 1]`.
    pub fn grid_mass(&self) -> f64 {
        trapezoid(&self.grid)
    }
}

pub fn fit_kde(kind: DensityKind, scores: &[f64]) -> Result<DensityModel, DistError> {
    DensityModel::fit(kind, scores)
}

fn trapezoid(values: &[f64]) -> f64 {
    let dx = 1.0 / (values.len() - 1) as f64;
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dx * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Branch rule on raw density values: 1 when gold dominates, else the ratio.
pub fn acceptance_from_densities(gold: f64, silver: f64) -> f64 {
    if gold >= silver {
        1.0
    } else {
        (gold / silver.max(DENSITY_FLOOR)).clamp(0.0, 1.0)
    }
}

/// Retention probability `Q(s)` for a silver pair with score `s`.
pub fn acceptance_probability(
    gold: &DensityModel,
    silver: &DensityModel,
    s: f64,
) -> Result<f64, DistError> {
    Ok(acceptance_from_densities(
        gold.density(s)?,
        silver.density(s)?,
    ))
}

/// Uniform draw for item `index` from an independent ChaCha stream, so the
/// accept/reject decision for a pair does not depend on evaluation order.
pub fn item_uniform(seed: u64, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.gen::<f64>()
}

/// Keeps each silver pair independently with probability `Q(score)`.
pub fn kde_filter(
    gold_scores: &[f64],
    silver: &[LabeledPair],
    seed: u64,
) -> Result<Vec<LabeledPair>, DistError> {
    if silver.is_empty() {
        return Err(DistError::EmptySilver);
    }
    let gold = fit_kde(DensityKind::Gold, gold_scores)?;
    let silver_scores: Vec<f64> = silver.iter().map(|p| p.score).collect();
    let silver_model = fit_kde(DensityKind::Silver, &silver_scores)?;
    let mut kept = Vec::new();
    for (i, lp) in silver.iter().enumerate() {
        let q = acceptance_probability(&gold, &silver_model, lp.score)?;
        if q >= 1.0 || item_uniform(seed, i) < q {
            kept.push(*lp);
        }
    }
    Ok(kept)
}

/// Positive/negative counts in the gold training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioSpec {
    pub positives: usize,
    pub negatives: usize,
}

impl RatioSpec {
    pub fn new(positives: usize, negatives: usize) -> Result<Self, DistError> {
        if positives == 0 || negatives == 0 {
            return Err(DistError::BadRatio {
                positives,
                negatives,
            });
        }
        Ok(Self {
            positives,
            negatives,
        })
    }

    /// Counts gold labels, treating 1.0 as positive.
    pub fn from_gold(gold: &[LabeledPair]) -> Result<Self, DistError> {
        let positives = gold.iter().filter(|p| p.score >= 0.5).count();
        Self::new(positives, gold.len() - positives)
    }

    /// Negatives to keep alongside `silver_positives`, before capping.
    pub fn target_negatives(&self, silver_positives: usize) -> usize {
        let target = silver_positives as f64 * self.negatives as f64 / self.positives as f64;
        target.round_ties_even() as usize
    }
}

/// Keeps all silver positives (`score >= threshold`) and a uniform sample of
/// negatives sized to the gold ratio. Output preserves input order.
pub fn ratio_filter(
    spec: RatioSpec,
    silver: &[LabeledPair],
    threshold: f64,
    seed: u64,
) -> Result<Vec<LabeledPair>, DistError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(DistError::BadThreshold(threshold));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..silver.len()).partition(|&i| silver[i].score >= threshold);
    if pos.is_empty() {
        return Err(DistError::NoPositives(threshold));
    }
    let want = spec.target_negatives(pos.len()).min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; silver.len()];
    for &i in &pos {
        keep[i] = true;
    }
    for j in sample(&mut rng, neg.len(), want) {
        keep[neg[j]] = true;
    }
    Ok(silver
        .iter()
        .zip(keep)
        .filter_map(|(lp, k)| k.then_some(*lp))
        .collect())
}

/// `KL(gold || silver)` by trapezoid rule on the shared grid, after flooring
/// both densities and renormalizing each to unit mass.
pub fn kl_divergence(gold: &DensityModel, silver: &DensityModel) -> f64 {
    let g: Vec<f64> = gold.grid.iter().map(|d| d.max(DENSITY_FLOOR)).collect();
    let s: Vec<f64> = silver.grid.iter().map(|d| d.max(DENSITY_FLOOR)).collect();
    let (zg, zs) = (trapezoid(&g), trapezoid(&s));
    let integrand: Vec<f64> = g
        .iter()
        .zip(&s)
        .map(|(gi, si)| {
            let (p, q) = (gi / zg, si / zs);
            p * (p / q).ln()
        })
        .collect();
    trapezoid(&integrand).max(0.0)
}

/// Convenience: KL between the KDEs of two raw score samples.
pub fn kl_between(gold_scores: &[f64], silver_scores: &[f64]) -> Result<f64, DistError> {
    let g = fit_kde(DensityKind::Gold, gold_scores)?;
    let s = fit_kde(DensityKind::Silver, silver_scores)?;
    Ok(kl_divergence(&g, &s))
}

/// Equal-width histogram over `[0, 1]`, normalized to a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistBin>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub density: f64,
}

pub fn density_report(scores: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let b = ((s * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let width = 1.0 / bins as f64;
    let n = scores.len().max(1) as f64;
    Histogram {
        bins: counts
            .iter()
            .enumerate()
            .map(|(i, &c)| HistBin {
                lo: i as f64 * width,
                hi: (i + 1) as f64 * width,
                density: c as f64 / (n * width),
            })
            .collect(),
        count: scores.len(),
    }
}

/// Fraction of scores strictly below `cut`.
pub fn mass_below(scores: &[f64], cut: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s < cut).count() as f64 / scores.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{SentenceId, SentencePair};
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn silver_with(scores: &[f64]) -> Vec<LabeledPair> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let pair = SentencePair::new(SentenceId(0), SentenceId(i as u32 + 1)).unwrap();
                LabeledPair::silver(pair, s)
            })
            .collect()
    }

    #[test]
    fn degenerate_and_small_inputs_rejected() {
        assert_eq!(
            fit_kde(DensityKind::Gold, &[0.5; 10]),
            Err(DistError::Degenerate(0.5))
        );
        assert_eq!(
            fit_kde(DensityKind::Gold, &[0.1, 0.2, 0.3]),
            Err(DistError::TooFewScores(3))
        );
        assert_eq!(
            fit_kde(DensityKind::Gold, &[0.1, 0.2, 0.3, 0.4, 1.5]),
            Err(DistError::OutOfRange(1.5))
        );
    }

    #[test]
    fn symmetric_sample_gives_symmetric_density() {
        let scores: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { 0.2 } else { 0.8 })
            .collect();
        let m = fit_kde(DensityKind::Gold, &scores).unwrap();
        for i in 0..GRID_POINTS {
            assert!((m.grid()[i] - m.grid()[GRID_POINTS - 1 - i]).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_mass_is_close_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.4, 0.2).unwrap();
        let scores: Vec<f64> = (0..300)
            .map(|_| f64::clamp(normal.sample(&mut rng), 0.0, 1.0))
            .collect();
        let m = fit_kde(DensityKind::Gold, &scores).unwrap();
        assert!((m.grid_mass() - 1.0).abs() < 0.02, "{}", m.grid_mass());
        assert!(m.grid().iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn silverman_uses_smaller_spread() {
        // IQR/1.34 is far below the std here
        let mut s = vec![0.5; 20];
        s.extend([0.0, 1.0, 0.49, 0.51]);
        let h = silverman_bandwidth(&s);
        assert!(h >= MIN_BANDWIDTH);
        let lots: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let sd = (lots.iter().map(|x| (x - 0.5).powi(2)).sum::<f64>() / 99.0).sqrt();
        let iqr = quantile(&lots, 0.75) - quantile(&lots, 0.25);
        assert_relative_eq!(
            silverman_bandwidth(&lots),
            0.9 * sd.min(iqr / 1.34) * 100f64.powf(-0.2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn acceptance_branches() {
        assert_eq!(acceptance_from_densities(0.4, 0.2), 1.0);
        assert_relative_eq!(acceptance_from_densities(0.1, 0.4), 0.25);
        assert_eq!(acceptance_from_densities(0.3, 0.3), 1.0);
        assert_eq!(acceptance_from_densities(0.0, 0.0), 1.0);
    }

    #[test]
    fn acceptance_rejects_out_of_range() {
        let m = fit_kde(DensityKind::Gold, &[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
        assert_eq!(
            acceptance_probability(&m, &m, 1.2),
            Err(DistError::OutOfRange(1.2))
        );
        assert_eq!(acceptance_probability(&m, &m, 0.4).unwrap(), 1.0);
    }

    #[test]
    fn kde_filter_keeps_everything_when_gold_dominates() {
        // Same sample on both sides: Q == 1 at every score.
        let scores: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37) % 1.0).collect();
        let silver = silver_with(&scores);
        let kept = kde_filter(&scores, &silver, 7).unwrap();
        assert_eq!(kept, silver);
        assert_eq!(kde_filter(&scores, &[], 7), Err(DistError::EmptySilver));
    }

    #[test]
    fn kde_filter_is_reproducible_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gold: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
        let silver_scores: Vec<f64> = (0..400).map(|_| rng.gen::<f64>().powi(3)).collect();
        let silver = silver_with(&silver_scores);
        let a = kde_filter(&gold, &silver, 99).unwrap();
        let b = kde_filter(&gold, &silver, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.len() < silver.len());
        let mut it = silver.iter();
        assert!(a.iter().all(|x| it.any(|y| y == x)));
    }

    #[test]
    fn ratio_target_uses_banker_rounding() {
        let spec = RatioSpec::new(30, 70).unwrap();
        assert_eq!(spec.target_negatives(50), 117);
        // 3 * 1/2 = 1.5 -> 2, 5 * 1/2 = 2.5 -> 2
        let half = RatioSpec::new(2, 1).unwrap();
        assert_eq!(half.target_negatives(3), 2);
        assert_eq!(half.target_negatives(5), 2);
        assert!(RatioSpec::new(0, 3).is_err());
    }

    #[test]
    fn ratio_filter_examples() {
        let spec = RatioSpec::new(30, 70).unwrap();
        let mut scores = vec![0.9; 50];
        scores.extend(vec![0.1; 900]);
        let silver = silver_with(&scores);
        let kept = ratio_filter(spec, &silver, 0.5, 3).unwrap();
        let pos = kept.iter().filter(|p| p.score >= 0.5).count();
        assert_eq!(pos, 50);
        assert_eq!(kept.len() - pos, 117);
        assert_eq!(kept, ratio_filter(spec, &silver, 0.5, 3).unwrap());

        let few = silver_with(&[0.9, 0.9, 0.9, 0.2]);
        assert_eq!(ratio_filter(spec, &few, 0.5, 3).unwrap().len(), 4);

        let none = silver_with(&[0.1, 0.2, 0.3]);
        assert_eq!(
            ratio_filter(spec, &none, 0.5, 3),
            Err(DistError::NoPositives(0.5))
        );
        assert_eq!(
            ratio_filter(spec, &none, 1.0, 3),
            Err(DistError::BadThreshold(1.0))
        );
    }

    #[test]
    fn kl_of_identical_samples_is_zero() {
        let scores: Vec<f64> = (0..60).map(|i| ((i * 7) % 60) as f64 / 60.0).collect();
        let a = fit_kde(DensityKind::Gold, &scores).unwrap();
        let b = fit_kde(DensityKind::Silver, &scores).unwrap();
        assert!(kl_divergence(&a, &b) < 1e-9);
    }

    #[test]
    fn histogram_normalizes_to_density() {
        let h = density_report(&[0.0, 0.05, 0.5, 0.99, 1.0], 10);
        assert_eq!(h.bins.len(), 10);
        let mass: f64 = h.bins.iter().map(|b| b.density * (b.hi - b.lo)).sum();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-12);
        assert_relative_eq!(h.bins[9].density, 2.0 / (5.0 * 0.1), epsilon = 1e-12);
        assert_relative_eq!(mass_below(&[0.1, 0.2, 0.5, 0.9], 0.3), 0.5);
    }
}
