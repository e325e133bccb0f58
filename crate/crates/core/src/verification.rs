//! Proper scores, PIT values, rank statistics and histograms.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDateTime;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::PredictiveDistribution;
use crate::quadrature::integrate;
use crate::seeds::rng_from_seed;
use crate::stats::chi_square_sf;
use crate::{Error, Result};

/// Absolute tolerance of [`crps_numeric`].
pub const CRPS_ABS_TOL: f64 = 1e-8;
/// Tail probability cut from each side of the integration bracket.
const TAIL: f64 = 1e-8;
/// Default bin count for PIT histograms.
pub const DEFAULT_PIT_BINS: usize = 20;

/// CRPS by adaptive quadrature of `(F(z) - 1{y <= z})^2`.
///
/// The integral runs over `[F^-1(1e-8), F^-1(1 - 1e-8)]` widened to contain
/// `y`, and is split at `y` and at every atom of `F` so that each piece is
/// smooth.
pub fn crps_numeric(dist: &PredictiveDistribution, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite observation {y}")));
    }
    let lo = dist.quantile_unchecked(TAIL).min(y);
    let hi = dist.quantile_unchecked(1.0 - TAIL).max(y);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Integration(format!(
            "unbounded integration bracket [{lo}, {hi}]"
        )));
    }
    let mut knots = vec![lo, hi, y];
    knots.extend(dist.atoms().into_iter().filter(|&a| a > lo && a < hi));
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let pieces = (knots.len() - 1).max(1) as f64;
    let integrand = |z: f64| {
        let step = if z >= y { 1.0 } else { 0.0 };
        let d = dist.cdf(z) - step;
        d * d
    };
    let mut total = 0.0;
    for pair in knots.windows(2) {
        total += integrate(integrand, pair[0], pair[1], CRPS_ABS_TOL / pieces)?;
    }
    Ok(total.max(0.0))
}

/// CRPS of the empirical law of `members`:
/// `(1/M) sum |x_m - y| - (1/(2 M^2)) sum_n sum_m |x_n - x_m|`.
///
/// The double sum is evaluated from the order statistics in `O(M log M)`.
pub fn crps_ensemble(members: &[f64], y: f64) -> f64 {
    let m = members.len();
    assert!(m > 0, "crps_ensemble needs at least one member");
    let mf = m as f64;
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let abs_err: f64 = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / mf;
    // sum_n sum_m |x_n - x_m| = 2 sum_i (2i - M - 1) x_(i), i = 1..M
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i + 1) as f64 - mf - 1.0) * x)
        .sum::<f64>();
    abs_err - spread / (mf * mf)
}

/// Absolute error of the predictive median, the Bayes predictor under
/// absolute loss.
pub fn abs_error_at_median(dist: &PredictiveDistribution, y: f64) -> f64 {
    (dist.median() - y).abs()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Energy score of an ensemble of `L`-vectors.
pub fn energy_score_ensemble(members: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::InvalidInput(
            "energy score needs at least one member".into(),
        ));
    }
    check_dimensions(members, y)?;
    let m = members.len() as f64;
    let first: f64 = members.iter().map(|x| euclidean(x, y)).sum::<f64>() / m;
    let mut pairs = 0.0;
    for (i, a) in members.iter().enumerate() {
        for b in &members[i + 1..] {
            pairs += euclidean(a, b);
        }
    }
    // Each unordered pair appears twice in the full double sum.
    Ok(first - pairs / (m * m))
}

fn check_dimensions(members: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if let Some(bad) = members.iter().find(|x| x.len() != y.len()) {
        return Err(Error::SizeMismatch(format!(
            "member of dimension {} against observation of dimension {}",
            bad.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Per-margin affine map fixed by the test-set observation mean and
/// standard deviation (divisor `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Margins with zero observation spread; dropped by [`Standardization::apply`].
    pub excluded: Vec<usize>,
    pub warnings: Vec<String>,
}

impl Standardization {
    /// `observations[case][margin]`.
    pub fn from_observations(observations: &[Vec<f64>]) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::InvalidInput("empty test set".into()))?;
        let l = first.len();
        if observations.iter().any(|o| o.len() != l) {
            return Err(Error::SizeMismatch(
                "observation vectors differ in dimension".into(),
            ));
        }
        let n = observations.len() as f64;
        let mut means = vec![0.0; l];
        let mut stds = vec![0.0; l];
        let mut excluded = Vec::new();
        let mut warnings = Vec::new();
        for k in 0..l {
            let mean = observations.iter().map(|o| o[k]).sum::<f64>() / n;
            let var = observations
                .iter()
                .map(|o| (o[k] - mean).powi(2))
                .sum::<f64>()
                / n;
            means[k] = mean;
            stds[k] = var.sqrt();
            if !(var > 0.0) {
                excluded.push(k);
                warnings.push(format!("margin {k} has zero observation spread; excluded"));
            }
        }
        if excluded.len() == l {
            return Err(Error::Degenerate(
                "every margin has zero observation spread".into(),
            ));
        }
        Ok(Standardization {
            means,
            stds,
            excluded,
            warnings,
        })
    }

    /// Standardize one `L`-vector, dropping excluded margins.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .filter(|(k, _)| !self.excluded.contains(k))
            .map(|(k, x)| (x - self.means[k]) / self.stds[k])
            .collect()
    }
}

/// Standardize forecasts (`[case][member][margin]`) and observations
/// (`[case][margin]`) with the observation moments of the test set.
pub type StandardizedCases = (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>, Standardization);

pub fn standardize_margins(
    forecasts: &[Vec<Vec<f64>>],
    observations: &[Vec<f64>],
) -> Result<StandardizedCases> {
    if forecasts.len() != observations.len() {
        return Err(Error::SizeMismatch(format!(
            "{} forecast cases for {} observations",
            forecasts.len(),
            observations.len()
        )));
    }
    let st = Standardization::from_observations(observations)?;
    for (f, o) in forecasts.iter().zip(observations) {
        check_dimensions(f, o)?;
    }
    let fc = forecasts
        .iter()
        .map(|members| members.iter().map(|x| st.apply(x)).collect())
        .collect();
    let obs = observations.iter().map(|o| st.apply(o)).collect();
    Ok((fc, obs, st))
}

/// PIT value with randomization over a point mass at `y`: a uniform draw on
/// `[F(y-), F(y)]` from the seeded generator.
pub fn pit(dist: &PredictiveDistribution, y: f64, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    pit_with_uniform(dist, y, rng.random::<f64>())
}

/// PIT value `F(y-) + u (F(y) - F(y-))` for a given `u` in `[0, 1]`.
pub fn pit_with_uniform(dist: &PredictiveDistribution, y: f64, u: f64) -> f64 {
    let upper = dist.cdf(y);
    let lower = dist.cdf_left(y);
    (lower + u * (upper - lower)).clamp(0.0, 1.0)
}

fn randomized_rank(below: usize, ties: usize, tie_seed: u64) -> usize {
    let extra = if ties == 0 {
        0
    } else {
        rng_from_seed(tie_seed).random_range(0..=ties)
    };
    below + 1 + extra
}

/// Rank of `y` in the pool of `M` members and `y`, in `1..=M+1`.
pub fn verification_rank(members: &[f64], y: f64, tie_seed: u64) -> usize {
    let below = members.iter().filter(|&&x| x < y).count();
    let ties = members.iter().filter(|&&x| x == y).count();
    randomized_rank(below, ties, tie_seed)
}

/// Multivariate rank via pre-ranks: each pooled vector's pre-rank counts the
/// pooled vectors (itself included) that are componentwise `<=` it; the
/// observation's rank is its position among all pre-ranks, ties randomized.
pub fn multivariate_rank(members: &[Vec<f64>], y: &[f64], tie_seed: u64) -> Result<usize> {
    check_dimensions(members, y)?;
    let pool: Vec<&[f64]> = std::iter::once(y)
        .chain(members.iter().map(Vec::as_slice))
        .collect();
    let pre_rank = |v: &[f64]| {
        pool.iter()
            .filter(|w| w.iter().zip(v).all(|(a, b)| a <= b))
            .count()
    };
    let pre: Vec<usize> = pool.iter().map(|v| pre_rank(v)).collect();
    let below = pre[1..].iter().filter(|&&p| p < pre[0]).count();
    let ties = pre[1..].iter().filter(|&&p| p == pre[0]).count();
    Ok(randomized_rank(below, ties, tie_seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramKind {
    Pit,
    VerificationRank,
    MultivariateRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bins: usize,
    pub kind: HistogramKind,
}

impl HistogramSpec {
    pub fn pit(bins: usize) -> Self {
        HistogramSpec {
            bins,
            kind: HistogramKind::Pit,
        }
    }

    /// Rank histogram for `M` members: `M + 1` bins.
    pub fn ranks(kind: HistogramKind, members: usize) -> Self {
        HistogramSpec {
            bins: members + 1,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: HistogramSpec,
    pub counts: Vec<u64>,
    pub chi_square: f64,
    pub p_value: f64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Uniformity is rejected at level `alpha`.
    pub fn rejects_uniformity(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Bin PIT values (in `[0, 1]`) or ranks (integers in `1..=bins`) and test
/// the counts against the uniform null with Pearson's chi-square statistic.
pub fn build_histogram(values: &[f64], spec: HistogramSpec) -> Result<Histogram> {
    if spec.bins < 2 {
        return Err(Error::InvalidInput(format!(
            "histogram needs >= 2 bins, got {}",
            spec.bins
        )));
    }
    if values.is_empty() {
        return Err(Error::InvalidInput("histogram of no values".into()));
    }
    let mut counts = vec![0u64; spec.bins];
    for &v in values {
        let bin = match spec.kind {
            HistogramKind::Pit => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Domain(format!("PIT value {v} outside [0, 1]")));
                }
                ((v * spec.bins as f64) as usize).min(spec.bins - 1)
            }
            HistogramKind::VerificationRank | HistogramKind::MultivariateRank => {
                if v.fract() != 0.0 || v < 1.0 || v > spec.bins as f64 {
                    return Err(Error::Domain(format!("rank {v} outside 1..={}", spec.bins)));
                }
                v as usize - 1
            }
        };
        counts[bin] += 1;
    }
    let expected = values.len() as f64 / spec.bins as f64;
    let chi_square = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum::<f64>();
    let p_value = chi_square_sf(chi_square, (spec.bins - 1) as f64);
    Ok(Histogram {
        spec,
        counts,
        chi_square,
        p_value,
    })
}

/// One scored forecast case. Univariate rows carry a margin label and CRPS
/// and absolute error; multivariate rows carry a group label and the energy
/// score of the standardized vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub system: String,
    pub target: String,
    pub valid_time: NaiveDateTime,
    pub crps: Option<f64>,
    pub abs_error: Option<f64>,
    pub energy_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAggregate {
    pub system: String,
    pub target: String,
    pub n_cases: usize,
    pub mean_crps: Option<f64>,
    pub mean_abs_error: Option<f64>,
    pub mean_energy_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHistogram {
    pub system: String,
    pub target: String,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub records: Vec<ScoreRecord>,
    pub histograms: Vec<NamedHistogram>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.flatten() {
        n += 1;
        sum += v;
    }
    (n > 0).then(|| sum / n as f64)
}

impl ScoreReport {
    /// Means per (system, target), in sorted key order and summing records
    /// in their stored order, so aggregation is reproducible bit for bit.
    pub fn aggregates(&self) -> Vec<ScoreAggregate> {
        let mut groups: BTreeMap<(&str, &str), Vec<&ScoreRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry((&r.system, &r.target)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((system, target), rs)| ScoreAggregate {
                system: system.to_string(),
                target: target.to_string(),
                n_cases: rs.len(),
                mean_crps: mean_of(rs.iter().map(|r| r.crps)),
                mean_abs_error: mean_of(rs.iter().map(|r| r.abs_error)),
                mean_energy_score: mean_of(rs.iter().map(|r| r.energy_score)),
            })
            .collect()
    }

    /// Mean of one score over all records of a system.
    pub fn system_mean(&self, system: &str, score: fn(&ScoreRecord) -> Option<f64>) -> Option<f64> {
        mean_of(
            self.records
                .iter()
                .filter(|r| r.system == system)
                .map(score),
        )
    }

    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "system",
            "target",
            "valid_time",
            "crps",
            "abs_error",
            "energy_score",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.system.clone(),
                r.target.clone(),
                r.valid_time.format("%Y-%m-%dT%H:%M:%S").to_string(),
                opt(r.crps),
                opt(r.abs_error),
                opt(r.energy_score),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_histograms_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["system", "target", "kind", "bin", "count"])?;
        for h in &self.histograms {
            let kind = serde_json::to_value(h.histogram.spec.kind)?;
            let kind = kind.as_str().unwrap_or_default().to_string();
            for (i, c) in h.histogram.counts.iter().enumerate() {
                w.write_record([
                    h.system.clone(),
                    h.target.clone(),
                    kind.clone(),
                    (i + 1).to_string(),
                    c.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{BernoulliGammaMixture, Gamma, Normal, Uniform};
    use crate::stats::{ks_p_value, ks_statistic};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn z<R: Rng>(rng: &mut R) -> f64 {
        StandardNormal.sample(rng)
    }

    fn normal(mu: f64, sigma: f64) -> PredictiveDistribution {
        Normal::new(mu, sigma).unwrap().into()
    }

    #[test]
    fn crps_numeric_reference_values() {
        let c = crps_numeric(&PredictiveDistribution::point_mass(2.0), 5.0).unwrap();
        assert!((c - 3.0).abs() < 1e-12);
        let c = crps_numeric(&normal(0.0, 1.0), 0.0).unwrap();
        assert!((c - 0.233_695_0).abs() < 1e-7, "{c}");
        let u: PredictiveDistribution = Uniform::new(0.0, 1.0).unwrap().into();
        let c = crps_numeric(&u, 0.5).unwrap();
        assert!((c - 1.0 / 12.0).abs() < 1e-9, "{c}");
    }

    #[test]
    fn crps_ensemble_examples() {
        assert_eq!(crps_ensemble(&[0.0, 1.0], 1.0), 0.25);
        assert_eq!(crps_ensemble(&[1.5], -2.0), 3.5);
        assert!((crps_ensemble(&[4.0; 7], 1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn crps_ensemble_matches_empirical_quadrature() {
        let mut rng = rng_from_seed(3);
        for _ in 0..50 {
            let members: Vec<f64> = (0..10)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y: f64 = rng.sample::<f64, _>(StandardNormal) * 1.5;
            let emp = PredictiveDistribution::empirical(&members).unwrap();
            let q = crps_numeric(&emp, y).unwrap();
            assert!((q - crps_ensemble(&members, y)).abs() < 1e-8);
        }
    }

    #[test]
    fn energy_score_examples() {
        let members = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let es = energy_score_ensemble(&members, &[1.0, 1.0]).unwrap();
        assert!((es - 2f64.sqrt() / 4.0).abs() < 1e-12);
        let es = energy_score_ensemble(&[vec![3.0, 4.0]], &[0.0, 0.0]).unwrap();
        assert!((es - 5.0).abs() < 1e-12);
        assert!(matches!(
            energy_score_ensemble(&members, &[1.0]),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn abs_error_at_median_examples() {
        assert_eq!(abs_error_at_median(&normal(3.0, 1.0), 3.0), 0.0);
        assert!((abs_error_at_median(&normal(0.0, 1.0), 1.0) - 1.0).abs() < 1e-12);
        let gamma = Gamma::new(1.0, 0.5).unwrap();
        let bg: PredictiveDistribution = BernoulliGammaMixture::from_kernels(&[(1.0, 0.6, gamma)])
            .unwrap()
            .into();
        assert_eq!(abs_error_at_median(&bg, 0.0), 0.0);
    }

    #[test]
    fn pit_examples() {
        assert!((pit(&normal(0.0, 1.0), 0.0, 1) - 0.5).abs() < 1e-15);
        let d = PredictiveDistribution::empirical(&[0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        // Mass 0.4 at zero: midpoint 0.2.
        assert!((pit_with_uniform(&d, 0.0, 0.5) - 0.2).abs() < 1e-15);
        assert_eq!(pit(&d, 0.0, 9), pit(&d, 0.0, 9));
    }

    #[test]
    fn pit_of_own_draws_is_uniform() {
        let dist = normal(1.0, 2.0);
        let mut rng = rng_from_seed(11);
        let pits: Vec<f64> = (0..10_000u64)
            .map(|i| pit(&dist, dist.sample(&mut rng), i))
            .collect();
        let d = ks_statistic(&pits, |u| u.clamp(0.0, 1.0));
        assert!(ks_p_value(d, pits.len()) > 0.01);
    }

    #[test]
    fn verification_rank_examples() {
        assert_eq!(verification_rank(&[1.0, 2.0, 3.0], 2.5, 0), 3);
        assert_eq!(verification_rank(&[1.0, 2.0, 3.0], -1.0, 0), 1);
        let mut seen = [false; 4];
        for seed in 0..200 {
            seen[verification_rank(&[5.0; 3], 5.0, seed) - 1] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn multivariate_rank_reductions() {
        let mut rng = rng_from_seed(5);
        for seed in 0..100 {
            let members: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let y: f64 = rng.random();
            let mv: Vec<Vec<f64>> = members.iter().map(|&x| vec![x]).collect();
            assert_eq!(
                multivariate_rank(&mv, &[y], seed).unwrap(),
                verification_rank(&members, y, seed)
            );
        }
        let members = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 3.0]];
        assert_eq!(multivariate_rank(&members, &[0.0, 0.0], 0).unwrap(), 1);
    }

    #[test]
    fn multivariate_rank_uniform_for_exchangeable_vectors() {
        let mut rng = rng_from_seed(8);
        let normal2 = |rng: &mut rand_chacha::ChaCha8Rng| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            vec![a, 0.6 * a + 0.8 * b]
        };
        let ranks: Vec<f64> = (0..10_000u64)
            .map(|i| {
                let members: Vec<Vec<f64>> = (0..9).map(|_| normal2(&mut rng)).collect();
                let y = normal2(&mut rng);
                multivariate_rank(&members, &y, i).unwrap() as f64
            })
            .collect();
        let h = build_histogram(
            &ranks,
            HistogramSpec::ranks(HistogramKind::MultivariateRank, 9),
        )
        .unwrap();
        assert!(h.p_value > 0.01, "{h:?}");
    }

    #[test]
    fn histogram_contracts() {
        let ranks: Vec<f64> = (0..1000).map(|i| (i % 5 + 1) as f64).collect();
        let spec = HistogramSpec::ranks(HistogramKind::VerificationRank, 4);
        let h = build_histogram(&ranks, spec).unwrap();
        assert_eq!(h.counts, vec![200; 5]);
        assert!(h.p_value > 0.99);
        let ones = vec![1.0; 1000];
        let h1 = build_histogram(&ones, spec).unwrap();
        assert!((h1.chi_square - 4000.0).abs() < 1e-9);
        assert!(build_histogram(&[], spec).is_err());
        assert!(build_histogram(&[6.0], spec).is_err());
        assert!(build_histogram(&[1.5], HistogramSpec::pit(10)).is_err());
    }

    #[test]
    fn underdispersed_ensemble_gives_u_shape() {
        let mut rng = rng_from_seed(21);
        let ranks: Vec<f64> = (0..4000u64)
            .map(|i| {
                let y: f64 = StandardNormal.sample(&mut rng);
                let members: Vec<f64> = (0..10).map(|_| 0.4 * z(&mut rng)).collect::<Vec<f64>>();
                verification_rank(&members, y, i) as f64
            })
            .collect();
        let h = build_histogram(
            &ranks,
            HistogramSpec::ranks(HistogramKind::VerificationRank, 10),
        )
        .unwrap();
        let interior = h.counts[1..10].iter().sum::<u64>() as f64 / 9.0;
        assert!((h.counts[0] + h.counts[10]) as f64 > 2.0 * interior);
        assert!(h.rejects_uniformity(0.01));
    }

    #[test]
    fn standardization_contract() {
        let obs = vec![
            vec![1.0, 10.0, 5.0],
            vec![3.0, 30.0, 5.0],
            vec![2.0, 20.0, 5.0],
        ];
        let fc = vec![vec![vec![0.0, 0.0, 0.0]]; 3];
        let (_, z, st) = standardize_margins(&fc, &obs).unwrap();
        assert_eq!(st.excluded, vec![2]);
        for k in 0..2 {
            let col: Vec<f64> = z.iter().map(|o| o[k]).collect();
            assert!(crate::stats::mean(&col).abs() < 1e-12);
            assert!((crate::stats::variance(&col).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_ranking_survives_common_affine_scaling() {
        let mut rng = rng_from_seed(4);
        let mut cases = Vec::new();
        for _ in 0..200 {
            let y: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let good: Vec<Vec<f64>> = (0..10)
                .map(|_| y.iter().map(|v| v + 0.3 * z(&mut rng)).collect())
                .collect();
            let bad: Vec<Vec<f64>> = good
                .iter()
                .map(|x| x.iter().map(|v| v + 1.0).collect())
                .collect();
            cases.push((y, good, bad));
        }
        let score = |scale: f64, shift: f64| {
            let t = |v: &Vec<f64>| v.iter().map(|x| scale * x + shift).collect::<Vec<f64>>();
            let obs: Vec<Vec<f64>> = cases.iter().map(|c| t(&c.0)).collect();
            let good: Vec<Vec<Vec<f64>>> =
                cases.iter().map(|c| c.1.iter().map(t).collect()).collect();
            let bad: Vec<Vec<Vec<f64>>> =
                cases.iter().map(|c| c.2.iter().map(t).collect()).collect();
            let (g, o, _) = standardize_margins(&good, &obs).unwrap();
            let (b, _, _) = standardize_margins(&bad, &obs).unwrap();
            let es = |f: &[Vec<Vec<f64>>]| -> f64 {
                f.iter()
                    .zip(&o)
                    .map(|(m, y)| energy_score_ensemble(m, y).unwrap())
                    .sum()
            };
            es(&g) < es(&b)
        };
        assert_eq!(score(1.0, 0.0), score(7.5, -3.0));
        assert!(score(1.0, 0.0));
    }

    #[test]
    fn report_aggregates_match_record_means() {
        let t = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let mut report = ScoreReport::default();
        for i in 0..10 {
            report.records.push(ScoreRecord {
                system: "raw".into(),
                target: "t2m@a".into(),
                valid_time: t,
                crps: Some(0.1 * i as f64),
                abs_error: Some(1.0),
                energy_score: None,
            });
        }
        let agg = report.aggregates();
        assert_eq!(agg.len(), 1);
        assert!((agg[0].mean_crps.unwrap() - 0.45).abs() < 1e-12);
        assert_eq!(agg[0].mean_energy_score, None);
        let mut buf = Vec::new();
        report.write_records_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
    }

    proptest! {
        #[test]
        fn energy_score_reduces_to_crps(
            members in proptest::collection::vec(-50.0f64..50.0, 1..15),
            y in -60.0f64..60.0,
        ) {
            let mv: Vec<Vec<f64>> = members.iter().map(|&x| vec![x]).collect();
            let es = energy_score_ensemble(&mv, &[y]).unwrap();
            prop_assert!((es - crps_ensemble(&members, y)).abs() < 1e-12);
        }

        #[test]
        fn histogram_counts_are_order_invariant(
            mut ranks in proptest::collection::vec(1u8..=6, 1..200),
        ) {
            let spec = HistogramSpec::ranks(HistogramKind::VerificationRank, 5);
            let a: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
            ranks.reverse();
            let b: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
            let ha = build_histogram(&a, spec).unwrap();
            let hb = build_histogram(&b, spec).unwrap();
            prop_assert_eq!(&ha.counts, &hb.counts);
            prop_assert_eq!(ha.total(), a.len() as u64);
        }
    }
}
