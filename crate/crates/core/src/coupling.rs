//! Ranks, empirical copulas, quantization and ensemble reordering.
//!
//! Matrices are stored margin-major: `values[l][m]` is member `m` of
//! margin `l`.

use chrono::NaiveDateTime;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Normal, PredictiveDistribution};
use crate::postprocess::MarginIndex;
use crate::seeds::{derive_seed, rng_from_seed};
use crate::stats;
use crate::{Error, Result};

/// Smoothed percentiles are kept inside `[U_CLAMP, 1 - U_CLAMP]`.
pub const U_CLAMP: f64 = 1e-12;

/// Raw `M`-member ensemble over `L` margins for one valid time.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEnsemble {
    pub valid_time: NaiveDateTime,
    pub margins: Vec<MarginIndex>,
    values: Vec<Vec<f64>>,
}

impl RawEnsemble {
    pub fn new(
        valid_time: NaiveDateTime,
        margins: Vec<MarginIndex>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if margins.len() != values.len() {
            return Err(Error::SizeMismatch(format!(
                "{} margin labels for {} margins",
                margins.len(),
                values.len()
            )));
        }
        let m = check_matrix(&values)?;
        if m < 2 {
            return Err(Error::InvalidInput(format!(
                "ensemble needs at least 2 members, got {m}"
            )));
        }
        Ok(RawEnsemble {
            valid_time,
            margins,
            values,
        })
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn margin(&self, l: usize) -> &[f64] {
        &self.values[l]
    }

    pub fn n_members(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn n_margins(&self) -> usize {
        self.values.len()
    }
}

/// Checks a margin-major matrix for equal, nonzero lengths and finite
/// entries; returns the member count.
fn check_matrix(values: &[Vec<f64>]) -> Result<usize> {
    let m = values.first().map_or(0, Vec::len);
    if values.is_empty() || m == 0 {
        return Err(Error::InvalidInput("empty ensemble".into()));
    }
    for (l, margin) in values.iter().enumerate() {
        if margin.len() != m {
            return Err(Error::SizeMismatch(format!(
                "margin {l} has {} members, expected {m}",
                margin.len()
            )));
        }
        if margin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "margin {l} contains non-finite values"
            )));
        }
    }
    Ok(m)
}

/// Ranks `sigma(m) = rk(x_m)` of one margin, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginPermutation {
    pub ranks: Vec<usize>,
    pub tie_seed: u64,
}

impl MarginPermutation {
    pub fn identity(m: usize) -> Self {
        MarginPermutation {
            ranks: (1..=m).collect(),
            tie_seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

/// Rank the values; tied values receive a random order driven by `tie_seed`.
pub fn compute_ranks(values: &[f64], tie_seed: u64) -> Result<MarginPermutation> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("cannot rank non-finite values".into()));
    }
    let mut rng = rng_from_seed(tie_seed);
    let keys: Vec<u64> = values.iter().map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(keys[a].cmp(&keys[b])));
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(MarginPermutation { ranks, tie_seed })
}

/// Ranks for every margin, with per-margin tie seeds `derive_seed(tie_seed, l)`.
pub fn margin_ranks(values: &[Vec<f64>], tie_seed: u64) -> Result<Vec<MarginPermutation>> {
    values
        .iter()
        .enumerate()
        .map(|(l, margin)| compute_ranks(margin, derive_seed(tie_seed, l as u64)))
        .collect()
}

/// Quantization scheme for the postprocessed margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantization {
    /// Equidistant quantiles at levels `(m - 1/2) / M`.
    Q,
    /// Inverse-transform random sample.
    R,
    /// Quantile mapping of the raw values through a smoothed raw cdf.
    T,
}

/// `M` values per margin drawn from the postprocessed distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedEnsemble {
    pub values: Vec<Vec<f64>>,
    pub scheme: Quantization,
    pub sources: Vec<PredictiveDistribution>,
}

impl QuantizedEnsemble {
    pub fn n_members(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// Equidistant quantiles `F^-1((m - 1/2) / M)`, `m = 1..M`.
pub fn quantize_q(dist: &PredictiveDistribution, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidInput("quantization needs M >= 1".into()));
    }
    let levels: Vec<f64> = (1..=m).map(|k| (k as f64 - 0.5) / m as f64).collect();
    quantize_at_levels(dist, &levels)
}

/// `F^-1(u)` for each supplied level.
pub fn quantize_at_levels(dist: &PredictiveDistribution, levels: &[f64]) -> Result<Vec<f64>> {
    levels.iter().map(|&u| dist.quantile(u)).collect()
}

/// Simple random sample `F^-1(u_m)` with independent uniforms from `seed`.
pub fn quantize_r(dist: &PredictiveDistribution, m: usize, seed: u64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidInput("quantization needs M >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..m).map(|_| dist.sample(&mut rng)).collect())
}

/// Output of [`quantize_t`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedMargin {
    pub values: Vec<f64>,
    /// Members whose smoothed percentile had to be clamped into
    /// `[U_CLAMP, 1 - U_CLAMP]`.
    pub clamped: usize,
}

/// Normal smoothing law fitted to a raw margin: ensemble mean and ensemble
/// variance with divisor `M`.
pub fn smoothing_normal(raw_margin: &[f64]) -> Result<Normal> {
    let var = stats::variance(raw_margin);
    if !(var > 0.0) {
        return Err(Error::Degenerate(
            "raw margin has zero variance, smoothing law undefined".into(),
        ));
    }
    Normal::new(stats::mean(raw_margin), var.sqrt())
}

/// Transformation quantization `F^-1(S(x_m))` with normal smoothing `S`.
pub fn quantize_t(dist: &PredictiveDistribution, raw_margin: &[f64]) -> Result<TransformedMargin> {
    if dist.has_point_mass_at_zero() {
        return Err(Error::UnsupportedScheme(format!(
            "ECC-T is not defined for {} margins with a point mass at zero",
            dist.family()
        )));
    }
    let smoothing = smoothing_normal(raw_margin)?;
    let mut clamped = 0;
    let values = raw_margin
        .iter()
        .map(|&x| {
            let u = smoothing.cdf(x);
            let v = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
            if v != u {
                clamped += 1;
            }
            dist.quantile(v)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TransformedMargin { values, clamped })
}

/// Where the reordering permutations came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reordering {
    RawEnsemble,
    SchaakeShuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme: Quantization,
    pub reordering: Reordering,
    pub permutations: Vec<MarginPermutation>,
}

/// Quantized values rearranged into a template rank structure.
#[derive(Debug, Clone, PartialEq)]
pub struct EccEnsemble {
    pub values: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl EccEnsemble {
    pub fn n_members(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Member `m` as an `L`-vector.
    pub fn member(&self, m: usize) -> Vec<f64> {
        self.values.iter().map(|margin| margin[m]).collect()
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Member `m` of margin `l` receives the `sigma_l(m)`-th order statistic
/// of the quantized margin.
pub fn ecc_reorder(
    quantized: &QuantizedEnsemble,
    perms: &[MarginPermutation],
) -> Result<EccEnsemble> {
    reorder(quantized, perms, Reordering::RawEnsemble)
}

fn reorder(
    quantized: &QuantizedEnsemble,
    perms: &[MarginPermutation],
    reordering: Reordering,
) -> Result<EccEnsemble> {
    if quantized.values.len() != perms.len() {
        return Err(Error::SizeMismatch(format!(
            "{} quantized margins but {} permutations",
            quantized.values.len(),
            perms.len()
        )));
    }
    let m = quantized.n_members();
    let mut values = Vec::with_capacity(perms.len());
    for (l, (margin, perm)) in quantized.values.iter().zip(perms).enumerate() {
        if margin.len() != m || perm.len() != m {
            return Err(Error::SizeMismatch(format!(
                "margin {l}: {} quantized values, {} ranks, expected {m}",
                margin.len(),
                perm.len()
            )));
        }
        let order = sorted(margin);
        let out = perm
            .ranks
            .iter()
            .map(|&r| {
                order.get(r.wrapping_sub(1)).copied().ok_or_else(|| {
                    Error::InvalidInput(format!("rank {r} out of range in margin {l}"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(out);
    }
    Ok(EccEnsemble {
        values,
        provenance: Provenance {
            scheme: quantized.scheme,
            reordering,
            permutations: perms.to_vec(),
        },
    })
}

/// `M` historical observation vectors over the same margins.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalRecord {
    pub dates: Vec<NaiveDateTime>,
    pub values: Vec<Vec<f64>>,
}

impl HistoricalRecord {
    pub fn new(dates: Vec<NaiveDateTime>, values: Vec<Vec<f64>>) -> Result<Self> {
        let m = check_matrix(&values)?;
        if !dates.is_empty() && dates.len() != m {
            return Err(Error::SizeMismatch(format!(
                "{} dates for {m} records",
                dates.len()
            )));
        }
        Ok(HistoricalRecord { dates, values })
    }

    pub fn size(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// Reorder the quantized margins by the rank structure of a historical
/// observation record.
pub fn schaake_shuffle(
    quantized: &QuantizedEnsemble,
    record: &HistoricalRecord,
    tie_seed: u64,
) -> Result<EccEnsemble> {
    if record.size() != quantized.n_members() || record.values.len() != quantized.values.len() {
        return Err(Error::SizeMismatch(format!(
            "record is {}x{}, ensemble is {}x{}",
            record.size(),
            record.values.len(),
            quantized.n_members(),
            quantized.values.len()
        )));
    }
    let perms = margin_ranks(&record.values, tie_seed)?;
    reorder(quantized, &perms, Reordering::SchaakeShuffle)
}

/// Template for the reordering stage.
#[derive(Debug, Clone, Copy)]
pub enum Template<'a> {
    Raw,
    Record(&'a HistoricalRecord),
}

/// Quantize every margin and reorder, with per-margin seeds
/// `derive_seed(master_seed, l)`. Margins are processed in parallel; the
/// output does not depend on the degree of parallelism.
pub fn couple(
    raw: &RawEnsemble,
    dists: &[PredictiveDistribution],
    scheme: Quantization,
    template: Template<'_>,
    master_seed: u64,
) -> Result<(QuantizedEnsemble, EccEnsemble)> {
    if dists.len() != raw.n_margins() {
        return Err(Error::SizeMismatch(format!(
            "{} distributions for {} margins",
            dists.len(),
            raw.n_margins()
        )));
    }
    let m = raw.n_members();
    let values = dists
        .par_iter()
        .enumerate()
        .map(|(l, dist)| match scheme {
            Quantization::Q => quantize_q(dist, m),
            Quantization::R => quantize_r(dist, m, derive_seed(master_seed, l as u64)),
            Quantization::T => quantize_t(dist, raw.margin(l)).map(|t| t.values),
        })
        .collect::<Result<Vec<_>>>()?;
    let quantized = QuantizedEnsemble {
        values,
        scheme,
        sources: dists.to_vec(),
    };
    let tie_seed = derive_seed(master_seed, u64::MAX);
    let ecc = match template {
        Template::Raw => ecc_reorder(&quantized, &margin_ranks(raw.values(), tie_seed)?)?,
        Template::Record(record) => schaake_shuffle(&quantized, record, tie_seed)?,
    };
    Ok((quantized, ecc))
}

fn tie_free_ranks(dataset: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    check_matrix(dataset)?;
    dataset
        .iter()
        .enumerate()
        .map(|(l, margin)| {
            let s = sorted(margin);
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidInput(format!(
                    "margin {l} has ties; resolve them with compute_ranks first"
                )));
            }
            Ok(compute_ranks(margin, 0)?.ranks)
        })
        .collect()
}

fn copula_count(ranks: &[Vec<usize>], indices: &[usize]) -> usize {
    let m = ranks[0].len();
    (0..m)
        .filter(|&k| ranks.iter().zip(indices).all(|(r, &i)| r[k] <= i))
        .count()
}

/// Empirical copula `E_M(i_1/M, ..., i_L/M)` of a tie-free dataset.
pub fn empirical_copula_eval(dataset: &[Vec<f64>], indices: &[usize]) -> Result<f64> {
    let ranks = tie_free_ranks(dataset)?;
    let m = ranks[0].len();
    if indices.len() != ranks.len() {
        return Err(Error::SizeMismatch(format!(
            "{} indices for {} margins",
            indices.len(),
            ranks.len()
        )));
    }
    if let Some(&i) = indices.iter().find(|&&i| i > m) {
        return Err(Error::Domain(format!("copula index {i} outside [0, {m}]")));
    }
    Ok(copula_count(&ranks, indices) as f64 / m as f64)
}

/// Result of an exhaustive discrete Sklar check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SklarReport {
    pub grid_points: usize,
    pub max_violation: f64,
}

const SKLAR_MAX_MARGINS: usize = 4;
const SKLAR_MAX_MEMBERS: usize = 20;

/// Check `R(y) = E_M(R_1(y_1), ..., R_L(y_L))` on every grid point built
/// from the ensemble's own margin values.
pub fn verify_discrete_sklar(ensemble: &[Vec<f64>]) -> Result<SklarReport> {
    sklar_check(ensemble, ensemble)
}

/// Check `F_hat(y) = E_M(F~_1(y_1), ..., F~_L(y_L))`: the coupled ensemble's
/// joint cdf is the raw copula applied to the coupled margins.
pub fn verify_ecc_sklar(raw: &[Vec<f64>], coupled: &[Vec<f64>]) -> Result<SklarReport> {
    sklar_check(raw, coupled)
}

fn sklar_check(copula_source: &[Vec<f64>], joint: &[Vec<f64>]) -> Result<SklarReport> {
    let ranks = tie_free_ranks(copula_source)?;
    let m = check_matrix(joint)?;
    let l = joint.len();
    if ranks.len() != l || ranks[0].len() != m {
        return Err(Error::SizeMismatch(
            "copula source and ensemble differ in shape".into(),
        ));
    }
    if l > SKLAR_MAX_MARGINS || m > SKLAR_MAX_MEMBERS {
        return Err(Error::InvalidInput(format!(
            "exhaustive check limited to L <= {SKLAR_MAX_MARGINS}, M <= {SKLAR_MAX_MEMBERS}"
        )));
    }
    // Per-margin grid: one point below the sample plus every sample value.
    let grids: Vec<Vec<f64>> = joint
        .iter()
        .map(|margin| {
            let mut g = sorted(margin);
            g.dedup();
            g.insert(0, g[0] - 1.0);
            g
        })
        .collect();
    let sorted_margins: Vec<Vec<f64>> = joint.iter().map(|v| sorted(v)).collect();

    let mut point = vec![0usize; l];
    let mut y = vec![0.0; l];
    let mut indices = vec![0usize; l];
    let mut grid_points = 0;
    let mut max_violation: f64 = 0.0;
    loop {
        for d in 0..l {
            y[d] = grids[d][point[d]];
            indices[d] = sorted_margins[d].partition_point(|&v| v <= y[d]);
        }
        let joint_count = (0..m)
            .filter(|&k| (0..l).all(|d| joint[d][k] <= y[d]))
            .count();
        let copula = copula_count(&ranks, &indices);
        let violation = (joint_count as f64 - copula as f64).abs() / m as f64;
        max_violation = max_violation.max(violation);
        grid_points += 1;

        let mut d = 0;
        loop {
            if d == l {
                return Ok(SklarReport {
                    grid_points,
                    max_violation,
                });
            }
            point[d] += 1;
            if point[d] < grids[d].len() {
                break;
            }
            point[d] = 0;
            d += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{Uniform, Weighted};
    use rand::seq::SliceRandom;
    use rand_distr::StandardNormal;

    fn quantized(values: Vec<Vec<f64>>) -> QuantizedEnsemble {
        let n = values.len();
        QuantizedEnsemble {
            values,
            scheme: Quantization::Q,
            sources: vec![Normal::standard().into(); n],
        }
    }

    #[test]
    fn ranks_of_tie_free_values() {
        assert_eq!(
            compute_ranks(&[3.2, 1.1, 2.5], 0).unwrap().ranks,
            vec![3, 1, 2]
        );
        assert_eq!(
            compute_ranks(&[1.0, 2.0, 3.0, 4.0], 99).unwrap().ranks,
            vec![1, 2, 3, 4]
        );
        assert_eq!(
            compute_ranks(&[3.2, 1.1, 2.5], 1).unwrap().ranks,
            compute_ranks(&[3.2, 1.1, 2.5], 2).unwrap().ranks
        );
    }

    #[test]
    fn tied_ranks_are_random_permutations() {
        let mut seen = std::collections::HashSet::new();
        for seed in 0..50 {
            let mut r = compute_ranks(&[5.0, 5.0, 5.0], seed).unwrap().ranks;
            seen.insert(r.clone());
            r.sort();
            assert_eq!(r, vec![1, 2, 3]);
        }
        assert!(seen.len() > 1);
        assert_eq!(
            compute_ranks(&[5.0, 5.0, 5.0], 4).unwrap(),
            compute_ranks(&[5.0, 5.0, 5.0], 4).unwrap()
        );
    }

    #[test]
    fn ranks_reject_non_finite() {
        assert!(compute_ranks(&[1.0, f64::NAN], 0).is_err());
    }

    #[test]
    fn quantize_q_examples() {
        let u: PredictiveDistribution = Uniform::new(0.0, 1.0).unwrap().into();
        assert_eq!(quantize_q(&u, 4).unwrap(), vec![0.125, 0.375, 0.625, 0.875]);
        let n: PredictiveDistribution = Normal::standard().into();
        let q = quantize_q(&n, 2).unwrap();
        assert!((q[0] + 0.674_489_8).abs() < 1e-7 && (q[1] - 0.674_489_8).abs() < 1e-7);
        assert_eq!(quantize_q(&n, 1).unwrap(), vec![0.0]);
        assert!(quantize_q(&n, 0).is_err());
    }

    #[test]
    fn quantize_r_examples() {
        let n: PredictiveDistribution = Normal::new(3.0, 2.0).unwrap().into();
        assert_eq!(quantize_at_levels(&n, &[0.5; 3]).unwrap(), vec![3.0; 3]);
        assert_eq!(
            quantize_r(&n, 10, 5).unwrap(),
            quantize_r(&n, 10, 5).unwrap()
        );
        assert_ne!(
            quantize_r(&n, 10, 5).unwrap(),
            quantize_r(&n, 10, 6).unwrap()
        );
    }

    #[test]
    fn quantize_r_pooled_draws_follow_f() {
        let n: PredictiveDistribution = Normal::standard().into();
        let pooled: Vec<f64> = (0..1000)
            .flat_map(|s| quantize_r(&n, 100, s).unwrap())
            .collect();
        let ks = stats::ks_statistic(&pooled, |x| n.cdf(x));
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn quantize_t_affine_case() {
        // Raw margin with mean 1 and variance 4 (divisor M).
        let raw = [3.0, -1.0];
        let f: PredictiveDistribution = Normal::standard().into();
        let t = quantize_t(&f, &raw).unwrap();
        assert!((t.values[0] - 1.0).abs() < 1e-12);
        assert!((t.values[1] + 1.0).abs() < 1e-12);
        assert_eq!(t.clamped, 0);
    }

    #[test]
    fn quantize_t_identity_when_f_equals_s() {
        let raw = [0.3, 1.7, -0.4, 2.2, 0.9];
        let s = smoothing_normal(&raw).unwrap();
        let t = quantize_t(&s.into(), &raw).unwrap();
        for (a, b) in t.values.iter().zip(raw) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn quantize_t_errors() {
        let f: PredictiveDistribution = Normal::standard().into();
        assert!(matches!(
            quantize_t(&f, &[2.0, 2.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        let precip: PredictiveDistribution = crate::distributions::PointMassLogistic::new(0.0, 1.0)
            .unwrap()
            .into();
        assert!(matches!(
            quantize_t(&precip, &[0.0, 1.0]),
            Err(Error::UnsupportedScheme(_))
        ));
    }

    #[test]
    fn quantize_t_clamps_extreme_percentiles() {
        let mut raw = vec![0.0; 200];
        raw[0] = 1e4;
        let f: PredictiveDistribution = Normal::standard().into();
        let t = quantize_t(&f, &raw).unwrap();
        assert_eq!(t.clamped, 1);
        assert!(t.values[0].is_finite());
    }

    #[test]
    fn reorder_example() {
        let perm = compute_ranks(&[2.9, 1.2, 2.1], 0).unwrap();
        let q = quantized(vec![vec![20.0, 30.0, 10.0]]);
        let ecc = ecc_reorder(&q, &[perm]).unwrap();
        assert_eq!(ecc.values[0], vec![30.0, 10.0, 20.0]);
        let id = ecc_reorder(&q, &[MarginPermutation::identity(3)]).unwrap();
        assert_eq!(id.values[0], vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn reorder_size_mismatch() {
        let q = quantized(vec![vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            ecc_reorder(&q, &[MarginPermutation::identity(2)]),
            Err(Error::SizeMismatch(_))
        ));
        assert!(matches!(ecc_reorder(&q, &[]), Err(Error::SizeMismatch(_))));
    }

    fn random_matrix(seed: u64, m: usize, l: usize) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..l)
            .map(|_| {
                (0..m)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn reorder_preserves_spearman_exactly() {
        for seed in 0..20 {
            let raw = random_matrix(seed, 50, 5);
            let q = quantized(random_matrix(seed + 1000, 50, 5));
            let ecc = ecc_reorder(&q, &margin_ranks(&raw, 1).unwrap()).unwrap();
            for a in 0..5 {
                for b in (a + 1)..5 {
                    assert_eq!(
                        stats::spearman(&raw[a], &raw[b]),
                        stats::spearman(&ecc.values[a], &ecc.values[b])
                    );
                }
            }
        }
    }

    #[test]
    fn schaake_with_raw_record_matches_ecc() {
        let raw = random_matrix(3, 12, 3);
        let q = quantized(random_matrix(4, 12, 3));
        let record = HistoricalRecord::new(vec![], raw.clone()).unwrap();
        let shuffled = schaake_shuffle(&q, &record, 17).unwrap();
        let ecc = ecc_reorder(&q, &margin_ranks(&raw, 17).unwrap()).unwrap();
        assert_eq!(shuffled.values, ecc.values);
        assert_eq!(shuffled.provenance.reordering, Reordering::SchaakeShuffle);
    }

    #[test]
    fn schaake_comonotone_record_gives_comonotone_output() {
        let record = HistoricalRecord::new(
            vec![],
            vec![vec![1.0, 3.0, 2.0, 4.0], vec![10.0, 30.0, 20.0, 40.0]],
        )
        .unwrap();
        let q = quantized(random_matrix(8, 4, 2));
        let out = schaake_shuffle(&q, &record, 0).unwrap();
        assert_eq!(
            compute_ranks(&out.values[0], 0).unwrap(),
            compute_ranks(&out.values[1], 0).unwrap()
        );
    }

    #[test]
    fn schaake_size_mismatch() {
        let record = HistoricalRecord::new(vec![], random_matrix(1, 5, 2)).unwrap();
        let q = quantized(random_matrix(2, 6, 2));
        assert!(matches!(
            schaake_shuffle(&q, &record, 0),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn empirical_copula_examples() {
        let data = vec![vec![1.0, 2.0], vec![10.0, 20.0]];
        assert_eq!(empirical_copula_eval(&data, &[1, 1]).unwrap(), 0.5);
        assert_eq!(empirical_copula_eval(&data, &[2, 2]).unwrap(), 1.0);
        assert_eq!(empirical_copula_eval(&data, &[0, 2]).unwrap(), 0.0);
        let anti = vec![vec![1.0, 2.0], vec![20.0, 10.0]];
        assert_eq!(empirical_copula_eval(&anti, &[1, 1]).unwrap(), 0.0);
        assert!(matches!(
            empirical_copula_eval(&data, &[3, 1]),
            Err(Error::Domain(_))
        ));
        assert!(empirical_copula_eval(&[vec![1.0, 1.0], vec![1.0, 2.0]], &[1, 1]).is_err());
    }

    #[test]
    fn empirical_copula_has_uniform_margins() {
        let data = random_matrix(5, 9, 3);
        for i in 0..=9 {
            let v = empirical_copula_eval(&data, &[i, 9, 9]).unwrap();
            assert_eq!(v, i as f64 / 9.0);
        }
    }

    #[test]
    fn empirical_copula_is_l_increasing() {
        // Every 2x..x2 box has nonnegative mass (exhaustive, L <= 3, M <= 10).
        for (seed, l) in [(1u64, 2usize), (2, 3)] {
            let m = 8;
            let data = random_matrix(seed, m, l);
            let boxes = (m + 1).pow(l as u32);
            for lower in 0..boxes {
                let lo: Vec<usize> = (0..l)
                    .map(|d| (lower / (m + 1).pow(d as u32)) % (m + 1))
                    .collect();
                if lo.contains(&m) {
                    continue;
                }
                let mut mass = 0.0;
                for corner in 0..(1 << l) {
                    let idx: Vec<usize> = (0..l)
                        .map(|d| {
                            if corner >> d & 1 == 1 {
                                lo[d] + 1
                            } else {
                                lo[d]
                            }
                        })
                        .collect();
                    let ones = (corner as u32).count_ones() as usize;
                    let sign = if (l - ones).is_multiple_of(2) {
                        1.0
                    } else {
                        -1.0
                    };
                    mass += sign * empirical_copula_eval(&data, &idx).unwrap();
                }
                assert!(mass >= -1e-15);
            }
        }
    }

    #[test]
    fn coarse_independence_grid() {
        // Rank pairs (1,1), (2,3), (3,2), (4,4): the empirical copula agrees
        // with the independence copula on the grid {0, 2, 4}^2.
        let data = vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 3.0, 2.0, 4.0]];
        for i in [0usize, 2, 4] {
            for j in [0usize, 2, 4] {
                let v = empirical_copula_eval(&data, &[i, j]).unwrap();
                assert_eq!(v, (i * j) as f64 / 16.0);
            }
        }
        assert_eq!(verify_discrete_sklar(&data).unwrap().max_violation, 0.0);
    }

    #[test]
    fn sklar_identity_holds_for_raw_and_ecc() {
        for seed in 0..5 {
            let raw = random_matrix(seed, 10, 2);
            let rep = verify_discrete_sklar(&raw).unwrap();
            assert_eq!(rep.max_violation, 0.0);
            assert_eq!(rep.grid_points, 11 * 11);
            let q = quantized(random_matrix(seed + 50, 10, 2));
            let ecc = ecc_reorder(&q, &margin_ranks(&raw, 0).unwrap()).unwrap();
            assert_eq!(
                verify_ecc_sklar(&raw, &ecc.values).unwrap().max_violation,
                0.0
            );
        }
    }

    #[test]
    fn sklar_detects_mismatched_copula() {
        let raw = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        let anti = vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]];
        assert!(verify_ecc_sklar(&raw, &anti).unwrap().max_violation > 0.0);
    }

    #[test]
    fn couple_is_deterministic_and_margin_preserving() {
        let t0 = chrono::NaiveDate::from_ymd_opt(2011, 4, 25)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let margins = (0..3)
            .map(|i| MarginIndex::new("t2m", format!("s{i}"), 24).unwrap())
            .collect();
        let raw = RawEnsemble::new(t0, margins, random_matrix(9, 20, 3)).unwrap();
        let dists: Vec<PredictiveDistribution> = (0..3)
            .map(|i| {
                crate::distributions::NormalMixture::new(vec![
                    Weighted::new(0.5, Normal::new(i as f64, 1.0).unwrap()),
                    Weighted::new(0.5, Normal::new(i as f64 + 1.0, 2.0).unwrap()),
                ])
                .unwrap()
                .into()
            })
            .collect();
        for scheme in [Quantization::Q, Quantization::R, Quantization::T] {
            let (q1, e1) = couple(&raw, &dists, scheme, Template::Raw, 42).unwrap();
            let (_, e2) = couple(&raw, &dists, scheme, Template::Raw, 42).unwrap();
            assert_eq!(e1.values, e2.values);
            for l in 0..3 {
                assert_eq!(sorted(&e1.values[l]), sorted(&q1.values[l]));
                assert_eq!(
                    compute_ranks(&e1.values[l], 0).unwrap().ranks,
                    compute_ranks(raw.margin(l), 0).unwrap().ranks
                );
            }
        }
    }

    #[test]
    fn ecc_q_on_raw_empirical_margins_is_idempotent() {
        let mut rng = rng_from_seed(77);
        let raw = random_matrix(77, 15, 3);
        let dists: Vec<PredictiveDistribution> = raw
            .iter()
            .map(|m| PredictiveDistribution::empirical(m).unwrap())
            .collect();
        let q = QuantizedEnsemble {
            values: dists.iter().map(|d| quantize_q(d, 15).unwrap()).collect(),
            scheme: Quantization::Q,
            sources: dists,
        };
        let mut perms = margin_ranks(&raw, rng.random()).unwrap();
        let ecc = ecc_reorder(&q, &perms).unwrap();
        assert_eq!(ecc.values, raw);
        perms.shuffle(&mut rng);
    }

    #[test]
    fn raw_ensemble_validation() {
        let t0 = chrono::NaiveDate::from_ymd_opt(2011, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let idx = vec![MarginIndex::new("t", "a", 24).unwrap()];
        assert!(RawEnsemble::new(t0, idx.clone(), vec![vec![1.0]]).is_err());
        assert!(RawEnsemble::new(t0, idx.clone(), vec![vec![1.0, f64::INFINITY]]).is_err());
        assert!(RawEnsemble::new(t0, vec![], vec![vec![1.0, 2.0]]).is_err());
        assert!(RawEnsemble::new(t0, idx, vec![vec![1.0, 2.0]]).is_ok());
    }
}
