//! The average embedding `f: l_p -> l_2` built from the Mazur map, plus the
//! verifier for its two defining properties and the empirical scanner over
//! candidate centers `z`.
//!
//! With `h(x)_i = sign(x_i) |x_i|^(p/2)` (the Mazur map), the embedding of a
//! point relative to a center `z` is
//!
//! ```text
//! f(x - z) = h((x - z) / ||x - z||_p) * ||x - z||_p
//! ```
//!
//! which preserves norms (`||f(v)||_2 = ||v||_p`) and is `(p + 1)`-Lipschitz.
//! `f(0)` is defined as 0, the unique continuous extension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metric::{lp_distance_unchecked, lp_norm_unchecked, Dataset, MetricError};
use crate::scalar::{KahanSum, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("l_p exponent must be >= 2, got {0}")]
    InvalidExponent(f64),
    #[error("center has a non-finite coordinate")]
    NonFiniteCenter,
    #[error("undefined ratio: all points coincide")]
    UndefinedRatio,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// `sign(t) |t|^e` via `exp(e * ln|t|)`, with exact handling of `t = 0`
/// and of `e = 1` (identity).
#[inline]
fn signed_pow<S: Scalar>(t: S, e: S) -> S {
    if t == S::zero() {
        return S::zero();
    }
    if e == S::one() {
        return t;
    }
    let m = (e * t.abs().ln()).exp();
    if t < S::zero() {
        -m
    } else {
        m
    }
}

/// Coordinate-wise Mazur map `h(x)_i = sign(x_i) |x_i|^(p/2)`.
///
/// Satisfies `||h(x)||_2 = ||x||_p^(p/2)` and is inverted by
/// [`mazur_h_inv`].
pub fn mazur_h<S: Scalar>(x: &[S], p_exp: S) -> Vec<S> {
    let e = p_exp / S::from_config(2.0);
    x.iter().map(|&v| signed_pow(v, e)).collect()
}

/// Inverse of the Mazur map: `sign(y_i) |y_i|^(2/p)`.
pub fn mazur_h_inv<S: Scalar>(y: &[S], p_exp: S) -> Vec<S> {
    let e = S::from_config(2.0) / p_exp;
    y.iter().map(|&v| signed_pow(v, e)).collect()
}

/// The average embedding `x -> f(x - z)` with Lipschitz constant `p + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AvgEmbedding<S> {
    p_exp: S,
    center: Vec<S>,
    lip_const: S,
}

impl<S: Scalar> AvgEmbedding<S> {
    pub fn new(p_exp: S, center: Vec<S>) -> Result<Self, EmbedError> {
        if p_exp < S::from_config(2.0) {
            return Err(EmbedError::InvalidExponent(p_exp.to_report()));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFiniteCenter);
        }
        Ok(Self {
            p_exp,
            center,
            lip_const: p_exp + S::one(),
        })
    }

    pub fn p_exp(&self) -> S {
        self.p_exp
    }

    pub fn center(&self) -> &[S] {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// The Lipschitz constant `D = p + 1`.
    pub fn lip_const(&self) -> S {
        self.lip_const
    }

    /// Computes `f(x - z)`. The shifted point is normalized first so the
    /// power map only ever sees coordinates in `[-1, 1]`, then rescaled by
    /// the l_p norm; this keeps the map stable across extreme scales.
    pub fn embed(&self, x: &[S]) -> Result<Vec<S>, EmbedError> {
        if x.len() != self.center.len() {
            return Err(EmbedError::DimensionMismatch {
                left: self.center.len(),
                right: x.len(),
            });
        }
        Ok(self.embed_unchecked(x))
    }

    #[inline]
    pub(crate) fn embed_unchecked(&self, x: &[S]) -> Vec<S> {
        let shifted: Vec<S> = x.iter().zip(&self.center).map(|(&a, &z)| a - z).collect();
        let norm = lp_norm_unchecked(&shifted, self.p_exp);
        if norm == S::zero() || !norm.is_finite() {
            return vec![S::zero(); shifted.len()];
        }
        let e = self.p_exp / S::from_config(2.0);
        shifted
            .iter()
            .map(|&v| signed_pow(v / norm, e) * norm)
            .collect()
    }
}

fn l2_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = KahanSum::new();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc.add(d * d);
    }
    acc.value().sqrt()
}

fn l2_norm_sq<S: Scalar>(a: &[S]) -> S {
    let mut acc = KahanSum::new();
    for &x in a {
        acc.add(x * x);
    }
    acc.value()
}

/// Result of probing the Lipschitz bound over a set of pairs.
#[derive(Clone, Copy, Debug)]
pub struct LipschitzProbe<S> {
    /// Max over probed pairs of `||f(x-z) - f(y-z)||_2 / ||x - y||_p`.
    pub max_ratio: S,
    pub pairs_used: usize,
    /// Identical pairs are 0/0 and skipped.
    pub pairs_skipped: usize,
}

/// Evaluates the Lipschitz ratio on every pair the iterator yields.
pub fn lipschitz_probe<S, I>(
    emb: &AvgEmbedding<S>,
    pairs: I,
) -> Result<LipschitzProbe<S>, EmbedError>
where
    S: Scalar,
    I: IntoIterator<Item = (Vec<S>, Vec<S>)>,
{
    let mut max_ratio = S::zero();
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (x, y) in pairs {
        let d = crate::metric::lp_distance(&x, &y, emb.p_exp())?;
        if d == S::zero() {
            skipped += 1;
            continue;
        }
        let fx = emb.embed(&x)?;
        let fy = emb.embed(&y)?;
        let ratio = l2_distance(&fx, &fy) / d;
        if ratio > max_ratio {
            max_ratio = ratio;
        }
        used += 1;
    }
    Ok(LipschitzProbe {
        max_ratio,
        pairs_used: used,
        pairs_skipped: skipped,
    })
}

/// Gaussian pairs at mixed scales: each point gets coordinates from a
/// standard normal multiplied by `10^k` with `k` drawn uniformly from
/// `scale_exps`. Used to stress the Lipschitz bound far from the dataset.
pub fn mixed_scale_pairs<S: Scalar>(
    dim: usize,
    scale_exps: std::ops::RangeInclusive<i32>,
    seed: u64,
) -> impl Iterator<Item = (Vec<S>, Vec<S>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = *scale_exps.start();
    let hi = *scale_exps.end();
    std::iter::from_fn(move || {
        let draw = |rng: &mut ChaCha8Rng| {
            let k = rng.random_range(lo..=hi);
            let scale = S::from_config(10f64.powi(k));
            (0..dim)
                .map(|_| S::std_normal(rng) * scale)
                .collect::<Vec<S>>()
        };
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        Some((x, y))
    })
}

/// `sum_{i,j} ||f(x_i - z) - f(x_j - z)||_2^2 / sum_{i,j} ||x_i - x_j||_p^2`
/// over all ordered pairs, by brute-force double loop.
pub fn noncontraction_ratio<S: Scalar>(
    ds: &Dataset<S>,
    emb: &AvgEmbedding<S>,
) -> Result<S, EmbedError> {
    if ds.len() < 2 {
        return Err(EmbedError::Metric(MetricError::TooFewPoints {
            need: 2,
            got: ds.len(),
        }));
    }
    if ds.dim() != emb.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: emb.dim(),
            right: ds.dim(),
        });
    }
    let embedded: Vec<Vec<S>> = ds.iter().map(|x| emb.embed_unchecked(x)).collect();
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for i in 0..ds.len() {
        for j in 0..ds.len() {
            if i == j {
                continue;
            }
            let fd = l2_distance(&embedded[i], &embedded[j]);
            num.add(fd * fd);
            let d = ds.distance(i, j);
            den.add(d * d);
        }
    }
    if den.value() == S::zero() {
        return Err(EmbedError::UndefinedRatio);
    }
    Ok(num.value() / den.value())
}

/// The numerator `sum_{i,j} ||f_i - f_j||_2^2` over ordered pairs, computed
/// through the identity `2n * sum_i ||f_i||^2 - 2 ||sum_i f_i||^2`. One
/// embedding pass per candidate instead of a quadratic pair loop; the
/// denominator does not depend on `z`, so the scan ranks candidates by this
/// alone.
fn embedded_spread<S: Scalar>(ds: &Dataset<S>, ids: &[u32], emb: &AvgEmbedding<S>) -> S {
    let n = S::from_usize(ids.len()).unwrap();
    let mut sum_norm_sq = KahanSum::new();
    let mut sum_vec: Vec<KahanSum<S>> = vec![KahanSum::new(); ds.dim()];
    for &id in ids {
        let f = emb.embed_unchecked(ds.point(id as usize));
        sum_norm_sq.add(l2_norm_sq(&f));
        for (acc, &v) in sum_vec.iter_mut().zip(&f) {
            acc.add(v);
        }
    }
    let mut centroid_sq = KahanSum::new();
    for acc in &sum_vec {
        let v = acc.value();
        centroid_sq.add(v * v);
    }
    let two = S::from_config(2.0);
    two * n * sum_norm_sq.value() - two * centroid_sq.value()
}

/// `sum over ordered pairs of ||x_i - x_j||_p^2` restricted to `ids`.
/// Exact when the pair count fits the budget, otherwise estimated from a
/// seeded sample of pairs (scaled to the full ordered-pair count).
fn pairwise_sq_sum<S: Scalar>(ds: &Dataset<S>, ids: &[u32], pair_budget: usize, seed: u64) -> S {
    let m = ids.len();
    let total_pairs = m * (m - 1);
    let mut acc = KahanSum::new();
    if total_pairs <= pair_budget {
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                let d = ds.distance(i as usize, j as usize);
                acc.add(d * d);
            }
        }
        return S::from_config(2.0) * acc.value();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = pair_budget.max(1);
    for _ in 0..samples {
        let i = ids[rng.random_range(0..m)];
        let mut j = ids[rng.random_range(0..m)];
        while j == i {
            j = ids[rng.random_range(0..m)];
        }
        let d = ds.distance(i as usize, j as usize);
        acc.add(d * d);
    }
    acc.value() / S::from_usize(samples).unwrap() * S::from_usize(total_pairs).unwrap()
}

/// Which candidate center produced a score.
#[derive(Clone, Debug, PartialEq)]
pub enum CenterCandidate {
    Mean,
    Median,
    DataPoint(u32),
    /// Random offset from the median at scale `base * 2^k`.
    Perturbation { scale_exp: i32 },
}

impl std::fmt::Display for CenterCandidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CenterCandidate::Mean => write!(f, "mean"),
            CenterCandidate::Median => write!(f, "median"),
            CenterCandidate::DataPoint(id) => write!(f, "point:{id}"),
            CenterCandidate::Perturbation { scale_exp } => write!(f, "perturb:2^{scale_exp}"),
        }
    }
}

/// Candidate-set policy for [`center_scan`].
///
/// The default mirrors the scanner's documented search set: coordinate-wise
/// mean and median, up to 64 sampled dataset points, and 64 random
/// perturbations of the median at scales `perturb_base * 2^k`,
/// `k in [-3, 4]`. [`CenterPolicy::build_time`] is the slimmed-down set the
/// tree construction uses per partition node.
#[derive(Clone, Debug)]
pub struct CenterPolicy<S> {
    pub include_mean: bool,
    pub include_median: bool,
    pub sample_points: usize,
    pub perturbations: usize,
    pub perturb_base: S,
    /// Max ordered pairs evaluated exactly for the reported ratio; larger
    /// node sets fall back to a seeded pair sample.
    pub denominator_pair_budget: usize,
}

impl<S: Scalar> Default for CenterPolicy<S> {
    fn default() -> Self {
        Self {
            include_mean: true,
            include_median: true,
            sample_points: 64,
            perturbations: 64,
            perturb_base: S::one(),
            denominator_pair_budget: usize::MAX,
        }
    }
}

impl<S: Scalar> CenterPolicy<S> {
    /// Cheaper candidate set for per-node use during index construction.
    pub fn build_time() -> Self {
        Self {
            include_mean: true,
            include_median: true,
            sample_points: 8,
            perturbations: 4,
            perturb_base: S::one(),
            denominator_pair_budget: 1 << 18,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CenterScanResult<S> {
    pub best_z: Vec<S>,
    pub best_c: S,
    pub best_candidate: CenterCandidate,
    /// Every candidate with its ratio, in evaluation order.
    pub evaluated: Vec<(CenterCandidate, S)>,
}

fn coordinate_mean<S: Scalar>(ds: &Dataset<S>, ids: &[u32]) -> Vec<S> {
    let n = S::from_usize(ids.len()).unwrap();
    let mut sums = vec![KahanSum::new(); ds.dim()];
    for &id in ids {
        for (acc, &v) in sums.iter_mut().zip(ds.point(id as usize)) {
            acc.add(v);
        }
    }
    sums.into_iter().map(|a| a.value() / n).collect()
}

fn coordinate_median<S: Scalar>(ds: &Dataset<S>, ids: &[u32]) -> Vec<S> {
    let mut out = Vec::with_capacity(ds.dim());
    let mut col: Vec<S> = Vec::with_capacity(ids.len());
    for c in 0..ds.dim() {
        col.clear();
        col.extend(ids.iter().map(|&id| ds.point(id as usize)[c]));
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = col.len();
        let med = if m % 2 == 1 {
            col[m / 2]
        } else {
            (col[m / 2 - 1] + col[m / 2]) / S::from_config(2.0)
        };
        out.push(med);
    }
    out
}

/// Scans candidate centers and returns the one maximizing the
/// non-contraction ratio. Deterministic given the seed: candidates are
/// generated and evaluated in a fixed order and ties keep the first maximum.
pub fn center_scan<S: Scalar>(
    ds: &Dataset<S>,
    policy: &CenterPolicy<S>,
    seed: u64,
) -> Result<CenterScanResult<S>, EmbedError> {
    let ids: Vec<u32> = (0..ds.len() as u32).collect();
    center_scan_on(ds, &ids, policy, seed)
}

/// [`center_scan`] restricted to a subset of point ids.
pub fn center_scan_on<S: Scalar>(
    ds: &Dataset<S>,
    ids: &[u32],
    policy: &CenterPolicy<S>,
    seed: u64,
) -> Result<CenterScanResult<S>, EmbedError> {
    if ids.len() < 2 {
        return Err(EmbedError::Metric(MetricError::TooFewPoints {
            need: 2,
            got: ids.len(),
        }));
    }
    let denominator = pairwise_sq_sum(ds, ids, policy.denominator_pair_budget, seed ^ 0x9e37);
    if denominator == S::zero() {
        return Err(EmbedError::UndefinedRatio);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let median = coordinate_median(ds, ids);
    let mut candidates: Vec<(CenterCandidate, Vec<S>)> = Vec::new();
    if policy.include_mean {
        candidates.push((CenterCandidate::Mean, coordinate_mean(ds, ids)));
    }
    if policy.include_median {
        candidates.push((CenterCandidate::Median, median.clone()));
    }
    if policy.sample_points > 0 {
        let k = policy.sample_points.min(ids.len());
        let picked = rand::seq::index::sample(&mut rng, ids.len(), k);
        let mut picked: Vec<u32> = picked.iter().map(|i| ids[i]).collect();
        picked.sort_unstable();
        for id in picked {
            candidates.push((
                CenterCandidate::DataPoint(id),
                ds.point(id as usize).to_vec(),
            ));
        }
    }
    for i in 0..policy.perturbations {
        let scale_exp = -3 + (i % 8) as i32;
        let scale = policy.perturb_base * S::from_config(2f64.powi(scale_exp));
        let z: Vec<S> = median
            .iter()
            .map(|&m| m + S::std_normal(&mut rng) * scale)
            .collect();
        candidates.push((CenterCandidate::Perturbation { scale_exp }, z));
    }

    let mut evaluated = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, S)> = None;
    for (idx, (kind, z)) in candidates.iter().enumerate() {
        let emb = AvgEmbedding::new(ds.p_exp(), z.clone())?;
        let c = embedded_spread(ds, ids, &emb) / denominator;
        evaluated.push((kind.clone(), c));
        let better = match best {
            None => true,
            Some((_, bc)) => c > bc,
        };
        if better {
            best = Some((idx, c));
        }
    }
    let (best_idx, best_c) = best.expect("candidate set is never empty");
    Ok(CenterScanResult {
        best_z: candidates[best_idx].1.clone(),
        best_c,
        best_candidate: candidates[best_idx].0.clone(),
        evaluated,
    })
}

/// Outcome of checking both defining properties of an average embedding
/// against a dataset.
#[derive(Clone, Debug)]
pub struct EmbedVerifyReport<S> {
    pub max_lip_ratio: S,
    pub noncontraction_ratio_c: S,
    pub pairs_probed: usize,
    pub passed_lipschitz: bool,
    pub passed_noncontraction: bool,
}

/// Checks the Lipschitz bound over all dataset pairs plus `n_pairs` random
/// jittered pairs, and the non-contraction inequality with constant 1.
pub fn verify_average_embedding<S: Scalar>(
    ds: &Dataset<S>,
    emb: &AvgEmbedding<S>,
    n_pairs: usize,
    seed: u64,
) -> Result<EmbedVerifyReport<S>, EmbedError> {
    if ds.len() < 2 {
        return Err(EmbedError::Metric(MetricError::TooFewPoints {
            need: 2,
            got: ds.len(),
        }));
    }
    if ds.dim() != emb.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: emb.dim(),
            right: ds.dim(),
        });
    }

    let embedded: Vec<Vec<S>> = ds.iter().map(|x| emb.embed_unchecked(x)).collect();
    let mut max_ratio = S::zero();
    let mut probed = 0usize;
    for i in 0..ds.len() {
        for j in (i + 1)..ds.len() {
            let d = ds.distance(i, j);
            if d == S::zero() {
                continue;
            }
            let ratio = l2_distance(&embedded[i], &embedded[j]) / d;
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            probed += 1;
        }
    }

    // Random pairs: dataset points jittered at a quarter of the per-axis
    // spread, so the probe also sees points off the dataset.
    let mut lo = ds.point(0).to_vec();
    let mut hi = ds.point(0).to_vec();
    for x in ds.iter() {
        for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(x) {
            if v < *l {
                *l = v;
            }
            if v > *h {
                *h = v;
            }
        }
    }
    let quarter = S::from_config(0.25);
    let sigma: Vec<S> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| {
            let s = (h - l) * quarter;
            if s > S::zero() {
                s
            } else {
                S::one()
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jittered = |rng: &mut ChaCha8Rng| -> Vec<S> {
        let base = ds.point(rng.random_range(0..ds.len()));
        base.iter()
            .zip(&sigma)
            .map(|(&b, &s)| b + S::std_normal(rng) * s)
            .collect()
    };
    for _ in 0..n_pairs {
        let x = jittered(&mut rng);
        let y = jittered(&mut rng);
        let d = lp_distance_unchecked(&x, &y, ds.p_exp());
        if d == S::zero() {
            continue;
        }
        let fx = emb.embed_unchecked(&x);
        let fy = emb.embed_unchecked(&y);
        let ratio = l2_distance(&fx, &fy) / d;
        if ratio > max_ratio {
            max_ratio = ratio;
        }
        probed += 1;
    }

    let c = noncontraction_ratio(ds, emb)?;
    let slack = S::one() + S::from_config(1e-9);
    Ok(EmbedVerifyReport {
        max_lip_ratio: max_ratio,
        noncontraction_ratio_c: c,
        pairs_probed: probed,
        passed_lipschitz: max_ratio <= emb.lip_const() * slack,
        passed_noncontraction: c >= S::one(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mazur_h_examples() {
        assert_eq!(mazur_h(&[1.0, 0.0, 0.0], 4.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(mazur_h(&[-4.0, 0.0], 2.0), vec![-4.0, 0.0]);
        let h = mazur_h(&[2.0, -2.0], 4.0);
        assert_relative_eq!(h[0], 4.0, max_relative = 1e-12);
        assert_relative_eq!(h[1], -4.0, max_relative = 1e-12);
    }

    #[test]
    fn mazur_h_norm_identity() {
        // ||h(x)||_2 = ||x||_p^(p/2)
        let x = [1.5f64, -0.25, 3.0, 0.0];
        for p in [2.0f64, 3.0, 4.0, 8.0] {
            let h = mazur_h(&x, p);
            let lhs = l2_norm_sq(&h).sqrt();
            let rhs = crate::metric::lp_norm(&x, p).unwrap().powf(p / 2.0);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn embed_at_center_is_zero() {
        let emb = AvgEmbedding::new(4.0, vec![1.0, -2.0]).unwrap();
        assert_eq!(emb.embed(&[1.0, -2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn embed_two_minus_two_p4() {
        // f((2,-2)) at z = 0, p = 4 is (2^(3/4), -2^(3/4)); its l_2 norm is
        // the point's l_4 norm, 2^(5/4).
        let emb = AvgEmbedding::new(4.0f64, vec![0.0, 0.0]).unwrap();
        let f = emb.embed(&[2.0, -2.0]).unwrap();
        assert_relative_eq!(f[0], 1.681792830507429, max_relative = 1e-12);
        assert_relative_eq!(f[1], -1.681792830507429, max_relative = 1e-12);
        assert_relative_eq!(
            l2_norm_sq(&f).sqrt(),
            2.378414230005442,
            max_relative = 1e-12
        );
    }

    #[test]
    fn embed_is_identity_at_p2() {
        let emb = AvgEmbedding::new(2.0, vec![0.0, 0.0, 0.0]).unwrap();
        let x = [0.3, -7.0, 2.5];
        let f = emb.embed(&x).unwrap();
        for (a, b) in f.iter().zip(&x) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn embed_rejects_dim_mismatch_and_bad_inputs() {
        let emb = AvgEmbedding::new(4.0, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            emb.embed(&[1.0]).unwrap_err(),
            EmbedError::DimensionMismatch { .. }
        ));
        assert!(matches!(
            AvgEmbedding::new(1.5, vec![0.0]).unwrap_err(),
            EmbedError::InvalidExponent(_)
        ));
        assert!(matches!(
            AvgEmbedding::new(4.0, vec![f64::NAN]).unwrap_err(),
            EmbedError::NonFiniteCenter
        ));
    }

    #[test]
    fn lip_const_is_p_plus_one() {
        let emb = AvgEmbedding::new(8.0, vec![0.0]).unwrap();
        assert_eq!(emb.lip_const(), 9.0);
    }

    #[test]
    fn lipschitz_probe_is_one_at_p2() {
        let emb = AvgEmbedding::new(2.0, vec![0.0, 0.0]).unwrap();
        let probe = lipschitz_probe(
            &emb,
            mixed_scale_pairs::<f64>(2, -2..=2, 9).take(500),
        )
        .unwrap();
        assert_eq!(probe.pairs_used, 500);
        assert!((probe.max_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_probe_on_a_ray_is_isometric() {
        // Same-sign collinear points: f restricted to a ray preserves norms.
        let emb = AvgEmbedding::new(4.0, vec![0.0, 0.0, 0.0]).unwrap();
        let pairs: Vec<_> = (1..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                (vec![t, 0.0, 0.0], vec![t + 1.25, 0.0, 0.0])
            })
            .collect();
        let probe = lipschitz_probe(&emb, pairs).unwrap();
        assert_relative_eq!(probe.max_ratio, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn lipschitz_probe_skips_identical_pairs() {
        let emb = AvgEmbedding::new(4.0, vec![0.0]).unwrap();
        let probe =
            lipschitz_probe(&emb, vec![(vec![1.0], vec![1.0]), (vec![0.0], vec![2.0])]).unwrap();
        assert_eq!(probe.pairs_used, 1);
        assert_eq!(probe.pairs_skipped, 1);
    }

    #[test]
    fn lipschitz_bound_holds_at_p4() {
        let emb = AvgEmbedding::new(4.0, vec![0.0; 8]).unwrap();
        let probe = lipschitz_probe(
            &emb,
            mixed_scale_pairs::<f64>(8, -3..=3, 17).take(20_000),
        )
        .unwrap();
        assert!(probe.max_ratio <= 5.0 * (1.0 + 1e-9));
        assert!(probe.max_ratio > 0.5);
    }

    #[test]
    fn noncontraction_identity_cases() {
        let ds = Dataset::new(vec![vec![0.5, 1.0], vec![-2.0, 3.0], vec![4.0, 0.0]], 2.0).unwrap();
        let emb = AvgEmbedding::new(2.0, vec![7.0, -3.0]).unwrap();
        let c = noncontraction_ratio(&ds, &emb).unwrap();
        assert_relative_eq!(c, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn noncontraction_two_points_center_on_one() {
        // z equal to one of the two points: norm preservation forces C = 1.
        let ds = Dataset::new(vec![vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 9.0]], 4.0).unwrap();
        let emb = AvgEmbedding::new(4.0, vec![1.0, 2.0, 3.0]).unwrap();
        let c = noncontraction_ratio(&ds, &emb).unwrap();
        assert_relative_eq!(c, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn noncontraction_undefined_for_coincident_points() {
        let ds = Dataset::new(vec![vec![1.0], vec![1.0]], 4.0).unwrap();
        let emb = AvgEmbedding::new(4.0, vec![0.0]).unwrap();
        assert_eq!(
            noncontraction_ratio(&ds, &emb).unwrap_err(),
            EmbedError::UndefinedRatio
        );
    }

    #[test]
    fn noncontraction_matches_brute_force_cloud() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..6).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let ds = Dataset::new(pts.clone(), 4.0).unwrap();
        let median_z = coordinate_median(&ds, &(0..100u32).collect::<Vec<_>>());
        let emb = AvgEmbedding::new(4.0, median_z).unwrap();
        let c = noncontraction_ratio(&ds, &emb).unwrap();
        assert!(c > 0.0 && c <= 25.0, "C = {c}");

        // Independent oracle: naive double loop, naive powers.
        let fd = |x: &[f64]| -> Vec<f64> {
            let v: Vec<f64> = x.iter().zip(emb.center()).map(|(a, z)| a - z).collect();
            let n = v.iter().map(|t| t.abs().powf(4.0)).sum::<f64>().powf(0.25);
            if n == 0.0 {
                return vec![0.0; v.len()];
            }
            v.iter()
                .map(|t| t.signum() * (t.abs() / n).powf(2.0) * n)
                .collect()
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for a in &pts {
            for b in &pts {
                let fa = fd(a);
                let fb = fd(b);
                num += fa
                    .iter()
                    .zip(&fb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>();
                let d = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs().powf(4.0))
                    .sum::<f64>()
                    .powf(0.25);
                den += d * d;
            }
        }
        assert_relative_eq!(c, num / den, max_relative = 1e-10);
    }

    #[test]
    fn embedded_spread_matches_pair_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ds = Dataset::new(pts, 4.0).unwrap();
        let emb = AvgEmbedding::new(4.0, vec![0.1, -0.2, 0.05, 0.3]).unwrap();
        let ids: Vec<u32> = (0..30).collect();
        let fast = embedded_spread(&ds, &ids, &emb);
        let embedded: Vec<Vec<f64>> = ds.iter().map(|x| emb.embed_unchecked(x)).collect();
        let mut slow = 0.0;
        for i in 0..embedded.len() {
            for j in 0..embedded.len() {
                slow += embedded[i]
                    .iter()
                    .zip(&embedded[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
        assert_relative_eq!(fast, slow, max_relative = 1e-9);
    }

    #[test]
    fn center_scan_p2_returns_one() {
        let ds = Dataset::new(
            vec![vec![0.0, 0.0], vec![1.0, 3.0], vec![-2.0, 1.0]],
            2.0,
        )
        .unwrap();
        let res = center_scan(&ds, &CenterPolicy::default(), 7).unwrap();
        assert_relative_eq!(res.best_c, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn center_scan_beats_or_matches_mean() {
        // The scan includes the mean, so its max is at least C(mean).
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0) + 5.0).collect())
            .collect();
        pts.extend((0..20).map(|_| {
            (0..3)
                .map(|_| rng.random_range(-1.0..1.0) - 5.0)
                .collect::<Vec<f64>>()
        }));
        let ds = Dataset::new(pts, 4.0).unwrap();
        let res = center_scan(&ds, &CenterPolicy::default(), 99).unwrap();
        let ids: Vec<u32> = (0..40).collect();
        let mean_emb = AvgEmbedding::new(4.0, coordinate_mean(&ds, &ids)).unwrap();
        let c_mean = noncontraction_ratio(&ds, &mean_emb).unwrap();
        assert!(res.best_c >= c_mean - 1e-12);
    }

    #[test]
    fn center_scan_handles_outlier_cloud() {
        let mut pts = vec![vec![1.0f64, 1.0]; 9];
        pts.push(vec![50.0, -3.0]);
        let ds = Dataset::new(pts, 4.0).unwrap();
        let res = center_scan(&ds, &CenterPolicy::default(), 1).unwrap();
        assert!(res.best_c.is_finite() && res.best_c > 0.0);
    }

    #[test]
    fn center_scan_degenerate_dataset_errors() {
        let ds = Dataset::new(vec![vec![2.0, 2.0]; 5], 4.0).unwrap();
        assert_eq!(
            center_scan(&ds, &CenterPolicy::default(), 0).unwrap_err(),
            EmbedError::UndefinedRatio
        );
    }

    #[test]
    fn center_scan_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let ds = Dataset::new(pts, 4.0).unwrap();
        let a = center_scan(&ds, &CenterPolicy::default(), 42).unwrap();
        let b = center_scan(&ds, &CenterPolicy::default(), 42).unwrap();
        assert_eq!(a.best_z, b.best_z);
        assert_eq!(a.best_c, b.best_c);
    }

    #[test]
    fn verify_passes_at_p2() {
        let ds = Dataset::new(
            vec![vec![0.0f64, 1.0], vec![2.0, -1.0], vec![-3.0, 0.5]],
            2.0,
        )
        .unwrap();
        let emb = AvgEmbedding::new(2.0, vec![0.2, 0.4]).unwrap();
        let rep = verify_average_embedding(&ds, &emb, 200, 5).unwrap();
        assert!(rep.passed_lipschitz && rep.passed_noncontraction);
        assert!((rep.max_lip_ratio - 1.0).abs() < 1e-12);
        assert!((rep.noncontraction_ratio_c - 1.0).abs() < 1e-12);
        assert!(rep.pairs_probed >= 3 + 190);
    }

    #[test]
    fn verify_flags_contracting_configuration() {
        // Two points differing only in a coordinate near zero: the power map
        // flattens that coordinate, so distances contract and C << 1.
        let ds = Dataset::new(vec![vec![1.0, 0.01], vec![1.0, -0.01]], 4.0).unwrap();
        let emb = AvgEmbedding::new(4.0, vec![0.0, 0.0]).unwrap();
        let rep = verify_average_embedding(&ds, &emb, 50, 5).unwrap();
        assert!(!rep.passed_noncontraction);
        assert!(rep.noncontraction_ratio_c < 0.1);
        assert!(rep.passed_lipschitz);
    }

    #[test]
    fn verify_report_is_scale_equivariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let t = 32.0;
        let scaled: Vec<Vec<f64>> = pts
            .iter()
            .map(|r| r.iter().map(|v| v * t).collect())
            .collect();
        let z = vec![0.25, -0.5, 1.0];
        let zs: Vec<f64> = z.iter().map(|v| v * t).collect();
        let a = verify_average_embedding(
            &Dataset::new(pts, 4.0).unwrap(),
            &AvgEmbedding::new(4.0, z).unwrap(),
            300,
            77,
        )
        .unwrap();
        let b = verify_average_embedding(
            &Dataset::new(scaled, 4.0).unwrap(),
            &AvgEmbedding::new(4.0, zs).unwrap(),
            300,
            77,
        )
        .unwrap();
        assert_relative_eq!(a.max_lip_ratio, b.max_lip_ratio, max_relative = 1e-9);
        assert_relative_eq!(
            a.noncontraction_ratio_c,
            b.noncontraction_ratio_c,
            max_relative = 1e-9
        );
        assert_eq!(a.passed_lipschitz, b.passed_lipschitz);
        assert_eq!(a.passed_noncontraction, b.passed_noncontraction);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn norm_preservation(x in prop::collection::vec(-100.0..100.0f64, 1..6), pi in 0usize..4) {
            let p = [2.0, 3.0, 4.0, 8.0][pi];
            let emb = AvgEmbedding::new(p, vec![0.0; x.len()]).unwrap();
            let f = emb.embed(&x).unwrap();
            let lhs = l2_norm_sq(&f).sqrt();
            let rhs = crate::metric::lp_norm(&x, p).unwrap();
            prop_assert!((lhs - rhs).abs() <= rhs.abs() * 1e-9 + 1e-300);
        }

        #[test]
        fn mazur_round_trip(x in prop::collection::vec(-50.0..50.0f64, 1..6), pi in 0usize..4) {
            let p = [2.0, 3.0, 4.0, 8.0][pi];
            let back = mazur_h_inv(&mazur_h(&x, p), p);
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= b.abs() * 1e-9 + 1e-12);
            }
        }

        #[test]
        fn scale_equivariance(x in prop::collection::vec(-20.0..20.0f64, 1..5),
                              t in 0.01..100.0f64, pi in 0usize..4) {
            let p = [2.0, 3.0, 4.0, 8.0][pi];
            let emb = AvgEmbedding::new(p, vec![0.0; x.len()]).unwrap();
            let fx = emb.embed(&x).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * t).collect();
            let fs = emb.embed(&scaled).unwrap();
            for (a, b) in fs.iter().zip(&fx) {
                prop_assert!((a - b * t).abs() <= (b * t).abs() * 1e-9 + 1e-12);
            }
        }

        #[test]
        fn lipschitz_hard_bound(pairs_seed in 0u64..1000, pi in 0usize..4) {
            let p = [2.0, 3.0, 4.0, 8.0][pi];
            let emb = AvgEmbedding::new(p, vec![0.0; 4]).unwrap();
            let probe = lipschitz_probe(
                &emb,
                mixed_scale_pairs::<f64>(4, -2..=2, pairs_seed).take(50),
            ).unwrap();
            prop_assert!(probe.max_ratio <= (p + 1.0) * (1.0 + 1e-9));
        }
    }
}
