//! Ground truth, instance generation and experiment evaluation: exact
//! brute-force nearest neighbor, planted bounded instances, and the
//! recall/approximation report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{derive_params, Forest, ForestError, QueryResult};
use crate::metric::{
    is_beta_bounded, lp_norm_unchecked, BoundedInstanceParams, Dataset, MetricError,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(
        "instance generation exhausted its rejection budget at n={n}, d={d}; \
         lower n or raise the dimension so the shell can hold the points"
    )]
    RejectionBudget { n: usize, d: usize },
}

/// Exact nearest neighbor by linear scan, ties broken by smallest id.
pub fn brute_force_nn<S: Scalar>(ds: &Dataset<S>, q: &[S]) -> Result<QueryResult<S>, EvalError> {
    if q.len() != ds.dim() {
        return Err(EvalError::Metric(MetricError::DimensionMismatch {
            left: ds.dim(),
            right: q.len(),
        }));
    }
    let mut best = QueryResult {
        id: 0,
        distance: S::infinity(),
    };
    for i in 0..ds.len() {
        let d = ds.distance_to(i, q)?;
        if d < best.distance {
            best = QueryResult {
                id: i as u32,
                distance: d,
            };
        }
    }
    Ok(best)
}

/// One planted query: which dataset point was perturbed, and by how far.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TruthEntry {
    pub query_id: u32,
    pub neighbor_id: u32,
    pub distance: f64,
}

/// A generated bounded instance: dataset, queries, and the planted truth.
#[derive(Clone, Debug)]
pub struct PlantedInstance<S> {
    pub dataset: Dataset<S>,
    pub queries: Vec<Vec<S>>,
    pub truth: Vec<TruthEntry>,
}

/// Uniform direction on the l_p unit sphere.
fn lp_sphere_dir<S: Scalar>(d: usize, p_exp: S, rng: &mut ChaCha8Rng) -> Vec<S> {
    loop {
        let g: Vec<S> = (0..d).map(|_| S::std_normal(rng)).collect();
        let norm = lp_norm_unchecked(&g, p_exp);
        if norm > S::zero() {
            return g.iter().map(|&v| v / norm).collect();
        }
    }
}

/// Shell sampler with per-point rejection: each accepted point keeps l_p
/// distance >= `min_dist` to all previous ones. Pairwise distances are
/// bounded above by the shell diameter automatically.
pub(crate) fn plant_on_shell<S: Scalar>(
    n: usize,
    d: usize,
    p_exp: S,
    radius: S,
    min_dist: S,
    rng: &mut ChaCha8Rng,
    attempts_per_point: usize,
) -> Result<Vec<Vec<S>>, EvalError> {
    let mut pts: Vec<Vec<S>> = Vec::with_capacity(n);
    while pts.len() < n {
        let mut accepted = false;
        for _ in 0..attempts_per_point {
            let cand: Vec<S> = lp_sphere_dir(d, p_exp, rng)
                .into_iter()
                .map(|v| v * radius)
                .collect();
            // Keep the candidate iff no prior point is strictly closer than
            // min_dist. The ball test short-circuits the typical far case;
            // the exact distance resolves the d == min_dist boundary, which
            // stays acceptable (bounds are inclusive).
            let ok = pts.iter().all(|existing| {
                !crate::metric::within_lp_ball(existing, &cand, p_exp, min_dist)
                    || crate::metric::lp_distance_unchecked(existing, &cand, p_exp) >= min_dist
            });
            if ok {
                pts.push(cand);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(EvalError::RejectionBudget { n, d });
        }
    }
    Ok(pts)
}

/// Generates a bounded instance: `n` points on the l_p shell of radius
/// `beta c r / 2` (so pairwise distances land in `[r, beta c r]`, with
/// too-close samples rejected), plus `n_queries` queries built by
/// perturbing random dataset points by l_p distance at most `r = 1`.
/// Asserts boundedness before returning.
pub fn plant_instance<S: Scalar>(
    n: usize,
    d: usize,
    p_exp: S,
    eps: S,
    n_queries: usize,
    seed: u64,
) -> Result<PlantedInstance<S>, EvalError> {
    if n < 2 || d < 2 {
        return Err(EvalError::Metric(MetricError::TooFewPoints {
            need: 2,
            got: n.min(d),
        }));
    }
    let params = derive_params(p_exp, eps, n, seed)?;
    let radius = params.beta * params.c_approx * params.r / S::from_config(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = plant_on_shell(n, d, p_exp, radius, params.r, &mut rng, 100)?;
    let dataset = Dataset::new(pts, p_exp)?;

    let bp = BoundedInstanceParams::new(params.r, params.c_approx, params.beta)?;
    debug_assert!(is_beta_bounded(&dataset, &bp)?);
    if !is_beta_bounded(&dataset, &bp)? {
        return Err(EvalError::RejectionBudget { n, d });
    }

    let mut queries = Vec::with_capacity(n_queries);
    let mut truth = Vec::with_capacity(n_queries);
    for qi in 0..n_queries {
        let target = rng.random_range(0..n);
        let dir = lp_sphere_dir(d, p_exp, &mut rng);
        // Magnitude in (0, r].
        let mag = (S::one() - S::unit_uniform(&mut rng)) * params.r;
        let q: Vec<S> = dataset
            .point(target)
            .iter()
            .zip(&dir)
            .map(|(&x, &u)| x + u * mag)
            .collect();
        let dist = dataset.distance_to(target, &q)?;
        debug_assert!(dist <= params.r * (S::one() + S::from_config(1e-9)));
        truth.push(TruthEntry {
            query_id: qi as u32,
            neighbor_id: target as u32,
            distance: dist.to_report(),
        });
        queries.push(q);
    }
    Ok(PlantedInstance {
        dataset,
        queries,
        truth,
    })
}

/// Flat experiment report; serialized as-is to JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_queries: usize,
    /// Fraction of queries returning a result.
    pub success_rate: f64,
    /// Hard guarantee: every returned distance was within `c * r`.
    pub all_within_c: bool,
    /// Mean of returned distance / true NN distance (zero-distance truths
    /// excluded and counted in `ratio_excluded`).
    pub ratio_mean: f64,
    pub ratio_max: f64,
    pub ratio_count: usize,
    pub ratio_excluded: usize,
    pub build_ms: f64,
    pub mean_query_us: f64,
    pub median_query_us: f64,
    pub cemp_nodes: usize,
    pub cemp_min: f64,
    pub cemp_mean: f64,
    pub cemp_max: f64,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "queries            {}", self.n_queries)?;
        writeln!(f, "success rate       {:.4}", self.success_rate)?;
        writeln!(f, "all within c*r     {}", self.all_within_c)?;
        writeln!(
            f,
            "ratio mean/max     {:.4} / {:.4}  ({} counted, {} zero-distance excluded)",
            self.ratio_mean, self.ratio_max, self.ratio_count, self.ratio_excluded
        )?;
        writeln!(f, "build time         {:.1} ms", self.build_ms)?;
        writeln!(
            f,
            "query time         mean {:.1} us, median {:.1} us",
            self.mean_query_us, self.median_query_us
        )?;
        write!(
            f,
            "embedding C_emp    {} nodes, min {:.4}, mean {:.4}, max {:.4}",
            self.cemp_nodes, self.cemp_min, self.cemp_mean, self.cemp_max
        )
    }
}

/// Runs every query through the forest and the brute-force oracle and
/// aggregates the outcome. `all_within_c` must hold on every run; a
/// violation is a release-blocking bug in the index.
pub fn evaluate<S: Scalar>(
    forest: &Forest<S>,
    inst: &PlantedInstance<S>,
) -> Result<EvalReport, EvalError> {
    let ds = forest.dataset();
    let answer_radius = forest.params().answer_radius();
    let mut successes = 0usize;
    let mut all_within_c = true;
    let mut ratio_sum = 0.0f64;
    let mut ratio_max = 0.0f64;
    let mut ratio_count = 0usize;
    let mut ratio_excluded = 0usize;
    let mut query_us: Vec<f64> = Vec::with_capacity(inst.queries.len());

    for q in &inst.queries {
        let start = std::time::Instant::now();
        let res = forest.query(q)?;
        query_us.push(start.elapsed().as_secs_f64() * 1e6);
        let exact = brute_force_nn(ds, q)?;
        if let Some(found) = res {
            successes += 1;
            // Recompute: the stored distance must match an independent
            // evaluation and clear the hard c*r guarantee.
            let recomputed = ds.distance_to(found.id as usize, q)?;
            if recomputed > answer_radius || found.distance != recomputed {
                all_within_c = false;
            }
            if exact.distance > S::zero() {
                let ratio = (found.distance / exact.distance).to_report();
                ratio_sum += ratio;
                ratio_max = ratio_max.max(ratio);
                ratio_count += 1;
            } else {
                ratio_excluded += 1;
            }
        }
    }

    let n_queries = inst.queries.len();
    let success_rate = if n_queries == 0 {
        1.0
    } else {
        successes as f64 / n_queries as f64
    };
    let ratio_mean = if ratio_count == 0 {
        0.0
    } else {
        ratio_sum / ratio_count as f64
    };
    let mean_query_us = if query_us.is_empty() {
        0.0
    } else {
        query_us.iter().sum::<f64>() / query_us.len() as f64
    };
    let median_query_us = if query_us.is_empty() {
        0.0
    } else {
        let mut sorted = query_us.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[sorted.len() / 2]
    };

    let cemp = forest.c_emp_values();
    let (cemp_min, cemp_mean, cemp_max) = if cemp.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            cemp.iter().cloned().fold(f64::INFINITY, f64::min),
            cemp.iter().sum::<f64>() / cemp.len() as f64,
            cemp.iter().cloned().fold(0.0f64, f64::max),
        )
    };

    Ok(EvalReport {
        n_queries,
        success_rate,
        all_within_c,
        ratio_mean,
        ratio_max,
        ratio_count,
        ratio_excluded,
        build_ms: forest.build_ms(),
        mean_query_us,
        median_query_us,
        cemp_nodes: cemp.len(),
        cemp_min,
        cemp_mean,
        cemp_max,
    })
}
