//! The search index: a collection of independently built randomized trees
//! over one dataset, plus the empirical checker for the per-node sparsity
//! bound the partition analysis relies on.

mod params;
mod persist;
mod tree;

pub use params::{
    derive_params, derive_seed, ForestError, IndexParams, BETA, DENSE_FRACTION, LEAF_SIZE,
    NEAR_RADIUS,
};
pub use persist::{load_forest, save_forest, PersistError};
pub use tree::{
    audit_tree, build_tree, find_dense_center, query_tree, QueryResult, TreeAudit, TreeNode,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::{verify_average_embedding, AvgEmbedding};
use crate::metric::{is_beta_bounded, BoundedInstanceParams, Dataset};
use crate::scalar::{KahanSum, Scalar};

/// An immutable forest of i.i.d. trees over an owned dataset.
#[derive(Debug)]
pub struct Forest<S> {
    dataset: Dataset<S>,
    params: IndexParams<S>,
    trees: Vec<TreeNode<S>>,
    build_ms: f64,
}

impl<S: Scalar> Forest<S> {
    pub fn dataset(&self) -> &Dataset<S> {
        &self.dataset
    }

    pub fn params(&self) -> &IndexParams<S> {
        &self.params
    }

    pub fn trees(&self) -> &[TreeNode<S>] {
        &self.trees
    }

    /// Wall-clock milliseconds the construction took (0 for loaded indexes).
    pub fn build_ms(&self) -> f64 {
        self.build_ms
    }

    /// Queries the trees in order and returns the first valid answer.
    pub fn query(&self, q: &[S]) -> Result<Option<QueryResult<S>>, ForestError> {
        for tree in &self.trees {
            if let Some(res) = query_tree(tree, q, &self.params, &self.dataset)? {
                return Ok(Some(res));
            }
        }
        Ok(None)
    }

    /// Measured per-partition-node non-contraction ratios across all trees.
    pub fn c_emp_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for tree in &self.trees {
            tree.collect_c_emp(&mut out);
        }
        out
    }

    pub(crate) fn from_parts(
        dataset: Dataset<S>,
        params: IndexParams<S>,
        trees: Vec<TreeNode<S>>,
    ) -> Self {
        Self {
            dataset,
            params,
            trees,
            build_ms: 0.0,
        }
    }
}

/// Builds `params.n_trees` trees in parallel, each from its own seed stream
/// (`derive_seed(params.seed, tree_index)`), so the result is reproducible
/// regardless of thread scheduling.
pub fn build_forest<S: Scalar>(
    dataset: Dataset<S>,
    params: IndexParams<S>,
) -> Result<Forest<S>, ForestError> {
    if dataset.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    let expect_p = params.lip_d - S::one();
    if (dataset.p_exp() - expect_p).abs() > S::from_config(1e-12) {
        return Err(ForestError::ExponentMismatch {
            params: expect_p.to_report(),
            dataset: dataset.p_exp().to_report(),
        });
    }
    if dataset.len() >= 2 {
        let bp = BoundedInstanceParams::new(params.r, params.c_approx, params.beta)?;
        if !is_beta_bounded(&dataset, &bp)? {
            log::warn!(
                "dataset is not beta-bounded at (r={}, c={}, beta={}); guarantees degrade",
                params.r,
                params.c_approx,
                params.beta
            );
        }
    }

    let start = std::time::Instant::now();
    let ids: Vec<u32> = (0..dataset.len() as u32).collect();
    let trees: Result<Vec<TreeNode<S>>, ForestError> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            build_tree(&dataset, ids.clone(), &params, &mut rng)
        })
        .collect();
    let trees = trees?;
    let build_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Forest {
        dataset,
        params,
        trees,
        build_ms,
    })
}

/// Result of checking the sparsity bound on the embedded neighborhood of a
/// query: at most a `1 - (1-p) lambda^2 / (4 beta^2 c^2)` fraction of the
/// point set may land within `w D` of the embedded query, provided the node
/// has no dense ball, the set's diameter is within `beta c`, and the
/// embedding verifies as an average embedding.
#[derive(Clone, Copy, Debug)]
pub struct LemmaAlphaReport<S> {
    pub alpha: S,
    pub bound: S,
    pub hypotheses_met: bool,
    pub holds: bool,
}

/// Pairs probed by the embedded verifier inside [`lemma_alpha_check`].
const LEMMA_VERIFY_PAIRS: usize = 512;

pub fn lemma_alpha_check<S: Scalar>(
    ds: &Dataset<S>,
    ids: &[u32],
    q: &[S],
    emb: &AvgEmbedding<S>,
    params: &IndexParams<S>,
    seed: u64,
) -> Result<LemmaAlphaReport<S>, ForestError> {
    if ids.len() < 2 {
        return Err(ForestError::Metric(crate::metric::MetricError::TooFewPoints {
            need: 2,
            got: ids.len(),
        }));
    }
    let far = params.far_embedded();
    let fq = emb.embed(q)?;
    let mut close = 0usize;
    for &id in ids {
        let f = emb.embed_unchecked(ds.point(id as usize));
        let mut acc = KahanSum::new();
        for (a, b) in f.iter().zip(&fq) {
            let d = *a - *b;
            acc.add(d * d);
        }
        if acc.value().sqrt() <= far {
            close += 1;
        }
    }
    let alpha = S::from_usize(close).unwrap() / S::from_usize(ids.len()).unwrap();

    let four = S::from_config(4.0);
    let beta_c = params.beta * params.c_approx;
    let bound = S::one()
        - (S::one() - params.dense_frac) * params.lambda * params.lambda
            / (four * beta_c * beta_c);

    // Hypotheses: no dense ball at radius lambda D, diameter within beta c,
    // and the embedding passes both defining checks on this point set.
    let no_dense = find_dense_center(ds, ids, params.ball_radius()).is_none();
    let mut diameter = S::zero();
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            let d = ds.distance(i as usize, j as usize);
            if d > diameter {
                diameter = d;
            }
        }
    }
    let sub = Dataset::new(
        ids.iter().map(|&i| ds.point(i as usize).to_vec()).collect(),
        ds.p_exp(),
    )?;
    // A degenerate point set (all coincident) cannot verify as an average
    // embedding; that counts as hypotheses unmet, not as an error.
    let verify_ok = match verify_average_embedding(&sub, emb, LEMMA_VERIFY_PAIRS, seed) {
        Ok(rep) => rep.passed_lipschitz && rep.passed_noncontraction,
        Err(crate::embed::EmbedError::UndefinedRatio) => false,
        Err(e) => return Err(e.into()),
    };
    let hypotheses_met = no_dense && diameter <= params.beta * params.c_approx && verify_ok;

    let holds = !hypotheses_met || alpha <= bound + S::from_config(1e-12);
    Ok(LemmaAlphaReport {
        alpha,
        bound,
        hypotheses_met,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn spread_dataset(n: usize, scale: f64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-scale..scale)).collect())
            .collect();
        Dataset::new(pts, 4.0).unwrap()
    }

    #[test]
    fn single_tree_forest_matches_build_tree() {
        let ds = spread_dataset(30, 1e5);
        let mut params = derive_params(4.0, 0.5, 30, 12).unwrap();
        params.n_trees = 1;
        let forest = build_forest(ds.clone(), params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(12, 0));
        let tree = build_tree(&ds, (0..30).collect(), &params, &mut rng).unwrap();
        assert_eq!(forest.trees()[0], tree);
    }

    #[test]
    fn same_seed_same_forest() {
        let ds = spread_dataset(50, 1e5);
        let params = derive_params(4.0, 0.5, 50, 4242).unwrap();
        let a = build_forest(ds.clone(), params).unwrap();
        let b = build_forest(ds, params).unwrap();
        assert_eq!(a.trees(), b.trees());
    }

    #[test]
    fn forest_rejects_exponent_mismatch() {
        let ds = spread_dataset(10, 10.0);
        let params = derive_params(8.0, 0.5, 10, 0).unwrap();
        assert!(matches!(
            build_forest(ds, params).unwrap_err(),
            ForestError::ExponentMismatch { .. }
        ));
    }

    #[test]
    fn per_tree_success_rate_clears_statistical_floor() {
        // Per-tree success on planted queries must beat n^(-eps) by a wide
        // margin (the floor is 256^(-0.5) ~ 0.0625).
        let inst = crate::eval::plant_instance::<f64>(256, 8, 4.0, 0.5, 20, 31).unwrap();
        let params = derive_params(4.0, 0.5, 256, 31).unwrap();
        let forest = build_forest(inst.dataset.clone(), params).unwrap();
        let mut successes = 0usize;
        let mut total = 0usize;
        for tree in forest.trees() {
            for q in &inst.queries {
                total += 1;
                if query_tree(tree, q, forest.params(), forest.dataset())
                    .unwrap()
                    .is_some()
                {
                    successes += 1;
                }
            }
        }
        let rate = successes as f64 / total as f64;
        let floor = (256f64).powf(-0.5);
        assert!(rate >= floor, "per-tree rate {rate} below n^-eps = {floor}");
    }

    #[test]
    fn unbounded_dataset_builds_with_warning_and_answers() {
        // Distances here sit far below r = 1, violating the bounded regime;
        // the build warns and proceeds, and answers still honor c * r.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec<f64>> = (0..24)
            .map(|_| (0..3).map(|_| rng.random_range(-0.01..0.01)).collect())
            .collect();
        let ds = Dataset::new(pts, 4.0).unwrap();
        let mut params = derive_params(4.0, 0.5, 24, 8).unwrap();
        params.n_trees = 4;
        let forest = build_forest(ds, params).unwrap();
        let res = forest.query(&[0.0, 0.0, 0.0]).unwrap();
        let found = res.expect("everything is within c * r here");
        assert!(found.distance <= params.answer_radius());
    }

    #[test]
    fn lemma_vacuous_when_hypotheses_fail() {
        // A dominant cluster guarantees a dense ball, so the hypotheses
        // fail and the bound holds vacuously.
        let ds = Dataset::new(vec![vec![0.0, 0.0]; 16], 4.0).unwrap();
        let params = derive_params(4.0, 0.5, 16, 0).unwrap();
        let emb = AvgEmbedding::new(4.0, vec![5.0, 5.0]).unwrap();
        let ids: Vec<u32> = (0..16).collect();
        let rep = lemma_alpha_check(&ds, &ids, &[0.1, 0.0], &emb, &params, 3).unwrap();
        assert!(!rep.hypotheses_met);
        assert!(rep.holds);
    }

    #[test]
    fn lemma_alpha_zero_when_embedded_far() {
        // Points ~1e5 apart embed ~1e5 apart (norm preservation), far
        // beyond w D, so only the planted neighbor itself can be close.
        let ds = spread_dataset(32, 2e5);
        let params = derive_params(4.0, 0.5, 32, 0).unwrap();
        let emb = AvgEmbedding::new(4.0, ds.point(3).to_vec()).unwrap();
        let ids: Vec<u32> = (0..32).collect();
        let q: Vec<f64> = ds.point(7).iter().map(|v| v + 0.1).collect();
        let rep = lemma_alpha_check(&ds, &ids, &q, &emb, &params, 3).unwrap();
        assert!(rep.alpha <= 1.0 / 16.0);
        assert!(rep.holds);
    }
}
