//! The recursive search tree: dense-ball peeling nodes, embed-and-hash
//! partition nodes, and leaves holding point ids.

use std::collections::BTreeMap;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::embed::{center_scan_on, AvgEmbedding, CenterPolicy, EmbedError};
use crate::lsh::{sample_lsh, LshFunction};
use crate::metric::{within_lp_ball, Dataset};
use crate::scalar::Scalar;

use super::params::{ForestError, IndexParams};

/// Hash resampling attempts before a degenerate partition becomes a leaf.
const HASH_RETRIES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode<S> {
    /// Dense ball around `center`: the ball's points are dropped from the
    /// subtree and answered by `representative`; the child inherits the
    /// rest.
    Ball {
        center: u32,
        representative: u32,
        child: Box<TreeNode<S>>,
    },
    /// Average embedding plus one hash; children are the non-empty buckets.
    Partition {
        embedding: AvgEmbedding<S>,
        hash: LshFunction<S>,
        /// Measured non-contraction ratio of the chosen center (estimated
        /// from sampled pairs on large nodes).
        c_emp: S,
        /// Sorted by bucket id.
        children: Vec<(i64, TreeNode<S>)>,
    },
    Leaf { points: Vec<u32> },
}

impl<S> TreeNode<S> {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Ball { child, .. } => 1 + child.depth(),
            TreeNode::Partition { children, .. } => {
                1 + children.iter().map(|(_, c)| c.depth()).max().unwrap_or(0)
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Ball { child, .. } => 1 + child.node_count(),
            TreeNode::Partition { children, .. } => {
                1 + children.iter().map(|(_, c)| c.node_count()).sum::<usize>()
            }
        }
    }

    /// Non-contraction ratios of every partition node in the subtree.
    pub fn collect_c_emp(&self, out: &mut Vec<f64>)
    where
        S: Scalar,
    {
        match self {
            TreeNode::Leaf { .. } => {}
            TreeNode::Ball { child, .. } => child.collect_c_emp(out),
            TreeNode::Partition {
                c_emp, children, ..
            } => {
                out.push(c_emp.to_report());
                for (_, c) in children {
                    c.collect_c_emp(out);
                }
            }
        }
    }
}

/// Answer to a query: a point id and its recomputed l_p distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryResult<S> {
    pub id: u32,
    pub distance: S,
}

/// Smallest-id point whose closed ball of `radius` holds strictly more than
/// an eighth of `ids`, by exhaustive scan. Per-pair distance evaluation
/// exits early once the partial power sum exceeds the radius, and a
/// candidate is abandoned as soon as the remaining points cannot reach the
/// threshold, neither of which changes the answer.
pub fn find_dense_center<S: Scalar>(ds: &Dataset<S>, ids: &[u32], radius: S) -> Option<u32> {
    let n = ids.len();
    let p_exp = ds.p_exp();
    for &x0 in ids {
        let x0_pt = ds.point(x0 as usize);
        let mut count = 0usize;
        for (scanned, &y) in ids.iter().enumerate() {
            if within_lp_ball(x0_pt, ds.point(y as usize), p_exp, radius) {
                count += 1;
                if 8 * count > n {
                    return Some(x0);
                }
            }
            let remaining = n - scanned - 1;
            if 8 * (count + remaining) <= n {
                break;
            }
        }
    }
    None
}

fn split_ball<S: Scalar>(
    ds: &Dataset<S>,
    ids: &[u32],
    center: u32,
    radius: S,
) -> (Vec<u32>, Vec<u32>) {
    let c_pt = ds.point(center as usize);
    let p_exp = ds.p_exp();
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for &id in ids {
        if within_lp_ball(c_pt, ds.point(id as usize), p_exp, radius) {
            inside.push(id);
        } else {
            outside.push(id);
        }
    }
    (inside, outside)
}

/// Nearest in-ball point to the center, ties broken by smallest id. The
/// center itself is in the ball at distance 0, so it wins unless a
/// duplicate with a smaller id exists.
fn pick_representative<S: Scalar>(ds: &Dataset<S>, in_ball: &[u32], center: u32) -> u32 {
    let c_pt = ds.point(center as usize);
    let mut best = (S::infinity(), u32::MAX);
    for &id in in_ball {
        let d = crate::metric::lp_distance_unchecked(c_pt, ds.point(id as usize), ds.p_exp());
        if d < best.0 || (d == best.0 && id < best.1) {
            best = (d, id);
        }
    }
    debug_assert!(best.1 != u32::MAX);
    best.1
}

/// Builds one tree over the given point ids, consuming randomness from the
/// caller's stream. Deterministic given the stream state.
pub fn build_tree<S: Scalar>(
    ds: &Dataset<S>,
    ids: Vec<u32>,
    params: &IndexParams<S>,
    rng: &mut ChaCha8Rng,
) -> Result<TreeNode<S>, ForestError> {
    if ids.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    build_node(ds, ids, params, 0, rng)
}

fn build_node<S: Scalar>(
    ds: &Dataset<S>,
    ids: Vec<u32>,
    params: &IndexParams<S>,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TreeNode<S>, ForestError> {
    if ids.len() <= params.leaf_size || depth >= params.max_depth {
        return Ok(TreeNode::Leaf { points: ids });
    }

    let ball_radius = params.ball_radius();
    if let Some(center) = find_dense_center(ds, &ids, ball_radius) {
        let (inside, outside) = split_ball(ds, &ids, center, ball_radius);
        let representative = pick_representative(ds, &inside, center);
        let child = if outside.is_empty() {
            TreeNode::Leaf { points: vec![] }
        } else {
            build_node(ds, outside, params, depth + 1, rng)?
        };
        return Ok(TreeNode::Ball {
            center,
            representative,
            child: Box::new(child),
        });
    }

    // No dense ball: pick a center for this node's embedding, then hash the
    // embedded points. All-identical point sets always have a dense ball,
    // so the scan only fails on truly degenerate numerics; fall back to a
    // leaf in that case.
    let scan_seed = rng.next_u64();
    let policy = CenterPolicy::<S>::build_time();
    let scan = match center_scan_on(ds, &ids, &policy, scan_seed) {
        Ok(scan) => scan,
        Err(EmbedError::UndefinedRatio) => {
            log::warn!("degenerate embedding at depth {depth}; forcing a leaf of {} points", ids.len());
            return Ok(TreeNode::Leaf { points: ids });
        }
        Err(e) => return Err(e.into()),
    };
    if scan.best_c < S::one() {
        log::warn!(
            "node embedding non-contraction ratio {} < 1 at depth {depth}; proceeding",
            scan.best_c
        );
    }
    let embedding = AvgEmbedding::new(ds.p_exp(), scan.best_z)?;
    let embedded: Vec<Vec<S>> = ids
        .iter()
        .map(|&id| embedding.embed_unchecked(ds.point(id as usize)))
        .collect();

    for _attempt in 0..=HASH_RETRIES {
        let hash = sample_lsh(ds.dim(), params.lsh_width, rng)?;
        let mut buckets: BTreeMap<i64, Vec<u32>> = BTreeMap::new();
        let mut degenerate = false;
        for (&id, f) in ids.iter().zip(&embedded) {
            match hash.hash(f) {
                Ok(k) => buckets.entry(k).or_default().push(id),
                Err(_) => {
                    degenerate = true;
                    break;
                }
            }
        }
        if degenerate || buckets.len() < 2 {
            continue;
        }
        let mut children = Vec::with_capacity(buckets.len());
        for (bucket, sub_ids) in buckets {
            let child = build_node(ds, sub_ids, params, depth + 1, rng)?;
            children.push((bucket, child));
        }
        return Ok(TreeNode::Partition {
            embedding,
            hash,
            c_emp: scan.best_c,
            children,
        });
    }
    log::warn!(
        "hash retry budget exhausted at depth {depth}; forcing a leaf of {} points",
        ids.len()
    );
    Ok(TreeNode::Leaf { points: ids })
}

/// Walks one tree for a query. Ball nodes answer immediately when the query
/// falls within `lambda D + r` of the stored center (any point of the
/// peeled ball is then within `2 lambda D + r <= c r`); partition nodes
/// descend into the query's bucket; leaves return their closest point iff
/// it clears the `c r` filter.
pub fn query_tree<S: Scalar>(
    tree: &TreeNode<S>,
    q: &[S],
    params: &IndexParams<S>,
    ds: &Dataset<S>,
) -> Result<Option<QueryResult<S>>, ForestError> {
    if q.len() != ds.dim() {
        return Err(ForestError::Metric(
            crate::metric::MetricError::DimensionMismatch {
                left: ds.dim(),
                right: q.len(),
            },
        ));
    }
    let ball_check = params.ball_radius() + params.r;
    let answer_radius = params.answer_radius();
    let mut node = tree;
    loop {
        match node {
            TreeNode::Ball {
                center,
                representative,
                child,
            } => {
                if ds.distance_to(*center as usize, q)? <= ball_check {
                    let distance = ds.distance_to(*representative as usize, q)?;
                    debug_assert!(distance <= answer_radius);
                    return Ok(Some(QueryResult {
                        id: *representative,
                        distance,
                    }));
                }
                node = child;
            }
            TreeNode::Partition {
                embedding,
                hash,
                children,
                ..
            } => {
                let f = embedding.embed_unchecked(q);
                let bucket = hash.hash(&f)?;
                match children.binary_search_by_key(&bucket, |(b, _)| *b) {
                    Ok(i) => node = &children[i].1,
                    Err(_) => return Ok(None),
                }
            }
            TreeNode::Leaf { points } => {
                let mut best: Option<QueryResult<S>> = None;
                for &id in points {
                    let d = ds.distance_to(id as usize, q)?;
                    let better = match &best {
                        None => true,
                        Some(b) => d < b.distance || (d == b.distance && id < b.id),
                    };
                    if better {
                        best = Some(QueryResult { id, distance: d });
                    }
                }
                return Ok(best.filter(|b| b.distance <= answer_radius));
            }
        }
    }
}

/// Structural audit of one tree against the id set it was built from:
/// every id lands in exactly one leaf or exactly one peeled ball, ball
/// children hold exactly the out-of-ball points, partition children are the
/// exact hash preimages, leaves respect the stopping rule, and the depth
/// cap holds.
pub fn audit_tree<S: Scalar>(
    ds: &Dataset<S>,
    tree: &TreeNode<S>,
    ids: &[u32],
    params: &IndexParams<S>,
) -> Result<TreeAudit, String> {
    let mut audit = TreeAudit::default();
    audit_node(ds, tree, ids.to_vec(), params, 0, &mut audit)?;
    let mut covered = audit.leaf_points.clone();
    covered.extend_from_slice(&audit.ball_covered);
    covered.sort_unstable();
    let mut expect = ids.to_vec();
    expect.sort_unstable();
    if covered != expect {
        return Err(format!(
            "coverage mismatch: {} covered vs {} expected",
            covered.len(),
            expect.len()
        ));
    }
    Ok(audit)
}

#[derive(Clone, Debug, Default)]
pub struct TreeAudit {
    pub leaf_points: Vec<u32>,
    pub ball_covered: Vec<u32>,
    pub max_depth_seen: usize,
    pub nodes_visited: usize,
}

fn audit_node<S: Scalar>(
    ds: &Dataset<S>,
    node: &TreeNode<S>,
    ids: Vec<u32>,
    params: &IndexParams<S>,
    depth: usize,
    audit: &mut TreeAudit,
) -> Result<(), String> {
    audit.nodes_visited += 1;
    audit.max_depth_seen = audit.max_depth_seen.max(depth);
    if depth > params.max_depth {
        return Err(format!("depth {depth} exceeds cap {}", params.max_depth));
    }
    match node {
        TreeNode::Leaf { points } => {
            // Leaves may exceed the capacity only via retry exhaustion or
            // the depth cap; either way they hold exactly the ids handed
            // down.
            let mut a = points.clone();
            a.sort_unstable();
            let mut b = ids;
            b.sort_unstable();
            if a != b {
                return Err("leaf points differ from the ids handed down".into());
            }
            audit.leaf_points.extend_from_slice(points);
            Ok(())
        }
        TreeNode::Ball {
            center,
            representative,
            child,
        } => {
            let radius = params.ball_radius();
            let (inside, outside) = split_ball(ds, &ids, *center, radius);
            if !inside.contains(center) {
                return Err("ball center not in its own ball".into());
            }
            if !inside.contains(representative) {
                return Err("ball representative outside the ball".into());
            }
            if 8 * inside.len() <= ids.len() {
                return Err("ball node is not dense".into());
            }
            audit.ball_covered.extend_from_slice(&inside);
            audit_node(ds, child, outside, params, depth + 1, audit)
        }
        TreeNode::Partition {
            embedding,
            hash,
            children,
            ..
        } => {
            let mut expect: BTreeMap<i64, Vec<u32>> = BTreeMap::new();
            for &id in &ids {
                let f = embedding.embed_unchecked(ds.point(id as usize));
                let k = hash.hash(&f).map_err(|e| e.to_string())?;
                expect.entry(k).or_default().push(id);
            }
            if expect.len() != children.len() {
                return Err(format!(
                    "bucket count mismatch: {} stored vs {} recomputed",
                    children.len(),
                    expect.len()
                ));
            }
            for ((bucket, child), (exp_bucket, exp_ids)) in children.iter().zip(expect) {
                if *bucket != exp_bucket {
                    return Err(format!("bucket id mismatch: {bucket} vs {exp_bucket}"));
                }
                audit_node(ds, child, exp_ids, params, depth + 1, audit)?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::params::derive_params;
    use rand::SeedableRng;

    fn small_params(n: usize) -> IndexParams<f64> {
        derive_params(4.0, 0.5, n, 99).unwrap()
    }

    #[test]
    fn dense_center_all_identical() {
        let ds = Dataset::new(vec![vec![2.0, 2.0]; 9], 4.0).unwrap();
        let ids: Vec<u32> = (0..9).collect();
        assert_eq!(find_dense_center(&ds, &ids, 1.0), Some(0));
    }

    #[test]
    fn dense_center_none_when_spread() {
        // Pairwise distances all > 2 * radius: each ball holds only its
        // center, and 1 <= n/8 for n >= 9.
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![10.0 * i as f64, 0.0]).collect();
        let ds = Dataset::new(pts, 4.0).unwrap();
        let ids: Vec<u32> = (0..12).collect();
        assert_eq!(find_dense_center(&ds, &ids, 1.0), None);
    }

    #[test]
    fn dense_center_finds_planted_cluster() {
        // 4 of 16 points huddle inside radius 1 around (100, 100) starting
        // at id 5; the rest are isolated. Brute-force ball counting says
        // ids 5..9 qualify; the scan returns the smallest.
        let mut pts: Vec<Vec<f64>> = (0..16).map(|i| vec![30.0 * i as f64, 0.0]).collect();
        for (k, id) in (5..9).enumerate() {
            pts[id] = vec![100.0, 100.0 + 0.1 * k as f64];
        }
        let ds = Dataset::new(pts, 4.0).unwrap();
        let ids: Vec<u32> = (0..16).collect();
        assert_eq!(find_dense_center(&ds, &ids, 1.0), Some(5));
    }

    #[test]
    fn tiny_set_becomes_single_leaf() {
        let ds = Dataset::new(vec![vec![0.0, 0.0], vec![5.0, 5.0]], 4.0).unwrap();
        let params = small_params(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = build_tree(&ds, vec![0, 1], &params, &mut rng).unwrap();
        assert_eq!(tree, TreeNode::Leaf { points: vec![0, 1] });
    }

    #[test]
    fn dominant_cluster_yields_ball_root() {
        // 12 points stacked at the origin dominate 20 spread points; the
        // dense-center oracle (all pairwise distances) confirms id 0.
        let mut pts = vec![vec![0.0, 0.0]; 12];
        pts.extend((0..20).map(|i| {
            let r = params_radius() * 3.0 * (i + 1) as f64;
            vec![r, r]
        }));
        let ds = Dataset::new(pts, 4.0).unwrap();
        let params = small_params(32);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids: Vec<u32> = (0..32).collect();
        let tree = build_tree(&ds, ids, &params, &mut rng).unwrap();
        match &tree {
            TreeNode::Ball {
                center,
                representative,
                ..
            } => {
                assert_eq!(*center, 0);
                assert_eq!(*representative, 0);
            }
            other => panic!("expected a ball root, got {other:?}"),
        }
    }

    fn params_radius() -> f64 {
        small_params(32).ball_radius()
    }

    #[test]
    fn build_is_deterministic_given_stream() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64) * 13.7, (i as f64 * 7.3) % 29.0])
            .collect();
        let ds = Dataset::new(pts, 4.0).unwrap();
        let params = small_params(40);
        let ids: Vec<u32> = (0..40).collect();
        let a = build_tree(&ds, ids.clone(), &params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = build_tree(&ds, ids, &params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn audit_passes_on_mixed_tree() {
        // Scale chosen so the set is neither one leaf nor fully dense.
        let mut pts = vec![vec![0.0, 0.0]; 10];
        let spread = params_radius() * 4.0;
        pts.extend((0..30).map(|i| {
            vec![
                spread * (1.0 + (i % 6) as f64),
                spread * (1.0 + (i / 6) as f64),
            ]
        }));
        let ds = Dataset::new(pts, 4.0).unwrap();
        let params = small_params(40);
        let ids: Vec<u32> = (0..40).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tree = build_tree(&ds, ids.clone(), &params, &mut rng).unwrap();
        let audit = audit_tree(&ds, &tree, &ids, &params).unwrap();
        assert_eq!(
            audit.leaf_points.len() + audit.ball_covered.len(),
            ids.len()
        );
        assert!(audit.max_depth_seen <= params.max_depth);
    }

    #[test]
    fn query_finds_exact_point_in_leaf() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 3.0, 1.0]).collect();
        let ds = Dataset::new(pts, 4.0).unwrap();
        let params = small_params(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = build_tree(&ds, (0..6).collect(), &params, &mut rng).unwrap();
        let res = query_tree(&tree, &[6.0, 1.0], &params, &ds).unwrap().unwrap();
        assert_eq!(res.id, 2);
        assert_eq!(res.distance, 0.0);
    }

    #[test]
    fn query_rejects_far_query() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 3.0, 1.0]).collect();
        let ds = Dataset::new(pts, 4.0).unwrap();
        let params = small_params(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = build_tree(&ds, (0..6).collect(), &params, &mut rng).unwrap();
        let far = params.answer_radius() * 100.0;
        assert_eq!(query_tree(&tree, &[far, far], &params, &ds).unwrap(), None);
    }

    #[test]
    fn query_rejects_dim_mismatch() {
        let ds = Dataset::new(vec![vec![0.0, 0.0], vec![1.5, 0.0]], 4.0).unwrap();
        let params = small_params(2);
        let tree = TreeNode::Leaf {
            points: vec![0, 1],
        };
        assert!(query_tree(&tree, &[0.0], &params, &ds).is_err());
    }
}
