//! Index parameter derivation.
//!
//! All constants flow from the scalar exponent `p`, the query-budget knob
//! `eps`, and the dataset size:
//!
//! ```text
//! D = p + 1            (Lipschitz constant of the embedding)
//! w = 4 D^2 / eps      (embedded far-radius multiplier)
//! lambda = 4 w         (dense-ball radius multiplier)
//! c = 3 lambda D       (final approximation factor)
//! T = ceil(3 n^eps)    (tree count)
//! ```
//!
//! The hash family's `(p1, p2)` pair is pinned by a fixed-point loop:
//! `p1` determines the width `W` (calibrated at near distance `D`), `W`
//! determines `p2` at far distance `w * D`, and `p2` feeds back into
//! `p1 = 1 - eps (1 - p2) / D^2`.

use thiserror::Error;

use crate::embed::EmbedError;
use crate::lsh::{calibrate_width, collision_probability, LshError};
use crate::metric::MetricError;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset exponent {dataset} does not match index exponent {params}")]
    ExponentMismatch { params: f64, dataset: f64 },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Lsh(#[from] LshError),
}

/// Fraction threshold for dense-ball nodes (a ball is "dense" when it holds
/// strictly more than this fraction of the node's points).
pub const DENSE_FRACTION: f64 = 0.125;
/// Boundedness factor of the restricted search regime.
pub const BETA: f64 = 18.0;
/// Near radius after normalization.
pub const NEAR_RADIUS: f64 = 1.0;
/// Leaf capacity.
pub const LEAF_SIZE: usize = 8;

/// Every derived constant of one index build.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexParams<S> {
    pub eps: S,
    /// Lipschitz constant `D = p_exp + 1`.
    pub lip_d: S,
    pub lambda: S,
    pub w: S,
    pub c_approx: S,
    pub beta: S,
    pub r: S,
    pub dense_frac: S,
    pub leaf_size: usize,
    pub max_depth: usize,
    pub n_trees: usize,
    pub lsh_width: S,
    pub p1: S,
    pub p2: S,
    pub seed: u64,
    pub p_exp: S,
}

impl<S: Scalar> IndexParams<S> {
    /// Dense-ball radius `lambda * D`.
    pub fn ball_radius(&self) -> S {
        self.lambda * self.lip_d
    }

    /// Leaf acceptance radius `c * r`.
    pub fn answer_radius(&self) -> S {
        self.c_approx * self.r
    }

    /// Embedded far radius `w * D` the hash family is tuned against.
    pub fn far_embedded(&self) -> S {
        self.w * self.lip_d
    }
}

/// Per-tree (and per-purpose) seed derivation: xor the master seed with the
/// stream index times an odd constant, then apply the splitmix64 finalizer.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the full parameter set for a dataset of `n` points in `l_{p_exp}`
/// at query exponent `eps`.
pub fn derive_params<S: Scalar>(
    p_exp: S,
    eps: S,
    n: usize,
    seed: u64,
) -> Result<IndexParams<S>, ForestError> {
    if p_exp < S::from_config(2.0) {
        return Err(ForestError::InvalidParameter(format!(
            "p_exp must be >= 2, got {p_exp}"
        )));
    }
    if !(eps > S::zero() && eps <= S::one()) {
        return Err(ForestError::InvalidParameter(format!(
            "eps must be in (0, 1], got {eps}"
        )));
    }
    if n < 2 {
        return Err(ForestError::InvalidParameter(format!(
            "n must be >= 2, got {n}"
        )));
    }

    let four = S::from_config(4.0);
    let lip_d = p_exp + S::one();
    let w = four * lip_d * lip_d / eps;
    let lambda = four * w;
    let c_approx = S::from_config(3.0) * lambda * lip_d;
    let far = w * lip_d;

    // Fixed point for (p1, W, p2). The collision curve is monotone in W, so
    // the iteration contracts; bail to the last iterate after 20 rounds.
    let mut p1 = S::from_config(0.99);
    let mut width = calibrate_width(lip_d, p1)?;
    let mut p2 = collision_probability(width, far);
    let tol = S::from_config(1e-9);
    let mut converged = false;
    for _ in 0..20 {
        let next = S::one() - eps * (S::one() - p2) / (lip_d * lip_d);
        if (next - p1).abs() < tol {
            p1 = next;
            width = calibrate_width(lip_d, p1)?;
            p2 = collision_probability(width, far);
            converged = true;
            break;
        }
        p1 = next;
        width = calibrate_width(lip_d, p1)?;
        p2 = collision_probability(width, far);
    }
    if !converged {
        log::warn!("p1/p2 fixed point did not converge to 1e-9; using last iterate");
    }

    let n_f = n as f64;
    let n_trees = (3.0 * n_f.powf(eps.to_report())).ceil() as usize;
    let max_depth = (100.0 * n_f.ln()).ceil() as usize;

    let params = IndexParams {
        eps,
        lip_d,
        lambda,
        w,
        c_approx,
        beta: S::from_config(BETA),
        r: S::from_config(NEAR_RADIUS),
        dense_frac: S::from_config(DENSE_FRACTION),
        leaf_size: LEAF_SIZE,
        max_depth,
        n_trees,
        lsh_width: width,
        p1,
        p2,
        seed,
        p_exp,
    };
    debug_assert!(
        (S::one() - params.dense_frac) * params.lambda * params.lambda
            >= S::from_config(8.0) * params.w * params.w
    );
    debug_assert!(params.beta * params.c_approx >= params.lambda);
    Ok(params)
}
