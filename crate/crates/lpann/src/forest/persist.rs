//! Versioned binary persistence for a built forest.
//!
//! Layout (all integers and floats little-endian), version 1:
//!
//! ```text
//! magic            4 bytes  "AEIX"
//! version          u8       1
//! params           12 x f64 eps, lip_d, lambda, w, c_approx, beta, r,
//!                           dense_frac, lsh_width, p1, p2, p_exp
//!                  3 x u64  leaf_size, max_depth, n_trees
//!                  u64      seed
//! dataset          u64 n, u64 dim, f64 p_exp, n*dim x f64 row-major
//! trees            n_trees nodes, recursively:
//!   tag            u8       0 leaf | 1 ball | 2 partition
//!   leaf           u64 count, count x u32 ids
//!   ball           u32 center, u32 representative, child node
//!   partition      dim x f64 embedding center, f64 c_emp,
//!                  dim x f64 hash direction, f64 offset, f64 width,
//!                  u64 child count, then (i64 bucket, node) pairs
//! ```
//!
//! Scalars are stored as `f64` bit patterns, so an `f64` index round-trips
//! bit-exactly and reloaded indexes answer queries identically.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::embed::AvgEmbedding;
use crate::lsh::LshFunction;
use crate::metric::Dataset;
use crate::scalar::Scalar;

use super::params::IndexParams;
use super::tree::TreeNode;
use super::Forest;

const MAGIC: [u8; 4] = *b"AEIX";
const VERSION: u8 = 1;

const TAG_LEAF: u8 = 0;
const TAG_BALL: u8 = 1;
const TAG_PARTITION: u8 = 2;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected AEIX")]
    BadMagic,
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u8),
    #[error("corrupt index: {0}")]
    Corrupt(&'static str),
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.out.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn i64(&mut self, v: i64) -> io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn scalar<S: Scalar>(&mut self, v: S) -> io::Result<()> {
        self.f64(v.to_report())
    }
    fn scalars<S: Scalar>(&mut self, vs: &[S]) -> io::Result<()> {
        for &v in vs {
            self.scalar(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inp: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8, PersistError> {
        let mut b = [0u8; 1];
        self.inp.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32, PersistError> {
        let mut b = [0u8; 4];
        self.inp.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, PersistError> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn i64(&mut self) -> Result<i64, PersistError> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(i64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, PersistError> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn scalar<S: Scalar>(&mut self) -> Result<S, PersistError> {
        let v = self.f64()?;
        S::from_f64(v).ok_or(PersistError::Corrupt("scalar out of range"))
    }
    fn scalars<S: Scalar>(&mut self, n: usize) -> Result<Vec<S>, PersistError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.scalar()?);
        }
        Ok(out)
    }
}

fn write_node<S: Scalar, W: Write>(w: &mut Writer<W>, node: &TreeNode<S>) -> io::Result<()> {
    match node {
        TreeNode::Leaf { points } => {
            w.u8(TAG_LEAF)?;
            w.u64(points.len() as u64)?;
            for &id in points {
                w.u32(id)?;
            }
            Ok(())
        }
        TreeNode::Ball {
            center,
            representative,
            child,
        } => {
            w.u8(TAG_BALL)?;
            w.u32(*center)?;
            w.u32(*representative)?;
            write_node(w, child)
        }
        TreeNode::Partition {
            embedding,
            hash,
            c_emp,
            children,
        } => {
            w.u8(TAG_PARTITION)?;
            w.scalars(embedding.center())?;
            w.scalar(*c_emp)?;
            w.scalars(hash.direction())?;
            w.scalar(hash.offset())?;
            w.scalar(hash.width())?;
            w.u64(children.len() as u64)?;
            for (bucket, child) in children {
                w.i64(*bucket)?;
                write_node(w, child)?;
            }
            Ok(())
        }
    }
}

fn read_node<S: Scalar, R: Read>(
    r: &mut Reader<R>,
    dim: usize,
    p_exp: S,
    n_points: usize,
    depth_budget: usize,
) -> Result<TreeNode<S>, PersistError> {
    if depth_budget == 0 {
        return Err(PersistError::Corrupt("tree deeper than the stored cap"));
    }
    match r.u8()? {
        TAG_LEAF => {
            let count = r.u64()? as usize;
            if count > n_points {
                return Err(PersistError::Corrupt("leaf larger than the dataset"));
            }
            let mut points = Vec::with_capacity(count);
            for _ in 0..count {
                let id = r.u32()?;
                if id as usize >= n_points {
                    return Err(PersistError::Corrupt("leaf id out of range"));
                }
                points.push(id);
            }
            Ok(TreeNode::Leaf { points })
        }
        TAG_BALL => {
            let center = r.u32()?;
            let representative = r.u32()?;
            if center as usize >= n_points || representative as usize >= n_points {
                return Err(PersistError::Corrupt("ball id out of range"));
            }
            let child = read_node(r, dim, p_exp, n_points, depth_budget - 1)?;
            Ok(TreeNode::Ball {
                center,
                representative,
                child: Box::new(child),
            })
        }
        TAG_PARTITION => {
            let center = r.scalars::<S>(dim)?;
            let embedding = AvgEmbedding::new(p_exp, center)
                .map_err(|_| PersistError::Corrupt("invalid embedding"))?;
            let c_emp = r.scalar()?;
            let direction = r.scalars::<S>(dim)?;
            let offset = r.scalar()?;
            let width = r.scalar()?;
            let hash = LshFunction::from_parts(direction, offset, width)
                .map_err(|_| PersistError::Corrupt("invalid hash function"))?;
            let n_children = r.u64()? as usize;
            if n_children == 0 {
                return Err(PersistError::Corrupt("partition with no children"));
            }
            let mut children = Vec::with_capacity(n_children);
            let mut prev: Option<i64> = None;
            for _ in 0..n_children {
                let bucket = r.i64()?;
                if let Some(p) = prev {
                    if bucket <= p {
                        return Err(PersistError::Corrupt("bucket ids not ascending"));
                    }
                }
                prev = Some(bucket);
                let child = read_node(r, dim, p_exp, n_points, depth_budget - 1)?;
                children.push((bucket, child));
            }
            Ok(TreeNode::Partition {
                embedding,
                hash,
                c_emp,
                children,
            })
        }
        _ => Err(PersistError::Corrupt("unknown node tag")),
    }
}

/// Serializes a forest (including its dataset) to a writer.
pub fn save_forest<S: Scalar, W: Write>(forest: &Forest<S>, out: W) -> io::Result<()> {
    let mut w = Writer { out };
    w.out.write_all(&MAGIC)?;
    w.u8(VERSION)?;
    let p = forest.params();
    w.scalar(p.eps)?;
    w.scalar(p.lip_d)?;
    w.scalar(p.lambda)?;
    w.scalar(p.w)?;
    w.scalar(p.c_approx)?;
    w.scalar(p.beta)?;
    w.scalar(p.r)?;
    w.scalar(p.dense_frac)?;
    w.scalar(p.lsh_width)?;
    w.scalar(p.p1)?;
    w.scalar(p.p2)?;
    w.scalar(p.p_exp)?;
    w.u64(p.leaf_size as u64)?;
    w.u64(p.max_depth as u64)?;
    w.u64(p.n_trees as u64)?;
    w.u64(p.seed)?;
    let ds = forest.dataset();
    w.u64(ds.len() as u64)?;
    w.u64(ds.dim() as u64)?;
    w.f64(ds.p_exp().to_report())?;
    w.scalars(ds.as_flat())?;
    for tree in forest.trees() {
        write_node(&mut w, tree)?;
    }
    Ok(())
}

/// Reads a forest back. The reloaded index answers queries bit-identically
/// to the one that was saved.
pub fn load_forest<S: Scalar, R: Read>(inp: R) -> Result<Forest<S>, PersistError> {
    let mut r = Reader { inp };
    let mut magic = [0u8; 4];
    r.inp.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(PersistError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(PersistError::UnsupportedVersion(version));
    }
    let eps = r.scalar()?;
    let lip_d = r.scalar()?;
    let lambda = r.scalar()?;
    let w = r.scalar()?;
    let c_approx = r.scalar()?;
    let beta = r.scalar()?;
    let rr = r.scalar()?;
    let dense_frac = r.scalar()?;
    let lsh_width = r.scalar()?;
    let p1 = r.scalar()?;
    let p2 = r.scalar()?;
    let p_exp = r.scalar()?;
    let leaf_size = r.u64()? as usize;
    let max_depth = r.u64()? as usize;
    let n_trees = r.u64()? as usize;
    let seed = r.u64()?;
    let params = IndexParams {
        eps,
        lip_d,
        lambda,
        w,
        c_approx,
        beta,
        r: rr,
        dense_frac,
        leaf_size,
        max_depth,
        n_trees,
        lsh_width,
        p1,
        p2,
        seed,
        p_exp,
    };

    let n = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let ds_p = r.f64()?;
    if dim == 0 || n == 0 {
        return Err(PersistError::Corrupt("empty dataset"));
    }
    let flat = r.scalars::<S>(n * dim)?;
    let dataset = Dataset::from_flat(flat, n, dim, S::from_config(ds_p))
        .map_err(|_| PersistError::Corrupt("invalid dataset payload"))?;

    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        trees.push(read_node(&mut r, dim, p_exp, n, max_depth + 2)?);
    }
    Ok(Forest::from_parts(dataset, params, trees))
}
