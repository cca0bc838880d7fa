//! Binary model files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic            4   "GBDT"
//! version          u16 = 1
//! params           n_trees u32, depth u32, learning_rate f64, n_bins u32,
//!                  l2_leaf f64, early_stop_rounds u32 (0 = off), seed u64
//! feature_count    u32
//! base_score       f64
//! bin edges        per feature: count u32, then count × f32
//! tree_count       u32
//! trees            per tree: depth × (feature u32, threshold f32),
//!                  then 2^depth × f64 leaf values
//! ```

use std::fs;
use std::path::Path;

use super::{GbdtError, GbdtModel, GbdtParams, ObliviousTree, Result, Split};

pub const MODEL_MAGIC: &[u8; 4] = b"GBDT";
pub const MODEL_VERSION: u16 = 1;

pub fn encode_model(m: &GbdtModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let p = &m.params;
    out.extend_from_slice(&p.n_trees.to_le_bytes());
    out.extend_from_slice(&p.depth.to_le_bytes());
    out.extend_from_slice(&p.learning_rate.to_le_bytes());
    out.extend_from_slice(&p.n_bins.to_le_bytes());
    out.extend_from_slice(&p.l2_leaf.to_le_bytes());
    out.extend_from_slice(&p.early_stop_rounds.unwrap_or(0).to_le_bytes());
    out.extend_from_slice(&p.seed.to_le_bytes());
    out.extend_from_slice(&(m.feature_count as u32).to_le_bytes());
    out.extend_from_slice(&m.base_score.to_le_bytes());
    for edges in &m.bin_edges {
        out.extend_from_slice(&(edges.len() as u32).to_le_bytes());
        for e in edges {
            out.extend_from_slice(&e.to_le_bytes());
        }
    }
    out.extend_from_slice(&(m.trees.len() as u32).to_le_bytes());
    for t in &m.trees {
        for s in &t.splits {
            out.extend_from_slice(&s.feature.to_le_bytes());
            out.extend_from_slice(&s.threshold.to_le_bytes());
        }
        for v in &t.leaves {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.at..self.at + N)
            .ok_or(GbdtError::Truncated)?;
        self.at += N;
        Ok(s.try_into().unwrap())
    }

    fn u16(&mut self) -> Result<u16> {
        self.take().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.take().map(u64::from_le_bytes)
    }
    fn f32(&mut self) -> Result<f32> {
        self.take().map(f32::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64> {
        self.take().map(f64::from_le_bytes)
    }

    /// Guards allocations driven by counts read from the file.
    fn expect_remaining(&self, n: usize) -> Result<()> {
        if self.bytes.len() - self.at < n {
            Err(GbdtError::Truncated)
        } else {
            Ok(())
        }
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<GbdtModel> {
    let mut r = Reader { bytes, at: 0 };
    if &r.take::<4>()? != MODEL_MAGIC {
        return Err(GbdtError::BadMagic);
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(GbdtError::VersionMismatch(version));
    }
    let n_trees = r.u32()?;
    let depth = r.u32()?;
    let learning_rate = r.f64()?;
    let n_bins = r.u32()?;
    let l2_leaf = r.f64()?;
    let rounds = r.u32()?;
    let seed = r.u64()?;
    let params = GbdtParams {
        n_trees,
        depth,
        learning_rate,
        n_bins,
        l2_leaf,
        early_stop_rounds: (rounds > 0).then_some(rounds),
        seed,
    };
    params.validate()?;
    let feature_count = r.u32()? as usize;
    let base_score = r.f64()?;
    r.expect_remaining(feature_count.saturating_mul(4))?;
    let mut bin_edges = Vec::with_capacity(feature_count);
    for _ in 0..feature_count {
        let n = r.u32()? as usize;
        r.expect_remaining(n.saturating_mul(4))?;
        bin_edges.push((0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?);
    }
    let tree_count = r.u32()? as usize;
    let depth = depth as usize;
    let tree_bytes = depth * 8 + (1usize << depth) * 8;
    r.expect_remaining(tree_count.saturating_mul(tree_bytes))?;
    let mut trees = Vec::with_capacity(tree_count);
    for _ in 0..tree_count {
        let splits = (0..depth)
            .map(|_| {
                Ok(Split {
                    feature: r.u32()?,
                    threshold: r.f32()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let leaves = (0..1usize << depth)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        trees.push(ObliviousTree { splits, leaves });
    }
    if r.at != bytes.len() {
        return Err(GbdtError::InvalidModel(format!(
            "{} trailing bytes",
            bytes.len() - r.at
        )));
    }
    GbdtModel::from_parts(params, base_score, feature_count, bin_edges, trees)
}

pub fn save(m: &GbdtModel, path: impl AsRef<Path>) -> Result<()> {
    Ok(crate::raster::write_atomic(
        path.as_ref(),
        &encode_model(m),
    )?)
}

pub fn load(path: impl AsRef<Path>) -> Result<GbdtModel> {
    decode_model(&fs::read(path)?)
}
