//! Block timestamps by linear interpolation from an anchor block.

use serde::{Deserialize, Serialize};

pub const DEFAULT_SECS_PER_BLOCK: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockAnchor {
    pub block: u64,
    /// Unix seconds.
    pub ts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TimeError {
    #[error("block {block} precedes anchor block {anchor}")]
    NegativeOffset { block: u64, anchor: u64 },
    #[error("anchors must be distinct blocks with increasing time")]
    BadAnchors,
}

pub fn interpolate_block_ts(block: u64, anchor: BlockAnchor, secs_per_block: f64) -> Result<f64, TimeError> {
    if block < anchor.block {
        return Err(TimeError::NegativeOffset {
            block,
            anchor: anchor.block,
        });
    }
    Ok(anchor.ts + secs_per_block * (block - anchor.block) as f64)
}

/// Mean seconds per block between two anchors.
pub fn estimate_slope(a: BlockAnchor, b: BlockAnchor) -> Result<f64, TimeError> {
    let (lo, hi) = if a.block <= b.block { (a, b) } else { (b, a) };
    if lo.block == hi.block || hi.ts <= lo.ts {
        return Err(TimeError::BadAnchors);
    }
    Ok((hi.ts - lo.ts) / (hi.block - lo.block) as f64)
}

/// Interpolation error against a table of true block timestamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationError {
    pub max_abs: f64,
    pub median_abs: f64,
}

pub fn interpolation_error(truth: &[(u64, f64)], anchor: BlockAnchor, slope: f64) -> Option<InterpolationError> {
    let mut errs: Vec<f64> = truth
        .iter()
        .filter_map(|&(b, ts)| interpolate_block_ts(b, anchor, slope).ok().map(|i| (i - ts).abs()))
        .collect();
    if errs.is_empty() {
        return None;
    }
    errs.sort_by(f64::total_cmp);
    Some(InterpolationError {
        max_abs: *errs.last().expect("non-empty"),
        median_abs: crate::stats::quantile::percentile_sorted(&errs, 0.5).expect("non-empty"),
    })
}
