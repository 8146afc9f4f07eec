//! Query-point similarity maps over every location of a feature-map pair.

use std::path::{Path, PathBuf};

use crate::embedding::{FeatureMap, Side};
use crate::error::{Error, Result};
use crate::harness::csv::write_grid;
use crate::harness::train::Heads;
use crate::numerics::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrids {
    pub height: usize,
    pub width: usize,
    /// `z_queryᵀ z_j` for every input location `j`.
    pub input: Vec<f64>,
    /// `z_queryᵀ w_j` for every output location `j`.
    pub output: Vec<f64>,
}

pub fn export_simmap(fm_in: &FeatureMap, fm_out: &FeatureMap, heads: &Heads, query: (usize, usize)) -> Result<SimilarityGrids> {
    let (h, w) = (fm_in.height(), fm_in.width());
    if (fm_out.height(), fm_out.width(), fm_out.channels()) != (h, w, fm_in.channels()) {
        return Err(Error::shape("input and output feature maps differ in shape"));
    }
    if query.0 >= h || query.1 >= w {
        return Err(Error::pre(format!("query {query:?} is outside the {h}x{w} grid")));
    }
    let z = heads.input.embed_map(fm_in, Side::Input)?;
    let wv = heads.output_head().embed_map(fm_out, Side::Output)?;
    let q = z.vectors().row(query.0 * w + query.1);
    let sims = |m: &crate::numerics::Matrix| (0..m.rows()).map(|j| dot(q, m.row(j))).collect();
    Ok(SimilarityGrids { height: h, width: w, input: sims(z.vectors()), output: sims(wv.vectors()) })
}

/// Binary PGM (P5) with linear min-max scaling to 0..=255.
pub fn to_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Writes `<prefix>_a.csv`, `<prefix>_b.csv`, `<prefix>_a.pgm`, `<prefix>_b.pgm`.
pub fn write_simmap(prefix: impl AsRef<Path>, grids: &SimilarityGrids) -> Result<Vec<PathBuf>> {
    let prefix = prefix.as_ref().as_os_str().to_string_lossy().into_owned();
    let mut written = Vec::new();
    for (tag, values) in [("a", &grids.input), ("b", &grids.output)] {
        let csv = PathBuf::from(format!("{prefix}_{tag}.csv"));
        std::fs::write(&csv, write_grid(grids.height, grids.width, values))?;
        let pgm = PathBuf::from(format!("{prefix}_{tag}.pgm"));
        std::fs::write(&pgm, to_pgm(grids.width, grids.height, values))?;
        written.extend([csv, pgm]);
    }
    Ok(written)
}
