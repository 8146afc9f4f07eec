//! Paired synthetic feature maps with known semantic clusters.
//!
//! Every cell belongs to one of `G` clusters. The input feature of a cell is
//! its cluster prototype plus Gaussian noise; the output feature is the same
//! vector pushed through a fixed random rotation `R`, so the output keeps the
//! patch-level detail of the input in a different basis. With
//! [`OutputNoise::Independent`] the output draws its own noise instead.

use serde::{Deserialize, Serialize};

use crate::embedding::FeatureMap;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Rectangular tiles in a near-square grid of `G` (or slightly more) blocks.
    #[default]
    Blocks,
    /// Nearest of `G` random seed cells.
    Voronoi,
}

/// How the output side's noise relates to the input side's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputNoise {
    /// `R·(prototype + σε)`: the output cell is the rotated input cell.
    #[default]
    Shared,
    /// `R·prototype + σε'` with a fresh draw `ε'`.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub clusters: usize,
    pub noise_sigma: f64,
    pub rotation_seed: u64,
    pub layout: Layout,
    pub output_noise: OutputNoise,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            height: 16,
            width: 16,
            channels: 32,
            clusters: 8,
            noise_sigma: 0.3,
            rotation_seed: 0x5eed,
            layout: Layout::Blocks,
            output_noise: OutputNoise::Shared,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let cells = self.height * self.width;
        if cells == 0 {
            return Err(Error::pre("synthetic map must have at least one cell"));
        }
        if self.clusters == 0 || self.clusters > cells {
            return Err(Error::pre(format!("clusters must be in 1..={cells}, got {}", self.clusters)));
        }
        if self.channels < 2 {
            return Err(Error::pre(format!("channels must be at least 2, got {}", self.channels)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::pre(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub input: FeatureMap,
    pub output: FeatureMap,
    /// Cluster id per flat location.
    pub labels: Vec<usize>,
}

/// Haar-random orthogonal matrix: Gram-Schmidt QR of a Gaussian matrix with
/// the diagonal of `R` kept positive.
pub fn random_orthogonal(rng: &mut RngState, n: usize) -> Matrix {
    let g = rng.gaussian_matrix(n, n, 1.0);
    // Orthonormalize columns; two passes keep the loss of orthogonality at rounding level.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| g.get(i, j)).collect()).collect();
    for j in 0..n {
        for _ in 0..2 {
            for p in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let proj = dot(&done[p], &rest[0]);
                rest[0].iter_mut().zip(&done[p]).for_each(|(v, q)| *v -= proj * q);
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

fn block_labels(spec: &SyntheticTaskSpec) -> Vec<usize> {
    let g = spec.clusters;
    let gr = ((g as f64).sqrt().ceil() as usize).clamp(1, spec.height);
    let gc = g.div_ceil(gr).clamp(1, spec.width);
    let cells = spec.height * spec.width;
    if gr * gc < g {
        // Too narrow for tiles: fall back to bands in row-major order.
        return (0..cells).map(|c| c * g / cells).collect();
    }
    let mut labels = Vec::with_capacity(spec.height * spec.width);
    for h in 0..spec.height {
        for w in 0..spec.width {
            let bi = h * gr / spec.height;
            let bj = w * gc / spec.width;
            labels.push((bi * gc + bj) % g);
        }
    }
    labels
}

fn voronoi_labels(rng: &mut RngState, spec: &SyntheticTaskSpec) -> Vec<usize> {
    let cells = spec.height * spec.width;
    let seeds = rng.sample_without_replacement(cells, spec.clusters);
    (0..cells)
        .map(|c| {
            let (h, w) = ((c / spec.width) as i64, (c % spec.width) as i64);
            let mut best = (i64::MAX, 0);
            for (g, &s) in seeds.iter().enumerate() {
                let (sh, sw) = ((s / spec.width) as i64, (s % spec.width) as i64);
                let d = (h - sh).pow(2) + (w - sw).pow(2);
                if d < best.0 {
                    best = (d, g);
                }
            }
            best.1
        })
        .collect()
}

pub fn generate_pair(rng: &mut RngState, spec: &SyntheticTaskSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let rotation = random_orthogonal(&mut RngState::with_stream(spec.rotation_seed, 0x7070), spec.channels);
    let prototypes = rng.unit_rows(spec.clusters, spec.channels);
    let labels = match spec.layout {
        Layout::Blocks => block_labels(spec),
        Layout::Voronoi => voronoi_labels(rng, spec),
    };
    let c = spec.channels;
    let mut input = Vec::with_capacity(labels.len() * c);
    let mut output = Vec::with_capacity(labels.len() * c);
    let mut cell = vec![0.0; c];
    for &g in &labels {
        for (v, p) in cell.iter_mut().zip(prototypes.row(g)) {
            *v = p + spec.noise_sigma * rng.gaussian();
        }
        input.extend_from_slice(&cell);
        match spec.output_noise {
            OutputNoise::Shared => output.extend((0..c).map(|i| dot(rotation.row(i), &cell))),
            OutputNoise::Independent => {
                let proto = prototypes.row(g);
                for i in 0..c {
                    output.push(dot(rotation.row(i), proto) + spec.noise_sigma * rng.gaussian());
                }
            }
        }
    }
    Ok(SyntheticPair {
        input: FeatureMap::new(spec.height, spec.width, c, input)?,
        output: FeatureMap::new(spec.height, spec.width, c, output)?,
        labels,
    })
}
