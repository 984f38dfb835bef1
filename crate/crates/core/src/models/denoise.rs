//! Synthetic image denoising grid MRF.
//!
//! Vertex layout: pixel `(r, c)` is variable `r * width + c`; the unary factor
//! of pixel `i` is factor `i`; pairwise factors follow, horizontal edges of a
//! row before its vertical edges, row by row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::io::{GrayImage, ModelError};
use crate::graph::FactorGraph;

/// Smallest stored potential; entries below this would be rejected as zero.
const MIN_POTENTIAL: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseSpec {
    pub width: usize,
    pub height: usize,
    pub colors: usize,
    /// Standard deviation of the observation noise, in color units.
    pub sigma: f64,
    /// Potts penalty in the bottom half.
    pub strength: f64,
    /// Potts penalty in the top half.
    pub top_strength: f64,
    /// Side length of the random color blocks that make up the top half.
    pub top_block: usize,
    pub seed: u64,
}

impl Default for DenoiseSpec {
    fn default() -> Self {
        Self {
            width: 100,
            height: 100,
            colors: 5,
            sigma: 1.0,
            strength: 0.8,
            top_strength: 0.2,
            top_block: 3,
            seed: 0,
        }
    }
}

impl DenoiseSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Spec(m.to_string()));
        if self.width < 2 || self.height < 2 {
            return bad("width and height must be at least 2");
        }
        if self.colors < 2 {
            return bad("colors must be at least 2");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.strength.is_finite() && self.top_strength.is_finite()) {
            return bad("smoothing strengths must be finite");
        }
        if self.top_block == 0 {
            return bad("top block size must be positive");
        }
        Ok(())
    }

    pub fn pixel(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

/// The generated problem: the model plus the images it was built from.
#[derive(Debug, Clone)]
pub struct Denoise {
    pub graph: FactorGraph,
    /// Noise-free color index per pixel.
    pub clean: Vec<usize>,
    /// Observed value per pixel, in color units.
    pub observed: Vec<f64>,
}

impl Denoise {
    pub fn clean_image(&self, spec: &DenoiseSpec) -> GrayImage {
        let scale = 255.0 / (spec.colors - 1) as f64;
        to_image(spec, self.clean.iter().map(|&c| c as f64 * scale))
    }

    pub fn noisy_image(&self, spec: &DenoiseSpec) -> GrayImage {
        let scale = 255.0 / (spec.colors - 1) as f64;
        to_image(spec, self.observed.iter().map(|&o| o * scale))
    }
}

/// Most probable color per pixel, rendered as an image.
pub fn belief_image(spec: &DenoiseSpec, beliefs: &[Vec<f64>]) -> GrayImage {
    let scale = 255.0 / (spec.colors - 1) as f64;
    let argmax = beliefs.iter().take(spec.width * spec.height).map(|b| {
        b.iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
            )
            .0 as f64
            * scale
    });
    to_image(spec, argmax)
}

fn to_image(spec: &DenoiseSpec, values: impl Iterator<Item = f64>) -> GrayImage {
    GrayImage {
        width: spec.width,
        height: spec.height,
        pixels: values.map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
    }
}

/// Clean image: random blocks of side `top_block` in the top half, wide
/// horizontal bands in the bottom half.
fn clean_image(spec: &DenoiseSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (w, h, k) = (spec.width, spec.height, spec.colors);
    let half = h / 2;
    let b = spec.top_block;
    let blocks_x = w.div_ceil(b);
    let blocks: Vec<usize> = (0..half.div_ceil(b) * blocks_x).map(|_| rng.gen_range(0..k)).collect();
    let band = (h - half).div_ceil(k).max(1);
    let mut img = vec![0; w * h];
    for r in 0..h {
        for c in 0..w {
            img[r * w + c] = if r < half {
                blocks[(r / b) * blocks_x + c / b]
            } else {
                ((r - half) / band).min(k - 1)
            };
        }
    }
    img
}

pub fn generate_denoise(spec: &DenoiseSpec) -> Result<Denoise, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clean = clean_image(spec, &mut rng);
    let observed: Vec<f64> = clean
        .iter()
        .map(|&c| c as f64 + spec.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let (w, h, k) = (spec.width, spec.height, spec.colors);
    let mut factors = Vec::with_capacity(w * h * 3);
    for &obs in &observed {
        let logs: Vec<f64> = (0..k)
            .map(|c| -(obs - c as f64).powi(2) / (2.0 * spec.sigma * spec.sigma))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        factors.push((
            vec![factors.len()],
            logs.iter().map(|l| (l - max).exp().max(MIN_POTENTIAL)).collect(),
        ));
    }
    let potts = |s: f64| -> Vec<f64> {
        let off = (-s).exp().max(MIN_POTENTIAL);
        (0..k * k).map(|i| if i / k == i % k { 1.0 } else { off }).collect()
    };
    let top = potts(spec.top_strength);
    let bottom = potts(spec.strength);
    for r in 0..h {
        let table = if r < h / 2 { &top } else { &bottom };
        for c in 0..w {
            if c + 1 < w {
                factors.push((vec![spec.pixel(r, c), spec.pixel(r, c + 1)], table.clone()));
            }
            if r + 1 < h {
                factors.push((vec![spec.pixel(r, c), spec.pixel(r + 1, c)], table.clone()));
            }
        }
    }
    let graph = FactorGraph::new(vec![k; w * h], factors)?;
    Ok(Denoise { graph, clean, observed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::io::write_graph;

    #[test]
    fn two_by_two_counts() {
        let spec = DenoiseSpec {
            width: 2,
            height: 2,
            colors: 2,
            ..DenoiseSpec::default()
        };
        let d = generate_denoise(&spec).unwrap();
        assert_eq!(d.graph.num_variables(), 4);
        assert_eq!(d.graph.num_factors(), 8);
        assert_eq!(d.graph.num_edges(), 12);
    }

    #[test]
    fn interior_degree_is_five() {
        let spec = DenoiseSpec {
            width: 6,
            height: 5,
            ..DenoiseSpec::default()
        };
        let d = generate_denoise(&spec).unwrap();
        for r in 1..4 {
            for c in 1..5 {
                assert_eq!(d.graph.degree(spec.pixel(r, c)), 5);
            }
        }
        assert_eq!(d.graph.degree(0), 3);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = DenoiseSpec {
            width: 7,
            height: 6,
            seed: 11,
            ..DenoiseSpec::default()
        };
        let a = write_graph(&generate_denoise(&spec).unwrap().graph);
        let b = write_graph(&generate_denoise(&spec).unwrap().graph);
        assert_eq!(a, b);
        let other = DenoiseSpec { seed: 12, ..spec };
        assert_ne!(a, write_graph(&generate_denoise(&other).unwrap().graph));
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            DenoiseSpec {
                width: 1,
                ..DenoiseSpec::default()
            },
            DenoiseSpec {
                colors: 1,
                ..DenoiseSpec::default()
            },
            DenoiseSpec {
                sigma: 0.0,
                ..DenoiseSpec::default()
            },
        ] {
            assert!(matches!(generate_denoise(&spec), Err(ModelError::Spec(_))));
        }
    }

    #[test]
    fn tiny_sigma_unaries_pick_the_clean_color() {
        let spec = DenoiseSpec {
            width: 5,
            height: 5,
            sigma: 0.05,
            ..DenoiseSpec::default()
        };
        let d = generate_denoise(&spec).unwrap();
        for (i, &c) in d.clean.iter().enumerate() {
            let t = d.graph.factors()[i].table();
            let best = (0..spec.colors).max_by(|&a, &b| t[a].total_cmp(&t[b])).unwrap();
            assert_eq!(best, c);
        }
    }
}
