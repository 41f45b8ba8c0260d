//! Synthetic scale-variation scenes: one bright square on a noisy background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// `1 x 1 x h x w`, values in `[0, 1]`.
    pub image: Tensor4,
    pub target_size: usize,
    /// Centre of the square in pixel coordinates `(row, col)`.
    pub target_center: (f64, f64),
    pub size_class: usize,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive side-length range `(s_min, s_max)`.
    pub size_range: (usize, usize),
    /// Bucket edges `e_0 < e_1 < ... < e_k`; class `i` is `e_i <= s < e_{i+1}`.
    pub bucket_edges: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DatasetConfig {
    /// Three size classes on 32x32 images; the log-uniform mass of each bucket
    /// is roughly a third.
    pub fn three_class(count: usize, seed: u64) -> Self {
        DatasetConfig {
            count,
            height: 32,
            width: 32,
            size_range: (3, 28),
            bucket_edges: vec![3, 6, 13, 29],
            noise_sigma: 0.05,
            seed,
        }
    }

    pub fn class_count(&self) -> usize {
        self.bucket_edges.len().saturating_sub(1)
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_range;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if lo < 1 || lo > hi {
            return bad(format!("size range ({lo}, {hi}) is empty or starts below 1"));
        }
        if hi > self.height.min(self.width) {
            return bad(format!("size {hi} does not fit in {}x{}", self.height, self.width));
        }
        if self.bucket_edges.len() < 2 || self.bucket_edges.windows(2).any(|e| e[0] >= e[1]) {
            return bad(format!("bucket edges {:?} must be strictly increasing", self.bucket_edges));
        }
        if self.bucket_edges[0] > lo || *self.bucket_edges.last().unwrap() <= hi {
            return bad(format!("bucket edges {:?} do not cover sizes {lo}..={hi}", self.bucket_edges));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        Ok(())
    }
}

pub fn bucket_of(size: usize, edges: &[usize]) -> Option<usize> {
    edges.windows(2).position(|e| e[0] <= size && size < e[1])
}

/// Probability that a size drawn by [`sample_size`] lands in `[a, b)`.
pub fn log_uniform_mass(a: usize, b: usize, size_range: (usize, usize)) -> f64 {
    let (lo, hi) = size_range;
    let (a, b) = (a.max(lo), b.min(hi + 1));
    if a >= b {
        return 0.0;
    }
    (b as f64 / a as f64).ln() / ((hi + 1) as f64 / lo as f64).ln()
}

/// `floor(exp(u))` with `u ~ U[ln s_min, ln(s_max + 1))`.
pub fn sample_size<R: Rng + ?Sized>(size_range: (usize, usize), rng: &mut R) -> usize {
    let (lo, hi) = size_range;
    let u = rng.random_range((lo as f64).ln()..((hi + 1) as f64).ln());
    (u.exp().floor() as usize).clamp(lo, hi)
}

/// Square of side `size` with top-left corner `(top, left)` at intensity 1,
/// background `clip(N(0, sigma), 0, 1)`.
pub fn render_scene<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    size: usize,
    top: usize,
    left: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Tensor4> {
    if size == 0 || top + size > height || left + size > width {
        return Err(Error::InvalidArgument(format!(
            "square {size} at ({top}, {left}) does not fit in {height}x{width}"
        )));
    }
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(Tensor4::from_fn(1, 1, height, width, |_, _, i, j| {
        let inside = (top..top + size).contains(&i) && (left..left + size).contains(&j);
        if inside {
            1.0
        } else if noise_sigma > 0.0 {
            noise.sample(rng).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }))
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<SyntheticScene>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.count)
        .map(|_| {
            let size = sample_size(cfg.size_range, &mut rng);
            let top = rng.random_range(0..=cfg.height - size);
            let left = rng.random_range(0..=cfg.width - size);
            let image = render_scene(cfg.height, cfg.width, size, top, left, cfg.noise_sigma, &mut rng)?;
            Ok(SyntheticScene {
                image,
                target_size: size,
                target_center: (top as f64 + size as f64 / 2.0, left as f64 + size as f64 / 2.0),
                size_class: bucket_of(size, &cfg.bucket_edges).expect("edges cover the size range"),
                noise_sigma: cfg.noise_sigma,
            })
        })
        .collect()
}

/// Centred squares of the given sizes, one frame each: the far-to-near sweep
/// used by the probe. `size_class` is filled from `bucket_edges` (0 if outside).
pub fn size_sweep(
    height: usize,
    width: usize,
    sizes: &[usize],
    bucket_edges: &[usize],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<SyntheticScene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&s| {
            if s == 0 || s > height.min(width) {
                return Err(Error::InvalidArgument(format!("size {s} does not fit in {height}x{width}")));
            }
            let (top, left) = ((height - s) / 2, (width - s) / 2);
            Ok(SyntheticScene {
                image: render_scene(height, width, s, top, left, noise_sigma, &mut rng)?,
                target_size: s,
                target_center: (top as f64 + s as f64 / 2.0, left as f64 + s as f64 / 2.0),
                size_class: bucket_of(s, bucket_edges).unwrap_or(0),
                noise_sigma,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let cfg = DatasetConfig { count: 10, ..DatasetConfig::three_class(10, 9) };
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
    }

    #[test]
    fn fixed_size_range() {
        let cfg = DatasetConfig {
            count: 20,
            height: 8,
            width: 8,
            size_range: (3, 3),
            bucket_edges: vec![3, 4],
            noise_sigma: 0.1,
            seed: 1,
        };
        for scene in generate_dataset(&cfg).unwrap() {
            assert_eq!(scene.target_size, 3);
            assert_eq!(scene.size_class, 0);
            assert_eq!(scene.image.data().iter().filter(|v| **v == 1.0).count().min(9), 9);
        }
    }

    #[test]
    fn square_is_inside_and_background_clipped() {
        let cfg = DatasetConfig::three_class(50, 3);
        for s in generate_dataset(&cfg).unwrap() {
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let (cy, cx) = s.target_center;
            let half = s.target_size as f64 / 2.0;
            assert!(cy - half >= 0.0 && cy + half <= 32.0 && cx - half >= 0.0 && cx + half <= 32.0);
            let top = (cy - half) as usize;
            let left = (cx - half) as usize;
            for i in 0..s.target_size {
                for j in 0..s.target_size {
                    assert_eq!(s.image.get(0, 0, top + i, left + j), 1.0);
                }
            }
        }
    }

    #[test]
    fn rejects_infeasible_ranges() {
        let mut cfg = DatasetConfig::three_class(1, 0);
        cfg.size_range = (3, 40);
        assert!(generate_dataset(&cfg).is_err());
        cfg.size_range = (0, 5);
        assert!(generate_dataset(&cfg).is_err());
        cfg.size_range = (3, 28);
        cfg.bucket_edges = vec![3, 10];
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn three_class_buckets_are_roughly_balanced() {
        let cfg = DatasetConfig::three_class(1, 0);
        let masses: Vec<f64> =
            cfg.bucket_edges.windows(2).map(|e| log_uniform_mass(e[0], e[1], cfg.size_range)).collect();
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(masses.iter().all(|m| (0.28..0.38).contains(m)), "{masses:?}");
    }
}
