//! Synthetic fronto-parallel scenes: a band-limited random texture seen from
//! an `A × A` grid of views, translated by a constant disparity per angular
//! step. Every view is evaluated analytically, so intermediate views at
//! fractional angular positions are available as exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::lf::LightField4D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Pixel shift between neighbouring views.
    pub disparity: f64,
    pub width: usize,
    pub height: usize,
    pub angular: usize,
    #[serde(default = "default_components")]
    pub components: usize,
    /// Highest spatial frequency in cycles per pixel.
    #[serde(default = "default_max_freq")]
    pub max_freq: f64,
    /// Standard deviation of the texture around mid-gray.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    /// Makes the texture symmetric under `x ↔ y`, so the light field is
    /// invariant under the `(x, ρ) ↔ (y, τ)` transposition.
    #[serde(default)]
    pub symmetric: bool,
}

fn default_components() -> usize {
    32
}
fn default_max_freq() -> f64 {
    0.3
}
fn default_contrast() -> f64 {
    0.15
}

impl SceneSpec {
    pub fn new(seed: u64, disparity: f64, width: usize, height: usize, angular: usize) -> Self {
        Self {
            seed,
            disparity,
            width,
            height,
            angular,
            components: default_components(),
            max_freq: default_max_freq(),
            contrast: default_contrast(),
            symmetric: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            contract!("scene extents must be positive");
        }
        if self.angular == 0 || self.angular % 2 == 0 {
            contract!("angular resolution must be odd, got {}", self.angular);
        }
        let k = (self.angular / 2) as f64;
        let limit = self.width.min(self.height) as f64 / 4.0;
        if self.disparity.abs() * k >= limit {
            contract!(
                "|d|·K = {} must stay below min(W, H)/4 = {limit}",
                self.disparity.abs() * k
            );
        }
        if self.symmetric && self.width != self.height {
            contract!("a symmetric scene must be square");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

/// Band-limited texture `T(y, x)` defined on the whole real plane.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<Wave>,
    scale: f64,
    symmetric: bool,
}

impl Texture {
    pub fn new(spec: &SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let min_freq = 0.02f64.min(spec.max_freq);
        let waves: Vec<Wave> = (0..spec.components.max(1))
            .map(|_| {
                let f = rng.random_range(min_freq..=spec.max_freq);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                Wave {
                    fy: f * theta.sin(),
                    fx: f * theta.cos(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        let power: f64 = waves.iter().map(|w| w.amp * w.amp / 2.0).sum();
        Self {
            scale: spec.contrast / power.sqrt(),
            waves,
            symmetric: spec.symmetric,
        }
    }

    fn raw(&self, y: f64, x: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w.amp * (std::f64::consts::TAU * (w.fy * y + w.fx * x) + w.phase).cos())
            .sum::<f64>()
    }

    pub fn eval(&self, y: f64, x: f64) -> f32 {
        let r = if self.symmetric {
            0.5 * (self.raw(y, x) + self.raw(x, y))
        } else {
            self.raw(y, x)
        };
        (0.5 + self.scale * r).clamp(0.0, 1.0) as f32
    }
}

/// Renders the scene at angular positions `offsets` (in units of the base
/// view spacing, relative to the central view) along both angular axes.
pub fn render(spec: &SceneSpec, offsets: &[f64]) -> Result<LightField4D> {
    spec.validate()?;
    let tex = Texture::new(spec);
    let d = spec.disparity;
    let n = offsets.len();
    Ok(LightField4D::from_fn(spec.height, spec.width, n, n, |y, x, r, t| {
        tex.eval(y as f64 - d * offsets[t], x as f64 - d * offsets[r])
    }))
}

/// The scene on its `A × A` grid: view `(ρ, τ)` is the texture translated by
/// `(d·(ρ−K), d·(τ−K))` along `(x, y)`.
pub fn generate(spec: &SceneSpec) -> Result<LightField4D> {
    let k = (spec.angular / 2) as f64;
    let offsets: Vec<f64> = (0..spec.angular).map(|i| i as f64 - k).collect();
    render(spec, &offsets)
}

/// The same scene sampled on a grid twice as dense (`2A − 1` views), whose
/// even-indexed views coincide with [`generate`]'s.
pub fn generate_dense(spec: &SceneSpec) -> Result<LightField4D> {
    let k = (spec.angular / 2) as f64;
    let offsets: Vec<f64> = (0..2 * spec.angular - 1).map(|i| i as f64 / 2.0 - k).collect();
    render(spec, &offsets)
}
