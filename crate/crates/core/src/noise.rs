//! Seeded 2-D Perlin gradient noise and its octave sum.
//!
//! The lattice uses the four diagonal gradients `(±1, ±1)`, which makes the
//! single-octave value range exactly `[-1, 1]` (attained at a cell centre when
//! all four corner gradients point inward).

use crate::error::{invalid, Result};
use crate::rng::SplitMix64;

/// Upper bound on `‖∇ perlin2‖` in lattice units.
///
/// Dense sampling of the analytic gradient over one cell for all 256 corner
/// gradient combinations peaks at 2.75; the bound keeps a small margin.
pub const PERLIN_LIPSCHITZ: f64 = 2.8;

const GRADIENTS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)];

/// Noise parameters independent of the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Lattice cycles per unit of the sampling coordinates.
    pub frequency: f64,
    pub octaves: u32,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { frequency: 8.0, octaves: 3, persistence: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct PerlinField {
    seed: u64,
    permutation: [u8; 512],
    params: NoiseParams,
}

/// Quintic smoothstep `6t⁵ − 15t⁴ + 10t³`. Rejects `t` outside `[0, 1]`.
pub fn fade(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("fade input {t} outside [0, 1]"));
    }
    Ok(fade_unchecked(t))
}

#[inline]
fn fade_unchecked(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

impl PerlinField {
    pub fn new(seed: u64, params: NoiseParams) -> Result<Self> {
        if !(params.frequency.is_finite() && params.frequency > 0.0) {
            return invalid(format!("noise frequency must be positive, got {}", params.frequency));
        }
        if params.octaves == 0 {
            return invalid("noise octaves must be at least 1");
        }
        if !(params.persistence > 0.0 && params.persistence <= 1.0) {
            return invalid(format!("noise persistence must be in (0, 1], got {}", params.persistence));
        }
        let mut base: Vec<u8> = (0..=255u8).collect();
        SplitMix64::new(seed).shuffle(&mut base);
        let mut permutation = [0u8; 512];
        for (i, slot) in permutation.iter_mut().enumerate() {
            *slot = base[i & 255];
        }
        Ok(Self { seed, permutation, params })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> NoiseParams {
        self.params
    }

    pub fn permutation(&self) -> &[u8; 512] {
        &self.permutation
    }

    /// Single-octave noise in raw lattice coordinates. Zero on every integer point.
    pub fn perlin2(&self, u: f64, v: f64) -> f64 {
        let (u0, v0) = (u.floor(), v.floor());
        let (xf, yf) = (u - u0, v - v0);
        let xi = (u0 as i64 & 255) as usize;
        let yi = (v0 as i64 & 255) as usize;
        let p = &self.permutation;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];

        let su = fade_unchecked(xf);
        let sv = fade_unchecked(yf);
        let lower = lerp(grad(aa, xf, yf), grad(ba, xf - 1.0, yf), su);
        let upper = lerp(grad(ab, xf, yf - 1.0), grad(bb, xf - 1.0, yf - 1.0), su);
        lerp(lower, upper, sv)
    }

    /// Octave sum `Σ pᵒ·perlin2(f·2ᵒ·(u, v)) / Σ pᵒ`, in `[-1, 1]`.
    pub fn fractal2(&self, u: f64, v: f64) -> f64 {
        let NoiseParams { frequency, octaves, persistence } = self.params;
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amplitude = 1.0;
        let mut scale = frequency;
        for _ in 0..octaves {
            total += amplitude * self.perlin2(u * scale, v * scale);
            norm += amplitude;
            amplitude *= persistence;
            scale *= 2.0;
        }
        (total / norm).clamp(-1.0, 1.0)
    }

    /// Maps the octave noise affinely onto `[f_min, f_max]`.
    pub fn sample_threshold(&self, u: f64, v: f64, f_min: f64, f_max: f64) -> Result<f64> {
        affine_threshold(self.fractal2(u, v), f_min, f_max)
    }
}

/// `f_min + (n + 1)/2 · (f_max − f_min)`, the threshold for a noise value `n`.
pub fn affine_threshold(noise: f64, f_min: f64, f_max: f64) -> Result<f64> {
    if !(f_min > 0.0 && f_min < f_max) {
        return invalid(format!("threshold bounds must satisfy 0 < f_min < f_max, got [{f_min}, {f_max}]"));
    }
    let t = f_min + (noise + 1.0) * 0.5 * (f_max - f_min);
    Ok(t.clamp(f_min, f_max))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[inline]
fn grad(hash: u8, x: f64, y: f64) -> f64 {
    let (gx, gy) = GRADIENTS[(hash & 3) as usize];
    gx * x + gy * y
}
