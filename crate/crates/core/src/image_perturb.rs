//! Atmospheric degradation of optical imagery driven by one strength scalar
//! `s` in [0, 1]: contrast attenuation, brightness lift, resolution-aware
//! Gaussian blur, then a fog-colored veil modulated by a multi-octave cloud
//! mask.
//!
//! With `M` the cloud mask and `s` the strength, the stages are
//!
//! ```text
//! c(s) = 1 - (1 - contrast_floor) * s      x <- mean + c(s) * (x - mean)
//! b(s) = brightness_lift_max * s           x <- x + b(s)
//! σ(s) = blur_sigma_max_frac * min(H, W) * s
//! x <- (1 - s*M) * blur(x, σ(s)) + s*M * fog_color
//! ```
//!
//! followed by a single clamp to [0, 1]. `s = 0` returns an exact copy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{hash_words, unit_f64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbParams {
    pub strength: f64,
    pub seed: u64,
    pub octaves: u32,
    pub persistence: f64,
    /// Period of the coarsest noise octave in pixels; `None` means a quarter
    /// of the shorter image side.
    pub base_period: Option<f64>,
    pub fog_color: [f64; 3],
    pub contrast_floor: f64,
    pub brightness_lift_max: f64,
    /// Blur sigma at full strength as a fraction of `min(H, W)`.
    pub blur_sigma_max_frac: f64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        PerturbParams {
            strength: 0.45,
            seed: 0,
            octaves: 5,
            persistence: 0.5,
            base_period: None,
            fog_color: [0.92, 0.92, 0.94],
            contrast_floor: 0.55,
            brightness_lift_max: 0.18,
            blur_sigma_max_frac: 0.006,
        }
    }
}

impl PerturbParams {
    pub fn with_strength(strength: f64, seed: u64) -> Self {
        PerturbParams {
            strength,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::validation("perturb-params", msg));
        if !(0.0..=1.0).contains(&self.strength) {
            return bad("strength must lie in [0, 1]");
        }
        if self.octaves == 0 {
            return bad("octaves must be >= 1");
        }
        if !(self.persistence > 0.0 && self.persistence < 1.0) {
            return bad("persistence must lie in (0, 1)");
        }
        if let Some(p) = self.base_period {
            if !(p.is_finite() && p > 0.0) {
                return bad("base_period must be positive");
            }
        }
        if !self.fog_color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return bad("fog_color components must lie in [0, 1]");
        }
        if !(self.contrast_floor > 0.0 && self.contrast_floor <= 1.0) {
            return bad("contrast_floor must lie in (0, 1]");
        }
        if !(self.brightness_lift_max.is_finite() && self.brightness_lift_max >= 0.0) {
            return bad("brightness_lift_max must be non-negative");
        }
        if !(self.blur_sigma_max_frac.is_finite() && self.blur_sigma_max_frac >= 0.0) {
            return bad("blur_sigma_max_frac must be non-negative");
        }
        Ok(())
    }

    pub fn contrast_factor(&self) -> f64 {
        1.0 - (1.0 - self.contrast_floor) * self.strength
    }

    pub fn brightness_lift(&self) -> f64 {
        self.brightness_lift_max * self.strength
    }

    /// Blur sigma in pixels for an image of the given size.
    pub fn blur_sigma(&self, height: usize, width: usize) -> f64 {
        self.blur_sigma_max_frac * height.min(width) as f64 * self.strength
    }

    fn base_period_for(&self, height: usize, width: usize) -> f64 {
        self.base_period
            .unwrap_or_else(|| height.min(width) as f64 / 4.0)
            .max(1.0)
    }
}

/// Interleaved RGB image with channel values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    /// Values are clamped to [0, 1]; NaN becomes 0.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image", "dimensions must be >= 1"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: width * height * 3,
            });
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.width * self.height) as f64;
        let mut sums = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += f64::from(px[c]);
            }
        }
        sums.map(|s| s / n)
    }

    /// Population standard deviation per channel.
    pub fn channel_stds(&self) -> [f64; 3] {
        let means = self.channel_means();
        let n = (self.width * self.height) as f64;
        let mut acc = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                let d = f64::from(px[c]) - means[c];
                acc[c] += d * d;
            }
        }
        acc.map(|a| (a / n).sqrt())
    }

    pub fn mean_brightness(&self) -> f64 {
        self.channel_means().iter().sum::<f64>() / 3.0
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
        RgbImage::new(w as usize, h as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Single-channel field in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lattice(seed: u64, octave: u64, ix: i64, iy: i64) -> f64 {
    unit_f64(hash_words(&[seed, octave, ix as u64, iy as u64]))
}

/// One value-noise layer: random lattice values at spacing `period`,
/// interpolated bilinearly with smoothstep weights.
fn value_noise(x: f64, y: f64, period: f64, seed: u64, octave: u64) -> f64 {
    let gx = x / period;
    let gy = y / period;
    let ix = gx.floor();
    let iy = gy.floor();
    let tx = fade(gx - ix);
    let ty = fade(gy - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice(seed, octave, ix, iy);
    let v10 = lattice(seed, octave, ix + 1, iy);
    let v01 = lattice(seed, octave, ix, iy + 1);
    let v11 = lattice(seed, octave, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * tx;
    let bottom = v01 + (v11 - v01) * tx;
    top + (bottom - top) * ty
}

/// Low-frequency cloud field in [0, 1]. Octave `o` (0-based) has period
/// `base_period / 2^o` and weight `persistence^o`; the weighted sum is
/// divided by the total weight.
pub fn cloud_mask(height: usize, width: usize, params: &PerturbParams) -> Field {
    let base = params.base_period_for(height, width);
    let octaves: Vec<(f64, f64, f64, f64)> = (0..params.octaves)
        .map(|o| {
            let period = (base / f64::from(2u32.pow(o.min(30)))).max(1.0);
            let amp = params.persistence.powi(o as i32);
            // per-octave lattice offset so octave grids do not align
            let ox = unit_f64(hash_words(&[params.seed, u64::from(o), 0x0f5e7])) * period;
            let oy = unit_f64(hash_words(&[params.seed, u64::from(o), 0x0f5e8])) * period;
            (period, amp, ox, oy)
        })
        .collect();
    let total: f64 = octaves.iter().map(|o| o.1).sum();
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let v: f64 = octaves
                .iter()
                .enumerate()
                .map(|(o, &(period, amp, ox, oy))| {
                    amp * value_noise(x as f64 + ox, y as f64 + oy, period, params.seed, o as u64)
                })
                .sum();
            data.push((v / total).clamp(0.0, 1.0));
        }
    }
    Field { width, height, data }
}

/// Symmetric reflection of an index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Separable Gaussian blur on an interleaved 3-channel buffer, kernel
/// truncated at 3σ, reflective borders.
fn gaussian_blur(buf: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; buf.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let sx = reflect(x as isize + k as isize - radius, width);
                    acc += w * buf[(y * width + sx) * 3 + c];
                }
                tmp[(y * width + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; buf.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let sy = reflect(y as isize + k as isize - radius, height);
                    acc += w * tmp[(sy * width + x) * 3 + c];
                }
                out[(y * width + x) * 3 + c] = acc;
            }
        }
    }
    out
}

/// Applies the atmospheric degradation at `params.strength`.
pub fn perturb_image(image: &RgbImage, params: &PerturbParams) -> Result<RgbImage> {
    params.validate()?;
    let s = params.strength;
    if s == 0.0 {
        return Ok(image.clone());
    }
    let (w, h) = (image.width, image.height);
    let means = image.channel_means();
    let contrast = params.contrast_factor();
    let lift = params.brightness_lift();

    let mut buf: Vec<f64> = image
        .data
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| means[c] + contrast * (f64::from(px[c]) - means[c]) + lift))
        .collect();

    let sigma = params.blur_sigma(h, w);
    if sigma > 0.0 {
        buf = gaussian_blur(&buf, w, h, sigma);
    }

    let mask = cloud_mask(h, w, params);
    let data = buf
        .chunks_exact(3)
        .zip(&mask.data)
        .flat_map(|(px, m)| {
            let veil = s * m;
            (0..3).map(move |c| ((1.0 - veil) * px[c] + veil * params.fog_color[c]).clamp(0.0, 1.0) as f32)
        })
        .collect();
    RgbImage::new(w, h, data)
}

/// Reads a PNG, perturbs it and writes the result as PNG.
pub fn perturb_file(input: &Path, output: &Path, params: &PerturbParams) -> Result<()> {
    let img = RgbImage::load_png(input)?;
    perturb_image(&img, params)?.save_png(output)
}
