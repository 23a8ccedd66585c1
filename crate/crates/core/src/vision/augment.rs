//! Image transforms for training and evaluation.
//!
//! Train mode: oversize resize, random crop, random rotation, flips, color
//! jitter, gaussian blur, in that order. Eval mode: a single deterministic
//! resize. Both produce `resolution x resolution` RGB images.

use candle_core::{Device, Tensor};
use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlur {
    /// Odd kernel width in pixels.
    pub kernel: u32,
    pub sigma_min: f32,
    pub sigma_max: f32,
    pub probability: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub resolution: u32,
    /// Size of the square resize that precedes the random crop.
    /// `None` means `ceil(resolution * 1.14)`.
    #[serde(default)]
    pub oversize_resize: Option<u32>,
    pub random_crop: bool,
    /// Maximum absolute rotation; 0 disables rotation.
    pub random_rotation_degrees: f32,
    pub horizontal_flip: f32,
    pub vertical_flip: f32,
    pub color_jitter: Option<ColorJitter>,
    pub gaussian_blur: Option<GaussianBlur>,
}

/// `ceil(resolution * 1.14)` computed in integers (224 -> 256, 300 -> 342).
pub fn default_oversize(resolution: u32) -> u32 {
    (resolution * 114).div_ceil(100)
}

impl AugmentationConfig {
    /// Resize only.
    pub fn none(resolution: u32) -> Self {
        AugmentationConfig {
            resolution,
            oversize_resize: None,
            random_crop: false,
            random_rotation_degrees: 0.0,
            horizontal_flip: 0.0,
            vertical_flip: 0.0,
            color_jitter: None,
            gaussian_blur: None,
        }
    }

    /// Color jitter, gaussian blur, flips and resizing.
    pub fn standard(resolution: u32) -> Self {
        AugmentationConfig {
            horizontal_flip: 0.5,
            vertical_flip: 0.5,
            color_jitter: Some(ColorJitter {
                brightness: 0.2,
                contrast: 0.2,
                saturation: 0.2,
            }),
            gaussian_blur: Some(GaussianBlur {
                kernel: 3,
                sigma_min: 0.1,
                sigma_max: 1.5,
                probability: 0.3,
            }),
            ..Self::none(resolution)
        }
    }

    /// The standard stack plus random crop and random rotation.
    pub fn crop_rotate(resolution: u32) -> Self {
        AugmentationConfig {
            random_crop: true,
            random_rotation_degrees: 30.0,
            ..Self::standard(resolution)
        }
    }

    pub fn oversize(&self) -> u32 {
        self.oversize_resize.unwrap_or_else(|| default_oversize(self.resolution))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.resolution < 4 {
            return bad(format!("resolution {} is too small", self.resolution));
        }
        if self.random_crop && self.oversize() <= self.resolution {
            return bad(format!(
                "oversize resize {} must exceed resolution {} when random crop is on",
                self.oversize(),
                self.resolution
            ));
        }
        for (name, p) in [("horizontal_flip", self.horizontal_flip), ("vertical_flip", self.vertical_flip)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} not in [0, 1]"));
            }
        }
        if !(0.0..=180.0).contains(&self.random_rotation_degrees) {
            return bad(format!("rotation {} not in [0, 180]", self.random_rotation_degrees));
        }
        if let Some(j) = &self.color_jitter {
            for v in [j.brightness, j.contrast, j.saturation] {
                if !(0.0..1.0).contains(&v) {
                    return bad(format!("jitter strength {v} not in [0, 1)"));
                }
            }
        }
        if let Some(b) = &self.gaussian_blur {
            if b.kernel < 3 || b.kernel % 2 == 0 {
                return bad(format!("blur kernel {} must be odd and >= 3", b.kernel));
            }
            if !(b.sigma_min > 0.0 && b.sigma_min <= b.sigma_max) {
                return bad("blur sigma range invalid".into());
            }
            if !(0.0..=1.0).contains(&b.probability) {
                return bad(format!("blur probability {} not in [0, 1]", b.probability));
            }
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct Augmenter {
    config: AugmentationConfig,
    mode: AugmentMode,
}

pub fn build_augmentation(config: &AugmentationConfig, mode: AugmentMode) -> Result<Augmenter> {
    config.validate()?;
    Ok(Augmenter {
        config: config.clone(),
        mode,
    })
}

impl Augmenter {
    pub fn mode(&self) -> AugmentMode {
        self.mode
    }

    pub fn resolution(&self) -> u32 {
        self.config.resolution
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &DynamicImage, rng: &mut R) -> RgbImage {
        let rgb = image.to_rgb8();
        let res = self.config.resolution;
        if self.mode == AugmentMode::Eval {
            return imageops::resize(&rgb, res, res, FilterType::Triangle);
        }
        let c = &self.config;
        let mut img = if c.random_crop {
            let o = c.oversize();
            let big = imageops::resize(&rgb, o, o, FilterType::Triangle);
            let x = rng.random_range(0..=o - res);
            let y = rng.random_range(0..=o - res);
            imageops::crop_imm(&big, x, y, res, res).to_image()
        } else {
            imageops::resize(&rgb, res, res, FilterType::Triangle)
        };
        if c.random_rotation_degrees > 0.0 {
            let d = c.random_rotation_degrees;
            let angle = rng.random_range(-d..=d);
            img = rotate(&img, angle);
        }
        if rng.random::<f32>() < c.horizontal_flip {
            imageops::flip_horizontal_in_place(&mut img);
        }
        if rng.random::<f32>() < c.vertical_flip {
            imageops::flip_vertical_in_place(&mut img);
        }
        if let Some(j) = &c.color_jitter {
            let b = factor(rng, j.brightness);
            let ct = factor(rng, j.contrast);
            let s = factor(rng, j.saturation);
            jitter(&mut img, b, ct, s);
        }
        if let Some(blur) = &c.gaussian_blur {
            if rng.random::<f32>() < blur.probability {
                let sigma = if blur.sigma_max > blur.sigma_min {
                    rng.random_range(blur.sigma_min..=blur.sigma_max)
                } else {
                    blur.sigma_min
                };
                img = gaussian_blur(&img, blur.kernel, sigma);
            }
        }
        img
    }
}

fn factor<R: Rng + ?Sized>(rng: &mut R, strength: f32) -> f32 {
    if strength == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - strength..=1.0 + strength)
    }
}

fn luma(p: &Rgb<u8>) -> f32 {
    0.299 * f32::from(p[0]) + 0.587 * f32::from(p[1]) + 0.114 * f32::from(p[2])
}

fn jitter(img: &mut RgbImage, brightness: f32, contrast: f32, saturation: f32) {
    let n = (img.width() * img.height()).max(1) as f32;
    let mean = img.pixels().map(luma).sum::<f32>() * brightness / n;
    for p in img.pixels_mut() {
        let mut v = [p[0], p[1], p[2]].map(|c| f32::from(c) * brightness);
        v = v.map(|c| (c - mean) * contrast + mean);
        let gray = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
        v = v.map(|c| gray + (c - gray) * saturation);
        *p = Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8));
    }
}

/// Rotation about the image center with bilinear sampling; uncovered
/// pixels are black.
fn rotate(img: &RgbImage, degrees: f32) -> RgbImage {
    let (w, h) = img.dimensions();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = w as f32 / 2.0;
    let cy = h as f32 / 2.0;
    RgbImage::from_fn(w, h, |x, y| {
        let dx = x as f32 + 0.5 - cx;
        let dy = y as f32 + 0.5 - cy;
        let sx = cos * dx + sin * dy + cx - 0.5;
        let sy = -sin * dx + cos * dy + cy - 0.5;
        bilinear(img, sx, sy)
    })
}

fn bilinear(img: &RgbImage, x: f32, y: f32) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    if x < -0.5 || y < -0.5 || x > w as f32 - 0.5 || y > h as f32 - 0.5 {
        return Rgb([0, 0, 0]);
    }
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |xx, yy| f32::from(img.get_pixel(xx, yy)[c]);
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        *o = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

fn gaussian_kernel(size: u32, sigma: f32) -> Vec<f32> {
    let half = (size / 2) as i32;
    let raw: Vec<f32> = (-half..=half)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable gaussian blur with reflected borders.
fn gaussian_blur(img: &RgbImage, kernel: u32, sigma: f32) -> RgbImage {
    let k = gaussian_kernel(kernel, sigma);
    let half = (kernel / 2) as i64;
    let (w, h) = img.dimensions();
    let reflect = |i: i64, n: u32| -> u32 {
        let n = i64::from(n);
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - m }) as u32
    };
    let pass = |src: &RgbImage, horizontal: bool| {
        RgbImage::from_fn(w, h, |x, y| {
            let mut acc = [0f32; 3];
            for (t, kv) in k.iter().enumerate() {
                let off = t as i64 - half;
                let (sx, sy) = if horizontal {
                    (reflect(i64::from(x) + off, w), y)
                } else {
                    (x, reflect(i64::from(y) + off, h))
                };
                let p = src.get_pixel(sx, sy);
                for c in 0..3 {
                    acc[c] += kv * f32::from(p[c]);
                }
            }
            Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8))
        })
    };
    pass(&pass(img, true), false)
}

const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Stacks equally sized images into a normalized `(batch, 3, h, w)` tensor.
pub fn images_to_tensor(images: &[RgbImage], device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = Vec::with_capacity(images.len() * 3 * plane);
    for img in images {
        if img.dimensions() != (w, h) {
            return Err(Error::InvalidInput("images in a batch must share dimensions".into()));
        }
        for c in 0..3 {
            data.extend(
                img.pixels()
                    .map(|p| (f32::from(p[c]) / 255.0 - MEAN[c]) / STD[c]),
            );
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h as usize, w as usize), device)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(w: u32, h: u32, seed: u8) -> DynamicImage {
        DynamicImage::ImageRgb8(RgbImage::from_fn(w, h, |x, y| {
            Rgb([(x * 7 + u32::from(seed)) as u8, (y * 3) as u8, ((x ^ y) * 5) as u8])
        }))
    }

    #[test]
    fn oversize_default_matches_convention() {
        assert_eq!(default_oversize(224), 256);
        assert_eq!(default_oversize(300), 342);
        assert_eq!(default_oversize(528), 602);
    }

    #[test]
    fn eval_is_deterministic() {
        let aug = build_augmentation(&AugmentationConfig::crop_rotate(32), AugmentMode::Eval).unwrap();
        let img = fixture(50, 40, 1);
        let a = aug.apply(&img, &mut ChaCha8Rng::seed_from_u64(1));
        let b = aug.apply(&img, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
    }

    #[test]
    fn train_is_reproducible_with_seed() {
        let aug = build_augmentation(&AugmentationConfig::crop_rotate(32), AugmentMode::Train).unwrap();
        let img = fixture(50, 40, 2);
        let a = aug.apply(&img, &mut ChaCha8Rng::seed_from_u64(5));
        let b = aug.apply(&img, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn resolution_300_with_342_oversize_gives_300_square() {
        let cfg = AugmentationConfig {
            oversize_resize: Some(342),
            ..AugmentationConfig::crop_rotate(300)
        };
        let aug = build_augmentation(&cfg, AugmentMode::Train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (i, (w, h)) in [(400, 300), (120, 500), (300, 300)].into_iter().enumerate() {
            let out = aug.apply(&fixture(w, h, i as u8), &mut rng);
            assert_eq!(out.dimensions(), (300, 300));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = AugmentationConfig::crop_rotate(32);
        c.oversize_resize = Some(32);
        assert!(build_augmentation(&c, AugmentMode::Train).is_err());
        let mut c = AugmentationConfig::standard(32);
        c.horizontal_flip = 1.5;
        assert!(c.validate().is_err());
        let mut c = AugmentationConfig::standard(32);
        c.gaussian_blur.as_mut().unwrap().kernel = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = RgbImage::from_pixel(9, 7, Rgb([10, 100, 200]));
        assert_eq!(gaussian_blur(&img, 5, 1.2), img);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = fixture(12, 12, 3).to_rgb8();
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn tensor_layout() {
        let imgs = vec![RgbImage::from_pixel(4, 3, Rgb([255, 0, 0])); 2];
        let t = images_to_tensor(&imgs, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[2, 3, 3, 4]);
    }
}
