use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance guard used when standardizing.
pub const STD_EPS: f64 = 1e-6;

/// Crop applied before resizing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Crop {
    #[default]
    Identity,
    /// Centered `size x size` window (clamped to the image).
    Center { size: u32 },
    /// Smallest square around the mask support; falls back to the largest
    /// centered square when no mask (or an empty one) is available.
    MaskSquare,
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::image(path, e))
}

pub fn load_mask(path: &Path) -> Result<DynamicImage> {
    load_image(path)
}

fn crop_box(crop: Crop, width: u32, height: u32, mask: Option<&DynamicImage>) -> (u32, u32, u32, u32) {
    let centered = |side: u32| {
        let side = side.min(width).min(height);
        ((width - side) / 2, (height - side) / 2, side, side)
    };
    match crop {
        Crop::Identity => (0, 0, width, height),
        Crop::Center { size } => centered(size),
        Crop::MaskSquare => {
            let Some(mask) = mask else {
                return centered(width.min(height));
            };
            let m = mask.to_luma8();
            let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
            for (x, y, p) in m.enumerate_pixels() {
                if p[0] >= 128 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
            if x0 == u32::MAX {
                return centered(width.min(height));
            }
            let side = (x1 - x0 + 1).max(y1 - y0 + 1).min(width).min(height);
            let cx = (x0 + x1 + 1) / 2;
            let cy = (y0 + y1 + 1) / 2;
            let left = cx.saturating_sub(side / 2).min(width - side);
            let top = cy.saturating_sub(side / 2).min(height - side);
            (left, top, side, side)
        }
    }
}

/// Crops and resizes an image (and optional mask) to `[size, size, channels]`
/// with intensities in `[0, 1]`, then standardizes with `stats` if given.
/// Masks are resized with nearest-neighbour sampling and binarized.
pub fn preprocess(
    image: &DynamicImage,
    mask: Option<&DynamicImage>,
    crop: Crop,
    size: usize,
    channels: usize,
    stats: Option<&ChannelStats>,
) -> Result<(Array3<f64>, Option<ndarray::Array2<f64>>)> {
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
    }
    if let Some(m) = mask {
        if (m.width(), m.height()) != (image.width(), image.height()) {
            return Err(Error::Data(format!(
                "mask is {}x{} but image is {}x{}",
                m.width(),
                m.height(),
                image.width(),
                image.height()
            )));
        }
    }
    let (x, y, w, h) = crop_box(crop, image.width(), image.height(), mask);
    let s = size as u32;
    let cropped = image.crop_imm(x, y, w, h);
    let mut out = Array3::zeros((size, size, channels));
    if channels == 1 {
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> = cropped.to_luma32f();
        let buf = if (w, h) == (s, s) {
            buf
        } else {
            imageops::resize(&buf, s, s, FilterType::Triangle)
        };
        for (px, py, p) in buf.enumerate_pixels() {
            out[[py as usize, px as usize, 0]] = (p[0] as f64).clamp(0.0, 1.0);
        }
    } else {
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = cropped.to_rgb32f();
        let buf = if (w, h) == (s, s) {
            buf
        } else {
            imageops::resize(&buf, s, s, FilterType::Triangle)
        };
        for (px, py, p) in buf.enumerate_pixels() {
            for c in 0..3 {
                out[[py as usize, px as usize, c]] = (p[c] as f64).clamp(0.0, 1.0);
            }
        }
    }
    if let Some(stats) = stats {
        let mut batch = out.insert_axis(Axis(0));
        stats.apply(&mut batch);
        out = batch.index_axis_move(Axis(0), 0);
    }
    let mask = mask.map(|m| {
        let m = m.crop_imm(x, y, w, h).to_luma8();
        let m = if (w, h) == (s, s) {
            m
        } else {
            imageops::resize(&m, s, s, FilterType::Nearest)
        };
        ndarray::Array2::from_shape_fn((size, size), |(r, c)| {
            if m.get_pixel(c as u32, r as u32)[0] >= 128 {
                1.0
            } else {
                0.0
            }
        })
    });
    Ok((out, mask))
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Statistics over every pixel of `[n, S, S, C]` images. The stored
    /// deviation already includes the variance guard.
    pub fn compute(images: &Array4<f64>) -> Self {
        let c = images.shape()[3];
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let lane = images.index_axis(Axis(3), ch);
            let n = lane.len().max(1) as f64;
            let m = lane.sum() / n;
            let var = lane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[ch] = m;
            std[ch] = (var + STD_EPS).sqrt();
        }
        Self { mean, std }
    }

    pub fn apply(&self, images: &mut Array4<f64>) {
        for (ch, mut lane) in images.axis_iter_mut(Axis(3)).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            lane.mapv_inplace(|v| (v - m) / s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    #[test]
    fn center_crop_and_resize_shape() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(450, 450, Rgb([10, 20, 30])));
        let (x, _) = preprocess(&img, None, Crop::Center { size: 450 }, 224, 3, None).unwrap();
        assert_eq!(x.shape(), &[224, 224, 3]);
        assert!((x[[100, 100, 2]] - 30.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn same_size_is_only_scaled() {
        let img = GrayImage::from_fn(8, 8, |x, y| Luma([(x * 30 + y) as u8]));
        let (x, _) = preprocess(&DynamicImage::ImageLuma8(img.clone()), None, Crop::Identity, 8, 1, None).unwrap();
        for (px, py, p) in img.enumerate_pixels() {
            assert!((x[[py as usize, px as usize, 0]] - p[0] as f64 / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_image_standardizes_to_zero() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(8, 8, Luma([77])));
        let (x, _) = preprocess(&img, None, Crop::Identity, 8, 1, None).unwrap();
        let batch = x.insert_axis(Axis(0));
        let stats = ChannelStats::compute(&batch);
        let (y, _) = preprocess(&img, None, Crop::Identity, 8, 1, Some(&stats)).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn mask_square_crops_around_support() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(32, 32, Luma([50])));
        let mask = GrayImage::from_fn(32, 32, |x, y| {
            Luma([if (20..24).contains(&x) && (4..10).contains(&y) { 255 } else { 0 }])
        });
        let mask = DynamicImage::ImageLuma8(mask);
        assert_eq!(crop_box(Crop::MaskSquare, 32, 32, Some(&mask)), (19, 4, 6, 6));
        let (_, m) = preprocess(&img, Some(&mask), Crop::MaskSquare, 6, 1, None).unwrap();
        assert_eq!(m.unwrap().sum(), 24.0);
    }
}
