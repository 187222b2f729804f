//! PSNR and SSIM on the luma channel, 8-bit scale.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::{rgb_to_y, Image};
use crate::{Error, Result};

const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// `(0.01 · 255)²`
pub const SSIM_C1: f64 = 6.5025;
/// `(0.03 · 255)²`
pub const SSIM_C2: f64 = 58.5225;

fn same_dims(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(op, &[a.height(), a.width()], &[b.height(), b.width()]));
    }
    Ok(())
}

/// Luma plane scaled to `[0, 255]`.
pub fn luma_255(img: &Image) -> Vec<f64> {
    rgb_to_y(img).into_iter().map(|v| v * PEAK).collect()
}

/// PSNR from a mean squared error on the 8-bit scale; `+∞` when it is zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * libm::log10(PEAK / libm::sqrt(mse))
    }
}

pub fn psnr_y(a: &Image, b: &Image) -> Result<f64> {
    same_dims("psnr_y", a, b)?;
    let (ya, yb) = (luma_255(a), luma_255(b));
    let mse = ya.iter().zip(&yb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / ya.len() as f64;
    Ok(psnr_from_mse(mse))
}

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Gaussian-weighted sums over every valid window, separably.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), mean over valid
/// window positions only.
pub fn ssim_y(a: &Image, b: &Image) -> Result<f64> {
    same_dims("ssim_y", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            need_h: SSIM_WINDOW,
            need_w: SSIM_WINDOW,
        });
    }
    if a == b {
        return Ok(1.0);
    }
    let (x, y) = (luma_255(a), luma_255(b));
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let sxx = filter_valid(&prod(&x, &x), h, w, &k);
    let syy = filter_valid(&prod(&y, &y), h, w, &k);
    let sxy = filter_valid(&prod(&x, &y), h, w, &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total +=
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}
