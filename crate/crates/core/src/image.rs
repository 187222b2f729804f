//! RGB rasters, luma conversion, resampling and normalized coordinate grids.
//!
//! All resamplers share one alignment convention: sample `i` of an `n`-sample
//! axis sits at the cell center `-1 + (2i + 1) / n` of the `[-1, 1]` domain,
//! which in source-pixel units is `u = (i + 0.5) · n_in / n_out − 0.5`.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// `height × width × 3` RGB raster with channels in `[0, 1]`, stored
/// row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Builds an image, clamping every channel into `[0, 1]`.
    pub fn new(height: usize, width: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image", "height and width must be at least 1"));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::invalid(
                "image",
                alloc::format!(
                    "{}x{}x3 needs {} values, got {}",
                    height,
                    width,
                    height * width * 3,
                    pixels.len()
                ),
            ));
        }
        if pixels.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("image"));
        }
        for v in &mut pixels {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image { height, width, pixels })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(y, x));
            }
        }
        Image::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Image::from_fn(height, width, |_, _| rgb)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Per-channel `|a − b|`.
    pub fn abs_diff(&self, other: &Image) -> Result<Image> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(
                "abs_diff",
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(Image {
            height: self.height,
            width: self.width,
            pixels,
        })
    }
}

/// Normalized cell-center coordinates of an `height × width` raster,
/// enumerated row-major as `[y, x]` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    coords: Vec<[f64; 2]>,
    height: usize,
    width: usize,
}

impl CoordGrid {
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Center of cell `i` on an `n`-cell axis spanning `[-1, 1]`.
pub fn cell_center(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

pub fn make_coord_grid(height: usize, width: usize) -> Result<CoordGrid> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("make_coord_grid", "axis sizes must be at least 1"));
    }
    let ys: Vec<f64> = (0..height).map(|i| cell_center(i, height)).collect();
    let xs: Vec<f64> = (0..width).map(|i| cell_center(i, width)).collect();
    let coords = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [y, x])).collect();
    Ok(CoordGrid { coords, height, width })
}

/// BT.601 studio-swing luma on the `[0, 1]` scale: 16/255 for black,
/// 235/255 for white.
pub fn rgb_to_y(img: &Image) -> Vec<f64> {
    img.pixels
        .chunks_exact(3)
        .map(|p| (16.0 + 65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2]) / 255.0)
        .collect()
}

/// Catmull-Rom cubic (`a = −0.5`).
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source position of output sample `i` in source-pixel units.
fn source_pos(i: usize, n_in: usize, n_out: usize) -> f64 {
    (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5
}

/// Normalized taps of one output sample: `(reference, [(source, weight)])`.
struct AxisTaps {
    reference: usize,
    taps: Vec<(usize, f64)>,
}

/// Bicubic taps per output sample; the kernel is stretched by the
/// reduction factor when downsampling so it also acts as the anti-alias
/// filter.
fn bicubic_axis(n_in: usize, n_out: usize) -> Vec<AxisTaps> {
    let scale = n_out as f64 / n_in as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..n_out)
        .map(|i| {
            let u = source_pos(i, n_in, n_out);
            let lo = libm::floor(u - support) as isize + 1;
            let hi = libm::floor(u + support) as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let w = cubic_kernel((j as f64 - u) * stretch);
                if w == 0.0 {
                    continue;
                }
                let src = j.clamp(0, n_in as isize - 1) as usize;
                match taps.iter_mut().find(|t| t.0 == src) {
                    Some(t) => t.1 += w,
                    None => taps.push((src, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            let nearest = libm::floor(u + 0.5).clamp(0.0, (n_in - 1) as f64) as usize;
            AxisTaps {
                reference: nearest,
                taps,
            }
        })
        .collect()
}

fn bilinear_axis(n_in: usize, n_out: usize) -> Vec<AxisTaps> {
    (0..n_out)
        .map(|i| {
            let u = source_pos(i, n_in, n_out).clamp(0.0, (n_in - 1) as f64);
            let i0 = libm::floor(u) as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            let t = u - i0 as f64;
            AxisTaps {
                reference: i0,
                taps: vec![(i0, 1.0 - t), (i1, t)],
            }
        })
        .collect()
}

/// Index of the source cell whose center is nearest to output cell `i`
/// (ties go to the higher index).
pub fn nearest_index(i: usize, n_in: usize, n_out: usize) -> usize {
    (((2 * i + 1) * n_in) / (2 * n_out)).min(n_in - 1)
}

/// Runs one separable pass along an axis of a planar-interleaved buffer.
///
/// Written as `v_ref + Σ w (v − v_ref)` so constant input stays bit-exact.
fn separable(
    src: &[f64],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    rows: &[AxisTaps],
    cols: &[AxisTaps],
) -> Vec<f64> {
    let mut tmp = vec![0.0; h * out_w * 3];
    for y in 0..h {
        for (x, t) in cols.iter().enumerate() {
            for c in 0..3 {
                let r = src[(y * w + t.reference) * 3 + c];
                let mut acc = 0.0;
                for &(j, wt) in &t.taps {
                    acc += wt * (src[(y * w + j) * 3 + c] - r);
                }
                tmp[(y * out_w + x) * 3 + c] = r + acc;
            }
        }
    }
    let mut out = vec![0.0; out_h * out_w * 3];
    for (y, t) in rows.iter().enumerate() {
        for x in 0..out_w {
            for c in 0..3 {
                let r = tmp[(t.reference * out_w + x) * 3 + c];
                let mut acc = 0.0;
                for &(j, wt) in &t.taps {
                    acc += wt * (tmp[(j * out_w + x) * 3 + c] - r);
                }
                out[(y * out_w + x) * 3 + c] = r + acc;
            }
        }
    }
    out
}

fn check_out(op: &'static str, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(op, "output size must be at least 1x1"));
    }
    Ok(())
}

/// Catmull-Rom bicubic resampling with clamped edges; the result is clamped
/// to `[0, 1]`.
pub fn resample_bicubic(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    check_out("resample_bicubic", out_h, out_w)?;
    let rows = bicubic_axis(img.height, out_h);
    let cols = bicubic_axis(img.width, out_w);
    let out = separable(&img.pixels, img.height, img.width, out_h, out_w, &rows, &cols);
    Image::new(out_h, out_w, out)
}

/// Bilinear resampling with clamped edges.
pub fn resample_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    check_out("resample_bilinear", out_h, out_w)?;
    let rows = bilinear_axis(img.height, out_h);
    let cols = bilinear_axis(img.width, out_w);
    let out = separable(&img.pixels, img.height, img.width, out_h, out_w, &rows, &cols);
    Image::new(out_h, out_w, out)
}

pub fn resample_nearest(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    check_out("resample_nearest", out_h, out_w)?;
    let mut pixels = Vec::with_capacity(out_h * out_w * 3);
    for y in 0..out_h {
        let sy = nearest_index(y, img.height, out_h);
        for x in 0..out_w {
            let sx = nearest_index(x, img.width, out_w);
            pixels.extend_from_slice(&img.get(sy, sx));
        }
    }
    Image::new(out_h, out_w, pixels)
}

/// `round(scale · n)`, never below one pixel.
pub fn scaled_len(n: usize, scale: f64) -> usize {
    (libm::round(scale * n as f64) as usize).max(1)
}
