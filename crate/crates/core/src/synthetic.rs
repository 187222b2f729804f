//! Procedural face-like test images: an aligned head with hair, eyes, brows,
//! nose and mouth over a gradient background, anti-aliased by supersampling.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::Result;

type Rgb = [f64; 3];

/// Randomized layout of one face, in `[-1, 1]` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    bg_top: Rgb,
    bg_bottom: Rgb,
    skin: Rgb,
    hair: Rgb,
    iris: Rgb,
    lips: Rgb,
    center: [f64; 2],
    radii: [f64; 2],
    tilt: f64,
    eye_y: f64,
    eye_dx: f64,
    eye_r: f64,
    brow_lift: f64,
    mouth_y: f64,
    mouth_w: f64,
    hair_line: f64,
    strand_freq: f64,
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, base: Rgb, amount: f64) -> Rgb {
    base.map(|c| (c + rng.random_range(-amount..amount)).clamp(0.0, 1.0))
}

impl FaceParams {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let tone = rng.random_range(0.35..0.95);
        FaceParams {
            bg_top: jitter(rng, [0.5, 0.5, 0.5], 0.45),
            bg_bottom: jitter(rng, [0.5, 0.5, 0.5], 0.45),
            skin: jitter(rng, [tone, tone * 0.78, tone * 0.62], 0.05),
            hair: jitter(rng, [0.2, 0.14, 0.1], 0.15),
            iris: jitter(rng, [0.3, 0.35, 0.3], 0.25),
            lips: jitter(rng, [0.7, 0.3, 0.32], 0.12),
            center: [rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06)],
            radii: [rng.random_range(0.6..0.72), rng.random_range(0.44..0.54)],
            tilt: rng.random_range(-0.12..0.12),
            eye_y: rng.random_range(-0.2..-0.08),
            eye_dx: rng.random_range(0.16..0.23),
            eye_r: rng.random_range(0.055..0.085),
            brow_lift: rng.random_range(0.09..0.15),
            mouth_y: rng.random_range(0.3..0.42),
            mouth_w: rng.random_range(0.12..0.22),
            hair_line: rng.random_range(-0.55..-0.35),
            strand_freq: rng.random_range(40.0..90.0),
        }
    }

    /// Color at `(y, x)` in the face's frame.
    fn shade(&self, y: f64, x: f64) -> Rgb {
        let t = (y + 1.0) / 2.0;
        let mut c = mix(self.bg_top, self.bg_bottom, t);

        // head-local coordinates, rotated by the tilt
        let (s, co) = (libm::sin(self.tilt), libm::cos(self.tilt));
        let (dy, dx) = (y - self.center[0], x - self.center[1]);
        let (hy, hx) = (co * dy - s * dx, s * dy + co * dx);

        // neck
        if hy > 0.4 && hx.abs() < 0.22 * (1.0 + (hy - 0.4)) {
            c = scale(self.skin, 0.8);
        }
        // hair mass behind the head
        let hair_e = sq(hy / (self.radii[0] * 1.08) + 0.07) + sq(hx / (self.radii[1] * 1.16));
        if hair_e < 1.0 && hy < 0.25 {
            let strand = 0.85 + 0.15 * libm::sin(self.strand_freq * hx + 6.0 * hy);
            c = scale(self.hair, strand);
        }
        let face_e = sq(hy / self.radii[0]) + sq(hx / self.radii[1]);
        if face_e < 1.0 {
            // darker towards the rim
            c = scale(self.skin, 1.0 - 0.25 * face_e * face_e);
            // fringe
            if hy < self.hair_line + 0.04 * libm::sin(9.0 * hx) {
                let strand = 0.85 + 0.15 * libm::sin(self.strand_freq * hx);
                c = scale(self.hair, strand);
            }
            for side in [-1.0, 1.0] {
                let (ey, ex) = (hy - self.eye_y, hx - side * self.eye_dx);
                // brow
                let by = ey + self.brow_lift - 0.25 * sq(ex / self.eye_r) * 0.1;
                if by.abs() < 0.022 && ex.abs() < 1.7 * self.eye_r {
                    c = scale(self.hair, 0.9);
                }
                let eye_e = sq(ey / (self.eye_r * 0.62)) + sq(ex / (self.eye_r * 1.45));
                if eye_e < 1.0 {
                    c = [0.93, 0.92, 0.9];
                    let rr = sq(ey) + sq(ex);
                    if rr < sq(self.eye_r * 0.55) {
                        c = self.iris;
                    }
                    if rr < sq(self.eye_r * 0.25) {
                        c = [0.05, 0.04, 0.04];
                    }
                } else if eye_e < 1.25 && ey < 0.0 {
                    c = scale(self.skin, 0.55);
                }
            }
            // nose: shaded ridge and nostrils
            let ny = hy - 0.12;
            if ny > -0.05 && ny < 0.14 && (hx + 0.03).abs() < 0.012 + 0.1 * (ny + 0.05) * 0.25 {
                c = scale(c, 0.86);
            }
            for side in [-1.0, 1.0] {
                if sq((hy - 0.25) / 0.02) + sq((hx - side * 0.045) / 0.028) < 1.0 {
                    c = scale(self.skin, 0.45);
                }
            }
            // mouth
            let my = hy - self.mouth_y;
            let lip_e = sq(my / 0.05) + sq(hx / self.mouth_w);
            if lip_e < 1.0 {
                c = self.lips;
                if (my - 0.012 * (1.0 - sq(hx / self.mouth_w))).abs() < 0.007 {
                    c = scale(self.lips, 0.35);
                }
            }
        }
        c
    }

    /// Renders at `size × size` with `ss × ss` supersampling.
    pub fn render(&self, size: usize, ss: usize) -> Result<Image> {
        let n = (size * ss) as f64;
        let inv = 1.0 / (ss * ss) as f64;
        Image::from_fn(size, size, |py, px| {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let y = -1.0 + (2 * (py * ss + sy) + 1) as f64 / n;
                    let x = -1.0 + (2 * (px * ss + sx) + 1) as f64 / n;
                    let c = self.shade(y, x);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            acc.map(|v| v * inv)
        })
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

fn scale(a: Rgb, f: f64) -> Rgb {
    a.map(|v| (v * f).clamp(0.0, 1.0))
}

/// `count` random faces of `size × size`, reproducible from `seed`.
pub fn face_corpus(count: usize, size: usize, seed: u64) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| FaceParams::random(&mut rng).render(size, 3))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_reproducible_and_varied() {
        let a = face_corpus(3, 32, 1).unwrap();
        let b = face_corpus(3, 32, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert!(a.iter().all(|i| i.height() == 32 && i.width() == 32));
    }

    #[test]
    fn face_differs_from_background() {
        let img = face_corpus(1, 64, 9).unwrap().remove(0);
        let corner = img.get(0, 0);
        let middle = img.get(32, 32);
        assert_ne!(corner, middle);
    }
}
