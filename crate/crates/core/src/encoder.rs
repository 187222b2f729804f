//! Convolutional feature extractor producing one latent code per LR pixel,
//! and 3×3 feature unfolding.

use alloc::vec::Vec;

use rand::Rng;

use crate::image::Image;
use crate::params::{Bound, Conv, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::Result;

/// Latent grid `[channels, height, width]` aligned with the LR pixel lattice.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Var,
}

/// A [`FeatureMap`] after unfolding: `9 × channels` per pixel.
#[derive(Debug, Clone, Copy)]
pub struct UnfoldedFeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Var,
}

/// Planar `[3, h, w]` copy of an image.
pub fn image_tensor(img: &Image) -> Tensor {
    let (h, w) = (img.height(), img.width());
    let px = img.pixels();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, yx) = (i / (h * w), i % (h * w));
        px[yx * 3 + c]
    })
}

/// Residual stand-in encoder: head conv, `blocks` × (conv → ReLU → conv, plus
/// identity), tail conv. Fully convolutional, so it accepts any input size.
#[derive(Debug, Clone)]
pub struct Encoder {
    channels: usize,
    head: Conv,
    blocks: Vec<(Conv, Conv)>,
    tail: Conv,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, channels: usize, blocks: usize) -> Self {
        let head = Conv::new(store, rng, "encoder.head", 3, channels, true);
        let blocks = (0..blocks)
            .map(|i| {
                (
                    Conv::new(
                        store,
                        rng,
                        &alloc::format!("encoder.block{i}.conv1"),
                        channels,
                        channels,
                        true,
                    ),
                    Conv::new(
                        store,
                        rng,
                        &alloc::format!("encoder.block{i}.conv2"),
                        channels,
                        channels,
                        true,
                    ),
                )
            })
            .collect();
        let tail = Conv::new(store, rng, "encoder.tail", channels, channels, true);
        Encoder {
            channels,
            head,
            blocks,
            tail,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `lr` is a planar `[3, h, w]` image in `[0, 1]`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, lr: Var) -> Result<FeatureMap> {
        let (h, w) = (g.shape(lr)[1], g.shape(lr)[2]);
        let x = g.add_scalar(lr, -0.5)?;
        let mut x = self.head.forward(g, p, x)?;
        for (c1, c2) in &self.blocks {
            let y = c1.forward(g, p, x)?;
            let y = g.relu(y)?;
            let y = c2.forward(g, p, y)?;
            x = g.add(x, y)?;
        }
        let values = self.tail.forward(g, p, x)?;
        Ok(FeatureMap {
            channels: self.channels,
            height: h,
            width: w,
            values,
        })
    }
}

pub fn unfold3x3(g: &mut Graph, fm: &FeatureMap) -> Result<UnfoldedFeatureMap> {
    Ok(UnfoldedFeatureMap {
        channels: 9 * fm.channels,
        height: fm.height,
        width: fm.width,
        values: g.unfold3x3(fm.values)?,
    })
}

impl UnfoldedFeatureMap {
    /// `[h·w, channels]` view: one row per LR pixel, for row gathers.
    pub fn pixel_rows(&self, g: &mut Graph) -> Result<Var> {
        let flat = g.reshape(self.values, &[self.channels, self.height * self.width])?;
        g.transpose(flat)
    }
}
