//! Local frequency estimation: a per-pixel Gaussian over a frequency latent,
//! sampled with the reparameterization trick and decoded into tokens.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoder::{FeatureMap, UnfoldedFeatureMap};
use crate::params::{Bound, Conv, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::Result;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Mean and (clamped) log-variance maps, each `[d_z, h, w]`.
#[derive(Debug, Clone, Copy)]
pub struct FreqDistribution {
    pub mu: Var,
    pub logvar: Var,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}

/// Per-pixel frequency tokens `[d_t, h, w]`.
#[derive(Debug, Clone, Copy)]
pub struct TokenMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Var,
}

impl TokenMap {
    pub fn unfold(&self, g: &mut Graph) -> Result<UnfoldedFeatureMap> {
        let fm = FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values,
        };
        crate::encoder::unfold3x3(g, &fm)
    }
}

#[derive(Debug, Clone)]
pub struct Lfe {
    latent: usize,
    tokens: usize,
    conv1: Conv,
    conv2: Conv,
    mu_head: Conv,
    logvar_head: Conv,
    dec1: Conv,
    dec2: Conv,
}

impl Lfe {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        hidden: usize,
        latent: usize,
        tokens: usize,
    ) -> Self {
        Lfe {
            latent,
            tokens,
            conv1: Conv::new(store, rng, "lfe.enc1", 3, hidden, true),
            conv2: Conv::new(store, rng, "lfe.enc2", hidden, hidden, true),
            mu_head: Conv::new(store, rng, "lfe.mu", hidden, latent, true),
            logvar_head: Conv::new(store, rng, "lfe.logvar", hidden, latent, true),
            dec1: Conv::new(store, rng, "lfe.dec1", latent, tokens, true),
            dec2: Conv::new(store, rng, "lfe.dec2", tokens, tokens, false),
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.latent
    }

    pub fn token_channels(&self) -> usize {
        self.tokens
    }

    /// Predicts `P(z | lr)` from a planar `[3, h, w]` LR image.
    pub fn encode(&self, g: &mut Graph, p: &Bound, lr: Var) -> Result<FreqDistribution> {
        let (h, w) = (g.shape(lr)[1], g.shape(lr)[2]);
        let x = g.add_scalar(lr, -0.5)?;
        let x = self.conv1.forward(g, p, x)?;
        let x = g.relu(x)?;
        let x = self.conv2.forward(g, p, x)?;
        let x = g.relu(x)?;
        let mu = self.mu_head.forward(g, p, x)?;
        let logvar = self.logvar_head.forward(g, p, x)?;
        let logvar = g.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok(FreqDistribution {
            mu,
            logvar,
            channels: self.latent,
            height: h,
            width: w,
        })
    }

    pub fn decode(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<TokenMap> {
        let (h, w) = (g.shape(z)[1], g.shape(z)[2]);
        let t = self.dec1.forward(g, p, z)?;
        let t = g.relu(t)?;
        let values = self.dec2.forward(g, p, t)?;
        Ok(TokenMap {
            channels: self.tokens,
            height: h,
            width: w,
            values,
        })
    }
}

/// Draws `z`. Training uses `mu + exp(logvar / 2) ⊙ ε` with `ε ~ N(0, I)`
/// from `rng`; evaluation returns `mu` itself.
pub fn sample<R: Rng + ?Sized>(g: &mut Graph, dist: &FreqDistribution, mode: SampleMode, rng: &mut R) -> Result<Var> {
    match mode {
        SampleMode::Eval => Ok(dist.mu),
        SampleMode::Train => {
            let shape = g.shape(dist.mu).to_vec();
            let eps = Tensor::from_fn(&shape, |_| rng.sample::<f64, _>(StandardNormal));
            let eps = g.constant(eps);
            let half = g.scale(dist.logvar, 0.5)?;
            let sigma = g.exp(half)?;
            let noise = g.mul(sigma, eps)?;
            g.add(dist.mu, noise)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::image_tensor;
    use crate::image::Image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, Lfe) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lfe = Lfe::new(&mut store, &mut rng, 32, 16, 32);
        (store, lfe)
    }

    fn img(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(32, 32, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    #[test]
    fn shapes_and_unfolded_tokens() {
        let (store, lfe) = setup();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(image_tensor(&img(1)));
        let d = lfe.encode(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(d.mu), &[16, 32, 32]);
        assert_eq!(g.shape(d.logvar), &[16, 32, 32]);
        let z = sample(&mut g, &d, SampleMode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(z, d.mu);
        let t = lfe.decode(&mut g, &p, z).unwrap();
        assert_eq!(g.shape(t.values), &[32, 32, 32]);
        let u = t.unfold(&mut g).unwrap();
        assert_eq!(g.shape(u.values), &[288, 32, 32]);
    }

    #[test]
    fn different_images_give_different_means() {
        let (store, lfe) = setup();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let a = g.constant(image_tensor(&img(1)));
        let b = g.constant(image_tensor(&img(2)));
        let da = lfe.encode(&mut g, &p, a).unwrap();
        let db = lfe.encode(&mut g, &p, b).unwrap();
        assert_ne!(g.value(da.mu), g.value(db.mu));
    }

    #[test]
    fn clamped_logvar_collapses_the_sample_to_the_mean() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::from_fn(&[2, 3, 3], |i| i as f64 * 0.1));
        let raw = g.constant(Tensor::full(&[2, 3, 3], -1e6));
        let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX).unwrap();
        let d = FreqDistribution {
            mu,
            logvar,
            channels: 2,
            height: 3,
            width: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = sample(&mut g, &d, SampleMode::Train, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps: alloc::vec::Vec<f64> = (0..18).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let bound = libm::exp(-5.0);
        for ((zv, mv), e) in g.value(z).data().iter().zip(g.value(mu).data()).zip(&eps) {
            assert!((zv - mv).abs() <= bound * e.abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn seeded_training_samples_repeat_bit_for_bit() {
        let (store, lfe) = setup();
        let run = || {
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let x = g.constant(image_tensor(&img(4)));
            let d = lfe.encode(&mut g, &p, x).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let z = sample(&mut g, &d, SampleMode::Train, &mut rng).unwrap();
            g.value(z).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_weights_give_zero_tokens() {
        let (mut store, lfe) = setup();
        for name in ["lfe.dec1.w", "lfe.dec1.b", "lfe.dec2.w"] {
            let id = store.find(name).unwrap();
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert!(store.find("lfe.dec2.b").is_none());
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let z = g.constant(Tensor::from_fn(&[16, 5, 5], |i| (i as f64).sin()));
        let t = lfe.decode(&mut g, &p, z).unwrap();
        assert!(g.value(t.values).data().iter().all(|&v| v == 0.0));
    }
}
