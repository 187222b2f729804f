//! The assembled network: encoder, local frequency estimation and decoder
//! sharing one parameter store.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{Decoder, DecoderInputs, QueryBatch};
use crate::encoder::{image_tensor, unfold3x3, Encoder};
use crate::image::Image;
use crate::lfe::{sample, Lfe, SampleMode};
use crate::params::{Bound, Dense, ParamStore};
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelConfig {
    /// encoder channels per latent code
    pub features: usize,
    pub res_blocks: usize,
    pub lfe_hidden: usize,
    /// channels of the sampled frequency latent
    pub latent: usize,
    /// channels per frequency token
    pub tokens: usize,
    pub mlp_blocks: usize,
    pub hidden: usize,
    /// octaves of the positional encoding
    pub pe_freqs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: 64,
            res_blocks: 8,
            lfe_hidden: 32,
            latent: 16,
            tokens: 32,
            mlp_blocks: 5,
            hidden: 256,
            pe_freqs: 10,
        }
    }
}

impl ModelConfig {
    /// Reduced network that trains in minutes on one core.
    pub fn desk() -> Self {
        ModelConfig {
            features: 16,
            res_blocks: 2,
            lfe_hidden: 16,
            latent: 8,
            tokens: 8,
            mlp_blocks: 3,
            hidden: 48,
            pe_freqs: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("features", self.features),
            ("lfe_hidden", self.lfe_hidden),
            ("latent", self.latent),
            ("tokens", self.tokens),
            ("mlp_blocks", self.mlp_blocks),
            ("hidden", self.hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::invalid(
                    "model config",
                    alloc::format!("{name} must be positive"),
                ));
            }
        }
        Ok(())
    }
}

/// Which optional paths of the decoder are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Variant {
    /// frequency tokens (off: zeros)
    pub tokens: bool,
    /// sine modulation (off: every gate is 1)
    pub modulation: bool,
    /// additive bilinear LR branch
    pub skip: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Variant::FULL
    }
}

impl Variant {
    pub const FULL: Variant = Variant {
        tokens: true,
        modulation: true,
        skip: true,
    };
    pub const NO_TOKENS: Variant = Variant {
        tokens: false,
        ..Variant::FULL
    };
    pub const NO_MODULATION: Variant = Variant {
        modulation: false,
        ..Variant::FULL
    };
    pub const NO_SKIP: Variant = Variant {
        skip: false,
        ..Variant::FULL
    };
    pub const ALL: [Variant; 4] = [
        Variant::FULL,
        Variant::NO_TOKENS,
        Variant::NO_MODULATION,
        Variant::NO_SKIP,
    ];

    pub fn label(&self) -> &'static str {
        match (self.tokens, self.modulation, self.skip) {
            (true, true, true) => "full",
            (false, true, true) => "-L",
            (true, false, true) => "-G",
            (true, true, false) => "-S",
            _ => "custom",
        }
    }

    pub fn from_label(label: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.label() == label)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    variant: Variant,
    params: ParamStore,
    encoder: Encoder,
    lfe: Lfe,
    decoder: Decoder,
}

/// Queries per decoder call during inference.
const INFER_CHUNK: usize = 2048;

impl Model {
    /// Fresh parameters drawn from `seed`. `variant` is the configuration
    /// the model is meant to be trained and evaluated with.
    pub fn new(config: ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &mut rng, config.features, config.res_blocks);
        let lfe = Lfe::new(&mut params, &mut rng, config.lfe_hidden, config.latent, config.tokens);
        let decoder = Decoder::new(
            &mut params,
            &mut rng,
            9 * config.features,
            9 * config.tokens,
            config.hidden,
            config.mlp_blocks,
            config.pe_freqs,
        );
        Ok(Model {
            config,
            variant,
            params,
            encoder,
            lfe,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Final RGB layer of the decoder MLP.
    pub fn output_layer(&self) -> Dense {
        self.decoder.mlp().output_layer()
    }

    /// Zeroes the final RGB layer; the model then reproduces its skip branch.
    pub fn zero_output_layer(&mut self) {
        let out = self.output_layer();
        for id in [out.w, out.b] {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Records the full forward pass for one LR image. Returns `Q × 3`
    /// predictions, or `None` for an empty batch.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &Bound,
        lr: &Image,
        queries: &QueryBatch,
        variant: &Variant,
        mode: SampleMode,
        rng: &mut R,
    ) -> Result<Option<Var>> {
        let x = g.constant(image_tensor(lr));
        let fm = self.encoder.encode(g, p, x)?;
        let feat = unfold3x3(g, &fm)?;
        let tokens = if variant.tokens {
            let dist = self.lfe.encode(g, p, x)?;
            let z = sample(g, &dist, mode, rng)?;
            let t = self.lfe.decode(g, p, z)?;
            Some(t.unfold(g)?)
        } else {
            None
        };
        let inputs = DecoderInputs {
            features: &feat,
            tokens: tokens.as_ref(),
            lr,
        };
        self.decoder.query_rgb(g, p, &inputs, queries, variant)
    }

    /// Evaluation-mode predictions (latent mean, no clamping), computed in
    /// chunks so the recorded graph stays small.
    pub fn predict(&self, lr: &Image, queries: &QueryBatch, variant: &Variant) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(queries.len());
        if queries.is_empty() {
            return Ok(out);
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(image_tensor(lr));
        let fm = self.encoder.encode(&mut g, &p, x)?;
        let feat = unfold3x3(&mut g, &fm)?;
        let tokens = if variant.tokens {
            let dist = self.lfe.encode(&mut g, &p, x)?;
            let t = self.lfe.decode(&mut g, &p, dist.mu)?;
            Some(t.unfold(&mut g)?)
        } else {
            None
        };
        let inputs = DecoderInputs {
            features: &feat,
            tokens: tokens.as_ref(),
            lr,
        };
        let mark = g.len();
        let mut start = 0;
        while start < queries.len() {
            let end = (start + INFER_CHUNK).min(queries.len());
            let chunk = queries.slice(start, end);
            if let Some(v) = self.decoder.query_rgb(&mut g, &p, &inputs, &chunk, variant)? {
                out.extend(g.value(v).data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
            }
            g.truncate(mark);
            start = end;
        }
        Ok(out)
    }
}
