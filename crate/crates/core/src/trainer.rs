//! Pair synthesis, the Charbonnier objective, Adam with step decay, and the
//! training loop.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::QueryBatch;
use crate::image::{make_coord_grid, resample_bicubic, resample_nearest, scaled_len, Image};
use crate::lfe::SampleMode;
use crate::model::{Model, ModelConfig, Variant};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// How the LR input is produced from the HR target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Degradation {
    #[default]
    Bicubic,
    Nearest,
}

impl Degradation {
    pub fn apply(self, img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
        match self {
            Degradation::Bicubic => resample_bicubic(img, out_h, out_w),
            Degradation::Nearest => resample_nearest(img, out_h, out_w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    /// LR side length
    pub lr_size: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    /// draw `r_y` and `r_x` independently
    pub anisotropic: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub charbonnier_delta: f64,
    /// target pixels sampled per image
    pub queries: usize,
    pub seed: u64,
    pub degradation: Degradation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_size: 32,
            scale_min: 1.0,
            scale_max: 2.0,
            anisotropic: false,
            batch_size: 16,
            epochs: 200,
            learning_rate: 1e-4,
            decay_epoch: 100,
            decay_factor: 0.1,
            charbonnier_delta: 1e-3,
            queries: 1024,
            seed: 0,
            degradation: Degradation::Bicubic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("train config", msg));
        if !(self.scale_min >= 1.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return bad("need 1 <= scale_min <= scale_max");
        }
        if self.lr_size < 8 {
            return bad("lr_size must be at least 8");
        }
        if self.queries == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("queries, batch_size and epochs must be positive");
        }
        if self.charbonnier_delta.is_nan() || self.charbonnier_delta <= 0.0 {
            return bad("charbonnier_delta must be positive");
        }
        if [self.learning_rate, self.decay_factor]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return bad("learning_rate and decay_factor must be positive");
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: constant, multiplied by the decay factor from
/// the decay epoch on.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch >= cfg.decay_epoch {
        cfg.learning_rate * cfg.decay_factor
    } else {
        cfg.learning_rate
    }
}

/// One `[r_y, r_x]` draw from `U[scale_min, scale_max]`.
pub fn sample_scale<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> [f64; 2] {
    let mut draw = || {
        if cfg.scale_max > cfg.scale_min {
            rng.random_range(cfg.scale_min..cfg.scale_max)
        } else {
            cfg.scale_min
        }
    };
    let y = draw();
    let x = if cfg.anisotropic { draw() } else { y };
    [y, x]
}

/// A synthesized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub lr: Image,
    pub hr: Image,
    pub queries: QueryBatch,
    /// `Q × 3`, in query order
    pub targets: Tensor,
}

/// `hr` is `gt` bicubically resized to `round(r·L_r)`; `lr` is `hr` degraded
/// to `L_r × L_r`. Queries are sampled without replacement and kept in
/// raster order; asking for at least the whole grid returns all of it.
pub fn synthesize_pair<R: Rng + ?Sized>(gt: &Image, scale: [f64; 2], cfg: &TrainConfig, rng: &mut R) -> Result<Pair> {
    let lr_n = cfg.lr_size;
    let hr_h = scaled_len(lr_n, scale[0]);
    let hr_w = scaled_len(lr_n, scale[1]);
    if gt.height() < hr_h || gt.width() < hr_w {
        return Err(Error::ImageTooSmall {
            height: gt.height(),
            width: gt.width(),
            need_h: hr_h,
            need_w: hr_w,
        });
    }
    let hr = resample_bicubic(gt, hr_h, hr_w)?;
    let lr = cfg.degradation.apply(&hr, lr_n, lr_n)?;
    let grid = make_coord_grid(hr_h, hr_w)?;
    let n = grid.len();
    let picks: Vec<usize> = if cfg.queries >= n {
        (0..n).collect()
    } else {
        let mut v = index::sample(rng, n, cfg.queries).into_vec();
        v.sort_unstable();
        v
    };
    let coords = picks.iter().map(|&i| grid.coords()[i]).collect();
    let mut targets = Vec::with_capacity(picks.len() * 3);
    for &i in &picks {
        targets.extend_from_slice(&hr.pixels()[i * 3..i * 3 + 3]);
    }
    let queries = QueryBatch::for_scale(coords, scale)?;
    let targets = Tensor::new(alloc::vec![picks.len(), 3], targets)?;
    Ok(Pair {
        lr,
        hr,
        queries,
        targets,
    })
}

/// Mean of `sqrt((pred − target)² + δ²)` over every element.
pub fn charbonnier(g: &mut Graph, pred: Var, target: Var, delta: f64) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape("charbonnier", g.shape(pred), g.shape(target)));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::invalid("charbonnier", "delta must be positive"));
    }
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    let sq = g.add_scalar(sq, delta * delta)?;
    let r = g.sqrt(sq)?;
    g.mean(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in parameter registration order.
/// Frozen parameters are left untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    hp: AdamParams,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::invalid(
            "adam_step",
            "gradient / moment count does not match the parameters",
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(hp.beta1, t as f64);
    let c2 = 1.0 - libm::pow(hp.beta2, t as f64);
    let frozen: Vec<bool> = params.iter().map(|(id, _, _)| params.is_frozen(id)).collect();
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = &grads[i];
        if g.shape() != p.shape() {
            return Err(Error::shape("adam_step", g.shape(), p.shape()));
        }
        if frozen[i] {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mj = hp.beta1 * *mj + (1.0 - hp.beta1) * gj;
            *vj = hp.beta2 * *vj + (1.0 - hp.beta2) * gj * gj;
            let mh = *mj / c1;
            let vh = *vj / c2;
            *w -= lr * mh / (libm::sqrt(vh) + hp.eps);
        }
    }
    Ok(())
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng, seed: u64) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to evaluate a model or resume its training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub variant: Variant,
    pub train: TrainConfig,
    /// completed epochs
    pub epoch: usize,
    /// completed iterations
    pub iteration: usize,
    pub params: Vec<(String, Tensor)>,
    pub adam: AdamState,
    pub rng: RngState,
}

impl Checkpoint {
    /// Rebuilds the model, checking the stored tensors against the
    /// architecture in the config.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.model, self.variant, 0)?;
        model.params_mut().load_from(&self.params)?;
        Ok(model)
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub scale_y: f64,
    pub scale_x: f64,
    pub loss: f64,
}

const DATA_STREAM: u64 = 1;

/// Stateful training loop; one [`Trainer::run_epoch`] per pass over the
/// corpus.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
    iteration: usize,
}

impl Trainer {
    /// Fresh model with parameters drawn from `cfg.seed`.
    pub fn new(cfg: TrainConfig, model_cfg: ModelConfig, variant: Variant) -> Result<Self> {
        let model = Model::new(model_cfg, variant, cfg.seed)?;
        Self::with_model(cfg, model)
    }

    /// Trains an existing model (e.g. one with frozen layers).
    pub fn with_model(cfg: TrainConfig, model: Model) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(DATA_STREAM);
        Ok(Trainer {
            adam: AdamState::new(model.params()),
            cfg,
            model,
            rng,
            epoch: 0,
            iteration: 0,
        })
    }

    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        let model = ckpt.to_model()?;
        if ckpt.adam.m.len() != model.params().len() || ckpt.adam.v.len() != model.params().len() {
            return Err(Error::Architecture(
                "optimizer state does not match the parameters".into(),
            ));
        }
        Ok(Trainer {
            cfg: ckpt.train,
            model,
            adam: ckpt.adam.clone(),
            rng: ckpt.rng.restore(),
            epoch: ckpt.epoch,
            iteration: ckpt.iteration,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: *self.model.config(),
            variant: self.model.variant(),
            train: self.cfg,
            epoch: self.epoch,
            iteration: self.iteration,
            params: self
                .model
                .params()
                .iter()
                .map(|(_, n, t)| (String::from(n), t.clone()))
                .collect(),
            adam: self.adam.clone(),
            rng: RngState::capture(&self.rng, self.cfg.seed),
        }
    }

    /// One optimizer step on `images`; returns the logged record.
    pub fn step(&mut self, images: &[&Image]) -> Result<LossRecord> {
        let scale = sample_scale(&self.cfg, &mut self.rng);
        let variant = self.model.variant();
        let mut g = Graph::new();
        let p = self.model.params().bind(&mut g, true);
        let mut total: Option<Var> = None;
        for img in images {
            let pair = synthesize_pair(img, scale, &self.cfg, &mut self.rng)?;
            let pred = self
                .model
                .forward(
                    &mut g,
                    &p,
                    &pair.lr,
                    &pair.queries,
                    &variant,
                    SampleMode::Train,
                    &mut self.rng,
                )
                .map_err(|e| self.non_finite(e))?
                .ok_or_else(|| Error::invalid("train", "empty query batch"))?;
            let target = g.constant(pair.targets);
            let loss = charbonnier(&mut g, pred, target, self.cfg.charbonnier_delta).map_err(|e| self.non_finite(e))?;
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        let total = total.ok_or_else(|| Error::invalid("train", "empty batch"))?;
        let loss = g
            .scale(total, 1.0 / images.len() as f64)
            .map_err(|e| self.non_finite(e))?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(self.iteration));
        }
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor> = p.vars().iter().map(|&v| grads.take(v)).collect::<Result<_>>()?;
        drop(g);
        let lr = lr_at(self.epoch, &self.cfg);
        adam_step(
            self.model.params_mut(),
            &grads,
            &mut self.adam,
            lr,
            AdamParams::default(),
        )?;
        if self.model.params().tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFiniteLoss(self.iteration));
        }
        let rec = LossRecord {
            iteration: self.iteration,
            epoch: self.epoch,
            scale_y: scale[0],
            scale_x: scale[1],
            loss: value,
        };
        self.iteration += 1;
        Ok(rec)
    }

    fn non_finite(&self, e: Error) -> Error {
        match e {
            Error::NonFinite(_) => Error::NonFiniteLoss(self.iteration),
            e => e,
        }
    }

    /// Shuffles the corpus and steps through it in batches; records are
    /// passed to `log` as they are produced.
    pub fn run_epoch(&mut self, corpus: &[Image], log: &mut dyn FnMut(&LossRecord)) -> Result<()> {
        check_corpus(corpus, &self.cfg)?;
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut self.rng);
        for batch in order.chunks(self.cfg.batch_size) {
            let images: Vec<&Image> = batch.iter().map(|&i| &corpus[i]).collect();
            let rec = self.step(&images)?;
            log(&rec);
        }
        self.epoch += 1;
        Ok(())
    }

    /// Runs the remaining epochs, handing a checkpoint to `on_epoch` after each.
    pub fn run(
        &mut self,
        corpus: &[Image],
        log: &mut dyn FnMut(&LossRecord),
        on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch(corpus, log)?;
            on_epoch(&self.checkpoint())?;
        }
        Ok(())
    }
}

fn check_corpus(corpus: &[Image], cfg: &TrainConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::invalid("train", "empty corpus"));
    }
    let need = scaled_len(cfg.lr_size, cfg.scale_max);
    for img in corpus {
        if img.height() < need || img.width() < need {
            return Err(Error::ImageTooSmall {
                height: img.height(),
                width: img.width(),
                need_h: need,
                need_w: need,
            });
        }
    }
    Ok(())
}

/// Trains from scratch for `cfg.epochs`; returns the final checkpoint and
/// the per-iteration loss log.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    variant: Variant,
    corpus: &[Image],
) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(*cfg, *model_cfg, variant)?;
    let mut records = Vec::new();
    trainer.run(corpus, &mut |r| records.push(*r), &mut |_| Ok(()))?;
    Ok((trainer.checkpoint(), records))
}
