//! Implicit image function: RGB at any continuous coordinate from the four
//! surrounding latent codes, the local offset, the scale ratio and a
//! sine-modulated encoding of the global coordinate, plus a bilinear skip
//! branch from the LR image.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::encoder::UnfoldedFeatureMap;
use crate::image::{cell_center, Image};
use crate::model::Variant;
use crate::params::{Bound, Dense, ParamStore};
use crate::tensor::{Graph, RowMap, Tensor, Var};
use crate::{Error, Result};

/// Target coordinates (`[y, x]` in `[-1, 1]`) and the scale ratio
/// `[1/r_y, 1/r_x]` they were generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    coords: Vec<[f64; 2]>,
    scale_ratio: [f64; 2],
}

impl QueryBatch {
    pub fn new(coords: Vec<[f64; 2]>, scale_ratio: [f64; 2]) -> Result<Self> {
        if coords.iter().flatten().any(|c| !(-1.0..=1.0).contains(c)) {
            return Err(Error::invalid("query batch", "coordinates must lie in [-1, 1]"));
        }
        if scale_ratio.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::invalid("query batch", "scale ratio must be positive"));
        }
        Ok(QueryBatch { coords, scale_ratio })
    }

    /// Queries for upscaling by `scale = [r_y, r_x]`.
    pub fn for_scale(coords: Vec<[f64; 2]>, scale: [f64; 2]) -> Result<Self> {
        Self::new(coords, [1.0 / scale[0], 1.0 / scale[1]])
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn scale_ratio(&self) -> [f64; 2] {
        self.scale_ratio
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> QueryBatch {
        QueryBatch {
            coords: self.coords[start..end].to_vec(),
            scale_ratio: self.scale_ratio,
        }
    }
}

/// One of the four latent codes around a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// row-major latent index
    pub index: usize,
    /// `x_s − x_c`, in units of latent cells
    pub rel: [f64; 2],
    pub weight: f64,
}

/// Per-query local-ensemble neighbourhood, ordered
/// (top, left), (top, right), (bottom, left), (bottom, right).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleNeighbors {
    pub height: usize,
    pub width: usize,
    pub neighbors: Vec<[Neighbor; 4]>,
}

/// Lower/upper cell along one axis: `(cell, rel, weight)` each.
fn axis_neighbors(q: f64, n: usize) -> [(usize, f64, f64); 2] {
    let u = (q + 1.0) * n as f64 / 2.0 - 0.5;
    let i0 = libm::floor(u) as isize;
    let last = n as isize - 1;
    let c0 = i0.clamp(0, last) as usize;
    let c1 = (i0 + 1).clamp(0, last) as usize;
    let half = n as f64 / 2.0;
    let rel0 = (q - cell_center(c0, n)) * half;
    let rel1 = (q - cell_center(c1, n)) * half;
    // each neighbour is weighted by the extent of the opposite one
    let (a0, a1) = (rel1.abs(), rel0.abs());
    let total = a0 + a1;
    let (w0, w1) = if total > 0.0 {
        (a0 / total, a1 / total)
    } else {
        (1.0, 0.0)
    };
    [(c0, rel0, w0), (c1, rel1, w1)]
}

/// The four latent cells around each query with normalized bilinear weights.
/// Queries beyond the outermost centers reuse the border cell.
pub fn gather_neighbors(height: usize, width: usize, queries: &QueryBatch) -> Result<EnsembleNeighbors> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("gather_neighbors", "empty feature grid"));
    }
    let neighbors = queries
        .coords
        .iter()
        .map(|&[qy, qx]| {
            let ys = axis_neighbors(qy, height);
            let xs = axis_neighbors(qx, width);
            let mk = |(cy, ry, wy): (usize, f64, f64), (cx, rx, wx): (usize, f64, f64)| Neighbor {
                index: cy * width + cx,
                rel: [ry, rx],
                weight: wy * wx,
            };
            [mk(ys[0], xs[0]), mk(ys[0], xs[1]), mk(ys[1], xs[0]), mk(ys[1], xs[1])]
        })
        .collect();
    Ok(EnsembleNeighbors {
        height,
        width,
        neighbors,
    })
}

/// `(x, sin(2⁰πx), cos(2⁰πx), …, sin(2^{n−1}πx), cos(2^{n−1}πx))` for a
/// 2-vector `x`; length `2 + 4n`.
pub fn positional_encode(x: [f64; 2], freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 + 4 * freqs);
    out.extend_from_slice(&x);
    let mut f = PI;
    for _ in 0..freqs {
        out.push(libm::sin(f * x[0]));
        out.push(libm::sin(f * x[1]));
        out.push(libm::cos(f * x[0]));
        out.push(libm::cos(f * x[1]));
        f *= 2.0;
    }
    out
}

pub fn encoding_len(freqs: usize) -> usize {
    2 + 4 * freqs
}

/// ReLU MLP whose hidden states are multiplied by `sin(w' g + b')` of the
/// positional encoding `g` and fed forward concatenated with the
/// unmodulated state.
#[derive(Debug, Clone)]
pub struct ModulatedMlp {
    in_features: usize,
    hidden: usize,
    encoding: usize,
    content: Vec<Dense>,
    modulation: Vec<Dense>,
    out: Dense,
}

impl ModulatedMlp {
    /// `blocks` content layers; the last state goes straight to the RGB
    /// layer, so only the first `blocks − 1` states are modulated.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        in_features: usize,
        hidden: usize,
        blocks: usize,
        encoding: usize,
    ) -> Self {
        assert!(blocks >= 1, "at least one block");
        let mut content = Vec::with_capacity(blocks);
        let mut modulation = Vec::with_capacity(blocks.saturating_sub(1));
        for i in 0..blocks {
            let fan_in = if i == 0 { in_features } else { 2 * hidden };
            content.push(Dense::new(
                store,
                rng,
                &alloc::format!("decoder.block{i}.content"),
                fan_in,
                hidden,
            ));
            if i + 1 < blocks {
                let w_bound = if i == 0 {
                    1.0 / encoding as f64
                } else {
                    libm::sqrt(6.0 / hidden as f64)
                };
                let b_bound = 1.0 / libm::sqrt(encoding as f64);
                modulation.push(Dense::with_bounds(
                    store,
                    rng,
                    &alloc::format!("decoder.block{i}.modulation"),
                    encoding,
                    hidden,
                    w_bound,
                    b_bound,
                ));
            }
        }
        let out = Dense::new(store, rng, "decoder.out", hidden, 3);
        ModulatedMlp {
            in_features,
            hidden,
            encoding,
            content,
            modulation,
            out,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn blocks(&self) -> usize {
        self.content.len()
    }

    pub fn output_layer(&self) -> Dense {
        self.out
    }

    pub fn modulation_layers(&self) -> &[Dense] {
        &self.modulation
    }

    pub fn content_layers(&self) -> &[Dense] {
        &self.content
    }

    /// `input: [m, in_features]`, `encoding: [e, encoding_len]`. When
    /// `expand` is given it maps the `e` encoding rows onto the `m` input
    /// rows; otherwise `e == m`. `modulate = false` fixes every `sin(·)` to 1.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        input: Var,
        encoding: Var,
        expand: Option<&RowMap>,
        modulate: bool,
    ) -> Result<Var> {
        let si = g.shape(input);
        if si.len() != 2 || si[1] != self.in_features {
            return Err(Error::invalid(
                "modulated block 0",
                alloc::format!("expected input width {}, got {:?}", self.in_features, si),
            ));
        }
        let m = si[0];
        let se = g.shape(encoding);
        let rows_ok = match expand {
            Some(map) => map.src_rows() == se[0] && map.rows() == m,
            None => se[0] == m,
        };
        if se.len() != 2 || se[1] != self.encoding || !rows_ok {
            return Err(Error::invalid(
                "modulation branch",
                alloc::format!("encoding {:?} does not match {} rows of width {}", se, m, self.encoding),
            ));
        }

        let mut s = self.content[0].forward(g, p, input)?;
        s = g.relu(s)?;
        for i in 1..self.content.len() {
            let mprev = if modulate {
                let pre = self.modulation[i - 1].forward(g, p, encoding)?;
                let gm = g.sin(pre)?;
                let gm = match expand {
                    Some(map) => g.rows(gm, map.clone())?,
                    None => gm,
                };
                g.mul(s, gm)?
            } else {
                s
            };
            let cat = g.concat(&[mprev, s])?;
            if g.shape(cat)[1] != 2 * self.hidden {
                return Err(Error::invalid(
                    "modulated block",
                    alloc::format!("block {i} width mismatch"),
                ));
            }
            s = self.content[i].forward(g, p, cat)?;
            s = g.relu(s)?;
        }
        self.out.forward(g, p, s)
    }
}

/// Decoder head combining the modulated MLP with local ensemble and skip.
#[derive(Debug, Clone)]
pub struct Decoder {
    mlp: ModulatedMlp,
    feature_width: usize,
    token_width: usize,
    freqs: usize,
}

/// Inputs shared by every query of one image.
pub struct DecoderInputs<'a> {
    pub features: &'a UnfoldedFeatureMap,
    /// `None` feeds zero tokens.
    pub tokens: Option<&'a UnfoldedFeatureMap>,
    pub lr: &'a Image,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        feature_width: usize,
        token_width: usize,
        hidden: usize,
        blocks: usize,
        freqs: usize,
    ) -> Self {
        let in_features = token_width + feature_width + 4;
        let mlp = ModulatedMlp::new(store, rng, in_features, hidden, blocks, encoding_len(freqs));
        Decoder {
            mlp,
            feature_width,
            token_width,
            freqs,
        }
    }

    pub fn mlp(&self) -> &ModulatedMlp {
        &self.mlp
    }

    /// `Q × 3` RGB predictions (unclamped), or `None` for an empty batch.
    pub fn query_rgb(
        &self,
        g: &mut Graph,
        p: &Bound,
        inputs: &DecoderInputs<'_>,
        queries: &QueryBatch,
        variant: &Variant,
    ) -> Result<Option<Var>> {
        if queries.is_empty() {
            return Ok(None);
        }
        let feat = inputs.features;
        let (h, w) = (feat.height, feat.width);
        if (inputs.lr.height(), inputs.lr.width()) != (h, w) {
            return Err(Error::shape(
                "query_rgb",
                &[inputs.lr.height(), inputs.lr.width()],
                &[h, w],
            ));
        }
        if feat.channels != self.feature_width {
            return Err(Error::shape(
                "query_rgb features",
                &[feat.channels],
                &[self.feature_width],
            ));
        }
        let q = queries.len();
        let nb = gather_neighbors(h, w, queries)?;

        let mut pick = Vec::with_capacity(4 * q);
        let mut aux = Vec::with_capacity(16 * q);
        let [ry, rx] = queries.scale_ratio();
        for cell in &nb.neighbors {
            for n in cell {
                pick.push(n.index);
                aux.extend_from_slice(&[n.rel[0], n.rel[1], ry, rx]);
            }
        }
        let gather = RowMap::gather(h * w, &pick);

        let feat_rows = feat.pixel_rows(g)?;
        let feats = g.rows(feat_rows, gather.clone())?;
        let toks = match inputs.tokens.filter(|_| variant.tokens) {
            Some(t) => {
                if (t.height, t.width, t.channels) != (h, w, self.token_width) {
                    return Err(Error::shape(
                        "query_rgb tokens",
                        &[t.channels, t.height, t.width],
                        &[self.token_width, h, w],
                    ));
                }
                let rows = t.pixel_rows(g)?;
                g.rows(rows, gather)?
            }
            None => g.constant(Tensor::zeros(&[4 * q, self.token_width])),
        };
        let aux = g.constant(Tensor::new(vec![4 * q, 4], aux)?);
        let input = g.concat(&[toks, feats, aux])?;

        let enc_len = encoding_len(self.freqs);
        let mut enc = Vec::with_capacity(q * enc_len);
        for &c in queries.coords() {
            enc.extend(positional_encode(c, self.freqs));
        }
        let enc = g.constant(Tensor::new(vec![q, enc_len], enc)?);
        let repeat: Vec<usize> = (0..q).flat_map(|i| [i; 4]).collect();
        let expand = RowMap::gather(q, &repeat);

        let local = self.mlp.forward(g, p, input, enc, Some(&expand), variant.modulation)?;

        let mut ensemble = RowMap::new(4 * q);
        for (i, cell) in nb.neighbors.iter().enumerate() {
            let taps: [(usize, f64); 4] = core::array::from_fn(|k| (4 * i + k, cell[k].weight));
            ensemble.push_row(&taps);
        }
        let mut out = g.rows(local, ensemble)?;

        if variant.skip {
            let base = g.constant(bilinear_at(inputs.lr, &nb)?);
            out = g.add(out, base)?;
        }
        Ok(Some(out))
    }
}

/// LR RGB sampled at each query with the ensemble's bilinear weights.
pub fn bilinear_at(lr: &Image, nb: &EnsembleNeighbors) -> Result<Tensor> {
    let mut map = RowMap::new(lr.height() * lr.width());
    for cell in &nb.neighbors {
        let taps: [(usize, f64); 4] = core::array::from_fn(|k| (cell[k].index, cell[k].weight));
        map.push_row(&taps);
    }
    let data = map.apply(lr.pixels(), 3);
    Tensor::new(vec![nb.neighbors.len(), 3], data)
}
