//! Inference at arbitrary scale, evaluation reports and the ablation harness.

use alloc::string::String;
use alloc::vec::Vec;

use crate::decoder::QueryBatch;
use crate::image::{make_coord_grid, resample_bicubic, resample_bilinear, resample_nearest, scaled_len, Image};
use crate::metrics::{psnr_y, ssim_y};
use crate::model::{Model, Variant};
use crate::trainer::Degradation;
use crate::{Error, Result};

/// Unclamped predictions on the `round(r_y·H) × round(r_x·W)` grid,
/// row-major with interleaved RGB.
pub fn infer_raw(model: &Model, lr: &Image, r_y: f64, r_x: f64, variant: &Variant) -> Result<(usize, usize, Vec<f64>)> {
    if !(r_y > 0.0 && r_x > 0.0) || !r_y.is_finite() || !r_x.is_finite() {
        return Err(Error::invalid("infer", "scale factors must be positive"));
    }
    let (h, w) = (scaled_len(lr.height(), r_y), scaled_len(lr.width(), r_x));
    let grid = make_coord_grid(h, w)?;
    let queries = QueryBatch::for_scale(grid.coords().to_vec(), [r_y, r_x])?;
    let rgb = model.predict(lr, &queries, variant)?;
    Ok((h, w, rgb.into_iter().flatten().collect()))
}

/// Super-resolves `lr` by `(r_y, r_x)`; channels are clamped to `[0, 1]`.
pub fn infer(model: &Model, lr: &Image, r_y: f64, r_x: f64, variant: &Variant) -> Result<Image> {
    let (h, w, px) = infer_raw(model, lr, r_y, r_x, variant)?;
    Image::new(h, w, px)
}

/// Classical upsamplers used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Bicubic,
    Bilinear,
    Nearest,
}

impl Baseline {
    pub fn label(self) -> &'static str {
        match self {
            Baseline::Bicubic => "bicubic",
            Baseline::Bilinear => "bilinear",
            Baseline::Nearest => "nearest",
        }
    }

    pub fn upsample(self, lr: &Image, out_h: usize, out_w: usize) -> Result<Image> {
        match self {
            Baseline::Bicubic => resample_bicubic(lr, out_h, out_w),
            Baseline::Bilinear => resample_bilinear(lr, out_h, out_w),
            Baseline::Nearest => resample_nearest(lr, out_h, out_w),
        }
    }
}

/// What is being evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Model(&'a Model, Variant),
    Baseline(Baseline),
}

impl Method<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Model(_, v) => v.label(),
            Method::Baseline(b) => b.label(),
        }
    }
}

/// How test pairs are built from ground truth: `hr` is `gt` resized to
/// `round(r·lr_size)` and `lr` is `hr` degraded to `lr_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalProtocol {
    pub lr_size: usize,
    pub degradation: Degradation,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            lr_size: 32,
            degradation: Degradation::Bicubic,
        }
    }
}

/// A test pair at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TestPair {
    pub lr: Image,
    pub hr: Image,
}

pub fn make_test_pair(gt: &Image, scale: f64, protocol: &EvalProtocol) -> Result<TestPair> {
    let n = scaled_len(protocol.lr_size, scale);
    if gt.height() < n || gt.width() < n {
        return Err(Error::ImageTooSmall {
            height: gt.height(),
            width: gt.width(),
            need_h: n,
            need_w: n,
        });
    }
    let hr = resample_bicubic(gt, n, n)?;
    let lr = protocol.degradation.apply(&hr, protocol.lr_size, protocol.lr_size)?;
    Ok(TestPair { lr, hr })
}

/// Super-resolved output of `method` for a pair.
pub fn restore(method: &Method<'_>, pair: &TestPair, scale: f64) -> Result<Image> {
    let (h, w) = (pair.hr.height(), pair.hr.width());
    let out = match method {
        Method::Model(m, v) => infer(m, &pair.lr, scale, scale, v)?,
        Method::Baseline(b) => b.upsample(&pair.lr, h, w)?,
    };
    if (out.height(), out.width()) != (h, w) {
        return Err(Error::shape("restore", &[out.height(), out.width()], &[h, w]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub scale: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Distinct scales in first-seen order.
    pub fn scales(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.scale) {
                out.push(r.scale);
            }
        }
        out
    }

    /// Mean PSNR and SSIM over the rows at `scale`.
    pub fn mean_at(&self, scale: f64) -> Option<(f64, f64)> {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.scale == scale).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Some((psnr, ssim))
    }
}

/// Scores `method` on every `(name, gt)` at every scale.
pub fn evaluate(
    method: &Method<'_>,
    corpus: &[(String, Image)],
    scales: &[f64],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(corpus.len() * scales.len());
    for &scale in scales {
        for (name, gt) in corpus {
            let pair = make_test_pair(gt, scale, protocol)?;
            let sr = restore(method, &pair, scale)?;
            rows.push(EvalRow {
                image: name.clone(),
                scale,
                psnr: psnr_y(&sr, &pair.hr)?,
                ssim: ssim_y(&sr, &pair.hr)?,
            });
        }
    }
    Ok(EvalReport {
        label: String::from(method.label()),
        rows,
    })
}

/// `|SR − bicubic|` for one image and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMap {
    pub variant: String,
    pub image: String,
    pub scale: f64,
    pub map: Image,
}

/// One report per requested variant, plus difference maps against bicubic
/// upsampling. Every requested label must have a model.
pub fn ablate(
    models: &[(Variant, &Model)],
    requested: &[Variant],
    corpus: &[(String, Image)],
    scales: &[f64],
    protocol: &EvalProtocol,
) -> Result<(Vec<EvalReport>, Vec<DiffMap>)> {
    let missing: Vec<&str> = requested
        .iter()
        .filter(|v| !models.iter().any(|(m, _)| m == *v))
        .map(|v| v.label())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingVariant(missing.join(", ")));
    }
    let mut reports = Vec::new();
    let mut maps = Vec::new();
    for v in requested {
        let model = models
            .iter()
            .find(|(m, _)| m == v)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::MissingVariant(String::from(v.label())))?;
        let method = Method::Model(model, *v);
        let mut rows = Vec::new();
        for &scale in scales {
            for (name, gt) in corpus {
                let pair = make_test_pair(gt, scale, protocol)?;
                let sr = restore(&method, &pair, scale)?;
                let bic = Baseline::Bicubic.upsample(&pair.lr, pair.hr.height(), pair.hr.width())?;
                rows.push(EvalRow {
                    image: name.clone(),
                    scale,
                    psnr: psnr_y(&sr, &pair.hr)?,
                    ssim: ssim_y(&sr, &pair.hr)?,
                });
                maps.push(DiffMap {
                    variant: String::from(v.label()),
                    image: name.clone(),
                    scale,
                    map: sr.abs_diff(&bic)?,
                });
            }
        }
        reports.push(EvalReport {
            label: String::from(v.label()),
            rows,
        });
    }
    Ok((reports, maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            features: 4,
            res_blocks: 1,
            lfe_hidden: 4,
            latent: 2,
            tokens: 2,
            mlp_blocks: 2,
            hidden: 8,
            pe_freqs: 4,
        }
    }

    fn corpus(n: usize) -> Vec<(String, Image)> {
        (0..n)
            .map(|i| {
                let img = Image::from_fn(40, 40, |y, x| {
                    let t = ((y * (i + 1)) as f64 * 0.17 + x as f64 * 0.11).sin() * 0.5 + 0.5;
                    [t, t * 0.5, 1.0 - t]
                })
                .unwrap();
                (alloc::format!("img{i}"), img)
            })
            .collect()
    }

    #[test]
    fn output_dimensions() {
        let m = Model::new(tiny(), Variant::FULL, 0).unwrap();
        let lr = Image::filled(8, 6, [0.4; 3]).unwrap();
        let out = infer(&m, &lr, 1.5, 2.5, &Variant::FULL).unwrap();
        assert_eq!((out.height(), out.width()), (12, 15));
        assert!(infer(&m, &lr, 0.0, 1.0, &Variant::FULL).is_err());
    }

    #[test]
    fn ablation_bookkeeping() {
        let full = Model::new(tiny(), Variant::FULL, 0).unwrap();
        let noskip = Model::new(tiny(), Variant::NO_SKIP, 0).unwrap();
        let models = [(Variant::FULL, &full), (Variant::NO_SKIP, &noskip)];
        let protocol = EvalProtocol {
            lr_size: 12,
            ..EvalProtocol::default()
        };
        let data = corpus(5);
        let (reports, maps) = ablate(&models, &[Variant::FULL, Variant::NO_SKIP], &data, &[2.0], &protocol).unwrap();
        assert_eq!(reports.len(), 2);
        assert!(reports.iter().all(|r| r.rows.len() == 5));
        assert_eq!(maps.len(), 10);
        assert_eq!(reports[1].label, "-S");

        let err = ablate(
            &models,
            &[Variant::FULL, Variant::NO_TOKENS, Variant::NO_MODULATION],
            &data,
            &[2.0],
            &protocol,
        )
        .unwrap_err();
        assert_eq!(err, Error::MissingVariant(String::from("-L, -G")));
    }

    #[test]
    fn report_means() {
        let report = evaluate(
            &Method::Baseline(Baseline::Bicubic),
            &corpus(3),
            &[1.5, 2.0],
            &EvalProtocol {
                lr_size: 16,
                ..EvalProtocol::default()
            },
        )
        .unwrap();
        assert_eq!(report.scales(), [1.5, 2.0]);
        let (p, _) = report.mean_at(2.0).unwrap();
        let direct = report.rows[3..].iter().map(|r| r.psnr).sum::<f64>() / 3.0;
        assert!((p - direct).abs() < 1e-12);
    }
}
