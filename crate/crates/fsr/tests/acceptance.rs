//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. The training criteria take several minutes.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use fsr::checkpoint;
use fsr_core::decoder::{gather_neighbors, QueryBatch};
use fsr_core::eval::{self, Baseline, EvalProtocol, Method};
use fsr_core::image::{resample_bicubic, resample_bilinear};
use fsr_core::metrics::{psnr_y, ssim_y};
use fsr_core::synthetic::face_corpus;
use fsr_core::trainer::{LossRecord, Trainer};
use fsr_core::{gradcheck, Image, Model, ModelConfig, TrainConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).expect("valid image")
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let outcomes = gradcheck::run_suite(25, 2024).map_err(fail)?;
    let elapsed = start.elapsed();
    let worst = outcomes
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("non-empty suite");
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name).collect();
    ensure(
        failed.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} checks x 25 trials, worst {} at {:.2e}, failed {:?}, {:.1}s",
            outcomes.len(),
            worst.name,
            worst.max_rel_error,
            failed,
            elapsed.as_secs_f64()
        ),
    )
}

fn partition_of_unity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut border = 0;
    for i in 0..10_000 {
        let (h, w) = (rng.random_range(4..=64), rng.random_range(4..=64));
        // every fifth query is pushed into the outer half cell or onto the edge
        let q = if i % 5 == 0 {
            border += 1;
            let edge = |rng: &mut ChaCha8Rng, n: usize| {
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                s * (1.0 - rng.random_range(0.0..=1.0 / n as f64))
            };
            [edge(&mut rng, h), edge(&mut rng, w)]
        } else {
            [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
        };
        let batch = QueryBatch::new(vec![q], [0.5, 0.5]).map_err(fail)?;
        let nb = gather_neighbors(h, w, &batch).map_err(fail)?;
        let ws = nb.neighbors[0].map(|n| n.weight);
        if ws.iter().any(|&v| v < 0.0) {
            return Err(format!("negative weight {ws:?} at {q:?} on {h}x{w}"));
        }
        worst = worst.max((ws.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(
        worst <= 1e-12,
        format!("10000 queries ({border} near borders), max |sum - 1| = {worst:.1e}"),
    )
}

fn continuity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = Model::new(ModelConfig::desk(), Variant::FULL, 5).map_err(fail)?;
    let (h, w) = (16, 16);
    let lr = random_image(&mut rng, h, w);
    let mut coords = Vec::new();
    for i in 0..100 {
        let axis = rng.random_range(0..2);
        let n = if axis == 0 { h } else { w };
        // alternate between cell edges and cell centers, where the neighbour set changes
        let b = if i % 2 == 0 {
            (2 * rng.random_range(1..n)) as f64 / n as f64 - 1.0
        } else {
            (2 * rng.random_range(0..n) + 1) as f64 / n as f64 - 1.0
        };
        let other = rng.random_range(-0.99..0.99);
        for d in [-1e-6, 1e-6] {
            coords.push(if axis == 0 { [b + d, other] } else { [other, b + d] });
        }
    }
    let batch = QueryBatch::for_scale(coords, [2.0, 2.0]).map_err(fail)?;
    let rgb = model.predict(&lr, &batch, &Variant::FULL).map_err(fail)?;
    let jump = rgb
        .chunks_exact(2)
        .flat_map(|p| (0..3).map(move |c| (p[0][c] - p[1][c]).abs()))
        .fold(0.0f64, f64::max);
    ensure(
        jump < 1e-4,
        format!("100 crossings at +-1e-6, max channel jump {jump:.2e}"),
    )
}

fn skip_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut model = Model::new(ModelConfig::desk(), Variant::FULL, 6).map_err(fail)?;
    model.zero_output_layer();
    let mut worst = 0.0f64;
    let cases = [
        (12, 12, 2.0, 2.0),
        (16, 9, 3.7, 1.5),
        (7, 20, 1.0, 4.0),
        (10, 10, 0.5, 0.75),
    ];
    for (h, w, ry, rx) in cases {
        let lr = random_image(&mut rng, h, w);
        let (oh, ow, raw) = eval::infer_raw(&model, &lr, ry, rx, &Variant::FULL).map_err(fail)?;
        let bil = resample_bilinear(&lr, oh, ow).map_err(fail)?;
        worst = raw
            .iter()
            .zip(bil.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
    }
    ensure(
        worst < 1e-12,
        format!("{} cases, max |SR - bilinear| = {worst:.1e}", cases.len()),
    )
}

/// Corpus and settings shared by the training criteria.
struct Desk {
    train: Vec<Image>,
    test: Vec<(String, Image)>,
}

impl Desk {
    fn new() -> Self {
        let mut faces = face_corpus(120, 128, 42).expect("corpus");
        let test = faces
            .split_off(100)
            .into_iter()
            .enumerate()
            .map(|(i, f)| (format!("test{i:02}"), f))
            .collect();
        Desk { train: faces, test }
    }

    fn train_config() -> TrainConfig {
        TrainConfig {
            lr_size: 32,
            scale_min: 1.0,
            scale_max: 2.0,
            batch_size: 4,
            epochs: 80,
            learning_rate: 1e-3,
            decay_epoch: 1000,
            queries: 256,
            seed: 1,
            ..TrainConfig::default()
        }
    }

    fn train(&self, variant: Variant) -> fsr_core::Result<(Model, usize, Duration)> {
        let start = Instant::now();
        let mut t = Trainer::new(Self::train_config(), ModelConfig::desk(), variant)?;
        while t.epoch() < t.config().epochs {
            t.run_epoch(&self.train, &mut |_| {})?;
        }
        let its = t.iteration();
        Ok((t.into_model(), its, start.elapsed()))
    }

    fn mean_psnr(&self, method: &Method<'_>, scale: f64, lr_size: usize) -> fsr_core::Result<f64> {
        let protocol = EvalProtocol {
            lr_size,
            ..EvalProtocol::default()
        };
        let report = eval::evaluate(method, &self.test, &[scale], &protocol)?;
        Ok(report.mean_at(scale).expect("rows").0)
    }
}

fn shape_contract(model: &Model, desk: &Desk) -> Check {
    let mut n = 0;
    for lr_size in [16, 32, 48] {
        let lr = resample_bicubic(&desk.test[0].1, lr_size, lr_size).map_err(fail)?;
        for r in [1.5, 2.0, 3.7, 4.0, 8.0] {
            let (h, w, raw) = eval::infer_raw(model, &lr, r, r, &Variant::FULL).map_err(fail)?;
            let want = (r * lr_size as f64).round() as usize;
            if (h, w) != (want, want) || raw.len() != h * w * 3 {
                return Err(format!("LR {lr_size} x{r}: got {h}x{w}, want {want}x{want}"));
            }
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(format!("LR {lr_size} x{r}: non-finite output"));
            }
            n += 1;
        }
    }
    Ok(format!(
        "{n} (LR size, scale) combinations, all dims round(r*n) and finite"
    ))
}

fn training_efficacy(desk: &Desk, model: &Model, its: usize, took: Duration) -> Check {
    let ours = desk
        .mean_psnr(&Method::Model(model, Variant::FULL), 2.0, 32)
        .map_err(fail)?;
    let bic = desk
        .mean_psnr(&Method::Baseline(Baseline::Bicubic), 2.0, 32)
        .map_err(fail)?;
    ensure(
        ours - bic >= 0.3 && its >= 2000 && took < Duration::from_secs(3600),
        format!(
            "x2 {ours:.3} dB vs bicubic {bic:.3} dB (gain {:+.3}), {its} iterations in {:.0}s",
            ours - bic,
            took.as_secs_f64()
        ),
    )
}

fn ood_scale(desk: &Desk, model: &Model) -> Check {
    let ours = desk
        .mean_psnr(&Method::Model(model, Variant::FULL), 3.0, 32)
        .map_err(fail)?;
    let bic = desk
        .mean_psnr(&Method::Baseline(Baseline::Bicubic), 3.0, 32)
        .map_err(fail)?;
    ensure(ours >= bic, format!("x3 {ours:.3} dB vs bicubic {bic:.3} dB"))
}

fn input_resolution(desk: &Desk, model: &Model) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for lr_size in [16, 48] {
        let ours = desk
            .mean_psnr(&Method::Model(model, Variant::FULL), 2.0, lr_size)
            .map_err(fail)?;
        let nn = desk
            .mean_psnr(&Method::Baseline(Baseline::Nearest), 2.0, lr_size)
            .map_err(fail)?;
        ok &= ours.is_finite() && ours >= nn;
        parts.push(format!("LR {lr_size}: {ours:.3} vs nearest {nn:.3}"));
    }
    ensure(ok, parts.join("; "))
}

fn ablation_order(desk: &Desk, full: &Model) -> Check {
    let full_db = desk
        .mean_psnr(&Method::Model(full, Variant::FULL), 4.0, 32)
        .map_err(fail)?;
    let mut parts = vec![format!("full {full_db:.3}")];
    let mut ok = true;
    for v in [Variant::NO_TOKENS, Variant::NO_MODULATION, Variant::NO_SKIP] {
        let (m, _, _) = desk.train(v).map_err(fail)?;
        let db = desk.mean_psnr(&Method::Model(&m, v), 4.0, 32).map_err(fail)?;
        ok &= full_db >= db;
        parts.push(format!("{} {db:.3}", v.label()));
    }
    ensure(ok, format!("x4 dB: {}", parts.join(", ")))
}

/// Direct-summation PSNR on 8-bit luma.
fn psnr_oracle(a: &Image, b: &Image) -> f64 {
    let y = |p: [f64; 3]| 16.0 + 65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2];
    let mut se = 0.0;
    for r in 0..a.height() {
        for c in 0..a.width() {
            let d = y(a.get(r, c)) - y(b.get(r, c));
            se += d * d;
        }
    }
    let mse = se / (a.height() * a.width()) as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

/// Sliding-window SSIM with an explicit 2-D Gaussian and two-pass moments.
#[allow(clippy::needless_range_loop)]
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let y = |img: &Image, r: usize, c: usize| {
        let p = img.get(r, c);
        16.0 + 65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2]
    };
    let mut k = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for r0 in 0..=a.height() - 11 {
        for c0 in 0..=a.width() - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = k[i][j] / total;
                    mx += w * y(a, r0 + i, c0 + j);
                    my += w * y(b, r0 + i, c0 + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = k[i][j] / total;
                    let (dx, dy) = (y(a, r0 + i, c0 + j) - mx, y(b, r0 + i, c0 + j) - my);
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cxy += w * dx * dy;
                }
            }
            sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn metric_fidelity() -> Check {
    let gray = |y8: f64| {
        let v = (y8 - 16.0) / 219.0;
        Image::filled(16, 16, [v; 3]).expect("gray")
    };
    let psnr_one = psnr_y(&gray(100.0), &gray(101.0)).map_err(fail)?;
    let closed = 20.0 * 255f64.log10();
    let mut problems = Vec::new();
    if (psnr_one - closed).abs() > 1e-6 || format!("{psnr_one:.4}") != "48.1308" {
        problems.push(format!("unit error PSNR {psnr_one}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let face = random_image(&mut rng, 13, 17);
    let ident = ssim_y(&face, &face).map_err(fail)?;
    if (ident - 1.0).abs() > 1e-9 {
        problems.push(format!("identity SSIM {ident}"));
    }
    let flat = ssim_y(&gray(100.0), &gray(110.0)).map_err(fail)?;
    let c1 = 6.5025;
    let want = (2.0 * 100.0 * 110.0 + c1) / (100.0f64 * 100.0 + 110.0 * 110.0 + c1);
    // the exact ratio is 0.99547644..., so only the formula is compared at 1e-9
    if (flat - want).abs() > 1e-9 {
        problems.push(format!("constant-mean SSIM {flat} vs {want}"));
    }
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(11..=24), rng.random_range(11..=24));
        let a = random_image(&mut rng, h, w);
        let noise = rng.random_range(0.01..0.3);
        let b = Image::from_fn(h, w, |r, c| {
            a.get(r, c).map(|v| v + noise * (rng.random::<f64>() - 0.5))
        })
        .map_err(fail)?;
        dp = dp.max((psnr_y(&a, &b).map_err(fail)? - psnr_oracle(&a, &b)).abs());
        ds = ds.max((ssim_y(&a, &b).map_err(fail)? - ssim_oracle(&a, &b)).abs());
    }
    if dp > 1e-9 || ds > 1e-9 {
        problems.push(format!("oracle gaps PSNR {dp:.1e} SSIM {ds:.1e}"));
    }
    ensure(
        problems.is_empty(),
        format!(
            "PSNR {psnr_one:.6}, SSIM id {ident}, flat {flat:.7}; 20 random pairs within {dp:.1e} dB / {ds:.1e}; {}",
            if problems.is_empty() {
                "ok".to_string()
            } else {
                problems.join("; ")
            }
        ),
    )
}

fn determinism() -> Check {
    let corpus = face_corpus(8, 64, 7).map_err(fail)?;
    let cfg = TrainConfig {
        batch_size: 2,
        epochs: 25,
        queries: 64,
        learning_rate: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || -> fsr_core::Result<(Vec<LossRecord>, Trainer)> {
        let mut t = Trainer::new(cfg, ModelConfig::desk(), Variant::FULL)?;
        let mut log = Vec::new();
        while log.len() < 100 {
            t.run_epoch(&corpus, &mut |r| log.push(*r))?;
        }
        Ok((log, t))
    };
    let (a, trainer) = run().map_err(fail)?;
    let (b, _) = run().map_err(fail)?;
    let same_log = a.len() == b.len()
        && a.iter().zip(&b).all(|(x, y)| {
            x.iteration == y.iteration
                && x.loss.to_bits() == y.loss.to_bits()
                && x.scale_y.to_bits() == y.scale_y.to_bits()
                && x.scale_x.to_bits() == y.scale_x.to_bits()
        });

    let ckpt = trainer.checkpoint();
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("det.ckpt");
    checkpoint::save(&path, &ckpt).map_err(fail)?;
    let back = checkpoint::load(&path).map_err(fail)?;
    let bits = |c: &fsr_core::Checkpoint| -> Vec<u64> {
        c.params
            .iter()
            .map(|(_, t)| t)
            .chain(&c.adam.m)
            .chain(&c.adam.v)
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    let exact = back == ckpt && bits(&back) == bits(&ckpt);

    // one more epoch from the loaded state must match the live trainer
    let mut live = trainer;
    let mut resumed = Trainer::resume(&back).map_err(fail)?;
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    live.run_epoch(&corpus, &mut |r| la.push(r.loss.to_bits()))
        .map_err(fail)?;
    resumed
        .run_epoch(&corpus, &mut |r| lb.push(r.loss.to_bits()))
        .map_err(fail)?;
    let continues = la == lb;
    ensure(
        same_log && exact && continues,
        format!(
            "{} iterations bit-identical: {same_log}; checkpoint round-trip exact: {exact}; resumed epoch identical: {continues}",
            a.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn report(id: usize, name: &str, r: &Check) -> bool {
    let (tag, detail, ok) = match r {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} {id:>2} {name}: {detail}");
    ok
}

fn main() {
    let mut results: Vec<(usize, &str, Check)> = Vec::new();
    let mut record = |id, name, r: Check| {
        report(id, name, &r);
        results.push((id, name, r));
    };

    record(1, "gradient suite", guarded(gradient_suite));
    record(2, "partition of unity", guarded(partition_of_unity));
    record(3, "continuity", guarded(continuity));
    record(4, "skip identity", guarded(skip_identity));
    record(10, "metric fidelity", guarded(metric_fidelity));
    record(11, "determinism", guarded(determinism));

    let desk = Desk::new();
    let trained = panic::catch_unwind(AssertUnwindSafe(|| desk.train(Variant::FULL)))
        .map_err(|_| "panicked".to_string())
        .and_then(|r| r.map_err(fail));
    match trained {
        Ok((model, its, took)) => {
            record(5, "arbitrary-scale shapes", guarded(|| shape_contract(&model, &desk)));
            record(
                6,
                "training efficacy",
                guarded(|| training_efficacy(&desk, &model, its, took)),
            );
            record(7, "out-of-range scale", guarded(|| ood_scale(&desk, &model)));
            record(8, "input resolution", guarded(|| input_resolution(&desk, &model)));
            record(9, "ablation ordering", guarded(|| ablation_order(&desk, &model)));
        }
        Err(e) => {
            for (id, name) in [
                (5, "arbitrary-scale shapes"),
                (6, "training efficacy"),
                (7, "out-of-range scale"),
                (8, "input resolution"),
                (9, "ablation ordering"),
            ] {
                record(id, name, Err(format!("training failed: {e}")));
            }
        }
    }

    results.sort_by_key(|(id, _, _)| *id);
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, _, r)| r.is_err())
        .map(|(id, _, _)| *id)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
