use std::path::Path;
use std::process::Command;

use fsr::{checkpoint, imageio};
use fsr_core::trainer::Trainer;
use fsr_core::{Image, ModelConfig, TrainConfig, Variant};

fn fsr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fsr"))
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        features: 4,
        res_blocks: 1,
        lfe_hidden: 4,
        latent: 2,
        tokens: 2,
        mlp_blocks: 2,
        hidden: 8,
        pe_freqs: 2,
    }
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn fsr");
    assert!(
        out.status.success(),
        "{:?} failed\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, count: usize) {
    run_ok(
        fsr()
            .args([
                "synth",
                "--count",
                &count.to_string(),
                "--size",
                "40",
                "--seed",
                "3",
                "--out",
            ])
            .arg(dir),
    );
}

#[test]
fn train_resume_infer_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("faces");
    synth(&data, 4);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "lr_size = 8\nbatch_size = 2\nepochs = 2\nqueries = 16\nlearning_rate = 1e-3\nmodel.features = 4\nmodel.res_blocks = 1\nmodel.lfe_hidden = 4\nmodel.latent = 2\nmodel.tokens = 2\nmodel.mlp_blocks = 2\nmodel.hidden = 8\nmodel.pe_freqs = 2\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    let text = run_ok(
        fsr()
            .arg("train")
            .arg("--config")
            .arg(&cfg)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out),
    );
    assert!(text.contains("epoch 2"), "{text}");
    let log = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("iteration,epoch,scale_y,scale_x,loss"));
    assert_eq!(log.lines().count(), 1 + 4);

    let ckpt_path = out.join("checkpoint.ckpt");
    let ckpt = checkpoint::load(&ckpt_path).unwrap();
    assert_eq!((ckpt.epoch, ckpt.iteration), (2, 4));

    // extend the run by one epoch through --resume
    let mut longer = ckpt.clone();
    longer.train.epochs = 3;
    let resume_from = tmp.path().join("longer.ckpt");
    checkpoint::save(&resume_from, &longer).unwrap();
    run_ok(
        fsr()
            .arg("train")
            .arg("--resume")
            .arg(&resume_from)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out),
    );
    let log = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
    assert_eq!(checkpoint::load(&ckpt_path).unwrap().iteration, 6);

    let lr = tmp.path().join("lr.ppm");
    imageio::write_image(
        &lr,
        &Image::from_fn(9, 7, |y, x| [y as f64 / 9.0, x as f64 / 7.0, 0.5]).unwrap(),
    )
    .unwrap();
    let sr = tmp.path().join("sr.png");
    run_ok(
        fsr()
            .arg("infer")
            .arg("--ckpt")
            .arg(&ckpt_path)
            .arg("--in")
            .arg(&lr)
            .args(["--scale", "2.5", "--scale-x", "3"])
            .arg("--out")
            .arg(&sr),
    );
    let img = imageio::read_image(&sr).unwrap();
    assert_eq!((img.height(), img.width()), (23, 21));

    let report = tmp.path().join("eval.csv");
    run_ok(
        fsr()
            .arg("eval")
            .arg("--ckpt")
            .arg(&ckpt_path)
            .arg("--data")
            .arg(&data)
            .args(["--scales", "2,3", "--lr-size", "12"])
            .arg("--report")
            .arg(&report),
    );
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().next(), Some("image,scale,psnr_db,ssim"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("mean,")).count(), 2);
    assert_eq!(csv.lines().count(), 1 + 8 + 2);
}

#[test]
fn eval_baseline_to_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 2);
    let text = run_ok(
        fsr()
            .args([
                "eval",
                "--baseline",
                "nearest",
                "--scales",
                "2",
                "--lr-size",
                "16",
                "--data",
            ])
            .arg(tmp.path()),
    );
    assert!(text.starts_with("image,scale,psnr_db,ssim\nface0000.png,2,"), "{text}");
}

#[test]
fn ablate_writes_variant_table_and_diffmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("faces");
    synth(&data, 2);
    let mut specs = Vec::new();
    for v in [Variant::FULL, Variant::NO_TOKENS] {
        let ckpt = Trainer::new(TrainConfig::default(), tiny_model(), v)
            .unwrap()
            .checkpoint();
        let p = tmp.path().join(format!("{}.ckpt", v.label()));
        checkpoint::save(&p, &ckpt).unwrap();
        specs.push(format!("{}={}", v.label(), p.display()));
    }
    let report = tmp.path().join("ablate.csv");
    let maps = tmp.path().join("maps");
    run_ok(
        fsr()
            .arg("ablate")
            .arg(format!("--ckpts={}", specs.join(",")))
            .arg("--data")
            .arg(&data)
            .args(["--scales", "2", "--lr-size", "16"])
            .arg("--report")
            .arg(&report)
            .arg("--diffmaps")
            .arg(&maps),
    );
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(
        csv.starts_with("variant,image,scale,psnr_db,ssim\nfull,face0000.png,2,"),
        "{csv}"
    );
    assert!(csv.lines().any(|l| l.starts_with("-L,mean,2,")));
    let map = imageio::read_image(maps.join("-L_face0001_x2.png")).unwrap();
    assert_eq!((map.height(), map.width()), (32, 32));
}

#[test]
fn failures_exit_nonzero_with_messages() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.ppm");
    std::fs::write(&bad, b"P6\n4 4\n255\n\x00\x01").unwrap();
    let missing = tmp.path().join("none.ckpt");
    let out = fsr()
        .arg("infer")
        .arg("--ckpt")
        .arg(&missing)
        .arg("--in")
        .arg(&bad)
        .args(["--scale", "2", "--out"])
        .arg(tmp.path().join("o.png"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.ckpt"));

    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs = 1\nwarp = 9\n").unwrap();
    let out = fsr()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(tmp.path())
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("line 2"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
