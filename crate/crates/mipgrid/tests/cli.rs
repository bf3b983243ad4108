//! End-to-end CLI checks through the real binary: exit codes, artifact
//! layout, and the determinism contracts of train/gen-data.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mipgrid"))
}

fn write_tiny_config(path: &Path, data: &Path) {
    let text = format!(
        "data.path = {}\n\
         model.resolution = 12\n\
         model.rank_density = 2\n\
         model.rank_appearance = 2\n\
         model.channels = 4\n\
         model.hidden = 12\n\
         model.scales = 2\n\
         model.kernel_stdevs = 1.0,2.5\n\
         scale_coord.kind = disc\n\
         render.background = black\n\
         render.n_samples = 16\n\
         render.near = 1.5\n\
         render.far = 4.2\n\
         train.iterations = 25\n\
         train.batch_rays = 48\n\
         train.upsample_schedule =\n\
         train.kernel_start_iteration = 0\n\
         train.eval_every = 25\n\
         train.eval_views = 1\n\
         scene.width = 16\n\
         scene.height = 16\n\
         scene.n_train = 2\n\
         scene.n_test = 1\n",
        data.display()
    );
    fs::write(path, text).unwrap();
}

#[test]
fn full_cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("run.cfg");
    write_tiny_config(&cfg, &data);

    // gen-data produces one Blender tree per factor.
    let st = bin()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(st.success());
    for f in [1, 2, 4, 8] {
        assert!(data.join(format!("factor_{f}/transforms_train.json")).exists());
        assert!(data.join(format!("factor_{f}/test/r_0.png")).exists());
    }

    // train writes checkpoint + metrics.
    let run1 = dir.path().join("run1");
    let st = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run1)
        .status()
        .unwrap();
    assert!(st.success());
    let ckpt = run1.join("checkpoint.mgrd");
    assert!(ckpt.exists());
    let metrics1 = fs::read(run1.join("metrics.csv")).unwrap();
    assert!(String::from_utf8_lossy(&metrics1).starts_with("iteration,loss,train_psnr"));

    // Same config + seed twice: identical metrics CSV up to the wall-clock
    // column, which is the one legitimately non-reproducible field.
    let run2 = dir.path().join("run2");
    let st = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run2)
        .status()
        .unwrap();
    assert!(st.success());
    let metrics2 = fs::read(run2.join("metrics.csv")).unwrap();
    let strip_seconds = |raw: &[u8]| -> Vec<String> {
        String::from_utf8_lossy(raw)
            .lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect()
    };
    assert_eq!(strip_seconds(&metrics1), strip_seconds(&metrics2));

    // eval prints the table and writes a CSV.
    let eval_dir = dir.path().join("eval");
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PSNR"), "{stdout}");
    assert!(stdout.contains("n/a"), "{stdout}");
    assert!(eval_dir.join("eval.csv").exists());

    // render full-res and a fractional factor.
    for (factor, name) in [("1", "full.png"), ("8/3", "three_eighths.png")] {
        let png = dir.path().join(name);
        let st = bin()
            .args(["render", "--checkpoint"])
            .arg(&ckpt)
            .arg("--data")
            .arg(&data)
            .args(["--factor", factor, "--out"])
            .arg(&png)
            .status()
            .unwrap();
        assert!(st.success());
        assert!(png.exists());
    }

    // inspect-kernels emits the report tree.
    let kd = dir.path().join("kernels");
    let st = bin()
        .args(["inspect-kernels", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&kd)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(kd.join("report.txt").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown key.
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "train.iterationz = 5\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.iterationz"));

    // Missing dataset path names the key.
    let nod = dir.path().join("nodata.cfg");
    fs::write(&nod, "train.iterations = 1\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&nod)
        .arg("--out")
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.path"));

    // Invalid factor 0 rejected.
    let out = bin()
        .args(["render", "--checkpoint", "/nonexistent.mgrd"])
        .args(["--data", "/nonexistent", "--factor", "0", "--out", "/tmp/never.png"])
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    write_tiny_config(&cfg, &dir.path().join("unused"));
    for name in ["a", "b"] {
        let st = bin()
            .args(["gen-data", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(name))
            .status()
            .unwrap();
        assert!(st.success());
    }
    let pa = fs::read(dir.path().join("a/factor_1/train/r_0.png")).unwrap();
    let pb = fs::read(dir.path().join("b/factor_1/train/r_0.png")).unwrap();
    assert_eq!(pa, pb);
}
