use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use diffem_core::io::save_image;
use diffem_core::sampler::particle_rng;
use diffem_core::score::StationaryGaussianPrior;
use diffem_core::synth::{DatasetManifest, MANIFEST_FILE};
use diffem_core::ImageTensor;

fn diffem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffem"))
        .args(args)
        .env_remove("DIFFEM_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two 24x24 textures degraded into `root/data`.
fn dataset(root: &Path) {
    let images = root.join("images");
    fs::create_dir_all(&images).unwrap();
    let prior = StationaryGaussianPrior::power_law(ImageTensor::filled(24, 24, 1, 0.5), 0.04, 1.0, 1.0).unwrap();
    for i in 0..2 {
        save_image(images.join(format!("img{i}.png")), &prior.sample(&mut particle_rng(i, 0))).unwrap();
    }
    let out = diffem(&["degrade", "--input", s(&images), "--out", s(&root.join("data")), "--ksize", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&diffem(&["--help"])), 0);
    assert_eq!(code(&diffem(&["deblur", "--help"])), 0);
    assert_eq!(code(&diffem(&["frobnicate"])), 1);
    assert_eq!(code(&diffem(&["deblur", "--sigma", "0.1"])), 1);
    assert_eq!(code(&diffem(&["deblur", "--y", "y.rtf", "--sigma", "abc", "--out", "o"])), 1);
    assert_eq!(code(&diffem(&["deblur", "--y", "y.rtf", "--sigma", "0.1", "--reg", "pnp", "--out", "o"])), 1);
    assert_eq!(code(&diffem(&["deblur", "--y", "y.rtf", "--sigma", "0.1", "--init", "box", "--out", "o"])), 1);
    assert_eq!(code(&diffem(&["deblur", "--y", "y.rtf", "--sigma", "0.1", "--ksize", "4", "--out", "o"])), 1);
    assert_eq!(code(&diffem(&["--threads", "0", "degrade", "--input", ".", "--out", "o"])), 1);
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.rtf");
    let out = diffem(&["deblur", "--y", s(&missing), "--sigma", "5/255", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.rtf"));
    let weights = dir.path().join("bad.dnw");
    fs::write(&weights, b"not a weight file").unwrap();
    let out = diffem(&[
        "estimate-kernel", "--y", s(&missing), "--sharp", s(&missing), "--sigma", "0",
        "--reg", "pnp", "--weights", s(&weights), "--out", s(&dir.path().join("k.rtf")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn degrade_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let manifest = DatasetManifest::read(dir.path().join("data").join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.records.len(), 2);
    for r in &manifest.records {
        assert!(r.is_ok());
        assert!((r.sigma - 5.0 / 255.0).abs() < 1e-15);
        manifest.load_item(r).unwrap();
    }
}

#[test]
fn deblur_writes_restorations_kernel_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let out_dir = dir.path().join("out");
    let y = dir.path().join("data/degraded_0000.rtf");
    let out = diffem(&[
        "deblur", "--y", s(&y), "--sigma", "5/255", "--T", "12", "--n", "2", "--ksize", "5",
        "--trace-stride", "4", "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["particle_000.rtf", "particle_001.png", "mean.rtf", "mean.png", "kernel.rtf", "trace.csv"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let kernel = diffem_core::io::load_kernel(out_dir.join("kernel.rtf")).unwrap();
    assert_eq!((kernel.height(), kernel.width()), (5, 5));
    assert!((kernel.sum() - 1.0).abs() < 1e-9);
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("step,data_fit,kernel_path"));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 3);
        assert!(fields[1].parse::<f64>().unwrap().is_finite());
        if !fields[2].is_empty() {
            assert!(out_dir.join(fields[2]).is_file());
        }
    }
}

#[test]
fn sample_honours_particle_count() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let data = dir.path().join("data");
    let out_dir = dir.path().join("s");
    let out = diffem(&[
        "sample", "--y", s(&data.join("degraded_0001.rtf")), "--kernel", s(&data.join("kernel_0001.rtf")),
        "--sigma", "5/255", "--guidance", "dps", "--dps-weight", "0.1", "--T", "10", "--n", "3", "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("particle_002.rtf").is_file());
    assert!(!out_dir.join("particle_003.rtf").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let y = dir.path().join("data/degraded_0000.rtf");
    let run = |threads: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_diffem"))
            .args(["deblur", "--y", s(&y), "--sigma", "5/255", "--T", "10", "--n", "3", "--ksize", "5", "--out", s(&out_dir)])
            .env("DIFFEM_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        fs::read(out_dir.join("kernel.rtf")).unwrap()
    };
    assert_eq!(run("1", "a"), run("3", "b"));
}

#[test]
fn empty_manifest_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    DatasetManifest::default().write(dir.path().join(MANIFEST_FILE)).unwrap();
    let out_dir = dir.path().join("report");
    let out = diffem(&["benchmark", "--manifest", s(dir.path()), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(out_dir.join("report.jsonl")).unwrap(), "");
}

#[test]
fn benchmark_reports_every_item() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let out_dir = dir.path().join("report");
    let out = diffem(&[
        "benchmark", "--manifest", s(&dir.path().join("data")), "--T", "10", "--ksize", "5", "--timing", "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = diffem_core::metrics::MetricsReport::read_jsonl(
        std::io::BufReader::new(fs::File::open(out_dir.join("report.jsonl")).unwrap()),
    )
    .unwrap();
    assert_eq!(report.items.len(), 2);
    assert!(report.items.iter().all(|m| m.error.is_none() && m.runtime_s.is_some()));
    assert!(fs::read_to_string(out_dir.join("report.txt")).unwrap().contains("degraded_0001"));
}

#[test]
fn sweep_reads_manifest_items() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = diffem(&[
        "sweep-reg", "--manifest", s(&dir.path().join("data")), "--sigmas", "0,0.05", "--regs", "l1,l2", "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",2")));
    assert_eq!(code(&diffem(&["sweep-reg", "--regs", "pnp", "--out", s(&out_dir)])), 1);
}

#[test]
fn train_then_estimate_with_pnp() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let weights = dir.path().join("net/w.dnw");
    let out = diffem(&["train-denoiser", "--out", s(&weights), "--steps", "3", "--kernels", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let data = dir.path().join("data");
    let kernel = dir.path().join("k.rtf");
    let out = diffem(&[
        "estimate-kernel", "--y", s(&data.join("degraded_0000.rtf")), "--sharp", s(&data.join("clean_0000.rtf")),
        "--sigma", "5/255", "--ksize", "5", "--reg", "pnp", "--weights", s(&weights), "--lambda", "0.01", "--out", s(&kernel),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let k = diffem_core::io::load_kernel(&kernel).unwrap();
    assert!(k.data().iter().all(|v| *v >= 0.0));
}
