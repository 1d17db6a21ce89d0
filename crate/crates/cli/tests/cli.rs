use std::path::Path;
use std::process::{Command, Output};

fn pcac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcac")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pcac(args);
    assert!(out.status.success(), "pcac {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "hidden=4\nlatent=2\nbatch_size=1\niterations=4\nwarm_iterations=2\nlambdas=0.02,0.01\n";

#[test]
fn synth_train_encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["synth", "--out", s(&data), "--count", "2", "--points", "600", "--seed", "3"]);
    assert!(data.join("cloud_000.ply").exists() && data.join("cloud_001.ply").exists());

    let mask = d.join("mask.ckpt");
    ok(&["train-avrpm", "--in", s(&data), "--out", s(&mask), "--epochs", "3"]);
    std::fs::write(d.join("tiny.cfg"), TINY).unwrap();
    let model = d.join("model.ckpt");
    let log = d.join("log.csv");
    let out = ok(&[
        "train",
        "--in",
        s(&data),
        "--out",
        s(&model),
        "--config",
        s(&d.join("tiny.cfg")),
        "--avrpm",
        s(&mask),
        "--log",
        s(&log),
    ]);
    assert!(out.contains("lambda[1]"));
    let log = std::fs::read_to_string(log).unwrap();
    assert!(log.starts_with("iteration,L,D,R,L_adv,L_dec,attr_mse,d_acc,seconds"));
    assert_eq!(log.lines().count(), 1 + 4 + 2);

    let input = data.join("cloud_001.ply");
    let stream = |name: &str, threads: &str| {
        let p = d.join(name);
        ok(&[
            "--threads",
            threads,
            "encode",
            "--in",
            s(&input),
            "--out",
            s(&p),
            "--model",
            s(&model),
            "--lambda-index",
            "1",
        ]);
        std::fs::read(p).unwrap()
    };
    let a = stream("a.bin", "1");
    assert_eq!(a, stream("b.bin", "1"));
    assert_eq!(a, stream("c.bin", "3"));

    let rec = d.join("rec.ply");
    let out =
        ok(&["decode", "--in", s(&d.join("a.bin")), "--geometry", s(&input), "--model", s(&model), "--out", s(&rec)]);
    assert!(out.starts_with("decoded"));
    let orig = pcac::cloud::load_ply(&input).unwrap();
    let back = pcac::cloud::load_ply(&rec).unwrap();
    assert_eq!(orig.positions(), back.positions());

    let wrong = d.join("cloud_000.ply");
    let out =
        pcac(&["decode", "--in", s(&d.join("a.bin")), "--geometry", s(&wrong), "--model", s(&model), "--out", s(&rec)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablation_flags_and_eval_then_bd() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["synth", "--out", s(&data), "--count", "1", "--points", "500", "--shape", "plane", "--texture", "checker"]);
    std::fs::write(d.join("tiny.cfg"), TINY).unwrap();
    let model = d.join("model.ckpt");
    ok(&[
        "train",
        "--in",
        s(&data),
        "--out",
        s(&model),
        "--config",
        s(&d.join("tiny.cfg")),
        "--no-discriminator",
        "--no-avrpm",
        "--iterations",
        "2",
    ]);
    let rd = d.join("rd.csv");
    let csv = ok(&["eval", "--in", s(&data), "--out", s(&rd), "--model", s(&model), "--no-avrpm"]);
    assert!(csv.starts_with("lambda_index,bpip,psnr_y,psnr_u,psnr_v,psnr_yuv"));
    assert_eq!(csv.lines().count(), 3);

    // BD needs at least four points per curve.
    let mut four = String::from("lambda_index,bpip,psnr_y,psnr_u,psnr_v,psnr_yuv\n");
    for (i, (r, q)) in [(0.2, 25.0), (0.4, 28.0), (0.8, 31.0), (1.6, 33.5)].iter().enumerate() {
        four.push_str(&format!("{i},{r},{q},{q},{q},{q}\n"));
    }
    let curve = d.join("curve.csv");
    std::fs::write(&curve, four).unwrap();
    let report = d.join("bd.txt");
    let text = ok(&["bd", s(&curve), s(&curve), "--out", s(&report)]);
    assert_eq!(std::fs::read_to_string(report).unwrap(), text);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with(['Y', 'U', 'V'])).collect();
    assert_eq!(rows.len(), 4, "{text}");
    for row in rows {
        for v in row.split_whitespace().skip(1) {
            assert_eq!(v.parse::<f64>().unwrap().abs(), 0.0, "{row}");
        }
    }
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{out}");
}

#[test]
fn exit_codes() {
    assert_eq!(pcac(&["--help"]).status.code(), Some(0));
    assert_eq!(pcac(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pcac(&["encode", "--in", "x.ply"]).status.code(), Some(2));
    assert_eq!(pcac(&["synth", "--out", "/tmp/x", "--shape", "torus"]).status.code(), Some(2));
    let missing = pcac(&["encode", "--in", "/nonexistent.ply", "--out", "/tmp/o.bin", "--model", "/nonexistent.ckpt"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}
