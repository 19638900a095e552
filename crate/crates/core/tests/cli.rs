use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_filterprune"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let o = bin().args(args).output().unwrap();
    (
        o.status.code().unwrap(),
        String::from_utf8(o.stdout).unwrap(),
        String::from_utf8(o.stderr).unwrap(),
    )
}

#[test]
fn usage_and_exit_codes() {
    let (code, _, err) = run(&["train", "--nope"]);
    assert_eq!(code, 1);
    assert!(err.contains("usage: filterprune"));
    assert_eq!(run(&["train"]).0, 1);
    assert_eq!(run(&["bench", "--checkpoint", "/missing.json"]).0, 2);
}

#[test]
fn flops_resnet56_forty_percent_mask() {
    let dir = tempfile::tempdir().unwrap();
    let arch = r#"{"arch":"resnet","n":9,"widths":[16,32,64],"classes":10}"#;
    // a 40% mask built with keep = floor(0.6 N) per layer
    let mut layers = serde_json::Map::new();
    for (s, w) in [(1, 16), (2, 32), (3, 64)] {
        let prune = w - (w * 6) / 10;
        for b in 0..9 {
            for c in [1, 2] {
                layers.insert(format!("s{s}.b{b}.conv{c}"), (0..prune).collect::<Vec<_>>().into());
            }
        }
    }
    let mask = dir.path().join("mask.json");
    std::fs::write(&mask, serde_json::json!({"epoch": 0, "layers": layers}).to_string()).unwrap();
    let (code, out, err) = run(&["flops", "--arch", arch, "--mask", mask.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let line = out.lines().find(|l| l.starts_with("pruned ratio")).unwrap();
    let pct: f64 = line.trim_start_matches("pruned ratio ").trim_end_matches('%').parse().unwrap();
    assert!((pct - 52.6).abs() <= 1.5, "{line}");

    let (code, out, _) = run(&["flops", "--arch", arch, "--rate", "0.4", "--rounding", "keep-floor", "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["pruned_ratio"].as_f64().unwrap() - 0.5375).abs() < 1e-3);
}

#[test]
fn train_extract_bench_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"arch":{"arch":"resnet","n":1,"widths":[4,8,8],"classes":4,"input":[3,8,8]},
            "dataset":{"synthetic":{"classes":4,"n":12,"dim":8,"seed":2}},
            "epochs":3,"batch_size":16,"seed":9,
            "prune":{"mode":"asymptotic-soft","P_goal":0.5,"D":0.5,"epoch_max":3}}"#,
    )
    .unwrap();
    let out = d.join("run");
    let (code, stdout, err) = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("final compact accuracy"));
    for f in ["metrics.csv", "mask.json", "model.json", "model.bin", "compact.json", "compact.bin"] {
        assert!(Path::new(&out.join(f)).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let extracted = d.join("x.json");
    let (code, _, err) = run(&[
        "extract",
        "--checkpoint",
        out.join("model.json").to_str().unwrap(),
        "--mask",
        out.join("mask.json").to_str().unwrap(),
        "--out",
        extracted.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        std::fs::read(extracted.with_extension("bin")).unwrap(),
        std::fs::read(out.join("compact.bin")).unwrap()
    );

    let (code, stdout, err) = run(&["bench", "--checkpoint", extracted.to_str().unwrap(), "--batch", "2", "--reps", "3"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("realistic speedup") && stdout.contains("theoretical speedup"));
    assert_eq!(run(&["bench", "--checkpoint", extracted.to_str().unwrap(), "--reps", "2"]).0, 1);
}
