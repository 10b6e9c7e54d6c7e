use std::path::Path;
use std::process::{Command, Output};

fn horizonrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_horizonrec"))
        .args(args)
        .env("HORIZONREC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = horizonrec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn manifest(primary: &Path) -> serde_json::Value {
    let mut p = primary.as_os_str().to_os_string();
    p.push(".manifest.json");
    serde_json::from_str(&std::fs::read_to_string(p).expect("manifest written")).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    ok(&["synth", "--users", "16", "--seed", "7", "--out", s(&d)]);
    assert!(d.join("source.seq").is_file());
    let m = manifest(&d);
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 7);
    let hash = m["dataset_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);

    // Refuses to clobber, and regenerating with the same seed is stable.
    let again = horizonrec(&["synth", "--users", "16", "--seed", "7", "--out", s(&d)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--overwrite"));
    ok(&["--overwrite", "synth", "--users", "16", "--seed", "7", "--out", s(&d)]);
    assert_eq!(manifest(&d)["dataset_hash"].as_str().unwrap(), hash);
}

#[test]
fn missing_seed_is_chosen_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let out = horizonrec(&["synth", "--users", "8", "--out", s(&d)]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("random seed"), "{err}");
    assert!(manifest(&d)["seed"].is_u64());
}

#[test]
fn usage_and_io_errors() {
    let out = horizonrec(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
    assert_eq!(horizonrec(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(horizonrec(&["evaluate", "--ckpt", "x", "--bogus"]).status.code(), Some(2));

    let out = horizonrec(&["evaluate", "--ckpt", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("checkpoint not found"), "{err}");
    assert_eq!(err.lines().filter(|l| l.starts_with("error:")).count(), 1, "{err}");
}

#[test]
fn preprocess_reads_raw_files() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("s.tsv");
    let tgt = dir.path().join("t.csv");
    let mut s_rows = String::from("user\titem\tts\n");
    let mut t_rows = String::from("user,item,ts\n");
    for u in 0..4 {
        for i in 0..4 {
            s_rows.push_str(&format!("u{u}\tb{}\t{}\n", (u + i) % 5, 10 * i));
            t_rows.push_str(&format!("u{u},m{}, {}\n", (u * i) % 6, 10 * i + 5));
        }
    }
    std::fs::write(&src, s_rows).unwrap();
    std::fs::write(&tgt, t_rows).unwrap();
    let out_dir = dir.path().join("data");
    let text = ok(&[
        "preprocess", "--source", s(&src), "--target", s(&tgt), "--header", "--out", s(&out_dir),
    ]);
    assert!(text.contains("4 users"), "{text}");
    assert!(out_dir.join("mixed.seq").is_file() || out_dir.join("target.seq").is_file());
    assert_eq!(manifest(&out_dir)["command"], "preprocess");
    // Without --header the header row is rejected as a bad timestamp.
    let bad = horizonrec(&["preprocess", "--source", s(&src), "--target", s(&tgt), "--out", s(&dir.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let data = p("data");
    ok(&["synth", "--users", "20", "--items", "25", "--seed", "3", "--out", s(&data)]);
    let config = p("cfg.toml");
    std::fs::write(
        &config,
        "dim = 8\nbatch_size = 32\nepochs = 2\npretrain_epochs = 2\nsteps = 4\nseed = 5\neval_every = 1\n",
    )
    .unwrap();
    for domain in ["source", "target", "mixed"] {
        let out = p(&format!("{domain}.ckpt"));
        ok(&["pretrain", "--data", s(&data), "--domain", domain, "--config", s(&config), "--out", s(&out)]);
        assert_eq!(manifest(&out)["seed"], 5);
    }
    let db = p("train.db");
    ok(&["build-db", "--data", s(&data), "--ckpt", s(&p("mixed.ckpt")), "--out", s(&db)]);
    let wrong = horizonrec(&["build-db", "--data", s(&data), "--ckpt", s(&p("source.ckpt")), "--out", s(&p("x.db"))]);
    assert_eq!(wrong.status.code(), Some(1));

    let model = p("model.ckpt");
    let (src, tgt, mix) = (p("source.ckpt"), p("target.ckpt"), p("mixed.ckpt"));
    let train_args = [
        "train", "--data", s(&data), "--db", s(&db), "--config", s(&config),
        "--source-ckpt", s(&src), "--target-ckpt", s(&tgt), "--mixed-ckpt", s(&mix), "--out", s(&model),
    ];
    let text = ok(&train_args);
    assert!(text.contains("2 epochs"), "{text}");
    let m = manifest(&model);
    assert_eq!(m["config"]["dim"], 8);
    assert_eq!(m["config"]["variant"], "full");
    assert_eq!(horizonrec(&train_args).status.code(), Some(1), "refuses to overwrite the checkpoint");

    // Data and database locations are recorded in the checkpoint.
    let kv = p("metrics.kv");
    let table = ok(&["evaluate", "--ckpt", s(&model), "--out", s(&kv)]);
    assert!(table.contains("NDCG"), "{table}");
    let kv_text = std::fs::read_to_string(&kv).unwrap();
    assert!(kv_text.contains("ndcg@10"), "{kv_text}");
    let again = p("metrics2.kv");
    ok(&["evaluate", "--ckpt", s(&model), "--data", s(&data), "--db", s(&db), "--out", s(&again)]);
    assert_eq!(std::fs::read_to_string(&again).unwrap(), kv_text, "evaluation is reproducible");
    ok(&["evaluate", "--ckpt", s(&model), "--split", "validation", "--k", "1,3", "--mask-seen"]);
    assert_eq!(horizonrec(&["evaluate", "--ckpt", s(&model), "--split", "train"]).status.code(), Some(1));

    let viz = p("viz");
    ok(&["export-viz", "--ckpt", s(&model), "--users", "5", "--seed", "1", "--out", s(&viz)]);
    for f in ["similarity.csv", "embeddings.csv", "target_items.csv"] {
        assert!(viz.join(f).is_file(), "{f}");
    }

    let abl = p("ablation");
    let text = ok(&[
        "ablate", "--data", s(&data), "--config", s(&config), "--variant", "base,no_DMs,full",
        "--seeds", "1,2", "--out", s(&abl),
    ]);
    assert!(text.contains("no_DMs"), "{text}");
    let detail = std::fs::read_to_string(abl.join("ablation.tsv")).unwrap();
    assert_eq!(detail.lines().count(), 1 + 3 * 2);
    let summary = std::fs::read_to_string(abl.join("summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);

    let bench = p("bench.json");
    ok(&[
        "bench", "--data", s(&data), "--config", s(&config), "--steps", "2,4", "--epochs", "1", "--passes", "2",
        "--out", s(&bench),
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&bench).unwrap()).unwrap();
    assert_eq!(report["steps"].as_array().unwrap().len(), 2);
    assert_eq!(
        horizonrec(&["bench", "--data", s(&data), "--steps", "", "--out", s(&p("b2.json"))]).status.code(),
        Some(1)
    );
}
