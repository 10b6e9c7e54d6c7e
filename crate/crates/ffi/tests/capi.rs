use std::ffi::{c_char, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use horizonrec::checkpoint::{save_model, ModelMeta};
use horizonrec::data::{generate_synthetic, Role, SynthConfig};
use horizonrec::diffusion::make_schedule;
use horizonrec::eval::{evaluate, EvalOptions};
use horizonrec::model::{HorizonModel, RetrievalIndex, TableSizes};
use horizonrec::retrieval::lowpass_weight;
use horizonrec::train::{build_training_database, TrainConfig};
use horizonrec_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    data_dir: PathBuf,
    ckpt: PathBuf,
    db: PathBuf,
    expected: (f64, f64),
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let corpus = generate_synthetic(&SynthConfig {
        users: 24,
        items_per_domain: 30,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    corpus.write(&data_dir).unwrap();
    let data = corpus.to_dataset().unwrap();
    let cfg = TrainConfig {
        dim: 8,
        ..TrainConfig::default()
    };
    let model = HorizonModel::new(&cfg, TableSizes::of(&data)).unwrap();
    let db = build_training_database(&data, model.params.get(model.enc_m.item_table), cfg.c, cfg.n, cfg.window).unwrap();
    let db_path = dir.path().join("x.db");
    db.save(&db_path).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let meta = ModelMeta::new(None, Some(db_path.display().to_string()), vec![], 0, None);
    save_model(&model, &meta, &ckpt).unwrap();
    let index = RetrievalIndex::new(&db, &data);
    let opts = EvalOptions {
        ks: vec![10],
        mask_seen: false,
        seed: cfg.eval_seed,
    };
    let (report, _) = evaluate(&model, &data, Some(&index), Role::Test, &opts).unwrap();
    Fixture {
        data_dir,
        ckpt,
        db: db_path,
        expected: (report.hr[0], report.ndcg[0]),
        _dir: dir,
    }
}

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let needed = unsafe { hr_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(needed >= 1);
    unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { std::ffi::CStr::from_ptr(hr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_round_trip_through_handles() {
    let fx = fixture();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(hr_dataset_open(c(&fx.data_dir).as_ptr(), &mut ds), HrStatus::Ok);
        let mut users = 0;
        assert_eq!(hr_dataset_users(ds, &mut users), HrStatus::Ok);
        assert_eq!(users, 24);

        let mut model = ptr::null_mut();
        assert_eq!(hr_model_load(c(&fx.ckpt).as_ptr(), ptr::null(), &mut model), HrStatus::Ok);
        let (mut hr, mut ndcg) = (0.0, 0.0);
        assert_eq!(hr_model_evaluate(model, ds, HrSplit::Test, 10, &mut hr, &mut ndcg), HrStatus::Ok);
        assert_eq!((hr, ndcg), fx.expected);

        let mut items = [0usize; 5];
        let mut count = 0;
        let uid = CString::new("u0000").unwrap();
        let st = hr_model_recommend(model, ds, uid.as_ptr(), 5, items.as_mut_ptr(), &mut count);
        assert_eq!(st, HrStatus::Ok, "{}", last_error());
        assert_eq!(count, 5);
        assert!(items.iter().all(|&i| i >= 1));
        let mut buf = [0 as c_char; 64];
        let mut needed = 0;
        assert_eq!(hr_dataset_target_item(ds, items[0], buf.as_mut_ptr(), buf.len(), &mut needed), HrStatus::Ok);
        assert!(needed > 1);
        assert_eq!(hr_dataset_target_item(ds, items[0], buf.as_mut_ptr(), 1, &mut needed), HrStatus::BufferTooSmall);

        let nobody = CString::new("nobody").unwrap();
        assert_eq!(
            hr_model_recommend(model, ds, nobody.as_ptr(), 5, items.as_mut_ptr(), &mut count),
            HrStatus::NotFound
        );
        assert!(last_error().contains("nobody"));

        hr_model_free(model);
        hr_dataset_free(ds);
    }
}

#[test]
fn database_handles() {
    let fx = fixture();
    unsafe {
        let mut db = ptr::null_mut();
        assert_eq!(hr_db_open(c(&fx.db).as_ptr(), &mut db), HrStatus::Ok);
        let (mut rows, mut dim) = (0, 0);
        assert_eq!(hr_db_rows(db, &mut rows), HrStatus::Ok);
        assert_eq!(hr_db_dim(db, &mut dim), HrStatus::Ok);
        assert_eq!(dim, 8);
        assert!(rows > 3);
        let loaded = horizonrec::retrieval::RetrievalDatabase::load(&fx.db).unwrap();
        let q = loaded.raw.row(2).to_vec();
        let mut out = [usize::MAX; 3];
        let mut count = 0;
        assert_eq!(hr_db_topk(db, q.as_ptr(), q.len(), 3, out.as_mut_ptr(), &mut count), HrStatus::Ok);
        assert_eq!(count, 3);
        assert_eq!(out.to_vec(), horizonrec::retrieval::retrieve_topk(&q, &loaded, 3).unwrap());
        assert_eq!(hr_db_topk(db, q.as_ptr(), 2, 3, out.as_mut_ptr(), &mut count), HrStatus::InvalidArgument);
        hr_db_free(db);
    }
}

#[test]
fn error_reporting() {
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/m.ckpt").unwrap();
        assert_eq!(hr_model_load(missing.as_ptr(), ptr::null(), &mut model), HrStatus::NotFound);
        assert!(model.is_null());
        assert!(last_error().contains("checkpoint not found"));
        assert_eq!(hr_model_load(ptr::null(), ptr::null(), &mut model), HrStatus::NullPointer);
        let mut users = 0;
        assert_eq!(hr_dataset_users(ptr::null(), &mut users), HrStatus::NullPointer);
        // Truncated copy stays terminated and reports the full length.
        let full = last_error();
        let mut tiny = [1 as c_char; 4];
        let needed = hr_last_error_message(tiny.as_mut_ptr(), tiny.len());
        assert_eq!(needed, full.len() + 1);
        assert_eq!(tiny[3], 0);
        hr_dataset_free(ptr::null_mut());
        hr_model_free(ptr::null_mut());
        hr_db_free(ptr::null_mut());
    }
}

#[test]
fn numeric_helpers_match_the_library() {
    unsafe {
        let mut ab = [0.0; 32];
        assert_eq!(hr_schedule_alpha_bar(32, 1e-4, 0.02, ab.as_mut_ptr()), HrStatus::Ok);
        assert_eq!(ab.to_vec(), make_schedule(32, 1e-4, 0.02).unwrap().alpha_bar);
        assert_eq!(hr_schedule_alpha_bar(4, 0.5, 0.1, ab.as_mut_ptr()), HrStatus::InvalidArgument);
        let mut w = 0.0;
        assert_eq!(hr_lowpass_weight(3, 5, 1, 1.5, 2.0, &mut w), HrStatus::Ok);
        assert_eq!(w, lowpass_weight(3, 5, 1, 1.5, 2.0));
        assert_eq!(hr_lowpass_weight(6, 5, 1, 1.5, 2.0, &mut w), HrStatus::InvalidArgument);
    }
}

/// Compiles a small C program against the generated header and the static
/// library, when a C compiler is available.
#[test]
fn c_program_links_against_the_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("horizonrec.h").is_file());
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libhorizonrec_ffi.a");
    if !lib.is_file() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "horizonrec.h"
int main(void) {
    double ab[4];
    double w;
    HrModel *m = NULL;
    char msg[128];
    if (hr_schedule_alpha_bar(4, 0.1, 0.1, ab) != HR_STATUS_OK) return 1;
    if (ab[1] < 0.80 || ab[1] > 0.82) return 2;
    if (hr_lowpass_weight(1, 1, 1, 1.5, 2.0, &w) != HR_STATUS_OK || w != 1.0) return 3;
    if (hr_model_load("/nonexistent", NULL, &m) != HR_STATUS_NOT_FOUND || m != NULL) return 4;
    hr_last_error_message(msg, sizeof msg);
    if (strstr(msg, "checkpoint not found") == NULL) return 5;
    printf("%s\n", hr_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
