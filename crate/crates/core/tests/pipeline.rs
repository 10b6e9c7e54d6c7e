use horizonrec::checkpoint::{load_model, save_model, ModelMeta};
use horizonrec::data::{generate_synthetic, Dataset, Role, SynthConfig};
use horizonrec::eval::{evaluate, EvalOptions};
use horizonrec::model::{RetrievalIndex, Variant};
use horizonrec::train::{apply_ablation, run_pipeline, TrainConfig};

fn small_data(seed: u64) -> Dataset {
    generate_synthetic(&SynthConfig {
        users: 24,
        items_per_domain: 30,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .to_dataset()
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        batch_size: 16,
        epochs: 3,
        pretrain_epochs: 2,
        steps: 4,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_keeps_metrics() {
    let data = small_data(1);
    let out = run_pipeline(&data, &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let meta = ModelMeta::new(None, None, out.outcome.history.clone(), out.outcome.best_epoch, out.outcome.best_val_ndcg10);
    save_model(&out.outcome.model, &meta, &path).unwrap();
    let (loaded, back) = load_model(&path).unwrap();
    assert_eq!(back.history, out.outcome.history);
    assert_eq!(back.config, out.outcome.model.config);
    assert_eq!(loaded.params, out.outcome.model.params);

    let index = RetrievalIndex::new(&out.db, &data);
    let opts = EvalOptions::default();
    for split in [Role::Validation, Role::Test] {
        let a = evaluate(&out.outcome.model, &data, Some(&index), split, &opts).unwrap();
        let b = evaluate(&loaded, &data, Some(&index), split, &opts).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    // A checkpoint for different data is rejected at evaluation time.
    let other = generate_synthetic(&SynthConfig {
        users: 10,
        items_per_domain: 12,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap()
    .to_dataset()
    .unwrap();
    assert!(evaluate(&loaded, &other, None, Role::Test, &opts).is_err());
}

#[test]
fn identical_inputs_give_identical_runs() {
    let data = small_data(4);
    let cfg = small_config();
    let a = run_pipeline(&data, &cfg).unwrap();
    let b = run_pipeline(&data, &cfg).unwrap();
    let curve = |o: &horizonrec::train::PipelineOutput| -> Vec<(u64, u64, u64)> {
        o.outcome
            .history
            .iter()
            .map(|r| (r.l_rec.to_bits(), r.l_diff.to_bits(), r.l_total.to_bits()))
            .collect()
    };
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(a.outcome.model.params, b.outcome.model.params);

    let c = run_pipeline(&data, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(curve(&a), curve(&c));
}

#[test]
fn total_loss_decomposes_and_static_variants_have_no_diffusion_loss() {
    let data = small_data(5);
    let out = run_pipeline(&data, &small_config()).unwrap();
    for r in &out.outcome.history {
        assert!((r.l_total - (r.l_rec + 0.5 * r.l_diff)).abs() <= 1e-9 * r.l_total.abs().max(1.0));
    }
    for v in [Variant::NoDms, Variant::NoDpdMdr, Variant::Base] {
        let cfg = apply_ablation(&small_config(), v);
        let o = run_pipeline(&data, &cfg).unwrap();
        assert!(o.outcome.history.iter().all(|r| r.l_diff == 0.0 && r.l_total == r.l_rec), "{v}");
    }
}

#[test]
fn lambda_zero_leaves_the_denoiser_to_the_fusion_path() {
    let data = small_data(6);
    let cfg = TrainConfig {
        lambda: 0.0,
        ..small_config()
    };
    let out = run_pipeline(&data, &cfg).unwrap();
    for r in &out.outcome.history {
        assert_eq!(r.l_total, r.l_rec);
        assert!(r.l_diff > 0.0, "the diffusion loss is still reported");
    }
}
