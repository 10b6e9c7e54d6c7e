//! Timing harness: per-epoch training and inference time at several
//! diffusion step counts, and retrieval time at several database sizes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::model::{HorizonModel, RetrievalIndex, TableSizes};
use crate::retrieval::{retrieve_topk, RetrievalDatabase};
use crate::tensor::Mat;
use crate::train::{build_training_database, train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub train: TrainConfig,
    /// Diffusion step counts to time (e.g. `[16, 32]`).
    pub steps: Vec<usize>,
    /// Database replication factors to time (e.g. `[1, 2]`).
    pub db_scales: Vec<usize>,
    /// Training epochs per timing.
    pub epochs: usize,
    /// Passes over all user queries per retrieval timing.
    pub retrieval_passes: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            train: TrainConfig {
                dim: 32,
                batch_size: 64,
                ..TrainConfig::default()
            },
            steps: vec![16, 32],
            db_scales: vec![1, 2],
            epochs: 2,
            retrieval_passes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub steps: usize,
    pub epoch_seconds: f64,
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTiming {
    pub rows: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub steps: Vec<StepTiming>,
    pub retrieval: Vec<RetrievalTiming>,
    /// Last over first entry of each series.
    pub epoch_ratio: f64,
    pub inference_ratio: f64,
    pub retrieval_ratio: f64,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:>6}  {:>12}  {:>14}", "T", "epoch (s)", "inference (s)")?;
        for s in &self.steps {
            writeln!(f, "{:>6}  {:>12.4}  {:>14.4}", s.steps, s.epoch_seconds, s.inference_seconds)?;
        }
        writeln!(f, "{:>8}  {:>12}", "db rows", "retrieval (s)")?;
        for r in &self.retrieval {
            writeln!(f, "{:>8}  {:>12.4}", r.rows, r.seconds)?;
        }
        write!(
            f,
            "ratios: epoch {:.3}  inference {:.3}  retrieval {:.3}",
            self.epoch_ratio, self.inference_ratio, self.retrieval_ratio
        )
    }
}

/// Database with every row repeated `times` times.
pub fn replicate_database(db: &RetrievalDatabase, times: usize) -> RetrievalDatabase {
    let times = times.max(1);
    let mut raw = Vec::with_capacity(db.raw.data.len() * times);
    let mut normed = Vec::with_capacity(raw.capacity());
    let mut provenance = Vec::with_capacity(db.rows() * times);
    for _ in 0..times {
        raw.extend_from_slice(&db.raw.data);
        normed.extend_from_slice(&db.normed.data);
        provenance.extend(db.provenance.iter().cloned());
    }
    RetrievalDatabase {
        raw: Mat::from_vec(db.rows() * times, db.dim(), raw),
        normed: Mat::from_vec(db.rows() * times, db.dim(), normed),
        provenance,
        ..db.clone()
    }
}

pub fn run_benchmark_suite(data: &Dataset, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.steps.is_empty() || cfg.db_scales.is_empty() || cfg.epochs == 0 || cfg.retrieval_passes == 0 {
        return Err(Error::invalid(
            "benchmark needs at least one step count, one database scale, epochs >= 1 and passes >= 1",
        ));
    }
    let base = TrainConfig {
        epochs: cfg.epochs,
        eval_every: 0,
        ..cfg.train.clone()
    };
    let sizes = TableSizes::of(data);
    let probe = HorizonModel::new(&base, sizes)?;
    let db = build_training_database(data, probe.params.get(probe.enc_m.item_table), base.c, base.n, base.window)?;

    let mut steps = Vec::with_capacity(cfg.steps.len());
    for &t in &cfg.steps {
        let c = TrainConfig { steps: t, ..base.clone() };
        let model = HorizonModel::new(&c, sizes)?;
        let started = Instant::now();
        let outcome = train(data, model, Some(&db))?;
        let epoch_seconds = started.elapsed().as_secs_f64() / cfg.epochs as f64;
        let index = RetrievalIndex::new(&db, data);
        let started = Instant::now();
        evaluate(&outcome.model, data, Some(&index), Role::Test, &EvalOptions::default())?;
        let inference_seconds = started.elapsed().as_secs_f64();
        log::info!("T={t}: {epoch_seconds:.4}s/epoch, inference {inference_seconds:.4}s");
        steps.push(StepTiming {
            steps: t,
            epoch_seconds,
            inference_seconds,
        });
    }

    let queries: Vec<Vec<f64>> = data
        .users
        .iter()
        .map(|u| {
            let mut g = crate::autograd::Graph::new(&probe.params);
            let ctx = u.training_view();
            let [_, ht, _] = probe.encode_context(&mut g, &ctx, None)?;
            Ok(g.value(ht).data.clone())
        })
        .collect::<Result<_>>()?;
    let mut retrieval = Vec::with_capacity(cfg.db_scales.len());
    for &s in &cfg.db_scales {
        let big = replicate_database(&db, s);
        let started = Instant::now();
        let mut sink = 0usize;
        for _ in 0..cfg.retrieval_passes {
            for q in &queries {
                sink = sink.wrapping_add(retrieve_topk(q, &big, base.k)?[0]);
            }
        }
        std::hint::black_box(sink);
        let seconds = started.elapsed().as_secs_f64();
        log::info!("{} rows: retrieval {seconds:.4}s", big.rows());
        retrieval.push(RetrievalTiming {
            rows: big.rows(),
            seconds,
        });
    }
    let ratio = |a: f64, b: f64| if a > 0.0 { b / a } else { f64::NAN };
    Ok(BenchReport {
        epoch_ratio: ratio(steps[0].epoch_seconds, steps[steps.len() - 1].epoch_seconds),
        inference_ratio: ratio(steps[0].inference_seconds, steps[steps.len() - 1].inference_seconds),
        retrieval_ratio: ratio(retrieval[0].seconds, retrieval[retrieval.len() - 1].seconds),
        steps,
        retrieval,
    })
}
