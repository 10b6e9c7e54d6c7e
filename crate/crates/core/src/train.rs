//! Training configuration, the optimisation loop and the end-to-end
//! pipeline helper (pretrain three encoders → build database → train).

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{Dataset, Role};
use crate::encoder::{pretrain_domain, shuffle_in_place, EncoderKind, PretrainConfig, Pretrained, GRAD_CHUNK};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::model::{HorizonModel, RetrievalIndex, TableSizes, Variant};
use crate::params::{Adam, Grads};
use crate::retrieval::{build_database, RetrievalDatabase, DEFAULT_C, DEFAULT_K, DEFAULT_N, DEFAULT_WINDOW};
use crate::seeds::rng_for;

/// Every knob of a training run. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the base representation in the final fusion, in `[0, 1]`.
    pub w: f64,
    /// Weight of the diffusion loss.
    pub lambda: f64,
    /// Retrieved segments per query.
    pub k: usize,
    /// Diffusion steps `T`.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub batch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Validate every this many epochs (0 disables validation).
    pub eval_every: usize,
    /// Stop after this many validations without improvement (0 disables).
    pub patience: usize,
    pub freeze_encoders: bool,
    /// Seed of the noise draws made during evaluation.
    pub eval_seed: u64,
    /// Low-pass filter level, decay and window of the retrieval database.
    pub c: f64,
    pub n: f64,
    pub window: usize,
    /// Next-item pretraining of the three encoders (pipeline only).
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            w: 0.5,
            lambda: 0.5,
            k: DEFAULT_K,
            steps: crate::diffusion::DEFAULT_STEPS,
            beta_start: crate::diffusion::DEFAULT_BETA_START,
            beta_end: crate::diffusion::DEFAULT_BETA_END,
            batch_size: 512,
            dim: 64,
            layers: 1,
            dropout: 0.2,
            max_len: crate::data::DEFAULT_MAX_LEN,
            lr: 1e-3,
            epochs: 200,
            seed: 0,
            variant: Variant::Full,
            eval_every: 1,
            patience: 20,
            freeze_encoders: false,
            eval_seed: 0x5eed,
            c: DEFAULT_C,
            n: DEFAULT_N,
            window: DEFAULT_WINDOW,
            pretrain_epochs: 200,
            pretrain_lr: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::invalid(format!("w={} outside [0, 1]", self.w)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda={} must be >= 0", self.lambda)));
        }
        if self.batch_size == 0 || self.dim == 0 || self.steps == 0 || self.epochs == 0 || self.k == 0 {
            return Err(Error::invalid("batch_size, dim, steps, epochs and k must be positive"));
        }
        if self.layers == 0 || self.max_len == 0 {
            return Err(Error::invalid("layers and max_len must be positive"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr must be a finite non-negative number"));
        }
        Ok(())
    }

    /// Parses a flat TOML document whose keys are field names.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            dim: self.dim,
            layers: self.layers,
            dropout: self.dropout,
            max_len: self.max_len,
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

/// Returns `cfg` rewired for `variant`.
pub fn apply_ablation(cfg: &TrainConfig, variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        ..cfg.clone()
    }
}

/// Per-epoch losses (means over the epoch's training examples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_diff: f64,
    /// `l_rec + lambda * l_diff`.
    pub l_total: f64,
    pub seconds: f64,
    /// Validation NDCG@10 when validation ran this epoch.
    pub val_ndcg10: Option<f64>,
}

/// `−log softmax(h · Eᵀ)[truth]` over the rows `1..` of `table`.
pub fn rec_loss(h: &[f64], truth: usize, table: &crate::tensor::Mat) -> Result<f64> {
    if truth == 0 || truth >= table.rows {
        return Err(Error::OutOfVocabulary(format!("target item index {truth}")));
    }
    let scores = crate::encoder::score_items(h, table)?;
    let best = (1..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).expect("non-empty");
    let max = scores[best];
    let rest: f64 = (1..scores.len()).filter(|&j| j != best).map(|j| (scores[j] - max).exp()).sum();
    Ok((max - scores[truth]) + rest.ln_1p())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HorizonModel,
    pub history: Vec<LossReport>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_ndcg10: Option<f64>,
}

/// All `(user, target event)` pairs usable as training labels.
pub fn training_examples(data: &Dataset) -> Vec<(usize, usize)> {
    data.users
        .iter()
        .enumerate()
        .flat_map(|(u, h)| h.train_labels().map(move |j| (u, j)))
        .collect()
}

/// Optimises `model` on every training label of `data`.
///
/// Validation (NDCG@10 on the penultimate target items) runs every
/// `eval_every` epochs; the best parameters are kept and training stops
/// after `patience` validations without improvement.
pub fn train(data: &Dataset, mut model: HorizonModel, db: Option<&RetrievalDatabase>) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    cfg.validate()?;
    if cfg.variant.uses_retrieval() && db.is_none() {
        return Err(Error::invalid(format!("variant {} needs a retrieval database", cfg.variant)));
    }
    if let Some(db) = db {
        if db.dim() != cfg.dim {
            return Err(Error::Shape(format!("database width {} vs model width {}", db.dim(), cfg.dim)));
        }
    }
    let index = db.map(|db| RetrievalIndex::new(db, data));
    let examples = training_examples(data);
    if examples.is_empty() {
        return Err(Error::Empty("training examples (no user has two training target items)".into()));
    }
    let validate = cfg.eval_every > 0 && data.users.iter().any(|u| u.label_index(Role::Validation).is_some());
    let eval_opts = EvalOptions {
        ks: vec![10],
        mask_seen: false,
        seed: cfg.eval_seed,
    };

    let mut adam = Adam::new(model.params.len(), cfg.lr);
    if cfg.freeze_encoders {
        for id in model.encoder_param_ids() {
            adam.freeze(id);
        }
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, crate::params::ParamSet)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut shuffle = rng_for(cfg.seed, &[0x5f1e, epoch as u64]);
        shuffle_in_place(&mut order, &mut shuffle);
        let (mut rec_sum, mut diff_sum) = (0.0, 0.0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref = &model;
            let index_ref = index.as_ref();
            let parts: Vec<Result<(Grads, f64, f64)>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grads = Grads::new(model_ref.params.len());
                    let (mut rec, mut diff) = (0.0, 0.0);
                    for &e in chunk {
                        let (user, j) = examples[e];
                        let mut rng = rng_for(cfg.seed, &[0xe8a, epoch as u64, e as u64]);
                        let mut g = Graph::new(&model_ref.params);
                        let loss = model_ref.example_loss(&mut g, data, user, j, index_ref, &mut rng, true)?;
                        rec += g.scalar(loss.rec);
                        diff += loss.diff.map_or(0.0, |d| g.scalar(d));
                        grads.merge(g.backward(loss.total));
                    }
                    Ok((grads, rec, diff))
                })
                .collect();
            let mut grads = Grads::new(model.params.len());
            let (mut rec, mut diff) = (0.0, 0.0);
            for part in parts {
                let (g, r, d) = part?;
                grads.merge(g);
                rec += r;
                diff += d;
            }
            if !rec.is_finite() || !diff.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {} batch {b} (rec {rec}, diff {diff})",
                    epoch + 1
                )));
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &grads);
            rec_sum += rec;
            diff_sum += diff;
        }
        let n = examples.len() as f64;
        let (l_rec, l_diff) = (rec_sum / n, diff_sum / n);
        let mut report = LossReport {
            epoch: epoch + 1,
            l_rec,
            l_diff,
            l_total: l_rec + cfg.lambda * l_diff,
            seconds: 0.0,
            val_ndcg10: None,
        };
        let mut stop = false;
        if validate && (epoch + 1) % cfg.eval_every == 0 {
            let (metrics, _) = evaluate(&model, data, index.as_ref(), Role::Validation, &eval_opts)?;
            let ndcg = metrics.ndcg_at(10).expect("k=10 requested");
            report.val_ndcg10 = Some(ndcg);
            if best.as_ref().is_none_or(|(b, _, _)| ndcg > *b) {
                best = Some((ndcg, epoch + 1, model.params.clone()));
                stale = 0;
            } else {
                stale += 1;
                stop = cfg.patience > 0 && stale >= cfg.patience;
            }
        }
        report.seconds = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {} rec {:.5} diff {:.5} total {:.5}{} ({:.2}s)",
            report.epoch,
            report.l_rec,
            report.l_diff,
            report.l_total,
            report.val_ndcg10.map(|v| format!(" val_ndcg@10 {v:.4}")).unwrap_or_default(),
            report.seconds
        );
        history.push(report);
        if stop {
            log::info!("early stop after {} validations without improvement", cfg.patience);
            break;
        }
    }
    let (best_epoch, best_val) = match best {
        Some((v, e, params)) => {
            model.params = params;
            (e, Some(v))
        }
        None => (history.len(), None),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_ndcg10: best_val,
    })
}

/// The three pretrained encoders.
#[derive(Debug, Clone)]
pub struct PretrainedSet {
    pub source: Pretrained,
    pub target: Pretrained,
    pub mixed: Pretrained,
}

impl PretrainedSet {
    pub fn get(&self, kind: EncoderKind) -> &Pretrained {
        match kind {
            EncoderKind::Source => &self.source,
            EncoderKind::Target => &self.target,
            EncoderKind::Mixed => &self.mixed,
        }
    }
}

/// Next-item pretraining of the source, target and mixed encoders.
pub fn pretrain_all(data: &Dataset, cfg: &TrainConfig) -> Result<PretrainedSet> {
    let pc = cfg.pretrain_config();
    let run = |kind: EncoderKind| pretrain_domain(&kind.training_sequences(data), kind, kind.table_rows(data), &pc);
    Ok(PretrainedSet {
        source: run(EncoderKind::Source)?,
        target: run(EncoderKind::Target)?,
        mixed: run(EncoderKind::Mixed)?,
    })
}

/// Retrieval database over the training portion of every mixed sequence,
/// embedded with the given mixed-domain item table.
pub fn build_training_database(
    data: &Dataset,
    mixed_table: &crate::tensor::Mat,
    c: f64,
    n: f64,
    window: usize,
) -> Result<RetrievalDatabase> {
    let seqs: Vec<(&str, &[usize])> = data
        .users
        .iter()
        .map(|u| (u.user_id.as_str(), u.training_view().mixed))
        .collect();
    build_database(&seqs, data.source_vocab.len(), mixed_table, c, n, window)
}

/// A model initialised from `pretrained` and trained on `data`.
pub fn train_from_pretrained(
    data: &Dataset,
    cfg: &TrainConfig,
    pretrained: &PretrainedSet,
    db: &RetrievalDatabase,
) -> Result<TrainOutcome> {
    let mut model = HorizonModel::new(cfg, TableSizes::of(data))?;
    for kind in EncoderKind::ALL {
        model.load_pretrained(kind, &pretrained.get(kind).params)?;
    }
    train(data, model, Some(db))
}

/// Everything produced by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub pretrained: PretrainedSet,
    pub db: RetrievalDatabase,
    pub outcome: TrainOutcome,
}

/// Pretrain, build the database and train, all seeded by `cfg.seed`.
pub fn run_pipeline(data: &Dataset, cfg: &TrainConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let pretrained = pretrain_all(data, cfg)?;
    let table = pretrained.mixed.params.get(pretrained.mixed.encoder.item_table);
    let db = build_training_database(data, table, cfg.c, cfg.n, cfg.window)?;
    let outcome = train_from_pretrained(data, cfg, &pretrained, &db)?;
    Ok(PipelineOutput { pretrained, db, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;

    #[test]
    fn rec_loss_reference_values() {
        let mut table = Mat::zeros(3, 1);
        table.data = vec![0.0, 1.0, 1.0];
        assert!((rec_loss(&[0.7], 1, &table).unwrap() - 2f64.ln()).abs() < 1e-12);
        table.data = vec![0.0, 10.0, -10.0];
        let l = rec_loss(&[1.0], 1, &table).unwrap();
        assert!((l - (-20f64).exp().ln_1p()).abs() < 1e-20);
        assert!((l - 2.06e-9).abs() < 1e-11);
        assert!(rec_loss(&[1.0], 3, &table).is_err());
        assert!(rec_loss(&[1.0], 0, &table).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig {
            variant: Variant::NoDpdMdr,
            w: 0.3,
            ..TrainConfig::default()
        };
        let text = cfg.to_toml();
        assert!(text.contains("variant = \"no_DPD_MDR\""));
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
        let partial = TrainConfig::from_toml("lambda = 0.2\nvariant = \"no_MDR\"\n").unwrap();
        assert_eq!(partial.lambda, 0.2);
        assert_eq!(partial.variant, Variant::NoMdr);
        assert!(TrainConfig::from_toml("w = 2.0").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("variant = \"nope\"").is_err());
        assert_eq!(apply_ablation(&cfg, Variant::Base).variant, Variant::Base);
    }
}
