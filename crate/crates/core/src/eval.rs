//! Full-catalog leave-one-out ranking metrics and representation exports.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::model::{HorizonModel, RetrievalIndex, UserState};
use crate::seeds::rng_for;
use crate::tensor::{cosine, Mat};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

/// Ranking of one user's held-out item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingResult {
    pub user_id: String,
    /// 1-based rank among all target items.
    pub rank: usize,
    /// Highest-scoring item indices, best first.
    pub top: Vec<usize>,
}

/// Rank of `truth` among items `1..scores.len()`: one plus the number of
/// items scoring strictly higher, plus lower-indexed items scoring equal.
/// Items in `masked` (other than `truth`) are excluded.
pub fn rank_target(scores: &[f64], truth: usize, masked: &[usize]) -> Result<usize> {
    if truth == 0 || truth >= scores.len() {
        return Err(Error::OutOfVocabulary(format!("held-out item index {truth}")));
    }
    let s = scores[truth];
    let mut rank = 1;
    for (j, &x) in scores.iter().enumerate().skip(1) {
        if j != truth && (x > s || (x == s && j < truth)) && !masked.contains(&j) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// The `k` best items (ties → lower index), excluding `masked`.
pub fn top_k(scores: &[f64], k: usize, masked: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (1..scores.len()).filter(|j| !masked.contains(j)).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks, k)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks, k)?;
    // Summing in rank order makes the result independent of user order.
    let mut hits: Vec<usize> = ranks.iter().copied().filter(|&r| r <= k).collect();
    hits.sort_unstable();
    let sum: f64 = hits.iter().map(|&r| 1.0 / ((r + 1) as f64).log2()).sum();
    Ok(sum / ranks.len() as f64)
}

fn check(ranks: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("cutoff k must be >= 1"));
    }
    if ranks.is_empty() {
        return Err(Error::Empty("ranking results".into()));
    }
    Ok(())
}

/// HR@k and NDCG@k for a set of cutoffs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub users: usize,
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
}

impl MetricReport {
    pub fn from_ranks(split: &str, ranks: &[usize], ks: &[usize]) -> Result<Self> {
        Ok(MetricReport {
            split: split.to_string(),
            users: ranks.len(),
            ks: ks.to_vec(),
            hr: ks.iter().map(|&k| hr_at_k(ranks, k)).collect::<Result<_>>()?,
            ndcg: ks.iter().map(|&k| ndcg_at_k(ranks, k)).collect::<Result<_>>()?,
        })
    }

    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    /// Element-wise mean of reports sharing the same cutoffs.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        let first = reports.first().ok_or_else(|| Error::Empty("metric reports".into()))?;
        if reports.iter().any(|r| r.ks != first.ks) {
            return Err(Error::invalid("reports use different cutoffs"));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> &Vec<f64>| -> Vec<f64> {
            (0..first.ks.len()).map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / n).collect()
        };
        Ok(MetricReport {
            split: first.split.clone(),
            users: first.users,
            ks: first.ks.clone(),
            hr: avg(|r| &r.hr),
            ndcg: avg(|r| &r.ndcg),
        })
    }

    /// `key=value` lines (`hr@5=...`), one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("split={}\nusers={}\n", self.split, self.users);
        for (i, k) in self.ks.iter().enumerate() {
            let _ = writeln!(s, "hr@{k}={:.6}", self.hr[i]);
            let _ = writeln!(s, "ndcg@{k}={:.6}", self.ndcg[i]);
        }
        s
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "split: {}  users: {}", self.split, self.users)?;
        writeln!(f, "{:>6}  {:>8}  {:>8}", "k", "HR", "NDCG")?;
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(f, "{:>6}  {:>8.4}  {:>8.4}", k, self.hr[i], self.ndcg[i])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Exclude the user's earlier target items from the candidates.
    pub mask_seen: bool,
    /// Seed of the inference-time noise draws.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: DEFAULT_KS.to_vec(),
            mask_seen: false,
            seed: 0x5eed,
        }
    }
}

/// Ranks one target event with the full inference path.
pub fn rank_event(
    model: &HorizonModel,
    data: &Dataset,
    index: Option<&RetrievalIndex<'_>>,
    user: usize,
    j: usize,
    opts: &EvalOptions,
) -> Result<(RankingResult, UserState)> {
    let hist = &data.users[user];
    let mut rng = rng_for(opts.seed, &[user as u64, j as u64]);
    let state = model.infer(data, user, j, index, &mut rng)?;
    let scores = model.scores(&state.tilde)?;
    let truth = hist.target[j];
    let masked: Vec<usize> = if opts.mask_seen {
        hist.target[..j].iter().copied().filter(|&i| i != truth).collect()
    } else {
        Vec::new()
    };
    let rank = rank_target(&scores, truth, &masked)?;
    let top = top_k(&scores, opts.ks.iter().copied().max().unwrap_or(10), &masked);
    Ok((
        RankingResult {
            user_id: hist.user_id.clone(),
            rank,
            top,
        },
        state,
    ))
}

/// Metrics on the validation or test item of every user that has one.
pub fn evaluate(
    model: &HorizonModel,
    data: &Dataset,
    index: Option<&RetrievalIndex<'_>>,
    split: Role,
    opts: &EvalOptions,
) -> Result<(MetricReport, Vec<RankingResult>)> {
    if split == Role::Train {
        return Err(Error::invalid("evaluate takes the validation or test split"));
    }
    check_compatible(model, data)?;
    let events: Vec<(usize, usize)> = data
        .users
        .iter()
        .enumerate()
        .filter_map(|(u, h)| h.label_index(split).map(|j| (u, j)))
        .collect();
    let results = rank_events(model, data, index, &events, opts)?;
    let ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    let name = match split {
        Role::Validation => "validation",
        _ => "test",
    };
    Ok((MetricReport::from_ranks(name, &ranks, &opts.ks)?, results))
}

/// Metrics over every training next-item event (memorisation check).
pub fn evaluate_training_events(
    model: &HorizonModel,
    data: &Dataset,
    index: Option<&RetrievalIndex<'_>>,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    check_compatible(model, data)?;
    let events = crate::train::training_examples(data);
    let results = rank_events(model, data, index, &events, opts)?;
    let ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    MetricReport::from_ranks("train", &ranks, &opts.ks)
}

fn rank_events(
    model: &HorizonModel,
    data: &Dataset,
    index: Option<&RetrievalIndex<'_>>,
    events: &[(usize, usize)],
    opts: &EvalOptions,
) -> Result<Vec<RankingResult>> {
    events
        .par_iter()
        .map(|&(u, j)| rank_event(model, data, index, u, j, opts).map(|r| r.0))
        .collect()
}

fn check_compatible(model: &HorizonModel, data: &Dataset) -> Result<()> {
    let sizes = crate::model::TableSizes::of(data);
    if sizes != model.sizes {
        return Err(Error::Checkpoint(format!(
            "model was trained on tables {:?} but the dataset has {:?}",
            model.sizes, sizes
        )));
    }
    Ok(())
}

/// Per-user alignment data for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRow {
    pub user_id: String,
    pub state: UserState,
}

/// Writes `similarity.csv` (cosine of `h̃_u` with `h^S`, `h^T`, `h^M`),
/// `embeddings.csv` (one row per user and representation) and
/// `target_items.csv` (the target item table) into `dir`.
pub fn export_alignment(rows: &[AlignmentRow], target_table: &Mat, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = target_table.cols;
    let mut sim = String::from("user_id,cos_source,cos_target,cos_mixed\n");
    for r in rows {
        let s = &r.state;
        let _ = writeln!(
            sim,
            "{},{},{},{}",
            r.user_id,
            cosine(&s.tilde, &s.h_s),
            cosine(&s.tilde, &s.h_t),
            cosine(&s.tilde, &s.h_m)
        );
    }
    let cols: Vec<String> = (0..d).map(|i| format!("v{i}")).collect();
    let mut emb = format!("user_id,kind,{}\n", cols.join(","));
    for r in rows {
        let s = &r.state;
        for (kind, v) in [("h_s", &s.h_s), ("h_t", &s.h_t), ("h_m", &s.h_m), ("h_tilde", &s.tilde)] {
            let _ = writeln!(emb, "{},{kind},{}", r.user_id, join(v));
        }
    }
    let mut items = format!("item_index,{}\n", cols.join(","));
    for i in 1..target_table.rows {
        let _ = writeln!(items, "{i},{}", join(target_table.row(i)));
    }
    for (name, body) in [("similarity.csv", sim), ("embeddings.csv", emb), ("target_items.csv", items)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}
