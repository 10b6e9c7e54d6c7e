//! Self-attentive sequence encoders, the base fusion MLP and per-domain
//! next-item pretraining.
//!
//! Each block is pre-norm: `x + Attn(LN(x))` followed by `x + FFN(LN(x))`,
//! with single-head causal attention and a final layer norm. The sequence
//! representation is the hidden state at the last position.

use rand::{Rng, RngExt};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::data::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::params::{Adam, Grads, ParamId, ParamSet};
use crate::seeds::rng_for;
use crate::tensor::{dot, Mat};

/// Examples per gradient chunk; chunks are reduced in a fixed order so the
/// result does not depend on the number of worker threads.
pub(crate) const GRAD_CHUNK: usize = 8;

/// Which history an encoder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Source,
    Target,
    Mixed,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Source, EncoderKind::Target, EncoderKind::Mixed];

    /// Parameter-name prefix.
    pub fn prefix(self) -> &'static str {
        match self {
            EncoderKind::Source => "enc_s",
            EncoderKind::Target => "enc_t",
            EncoderKind::Mixed => "enc_m",
        }
    }

    /// Rows of this encoder's item table for `data`.
    pub fn table_rows(self, data: &Dataset) -> usize {
        match self {
            EncoderKind::Source => data.source_vocab.table_rows(),
            EncoderKind::Target => data.target_vocab.table_rows(),
            EncoderKind::Mixed => data.mixed_table_rows(),
        }
    }

    /// Training sequences for next-item pretraining: everything observed
    /// before each user's first held-out target event.
    pub fn training_sequences(self, data: &Dataset) -> Vec<Vec<usize>> {
        data.users
            .iter()
            .map(|u| {
                let v = u.training_view();
                match self {
                    EncoderKind::Source => v.source.to_vec(),
                    EncoderKind::Target => v.target.to_vec(),
                    EncoderKind::Mixed => v.mixed.to_vec(),
                }
            })
            .filter(|s| !s.is_empty())
            .collect()
    }
}

impl From<Domain> for EncoderKind {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Source => EncoderKind::Source,
            Domain::Target => EncoderKind::Target,
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(EncoderKind::Source),
            "target" => Ok(EncoderKind::Target),
            "mixed" => Ok(EncoderKind::Mixed),
            other => Err(Error::invalid(format!("unknown encoder domain {other:?} (source|target|mixed)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub max_len: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Item-table rows, padding row 0 included.
    pub vocab_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Parameter handles of one sequence encoder inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub item_table: ParamId,
    pub pos_table: ParamId,
    blocks: Vec<Block>,
    ln_g: ParamId,
    ln_b: ParamId,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct EncoderNodes {
    /// `len × d` hidden sequence.
    pub hidden: NodeId,
    /// `1 × d` last-position state.
    pub last: NodeId,
    /// Attention probability matrix of each layer.
    pub attention: Vec<NodeId>,
}

/// Plain-value output of [`encode_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub hidden: Mat,
    pub h: Vec<f64>,
}

impl Encoder {
    /// Registers freshly initialised parameters under `prefix`.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, config: EncoderConfig, rng: &mut R) -> Result<Self> {
        let d = config.dim;
        if d == 0 || config.max_len == 0 || config.layers == 0 || config.vocab_rows < 2 {
            return Err(Error::invalid(format!(
                "encoder needs positive dim, max_len, layers and at least one item (got {config:?})"
            )));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        let std = 1.0 / (d as f64).sqrt();
        let mut table = Mat::randn(config.vocab_rows, d, std, rng);
        table.row_mut(0).fill(0.0);
        let item_table = params.add(format!("{prefix}.item_table"), table);
        let pos_table = params.add(format!("{prefix}.pos_table"), Mat::randn(config.max_len, d, std, rng));
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut p = |name: &str, m: Mat| params.add(format!("{prefix}.block{l}.{name}"), m);
            blocks.push(Block {
                ln1_g: p("ln1_g", Mat::filled(1, d, 1.0)),
                ln1_b: p("ln1_b", Mat::zeros(1, d)),
                wq: p("wq", Mat::randn(d, d, std, rng)),
                wk: p("wk", Mat::randn(d, d, std, rng)),
                wv: p("wv", Mat::randn(d, d, std, rng)),
                ln2_g: p("ln2_g", Mat::filled(1, d, 1.0)),
                ln2_b: p("ln2_b", Mat::zeros(1, d)),
                w1: p("w1", Mat::randn(d, d, std, rng)),
                b1: p("b1", Mat::zeros(1, d)),
                w2: p("w2", Mat::randn(d, d, std, rng)),
                b2: p("b2", Mat::zeros(1, d)),
            });
        }
        let ln_g = params.add(format!("{prefix}.ln_g"), Mat::filled(1, d, 1.0));
        let ln_b = params.add(format!("{prefix}.ln_b"), Mat::zeros(1, d));
        Ok(Encoder {
            config,
            item_table,
            pos_table,
            blocks,
            ln_g,
            ln_b,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Every parameter owned by this encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.item_table, self.pos_table];
        for b in &self.blocks {
            ids.extend([b.ln1_g, b.ln1_b, b.wq, b.wk, b.wv, b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2]);
        }
        ids.extend([self.ln_g, self.ln_b]);
        ids
    }

    /// Validates an input sequence against length and vocabulary bounds.
    pub fn check_items(&self, items: &[usize]) -> Result<()> {
        if items.is_empty() {
            return Err(Error::Empty("sequence to encode".into()));
        }
        if items.len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_len {}",
                items.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = items.iter().find(|&&i| i == 0 || i >= self.config.vocab_rows) {
            return Err(Error::OutOfVocabulary(format!(
                "item index {bad} (valid range 1..{})",
                self.config.vocab_rows
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g`. Dropout is applied only when an rng
    /// is supplied (training mode).
    pub fn forward(&self, g: &mut Graph, items: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Result<EncoderNodes> {
        self.check_items(items)?;
        let len = items.len();
        let p = self.config.dropout;
        let scale = 1.0 / (self.config.dim as f64).sqrt();

        let table = g.param(self.item_table);
        let pos = g.param(self.pos_table);
        let emb = g.gather(table, items);
        let positions: Vec<usize> = (0..len).collect();
        let pe = g.gather(pos, &positions);
        let mut x = g.add(emb, pe);
        x = dropout(g, x, p, rng.as_deref_mut());

        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (g1, b1) = (g.param(b.ln1_g), g.param(b.ln1_b));
            let a = g.layer_norm(x, g1, b1);
            let (wq, wk, wv) = (g.param(b.wq), g.param(b.wk), g.param(b.wv));
            let q = g.matmul(a, wq);
            let k = g.matmul(a, wk);
            let v = g.matmul(a, wv);
            let s = g.matmul_t(q, k);
            let s = g.scale(s, scale);
            let probs = g.causal_softmax(s);
            attention.push(probs);
            let probs = dropout(g, probs, p, rng.as_deref_mut());
            let o = g.matmul(probs, v);
            x = g.add(x, o);

            let (g2, b2) = (g.param(b.ln2_g), g.param(b.ln2_b));
            let c = g.layer_norm(x, g2, b2);
            let (w1, bb1, w2, bb2) = (g.param(b.w1), g.param(b.b1), g.param(b.w2), g.param(b.b2));
            let f = g.matmul(c, w1);
            let f = g.add_row(f, bb1);
            let f = g.relu(f);
            let f = g.matmul(f, w2);
            let f = g.add_row(f, bb2);
            let f = dropout(g, f, p, rng.as_deref_mut());
            x = g.add(x, f);
        }
        let (lg, lb) = (g.param(self.ln_g), g.param(self.ln_b));
        let hidden = g.layer_norm(x, lg, lb);
        let last = g.select_row(hidden, len - 1);
        Ok(EncoderNodes {
            hidden,
            last,
            attention,
        })
    }

    /// Attention probability matrices (one per layer) in evaluation mode.
    pub fn attention_weights(&self, params: &ParamSet, items: &[usize]) -> Result<Vec<Mat>> {
        let mut g = Graph::new(params);
        let nodes = self.forward(&mut g, items, None)?;
        Ok(nodes.attention.iter().map(|&a| g.value(a).clone()).collect())
    }
}

/// Keeps the most recent `max_len` entries.
pub fn truncate(items: &[usize], max_len: usize) -> &[usize] {
    &items[items.len().saturating_sub(max_len)..]
}

/// Inverted dropout with a fixed keep mask drawn from `rng`.
pub(crate) fn dropout(g: &mut Graph, x: NodeId, p: f64, rng: Option<&mut ChaCha8Rng>) -> NodeId {
    let Some(rng) = rng else { return x };
    if p <= 0.0 {
        return x;
    }
    let (r, c) = g.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..r * c).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    g.mul_const(x, Mat::from_vec(r, c, mask))
}

/// Hidden sequence and last-position representation, evaluation mode.
pub fn encode_sequence(params: &ParamSet, encoder: &Encoder, items: &[usize]) -> Result<Encoded> {
    let mut g = Graph::new(params);
    let nodes = encoder.forward(&mut g, items, None)?;
    Ok(Encoded {
        hidden: g.value(nodes.hidden).clone(),
        h: g.value(nodes.last).data.clone(),
    })
}

/// `score[j] = h · e_j` for every row of `table`. Row 0 is the padding row;
/// callers ranking real items skip it.
pub fn score_items(h: &[f64], table: &Mat) -> Result<Vec<f64>> {
    if h.len() != table.cols {
        return Err(Error::Shape(format!("query width {} vs table width {}", h.len(), table.cols)));
    }
    Ok((0..table.rows).map(|r| dot(h, table.row(r))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Two-layer perceptron `W2·act(W1·x + b1) + b2` over row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            w1: params.add(format!("{prefix}.w1"), Mat::randn(in_dim, hidden, 1.0 / (in_dim as f64).sqrt(), rng)),
            b1: params.add(format!("{prefix}.b1"), Mat::zeros(1, hidden)),
            w2: params.add(format!("{prefix}.w2"), Mat::randn(hidden, out_dim, 1.0 / (hidden as f64).sqrt(), rng)),
            b2: params.add(format!("{prefix}.b2"), Mat::zeros(1, out_dim)),
            activation: Activation::Relu,
            in_dim,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Applies the MLP to a `1 × in_dim` node.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let hdn = g.matmul(x, w1);
        let mut hdn = g.add_row(hdn, b1);
        if self.activation == Activation::Relu {
            hdn = g.relu(hdn);
        }
        let out = g.matmul(hdn, w2);
        g.add_row(out, b2)
    }

    /// Applies the MLP to the concatenation of `parts`.
    pub fn apply(&self, params: &ParamSet, parts: &[&[f64]]) -> Result<Vec<f64>> {
        let width: usize = parts.iter().map(|p| p.len()).sum();
        if width != self.in_dim {
            return Err(Error::Shape(format!("MLP input width {width}, expected {}", self.in_dim)));
        }
        let mut g = Graph::new(params);
        let x = g.constant(Mat::row_vector(parts.concat()));
        let y = self.forward(&mut g, x);
        Ok(g.value(y).data.clone())
    }
}

/// Base cross-domain fusion `h_u = MLP([h^S; h^T])`.
pub fn fuse_base(params: &ParamSet, mlp: &Mlp, hs: &[f64], ht: &[f64]) -> Result<Vec<f64>> {
    if hs.len() != ht.len() || hs.len() * 2 != mlp.in_dim {
        return Err(Error::Shape(format!(
            "fuse_base widths {} and {} (MLP expects two halves of {})",
            hs.len(),
            ht.len(),
            mlp.in_dim
        )));
    }
    mlp.apply(params, &[hs, ht])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            dim: 64,
            layers: 1,
            dropout: 0.2,
            max_len: crate::data::DEFAULT_MAX_LEN,
            epochs: 200,
            lr: 1e-3,
            batch_size: 512,
            seed: 0,
        }
    }
}

/// Result of next-item pretraining.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub params: ParamSet,
    pub encoder: Encoder,
    /// Mean per-prediction cross-entropy of each epoch.
    pub losses: Vec<f64>,
}

/// Trains one encoder on next-item prediction with tied item-table logits.
pub fn pretrain_domain(
    sequences: &[Vec<usize>],
    kind: EncoderKind,
    vocab_rows: usize,
    cfg: &PretrainConfig,
) -> Result<Pretrained> {
    let seqs: Vec<&[usize]> = sequences
        .iter()
        .map(|s| truncate(s, cfg.max_len))
        .filter(|s| s.len() >= 2)
        .collect();
    if seqs.is_empty() {
        return Err(Error::Empty("pretraining set (no sequence has two or more items)".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut params = ParamSet::new();
    let mut init = rng_for(cfg.seed, &[0x9e7, kind as u64]);
    let enc_cfg = EncoderConfig {
        dim: cfg.dim,
        max_len: cfg.max_len,
        layers: cfg.layers,
        dropout: cfg.dropout,
        vocab_rows,
    };
    let encoder = Encoder::new(&mut params, kind.prefix(), enc_cfg, &mut init)?;
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..seqs.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle = rng_for(cfg.seed, &[0x5f1, kind as u64, epoch as u64]);
        shuffle_in_place(&mut order, &mut shuffle);
        let mut epoch_loss = 0.0;
        let mut epoch_n = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let n_pred: usize = batch.iter().map(|&i| seqs[i].len() - 1).sum();
            let parts: Vec<Result<(Grads, f64)>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grads = Grads::new(params.len());
                    let mut loss = 0.0;
                    for &i in chunk {
                        let mut rng = rng_for(cfg.seed, &[0xd40, kind as u64, epoch as u64, i as u64]);
                        let (l, g) = next_item_loss(&params, &encoder, seqs[i], Some(&mut rng))?;
                        loss += l;
                        grads.merge(g);
                    }
                    Ok((grads, loss))
                })
                .collect();
            let mut grads = Grads::new(params.len());
            let mut loss = 0.0;
            for part in parts {
                let (g, l) = part?;
                grads.merge(g);
                loss += l;
            }
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite(format!(
                    "{kind:?} pretraining diverged at epoch {} batch {b} (loss {loss})",
                    epoch + 1
                )));
            }
            grads.scale(1.0 / n_pred as f64);
            adam.step(&mut params, &grads);
            epoch_loss += loss;
            epoch_n += n_pred;
        }
        let mean = epoch_loss / epoch_n as f64;
        log::debug!("pretrain {kind:?} epoch {} loss {mean:.6}", epoch + 1);
        losses.push(mean);
    }
    Ok(Pretrained {
        params,
        encoder,
        losses,
    })
}

/// Summed next-item cross-entropy over one sequence and its gradients.
fn next_item_loss(
    params: &ParamSet,
    encoder: &Encoder,
    seq: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Grads)> {
    let mut g = Graph::new(params);
    let input = &seq[..seq.len() - 1];
    let nodes = encoder.forward(&mut g, input, rng)?;
    let table = g.param(encoder.item_table);
    let logits = g.matmul_t(nodes.hidden, table);
    let targets: Vec<Option<usize>> = seq[1..].iter().map(|&t| Some(t)).collect();
    let loss = g.cross_entropy_rows(logits, &targets, 1);
    Ok((g.scalar(loss), g.backward(loss)))
}

/// Fraction of next-item predictions whose argmax equals the truth.
pub fn next_item_accuracy(params: &ParamSet, encoder: &Encoder, sequences: &[Vec<usize>]) -> Result<f64> {
    let table = params.get(encoder.item_table);
    let mut hits = 0usize;
    let mut total = 0usize;
    for seq in sequences {
        let seq = truncate(seq, encoder.config.max_len + 1);
        if seq.len() < 2 {
            continue;
        }
        let enc = encode_sequence(params, encoder, &seq[..seq.len() - 1])?;
        for (pos, &truth) in seq[1..].iter().enumerate() {
            let scores = score_items(enc.hidden.row(pos), table)?;
            let best = (1..scores.len())
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
                .expect("table has items");
            hits += usize::from(best == truth);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("accuracy evaluation set".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Fisher–Yates shuffle driven by `rng`.
pub(crate) fn shuffle_in_place<T>(xs: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}
