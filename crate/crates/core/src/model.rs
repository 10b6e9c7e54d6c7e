//! The complete recommender: three sequence encoders, base fusion, the
//! shared denoiser and the wiring of every ablation variant.
//!
//! One training example is a target-domain event together with everything
//! the user did strictly before it. Training records the whole example on
//! an autodiff graph using a one-shot denoising estimate at a random step;
//! inference runs the full deterministic reverse chain from step `T`.

use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::data::{Context, Dataset, Domain};
use crate::diffusion::{forward_noise, make_schedule, reverse_chain, Denoiser, DiffusionSchedule};
use crate::encoder::{truncate, Encoder, EncoderConfig, EncoderKind, Mlp};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::retrieval::{gaussian_noise, retrieve_topk_filtered, sample_retrieved_noise, RetrievalDatabase};
use crate::seeds::rng_for;
use crate::tensor::Mat;
use crate::train::TrainConfig;

/// Model wiring; `Full` is the complete method, the others remove parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// Diffusion on the source representation only.
    #[serde(rename = "DPD_S")]
    DpdS,
    /// Diffusion on the target representation only.
    #[serde(rename = "DPD_T")]
    DpdT,
    /// Source branch removed; target diffusion without mixed conditioning.
    #[serde(rename = "no_DPD")]
    NoDpd,
    /// Standard Gaussian noise instead of retrieved noise.
    #[serde(rename = "no_MDR")]
    NoMdr,
    /// No diffusion: static representations.
    #[serde(rename = "no_DMs")]
    NoDms,
    /// No diffusion and no retrieval: MLP over `[h^S; h^T; h^M]`.
    #[serde(rename = "no_DPD_MDR")]
    NoDpdMdr,
    /// The concatenation-MLP base recommender alone.
    #[serde(rename = "base")]
    Base,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::DpdS,
        Variant::DpdT,
        Variant::NoDpd,
        Variant::NoMdr,
        Variant::NoDms,
        Variant::NoDpdMdr,
        Variant::Base,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::DpdS => "DPD_S",
            Variant::DpdT => "DPD_T",
            Variant::NoDpd => "no_DPD",
            Variant::NoMdr => "no_MDR",
            Variant::NoDms => "no_DMs",
            Variant::NoDpdMdr => "no_DPD_MDR",
            Variant::Base => "base",
        }
    }

    /// Domains whose representation goes through diffusion.
    pub fn diffused(self) -> &'static [Domain] {
        match self {
            Variant::Full | Variant::NoMdr => &[Domain::Source, Domain::Target],
            Variant::DpdS => &[Domain::Source],
            Variant::DpdT | Variant::NoDpd => &[Domain::Target],
            Variant::NoDms | Variant::NoDpdMdr | Variant::Base => &[],
        }
    }

    /// Whether diffusion noise comes from the retrieval database.
    pub fn uses_retrieval(self) -> bool {
        !self.diffused().is_empty() && self != Variant::NoMdr
    }

    /// Whether the denoiser sees the mixed-domain representation.
    pub fn mixed_conditioned(self) -> bool {
        self != Variant::NoDpd
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::invalid(format!("unknown variant {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

/// Embedding-table sizes (padding row included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSizes {
    pub source: usize,
    pub target: usize,
    pub mixed: usize,
}

impl TableSizes {
    pub fn of(data: &Dataset) -> Self {
        TableSizes {
            source: data.source_vocab.table_rows(),
            target: data.target_vocab.table_rows(),
            mixed: data.mixed_table_rows(),
        }
    }

    pub fn rows(&self, kind: EncoderKind) -> usize {
        match kind {
            EncoderKind::Source => self.source,
            EncoderKind::Target => self.target,
            EncoderKind::Mixed => self.mixed,
        }
    }
}

/// All per-user representations of one inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub h_s: Vec<f64>,
    pub h_t: Vec<f64>,
    pub h_m: Vec<f64>,
    /// Base fusion `MLP([h^S; h^T])`.
    pub h_u: Vec<f64>,
    /// Forward-noised states at step `T` (diffused domains only).
    pub noised_s: Option<Vec<f64>>,
    pub noised_t: Option<Vec<f64>>,
    /// Reconstructions; equal to the static representation when a domain
    /// is not diffused.
    pub hat_s: Vec<f64>,
    pub hat_t: Vec<f64>,
    /// `ĥ^S_0 + ĥ^T_0` (variant-dependent).
    pub hat_u: Vec<f64>,
    /// Final representation used for scoring.
    pub tilde: Vec<f64>,
}

/// A retrieval database paired with dataset user indices, so queries can
/// exclude a user's own segments that reach past the prediction point.
#[derive(Debug, Clone)]
pub struct RetrievalIndex<'a> {
    pub db: &'a RetrievalDatabase,
    row_user: Vec<usize>,
}

impl<'a> RetrievalIndex<'a> {
    pub fn new(db: &'a RetrievalDatabase, data: &Dataset) -> Self {
        let lookup: std::collections::HashMap<&str, usize> =
            data.users.iter().enumerate().map(|(i, u)| (u.user_id.as_str(), i)).collect();
        let row_user = db
            .provenance
            .iter()
            .map(|p| lookup.get(p.user_id.as_str()).copied().unwrap_or(usize::MAX))
            .collect();
        RetrievalIndex { db, row_user }
    }

    /// Retrieved noise for `query`, ignoring rows of `user` whose segment
    /// ends after mixed position `cutoff` (the number of items observed).
    pub fn noise(&self, query: &[f64], user: usize, cutoff: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let prov = &self.db.provenance;
        let rows = retrieve_topk_filtered(query, self.db, k, |r| self.row_user[r] != user || prov[r].end <= cutoff)?;
        Ok(sample_retrieved_noise(query, self.db, &rows, rng)?.z)
    }
}

/// Differentiable pieces of one training example.
#[derive(Debug, Clone, Copy)]
pub struct ExampleLoss {
    pub rec: NodeId,
    /// Mean over diffused domains of `‖h^D − ĥ^D_0‖²` (absent when nothing
    /// is diffused).
    pub diff: Option<NodeId>,
    pub total: NodeId,
}

#[derive(Debug, Clone)]
pub struct HorizonModel {
    pub config: TrainConfig,
    pub sizes: TableSizes,
    pub params: ParamSet,
    pub enc_s: Encoder,
    pub enc_t: Encoder,
    pub enc_m: Encoder,
    pub fuse: Mlp,
    pub fuse_tri: Mlp,
    pub denoiser: Denoiser,
    pub schedule: DiffusionSchedule,
}

impl HorizonModel {
    /// Freshly initialised model (seeded by `config.seed`).
    pub fn new(config: &TrainConfig, sizes: TableSizes) -> Result<Self> {
        config.validate()?;
        let schedule = make_schedule(config.steps, config.beta_start, config.beta_end)?;
        let d = config.dim;
        let mut params = ParamSet::new();
        let mut rng = rng_for(config.seed, &[0x1417]);
        let enc_cfg = |rows| EncoderConfig {
            dim: d,
            max_len: config.max_len,
            layers: config.layers,
            dropout: config.dropout,
            vocab_rows: rows,
        };
        let enc_s = Encoder::new(&mut params, EncoderKind::Source.prefix(), enc_cfg(sizes.source), &mut rng)?;
        let enc_t = Encoder::new(&mut params, EncoderKind::Target.prefix(), enc_cfg(sizes.target), &mut rng)?;
        let enc_m = Encoder::new(&mut params, EncoderKind::Mixed.prefix(), enc_cfg(sizes.mixed), &mut rng)?;
        let fuse = Mlp::new(&mut params, "fuse", 2 * d, d, d, &mut rng);
        let fuse_tri = Mlp::new(&mut params, "fuse_tri", 3 * d, d, d, &mut rng);
        let denoiser = Denoiser::new(&mut params, "denoiser", d, &mut rng);
        Ok(HorizonModel {
            config: config.clone(),
            sizes,
            params,
            enc_s,
            enc_t,
            enc_m,
            fuse,
            fuse_tri,
            denoiser,
            schedule,
        })
    }

    pub fn encoder(&self, kind: EncoderKind) -> &Encoder {
        match kind {
            EncoderKind::Source => &self.enc_s,
            EncoderKind::Target => &self.enc_t,
            EncoderKind::Mixed => &self.enc_m,
        }
    }

    /// Copies a pretrained encoder's arrays (same names) into this model.
    pub fn load_pretrained(&mut self, kind: EncoderKind, pretrained: &ParamSet) -> Result<()> {
        let ids = self.encoder(kind).param_ids();
        for id in ids {
            let name = self.params.name(id).to_string();
            let src = pretrained.find(&name).ok_or_else(|| {
                Error::Checkpoint(format!("pretrained {kind:?} encoder lacks array {name}"))
            })?;
            self.params
                .assign(id, pretrained.get(src))
                .map_err(|e| Error::Checkpoint(format!("pretrained array {name}: {e}")))?;
        }
        Ok(())
    }

    /// Parameters of the three encoders (for freezing).
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        EncoderKind::ALL.iter().flat_map(|&k| self.encoder(k).param_ids()).collect()
    }

    /// Target item table used for scoring.
    pub fn target_table(&self) -> &Mat {
        self.params.get(self.enc_t.item_table)
    }

    fn encode_node(
        &self,
        g: &mut Graph,
        kind: EncoderKind,
        items: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let items = truncate(items, self.config.max_len);
        if items.is_empty() {
            return Ok(g.constant(Mat::zeros(1, self.config.dim)));
        }
        Ok(self.encoder(kind).forward(g, items, rng)?.last)
    }

    /// Records `h^S, h^T, h^M` for a context. An empty history encodes to
    /// the zero vector.
    pub fn encode_context(
        &self,
        g: &mut Graph,
        ctx: &Context<'_>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<[NodeId; 3]> {
        let hs = self.encode_node(g, EncoderKind::Source, ctx.source, rng.as_deref_mut())?;
        let ht = self.encode_node(g, EncoderKind::Target, ctx.target, rng.as_deref_mut())?;
        let hm = self.encode_node(g, EncoderKind::Mixed, ctx.mixed, rng.as_deref_mut())?;
        Ok([hs, ht, hm])
    }

    /// Final representation from the (possibly reconstructed) parts,
    /// following the variant's wiring.
    fn compose(&self, g: &mut Graph, hs: NodeId, ht: NodeId, hm: NodeId, hat_s: NodeId, hat_t: NodeId) -> (NodeId, NodeId, NodeId) {
        let variant = self.config.variant;
        let cat = g.concat_cols(&[hs, ht]);
        let hu = self.fuse.forward(g, cat);
        let hat_u = match variant {
            Variant::NoDpd => hat_t,
            _ => g.add(hat_s, hat_t),
        };
        let tilde = match variant {
            Variant::Base => hu,
            Variant::NoDpdMdr => {
                let cat3 = g.concat_cols(&[hs, ht, hm]);
                self.fuse_tri.forward(g, cat3)
            }
            _ => {
                let w = self.config.w;
                let a = g.scale(hat_u, 1.0 - w);
                let b = g.scale(hu, w);
                g.add(a, b)
            }
        };
        (hu, hat_u, tilde)
    }

    fn condition(&self, g: &mut Graph, hm: NodeId) -> NodeId {
        if self.config.variant.mixed_conditioned() {
            hm
        } else {
            g.constant(Mat::zeros(1, self.config.dim))
        }
    }

    fn draw_noise(
        &self,
        query: &[f64],
        user: usize,
        cutoff: usize,
        index: Option<&RetrievalIndex<'_>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        if self.config.variant.uses_retrieval() {
            let index = index.ok_or_else(|| Error::invalid("this variant needs a retrieval database"))?;
            index.noise(query, user, cutoff, self.config.k, rng)
        } else {
            Ok(gaussian_noise(query.len(), rng))
        }
    }

    /// Records the loss of predicting target event `j` of `user`.
    ///
    /// `rng` drives dropout, the diffusion step and the noise draw. The
    /// retrieved noise is treated as a constant.
    pub fn example_loss(
        &self,
        g: &mut Graph,
        data: &Dataset,
        user: usize,
        j: usize,
        index: Option<&RetrievalIndex<'_>>,
        rng: &mut ChaCha8Rng,
        dropout: bool,
    ) -> Result<ExampleLoss> {
        let hist = &data.users[user];
        let ctx = hist.context(j);
        let label = hist.target[j];
        let cutoff = hist.target_pos[j];
        let [hs, ht, hm] = if dropout {
            self.encode_context(g, &ctx, Some(&mut *rng))?
        } else {
            self.encode_context(g, &ctx, None)?
        };
        let cond = self.condition(g, hm);
        let mut hat = [hs, ht];
        let mut diffs = Vec::new();
        for &domain in self.config.variant.diffused() {
            let slot = domain as usize;
            let h = hat[slot];
            let t = rng.random_range(1..=self.schedule.steps());
            let query = g.value(h).data.clone();
            let z = self.draw_noise(&query, user, cutoff, index, rng)?;
            let ab = self.schedule.alpha_bar_at(t)?;
            let scaled = g.scale(h, ab.sqrt());
            let noise = Mat::row_vector(z.iter().map(|x| (1.0 - ab).sqrt() * x).collect());
            let noised = g.add_const(scaled, &noise);
            let out = self.denoiser.forward(g, noised, cond, t, domain).out;
            let err = g.sub(h, out);
            diffs.push(g.sum_squares(err));
            hat[slot] = out;
        }
        if self.config.variant == Variant::NoDpd {
            hat[0] = g.constant(Mat::zeros(1, self.config.dim));
        }
        let (_, _, tilde) = self.compose(g, hs, ht, hm, hat[0], hat[1]);
        let table = g.param(self.enc_t.item_table);
        let logits = g.matmul_t(tilde, table);
        let rec = g.cross_entropy(logits, label, 1);
        let diff = if diffs.is_empty() {
            None
        } else {
            let s = g.sum(&diffs);
            Some(g.scale(s, 1.0 / diffs.len() as f64))
        };
        let total = match diff {
            Some(d) if self.config.lambda != 0.0 => {
                let weighted = g.scale(d, self.config.lambda);
                g.add(rec, weighted)
            }
            _ => rec,
        };
        Ok(ExampleLoss { rec, diff, total })
    }

    /// Full inference pass for target event `j` of `user`: encode, forward
    /// noise to step `T`, run the reverse chain and fuse.
    pub fn infer(
        &self,
        data: &Dataset,
        user: usize,
        j: usize,
        index: Option<&RetrievalIndex<'_>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<UserState> {
        let hist = &data.users[user];
        let ctx = hist.context(j);
        self.infer_context(&ctx, user, hist.target_pos[j], index, rng)
    }

    /// [`HorizonModel::infer`] for an explicit context.
    pub fn infer_context(
        &self,
        ctx: &Context<'_>,
        user: usize,
        cutoff: usize,
        index: Option<&RetrievalIndex<'_>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<UserState> {
        let mut g = Graph::new(&self.params);
        let [hs, ht, hm] = self.encode_context(&mut g, ctx, None)?;
        let vals = |g: &Graph, n: NodeId| g.value(n).data.clone();
        let (h_s, h_t, h_m) = (vals(&g, hs), vals(&g, ht), vals(&g, hm));
        let cond = if self.config.variant.mixed_conditioned() {
            h_m.clone()
        } else {
            vec![0.0; self.config.dim]
        };
        let steps = self.schedule.steps();
        let mut noised = [None, None];
        let mut hat = [h_s.clone(), h_t.clone()];
        for &domain in self.config.variant.diffused() {
            let slot = domain as usize;
            let z = self.draw_noise(&hat[slot], user, cutoff, index, rng)?;
            let start = forward_noise(&hat[slot], &z, steps, &self.schedule)?;
            hat[slot] = reverse_chain(&start, steps, |x, t| {
                let x0 = self.denoiser.denoise_step(&self.params, x, &cond, t, domain)?;
                self.schedule.posterior_mean(&x0, x, t)
            })?;
            noised[slot] = Some(start);
        }
        if self.config.variant == Variant::NoDpd {
            hat[0] = vec![0.0; self.config.dim];
        }
        let hat_s_node = g.constant(Mat::row_vector(hat[0].clone()));
        let hat_t_node = g.constant(Mat::row_vector(hat[1].clone()));
        let (hu, hat_u, tilde) = self.compose(&mut g, hs, ht, hm, hat_s_node, hat_t_node);
        let tilde = vals(&g, tilde);
        if !tilde.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("final user representation".into()));
        }
        let [noised_s, noised_t] = noised;
        let [hat_s, hat_t] = hat;
        Ok(UserState {
            h_u: vals(&g, hu),
            hat_u: vals(&g, hat_u),
            h_s,
            h_t,
            h_m,
            noised_s,
            noised_t,
            hat_s,
            hat_t,
            tilde,
        })
    }

    /// Scores of every target item (index 0 is padding).
    pub fn scores(&self, tilde: &[f64]) -> Result<Vec<f64>> {
        crate::encoder::score_items(tilde, self.target_table())
    }
}

/// `h̃ = (1 − w)(ĥ^S_0 + ĥ^T_0) + w·h_u`.
pub fn fuse_final(hat_s: &[f64], hat_t: &[f64], h_u: &[f64], w: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("fusion weight w={w} outside [0, 1]")));
    }
    if hat_s.len() != h_u.len() || hat_t.len() != h_u.len() {
        return Err(Error::Shape("fuse_final inputs differ in width".into()));
    }
    Ok(hat_s
        .iter()
        .zip(hat_t)
        .zip(h_u)
        .map(|((s, t), u)| (1.0 - w) * (s + t) + w * u)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert_eq!("No-MDR".parse::<Variant>().unwrap(), Variant::NoMdr);
        assert!("nope".parse::<Variant>().is_err());
        assert!(Variant::NoDms.diffused().is_empty());
        assert!(!Variant::NoMdr.uses_retrieval());
        assert!(Variant::Full.uses_retrieval());
    }

    #[test]
    fn fuse_final_cases() {
        let s = [1.0, 0.0];
        let t = [0.0, 1.0];
        let u = [2.0, 2.0];
        assert_eq!(fuse_final(&s, &t, &u, 1.0).unwrap(), u.to_vec());
        assert_eq!(fuse_final(&s, &t, &u, 0.0).unwrap(), vec![1.0, 1.0]);
        assert_eq!(fuse_final(&s, &t, &u, 0.5).unwrap(), vec![1.5, 1.5]);
        assert!(fuse_final(&s, &t, &u, 1.5).is_err());
        assert!(fuse_final(&s, &t, &[1.0], 0.5).is_err());
    }
}
