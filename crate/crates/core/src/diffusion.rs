//! Noise schedule, forward injection, the mixed-conditioned attention
//! denoiser and the deterministic reverse chain.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Mat;

pub const DEFAULT_STEPS: usize = 32;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Linear β schedule with cumulative products. Arrays are indexed by
/// `t - 1` for steps `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `ᾱ_t` for `1 <= t <= T`.
    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    /// Deterministic move from step `t` to `t − 1` given the denoiser's
    /// estimate `x0` of the clean state: the mean of `q(x_{t−1} | x_t, x0)`,
    /// `c0·x0 + ct·x_t`. No fresh noise is drawn. At `t = 1` this is `x0`
    /// exactly.
    pub fn posterior_mean(&self, x0: &[f64], xt: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_step(t)?;
        if x0.len() != xt.len() {
            return Err(Error::Shape(format!("estimate width {} vs state width {}", x0.len(), xt.len())));
        }
        if t == 1 {
            return Ok(x0.to_vec());
        }
        let (c0, ct) = self.posterior_coefficients(t)?;
        Ok(x0.iter().zip(xt).map(|(a, b)| c0 * a + ct * b).collect())
    }

    /// `(√ᾱ_{t−1}·β_t / (1 − ᾱ_t), √α_t·(1 − ᾱ_{t−1}) / (1 − ᾱ_t))`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t)?;
        let ab = self.alpha_bar[t - 1];
        let ab_prev = if t == 1 { 1.0 } else { self.alpha_bar[t - 2] };
        let beta = self.beta[t - 1];
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = self.alpha[t - 1].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok((c0, ct))
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("diffusion step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::invalid("diffusion needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_start <= beta_end < 1 (got {beta_start}, {beta_end})"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(DiffusionSchedule { beta, alpha, alpha_bar })
}

/// `h̄_t = √ᾱ_t · h + √(1 − ᾱ_t) · z`.
pub fn forward_noise(h: &[f64], z: &[f64], t: usize, schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    if h.len() != z.len() {
        return Err(Error::Shape(format!("state width {} vs noise width {}", h.len(), z.len())));
    }
    Ok(mix(h, z, schedule.alpha_bar_at(t)?))
}

/// The affine combination of [`forward_noise`] for an explicit `ᾱ`.
pub fn mix(h: &[f64], z: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    h.iter().zip(z).map(|(x, n)| a * x + b * n).collect()
}

/// Sinusoidal embedding of step `t` with width `d`.
pub fn step_embedding(t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d.div_ceil(2) {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        let arg = t as f64 * freq;
        out[2 * i] = arg.sin();
        if 2 * i + 1 < d {
            out[2 * i + 1] = arg.cos();
        }
    }
    out
}

/// Attention denoiser over the token set `[x + tag_D, condition, t_e]`.
///
/// Tokens are layer-normalised, the noised-state slot attends over all
/// three, and the result passes through a feed-forward projection added
/// back onto `x`. The output projection starts at zero, so a fresh
/// denoiser is the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub dim: usize,
    pub tag: ParamId,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wf: ParamId,
    pub bf: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

/// Nodes of one denoiser application.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserNodes {
    pub out: NodeId,
    /// `1 × 3` attention weights of the noised-state slot.
    pub attention: NodeId,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, dim: usize, rng: &mut R) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let mut p = |name: &str, m: Mat| params.add(format!("{prefix}.{name}"), m);
        Denoiser {
            dim,
            tag: p("domain_tag", Mat::randn(2, dim, 0.1, rng)),
            ln_g: p("ln_g", Mat::filled(1, dim, 1.0)),
            ln_b: p("ln_b", Mat::zeros(1, dim)),
            wq: p("wq", Mat::randn(dim, dim, std, rng)),
            wk: p("wk", Mat::randn(dim, dim, std, rng)),
            wv: p("wv", Mat::randn(dim, dim, std, rng)),
            wf: p("wf", Mat::randn(dim, dim, std, rng)),
            bf: p("bf", Mat::zeros(1, dim)),
            wo: p("wo", Mat::zeros(dim, dim)),
            bo: p("bo", Mat::zeros(1, dim)),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.tag, self.ln_g, self.ln_b, self.wq, self.wk, self.wv, self.wf, self.bf, self.wo, self.bo,
        ]
    }

    /// Records `f_θ(x, cond, t)` for domain `domain` on `g`.
    pub fn forward(&self, g: &mut Graph, x: NodeId, cond: NodeId, t: usize, domain: Domain) -> DenoiserNodes {
        let tag_table = g.param(self.tag);
        let tag = g.gather(tag_table, &[domain_row(domain)]);
        let x_tok = g.add(x, tag);
        let te = g.constant(Mat::row_vector(step_embedding(t, self.dim)));
        let tokens = g.stack(&[x_tok, cond, te]);
        let (lg, lb) = (g.param(self.ln_g), g.param(self.ln_b));
        let a = g.layer_norm(tokens, lg, lb);
        let a0 = g.select_row(a, 0);
        let (wq, wk, wv) = (g.param(self.wq), g.param(self.wk), g.param(self.wv));
        let q = g.matmul(a0, wq);
        let k = g.matmul(a, wk);
        let v = g.matmul(a, wv);
        let s = g.matmul_t(q, k);
        let s = g.scale(s, 1.0 / (self.dim as f64).sqrt());
        let attention = g.softmax(s);
        let o = g.matmul(attention, v);
        let (wf, bf, wo, bo) = (g.param(self.wf), g.param(self.bf), g.param(self.wo), g.param(self.bo));
        let f = g.matmul(o, wf);
        let f = g.add_row(f, bf);
        let f = g.relu(f);
        let f = g.matmul(f, wo);
        let f = g.add_row(f, bo);
        DenoiserNodes {
            out: g.add(x, f),
            attention,
        }
    }

    /// One reverse step `ĥ_{t-1} = f_θ(ĥ_t, h^M, t)`.
    pub fn denoise_step(&self, params: &ParamSet, x: &[f64], cond: &[f64], t: usize, domain: Domain) -> Result<Vec<f64>> {
        Ok(self.step_with_attention(params, x, cond, t, domain)?.0)
    }

    /// [`Denoiser::denoise_step`] plus the attention weights it used.
    pub fn step_with_attention(
        &self,
        params: &ParamSet,
        x: &[f64],
        cond: &[f64],
        t: usize,
        domain: Domain,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.dim || cond.len() != self.dim {
            return Err(Error::Shape(format!(
                "denoiser width {} got state {} and condition {}",
                self.dim,
                x.len(),
                cond.len()
            )));
        }
        if t == 0 {
            return Err(Error::invalid("denoiser step must be >= 1"));
        }
        let mut g = Graph::new(params);
        let xn = g.constant(Mat::row_vector(x.to_vec()));
        let cn = g.constant(Mat::row_vector(cond.to_vec()));
        let nodes = self.forward(&mut g, xn, cn, t, domain);
        Ok((g.value(nodes.out).data.clone(), g.value(nodes.attention).data.clone()))
    }
}

fn domain_row(domain: Domain) -> usize {
    match domain {
        Domain::Source => 0,
        Domain::Target => 1,
    }
}

/// Applies `step(state, t)` for `t = steps, …, 1` starting from `start`.
/// No fresh noise enters between steps.
pub fn reverse_chain(
    start: &[f64],
    steps: usize,
    mut step: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut x = start.to_vec();
    for t in (1..=steps).rev() {
        x = step(&x, t)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("reverse chain state at step {t}")));
        }
    }
    Ok(x)
}

/// Mean over the batch of `‖h − ĥ‖²`.
pub fn diffusion_loss(h: &[Vec<f64>], h_hat: &[Vec<f64>]) -> Result<f64> {
    if h.len() != h_hat.len() {
        return Err(Error::Shape(format!("{} targets vs {} reconstructions", h.len(), h_hat.len())));
    }
    if h.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (a, b) in h.iter().zip(h_hat) {
        if a.len() != b.len() {
            return Err(Error::Shape(format!("width {} vs {}", a.len(), b.len())));
        }
        total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total / h.len() as f64)
}
