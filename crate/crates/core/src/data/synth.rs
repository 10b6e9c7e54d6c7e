//! Seeded synthetic cross-domain interaction logs.
//!
//! Every user owns one latent interest vector that drives item choice in
//! both domains, so cross-domain signal is planted by construction. The
//! vector drifts slowly over time, which makes the chronological order of
//! the merged sequence informative as well.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::Corpus;
use super::{Domain, InteractionRecord, DEFAULT_MAX_LEN, DEFAULT_MIN_INTERACTIONS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub items_per_domain: usize,
    /// Inclusive range of total interactions per user.
    pub min_len: usize,
    pub max_len: usize,
    pub latent_dim: usize,
    /// Probability weight of uniform picks: a draw is uniform with
    /// probability `noise / (1 + noise)`. `inf` removes all structure.
    pub noise_level: f64,
    pub temperature: f64,
    /// Per-step innovation of the user's interest vector, in `[0, 1)`.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items_per_domain: 300,
            min_len: 10,
            max_len: 20,
            latent_dim: 16,
            noise_level: 0.0,
            temperature: 0.5,
            drift: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items_per_domain == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("users, items and latent_dim must be positive"));
        }
        if self.min_len < 2 * DEFAULT_MIN_INTERACTIONS || self.min_len > self.max_len {
            return Err(Error::invalid(format!(
                "sequence length range {}..={} is degenerate (need {} <= min <= max)",
                self.min_len,
                self.max_len,
                2 * DEFAULT_MIN_INTERACTIONS
            )));
        }
        if self.noise_level.is_nan() || self.noise_level < 0.0 {
            return Err(Error::invalid("noise_level must be >= 0"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.drift) {
            return Err(Error::invalid("drift must lie in [0, 1)"));
        }
        Ok(())
    }

    fn uniform_probability(&self) -> f64 {
        if self.noise_level.is_infinite() {
            1.0
        } else {
            self.noise_level / (1.0 + self.noise_level)
        }
    }
}

/// Raw interaction logs for both domains.
pub fn generate_records(cfg: &SynthConfig) -> Result<(Vec<InteractionRecord>, Vec<InteractionRecord>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.latent_dim;
    let item_scale = 1.0 / (dim as f64).sqrt();
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut item_latents = Vec::with_capacity(2);
    for _ in 0..2 {
        let m: Vec<Vec<f64>> = (0..cfg.items_per_domain)
            .map(|_| (0..dim).map(|_| gauss(&mut rng) * item_scale).collect())
            .collect();
        item_latents.push(m);
    }

    let p_uniform = cfg.uniform_probability();
    let keep = (1.0 - cfg.drift * cfg.drift).sqrt();
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut logits = vec![0.0; cfg.items_per_domain];

    for u in 0..cfg.users {
        let user_id = format!("u{u:04}");
        let mut interest: Vec<f64> = (0..dim).map(|_| gauss(&mut rng)).collect();
        let rate: f64 = rng.random_range(0.3..0.7);
        let len = rng.random_range(cfg.min_len..=cfg.max_len);

        let mut is_target: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < rate).collect();
        rebalance(&mut is_target, &mut rng);

        let mut ts: i64 = rng.random_range(0..1000);
        for &tgt in &is_target {
            let d = usize::from(tgt);
            let item = if rng.random::<f64>() < p_uniform {
                rng.random_range(0..cfg.items_per_domain)
            } else {
                for (l, v) in logits.iter_mut().zip(&item_latents[d]) {
                    *l = crate::tensor::dot(v, &interest) / cfg.temperature;
                }
                sample_softmax(&logits, &mut rng)
            };
            let (domain, prefix, sink) = if tgt {
                (Domain::Target, 't', &mut target)
            } else {
                (Domain::Source, 's', &mut source)
            };
            sink.push(InteractionRecord {
                user_id: user_id.clone(),
                item_id: format!("{prefix}{item:04}"),
                timestamp: ts,
                domain,
            });
            ts += 1 + rng.random_range(0..60);
            if cfg.drift > 0.0 {
                for x in interest.iter_mut() {
                    *x = keep * *x + cfg.drift * gauss(&mut rng);
                }
            }
        }
    }
    Ok((source, target))
}

/// Seeded synthetic dataset, filtered and truncated like a real one.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Corpus> {
    let (s, t) = generate_records(cfg)?;
    Corpus::from_records(&s, &t, DEFAULT_MIN_INTERACTIONS, DEFAULT_MAX_LEN)
}

/// Flips domain labels until each domain holds at least the minimum count.
fn rebalance(is_target: &mut [bool], rng: &mut ChaCha8Rng) {
    let min = DEFAULT_MIN_INTERACTIONS;
    loop {
        let n_t = is_target.iter().filter(|&&t| t).count();
        let n_s = is_target.len() - n_t;
        let want_target = if n_t < min {
            true
        } else if n_s < min {
            false
        } else {
            return;
        };
        let candidates: Vec<usize> = (0..is_target.len()).filter(|&i| is_target[i] != want_target).collect();
        let pick = candidates[rng.random_range(0..candidates.len())];
        is_target[pick] = want_target;
    }
}

fn sample_softmax(logits: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let mut r = rng.random::<f64>() * total;
    for (i, l) in logits.iter().enumerate() {
        r -= (l - max).exp();
        if r <= 0.0 {
            return i;
        }
    }
    logits.len() - 1
}
