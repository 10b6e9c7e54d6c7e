//! Indexed per-user histories and the on-disk dataset directory.
//!
//! Directory layout (all UTF-8, one user per line, users sorted by id):
//!
//! | file               | line format                                   |
//! |--------------------|-----------------------------------------------|
//! | `source.seq`       | `user<TAB>item,item,...`                      |
//! | `source.time`      | `user<TAB>ts,ts,...` (aligned with `.seq`)    |
//! | `target.seq`       | `user<TAB>item,item,...`                      |
//! | `target.time`      | `user<TAB>ts,ts,...`                          |
//! | `mixed.seq`        | `user<TAB>S:item,T:item,...`                  |
//! | `split.tsv`        | `user<TAB>train,items<TAB>validation<TAB>test`|
//! | `vocab_source.tsv` | `index<TAB>item` (index 1-based, 0 = padding) |
//! | `vocab_target.tsv` | `index<TAB>item`                              |
//! | `dataset.toml`     | flat metadata                                 |
//!
//! The sequence and time files are the source of truth; mixed sequences,
//! splits and vocabularies are re-derived when a directory is loaded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    build_mixed_sequence, build_sequences, filter_users, split_leave_one_out, Domain, DomainSequence,
    InteractionRecord,
};
use crate::error::{Error, Result};

/// Item vocabulary of one domain. Index 0 is reserved for padding.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_items<I: IntoIterator<Item = String>>(items: I) -> Self {
        let mut v = Vocab::default();
        for it in items {
            if !v.index.contains_key(&it) {
                v.items.push(it.clone());
                v.index.insert(it, v.items.len());
            }
        }
        v
    }

    /// Number of real items (padding excluded).
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Rows of an embedding table over this vocabulary, padding included.
    pub fn table_rows(&self) -> usize {
        self.items.len() + 1
    }

    pub fn index(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn item(&self, index: usize) -> Option<&str> {
        index.checked_sub(1).and_then(|i| self.items.get(i)).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetEvent {
    pub item: usize,
    pub role: Role,
    /// Position of this event in the user's mixed sequence.
    pub mixed_pos: usize,
}

/// One user's interactions as vocabulary indices.
///
/// `mixed` holds joint indices: source item `i` maps to `i`, target item
/// `j` to `n_source + j` (see [`Dataset::joint_target`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user_id: String,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub roles: Vec<Role>,
    pub target_pos: Vec<usize>,
    pub mixed: Vec<usize>,
}

/// Histories strictly preceding one target event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Context<'a> {
    pub source: &'a [usize],
    pub target: &'a [usize],
    pub mixed: &'a [usize],
}

impl UserHistory {
    pub fn event(&self, j: usize) -> TargetEvent {
        TargetEvent {
            item: self.target[j],
            role: self.roles[j],
            mixed_pos: self.target_pos[j],
        }
    }

    /// Everything observed before target event `j`.
    pub fn context(&self, j: usize) -> Context<'_> {
        let m = self.target_pos[j];
        Context {
            source: &self.source[..m - j],
            target: &self.target[..j],
            mixed: &self.mixed[..m],
        }
    }

    /// Number of leading training events.
    pub fn n_train(&self) -> usize {
        self.roles.iter().take_while(|r| **r == Role::Train).count()
    }

    /// All interactions before the first held-out target event.
    pub fn training_view(&self) -> Context<'_> {
        let n = self.n_train();
        if n == self.target.len() {
            Context {
                source: &self.source,
                target: &self.target,
                mixed: &self.mixed,
            }
        } else {
            self.context(n)
        }
    }

    /// Index of the target event holding `role`, if it survived vocabulary
    /// filtering.
    pub fn label_index(&self, role: Role) -> Option<usize> {
        self.roles.iter().position(|r| *r == role)
    }

    /// Target events usable as training labels: at least one earlier
    /// target interaction is required as history.
    pub fn train_labels(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.n_train()).filter(move |&j| self.roles[j] == Role::Train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub max_len: usize,
    pub min_interactions: usize,
    pub users: usize,
    pub source_items: usize,
    pub target_items: usize,
    pub dropped_heldout: usize,
}

/// Raw per-user domain sequences of the filtered users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub source: BTreeMap<String, DomainSequence>,
    pub target: BTreeMap<String, DomainSequence>,
    pub min_interactions: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
    pub users: Vec<UserHistory>,
    pub max_len: usize,
    /// Held-out target events whose item never occurs in training.
    pub dropped_heldout: usize,
}

impl Corpus {
    pub fn from_records(
        source: &[InteractionRecord],
        target: &[InteractionRecord],
        min_interactions: usize,
        max_len: usize,
    ) -> Result<Self> {
        if min_interactions < 1 {
            return Err(Error::invalid("min_interactions must be at least 1"));
        }
        if max_len < 3 {
            return Err(Error::invalid("max_len must be at least 3"));
        }
        let users = filter_users(source, target, min_interactions);
        let truncate = |mut m: BTreeMap<String, DomainSequence>| {
            for seq in m.values_mut() {
                if seq.len() > max_len {
                    let cut = seq.len() - max_len;
                    seq.items.drain(..cut);
                    seq.timestamps.drain(..cut);
                }
            }
            m
        };
        let mut corpus = Corpus {
            source: truncate(build_sequences(source, Domain::Source, &users)),
            target: truncate(build_sequences(target, Domain::Target, &users)),
            min_interactions,
            max_len,
        };
        let short: Vec<String> = corpus
            .target
            .iter()
            .filter(|(_, s)| s.len() < 3)
            .map(|(u, _)| u.clone())
            .collect();
        if !short.is_empty() {
            log::warn!("dropping {} users with fewer than 3 target interactions", short.len());
            for u in short {
                corpus.source.remove(&u);
                corpus.target.remove(&u);
            }
        }
        Ok(corpus)
    }

    pub fn users(&self) -> usize {
        self.target.len()
    }

    /// Index the corpus. The target vocabulary comes from training prefixes
    /// only; held-out events on unseen items are dropped and counted.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let source_vocab = Vocab::from_items(self.source.values().flat_map(|s| s.items.iter().cloned()));
        let mut target_train = Vec::new();
        let mut splits = BTreeMap::new();
        for (u, seq) in &self.target {
            let split = split_leave_one_out(seq)?;
            target_train.extend(split.train_items.iter().cloned());
            splits.insert(u.clone(), split);
        }
        let target_vocab = Vocab::from_items(target_train);
        let n_source = source_vocab.len();

        let mut users = Vec::with_capacity(self.target.len());
        let mut dropped = 0;
        for (u, seq_t) in &self.target {
            let seq_s = self
                .source
                .get(u)
                .ok_or_else(|| Error::invalid(format!("user {u} has no source sequence")))?;
            let mixed = build_mixed_sequence(seq_s, seq_t)?;
            let n_t = seq_t.len();
            let mut h = UserHistory {
                user_id: u.clone(),
                source: Vec::with_capacity(seq_s.len()),
                target: Vec::with_capacity(n_t),
                roles: Vec::with_capacity(n_t),
                target_pos: Vec::with_capacity(n_t),
                mixed: Vec::with_capacity(mixed.len()),
            };
            let mut t_seen = 0;
            for (item, domain) in &mixed.items {
                match domain {
                    Domain::Source => {
                        let idx = source_vocab.index(item).expect("source vocab covers all source items");
                        h.source.push(idx);
                        h.mixed.push(idx);
                    }
                    Domain::Target => {
                        let role = match n_t - 1 - t_seen {
                            0 => Role::Test,
                            1 => Role::Validation,
                            _ => Role::Train,
                        };
                        t_seen += 1;
                        match target_vocab.index(item) {
                            Some(idx) => {
                                h.target_pos.push(h.mixed.len());
                                h.target.push(idx);
                                h.roles.push(role);
                                h.mixed.push(n_source + idx);
                            }
                            None => dropped += 1,
                        }
                    }
                }
            }
            users.push(h);
        }
        if dropped > 0 {
            log::info!("{dropped} held-out target events reference items unseen in training; dropped");
        }
        Ok(Dataset {
            source_vocab,
            target_vocab,
            users,
            max_len: self.max_len,
            dropped_heldout: dropped,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        for (domain, seqs) in [("source", &self.source), ("target", &self.target)] {
            let mut items = String::new();
            let mut times = String::new();
            for (u, s) in seqs {
                let _ = writeln!(items, "{u}\t{}", s.items.join(","));
                let ts: Vec<String> = s.timestamps.iter().map(i64::to_string).collect();
                let _ = writeln!(times, "{u}\t{}", ts.join(","));
            }
            put(&format!("{domain}.seq"), items)?;
            put(&format!("{domain}.time"), times)?;
        }

        let mut mixed = String::new();
        let mut split = String::new();
        for (u, t) in &self.target {
            let m = build_mixed_sequence(&self.source[u], t)?;
            let parts: Vec<String> = m.items.iter().map(|(i, d)| format!("{}:{i}", d.tag())).collect();
            let _ = writeln!(mixed, "{u}\t{}", parts.join(","));
            let sp = split_leave_one_out(t)?;
            let _ = writeln!(
                split,
                "{u}\t{}\t{}\t{}",
                sp.train_items.join(","),
                sp.validation_item,
                sp.test_item
            );
        }
        put("mixed.seq", mixed)?;
        put("split.tsv", split)?;

        let ds = self.to_dataset()?;
        for (name, vocab) in [("vocab_source.tsv", &ds.source_vocab), ("vocab_target.tsv", &ds.target_vocab)] {
            let mut body = String::new();
            for i in 1..=vocab.len() {
                let _ = writeln!(body, "{i}\t{}", vocab.item(i).unwrap());
            }
            put(name, body)?;
        }
        let meta = DatasetMeta {
            max_len: self.max_len,
            min_interactions: self.min_interactions,
            users: self.users(),
            source_items: ds.source_vocab.len(),
            target_items: ds.target_vocab.len(),
            dropped_heldout: ds.dropped_heldout,
        };
        put(
            "dataset.toml",
            toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?,
        )
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("dataset.toml");
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        let source = read_domain(dir, Domain::Source)?;
        let target = read_domain(dir, Domain::Target)?;
        let su: BTreeSet<&String> = source.keys().collect();
        let tu: BTreeSet<&String> = target.keys().collect();
        if su != tu {
            return Err(Error::Format("source and target files list different users".into()));
        }
        Ok(Corpus {
            source,
            target,
            min_interactions: meta.min_interactions,
            max_len: meta.max_len,
        })
    }

    /// SHA-256 over the sequence and time files, in a fixed order.
    pub fn content_hash(dir: impl AsRef<Path>) -> Result<String> {
        let dir = dir.as_ref();
        let mut hasher = Sha256::new();
        for name in ["source.seq", "source.time", "target.seq", "target.time"] {
            let p = dir.join(name);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            hasher.update(name.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

fn read_domain(dir: &Path, domain: Domain) -> Result<BTreeMap<String, DomainSequence>> {
    let read = |name: String| -> Result<Vec<(String, Vec<String>, usize)>> {
        let p = dir.join(&name);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (u, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: p.clone(),
                line: n + 1,
                msg: "expected user<TAB>values".into(),
            })?;
            let vals = if rest.is_empty() {
                Vec::new()
            } else {
                rest.split(',').map(str::to_string).collect()
            };
            rows.push((u.to_string(), vals, n + 1));
        }
        Ok(rows)
    };
    let items = read(format!("{domain}.seq"))?;
    let times = read(format!("{domain}.time"))?;
    let time_path = dir.join(format!("{domain}.time"));
    if items.len() != times.len() {
        return Err(Error::Format(format!("{domain}.seq and {domain}.time differ in line count")));
    }
    let mut out = BTreeMap::new();
    for ((u, its, _), (u2, ts, line)) in items.into_iter().zip(times) {
        if u != u2 || its.len() != ts.len() {
            return Err(Error::Parse {
                path: time_path.clone(),
                line,
                msg: format!("misaligned with {domain}.seq"),
            });
        }
        let timestamps = ts
            .iter()
            .map(|t| t.parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: time_path.clone(),
                line,
                msg: e.to_string(),
            })?;
        if timestamps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Parse {
                path: time_path.clone(),
                line,
                msg: "timestamps are not sorted".into(),
            });
        }
        out.insert(
            u.clone(),
            DomainSequence {
                user_id: u,
                domain,
                items: its,
                timestamps,
            },
        );
    }
    Ok(out)
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Corpus::read(dir)?.to_dataset()
    }

    /// Rows of the joint (mixed-domain) embedding table, padding included.
    pub fn mixed_table_rows(&self) -> usize {
        1 + self.source_vocab.len() + self.target_vocab.len()
    }

    pub fn joint_target(&self, target_index: usize) -> usize {
        self.source_vocab.len() + target_index
    }

    pub fn is_target_joint(&self, joint: usize) -> bool {
        joint > self.source_vocab.len()
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.users.iter().position(|u| u.user_id == user_id)
    }
}
