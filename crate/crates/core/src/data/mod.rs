//! Interaction ingestion, user filtering, chronological sequences and
//! leave-one-out splits.

mod dataset;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{Dataset, Role, TargetEvent, UserHistory, Vocab};
pub use dataset::{Context, Corpus, DatasetMeta};
pub use synth::{generate_records, generate_synthetic, SynthConfig};

/// Longest sequence kept per user; older interactions are truncated first.
pub const DEFAULT_MAX_LEN: usize = 200;
pub const DEFAULT_MIN_INTERACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> char {
        match self {
            Domain::Source => 'S',
            Domain::Target => 'T',
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => f.write_str("source"),
            Domain::Target => f.write_str("target"),
        }
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" | "S" => Ok(Domain::Source),
            "target" | "T" => Ok(Domain::Target),
            other => Err(Error::invalid(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSequence {
    pub user_id: String,
    pub domain: Domain,
    pub items: Vec<String>,
    pub timestamps: Vec<i64>,
}

impl DomainSequence {
    pub fn new(user_id: impl Into<String>, domain: Domain, entries: &[(&str, i64)]) -> Self {
        DomainSequence {
            user_id: user_id.into(),
            domain,
            items: entries.iter().map(|(i, _)| i.to_string()).collect(),
            timestamps: entries.iter().map(|&(_, t)| t).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedSequence {
    pub user_id: String,
    pub items: Vec<(String, Domain)>,
    pub timestamps: Vec<i64>,
}

impl MixedSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items of one domain, in mixed order.
    pub fn project(&self, domain: Domain) -> Vec<&str> {
        self.items
            .iter()
            .filter(|(_, d)| *d == domain)
            .map(|(i, _)| i.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_items: Vec<String>,
    pub validation_item: String,
    pub test_item: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Skip the first line.
    pub header: bool,
}

/// Reads `user, item, timestamp` rows separated by tabs or commas.
pub fn load_interactions(
    path: impl AsRef<Path>,
    domain: Domain,
    opts: LoadOptions,
) -> Result<Vec<InteractionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if opts.header && lineno == 0 {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let cols: Vec<&str> = line.split(sep).map(str::trim).collect();
        if cols.len() != 3 {
            return Err(parse_err(format!("expected 3 columns, found {}", cols.len())));
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        if cols[1].contains(',') || cols[1].contains(':') {
            return Err(parse_err(format!("item id {:?} contains a reserved character", cols[1])));
        }
        let timestamp: i64 = cols[2]
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp {:?} in row {:?}", cols[2], line)))?;
        if timestamp < 0 {
            return Err(parse_err(format!("negative timestamp {timestamp}")));
        }
        out.push(InteractionRecord {
            user_id: cols[0].to_string(),
            item_id: cols[1].to_string(),
            timestamp,
            domain,
        });
    }
    if out.is_empty() {
        log::warn!("{}: no interactions", path.display());
    }
    Ok(out)
}

/// Users with at least `min_interactions` records in both domains.
pub fn filter_users(
    source: &[InteractionRecord],
    target: &[InteractionRecord],
    min_interactions: usize,
) -> BTreeSet<String> {
    fn count(records: &[InteractionRecord]) -> HashMap<&str, usize> {
        let mut m: HashMap<&str, usize> = HashMap::new();
        for r in records {
            *m.entry(r.user_id.as_str()).or_default() += 1;
        }
        m
    }
    let (cs, ct) = (count(source), count(target));
    cs.iter()
        .filter(|(u, &n)| n >= min_interactions && ct.get(*u).is_some_and(|&m| m >= min_interactions))
        .map(|(u, _)| u.to_string())
        .collect()
}

/// Groups records of `users` into per-user sequences sorted by timestamp.
/// Ties keep file order.
pub fn build_sequences(
    records: &[InteractionRecord],
    domain: Domain,
    users: &BTreeSet<String>,
) -> BTreeMap<String, DomainSequence> {
    let mut grouped: BTreeMap<String, Vec<&InteractionRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.domain == domain && users.contains(&r.user_id)) {
        grouped.entry(r.user_id.clone()).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(user, mut rs)| {
            rs.sort_by_key(|r| r.timestamp);
            let seq = DomainSequence {
                user_id: user.clone(),
                domain,
                items: rs.iter().map(|r| r.item_id.clone()).collect(),
                timestamps: rs.iter().map(|r| r.timestamp).collect(),
            };
            (user, seq)
        })
        .collect()
}

/// Stable merge by timestamp; on equal timestamps the source item comes first.
pub fn build_mixed_sequence(seq_s: &DomainSequence, seq_t: &DomainSequence) -> Result<MixedSequence> {
    if seq_s.user_id != seq_t.user_id {
        return Err(Error::UserMismatch(seq_s.user_id.clone(), seq_t.user_id.clone()));
    }
    let n = seq_s.len() + seq_t.len();
    let mut items = Vec::with_capacity(n);
    let mut timestamps = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < seq_s.len() || j < seq_t.len() {
        let take_source = j >= seq_t.len() || (i < seq_s.len() && seq_s.timestamps[i] <= seq_t.timestamps[j]);
        if take_source {
            items.push((seq_s.items[i].clone(), Domain::Source));
            timestamps.push(seq_s.timestamps[i]);
            i += 1;
        } else {
            items.push((seq_t.items[j].clone(), Domain::Target));
            timestamps.push(seq_t.timestamps[j]);
            j += 1;
        }
    }
    Ok(MixedSequence {
        user_id: seq_s.user_id.clone(),
        items,
        timestamps,
    })
}

/// Last target interaction is the test item, the one before it validation.
pub fn split_leave_one_out(seq_t: &DomainSequence) -> Result<SplitSpec> {
    let n = seq_t.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "user {} has {n} target interactions; leave-one-out needs at least 3",
            seq_t.user_id
        )));
    }
    Ok(SplitSpec {
        train_items: seq_t.items[..n - 2].to_vec(),
        validation_item: seq_t.items[n - 2].clone(),
        test_item: seq_t.items[n - 1].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_tab_row() {
        let f = write_tmp("u1\ti9\t100\n");
        let recs = load_interactions(f.path(), Domain::Source, LoadOptions::default()).unwrap();
        assert_eq!(
            recs,
            vec![InteractionRecord {
                user_id: "u1".into(),
                item_id: "i9".into(),
                timestamp: 100,
                domain: Domain::Source
            }]
        );
    }

    #[test]
    fn parses_csv_with_header() {
        let f = write_tmp("user,item,ts\nu1,i9,5\n");
        let recs = load_interactions(f.path(), Domain::Target, LoadOptions { header: true }).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].domain, Domain::Target);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let f = write_tmp("");
        assert!(load_interactions(f.path(), Domain::Source, LoadOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn malformed_row_names_line() {
        let f = write_tmp("u0\ti1\t1\nu1\ti9\tabc\n");
        let err = load_interactions(f.path(), Domain::Source, LoadOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn recs(user: &str, n: usize, domain: Domain) -> Vec<InteractionRecord> {
        (0..n)
            .map(|i| InteractionRecord {
                user_id: user.into(),
                item_id: format!("i{i}"),
                timestamp: i as i64,
                domain,
            })
            .collect()
    }

    #[test]
    fn filter_requires_both_domains() {
        let mut s = recs("a", 3, Domain::Source);
        s.extend(recs("b", 5, Domain::Source));
        let mut t = recs("a", 3, Domain::Target);
        t.extend(recs("b", 2, Domain::Target));
        let kept = filter_users(&s, &t, 3);
        assert!(kept.contains("a"));
        assert!(!kept.contains("b"));
        assert_eq!(filter_users(&s, &t, 1).len(), 2);
    }

    #[test]
    fn mixed_merge_examples() {
        let s = DomainSequence::new("u", Domain::Source, &[("a", 1), ("b", 5)]);
        let t = DomainSequence::new("u", Domain::Target, &[("x", 3)]);
        let m = build_mixed_sequence(&s, &t).unwrap();
        let ids: Vec<&str> = m.items.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, ["a", "x", "b"]);

        let s = DomainSequence::new("u", Domain::Source, &[("a", 2)]);
        let t = DomainSequence::new("u", Domain::Target, &[("x", 2)]);
        let m = build_mixed_sequence(&s, &t).unwrap();
        assert_eq!(m.items, vec![("a".to_string(), Domain::Source), ("x".to_string(), Domain::Target)]);

        let s = DomainSequence::new("u", Domain::Source, &[]);
        let t = DomainSequence::new("u", Domain::Target, &[("x", 1)]);
        assert_eq!(build_mixed_sequence(&s, &t).unwrap().len(), 1);
    }

    #[test]
    fn mixed_merge_rejects_user_mismatch() {
        let s = DomainSequence::new("u", Domain::Source, &[("a", 1)]);
        let t = DomainSequence::new("v", Domain::Target, &[("x", 1)]);
        assert!(matches!(build_mixed_sequence(&s, &t), Err(Error::UserMismatch(..))));
    }

    #[test]
    fn leave_one_out_examples() {
        let t = DomainSequence::new("u", Domain::Target, &[("t1", 1), ("t2", 2), ("t3", 3)]);
        let sp = split_leave_one_out(&t).unwrap();
        assert_eq!(sp.train_items, vec!["t1"]);
        assert_eq!(sp.validation_item, "t2");
        assert_eq!(sp.test_item, "t3");

        let t = DomainSequence::new("u", Domain::Target, &[("t1", 1), ("t2", 2), ("t3", 3), ("t4", 4), ("t5", 5)]);
        let sp = split_leave_one_out(&t).unwrap();
        assert_eq!(sp.train_items, vec!["t1", "t2", "t3"]);
        assert_eq!((sp.validation_item.as_str(), sp.test_item.as_str()), ("t4", "t5"));

        let t = DomainSequence::new("u", Domain::Target, &[("t1", 1), ("t2", 2)]);
        assert!(split_leave_one_out(&t).is_err());
    }

    fn sorted_seq(domain: Domain, prefix: &'static str) -> impl Strategy<Value = DomainSequence> {
        prop::collection::vec((0u8..20, 0i64..50), 0..15).prop_map(move |mut v| {
            v.sort_by_key(|&(_, t)| t);
            DomainSequence {
                user_id: "u".into(),
                domain,
                items: v.iter().map(|(i, _)| format!("{prefix}{i}")).collect(),
                timestamps: v.iter().map(|&(_, t)| t).collect(),
            }
        })
    }

    proptest! {
        #[test]
        fn merge_preserves_multiset_and_projection(s in sorted_seq(Domain::Source, "s"), t in sorted_seq(Domain::Target, "t")) {
            let m = build_mixed_sequence(&s, &t).unwrap();
            prop_assert_eq!(m.len(), s.len() + t.len());
            prop_assert_eq!(m.project(Domain::Source), s.items.iter().map(String::as_str).collect::<Vec<_>>());
            prop_assert_eq!(m.project(Domain::Target), t.items.iter().map(String::as_str).collect::<Vec<_>>());
            prop_assert!(m.timestamps.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn split_reassembles(items in prop::collection::vec(0u8..30, 3..20)) {
            let entries: Vec<(String, i64)> = items.iter().enumerate().map(|(k, i)| (format!("t{i}"), k as i64)).collect();
            let refs: Vec<(&str, i64)> = entries.iter().map(|(i, t)| (i.as_str(), *t)).collect();
            let seq = DomainSequence::new("u", Domain::Target, &refs);
            let sp = split_leave_one_out(&seq).unwrap();
            let mut all = sp.train_items.clone();
            all.push(sp.validation_item);
            all.push(sp.test_item);
            prop_assert_eq!(all, seq.items);
        }
    }
}
