//! Retrieval database of position-filtered mixed-domain segments and the
//! retrieved noise distribution built from its nearest rows.
//!
//! A candidate segment is a prefix of a user's mixed sequence ending at a
//! target-domain item, windowed to its last `window` items. Its embedding is
//! a low-pass weighted sum of the pretrained mixed-domain item embeddings
//! that emphasises recent behaviour.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Mat};

pub const DEFAULT_C: f64 = 1.5;
pub const DEFAULT_N: f64 = 2.0;
pub const DEFAULT_WINDOW: usize = 200;
pub const DEFAULT_K: usize = 10;

const MAGIC: &[u8; 4] = b"HRDB";
const VERSION: u32 = 1;

static WARNED_K: AtomicBool = AtomicBool::new(false);
static WARNED_SINGLE: AtomicBool = AtomicBool::new(false);

/// A windowed mixed-sequence prefix ending at a target-domain item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSegment {
    pub user_id: String,
    /// Joint item indices at positions `start..=end`.
    pub items: Vec<usize>,
    /// 1-based end position `l` in the mixed sequence.
    pub end: usize,
    /// 1-based window start `k = max(1, l - window + 1)`.
    pub start: usize,
}

/// Every candidate of one mixed sequence. Joint indices above `n_source`
/// are target-domain items.
pub fn extract_candidates(user_id: &str, mixed: &[usize], n_source: usize, window: usize) -> Vec<CandidateSegment> {
    let window = window.max(1);
    (2..=mixed.len())
        .filter(|&l| mixed[l - 1] > n_source)
        .map(|l| {
            let start = if l > window { l - window + 1 } else { 1 };
            CandidateSegment {
                user_id: user_id.to_string(),
                items: mixed[start - 1..l].to_vec(),
                end: l,
                start,
            }
        })
        .collect()
}

/// Position-aware low-pass weight `c - 1 / (1 + (j / (l - j + 1))^n)` of
/// the item at 1-based position `j` in a segment spanning `k..=l`.
pub fn lowpass_weight(j: usize, l: usize, k: usize, c: f64, n: f64) -> f64 {
    debug_assert!(k <= j && j <= l, "position {j} outside segment {k}..={l}");
    let ratio = j as f64 / (l - j + 1) as f64;
    c - 1.0 / (1.0 + ratio.powf(n))
}

/// `e_d = Σ_{j=k}^{l} weight(j) · e(i_j)` over the mixed item table.
pub fn embed_candidate(seg: &CandidateSegment, table: &Mat, c: f64, n: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; table.cols];
    for (offset, &item) in seg.items.iter().enumerate() {
        if item == 0 || item >= table.rows {
            return Err(Error::OutOfVocabulary(format!(
                "mixed item index {item} in segment of user {} has no embedding",
                seg.user_id
            )));
        }
        let w = lowpass_weight(seg.start + offset, seg.end, seg.start, c, n);
        for (o, e) in out.iter_mut().zip(table.row(item)) {
            *o += w * e;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub user_id: String,
    /// 1-based end position of the segment in the user's mixed sequence.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalDatabase {
    pub c: f64,
    pub n: f64,
    pub window: usize,
    /// Raw segment embeddings, one row per candidate.
    pub raw: Mat,
    /// Unit-normalised copies used for cosine search (zero rows stay zero).
    pub normed: Mat,
    pub provenance: Vec<Provenance>,
}

impl RetrievalDatabase {
    pub fn rows(&self) -> usize {
        self.raw.rows
    }

    pub fn dim(&self) -> usize {
        self.raw.cols
    }

    /// Writes the binary container: magic, version, header, raw matrix,
    /// normalised matrix, provenance table (all little-endian).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut buf = Vec::with_capacity(64 + 16 * self.raw.data.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        buf.extend_from_slice(&self.c.to_le_bytes());
        buf.extend_from_slice(&self.n.to_le_bytes());
        buf.extend_from_slice(&(self.window as u64).to_le_bytes());
        for x in self.raw.data.iter().chain(&self.normed.data) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for p in &self.provenance {
            buf.extend_from_slice(&(p.end as u64).to_le_bytes());
            buf.extend_from_slice(&(p.user_id.len() as u32).to_le_bytes());
            buf.extend_from_slice(p.user_id.as_bytes());
        }
        w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(f).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(4)? != MAGIC {
            return Err(Error::Format(format!("{}: not a retrieval database", path.display())));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("{}: unsupported database version {version}", path.display())));
        }
        let rows = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let c = r.f64()?;
        let n = r.f64()?;
        let window = r.u64()? as usize;
        let count = rows
            .checked_mul(dim)
            .filter(|&x| x <= bytes.len() / 8)
            .ok_or_else(|| Error::Format(format!("{}: implausible header {rows}x{dim}", path.display())))?;
        let raw = Mat::from_vec(rows, dim, r.f64s(count)?);
        let normed = Mat::from_vec(rows, dim, r.f64s(count)?);
        let mut provenance = Vec::with_capacity(rows);
        for _ in 0..rows {
            let end = r.u64()? as usize;
            let len = r.u32()? as usize;
            let user_id = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format(format!("{}: provenance is not UTF-8", path.display())))?;
            provenance.push(Provenance { user_id, end });
        }
        if !r.done() {
            return Err(Error::Format(format!("{}: trailing bytes", path.display())));
        }
        Ok(RetrievalDatabase {
            c,
            n,
            window,
            raw,
            normed,
            provenance,
        })
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        ByteReader { bytes, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("{}: truncated at byte {}", self.path.display(), self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub(crate) fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Embeds every candidate of every `(user_id, mixed sequence)` pair.
pub fn build_database<S: AsRef<str>>(
    sequences: &[(S, &[usize])],
    n_source: usize,
    table: &Mat,
    c: f64,
    n: f64,
    window: usize,
) -> Result<RetrievalDatabase> {
    if !(c > 1.0) || !(n >= 1.0) || window == 0 {
        return Err(Error::invalid(format!(
            "filter constants need c > 1, n >= 1, window >= 1 (got c={c}, n={n}, window={window})"
        )));
    }
    let mut raw = Vec::new();
    let mut normed = Vec::new();
    let mut provenance = Vec::new();
    for (user, mixed) in sequences {
        for seg in extract_candidates(user.as_ref(), mixed, n_source, window) {
            let e = embed_candidate(&seg, table, c, n)?;
            if !e.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "segment embedding of user {} ending at {}",
                    seg.user_id, seg.end
                )));
            }
            normed.extend(crate::tensor::normalized(&e));
            raw.extend(e);
            provenance.push(Provenance {
                user_id: seg.user_id,
                end: seg.end,
            });
        }
    }
    if provenance.is_empty() {
        return Err(Error::Empty("retrieval database (no target-ending segments)".into()));
    }
    let rows = provenance.len();
    Ok(RetrievalDatabase {
        c,
        n,
        window,
        raw: Mat::from_vec(rows, table.cols, raw),
        normed: Mat::from_vec(rows, table.cols, normed),
        provenance,
    })
}

/// Row indices of the `k` rows most cosine-similar to `query`, best first,
/// ties broken by lower row index.
pub fn retrieve_topk(query: &[f64], db: &RetrievalDatabase, k: usize) -> Result<Vec<usize>> {
    retrieve_topk_filtered(query, db, k, |_| true)
}

/// As [`retrieve_topk`], restricted to rows for which `keep` holds.
pub fn retrieve_topk_filtered(
    query: &[f64],
    db: &RetrievalDatabase,
    k: usize,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if query.len() != db.dim() {
        return Err(Error::Shape(format!("query width {} vs database width {}", query.len(), db.dim())));
    }
    let qn = norm(query);
    let inv = if qn > 0.0 { 1.0 / qn } else { 0.0 };
    let mut scored: Vec<(f64, usize)> = (0..db.rows())
        .filter(|&r| keep(r))
        .map(|r| (dot(query, db.normed.row(r)) * inv, r))
        .collect();
    if scored.is_empty() {
        return Err(Error::Empty("retrieval database".into()));
    }
    if k > scored.len() && !WARNED_K.swap(true, Ordering::Relaxed) {
        log::warn!("K={k} exceeds the {} searchable database rows; returning all rows", scored.len());
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored.into_iter().map(|(_, r)| r).collect())
}

/// Retrieved noise `z = μ + σ ⊙ ξ` around a query representation.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedNoise {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub z: Vec<f64>,
    pub rows: Vec<usize>,
}

/// Mean and population standard deviation of the offsets `d_i - h`.
pub fn noise_stats(h: &[f64], segments: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
    if segments.is_empty() {
        return Err(Error::Empty("retrieved segments".into()));
    }
    if segments.iter().any(|s| s.len() != h.len()) {
        return Err(Error::Shape("segment width differs from the query".into()));
    }
    if segments.len() == 1 && !WARNED_SINGLE.swap(true, Ordering::Relaxed) {
        log::warn!("a single retrieved segment gives zero spread; noise is deterministic");
    }
    let k = segments.len() as f64;
    let d = h.len();
    let mut mu = vec![0.0; d];
    for s in segments {
        for i in 0..d {
            mu[i] += s[i] - h[i];
        }
    }
    mu.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; d];
    for s in segments {
        for i in 0..d {
            let dev = s[i] - h[i] - mu[i];
            var[i] += dev * dev;
        }
    }
    let sigma = var.into_iter().map(|v| (v / k).sqrt()).collect();
    Ok((mu, sigma))
}

/// Builds the noise distribution from database `rows` and draws one sample
/// with fresh `ξ ~ N(0, I)` from `rng`.
///
/// Statistics are taken in the unit-normalised space the similarity search
/// works in: offsets run from the normalised query to the normalised
/// segment embeddings, so every offset has norm at most 2 regardless of the
/// scale of the encoders.
pub fn sample_retrieved_noise<R: Rng + ?Sized>(
    h: &[f64],
    db: &RetrievalDatabase,
    rows: &[usize],
    rng: &mut R,
) -> Result<RetrievedNoise> {
    let segs: Vec<&[f64]> = rows.iter().map(|&r| db.normed.row(r)).collect();
    let (mu, sigma) = noise_stats(&crate::tensor::normalized(h), &segs)?;
    let z = mu
        .iter()
        .zip(&sigma)
        .map(|(m, s)| {
            let xi: f64 = StandardNormal.sample(rng);
            m + s * xi
        })
        .collect();
    Ok(RetrievedNoise {
        mu,
        sigma,
        z,
        rows: rows.to_vec(),
    })
}

/// Standard normal draws of width `d` (the Gaussian-noise ablation).
pub fn gaussian_noise<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Joint indices: 1..=3 source, 4..=6 target.
    const NS: usize = 3;

    #[test]
    fn candidates_end_at_target_items() {
        let c = extract_candidates("u", &[1, 4, 2, 5], NS, 200);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].items.clone(), c[0].end, c[0].start), (vec![1, 4], 2, 1));
        assert_eq!((c[1].items.clone(), c[1].end, c[1].start), (vec![1, 4, 2, 5], 4, 1));
        assert!(extract_candidates("u", &[1, 2, 3], NS, 200).is_empty());
        let c = extract_candidates("u", &[4, 5], NS, 200);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].items, vec![4, 5]);
        let c = extract_candidates("u", &[1, 2, 3, 4], NS, 2);
        assert_eq!((c[0].items.clone(), c[0].start), (vec![3, 4], 3));
    }

    #[test]
    fn lowpass_reference_values() {
        assert!((lowpass_weight(10, 10, 1, 1.5, 2.0) - (1.5 - 1.0 / 101.0)).abs() < 1e-12);
        assert!((lowpass_weight(10, 10, 1, 1.5, 2.0) - 1.490099).abs() < 1e-6);
        assert!((lowpass_weight(1, 10, 1, 1.5, 2.0) - 0.509901).abs() < 1e-6);
        for l in 2..60 {
            for j in 2..=l {
                assert!(lowpass_weight(j, l, 1, 1.5, 2.0) > lowpass_weight(j - 1, l, 1, 1.5, 2.0));
            }
        }
    }

    #[test]
    fn embedding_matches_loop_and_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = Mat::randn(7, 5, 1.0, &mut rng);
        let seg = CandidateSegment {
            user_id: "u".into(),
            items: vec![2, 6, 5],
            end: 5,
            start: 3,
        };
        let e = embed_candidate(&seg, &table, 1.5, 2.0).unwrap();
        for col in 0..5 {
            let mut acc = 0.0;
            for (off, &it) in seg.items.iter().enumerate() {
                let j = (3 + off) as f64;
                let w = 1.5 - 1.0 / (1.0 + (j / (5.0 - j + 1.0)).powi(2));
                acc += w * table.at(it, col);
            }
            assert!((e[col] - acc).abs() < 1e-9);
        }
        let one = CandidateSegment {
            user_id: "u".into(),
            items: vec![4],
            end: 2,
            start: 2,
        };
        let w = lowpass_weight(2, 2, 2, 1.5, 2.0);
        let e1 = embed_candidate(&one, &table, 1.5, 2.0).unwrap();
        for (a, b) in e1.iter().zip(table.row(4)) {
            assert!((a - w * b).abs() < 1e-15);
        }
        assert!(embed_candidate(&seg, &Mat::zeros(7, 5), 1.5, 2.0).unwrap().iter().all(|&x| x == 0.0));
        let doubled = table.map(|x| 2.0 * x);
        let e2 = embed_candidate(&seg, &doubled, 1.5, 2.0).unwrap();
        for (a, b) in e2.iter().zip(&e) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        let bad = CandidateSegment { items: vec![9], ..one };
        assert!(matches!(embed_candidate(&bad, &table, 1.5, 2.0), Err(Error::OutOfVocabulary(_))));
    }

    fn small_db() -> RetrievalDatabase {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = Mat::randn(7, 4, 1.0, &mut rng);
        let a: &[usize] = &[1, 4, 2, 5];
        let b: &[usize] = &[4, 5, 6, 1, 6];
        build_database(&[("a", a), ("b", b)], NS, &table, 1.5, 2.0, 200).unwrap()
    }

    #[test]
    fn database_counts_and_round_trip() {
        let db = small_db();
        assert_eq!(db.rows(), 5);
        let prov: Vec<(&str, usize)> = db.provenance.iter().map(|p| (p.user_id.as_str(), p.end)).collect();
        assert_eq!(prov, vec![("a", 2), ("a", 4), ("b", 2), ("b", 3), ("b", 5)]);
        assert_eq!(small_db(), db);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("db.bin");
        db.save(&p).unwrap();
        assert_eq!(RetrievalDatabase::load(&p).unwrap(), db);
        std::fs::write(&p, b"nope").unwrap();
        assert!(RetrievalDatabase::load(&p).is_err());
        let table = Mat::zeros(7, 4);
        let s: &[usize] = &[1, 2];
        assert!(matches!(build_database(&[("a", s)], NS, &table, 1.5, 2.0, 200), Err(Error::Empty(_))));
    }

    #[test]
    fn self_query_ranks_first_and_large_k_returns_all() {
        let db = small_db();
        let q = db.raw.row(3).to_vec();
        assert_eq!(retrieve_topk(&q, &db, 1).unwrap(), vec![3]);
        assert_eq!(retrieve_topk(&q, &db, 50).unwrap().len(), 5);
        assert!(retrieve_topk(&q, &db, 0).is_err());
        let zero = vec![0.0; 4];
        assert_eq!(retrieve_topk(&zero, &db, 3).unwrap(), vec![0, 1, 2]);
        let only_b = retrieve_topk_filtered(&q, &db, 10, |r| db.provenance[r].user_id == "b").unwrap();
        assert!(only_b.iter().all(|&r| r >= 2));
    }

    #[test]
    fn noise_statistics() {
        let h = [1.0, -2.0, 0.5];
        let (mu, sigma) = noise_stats(&h, &[&h, &h]).unwrap();
        assert_eq!((mu, sigma), (vec![0.0; 3], vec![0.0; 3]));
        let v = [0.3, -0.7, 2.0];
        let p: Vec<f64> = h.iter().zip(&v).map(|(a, b)| a + b).collect();
        let m: Vec<f64> = h.iter().zip(&v).map(|(a, b)| a - b).collect();
        let (mu, sigma) = noise_stats(&h, &[&p, &m]).unwrap();
        for i in 0..3 {
            assert!(mu[i].abs() < 1e-15);
            assert!((sigma[i] - v[i].abs()).abs() < 1e-15);
        }
        assert!(noise_stats(&h, &[]).is_err());

        let db = small_db();
        let q = db.raw.row(0).to_vec();
        let rows = retrieve_topk(&q, &db, 3).unwrap();
        let a = sample_retrieved_noise(&q, &db, &rows, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_retrieved_noise(&q, &db, &rows, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let single = sample_retrieved_noise(&q, &db, &rows[..1], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(single.sigma, vec![0.0; 4]);
        assert_eq!(single.z, single.mu);
        // Offsets are measured between unit vectors.
        let unit_q = crate::tensor::normalized(&q);
        for i in 0..4 {
            assert!((single.mu[i] - (db.normed.row(rows[0])[i] - unit_q[i])).abs() < 1e-15);
        }
        let scaled: Vec<f64> = q.iter().map(|x| 10.0 * x).collect();
        let c = sample_retrieved_noise(&scaled, &db, &rows, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(c.z.iter().zip(&a.z).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn topk_matches_exhaustive_scan(seed in 0u64..1000, k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Mat::randn(200, 6, 1.0, &mut rng);
            let normed = Mat::from_vec(200, 6, (0..200).flat_map(|r| crate::tensor::normalized(raw.row(r))).collect());
            let provenance = (0..200).map(|r| Provenance { user_id: format!("u{r}"), end: 2 }).collect();
            let db = RetrievalDatabase { c: 1.5, n: 2.0, window: 200, raw, normed, provenance };
            let q = Mat::randn(1, 6, 1.0, &mut rng).data;
            let mut all: Vec<(f64, usize)> = (0..200).map(|r| (crate::tensor::cosine(&q, db.raw.row(r)), r)).collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all.iter().take(k).map(|x| x.1).collect();
            prop_assert_eq!(retrieve_topk(&q, &db, k).unwrap(), want);
        }

        #[test]
        fn every_row_ends_in_target(seqs in prop::collection::vec(prop::collection::vec(1usize..7, 1..12), 1..6)) {
            let table = Mat::filled(7, 3, 0.5);
            let pairs: Vec<(String, &[usize])> = seqs.iter().enumerate().map(|(i, s)| (format!("u{i}"), s.as_slice())).collect();
            let expected: usize = seqs.iter().map(|s| (1..s.len()).filter(|&p| s[p] > NS).count()).sum();
            match build_database(&pairs, NS, &table, 1.5, 2.0, 4) {
                Ok(db) => {
                    prop_assert_eq!(db.rows(), expected);
                    for p in &db.provenance {
                        let i: usize = p.user_id[1..].parse().unwrap();
                        prop_assert!(seqs[i][p.end - 1] > NS);
                        prop_assert!(p.end >= 2);
                    }
                }
                Err(_) => prop_assert_eq!(expected, 0),
            }
        }
    }
}
