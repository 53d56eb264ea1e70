//! Exact top-k Hamming retrieval over packed item codes.
//!
//! The base engine is a bit-parallel XOR+popcount scan with a bounded-size
//! selection heap. An optional band-bucket index slices each code into B
//! contiguous bands of at most 16 bits and keys dense lookup tables by the
//! band value; probing buckets within radius r of the query's band values
//! yields a candidate set that provably contains every item within total
//! distance (r+1)·B − 1 of the query (pigeonhole), and candidates are
//! always re-ranked exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::hamming::{CodeMatrix, HashCode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("band count {bands} does not divide code length {bits}")]
    BandsDontDivide { bits: u32, bands: u32 },
    #[error("band width {0} exceeds 16 bits")]
    BandTooWide(u32),
    #[error("band count must be at least 1")]
    ZeroBands,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("banding is not enabled on this index")]
    BandingDisabled,
    #[error("query length {query} does not match index length {index}")]
    LengthMismatch { query: u32, index: u32 },
    #[error("benchmark needs at least {MIN_BENCH_QUERIES} queries, got {0}")]
    TooFewQueries(usize),
}

pub const MIN_BENCH_QUERIES: usize = 100;

/// Sorted set of item ids to exclude from ranking.
#[derive(Debug, Clone, Default)]
pub struct IdSet(Vec<u32>);

impl IdSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn from_unsorted(mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self(ids)
    }

    /// The slice must already be sorted ascending without duplicates
    /// (CSR neighbor lists qualify).
    pub fn from_sorted(ids: &[u32]) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        Self(ids.to_vec())
    }

    #[inline]
    pub fn contains(&self, id: u32) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ranked hits plus how many candidates were scored to produce them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    /// (item id, similarity score), scores non-increasing, ties by
    /// ascending id.
    pub hits: Vec<(u32, i32)>,
    /// Number of candidate items actually scored.
    pub candidates: usize,
}

struct BandIndex {
    band_count: u32,
    band_width: u32,
    /// tables[b][key] = item ids, ascending.
    tables: Vec<Vec<Vec<u32>>>,
}

/// Packed item codes plus the optional band-bucket lookup tables.
pub struct CodeIndex {
    items: CodeMatrix,
    bands: Option<BandIndex>,
}

impl CodeIndex {
    pub fn items(&self) -> &CodeMatrix {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.items.rows() == 0
    }

    pub fn bits(&self) -> u32 {
        self.items.bits()
    }

    pub fn band_count(&self) -> Option<u32> {
        self.bands.as_ref().map(|b| b.band_count)
    }
}

/// Bits `[start, start+width)` of a packed code as a table key.
#[inline]
fn band_key(words: &[u64], start: usize, width: u32) -> usize {
    let w0 = start / 64;
    let off = start % 64;
    let mut v = words[w0] >> off;
    if off + width as usize > 64 {
        v |= words[w0 + 1] << (64 - off);
    }
    (v & ((1u64 << width) - 1)) as usize
}

/// Builds a retrieval index; `bands = None` gives a scan-only index.
pub fn build_index(items: CodeMatrix, bands: Option<u32>) -> Result<CodeIndex, RetrievalError> {
    let band_index = match bands {
        None => None,
        Some(0) => return Err(RetrievalError::ZeroBands),
        Some(b) => {
            let bits = items.bits();
            if bits % b != 0 {
                return Err(RetrievalError::BandsDontDivide { bits, bands: b });
            }
            let width = bits / b;
            if width > 16 {
                return Err(RetrievalError::BandTooWide(width));
            }
            let mut tables: Vec<Vec<Vec<u32>>> =
                (0..b).map(|_| vec![Vec::new(); 1usize << width]).collect();
            for row in 0..items.rows() {
                let words = items.row(row);
                for (band, table) in tables.iter_mut().enumerate() {
                    let key = band_key(words, band * width as usize, width);
                    table[key].push(row as u32);
                }
            }
            Some(BandIndex {
                band_count: b,
                band_width: width,
                tables,
            })
        }
    };
    Ok(CodeIndex {
        items,
        bands: band_index,
    })
}

/// Heap entry ordered so the maximum is the *worst* hit: lower score is
/// greater, and on equal scores a higher id is greater.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Hit {
    score: i32,
    id: u32,
}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .cmp(&self.score)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact top-k by similarity over all non-excluded items.
pub fn topk_scan(
    index: &CodeIndex,
    query: &HashCode,
    k: usize,
    exclude: &IdSet,
) -> Result<QueryResult, RetrievalError> {
    check_query(index, query, k)?;
    let ids = 0..index.items.rows() as u32;
    Ok(rank_ids(&index.items, query, k, exclude, ids))
}

/// Candidate generation by multi-band bucket probing at Hamming radius `r`
/// per band, then exact re-ranking. Contains every item within total
/// distance (r+1)·B − 1; beyond that bound it may under-recall, which the
/// `candidates` count makes visible.
pub fn topk_probe(
    index: &CodeIndex,
    query: &HashCode,
    k: usize,
    radius: u32,
) -> Result<QueryResult, RetrievalError> {
    check_query(index, query, k)?;
    let ids = probe_candidates(index, query, radius)?;
    Ok(rank_ids(
        &index.items,
        query,
        k,
        &IdSet::empty(),
        ids.into_iter(),
    ))
}

/// Union of the bucket lists within radius `r` of the query's band keys,
/// ascending and deduplicated.
pub fn probe_candidates(
    index: &CodeIndex,
    query: &HashCode,
    radius: u32,
) -> Result<Vec<u32>, RetrievalError> {
    let bands = index.bands.as_ref().ok_or(RetrievalError::BandingDisabled)?;
    if query.bits() != index.items.bits() {
        return Err(RetrievalError::LengthMismatch {
            query: query.bits(),
            index: index.items.bits(),
        });
    }
    let mut mask = vec![false; index.items.rows()];
    let width = bands.band_width;
    for (band, table) in bands.tables.iter().enumerate() {
        let key = band_key(query.words(), band * width as usize, width);
        for_each_key_within(key, width, radius, &mut |probe_key| {
            for &id in &table[probe_key] {
                mask[id as usize] = true;
            }
        });
    }
    Ok(mask
        .iter()
        .enumerate()
        .filter_map(|(id, &m)| m.then_some(id as u32))
        .collect())
}

/// Visits every `width`-bit key within Hamming distance `radius` of `key`.
fn for_each_key_within(key: usize, width: u32, radius: u32, f: &mut impl FnMut(usize)) {
    fn rec(key: usize, width: u32, left: u32, start: u32, f: &mut impl FnMut(usize)) {
        f(key);
        if left == 0 {
            return;
        }
        for pos in start..width {
            rec(key ^ (1usize << pos), width, left - 1, pos + 1, f);
        }
    }
    rec(key, width, radius, 0, f);
}

fn check_query(index: &CodeIndex, query: &HashCode, k: usize) -> Result<(), RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if query.bits() != index.items.bits() {
        return Err(RetrievalError::LengthMismatch {
            query: query.bits(),
            index: index.items.bits(),
        });
    }
    Ok(())
}

/// Shared bounded-heap selection across scan and probe paths. `ids` must
/// be ascending so equal scores resolve to the lowest id without extra
/// comparisons.
fn rank_ids(
    items: &CodeMatrix,
    query: &HashCode,
    k: usize,
    exclude: &IdSet,
    ids: impl Iterator<Item = u32>,
) -> QueryResult {
    let bits = items.bits() as i32;
    let qwords = query.words();
    let distance = crate::hamming::distance_fn();
    let no_exclusions = exclude.is_empty();
    let mut heap: BinaryHeap<Hit> = BinaryHeap::with_capacity(k + 1);
    let mut candidates = 0usize;
    for id in ids {
        if !no_exclusions && exclude.contains(id) {
            continue;
        }
        candidates += 1;
        let score = bits - 2 * distance(qwords, items.row(id as usize)) as i32;
        let hit = Hit { score, id };
        if heap.len() < k {
            heap.push(hit);
        } else if let Some(worst) = heap.peek() {
            // Replace only when strictly better under (score desc, id asc);
            // `hit < worst` in heap order means better.
            if hit < *worst {
                heap.pop();
                heap.push(hit);
            }
        }
    }
    // Ascending heap order is best-first.
    let hits: Vec<(u32, i32)> = heap
        .into_sorted_vec()
        .into_iter()
        .map(|h| (h.id, h.score))
        .collect();
    QueryResult { hits, candidates }
}

/// Throughput of the packed scan against a real-valued inner-product scan.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub items: usize,
    pub queries: usize,
    pub k: usize,
    pub bits: u32,
    pub packed_ns_per_item: f64,
    pub packed_qps: f64,
    pub real_ns_per_item: f64,
    pub real_qps: f64,
    /// real_ns_per_item / packed_ns_per_item.
    pub speedup: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "items = {}", self.items)?;
        writeln!(f, "queries = {}", self.queries)?;
        writeln!(f, "k = {}", self.k)?;
        writeln!(f, "bits = {}", self.bits)?;
        writeln!(f, "packed_ns_per_item = {}", self.packed_ns_per_item)?;
        writeln!(f, "packed_qps = {}", self.packed_qps)?;
        writeln!(f, "real_ns_per_item = {}", self.real_ns_per_item)?;
        writeln!(f, "real_qps = {}", self.real_qps)?;
        writeln!(f, "speedup = {}", self.speedup)
    }
}

impl FromStr for BenchReport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut map = std::collections::HashMap::new();
        for line in s.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("bad report line: {line}"))?;
            map.insert(key.trim().to_owned(), value.trim().to_owned());
        }
        let get = |k: &str| -> Result<String, String> {
            map.get(k).cloned().ok_or_else(|| format!("missing {k}"))
        };
        let parse_f = |k: &str| -> Result<f64, String> {
            get(k)?.parse().map_err(|e| format!("{k}: {e}"))
        };
        let parse_u = |k: &str| -> Result<usize, String> {
            get(k)?.parse().map_err(|e| format!("{k}: {e}"))
        };
        Ok(BenchReport {
            items: parse_u("items")?,
            queries: parse_u("queries")?,
            k: parse_u("k")?,
            bits: get("bits")?.parse().map_err(|e| format!("bits: {e}"))?,
            packed_ns_per_item: parse_f("packed_ns_per_item")?,
            packed_qps: parse_f("packed_qps")?,
            real_ns_per_item: parse_f("real_ns_per_item")?,
            real_qps: parse_f("real_qps")?,
            speedup: parse_f("speedup")?,
        })
    }
}

/// Times exact top-k over the index with (a) packed XOR+popcount scoring
/// and (b) a reference scan over K-dimensional ±1 vectors scored by f32
/// inner product. Results are measurements of this machine, not asserts.
pub fn bench(index: &CodeIndex, queries: &[HashCode], k: usize) -> Result<BenchReport, RetrievalError> {
    if queries.len() < MIN_BENCH_QUERIES {
        return Err(RetrievalError::TooFewQueries(queries.len()));
    }
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    for q in queries {
        if q.bits() != index.bits() {
            return Err(RetrievalError::LengthMismatch {
                query: q.bits(),
                index: index.bits(),
            });
        }
    }
    let items = index.items.rows();
    let bits = index.bits();
    let exclude = IdSet::empty();

    // Packed scan.
    let start = Instant::now();
    let mut sink = 0u64;
    for q in queries {
        let res = rank_ids(&index.items, q, k, &exclude, 0..items as u32);
        if let Some(&(id, score)) = res.hits.first() {
            sink = sink.wrapping_add(u64::from(id)).wrapping_add(score as u64);
        }
    }
    let packed_elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);

    // Reference: the same selection over real-valued vectors.
    let real_items: Vec<f32> = (0..items)
        .flat_map(|r| {
            let code = index.items.code(r);
            (0..bits as usize).map(move |kk| code.sign(kk) as f32)
        })
        .collect();
    let kf = bits as usize;
    let start = Instant::now();
    let mut sink = 0f32;
    for q in queries {
        let qv: Vec<f32> = (0..kf).map(|kk| q.sign(kk) as f32).collect();
        let mut heap: BinaryHeap<(ordered_score::OrdF32, std::cmp::Reverse<u32>)> =
            BinaryHeap::with_capacity(k + 1);
        for (id, chunk) in real_items.chunks_exact(kf).enumerate() {
            let mut dot = 0f32;
            for kk in 0..kf {
                dot += qv[kk] * chunk[kk];
            }
            let entry = (ordered_score::OrdF32(-dot), std::cmp::Reverse(id as u32));
            // Max-heap on (negated score, reversed id) keeps the worst on top.
            if heap.len() < k {
                heap.push(entry);
            } else if let Some(top) = heap.peek() {
                if entry < *top {
                    heap.pop();
                    heap.push(entry);
                }
            }
        }
        if let Some(&(s, std::cmp::Reverse(id))) = heap.peek() {
            sink += s.0 + id as f32;
        }
    }
    let real_elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);

    let total = (items * queries.len()) as f64;
    let packed_ns = packed_elapsed * 1e9 / total;
    let real_ns = real_elapsed * 1e9 / total;
    Ok(BenchReport {
        items,
        queries: queries.len(),
        k,
        bits,
        packed_ns_per_item: packed_ns,
        packed_qps: queries.len() as f64 / packed_elapsed,
        real_ns_per_item: real_ns,
        real_qps: queries.len() as f64 / real_elapsed,
        speedup: real_ns / packed_ns,
    })
}

mod ordered_score {
    /// Total order for f32 scores produced by ±1 dot products (never NaN).
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct OrdF32(pub f32);

    impl Eq for OrdF32 {}

    impl PartialOrd for OrdF32 {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    impl Ord for OrdF32 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }
}
