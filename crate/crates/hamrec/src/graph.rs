//! Interaction ingestion, train/test splitting, the user–item bipartite
//! graph in CSR form, and pairwise ranking-loss sampling.
//!
//! Dense ids are assigned at ingestion in first-seen order and every
//! downstream module indexes arrays with them. Ratings in input files are
//! ignored; interactions are implicit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::seed::stream_rng_indexed;

/// Longest accepted user/item token, in bytes.
pub const MAX_TOKEN_LEN: usize = 256;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: malformed line: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: token longer than {MAX_TOKEN_LEN} bytes")]
    TokenTooLong { path: String, line: usize },
    #[error("{path}: no interactions found")]
    EmptyFile { path: String },
    #[error("dataset has no events")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("graph has no edges")]
    NoEdges,
    #[error("no negative item found after {0} user draws (all sampled users interact with every item)")]
    Exhausted(usize),
}

/// One implicit-feedback event. Missing timestamps are stored as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// Bijection between original tokens and dense ids `[0, len)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Deduplicated implicit-feedback events over dense user/item ids.
///
/// The id maps describe the full id universe; a split keeps the maps of its
/// parent dataset even when some ids no longer occur in its events.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub user_ids: IdMap,
    pub item_ids: IdMap,
    pub events: Vec<Event>,
}

impl InteractionDataset {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events grouped by user, preserving event order within each user.
    pub fn events_by_user(&self) -> Vec<Vec<Event>> {
        let mut per_user = vec![Vec::new(); self.num_users()];
        for ev in &self.events {
            per_user[ev.user as usize].push(*ev);
        }
        per_user
    }

    /// Builds a dataset directly from dense-id events (artifact reload path).
    pub fn from_dense_events(
        user_ids: IdMap,
        item_ids: IdMap,
        events: Vec<Event>,
    ) -> Self {
        Self {
            user_ids,
            item_ids,
            events,
        }
    }
}

/// Parses `user<TAB>item[<TAB>timestamp][<TAB>rating]` interaction logs.
///
/// Lines starting with `#` are skipped. Duplicate (user, item) pairs
/// collapse to one event keeping the earliest timestamp. The optional
/// rating column is ignored.
pub fn load_interactions<P: AsRef<Path>>(path: P) -> Result<InteractionDataset, DataError> {
    let path_str = path.as_ref().display().to_string();
    let file = File::open(path.as_ref()).map_err(|source| DataError::Io {
        path: path_str.clone(),
        source,
    })?;
    parse_interactions(BufReader::new(file), &path_str)
}

pub fn parse_interactions<R: BufRead>(
    reader: R,
    path: &str,
) -> Result<InteractionDataset, DataError> {
    let mut user_ids = IdMap::default();
    let mut item_ids = IdMap::default();
    // (user, item) -> index into events; dedup keeps the earliest timestamp.
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
    let mut events: Vec<Event> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| DataError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            // Allow a trailing blank line but nothing else.
            continue;
        }
        let mut fields = line.split('\t');
        let user_tok = fields.next().unwrap_or("");
        let item_tok = fields.next().ok_or_else(|| DataError::Malformed {
            path: path.to_owned(),
            line: lineno,
            reason: "expected at least user<TAB>item".into(),
        })?;
        if user_tok.is_empty() || item_tok.is_empty() {
            return Err(DataError::Malformed {
                path: path.to_owned(),
                line: lineno,
                reason: "empty user or item token".into(),
            });
        }
        if user_tok.len() > MAX_TOKEN_LEN || item_tok.len() > MAX_TOKEN_LEN {
            return Err(DataError::TokenTooLong {
                path: path.to_owned(),
                line: lineno,
            });
        }
        let timestamp = match fields.next() {
            None | Some("") => 0,
            Some(ts) => ts.trim().parse::<i64>().map_err(|_| DataError::Malformed {
                path: path.to_owned(),
                line: lineno,
                reason: format!("bad timestamp {ts:?}"),
            })?,
        };
        // Optional rating column: present means the line has exactly 4 fields.
        let rating = fields.next();
        if rating.is_some() && fields.next().is_some() {
            return Err(DataError::Malformed {
                path: path.to_owned(),
                line: lineno,
                reason: "too many fields".into(),
            });
        }

        let user = user_ids.intern(user_tok);
        let item = item_ids.intern(item_tok);
        match seen.entry((user, item)) {
            std::collections::hash_map::Entry::Occupied(e) => {
                let idx = *e.get();
                if timestamp < events[idx].timestamp {
                    events[idx].timestamp = timestamp;
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(events.len());
                events.push(Event {
                    user,
                    item,
                    timestamp,
                });
            }
        }
    }

    if events.is_empty() {
        return Err(DataError::EmptyFile {
            path: path.to_owned(),
        });
    }
    Ok(InteractionDataset {
        user_ids,
        item_ids,
        events,
    })
}

/// Train/test split policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitPolicy {
    /// Hold out each user's max-timestamp event (ties go to the later event
    /// in file order). Users with fewer than two events stay train-only.
    LeaveLastOne,
    /// Hold out up to `k` random events per user, always leaving at least
    /// one train event.
    LeaveRandomK(usize),
    /// Hold out `floor(p * degree)` random events per user, capped at
    /// degree − 1.
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub policy: SplitPolicy,
    pub seed: u64,
}

/// Counters emitted beside split artifacts.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct SplitSummary {
    pub users: usize,
    pub items: usize,
    pub events: usize,
    pub train_events: usize,
    pub test_events: usize,
    pub test_users: usize,
    pub degenerate_users: usize,
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: InteractionDataset,
    pub test: InteractionDataset,
    pub summary: SplitSummary,
}

/// Splits a dataset into disjoint train/test event sets.
///
/// Deterministic for a given (dataset, spec): randomness comes from one
/// ChaCha stream per user derived from the seed, so the outcome does not
/// depend on iteration order.
pub fn split(dataset: &InteractionDataset, spec: &SplitSpec) -> Result<SplitResult, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let per_user = dataset.events_by_user();
    let mut train_events = Vec::with_capacity(dataset.num_events());
    let mut test_events = Vec::new();
    let mut test_users = 0usize;
    let mut degenerate_users = 0usize;

    for (user, events) in per_user.iter().enumerate() {
        if events.is_empty() {
            continue;
        }
        let held: Vec<usize> = match spec.policy {
            SplitPolicy::LeaveLastOne => {
                if events.len() < 2 {
                    Vec::new()
                } else {
                    let best = events
                        .iter()
                        .enumerate()
                        .max_by_key(|(idx, ev)| (ev.timestamp, *idx))
                        .map(|(idx, _)| idx)
                        .expect("non-empty");
                    vec![best]
                }
            }
            SplitPolicy::LeaveRandomK(k) => {
                let take = k.min(events.len().saturating_sub(1));
                choose_indices(events.len(), take, spec.seed, user as u64)
            }
            SplitPolicy::Ratio(p) => {
                let want = (p * events.len() as f64).floor() as usize;
                let take = want.min(events.len().saturating_sub(1));
                choose_indices(events.len(), take, spec.seed, user as u64)
            }
        };
        if held.is_empty() {
            degenerate_users += 1;
            train_events.extend(events.iter().copied());
            continue;
        }
        test_users += 1;
        let held_set: Vec<bool> = {
            let mut mask = vec![false; events.len()];
            for &i in &held {
                mask[i] = true;
            }
            mask
        };
        for (idx, ev) in events.iter().enumerate() {
            if held_set[idx] {
                test_events.push(*ev);
            } else {
                train_events.push(*ev);
            }
        }
    }

    // Restore global first-seen event order inside each half.
    let order: HashMap<(u32, u32), usize> = dataset
        .events
        .iter()
        .enumerate()
        .map(|(i, ev)| ((ev.user, ev.item), i))
        .collect();
    train_events.sort_by_key(|ev| order[&(ev.user, ev.item)]);
    test_events.sort_by_key(|ev| order[&(ev.user, ev.item)]);

    let summary = SplitSummary {
        users: dataset.num_users(),
        items: dataset.num_items(),
        events: dataset.num_events(),
        train_events: train_events.len(),
        test_events: test_events.len(),
        test_users,
        degenerate_users,
    };
    Ok(SplitResult {
        train: InteractionDataset {
            user_ids: dataset.user_ids.clone(),
            item_ids: dataset.item_ids.clone(),
            events: train_events,
        },
        test: InteractionDataset {
            user_ids: dataset.user_ids.clone(),
            item_ids: dataset.item_ids.clone(),
            events: test_events,
        },
        summary,
    })
}

/// Picks `take` distinct indices from `[0, n)` with a per-user stream.
fn choose_indices(n: usize, take: usize, seed: u64, user: u64) -> Vec<usize> {
    let mut rng = stream_rng_indexed(seed, "split", user);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..take.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(take);
    idx
}

/// CSR adjacency over both sides of the user–item bipartite graph.
///
/// Neighbor lists are sorted ascending with no duplicates; `(u, i)` is in
/// the user adjacency iff `(i, u)` is in the item adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    num_users: usize,
    num_items: usize,
    user_offsets: Vec<usize>,
    user_neighbors: Vec<u32>,
    item_offsets: Vec<usize>,
    item_neighbors: Vec<u32>,
}

impl BipartiteGraph {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn node_count(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn edge_count(&self) -> usize {
        self.user_neighbors.len()
    }

    /// Items interacted by `user`, ascending.
    #[inline]
    pub fn user_neighbors(&self, user: u32) -> &[u32] {
        &self.user_neighbors[self.user_offsets[user as usize]..self.user_offsets[user as usize + 1]]
    }

    /// Users who interacted with `item`, ascending.
    #[inline]
    pub fn item_neighbors(&self, item: u32) -> &[u32] {
        &self.item_neighbors[self.item_offsets[item as usize]..self.item_offsets[item as usize + 1]]
    }

    pub fn user_degree(&self, user: u32) -> usize {
        self.user_neighbors(user).len()
    }

    pub fn item_degree(&self, item: u32) -> usize {
        self.item_neighbors(item).len()
    }

    pub fn has_edge(&self, user: u32, item: u32) -> bool {
        self.user_neighbors(user).binary_search(&item).is_ok()
    }

    pub fn user_offsets(&self) -> &[usize] {
        &self.user_offsets
    }

    /// All edges as (user, item), ordered by user then item.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_users as u32)
            .flat_map(move |u| self.user_neighbors(u).iter().map(move |&i| (u, i)))
    }
}

/// Builds the CSR bipartite graph over the dataset's full id universe.
/// Isolated nodes get an empty neighbor range.
pub fn build_graph(train: &InteractionDataset) -> BipartiteGraph {
    let n = train.num_users();
    let m = train.num_items();
    let mut user_offsets = vec![0usize; n + 1];
    let mut item_offsets = vec![0usize; m + 1];
    for ev in &train.events {
        user_offsets[ev.user as usize + 1] += 1;
        item_offsets[ev.item as usize + 1] += 1;
    }
    for i in 1..=n {
        user_offsets[i] += user_offsets[i - 1];
    }
    for i in 1..=m {
        item_offsets[i] += item_offsets[i - 1];
    }
    let mut user_neighbors = vec![0u32; train.num_events()];
    let mut item_neighbors = vec![0u32; train.num_events()];
    let mut user_fill = user_offsets.clone();
    let mut item_fill = item_offsets.clone();
    for ev in &train.events {
        user_neighbors[user_fill[ev.user as usize]] = ev.item;
        user_fill[ev.user as usize] += 1;
        item_neighbors[item_fill[ev.item as usize]] = ev.user;
        item_fill[ev.item as usize] += 1;
    }
    for u in 0..n {
        user_neighbors[user_offsets[u]..user_offsets[u + 1]].sort_unstable();
    }
    for i in 0..m {
        item_neighbors[item_offsets[i]..item_offsets[i + 1]].sort_unstable();
    }
    BipartiteGraph {
        num_users: n,
        num_items: m,
        user_offsets,
        user_neighbors,
        item_offsets,
        item_neighbors,
    }
}

/// How the sampler picks the anchor user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UserSampling {
    /// Users weighted by degree (a uniform random edge).
    #[default]
    EdgeProportional,
    /// Users drawn uniformly among those with at least one edge.
    UniformUser,
}

/// A (user, positive item, negative item) ranking triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Stateful triple sampler; one per worker.
#[derive(Debug, Clone)]
pub struct TripleSampler {
    rng: ChaCha8Rng,
    pub user_sampling: UserSampling,
}

impl TripleSampler {
    pub fn new(rng: ChaCha8Rng, user_sampling: UserSampling) -> Self {
        Self { rng, user_sampling }
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Draws one triple: positive from the user's neighbors, negative
    /// uniform over the items the user has not interacted with.
    pub fn sample(&mut self, graph: &BipartiteGraph) -> Result<Triple, SampleError> {
        let edges = graph.edge_count();
        if edges == 0 {
            return Err(SampleError::NoEdges);
        }
        let m = graph.num_items();
        let max_draws = m.max(1);
        for _ in 0..max_draws {
            let (user, pos) = match self.user_sampling {
                UserSampling::EdgeProportional => {
                    let e = self.rng.gen_range(0..edges);
                    // First user whose offset range contains e.
                    let user = graph.user_offsets.partition_point(|&off| off <= e) - 1;
                    (user as u32, graph.user_neighbors[e])
                }
                UserSampling::UniformUser => {
                    let user = self.rng.gen_range(0..graph.num_users() as u32);
                    let deg = graph.user_degree(user);
                    if deg == 0 {
                        continue;
                    }
                    let pick = self.rng.gen_range(0..deg);
                    (user, graph.user_neighbors(user)[pick])
                }
            };
            let deg = graph.user_degree(user);
            if deg >= m {
                // Every item is a positive for this user; try another.
                continue;
            }
            // Exact draw over the m - deg non-neighbors: take a rank and
            // shift it past the sorted neighbor list.
            let rank = self.rng.gen_range(0..m - deg);
            let mut neg = rank as u32;
            for &n in graph.user_neighbors(user) {
                if n <= neg {
                    neg += 1;
                } else {
                    break;
                }
            }
            debug_assert!(!graph.has_edge(user, neg));
            return Ok(Triple { user, pos, neg });
        }
        Err(SampleError::Exhausted(max_draws))
    }
}
