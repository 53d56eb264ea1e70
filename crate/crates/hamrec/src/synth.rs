//! Deterministic synthetic interaction data with planted block structure.
//!
//! Users and items are partitioned into aligned blocks; most of a user's
//! events land in the own block with popularity-skewed item choice, the
//! rest are uniform noise. A slice of users is kept very sparse, which is
//! where multi-hop propagation has something to add over plain hashing.
//! Generation is per-user seeded, so datasets are reproducible and
//! insensitive to iteration order.

use rand::Rng;

use crate::graph::{Event, IdMap, InteractionDataset};
use crate::seed::stream_rng_indexed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    /// Mean event count of a dense user.
    pub mean_degree: usize,
    /// Fraction of users drawn with 3..=12 events instead.
    pub sparse_fraction: f64,
    /// Probability that an event stays in the user's own block.
    pub in_block: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale stand-in with the MovieLens-100K shape:
    /// 943 users, 1682 items, roughly 1e5 events.
    pub fn movielens_scale(seed: u64) -> Self {
        Self {
            users: 943,
            items: 1682,
            blocks: 24,
            mean_degree: 140,
            sparse_fraction: 0.3,
            in_block: 0.75,
            seed,
        }
    }
}

/// Generates the dataset; dense ids run 0..users and 0..items even when an
/// id ends up with no events.
pub fn generate(cfg: &SynthConfig) -> InteractionDataset {
    assert!(cfg.blocks >= 1 && cfg.blocks <= cfg.items && cfg.blocks <= cfg.users);
    let mut user_ids = IdMap::default();
    for u in 0..cfg.users {
        user_ids.intern(&format!("u{u}"));
    }
    let mut item_ids = IdMap::default();
    for i in 0..cfg.items {
        item_ids.intern(&format!("i{i}"));
    }

    // Popularity CDF reused for every block (ranks within the block).
    let max_block = cfg.items.div_ceil(cfg.blocks);
    let mut cdf = Vec::with_capacity(max_block);
    let mut acc = 0.0f64;
    for r in 0..max_block {
        acc += 1.0 / ((r + 1) as f64).powf(0.7);
        cdf.push(acc);
    }

    let mut events = Vec::new();
    for u in 0..cfg.users {
        let mut rng = stream_rng_indexed(cfg.seed, "synth-user", u as u64);
        let block = u * cfg.blocks / cfg.users;
        let (bstart, bend) = block_range(cfg.items, cfg.blocks, block);
        let bsize = bend - bstart;

        let degree = if rng.gen::<f64>() < cfg.sparse_fraction {
            rng.gen_range(3..=12)
        } else {
            // Spread dense degrees over roughly [0.4, 2.2] of the mean.
            let x: f64 = rng.gen();
            ((cfg.mean_degree as f64) * (0.4 + 1.8 * x * x)).round() as usize
        };
        let degree = degree.max(3).min(cfg.items - 1);

        let mut chosen: Vec<u32> = Vec::with_capacity(degree);
        let mut seen = std::collections::HashSet::with_capacity(degree * 2);
        let mut guard = 0usize;
        while chosen.len() < degree && guard < degree * 50 {
            guard += 1;
            let item = if rng.gen::<f64>() < cfg.in_block {
                let total = cdf[bsize - 1];
                let x = rng.gen::<f64>() * total;
                let rank = cdf[..bsize].partition_point(|&c| c < x).min(bsize - 1);
                (bstart + rank) as u32
            } else {
                rng.gen_range(0..cfg.items as u32)
            };
            if seen.insert(item) {
                chosen.push(item);
            }
        }
        // Shuffle so the held-out last event is a random one of the set.
        for i in (1..chosen.len()).rev() {
            let j = rng.gen_range(0..=i);
            chosen.swap(i, j);
        }
        for (t, item) in chosen.into_iter().enumerate() {
            events.push(Event {
                user: u as u32,
                item,
                timestamp: t as i64,
            });
        }
    }

    InteractionDataset {
        user_ids,
        item_ids,
        events,
    }
}

/// Item id range of one block.
fn block_range(items: usize, blocks: usize, block: usize) -> (usize, usize) {
    let start = block * items / blocks;
    let end = ((block + 1) * items / blocks).min(items);
    (start, end.max(start + 1))
}

/// Block of a user or item id under the same partition.
pub fn block_of(id: usize, count: usize, blocks: usize) -> usize {
    id * blocks / count
}

/// Renders a dataset as the input TSV format (token, token, timestamp).
pub fn to_tsv(ds: &InteractionDataset) -> String {
    let mut out = String::new();
    for ev in &ds.events {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            ds.user_ids.token(ev.user),
            ds.item_ids.token(ev.item),
            ev.timestamp
        ));
    }
    out
}
