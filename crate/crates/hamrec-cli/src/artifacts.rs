//! Pipeline artifacts on disk: dense-id event files, vocabularies, and the
//! split summary. Everything is plain text or JSON so runs diff cleanly.

use std::fs;
use std::path::{Path, PathBuf};

use hamrec::graph::{Event, IdMap, InteractionDataset, SplitSummary};

use crate::CliError;

pub const TRAIN_EVENTS: &str = "train.tsv";
pub const TEST_EVENTS: &str = "test.tsv";
pub const FIT_EVENTS: &str = "fit.tsv";
pub const VAL_EVENTS: &str = "val.tsv";
pub const USER_VOCAB: &str = "users.tsv";
pub const ITEM_VOCAB: &str = "items.tsv";
pub const SUMMARY: &str = "summary.json";
pub const CHECKPOINT: &str = "checkpoint.hsck";
pub const REPORT: &str = "report.jsonl";
pub const USER_CODES: &str = "user_codes.hsgc";
pub const ITEM_CODES: &str = "item_codes.hsgc";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TEXT: &str = "metrics.txt";

pub fn write_dense_events(path: &Path, ds: &InteractionDataset) -> Result<(), CliError> {
    let mut out = String::with_capacity(ds.num_events() * 16 + 64);
    out.push_str(&format!(
        "# users={} items={}\n",
        ds.num_users(),
        ds.num_items()
    ));
    for ev in &ds.events {
        out.push_str(&format!("{}\t{}\t{}\n", ev.user, ev.item, ev.timestamp));
    }
    write_file(path, out.as_bytes())
}

/// Reads a dense-id event file; the header comment carries the id universe.
pub fn read_dense_events(path: &Path) -> Result<(usize, usize, Vec<Event>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut users = None;
    let mut items = None;
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if let Some(header) = line.strip_prefix('#') {
            for field in header.split_whitespace() {
                if let Some(v) = field.strip_prefix("users=") {
                    users = v.parse().ok();
                } else if let Some(v) = field.strip_prefix("items=") {
                    items = v.parse().ok();
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let bad = || {
            CliError::Validation(format!(
                "{}:{}: bad dense event line",
                path.display(),
                lineno + 1
            ))
        };
        let user = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let item = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let timestamp = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        events.push(Event {
            user,
            item,
            timestamp,
        });
    }
    let users = users.ok_or_else(|| {
        CliError::Validation(format!("{}: missing users= header", path.display()))
    })?;
    let items = items.ok_or_else(|| {
        CliError::Validation(format!("{}: missing items= header", path.display()))
    })?;
    Ok((users, items, events))
}

pub fn write_vocab(path: &Path, map: &IdMap) -> Result<(), CliError> {
    let mut out = String::new();
    for (id, token) in map.tokens().iter().enumerate() {
        out.push_str(&format!("{id}\t{token}\n"));
    }
    write_file(path, out.as_bytes())
}

pub fn read_vocab(path: &Path) -> Result<IdMap, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut map = IdMap::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, token) = line.split_once('\t').ok_or_else(|| {
            CliError::Validation(format!(
                "{}:{}: bad vocab line",
                path.display(),
                lineno + 1
            ))
        })?;
        let expected: u32 = id.parse().map_err(|e| {
            CliError::Validation(format!("{}:{}: bad id: {e}", path.display(), lineno + 1))
        })?;
        let got = map.intern(token);
        if got != expected {
            return Err(CliError::Validation(format!(
                "{}:{}: vocab ids must be dense and ascending",
                path.display(),
                lineno + 1
            )));
        }
    }
    Ok(map)
}

/// Reassembles an [`InteractionDataset`] from prep artifacts.
pub fn read_dataset(dir: &Path, events_file: &str) -> Result<InteractionDataset, CliError> {
    let (users, items, events) = read_dense_events(&dir.join(events_file))?;
    let user_ids = read_vocab(&dir.join(USER_VOCAB))?;
    let item_ids = read_vocab(&dir.join(ITEM_VOCAB))?;
    if user_ids.len() != users || item_ids.len() != items {
        return Err(CliError::Validation(format!(
            "{}: vocab sizes {}x{} do not match event header {}x{}",
            dir.display(),
            user_ids.len(),
            item_ids.len(),
            users,
            items
        )));
    }
    for ev in &events {
        if ev.user as usize >= users || ev.item as usize >= items {
            return Err(CliError::Validation(format!(
                "{}/{}: event ({}, {}) outside id universe {}x{}",
                dir.display(),
                events_file,
                ev.user,
                ev.item,
                users,
                items
            )));
        }
    }
    Ok(InteractionDataset::from_dense_events(
        user_ids, item_ids, events,
    ))
}

pub fn write_summary(path: &Path, summary: &SplitSummary, seed: u64, policy: &str) -> Result<(), CliError> {
    let value = serde_json::json!({
        "users": summary.users,
        "items": summary.items,
        "events": summary.events,
        "train_events": summary.train_events,
        "test_events": summary.test_events,
        "test_users": summary.test_users,
        "degenerate_users": summary.degenerate_users,
        "split": policy,
        "seed": seed,
    });
    let mut text = serde_json::to_string_pretty(&value)
        .map_err(|e| CliError::Runtime(format!("summary encode: {e}")))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
