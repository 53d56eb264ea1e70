//! Subcommand implementations.

use std::path::Path;

use hamrec::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use hamrec::codefile::{read_codes_file, write_codes_file};
use hamrec::eval::evaluate;
use hamrec::graph::{build_graph, load_interactions, split, IdMap, InteractionDataset, SplitSpec};
use hamrec::hamming::{words_for, CodeMatrix, HashCode};
use hamrec::retrieval::{build_index, topk_probe, topk_scan, IdSet};
use hamrec::seed::stream_rng;
use hamrec::trainer::{self, TrainError, TrainOutcome};
use rand::Rng;

use crate::artifacts::{self, ensure_dir, join};
use crate::config::{parse_readout, parse_sampling, parse_split, RunConfig};
use crate::{
    BenchArgs, CliError, EvalArgs, ExportArgs, PrepArgs, RetrieveArgs, TrainArgs,
};

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_)
        | TrainError::BadTrainConfig(_)
        | TrainError::Data(_)
        | TrainError::EmptyTrainSet
        | TrainError::ResumeMismatch(_) => validation(e),
        _ => runtime(e),
    }
}

pub fn prep(mut cfg: RunConfig, args: PrepArgs) -> Result<(), CliError> {
    if let Some(s) = &args.split {
        cfg.split = parse_split(s).map_err(CliError::Validation)?;
    }
    cfg.validate()?;
    cfg.print_resolved();

    let dataset = load_interactions(&args.input).map_err(validation)?;
    let out = split(
        &dataset,
        &SplitSpec {
            policy: cfg.split,
            seed: cfg.seed,
        },
    )
    .map_err(validation)?;

    ensure_dir(&args.out_dir)?;
    artifacts::write_vocab(&join(&args.out_dir, artifacts::USER_VOCAB), &dataset.user_ids)?;
    artifacts::write_vocab(&join(&args.out_dir, artifacts::ITEM_VOCAB), &dataset.item_ids)?;
    artifacts::write_dense_events(&join(&args.out_dir, artifacts::TRAIN_EVENTS), &out.train)?;
    artifacts::write_dense_events(&join(&args.out_dir, artifacts::TEST_EVENTS), &out.test)?;
    artifacts::write_summary(
        &join(&args.out_dir, artifacts::SUMMARY),
        &out.summary,
        cfg.seed,
        &crate::config::render_split(cfg.split),
    )?;
    println!(
        "prep: {} users, {} items, {} events -> {} train / {} test ({} test users, {} train-only)",
        out.summary.users,
        out.summary.items,
        out.summary.events,
        out.summary.train_events,
        out.summary.test_events,
        out.summary.test_users,
        out.summary.degenerate_users,
    );
    println!("artifacts written to {}", args.out_dir.display());
    Ok(())
}

fn apply_model_overrides(
    cfg: &mut RunConfig,
    bits: Option<u32>,
    layers: Option<u32>,
    self_weight: Option<f64>,
    normalize: Option<bool>,
    readout: Option<&str>,
) -> Result<(), CliError> {
    if let Some(v) = bits {
        cfg.model.bits = v;
    }
    if let Some(v) = layers {
        cfg.model.layers = v;
    }
    if let Some(v) = self_weight {
        cfg.model.self_weight = v;
    }
    if let Some(v) = normalize {
        cfg.model.normalize_neighbors = v;
    }
    if let Some(v) = readout {
        cfg.model.readout = parse_readout(v).map_err(CliError::Validation)?;
    }
    Ok(())
}

pub fn train(mut cfg: RunConfig, args: TrainArgs) -> Result<(), CliError> {
    apply_model_overrides(
        &mut cfg,
        args.bits,
        args.layers,
        args.self_weight,
        args.normalize_neighbors,
        args.readout.as_deref(),
    )?;
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = &args.triples_per_epoch {
        cfg.train.triples_per_epoch = if v == "auto" {
            None
        } else {
            Some(v.parse().map_err(|e| {
                CliError::Validation(format!("bad triples_per_epoch: {e}"))
            })?)
        };
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = args.eval_every {
        cfg.train.eval_every = v;
    }
    if let Some(v) = args.patience {
        cfg.train.patience = v;
    }
    if let Some(v) = &args.user_sampling {
        cfg.train.user_sampling = parse_sampling(v).map_err(CliError::Validation)?;
    }
    if let Some(v) = args.beta0 {
        cfg.model.beta0 = v;
    }
    if let Some(v) = args.beta_growth {
        cfg.model.beta_growth = v;
    }
    if let Some(v) = args.beta_period {
        cfg.model.beta_period = v;
    }
    if let Some(v) = args.beta_max {
        cfg.model.beta_max = v;
    }
    cfg.validate()?;
    cfg.print_resolved();

    let data = artifacts::read_dataset(&args.data_dir, artifacts::TRAIN_EVENTS)?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.data_dir.clone());
    ensure_dir(&out_dir)?;

    let outcome: TrainOutcome<f32> = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let state = ckpt
                .into_state(&cfg.model, data.num_users(), data.num_items())
                .map_err(validation)?;
            println!("resuming from epoch {}", state.epoch);
            trainer::resume(&data, &cfg.model, &cfg.train, state).map_err(train_error)?
        }
        None => trainer::train(&data, &cfg.model, &cfg.train).map_err(train_error)?,
    };

    let ckpt = Checkpoint::capture(
        &outcome.state,
        &cfg.model,
        outcome.fit_graph.num_users(),
        outcome.fit_graph.num_items(),
    );
    let ckpt_path = join(&out_dir, artifacts::CHECKPOINT);
    save_checkpoint(&ckpt_path, &ckpt)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", ckpt_path.display())))?;

    let mut report_text = String::new();
    for record in &outcome.report.epochs {
        report_text.push_str(
            &serde_json::to_string(record).map_err(|e| runtime(format!("report encode: {e}")))?,
        );
        report_text.push('\n');
    }
    let summary = serde_json::json!({
        "best_epoch": outcome.report.best_epoch,
        "best_val": outcome.report.best_val,
        "triples_per_epoch": outcome.report.triples_per_epoch,
        "steps_per_epoch": outcome.report.steps_per_epoch,
        "stopped_early": outcome.report.stopped_early,
    });
    report_text.push_str(&summary.to_string());
    report_text.push('\n');
    artifacts::write_file(&join(&out_dir, artifacts::REPORT), report_text.as_bytes())?;

    artifacts::write_dense_events(&join(&out_dir, artifacts::FIT_EVENTS), &outcome.fit)?;
    artifacts::write_dense_events(&join(&out_dir, artifacts::VAL_EVENTS), &outcome.val)?;

    match outcome.report.best_val {
        Some(v) => println!(
            "train: best epoch {} val recall@{} {:.6} (checkpoint {})",
            outcome.report.best_epoch,
            trainer::VALIDATION_K,
            v.recall,
            ckpt_path.display()
        ),
        None => println!(
            "train: {} epochs, no validation ran (checkpoint {})",
            outcome.report.epochs.len(),
            ckpt_path.display()
        ),
    }
    Ok(())
}

pub fn export(mut cfg: RunConfig, args: ExportArgs) -> Result<(), CliError> {
    let ckpt_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| join(&args.data_dir, artifacts::CHECKPOINT));
    let ckpt = load_checkpoint(&ckpt_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", ckpt_path.display())))?;

    // The checkpoint carries the model identity; explicit flags override it
    // and must then match on restore.
    cfg.model.bits = ckpt.bits;
    cfg.model.layers = ckpt.layers;
    cfg.model.self_weight = ckpt.self_weight;
    cfg.model.normalize_neighbors = ckpt.flags & 1 != 0;
    cfg.model.readout = if ckpt.flags & 2 != 0 {
        hamrec::model::Readout::MeanThenSign
    } else {
        hamrec::model::Readout::LastLayer
    };
    apply_model_overrides(
        &mut cfg,
        args.bits,
        args.layers,
        args.self_weight,
        args.normalize_neighbors,
        args.readout.as_deref(),
    )?;
    cfg.validate()?;
    cfg.print_resolved();

    let fit = artifacts::read_dataset(&args.data_dir, artifacts::FIT_EVENTS)?;
    let graph = build_graph(&fit);
    let state = ckpt
        .into_state(&cfg.model, graph.num_users(), graph.num_items())
        .map_err(validation)?;

    let (embeddings, which) = match &state.best {
        Some(b) => (&b.embeddings, format!("best epoch {}", b.epoch)),
        None => (&state.embeddings, format!("epoch {}", state.epoch)),
    };
    println!("exporting {which}");
    let (users, items) = trainer::export_codes(embeddings, &graph, &cfg.model).map_err(runtime)?;

    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.data_dir.clone());
    ensure_dir(&out_dir)?;
    let upath = join(&out_dir, artifacts::USER_CODES);
    let ipath = join(&out_dir, artifacts::ITEM_CODES);
    write_codes_file(&upath, &users).map_err(|e| runtime(format!("{}: {e}", upath.display())))?;
    write_codes_file(&ipath, &items).map_err(|e| runtime(format!("{}: {e}", ipath.display())))?;
    println!(
        "export: {} user codes -> {}, {} item codes -> {} (K = {})",
        users.rows(),
        upath.display(),
        items.rows(),
        ipath.display(),
        users.bits()
    );
    Ok(())
}

/// Placeholder id maps for dense-id artifacts whose tokens are irrelevant.
fn dense_maps(users: usize, items: usize) -> (IdMap, IdMap) {
    let mut u = IdMap::default();
    for i in 0..users {
        u.intern(&format!("u{i}"));
    }
    let mut it = IdMap::default();
    for i in 0..items {
        it.intern(&format!("i{i}"));
    }
    (u, it)
}

fn read_dense_dataset(path: &Path) -> Result<InteractionDataset, CliError> {
    let (users, items, events) = artifacts::read_dense_events(path)?;
    let (u, i) = dense_maps(users, items);
    Ok(InteractionDataset::from_dense_events(u, i, events))
}

pub fn eval(mut cfg: RunConfig, args: EvalArgs) -> Result<(), CliError> {
    if let Some(ks) = &args.ks {
        cfg.ks = ks
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Validation(format!("bad ks: {e}")))?;
    }
    cfg.validate()?;
    cfg.print_resolved();

    let user_codes_path = args
        .user_codes
        .clone()
        .unwrap_or_else(|| join(&args.data_dir, artifacts::USER_CODES));
    let item_codes_path = args
        .item_codes
        .clone()
        .unwrap_or_else(|| join(&args.data_dir, artifacts::ITEM_CODES));
    let test_path = args
        .test
        .clone()
        .unwrap_or_else(|| join(&args.data_dir, artifacts::TEST_EVENTS));
    let train_path = args
        .train
        .clone()
        .unwrap_or_else(|| join(&args.data_dir, artifacts::TRAIN_EVENTS));

    let user_codes = read_codes_file(&user_codes_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", user_codes_path.display())))?;
    let item_codes = read_codes_file(&item_codes_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", item_codes_path.display())))?;
    let test = read_dense_dataset(&test_path)?;
    let train = read_dense_dataset(&train_path)?;
    let train_graph = build_graph(&train);

    let table = evaluate(&user_codes, &item_codes, &test, &train_graph, &cfg.ks)
        .map_err(validation)?;

    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.data_dir.clone());
    ensure_dir(&out_dir)?;
    let mut json = serde_json::to_string_pretty(&table)
        .map_err(|e| runtime(format!("metrics encode: {e}")))?;
    json.push('\n');
    artifacts::write_file(&join(&out_dir, artifacts::METRICS_JSON), json.as_bytes())?;
    let text = table.to_text();
    artifacts::write_file(&join(&out_dir, artifacts::METRICS_TEXT), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn retrieve(mut cfg: RunConfig, args: RetrieveArgs) -> Result<(), CliError> {
    if let Some(b) = args.bands {
        cfg.bands = Some(b);
    }
    if let Some(r) = args.radius {
        cfg.radius = r;
    }
    if args.k == 0 {
        return Err(CliError::Validation("k must be at least 1".into()));
    }
    cfg.validate()?;
    cfg.print_resolved();

    let item_codes_path = args
        .item_codes
        .clone()
        .unwrap_or_else(|| join(&args.data_dir, artifacts::ITEM_CODES));
    let items = read_codes_file(&item_codes_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", item_codes_path.display())))?;
    let bits = items.bits();
    let index = build_index(items, cfg.bands).map_err(validation)?;

    // Queries: a single user id and/or a batch file of user ids or
    // hex-encoded raw codes (K/4 hex chars, little-endian byte order).
    let mut wants_user_codes = args.user.is_some();
    let mut raw_queries: Vec<(String, QuerySpec)> = Vec::new();
    if let Some(u) = args.user {
        raw_queries.push((u.to_string(), QuerySpec::User(u)));
    }
    if let Some(qpath) = &args.queries {
        let text = std::fs::read_to_string(qpath)
            .map_err(|e| CliError::Validation(format!("{}: {e}", qpath.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let tok = line.trim();
            if tok.is_empty() || tok.starts_with('#') {
                continue;
            }
            if let Ok(u) = tok.parse::<u32>() {
                wants_user_codes = true;
                raw_queries.push((tok.to_owned(), QuerySpec::User(u)));
            } else {
                let code = parse_hex_code(tok, bits).map_err(|e| {
                    CliError::Validation(format!("{}:{}: {e}", qpath.display(), lineno + 1))
                })?;
                raw_queries.push((tok.to_owned(), QuerySpec::Raw(code)));
            }
        }
    }
    if raw_queries.is_empty() {
        return Err(CliError::Validation(
            "no queries: pass --user or --queries".into(),
        ));
    }

    let user_codes = if wants_user_codes {
        let path = args
            .user_codes
            .clone()
            .unwrap_or_else(|| join(&args.data_dir, artifacts::USER_CODES));
        Some(
            read_codes_file(&path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
        )
    } else {
        None
    };

    let exclude_graph = match &args.exclude_train {
        Some(path) => Some(build_graph(&read_dense_dataset(path)?)),
        None => None,
    };
    let probing = cfg.bands.is_some();
    if probing && exclude_graph.is_some() {
        return Err(CliError::Validation(
            "--exclude-train applies to exact scans; drop --bands to use it".into(),
        ));
    }

    let mut out = String::new();
    for (qid, spec) in &raw_queries {
        let (code, user) = match spec {
            QuerySpec::User(u) => {
                let codes = user_codes.as_ref().expect("user codes loaded");
                if *u as usize >= codes.rows() {
                    return Err(CliError::Validation(format!(
                        "user {u} not in {} (rows: {})",
                        artifacts::USER_CODES,
                        codes.rows()
                    )));
                }
                (codes.code(*u as usize), Some(*u))
            }
            QuerySpec::Raw(c) => (c.clone(), None),
        };
        let exclude = match (user, &exclude_graph) {
            (Some(u), Some(g)) if (u as usize) < g.num_users() => {
                IdSet::from_sorted(g.user_neighbors(u))
            }
            _ => IdSet::empty(),
        };
        let result = if probing {
            topk_probe(&index, &code, args.k, cfg.radius).map_err(validation)?
        } else {
            topk_scan(&index, &code, args.k, &exclude).map_err(validation)?
        };
        for (rank, (item, score)) in result.hits.iter().enumerate() {
            out.push_str(&format!("{qid}\t{}\t{item}\t{score}\n", rank + 1));
        }
    }

    match &args.out {
        Some(path) => artifacts::write_file(path, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}

enum QuerySpec {
    User(u32),
    Raw(HashCode),
}

/// Hex-encoded code: K/4 hex chars, bytes little-endian in bit order.
fn parse_hex_code(token: &str, bits: u32) -> Result<HashCode, String> {
    let expect = bits as usize / 4;
    let tok = token.strip_prefix("0x").unwrap_or(token);
    if tok.len() != expect {
        return Err(format!(
            "hex query must have {expect} chars for K={bits}, got {}",
            tok.len()
        ));
    }
    let mut bytes = Vec::with_capacity(expect / 2);
    for i in (0..tok.len()).step_by(2) {
        let b = u8::from_str_radix(&tok[i..i + 2], 16).map_err(|e| format!("bad hex: {e}"))?;
        bytes.push(b);
    }
    HashCode::from_bytes(bits, &bytes).map_err(|e| e.to_string())
}

pub fn bench(cfg: RunConfig, args: BenchArgs) -> Result<(), CliError> {
    cfg.validate()?;
    cfg.print_resolved();

    let items = match &args.item_codes {
        Some(path) => read_codes_file(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
        None => {
            let bits = args.bits.unwrap_or(cfg.model.bits);
            random_codes(cfg.seed, bits, args.synthetic_items)?
        }
    };
    let bits = items.bits();
    let index = build_index(items, None).map_err(validation)?;

    let mut rng = stream_rng(cfg.seed, "bench-queries");
    let words = words_for(bits);
    let queries: Vec<HashCode> = (0..args.queries)
        .map(|_| {
            let w: Vec<u64> = (0..words).map(|_| rng.gen()).collect();
            HashCode::from_words(bits, w).expect("validated bits")
        })
        .collect();

    let report = hamrec::retrieval::bench(&index, &queries, args.k).map_err(validation)?;
    print!("{report}");
    if let Some(path) = &args.out {
        artifacts::write_file(path, report.to_string().as_bytes())?;
    }
    Ok(())
}

fn random_codes(seed: u64, bits: u32, rows: usize) -> Result<CodeMatrix, CliError> {
    let mut rng = stream_rng(seed, "bench-items");
    let words = words_for(bits);
    let codes: Vec<HashCode> = (0..rows)
        .map(|_| {
            let w: Vec<u64> = (0..words).map(|_| rng.gen()).collect();
            HashCode::from_words(bits, w).map_err(validation)
        })
        .collect::<Result<_, _>>()?;
    CodeMatrix::from_codes(&codes).map_err(validation)
}
