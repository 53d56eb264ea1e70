//! Training orchestration: epochs of pairwise updates with beta
//! continuation, Adam, validation-based early stopping, and export of the
//! final hard codes.
//!
//! Validation is an inner leave-last-one split of the training set (one
//! held-out event per user with at least two train events), distinct from
//! the outer test split. The propagation graph is built from the remaining
//! "fit" events; exported codes and in-training validation both use it.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::eval::{evaluate, EvalError};
use crate::graph::{
    build_graph, split, BipartiteGraph, DataError, InteractionDataset, SampleError, SplitPolicy,
    SplitSpec, Triple, TripleSampler, UserSampling,
};
use crate::hamming::CodeMatrix;
use crate::loss::bpr_batch;
use crate::matrix::Matrix;
use crate::model::{
    beta_schedule, forward_hard, ConfigError, EmbeddingTable, ModelConfig, ModelError,
};
use crate::scalar::Real;
use crate::seed::stream_rng;

/// k at which validation recall drives early stopping.
pub const VALIDATION_K: usize = 20;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bad train config: {0}")]
    BadTrainConfig(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite loss at epoch {epoch}: training diverged")]
    Diverged { epoch: u32 },
    #[error("training set has no events")]
    EmptyTrainSet,
    #[error("resume state does not match: {0}")]
    ResumeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    /// Triples sampled per epoch; `None` uses the fit edge count.
    pub triples_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L2 coefficient on the embedding rows each triple touches.
    pub lambda: f64,
    pub seed: u64,
    /// Epochs between validation evaluations.
    pub eval_every: u32,
    /// Evaluations without improvement before stopping.
    pub patience: u32,
    pub user_sampling: UserSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            triples_per_epoch: None,
            batch_size: 2048,
            learning_rate: 1e-3,
            lambda: 1e-5,
            seed: 42,
            eval_every: 5,
            patience: 3,
            user_sampling: UserSampling::EdgeProportional,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadTrainConfig("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::BadTrainConfig(
                "learning_rate must be positive and finite",
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(TrainError::BadTrainConfig("lambda must be non-negative"));
        }
        if self.eval_every == 0 {
            return Err(TrainError::BadTrainConfig("eval_every must be positive"));
        }
        if self.patience == 0 {
            return Err(TrainError::BadTrainConfig("patience must be at least 1"));
        }
        if self.triples_per_epoch == Some(0) {
            return Err(TrainError::BadTrainConfig(
                "triples_per_epoch must be positive",
            ));
        }
        Ok(())
    }
}

/// Validation metrics at k = [`VALIDATION_K`].
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct ValPoint {
    pub recall: f64,
    pub ndcg: f64,
    pub hit: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub loss_mean: f64,
    pub beta: f64,
    pub wall_clock_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<ValPoint>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose embeddings are returned.
    pub best_epoch: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_val: Option<ValPoint>,
    pub triples_per_epoch: usize,
    pub steps_per_epoch: usize,
    pub stopped_early: bool,
}

/// Adam with bias correction; moments share the parameter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R> {
    pub m: Matrix<R>,
    pub v: Matrix<R>,
    pub t: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Matrix<R>, grads: &Matrix<R>, lr: f64) {
        self.t += 1;
        let b1 = R::from_config(ADAM_BETA1);
        let b2 = R::from_config(ADAM_BETA2);
        let one_minus_b1 = R::from_config(1.0 - ADAM_BETA1);
        let one_minus_b2 = R::from_config(1.0 - ADAM_BETA2);
        let bc1 = R::from_config(1.0 - ADAM_BETA1.powi(self.t as i32));
        let bc2 = R::from_config(1.0 - ADAM_BETA2.powi(self.t as i32));
        let eps = R::from_config(ADAM_EPS);
        let lr = R::from_config(lr);
        let (m, v) = (self.m.data_mut(), self.v.data_mut());
        for (((p, g), mi), vi) in params
            .data_mut()
            .iter_mut()
            .zip(grads.data().iter())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + one_minus_b1 * *g;
            *vi = b2 * *vi + one_minus_b2 * *g * *g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Best-so-far validation snapshot for early stopping.
#[derive(Debug, Clone, PartialEq)]
pub struct BestState<R> {
    pub epoch: u32,
    pub val: ValPoint,
    pub embeddings: EmbeddingTable<R>,
    pub stalls: u32,
}

/// Complete mutable trainer state between epochs; everything a checkpoint
/// must capture for bit-exact resumption.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState<R> {
    pub embeddings: EmbeddingTable<R>,
    pub adam: AdamState<R>,
    /// Completed epochs.
    pub epoch: u32,
    /// beta used in the last completed epoch (0 before any).
    pub beta: f64,
    pub sampler_rng: ChaCha8Rng,
    pub best: Option<BestState<R>>,
}

#[derive(Debug)]
pub struct TrainOutcome<R> {
    /// Embeddings of the best validation epoch (final epoch when no
    /// validation ran).
    pub embeddings: EmbeddingTable<R>,
    pub report: TrainReport,
    /// Inner split actually fitted, its held-out validation events, and the
    /// propagation graph.
    pub fit: InteractionDataset,
    pub val: InteractionDataset,
    pub fit_graph: BipartiteGraph,
    /// Raw end-of-run state, for checkpointing.
    pub state: TrainerState<R>,
}

/// Trains from scratch.
pub fn train<R: Real>(
    train_data: &InteractionDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<R>, TrainError> {
    run(train_data, model_cfg, train_cfg, None)
}

/// Resumes from a checkpointed state; continues to `train_cfg.epochs`.
pub fn resume<R: Real>(
    train_data: &InteractionDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    state: TrainerState<R>,
) -> Result<TrainOutcome<R>, TrainError> {
    run(train_data, model_cfg, train_cfg, Some(state))
}

fn run<R: Real>(
    train_data: &InteractionDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    resume_state: Option<TrainerState<R>>,
) -> Result<TrainOutcome<R>, TrainError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }

    // Inner validation split; deterministic in the seed.
    let inner = split(
        train_data,
        &SplitSpec {
            policy: SplitPolicy::LeaveLastOne,
            seed: train_cfg.seed,
        },
    )?;
    let fit = inner.train;
    let val = inner.test;
    let fit_graph = build_graph(&fit);
    if fit_graph.edge_count() == 0 {
        return Err(TrainError::EmptyTrainSet);
    }
    let nodes = fit_graph.node_count();

    let mut state = match resume_state {
        Some(s) => {
            if s.embeddings.rows() != nodes || s.embeddings.bits() != model_cfg.bits {
                return Err(TrainError::ResumeMismatch(format!(
                    "embeddings {}x{} vs graph {}x{}",
                    s.embeddings.rows(),
                    s.embeddings.bits(),
                    nodes,
                    model_cfg.bits
                )));
            }
            if s.epoch > train_cfg.epochs {
                return Err(TrainError::ResumeMismatch(format!(
                    "checkpoint is at epoch {} but the run ends at {}",
                    s.epoch, train_cfg.epochs
                )));
            }
            s
        }
        None => {
            let mut init_rng = stream_rng(train_cfg.seed, "trainer-init");
            TrainerState {
                embeddings: EmbeddingTable::init_uniform(nodes, model_cfg.bits, &mut init_rng),
                adam: AdamState::new(nodes, model_cfg.bits as usize),
                epoch: 0,
                beta: 0.0,
                sampler_rng: stream_rng(train_cfg.seed, "trainer-sampler"),
                best: None,
            }
        }
    };

    let triples_per_epoch = train_cfg
        .triples_per_epoch
        .unwrap_or_else(|| fit_graph.edge_count());
    let steps_per_epoch = triples_per_epoch.div_ceil(train_cfg.batch_size);

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: state.epoch.saturating_sub(1),
        best_val: state.best.as_ref().map(|b| b.val),
        triples_per_epoch,
        steps_per_epoch,
        stopped_early: false,
    };

    let mut sampler = TripleSampler::new(state.sampler_rng.clone(), train_cfg.user_sampling);
    let mut triples: Vec<Triple> = Vec::with_capacity(train_cfg.batch_size);

    for epoch in state.epoch..train_cfg.epochs {
        let started = Instant::now();
        let beta = beta_schedule(epoch, model_cfg);
        let mut loss_weighted = 0.0f64;
        let mut remaining = triples_per_epoch;
        while remaining > 0 {
            let bsize = remaining.min(train_cfg.batch_size);
            remaining -= bsize;
            triples.clear();
            for _ in 0..bsize {
                triples.push(sampler.sample(&fit_graph)?);
            }
            let out = bpr_batch(
                &fit_graph,
                &state.embeddings,
                model_cfg,
                beta,
                train_cfg.lambda,
                &triples,
            )?;
            if !out.loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            state
                .adam
                .step(state.embeddings.matrix_mut(), &out.grads, train_cfg.learning_rate);
            loss_weighted += out.loss * bsize as f64;
        }
        let loss_mean = loss_weighted / triples_per_epoch as f64;
        if !loss_mean.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }

        let val_point = if !val.is_empty() && (epoch + 1) % train_cfg.eval_every == 0 {
            Some(validate_embeddings(
                &state.embeddings,
                &fit_graph,
                &val,
                model_cfg,
            )?)
        } else {
            None
        };

        let mut stop = false;
        if let Some(vp) = val_point {
            let improved = state
                .best
                .as_ref()
                .map(|b| vp.recall > b.val.recall)
                .unwrap_or(true);
            if improved {
                state.best = Some(BestState {
                    epoch,
                    val: vp,
                    embeddings: state.embeddings.clone(),
                    stalls: 0,
                });
            } else if let Some(b) = state.best.as_mut() {
                b.stalls += 1;
                if b.stalls >= train_cfg.patience {
                    stop = true;
                }
            }
        }

        report.epochs.push(EpochRecord {
            epoch,
            loss_mean,
            beta,
            wall_clock_s: started.elapsed().as_secs_f64(),
            val: val_point,
        });
        state.epoch = epoch + 1;
        state.beta = beta;
        if stop {
            report.stopped_early = true;
            break;
        }
    }
    state.sampler_rng = sampler.rng().clone();

    let (best_emb, best_epoch, best_val) = match &state.best {
        Some(b) => (b.embeddings.clone(), b.epoch, Some(b.val)),
        None => (
            state.embeddings.clone(),
            state.epoch.saturating_sub(1),
            None,
        ),
    };
    report.best_epoch = best_epoch;
    report.best_val = best_val;

    Ok(TrainOutcome {
        embeddings: best_emb,
        report,
        fit,
        val,
        fit_graph,
        state,
    })
}

/// Hard-code validation pass used during training and by pipeline checks.
pub fn validate_embeddings<R: Real>(
    emb: &EmbeddingTable<R>,
    fit_graph: &BipartiteGraph,
    val: &InteractionDataset,
    model_cfg: &ModelConfig,
) -> Result<ValPoint, TrainError> {
    let (users, items) = export_codes(emb, fit_graph, model_cfg)?;
    let table = evaluate(&users, &items, val, fit_graph, &[VALIDATION_K])?;
    let p = table
        .mean_at(VALIDATION_K)
        .expect("requested k present");
    Ok(ValPoint {
        recall: p.recall,
        ndcg: p.ndcg,
        hit: p.hit,
    })
}

/// Final hard codes: sign(e) layer-0 (sign(0) = +1), L hard propagation
/// layers, then the configured readout, split into user and item matrices.
pub fn export_codes<R: Real>(
    emb: &EmbeddingTable<R>,
    graph: &BipartiteGraph,
    model_cfg: &ModelConfig,
) -> Result<(CodeMatrix, CodeMatrix), ModelError> {
    let state = forward_hard(graph, emb, model_cfg)?;
    let codes = state.readout(model_cfg);
    let users = codes.slice_rows(0, graph.num_users());
    let items = codes.slice_rows(graph.num_users(), graph.num_items());
    Ok((users, items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_interactions;
    use crate::model::Readout;
    use rand::Rng;
    use std::io::Cursor;

    fn planted_blocks(users_per_block: usize, items_per_block: usize, seed: u64) -> InteractionDataset {
        // Two user blocks × two item blocks; users connect densely inside
        // their block and sparsely across.
        let mut rng = stream_rng(seed, "planted");
        let mut text = String::new();
        for b in 0..2usize {
            for u in 0..users_per_block {
                let uid = b * users_per_block + u;
                for i in 0..items_per_block {
                    let own = rng.gen::<f64>() < 0.8;
                    let cross = rng.gen::<f64>() < 0.05;
                    let iid_own = b * items_per_block + i;
                    let iid_cross = (1 - b) * items_per_block + i;
                    if own {
                        text.push_str(&format!("u{uid}\ti{iid_own}\t{}\n", rng.gen_range(0..10_000)));
                    }
                    if cross {
                        text.push_str(&format!("u{uid}\ti{iid_cross}\t{}\n", rng.gen_range(0..10_000)));
                    }
                }
            }
        }
        parse_interactions(Cursor::new(text), "mem").unwrap()
    }

    fn tiny_config(bits: u32, layers: u32) -> ModelConfig {
        ModelConfig {
            bits,
            layers,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_embeddings() {
        let data = planted_blocks(5, 5, 1);
        let mcfg = tiny_config(16, 1);
        let tcfg = TrainConfig {
            epochs: 0,
            seed: 7,
            ..TrainConfig::default()
        };
        let out = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        let mut rng = stream_rng(7, "trainer-init");
        let expected = EmbeddingTable::<f32>::init_uniform(
            out.fit_graph.node_count(),
            16,
            &mut rng,
        );
        assert_eq!(out.embeddings, expected);
        assert!(out.report.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = planted_blocks(5, 5, 2);
        let mcfg = tiny_config(16, 1);
        let tcfg = TrainConfig {
            epochs: 4,
            batch_size: 64,
            triples_per_epoch: Some(128),
            eval_every: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        let b = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        let strip = |r: &TrainReport| -> Vec<(u32, f64, f64, Option<ValPoint>)> {
            r.epochs
                .iter()
                .map(|e| (e.epoch, e.loss_mean, e.beta, e.val))
                .collect()
        };
        assert_eq!(strip(&a.report), strip(&b.report));
        assert_eq!(a.report.best_epoch, b.report.best_epoch);
    }

    #[test]
    fn beta_never_decreases_across_epochs() {
        let data = planted_blocks(4, 4, 3);
        let mcfg = ModelConfig {
            beta_period: 1,
            beta_max: 4.0,
            ..tiny_config(8, 1)
        };
        let tcfg = TrainConfig {
            epochs: 6,
            batch_size: 32,
            triples_per_epoch: Some(32),
            ..TrainConfig::default()
        };
        let out = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        let betas: Vec<f64> = out.report.epochs.iter().map(|e| e.beta).collect();
        assert!(betas.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(betas.last().copied(), Some(4.0));
    }

    #[test]
    fn planted_blocks_learn_separated_codes() {
        let data = planted_blocks(10, 10, 4);
        let mcfg = ModelConfig {
            beta_period: 5,
            ..tiny_config(16, 1)
        };
        let tcfg = TrainConfig {
            epochs: 30,
            batch_size: 128,
            triples_per_epoch: Some(512),
            learning_rate: 5e-3,
            eval_every: 10,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        let (users, items) = export_codes(&out.embeddings, &out.fit_graph, &mcfg).unwrap();

        // Mean user-item similarity inside blocks must beat across blocks.
        let mut intra = 0.0f64;
        let mut inter = 0.0f64;
        let mut n_intra = 0usize;
        let mut n_inter = 0usize;
        for u in 0..20usize {
            for i in 0..20usize {
                let s = f64::from(users.code(u).similarity_score(&items.code(i)));
                if (u < 10) == (i < 10) {
                    intra += s;
                    n_intra += 1;
                } else {
                    inter += s;
                    n_inter += 1;
                }
            }
        }
        let intra_mean = intra / n_intra as f64;
        let inter_mean = inter / n_inter as f64;
        assert!(
            intra_mean > inter_mean,
            "intra {intra_mean} vs inter {inter_mean}"
        );
    }

    #[test]
    fn frozen_batch_loss_decreases_after_one_adam_step() {
        // Probabilistic check over 100 random small instances at lr 1e-4.
        let mut ok = 0usize;
        for trial in 0..100u64 {
            let mut rng = stream_rng(trial, "frozen");
            let mut text = String::new();
            for u in 0..8 {
                for i in 0..8 {
                    if rng.gen::<f64>() < 0.35 {
                        text.push_str(&format!("u{u}\ti{i}\n"));
                    }
                }
            }
            let Ok(ds) = parse_interactions(Cursor::new(text), "mem") else {
                continue;
            };
            let g = build_graph(&ds);
            let mcfg = tiny_config(8, 1);
            let mut emb_rng = stream_rng(trial, "frozen-emb");
            let mut emb =
                EmbeddingTable::<f64>::init_uniform(g.node_count(), 8, &mut emb_rng);
            let mut sampler = TripleSampler::new(
                stream_rng(trial, "frozen-triples"),
                UserSampling::EdgeProportional,
            );
            let Ok(triples) = (0..16)
                .map(|_| sampler.sample(&g))
                .collect::<Result<Vec<_>, _>>()
            else {
                continue;
            };
            let before = bpr_batch(&g, &emb, &mcfg, 1.0, 1e-5, &triples).unwrap();
            let mut adam = AdamState::new(g.node_count(), 8);
            adam.step(emb.matrix_mut(), &before.grads, 1e-4);
            let after = bpr_batch(&g, &emb, &mcfg, 1.0, 1e-5, &triples).unwrap();
            if after.loss < before.loss {
                ok += 1;
            }
        }
        assert!(ok >= 95, "loss decreased in only {ok}/100 trials");
    }

    #[test]
    fn returned_embeddings_match_best_validation() {
        let data = planted_blocks(8, 8, 6);
        let mcfg = tiny_config(16, 1);
        let tcfg = TrainConfig {
            epochs: 12,
            batch_size: 64,
            triples_per_epoch: Some(256),
            eval_every: 2,
            patience: 2,
            seed: 13,
            ..TrainConfig::default()
        };
        let out = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        if let Some(best) = out.report.best_val {
            let recomputed =
                validate_embeddings(&out.embeddings, &out.fit_graph, &out.val, &mcfg).unwrap();
            assert_eq!(recomputed, best);
            // The best recall matches the maximum over recorded evals.
            let max_recall = out
                .report
                .epochs
                .iter()
                .filter_map(|e| e.val.map(|v| v.recall))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best.recall, max_recall);
        }
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let data = planted_blocks(4, 4, 8);
        let mcfg = tiny_config(8, 1);
        let tcfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            triples_per_epoch: Some(64),
            learning_rate: 1e20,
            lambda: 1.0,
            ..TrainConfig::default()
        };
        match train::<f32>(&data, &mcfg, &tcfg) {
            Err(TrainError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn export_l0_is_sign_of_embeddings() {
        let data = planted_blocks(3, 3, 9);
        let g = build_graph(&data);
        let mcfg = tiny_config(8, 0);
        let mut rng = stream_rng(1, "export");
        let emb = EmbeddingTable::<f32>::init_uniform(g.node_count(), 8, &mut rng);
        let (users, items) = export_codes(&emb, &g, &mcfg).unwrap();
        let direct = emb.sign_codes();
        for u in 0..g.num_users() {
            assert_eq!(users.code(u), direct.code(u));
        }
        for i in 0..g.num_items() {
            assert_eq!(items.code(i), direct.code(g.num_users() + i));
        }
    }

    #[test]
    fn export_twice_is_byte_identical() {
        let data = planted_blocks(4, 4, 10);
        let g = build_graph(&data);
        let mcfg = ModelConfig {
            readout: Readout::MeanThenSign,
            ..tiny_config(16, 2)
        };
        let mut rng = stream_rng(2, "export");
        let emb = EmbeddingTable::<f32>::init_uniform(g.node_count(), 16, &mut rng);
        let (u1, i1) = export_codes(&emb, &g, &mcfg).unwrap();
        let (u2, i2) = export_codes(&emb, &g, &mcfg).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        crate::codefile::write_codes(&mut a, &u1).unwrap();
        crate::codefile::write_codes(&mut b, &u2).unwrap();
        assert_eq!(a, b);
        assert_eq!(i1, i2);
    }

    #[test]
    fn item_code_file_size_follows_the_format() {
        // Header is 4 (magic) + 2 (version) + 4 (K) + 8 (count) = 18 bytes;
        // K = 64 packs one word per row.
        assert_eq!(crate::codefile::code_file_len(64, 1682), 18 + 1682 * 8);
        let m = CodeMatrix::zeros(64, 1682).unwrap();
        let mut buf = Vec::new();
        crate::codefile::write_codes(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 18 + 1682 * 8);
    }
}
