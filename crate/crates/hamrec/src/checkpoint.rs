//! Trainer checkpoints.
//!
//! Layout (little-endian): magic `HSCK`, version u16 = 1, N u64, M u64,
//! K u32, L u32, self-weight f64, flags u32, then (N+M)×K embedding entries
//! as f32, the two Adam moment matrices in the same layout, epoch u32 and
//! the current beta as f64. A resumption block follows: the Adam step
//! counter, the sampler's ChaCha seed/stream/word-position, and the
//! early-stopping snapshot (present flag, metrics, stall counter, best
//! embeddings), so a resumed run replays the exact trajectory of an
//! uninterrupted one.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{ModelConfig, Readout};
use crate::trainer::{AdamState, BestState, TrainerState, ValPoint};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const FLAG_NORMALIZE: u32 = 1;
const FLAG_MEAN_READOUT: u32 = 2;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected HSCK")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    BadVersion(u16),
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
    #[error("checkpoint does not match the run: {0}")]
    Mismatch(String),
}

/// A trainer state bound to its model identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub num_users: u64,
    pub num_items: u64,
    pub bits: u32,
    pub layers: u32,
    pub self_weight: f64,
    pub flags: u32,
    pub state: TrainerState<f32>,
}

impl Checkpoint {
    pub fn capture(
        state: &TrainerState<f32>,
        cfg: &ModelConfig,
        num_users: usize,
        num_items: usize,
    ) -> Self {
        let mut flags = 0u32;
        if cfg.normalize_neighbors {
            flags |= FLAG_NORMALIZE;
        }
        if cfg.readout == Readout::MeanThenSign {
            flags |= FLAG_MEAN_READOUT;
        }
        Self {
            num_users: num_users as u64,
            num_items: num_items as u64,
            bits: cfg.bits,
            layers: cfg.layers,
            self_weight: cfg.self_weight,
            flags,
            state: state.clone(),
        }
    }

    /// Validates the checkpoint against the run's config and shape, then
    /// hands back the trainer state.
    pub fn into_state(
        self,
        cfg: &ModelConfig,
        num_users: usize,
        num_items: usize,
    ) -> Result<TrainerState<f32>, CheckpointError> {
        let mut problems = Vec::new();
        if self.num_users != num_users as u64 || self.num_items != num_items as u64 {
            problems.push(format!(
                "graph is {}x{}, checkpoint was {}x{}",
                num_users, num_items, self.num_users, self.num_items
            ));
        }
        if self.bits != cfg.bits {
            problems.push(format!("bits {} vs config {}", self.bits, cfg.bits));
        }
        if self.layers != cfg.layers {
            problems.push(format!("layers {} vs config {}", self.layers, cfg.layers));
        }
        if self.self_weight != cfg.self_weight {
            problems.push(format!(
                "self_weight {} vs config {}",
                self.self_weight, cfg.self_weight
            ));
        }
        let want_flags = {
            let mut f = 0u32;
            if cfg.normalize_neighbors {
                f |= FLAG_NORMALIZE;
            }
            if cfg.readout == Readout::MeanThenSign {
                f |= FLAG_MEAN_READOUT;
            }
            f
        };
        if self.flags != want_flags {
            problems.push(format!("flags {:#x} vs config {:#x}", self.flags, want_flags));
        }
        if problems.is_empty() {
            Ok(self.state)
        } else {
            Err(CheckpointError::Mismatch(problems.join("; ")))
        }
    }
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.num_users.to_le_bytes())?;
    w.write_all(&ckpt.num_items.to_le_bytes())?;
    w.write_all(&ckpt.bits.to_le_bytes())?;
    w.write_all(&ckpt.layers.to_le_bytes())?;
    w.write_all(&ckpt.self_weight.to_le_bytes())?;
    w.write_all(&ckpt.flags.to_le_bytes())?;

    let st = &ckpt.state;
    write_matrix(w, st.embeddings.matrix())?;
    write_matrix(w, &st.adam.m)?;
    write_matrix(w, &st.adam.v)?;
    w.write_all(&st.epoch.to_le_bytes())?;
    w.write_all(&st.beta.to_le_bytes())?;

    // Resumption block.
    w.write_all(&st.adam.t.to_le_bytes())?;
    w.write_all(&st.sampler_rng.get_seed())?;
    w.write_all(&st.sampler_rng.get_stream().to_le_bytes())?;
    w.write_all(&st.sampler_rng.get_word_pos().to_le_bytes())?;
    match &st.best {
        None => w.write_all(&[0u8])?,
        Some(b) => {
            w.write_all(&[1u8])?;
            w.write_all(&b.epoch.to_le_bytes())?;
            w.write_all(&b.val.recall.to_le_bytes())?;
            w.write_all(&b.val.ndcg.to_le_bytes())?;
            w.write_all(&b.val.hit.to_le_bytes())?;
            w.write_all(&b.stalls.to_le_bytes())?;
            write_matrix(w, b.embeddings.matrix())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 4];
    need(r, &mut magic, "header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u16(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let num_users = read_u64(r, "user count")?;
    let num_items = read_u64(r, "item count")?;
    let bits = read_u32(r, "code length")?;
    let layers = read_u32(r, "layer count")?;
    let self_weight = read_f64(r, "self weight")?;
    let flags = read_u32(r, "flags")?;

    let rows = (num_users + num_items) as usize;
    let cols = bits as usize;
    let embeddings = read_matrix(r, rows, cols, "embeddings")?;
    let adam_m = read_matrix(r, rows, cols, "adam m")?;
    let adam_v = read_matrix(r, rows, cols, "adam v")?;
    let epoch = read_u32(r, "epoch")?;
    let beta = read_f64(r, "beta")?;

    let adam_t = read_u64(r, "adam step")?;
    let mut seed = [0u8; 32];
    need(r, &mut seed, "rng seed")?;
    let stream = read_u64(r, "rng stream")?;
    let mut pos_bytes = [0u8; 16];
    need(r, &mut pos_bytes, "rng position")?;
    let word_pos = u128::from_le_bytes(pos_bytes);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut best_flag = [0u8; 1];
    need(r, &mut best_flag, "early-stop flag")?;
    let best = match best_flag[0] {
        0 => None,
        _ => {
            let best_epoch = read_u32(r, "best epoch")?;
            let recall = read_f64(r, "best recall")?;
            let ndcg = read_f64(r, "best ndcg")?;
            let hit = read_f64(r, "best hit")?;
            let stalls = read_u32(r, "stall count")?;
            let best_emb = read_matrix(r, rows, cols, "best embeddings")?;
            Some(BestState {
                epoch: best_epoch,
                val: ValPoint { recall, ndcg, hit },
                embeddings: crate::model::EmbeddingTable::from_matrix(best_emb),
                stalls,
            })
        }
    };

    Ok(Checkpoint {
        num_users,
        num_items,
        bits,
        layers,
        self_weight,
        flags,
        state: TrainerState {
            embeddings: crate::model::EmbeddingTable::from_matrix(embeddings),
            adam: AdamState {
                m: adam_m,
                v: adam_v,
                t: adam_t,
            },
            epoch,
            beta,
            sampler_rng: rng,
            best,
        },
    })
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix<f32>) -> Result<(), CheckpointError> {
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(
    r: &mut R,
    rows: usize,
    cols: usize,
    what: &'static str,
) -> Result<Matrix<f32>, CheckpointError> {
    let mut data = vec![0f32; rows * cols];
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        need(r, &mut buf, what)?;
        *v = f32::from_le_bytes(buf);
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

fn need<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated(what)
        } else {
            CheckpointError::Io(e)
        }
    })
}

macro_rules! read_le {
    ($name:ident, $ty:ty, $len:expr) => {
        fn $name<R: Read>(r: &mut R, what: &'static str) -> Result<$ty, CheckpointError> {
            let mut buf = [0u8; $len];
            need(r, &mut buf, what)?;
            Ok(<$ty>::from_le_bytes(buf))
        }
    };
}

read_le!(read_u16, u16, 2);
read_le!(read_u32, u32, 4);
read_le!(read_u64, u64, 8);
read_le!(read_f64, f64, 8);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_interactions;
    use crate::model::ModelConfig;
    use crate::seed::stream_rng;
    use crate::trainer::{resume, train, TrainConfig};
    use rand::Rng;
    use std::io::Cursor;

    fn sample_data(seed: u64) -> crate::graph::InteractionDataset {
        let mut rng = stream_rng(seed, "ckpt-data");
        let mut text = String::new();
        for u in 0..12 {
            for i in 0..12 {
                if rng.gen::<f64>() < 0.4 {
                    text.push_str(&format!("u{u}\ti{i}\t{}\n", rng.gen_range(0..500)));
                }
            }
        }
        parse_interactions(Cursor::new(text), "mem").unwrap()
    }

    fn configs() -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                bits: 16,
                layers: 1,
                ..ModelConfig::default()
            },
            TrainConfig {
                epochs: 10,
                batch_size: 32,
                triples_per_epoch: Some(96),
                eval_every: 2,
                patience: 100,
                seed: 21,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let data = sample_data(1);
        let (mcfg, tcfg) = configs();
        let out = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        let ckpt = Checkpoint::capture(
            &out.state,
            &mcfg,
            out.fit_graph.num_users(),
            out.fit_graph.num_items(),
        );
        let mut bytes1 = Vec::new();
        write_checkpoint(&mut bytes1, &ckpt).unwrap();
        let back = read_checkpoint(&mut bytes1.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        let mut bytes2 = Vec::new();
        write_checkpoint(&mut bytes2, &back).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn corrupt_magic_names_expected_value() {
        let data = sample_data(2);
        let (mcfg, tcfg) = configs();
        let out = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        let ckpt = Checkpoint::capture(&out.state, &mcfg, out.fit_graph.num_users(), out.fit_graph.num_items());
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ckpt).unwrap();
        bytes[0] = b'Z';
        let err = read_checkpoint(&mut bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("HSCK"), "{err}");

        bytes[0] = b'H';
        bytes.truncate(bytes.len() / 2);
        assert!(matches!(
            read_checkpoint(&mut bytes.as_slice()),
            Err(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let data = sample_data(3);
        let (mcfg, tcfg) = configs();
        let out = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        let ckpt = Checkpoint::capture(&out.state, &mcfg, out.fit_graph.num_users(), out.fit_graph.num_items());
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ckpt).unwrap();
        bytes[4] = 7;
        assert!(matches!(
            read_checkpoint(&mut bytes.as_slice()),
            Err(CheckpointError::BadVersion(7))
        ));
    }

    #[test]
    fn config_mismatch_is_rejected_on_restore() {
        let data = sample_data(4);
        let (mcfg, tcfg) = configs();
        let out = train::<f32>(&data, &mcfg, &tcfg).unwrap();
        let n = out.fit_graph.num_users();
        let m = out.fit_graph.num_items();
        let ckpt = Checkpoint::capture(&out.state, &mcfg, n, m);
        let other = ModelConfig {
            layers: 2,
            ..mcfg
        };
        assert!(matches!(
            ckpt.into_state(&other, n, m),
            Err(CheckpointError::Mismatch(_))
        ));
    }

    #[test]
    fn resume_matches_uninterrupted_run_bit_exactly() {
        let data = sample_data(5);
        let (mcfg, tcfg10) = configs();

        let full = train::<f32>(&data, &mcfg, &tcfg10).unwrap();

        let tcfg5 = TrainConfig {
            epochs: 5,
            ..tcfg10
        };
        let half = train::<f32>(&data, &mcfg, &tcfg5).unwrap();
        let n = half.fit_graph.num_users();
        let m = half.fit_graph.num_items();
        let ckpt = Checkpoint::capture(&half.state, &mcfg, n, m);

        // Through bytes, as the CLI does.
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ckpt).unwrap();
        let restored = read_checkpoint(&mut bytes.as_slice()).unwrap();
        let state = restored.into_state(&mcfg, n, m).unwrap();

        let resumed = resume::<f32>(&data, &mcfg, &tcfg10, state).unwrap();
        assert_eq!(resumed.state.embeddings, full.state.embeddings);
        assert_eq!(resumed.state.adam, full.state.adam);
        assert_eq!(resumed.embeddings, full.embeddings);
        assert_eq!(resumed.report.best_epoch, full.report.best_epoch);
        assert_eq!(resumed.report.best_val, full.report.best_val);
        // Epoch records of the resumed half match the full run's tail.
        let strip = |r: &crate::trainer::TrainReport, from: usize| -> Vec<(u32, f64, f64)> {
            r.epochs[from..]
                .iter()
                .map(|e| (e.epoch, e.loss_mean, e.beta))
                .collect()
        };
        assert_eq!(strip(&resumed.report, 0), strip(&full.report, 5));
    }
}
