//! Versioned binary checkpoints for the trainer.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! | field                 | size                                  |
//! |-----------------------|---------------------------------------|
//! | magic `"VRPSSRCP"`    | 8 bytes                               |
//! | format version        | u32 (currently 1)                     |
//! | meta length           | u64                                   |
//! | meta JSON             | meta-length bytes                     |
//! | net config            | 6 x u64: input_h, input_w, conv1, conv2, dense, head |
//! | global_step           | u64                                   |
//! | episode               | u64                                   |
//! | updates               | u64                                   |
//! | syncs                 | u64                                   |
//! | rng seed              | 32 bytes                              |
//! | rng word position     | u128 (16 bytes)                       |
//! | parameter count       | u64                                   |
//! | online params         | count x f32                           |
//! | target params         | count x f32                           |
//! | optimizer accumulator | count x f32                           |
//! | replay flag           | u8 (0 = absent, 1 = present)          |
//! | replay section        | see below, only when flag = 1         |
//!
//! The meta JSON holds the resolved `InstanceConfig` and `TrainingConfig`;
//! resume compares it against the caller's configs and refuses on mismatch.
//!
//! Replay section: capacity u64, alpha f64, priority epsilon f64,
//! next_slot u64, pushes u64, entry count u64, then per occupied slot in
//! ascending order: slot u64, generation u64, leaf value f64, action u8,
//! terminal u8, reward f64, observation, next observation. An observation is
//! width u32, height u32, time_left f64, then three width*height planes of
//! raw bytes.
//!
//! The replay section is off by default (a full buffer is large); exact
//! training continuation requires a checkpoint written with it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Trainer, TrainingConfig};
use crate::error::{Error, Result};
use crate::instance::InstanceConfig;
use crate::nn::{Layout, NetConfig, QNetworkParams, RmsPropState};
use crate::obs::Observation;
use crate::replay::{PrioritizedReplay, Transition};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"VRPSSRCP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    instance: InstanceConfig,
    training: TrainingConfig,
}

fn cerr(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.out.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.out.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.out.write_all(&v.to_le_bytes())?)
    }
    fn u128(&mut self, v: u128) -> Result<()> {
        Ok(self.out.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.out.write_all(&v.to_le_bytes())?)
    }
    fn f32s(&mut self, vs: &[f32]) -> Result<()> {
        for v in vs {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn bytes(&mut self, vs: &[u8]) -> Result<()> {
        Ok(self.out.write_all(vs)?)
    }

    fn observation(&mut self, obs: &Observation) -> Result<()> {
        self.u32(obs.width)?;
        self.u32(obs.height)?;
        self.f64(obs.time_left)?;
        for plane in &obs.planes {
            self.bytes(plane)?;
        }
        Ok(())
    }
}

struct Reader<'p, R: Read> {
    path: &'p Path,
    input: R,
}

impl<'p, R: Read> Reader<'p, R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.input
            .read_exact(buf)
            .map_err(|e| cerr(self.path, format!("truncated: {e}")))
    }
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn u128(&mut self) -> Result<u128> {
        let mut b = [0u8; 16];
        self.exact(&mut b)?;
        Ok(u128::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; n * 4];
        self.exact(&mut raw)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn observation(&mut self) -> Result<Observation> {
        let width = self.u32()?;
        let height = self.u32()?;
        if width == 0 || height == 0 || width > 4096 || height > 4096 {
            return Err(cerr(self.path, format!("bad observation size {width}x{height}")));
        }
        let time_left = self.f64()?;
        let n = (width * height) as usize;
        let mut planes: [Vec<u8>; 3] = [vec![0; n], vec![0; n], vec![0; n]];
        for plane in &mut planes {
            self.exact(plane)?;
        }
        Ok(Observation {
            width,
            height,
            planes,
            time_left,
        })
    }
}

/// Everything read back from a checkpoint file.
#[derive(Debug)]
pub struct Checkpoint {
    pub instance: InstanceConfig,
    pub training: TrainingConfig,
    pub net_cfg: NetConfig,
    pub global_step: u64,
    pub episode: u64,
    pub updates: u64,
    pub syncs: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub online: Vec<f32>,
    pub target: Vec<f32>,
    pub opt_v: Vec<f32>,
    pub replay: Option<PrioritizedReplay>,
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer, include_replay: bool) -> Result<()> {
    let file = File::create(path)?;
    let mut w = Writer {
        out: BufWriter::new(file),
    };
    w.bytes(&CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;

    let meta = Meta {
        instance: trainer.inst_cfg.clone(),
        training: trainer.cfg.clone(),
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| cerr(path, format!("meta encode: {e}")))?;
    w.u64(meta_json.len() as u64)?;
    w.bytes(&meta_json)?;

    let nc = trainer.online.cfg;
    for v in [
        nc.input_h,
        nc.input_w,
        nc.conv1_filters,
        nc.conv2_filters,
        nc.dense_units,
        nc.head_units,
    ] {
        w.u64(v as u64)?;
    }

    w.u64(trainer.global_step)?;
    w.u64(trainer.episode)?;
    w.u64(trainer.updates)?;
    w.u64(trainer.syncs)?;
    w.bytes(&trainer.rng.get_seed())?;
    w.u128(trainer.rng.get_word_pos())?;

    w.u64(trainer.online.data.len() as u64)?;
    w.f32s(&trainer.online.data)?;
    w.f32s(&trainer.target.data)?;
    w.f32s(&trainer.opt.v)?;

    if include_replay {
        w.u8(1)?;
        let buf = &trainer.replay;
        w.u64(buf.capacity() as u64)?;
        w.f64(buf.alpha)?;
        w.f64(buf.epsilon)?;
        w.u64(buf.next_slot() as u64)?;
        w.u64(buf.pushes())?;
        w.u64(buf.len() as u64)?;
        for slot in 0..buf.capacity() {
            let Some((t, leaf, generation)) = buf.entry(slot) else {
                continue;
            };
            w.u64(slot as u64)?;
            w.u64(generation)?;
            w.f64(leaf)?;
            w.u8(t.action as u8)?;
            w.u8(t.terminal as u8)?;
            w.f64(t.reward)?;
            w.observation(&t.obs)?;
            w.observation(&t.next_obs)?;
        }
    } else {
        w.u8(0)?;
    }
    w.out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let mut r = Reader {
        path,
        input: BufReader::new(file),
    };
    let mut magic = [0u8; 8];
    r.exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(cerr(path, "not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(cerr(
            path,
            format!("unsupported version {version} (expected {CHECKPOINT_VERSION})"),
        ));
    }

    let meta_len = r.u64()? as usize;
    if meta_len > 1 << 20 {
        return Err(cerr(path, "implausible meta length"));
    }
    let mut meta_json = vec![0u8; meta_len];
    r.exact(&mut meta_json)?;
    let meta: Meta = serde_json::from_slice(&meta_json)
        .map_err(|e| cerr(path, format!("meta decode: {e}")))?;

    let mut dims = [0u64; 6];
    for d in &mut dims {
        *d = r.u64()?;
    }
    let net_cfg = NetConfig {
        input_h: dims[0] as usize,
        input_w: dims[1] as usize,
        conv1_filters: dims[2] as usize,
        conv2_filters: dims[3] as usize,
        dense_units: dims[4] as usize,
        head_units: dims[5] as usize,
    };
    net_cfg
        .validate()
        .map_err(|e| cerr(path, format!("net config: {e}")))?;

    let global_step = r.u64()?;
    let episode = r.u64()?;
    let updates = r.u64()?;
    let syncs = r.u64()?;
    let mut rng_seed = [0u8; 32];
    r.exact(&mut rng_seed)?;
    let rng_word_pos = r.u128()?;

    let count = r.u64()? as usize;
    let expected = Layout::of(&net_cfg).total;
    if count != expected {
        return Err(cerr(
            path,
            format!("parameter count {count} does not match architecture ({expected})"),
        ));
    }
    let online = r.f32s(count)?;
    let target = r.f32s(count)?;
    let opt_v = r.f32s(count)?;

    let replay = match r.u8()? {
        0 => None,
        1 => {
            let capacity = r.u64()? as usize;
            let alpha = r.f64()?;
            let epsilon = r.f64()?;
            let next_slot = r.u64()? as usize;
            let pushes = r.u64()?;
            let len = r.u64()? as usize;
            if len > capacity {
                return Err(cerr(path, "replay length exceeds capacity"));
            }
            let mut entries = Vec::with_capacity(len);
            for _ in 0..len {
                let slot = r.u64()? as usize;
                let generation = r.u64()?;
                let leaf = r.f64()?;
                let action = r.u8()? as usize;
                let terminal = r.u8()? != 0;
                let reward = r.f64()?;
                let obs = Arc::new(r.observation()?);
                let next_obs = Arc::new(r.observation()?);
                entries.push((
                    slot,
                    Transition {
                        obs,
                        action,
                        reward,
                        next_obs,
                        terminal,
                    },
                    leaf,
                    generation,
                ));
            }
            Some(
                PrioritizedReplay::restore(capacity, alpha, epsilon, next_slot, pushes, entries)
                    .map_err(|e| cerr(path, format!("replay restore: {e}")))?,
            )
        }
        other => return Err(cerr(path, format!("bad replay flag {other}"))),
    };

    Ok(Checkpoint {
        instance: meta.instance,
        training: meta.training,
        net_cfg,
        global_step,
        episode,
        updates,
        syncs,
        rng_seed,
        rng_word_pos,
        online,
        target,
        opt_v,
        replay,
    })
}

/// Rebuilds a trainer mid-run. The caller's resolved configs must match the
/// ones stored in the checkpoint; exact continuation additionally requires
/// the replay snapshot, so its absence is an error here.
pub fn resume_trainer(
    checkpoint: Checkpoint,
    instance: &InstanceConfig,
    training: &TrainingConfig,
) -> Result<Trainer> {
    if checkpoint.instance != *instance {
        return Err(Error::ResumeMismatch(
            "instance config differs from the one stored in the checkpoint".into(),
        ));
    }
    if checkpoint.training != *training {
        return Err(Error::ResumeMismatch(
            "training config differs from the one stored in the checkpoint".into(),
        ));
    }
    let Some(replay) = checkpoint.replay else {
        return Err(Error::ResumeMismatch(
            "checkpoint has no replay snapshot; write one with the replay included to resume"
                .into(),
        ));
    };
    let mut rng = ChaCha8Rng::from_seed(checkpoint.rng_seed);
    rng.set_word_pos(checkpoint.rng_word_pos);
    let mut opt = RmsPropState::new(checkpoint.opt_v.len(), training.learning_rate);
    opt.v = checkpoint.opt_v;
    Ok(Trainer {
        inst_cfg: checkpoint.instance,
        cfg: checkpoint.training,
        online: QNetworkParams {
            cfg: checkpoint.net_cfg,
            data: checkpoint.online,
        },
        target: QNetworkParams {
            cfg: checkpoint.net_cfg,
            data: checkpoint.target,
        },
        opt,
        replay,
        rng,
        global_step: checkpoint.global_step,
        episode: checkpoint.episode,
        updates: checkpoint.updates,
        syncs: checkpoint.syncs,
        log: Vec::new(),
    })
}
