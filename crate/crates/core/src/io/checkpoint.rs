use std::collections::BTreeMap;
use std::path::Path;

use crate::engine::Trainer;
use crate::error::{Error, Result};
use crate::io::bytes::{put_f32s, put_string, put_u32, put_u64, read_file, write_file, Reader};
use crate::io::RunConfig;
use crate::numerics::{AdamConfig, AdamState, ParameterStore, Tensor};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreField;

const MAGIC: &[u8; 4] = b"DPF1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or to sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    pub step: u64,
    pub params: ParameterStore<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub ema: Option<ParameterStore<f32>>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, config: &RunConfig) -> Self {
        Checkpoint {
            config: config.clone(),
            seed: trainer.seed,
            step: trainer.step,
            params: trainer.params.clone(),
            optimizer: Some(trainer.optimizer.clone()),
            ema: trainer.ema.clone(),
        }
    }

    /// Weights to sample from: the moving average when stored.
    pub fn sampling_params(&self) -> &ParameterStore<f32> {
        self.ema.as_ref().unwrap_or(&self.params)
    }

    pub fn model(&self) -> Result<ScoreField> {
        ScoreField::new(self.config.model.clone(), self.config.schedule.steps)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::from_config(self.config.schedule)
    }

    /// Rebuilds the training state. Without stored optimizer moments Adam
    /// restarts from zero.
    pub fn into_trainer(self) -> Result<Trainer> {
        let model = self.model()?;
        let schedule = self.schedule()?;
        let optimizer = match self.optimizer {
            Some(state) => state,
            None => AdamState::new(self.config.train.optimizer, &self.params),
        };
        let ema = match (self.ema, self.config.train.ema_decay) {
            (Some(ema), Some(_)) => Some(ema),
            (None, Some(_)) => Some(self.params.clone()),
            (_, None) => None,
        };
        Ok(Trainer {
            model,
            schedule,
            params: self.params,
            optimizer,
            ema,
            pairs: self.config.pairs.clone(),
            train: self.config.train.clone(),
            seed: self.seed,
            step: self.step,
        })
    }

    /// Refuses a checkpoint whose training-relevant settings differ from
    /// `expected`; step budget and logging cadence may differ.
    pub fn ensure_compatible(&self, expected: &RunConfig) -> Result<()> {
        let key = |c: &RunConfig| {
            let mut c = c.clone();
            c.train.steps = 0;
            c.train.log_every = 0;
            c.sample = Default::default();
            c
        };
        if key(&self.config) != key(expected) {
            return Err(Error::ConfigMismatch {
                expected: indent(&expected.to_toml_string()),
                found: indent(&self.config.to_toml_string()),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_string(&mut out, &self.config.to_toml_string());
        put_u64(&mut out, self.seed);
        put_u64(&mut out, self.step);
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_string(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            put_f32s(&mut out, t.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                let c = state.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                put_u64(&mut out, state.step);
                for (name, _) in self.params.iter() {
                    put_f32s(&mut out, &state.first[name]);
                    put_f32s(&mut out, &state.second[name]);
                }
            }
        }
        match &self.ema {
            None => out.push(0),
            Some(ema) => {
                out.push(1);
                for (name, _) in self.params.iter() {
                    put_f32s(&mut out, ema.get(name).map(|t| t.data()).unwrap_or(&[]));
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4, "magic")? != MAGIC {
            return Err(r.fail("not a checkpoint (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let text = r.string("config")?;
        let config = RunConfig::from_toml_str(&text)
            .map_err(|e| r.fail(format!("embedded config: {e}")))?;
        let seed = r.u64("seed")?;
        let step = r.u64("step")?;
        let model = ScoreField::new(config.model.clone(), config.schedule.steps)
            .map_err(|e| r.fail(format!("embedded model config: {e}")))?;
        let count = r.u32("parameter count")? as usize;
        if count != model.parameter_shapes().len() {
            return Err(r.fail(format!(
                "{count} parameter tensors but the model config needs {}",
                model.parameter_shapes().len()
            )));
        }
        let mut params = ParameterStore::new();
        for _ in 0..count {
            let name = r.string("parameter name")?;
            let rank = r.u32("parameter rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(r.fail(format!("parameter {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("parameter dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.fail("parameter shape overflows"))?;
            let data = r.f32s(n, "parameter data")?;
            let tensor = Tensor::new(shape, data).map_err(|e| r.fail(e.to_string()))?;
            params.insert(name, tensor).map_err(|e| r.fail(e.to_string()))?;
        }
        model
            .check_params(&params)
            .map_err(|e| r.fail(format!("parameters do not fit the embedded config: {e}")))?;
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64("adam lr")?,
                    beta1: r.f64("adam beta1")?,
                    beta2: r.f64("adam beta2")?,
                    eps: r.f64("adam eps")?,
                };
                let opt_step = r.u64("adam step")?;
                let mut first = BTreeMap::new();
                let mut second = BTreeMap::new();
                for (name, t) in params.iter() {
                    first.insert(name.to_string(), r.f32s(t.numel(), "adam first moment")?);
                    second.insert(name.to_string(), r.f32s(t.numel(), "adam second moment")?);
                }
                Some(AdamState {
                    config,
                    step: opt_step,
                    first,
                    second,
                })
            }
            f => return Err(r.fail(format!("invalid optimizer flag {f}"))),
        };
        let ema = match r.u8("average flag")? {
            0 => None,
            1 => {
                let mut ema = ParameterStore::new();
                for (name, t) in params.iter() {
                    let data = r.f32s(t.numel(), "averaged parameter data")?;
                    let tensor = Tensor::new(t.shape().to_vec(), data).map_err(|e| r.fail(e.to_string()))?;
                    ema.insert(name, tensor).map_err(|e| r.fail(e.to_string()))?;
                }
                Some(ema)
            }
            f => return Err(r.fail(format!("invalid average flag {f}"))),
        };
        r.finish()?;
        Ok(Checkpoint {
            config,
            seed,
            step,
            params,
            optimizer,
            ema,
        })
    }
}

fn indent(text: &str) -> String {
    text.lines()
        .map(|l| format!("\n    {l}"))
        .collect::<String>()
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_file(path, &checkpoint.encode())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&read_file(path)?, path)
}
