use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{subsample_pairs, FieldSample, PairSet, SignalSet};
use crate::numerics::{
    adam_update, backward_gradients, AdamConfig, AdamState, ParameterStore, Scalar, Tape, Var,
};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreField;

/// Where training context pairs come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    /// Context and query pairs drawn independently from the field, each
    /// diffused with its own noise.
    #[default]
    Independent,
    /// Context is a random subset of the already-diffused query pairs,
    /// mirroring how context is formed during sampling.
    QuerySubset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub n_context: usize,
    pub n_query: usize,
    /// Only for independent draws: forbid context/query overlap.
    pub disjoint: bool,
    pub context_source: ContextSource,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            n_context: 64,
            n_query: 64,
            disjoint: false,
            context_source: ContextSource::Independent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub log_every: u64,
    /// Decay of an exponential moving average of the weights used for
    /// sampling; `None` samples from the raw weights.
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            grad_clip: Some(1.0),
            log_every: 50,
            ema_decay: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainItem {
    pub context: PairSet,
    pub query: PairSet,
    pub t: usize,
    pub eps_q: SignalSet,
}

#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub items: Vec<TrainItem>,
}

/// Mean squared error over every query row and channel.
pub fn ddpm_loss(eps_hat: &SignalSet, eps_q: &SignalSet) -> Result<f64> {
    eps_hat.check_same_shape(eps_q, "ddpm_loss")?;
    let n = eps_hat.data().len() as f64;
    Ok(eps_hat
        .data()
        .iter()
        .zip(eps_q.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Taped form of [`ddpm_loss`].
pub fn ddpm_loss_var<S: Scalar>(tape: &Tape<S>, eps_hat: Var, eps_q: &SignalSet) -> Result<Var> {
    let shape = tape.shape(eps_hat);
    if shape != [eps_q.len(), eps_q.dim()] {
        return Err(Error::shape("ddpm_loss", &shape, &[eps_q.len(), eps_q.dim()]));
    }
    let target = tape.constant_from(shape, eps_q.data().iter().map(|&v| S::of(v)).collect())?;
    let diff = tape.sub(eps_hat, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

/// Draws `batch_size` independent (field, pairs, t, noise) tuples.
pub fn make_batch(
    fields: &[FieldSample],
    schedule: &NoiseSchedule,
    pairs: &PairConfig,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<TrainBatch> {
    if fields.is_empty() {
        return Err(Error::contract("training needs at least one field"));
    }
    if batch_size == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let mut items = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let field = &fields[rng.random_range(0..fields.len())];
        let t = rng.random_range(1..=schedule.steps());
        let item = match pairs.context_source {
            ContextSource::Independent => {
                let (c0, q0) =
                    subsample_pairs(field, pairs.n_context, pairs.n_query, pairs.disjoint, rng)?;
                let eps_c = SignalSet::standard_normal(c0.len(), c0.signals.dim(), rng);
                let eps_q = SignalSet::standard_normal(q0.len(), q0.signals.dim(), rng);
                let yc = schedule.forward_diffuse(&c0.signals, t, &eps_c)?;
                let yq = schedule.forward_diffuse(&q0.signals, t, &eps_q)?;
                TrainItem {
                    context: c0.with_signals(yc, t)?,
                    query: q0.with_signals(yq, t)?,
                    t,
                    eps_q,
                }
            }
            ContextSource::QuerySubset => {
                if pairs.n_context > pairs.n_query {
                    return Err(Error::contract(format!(
                        "query-subset context needs n_context {} <= n_query {}",
                        pairs.n_context, pairs.n_query
                    )));
                }
                let (_, q0) = subsample_pairs(field, 1, pairs.n_query, false, rng)?;
                let eps_q = SignalSet::standard_normal(q0.len(), q0.signals.dim(), rng);
                let yq = schedule.forward_diffuse(&q0.signals, t, &eps_q)?;
                let query = q0.with_signals(yq, t)?;
                let idx = index::sample(rng, query.len(), pairs.n_context).into_vec();
                TrainItem {
                    context: query.select(&idx),
                    query,
                    t,
                    eps_q,
                }
            }
        };
        items.push(item);
    }
    Ok(TrainBatch { items })
}

/// One optimizer step on `batch`: forward, loss averaged over items,
/// backward, optional clipping, Adam. Returns the batch loss.
pub fn train_step<S: Scalar>(
    model: &ScoreField,
    params: &mut ParameterStore<S>,
    state: &mut AdamState<S>,
    batch: &TrainBatch,
    grad_clip: Option<f64>,
) -> Result<f64> {
    if batch.items.is_empty() {
        return Err(Error::contract("empty training batch"));
    }
    let tape = Tape::new();
    let bound = tape.bind(params)?;
    let mut losses = Vec::with_capacity(batch.items.len());
    for item in &batch.items {
        let out = model.forward(&tape, &bound, &item.context, &item.query)?;
        losses.push(ddpm_loss_var(&tape, out, &item.eps_q)?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let loss = tape.scale(total, S::of(1.0 / losses.len() as f64))?;
    let value = tape.scalar_value(loss).as_f64();
    backward_gradients(&tape, loss, params)?;
    if let Some(clip) = grad_clip {
        params.clip_grad_norm(S::of(clip));
    }
    adam_update(params, state)?;
    Ok(value)
}

/// Per-step RNG: a pure function of the run seed and the step index, so a
/// resumed run draws exactly what an uninterrupted one would.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub seconds: f64,
}

/// Training state: model, parameters, optimizer and step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ScoreField,
    pub schedule: NoiseSchedule,
    pub params: ParameterStore<f32>,
    pub optimizer: AdamState<f32>,
    /// Averaged weights, present when `train.ema_decay` is set.
    pub ema: Option<ParameterStore<f32>>,
    pub pairs: PairConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub step: u64,
}

impl Trainer {
    pub fn new(
        model: ScoreField,
        schedule: NoiseSchedule,
        pairs: PairConfig,
        train: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if model.steps() != schedule.steps() {
            return Err(Error::Config(format!(
                "model normalizes time by {} steps but the schedule has {}",
                model.steps(),
                schedule.steps()
            )));
        }
        let params = model.init_params::<f32>(seed)?;
        let optimizer = AdamState::new(train.optimizer, &params);
        let ema = train.ema_decay.map(|_| params.clone());
        Ok(Trainer {
            model,
            schedule,
            params,
            optimizer,
            ema,
            pairs,
            train,
            seed,
            step: 0,
        })
    }

    /// Runs one step; the step counter advances only on success.
    pub fn step_once(&mut self, fields: &[FieldSample]) -> Result<f64> {
        let mut rng = step_rng(self.seed, self.step);
        let batch = make_batch(fields, &self.schedule, &self.pairs, self.train.batch_size, &mut rng)?;
        let loss = train_step(
            &self.model,
            &mut self.params,
            &mut self.optimizer,
            &batch,
            self.train.grad_clip,
        )?;
        if let (Some(ema), Some(decay)) = (self.ema.as_mut(), self.train.ema_decay) {
            ema.blend_toward(&self.params, decay as f32)?;
        }
        self.step += 1;
        Ok(loss)
    }

    /// Weights to sample from: the average when kept, else the raw weights.
    pub fn sampling_params(&self) -> &ParameterStore<f32> {
        self.ema.as_ref().unwrap_or(&self.params)
    }

    /// Trains until the step counter reaches `until`, calling `on_step`
    /// after every step.
    pub fn run_until(
        &mut self,
        fields: &[FieldSample],
        until: u64,
        mut on_step: impl FnMut(StepRecord),
    ) -> Result<()> {
        let start = std::time::Instant::now();
        while self.step < until {
            let loss = self.step_once(fields)?;
            on_step(StepRecord {
                step: self.step,
                loss,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        Ok(())
    }
}
