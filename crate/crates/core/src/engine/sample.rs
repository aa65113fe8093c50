use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldSample, MetricSpaceSpec, PairSet, SignalSet};
use crate::numerics::{ParameterStore, Scalar};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreField;

/// Anything that predicts query noise from a context and a query set at a
/// shared timestep.
pub trait NoisePredictor {
    fn predict(&self, context: &PairSet, query: &PairSet) -> Result<SignalSet>;
}

/// A score network paired with its weights.
pub struct NetworkPredictor<'a, S: Scalar> {
    pub model: &'a ScoreField,
    pub params: &'a ParameterStore<S>,
}

impl<S: Scalar> NoisePredictor for NetworkPredictor<'_, S> {
    fn predict(&self, context: &PairSet, query: &PairSet) -> Result<SignalSet> {
        self.model.eval(self.params, context, query)
    }
}

impl<F> NoisePredictor for F
where
    F: Fn(&PairSet, &PairSet) -> Result<SignalSet>,
{
    fn predict(&self, context: &PairSet, query: &PairSet) -> Result<SignalSet> {
        self(context, query)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Fraction of query pairs reused as context at every step.
    pub context_fraction: f64,
    pub seed: u64,
    /// Final-output clamp bound; `None` returns raw signals.
    pub clamp: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            context_fraction: 1.0,
            seed: 0,
            clamp: Some(1.3),
        }
    }
}

/// `⌈rho·n⌉` distinct indices in increasing order.
pub fn select_context_subset(n: usize, rho: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::contract(format!("context fraction {rho} outside (0, 1]")));
    }
    if n == 0 {
        return Err(Error::contract("no query pairs to draw context from"));
    }
    let k = ((rho * n as f64).ceil() as usize).clamp(1, n);
    if k == n {
        return Ok((0..n).collect());
    }
    let mut idx = index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// State visible to a sampling observer right before the update at `t`.
pub struct StepView<'a> {
    pub t: usize,
    pub context: &'a PairSet,
    pub query: &'a PairSet,
    pub context_indices: &'a [usize],
}

/// Ancestral sampling at the given query coordinates.
pub fn sample_field(
    predictor: &impl NoisePredictor,
    schedule: &NoiseSchedule,
    space: &MetricSpaceSpec,
    signal_dim: usize,
    config: &SamplerConfig,
) -> Result<FieldSample> {
    sample_field_observed(predictor, schedule, space, signal_dim, config, |_| {})
}

/// [`sample_field`] with a callback invoked once per denoising step.
pub fn sample_field_observed(
    predictor: &impl NoisePredictor,
    schedule: &NoiseSchedule,
    space: &MetricSpaceSpec,
    signal_dim: usize,
    config: &SamplerConfig,
    mut observe: impl FnMut(&StepView<'_>),
) -> Result<FieldSample> {
    space.validate()?;
    let coords = space.coordinates()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = coords.len();
    let big_t = schedule.steps();
    let y = SignalSet::standard_normal(n, signal_dim, &mut rng);
    let subset = select_context_subset(n, config.context_fraction, &mut rng)?;
    let mut query = PairSet::new(coords, y, big_t)?;
    for t in (1..=big_t).rev() {
        query.t = t;
        let context = query.select(&subset);
        observe(&StepView {
            t,
            context: &context,
            query: &query,
            context_indices: &subset,
        });
        let eps_hat = predictor.predict(&context, &query)?;
        let z = if t > 1 {
            SignalSet::standard_normal(n, signal_dim, &mut rng)
        } else {
            SignalSet::zeros(n, signal_dim)
        };
        let next = schedule.ancestral_step(&query.signals, &eps_hat, t, &z)?;
        if next.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampler at t={t}")));
        }
        query.signals = next;
    }
    let mut signals = query.signals;
    if let Some(c) = config.clamp {
        signals.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
    }
    FieldSample::new(*space, query.coords, signals)
}

/// Sampling on a grid whose resolution may differ from the training one.
/// Both specs must describe the same kind of space.
pub fn sample_resolution_free(
    predictor: &impl NoisePredictor,
    schedule: &NoiseSchedule,
    train_space: &MetricSpaceSpec,
    eval_space: &MetricSpaceSpec,
    signal_dim: usize,
    config: &SamplerConfig,
) -> Result<FieldSample> {
    if std::mem::discriminant(train_space) != std::mem::discriminant(eval_space) {
        return Err(Error::Config(format!(
            "cannot sample {train_space} model on {eval_space}"
        )));
    }
    sample_field(predictor, schedule, eval_space, signal_dim, config)
}

/// Averages non-overlapping `factor × factor` cells of a 2D grid field.
pub fn average_pool_2d(field: &FieldSample, factor: usize) -> Result<FieldSample> {
    let MetricSpaceSpec::Grid2d { height, width } = field.space else {
        return Err(Error::contract("average pooling needs a 2D grid field"));
    };
    if factor == 0 || height % factor != 0 || width % factor != 0 {
        return Err(Error::contract(format!(
            "{height}x{width} grid does not divide by {factor}"
        )));
    }
    let (h, w, c) = (height / factor, width / factor, field.signal_dim());
    let mut out = vec![0.0; h * w * c];
    let norm = (factor * factor) as f64;
    for y in 0..height {
        for x in 0..width {
            let src = field.signals.row(y * width + x);
            let dst = ((y / factor) * w + x / factor) * c;
            for k in 0..c {
                out[dst + k] += src[k] / norm;
            }
        }
    }
    let space = MetricSpaceSpec::Grid2d { height: h, width: w };
    FieldSample::on_space(space, SignalSet::new(h * w, c, out)?)
}

/// Seed of the `index`-th sample of a run, independent of how many
/// samples are drawn.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    super::train::step_rng(seed, index).random()
}
