use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{ddpm_loss_var, make_batch, PairConfig, TrainBatch};
use crate::error::{Error, Result};
use crate::field::{FieldSample, MetricSpaceSpec, SignalSet};
use crate::numerics::{
    backward_gradients, finite_difference_check, GradCheckOptions, GradCheckReport,
    ParameterStore, Scalar, Tape,
};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreField;

fn batch_loss<S: Scalar>(
    model: &ScoreField,
    params: &ParameterStore<S>,
    batch: &TrainBatch,
    with_grad: Option<&mut ParameterStore<S>>,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = tape.bind(params)?;
    let mut total = None;
    for item in &batch.items {
        let out = model.forward(&tape, &bound, &item.context, &item.query)?;
        let l = ddpm_loss_var(&tape, out, &item.eps_q)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::contract("empty batch"))?;
    let loss = tape.scale(total, S::of(1.0 / batch.items.len() as f64))?;
    if let Some(store) = with_grad {
        backward_gradients(&tape, loss, store)?;
    }
    Ok(tape.scalar_value(loss).as_f64())
}

/// Finite-difference check of the full training loss on random fields.
///
/// `precision` 64 differentiates in f64 throughout; 32 compares f32
/// reverse-mode gradients with f64 central differences.
pub fn network_gradcheck(
    model: &ScoreField,
    space: &MetricSpaceSpec,
    pairs: &PairConfig,
    seed: u64,
    precision: u32,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dy = model.config().signal_dim;
    let fields = (0..2)
        .map(|_| {
            let n = space.num_points();
            let data = (0..n * dy).map(|_| rng.random_range(-1.0..1.0)).collect();
            FieldSample::on_space(*space, SignalSet::new(n, dy, data)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let schedule = NoiseSchedule::linear(model.steps(), 1e-4, 0.02)?;
    let batch = make_batch(&fields, &schedule, pairs, 2, &mut rng)?;
    let mut params = model.init_params::<f64>(seed)?;
    match precision {
        64 => finite_difference_check(
            &mut params,
            |p| {
                let snapshot = p.clone();
                batch_loss(model, &snapshot, &batch, Some(p))
            },
            |p| batch_loss(model, p, &batch, None),
            opts,
        ),
        32 => finite_difference_check(
            &mut params,
            |p| {
                let mut low = p.cast::<f32>();
                let snapshot = low.clone();
                let v = batch_loss(model, &snapshot, &batch, Some(&mut low))?;
                for (name, t) in low.iter() {
                    let g: Vec<f64> = t.grad().unwrap_or(&[]).iter().map(|&x| x as f64).collect();
                    p.get_mut(name)?.set_grad(g)?;
                }
                Ok(v)
            },
            |p| batch_loss(model, p, &batch, None),
            opts,
        ),
        other => Err(Error::Config(format!("precision must be 32 or 64, got {other}"))),
    }
}
