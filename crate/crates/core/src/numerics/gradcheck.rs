//! Central finite-difference verification of tape gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::ParameterStore;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_error: f64,
    /// `max |analytic − numeric| / max(max |analytic|, max |numeric|, floor)`
    /// over the checked elements.
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many elements per tensor (chosen by `seed`);
    /// `None` checks every element.
    pub max_elements_per_tensor: Option<usize>,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding are not compared noise against noise.
    pub scale_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_elements_per_tensor: None,
            seed: 0,
            scale_floor: 1e-5,
        }
    }
}

/// Compares autodiff gradients against central differences.
///
/// `value_and_grad` must return the loss and leave `∂loss/∂param` in the
/// store's grad buffers; `value` only evaluates the loss.
pub fn finite_difference_check<V, G>(
    params: &mut ParameterStore<f64>,
    mut value_and_grad: G,
    mut value: V,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    G: FnMut(&mut ParameterStore<f64>) -> Result<f64>,
    V: FnMut(&ParameterStore<f64>) -> Result<f64>,
{
    value_and_grad(params)?;
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .map(|(n, t)| {
            let g = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
            (n.to_string(), g)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tensors = Vec::new();
    for (name, grad) in analytic {
        let n = grad.len();
        let picks: Vec<usize> = match opts.max_elements_per_tensor {
            Some(k) if k < n => {
                let mut v = index::sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut max_abs_error = 0.0f64;
        let mut scale = 0.0f64;
        for &i in &picks {
            let original = params.get(&name)?.data()[i];
            params.get_mut(&name)?.data_mut()[i] = original + opts.step;
            let plus = value(params)?;
            params.get_mut(&name)?.data_mut()[i] = original - opts.step;
            let minus = value(params)?;
            params.get_mut(&name)?.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            max_abs_error = max_abs_error.max((numeric - grad[i]).abs());
            scale = scale.max(numeric.abs()).max(grad[i].abs());
        }
        let rel_error = max_abs_error / scale.max(opts.scale_floor);
        tensors.push(TensorCheck {
            name,
            checked: picks.len(),
            max_abs_error,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        tensors,
        tolerance: opts.tolerance,
    })
}
