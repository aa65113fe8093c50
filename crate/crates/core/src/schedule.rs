//! Noise schedules and the closed-form diffusion coefficients.
//!
//! Steps are 1-based, `t ∈ {1, …, T}`; the arrays are 0-based and entry
//! `t − 1` holds the coefficient for step `t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SignalSet;

/// Reverse-process noise scale `σ_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// `σ_t² = β_t`
    #[default]
    Beta,
    /// `σ_t² = β_t·(1 − ᾱ_{t−1})/(1 − ᾱ_t)`
    Posterior,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma: SigmaRule,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma: SigmaRule::Beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced `β` from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        NoiseSchedule::from_config(ScheduleConfig {
            steps,
            beta_start,
            beta_end,
            sigma: SigmaRule::Beta,
        })
    }

    pub fn from_config(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            steps,
            beta_start,
            beta_end,
            ..
        } = config;
        if steps < 1 {
            return Err(Error::contract("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::contract(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Ok(NoiseSchedule::from_betas(config, beta))
    }

    fn from_betas(config: ScheduleConfig, beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = (0..beta.len())
            .map(|i| match config.sigma {
                SigmaRule::Beta => beta[i].sqrt(),
                SigmaRule::Posterior => {
                    let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                    (beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])).sqrt()
                }
            })
            .collect();
        NoiseSchedule {
            config,
            beta,
            alpha,
            alpha_bar,
            sigma,
        }
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.steps() {
            return Err(Error::contract(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigma[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `Y_t = √ᾱ_t·Y_0 + √(1 − ᾱ_t)·ε`
    pub fn forward_diffuse(&self, y0: &SignalSet, t: usize, eps: &SignalSet) -> Result<SignalSet> {
        forward_diffuse_with(self.alpha_bar(t)?, y0, eps)
    }

    /// One ancestral reverse step from `Y_t` to `Y_{t−1}`. `z` is ignored at
    /// `t = 1`, which is a deterministic function of `Y_1` and `ε̂`.
    pub fn ancestral_step(
        &self,
        yt: &SignalSet,
        eps_hat: &SignalSet,
        t: usize,
        z: &SignalSet,
    ) -> Result<SignalSet> {
        let i = self.index(t)?;
        let z = if t > 1 { Some(z) } else { None };
        ancestral_update(self.alpha[i], self.alpha_bar[i], self.sigma[i], yt, eps_hat, z)
    }
}

/// Forward corruption for an arbitrary `ᾱ`.
pub fn forward_diffuse_with(alpha_bar: f64, y0: &SignalSet, eps: &SignalSet) -> Result<SignalSet> {
    y0.check_same_shape(eps, "forward_diffuse")?;
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = y0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&y, &e)| a * y + b * e)
        .collect();
    SignalSet::new(y0.len(), y0.dim(), data)
}

/// `Y_{t−1} = (Y_t − (1 − α_t)/√(1 − ᾱ_t)·ε̂)/√α_t + σ_t·z`, with `z = 0`
/// when absent.
pub fn ancestral_update(
    alpha: f64,
    alpha_bar: f64,
    sigma: f64,
    yt: &SignalSet,
    eps_hat: &SignalSet,
    z: Option<&SignalSet>,
) -> Result<SignalSet> {
    yt.check_same_shape(eps_hat, "ancestral_step")?;
    if let Some(z) = z {
        yt.check_same_shape(z, "ancestral_step")?;
    }
    let coef = if alpha_bar < 1.0 {
        (1.0 - alpha) / (1.0 - alpha_bar).sqrt()
    } else {
        0.0
    };
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mut data: Vec<f64> = yt
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&y, &e)| (y - coef * e) * inv_sqrt_alpha)
        .collect();
    if let Some(z) = z {
        for (v, &n) in data.iter_mut().zip(z.data()) {
            *v += sigma * n;
        }
    }
    SignalSet::new(yt.len(), yt.dim(), data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn signals(v: &[f64]) -> SignalSet {
        SignalSet::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bars(), &[0.7]);
        assert_eq!(s.sigma(1).unwrap(), 0.3f64.sqrt());
    }

    #[test]
    fn default_schedule_matches_log_space_oracle() {
        let s = NoiseSchedule::from_config(ScheduleConfig::default()).unwrap();
        assert_eq!(s.steps(), 1000);
        assert!((s.alpha_bar(1).unwrap() - 0.9999).abs() < 1e-15);
        // Independent route: exp(Σ ln(1 − β_i)) with β recomputed from scratch.
        let log_sum: f64 = (0..1000)
            .map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln())
            .sum();
        let oracle = log_sum.exp();
        let last = s.alpha_bar(1000).unwrap();
        assert!(((last - oracle) / oracle).abs() < 1e-10, "{last} vs {oracle}");
        assert!(last > 1e-5 && last < 1e-4);
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::from_config(ScheduleConfig::default()).unwrap();
        for t in 1..=1000 {
            let b = s.beta(t).unwrap();
            assert!(b > 0.0 && b < 1.0);
            assert_eq!(s.sigma(t).unwrap().powi(2), b.sqrt().powi(2));
            if t > 1 {
                let prev = s.alpha_bar(t - 1).unwrap();
                assert!(s.alpha_bar(t).unwrap() < prev);
                assert_eq!(s.alpha_bar(t).unwrap(), prev * s.alpha(t).unwrap());
            }
        }
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(NoiseSchedule::linear(10, 0.02, 1e-4).is_err());
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn posterior_sigma_is_below_beta() {
        let s = NoiseSchedule::from_config(ScheduleConfig {
            sigma: SigmaRule::Posterior,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.sigma(1).unwrap(), 0.0);
        for t in 2..=1000 {
            assert!(s.sigma(t).unwrap() < s.beta(t).unwrap().sqrt());
        }
    }

    #[test]
    fn forward_examples() {
        let y0 = signals(&[1.0, -0.4]);
        let eps = signals(&[1.0, 2.0]);
        assert_eq!(forward_diffuse_with(1.0, &y0, &eps).unwrap(), y0);
        let yt = forward_diffuse_with(0.25, &signals(&[1.0]), &signals(&[1.0])).unwrap();
        assert!((yt.data()[0] - (0.5 + 0.75f64.sqrt())).abs() < 1e-15);
        assert!((yt.data()[0] - 1.36603).abs() < 1e-5);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let a = signals(&[1.0]);
        let b = signals(&[1.0, 2.0]);
        assert!(s.forward_diffuse(&a, 1, &b).is_err());
        assert!(s.forward_diffuse(&a, 0, &a).is_err());
        assert!(s.forward_diffuse(&a, 11, &a).is_err());
    }

    #[test]
    fn forward_moments_match_closed_form() {
        let s = NoiseSchedule::from_config(ScheduleConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let y0 = signals(&vec![0.7; n]);
        for t in [1, 300, 1000] {
            let eps = SignalSet::standard_normal(n, 1, &mut rng);
            let yt = s.forward_diffuse(&y0, t, &eps).unwrap();
            let ab = s.alpha_bar(t).unwrap();
            let mean = yt.data().iter().sum::<f64>() / n as f64;
            let var = yt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let (em, ev) = (ab.sqrt() * 0.7, 1.0 - ab);
            assert!((mean - em).abs() < 3.0 * (ev / n as f64).sqrt(), "t={t}");
            let var_se = ev * (2.0 / (n - 1) as f64).sqrt();
            assert!((var - ev).abs() < 3.0 * var_se, "t={t}");
        }
    }

    #[test]
    fn stepwise_composition_matches_marginal_variance() {
        // Composing x_t = √α_t·x_{t−1} + √β_t·n_t from x_0 = 0 must give
        // variance 1 − ᾱ_t; exactly via the recurrence, and by Monte Carlo.
        let s = NoiseSchedule::linear(200, 1e-3, 0.05).unwrap();
        let mut var = 0.0;
        for t in 1..=200 {
            var = s.alpha(t).unwrap() * var + s.beta(t).unwrap();
            assert!((var - (1.0 - s.alpha_bar(t).unwrap())).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20_000;
        let mut x = signals(&vec![0.0; n]);
        for t in 1..=200 {
            let noise = SignalSet::standard_normal(n, 1, &mut rng);
            let (a, b) = (s.alpha(t).unwrap().sqrt(), s.beta(t).unwrap().sqrt());
            for (v, &e) in x.data_mut().iter_mut().zip(noise.data()) {
                *v = a * *v + b * e;
            }
        }
        let mc = x.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
        let ev = 1.0 - s.alpha_bar(200).unwrap();
        assert!((mc - ev).abs() < 3.0 * ev * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn ancestral_examples() {
        let y = ancestral_update(0.99, 0.9, 0.1, &signals(&[1.0]), &signals(&[0.5]), None).unwrap();
        let expected = (1.0 - (0.01 / 0.1f64.sqrt()) * 0.5) / 0.99f64.sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-15);
        assert!((y.data()[0] - 0.989147).abs() < 1e-6);

        let y = ancestral_update(1.0, 1.0, 0.0, &signals(&[0.3]), &signals(&[0.0]), None).unwrap();
        assert_eq!(y.data(), &[0.3]);
    }

    #[test]
    fn final_step_ignores_noise() {
        let s = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let yt = signals(&[0.2, -0.1]);
        let eps = signals(&[0.3, 0.3]);
        let a = s.ancestral_step(&yt, &eps, 1, &signals(&[5.0, -5.0])).unwrap();
        let b = s.ancestral_step(&yt, &eps, 1, &signals(&[0.0, 0.0])).unwrap();
        assert_eq!(a, b);
        let c = s.ancestral_step(&yt, &eps, 2, &signals(&[5.0, -5.0])).unwrap();
        assert_ne!(a, c);
        assert!(s.ancestral_step(&yt, &eps, 51, &yt).is_err());
    }
}
