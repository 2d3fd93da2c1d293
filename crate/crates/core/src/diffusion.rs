//! Noise schedules, SNR-based loss weighting, v-prediction algebra and the
//! deterministic DDIM reverse step.
//!
//! Cumulative signal levels are stored on the integer grid `0..=T` with
//! `alpha_bar[0] = 1`. All functions here are pure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SNR reported when `alpha_bar == 1`, where the ratio is unbounded.
pub const SNR_CAP: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaFamily {
    #[default]
    Linear,
}

/// Parameters from which a [`NoiseSchedule`] is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub zero_terminal_snr: bool,
    #[serde(default)]
    pub family: BetaFamily,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_lo: 1e-4,
            beta_hi: 0.02,
            zero_terminal_snr: true,
            family: BetaFamily::Linear,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.family {
            BetaFamily::Linear => {
                make_schedule(self.steps, self.beta_lo, self.beta_hi, self.zero_terminal_snr)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    #[serde(rename = "T")]
    steps: usize,
    alpha_bar: Vec<f64>,
    zero_terminal_snr: bool,
}

/// Linear betas, optionally rescaled so the final step carries pure noise.
///
/// The zero-SNR rescale shifts and stretches `sqrt(alpha_bar[1..=T])` so the
/// last value lands on exactly 0 while the first is unchanged.
pub fn make_schedule(
    steps: usize,
    beta_lo: f64,
    beta_hi: f64,
    zero_terminal_snr: bool,
) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0) {
        return Err(Error::invalid(format!(
            "beta range must satisfy 0 < lo <= hi < 1, got [{beta_lo}, {beta_hi}]"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for t in 1..=steps {
        let frac = if steps == 1 {
            0.0
        } else {
            (t - 1) as f64 / (steps - 1) as f64
        };
        let beta = beta_lo + (beta_hi - beta_lo) * frac;
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    if zero_terminal_snr {
        if steps == 1 {
            alpha_bar[1] = 0.0;
        } else {
            let first = alpha_bar[1].sqrt();
            let last = alpha_bar[steps].sqrt();
            let stretch = first / (first - last);
            for ab in alpha_bar.iter_mut().skip(1) {
                let s = (ab.sqrt() - last) * stretch;
                *ab = s * s;
            }
            alpha_bar[steps] = 0.0;
        }
    }
    Ok(NoiseSchedule {
        steps,
        alpha_bar,
        zero_terminal_snr,
    })
}

impl NoiseSchedule {
    /// Builds a schedule from explicit levels, validating the invariants.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 || alpha_bar[0] != 1.0 {
            return Err(Error::invalid("alpha_bar needs alpha_bar[0] = 1 and at least one step"));
        }
        if alpha_bar.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("alpha_bar entries must lie in [0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("alpha_bar must be strictly decreasing"));
        }
        let steps = alpha_bar.len() - 1;
        let zero_terminal_snr = alpha_bar[steps] == 0.0;
        Ok(Self {
            steps,
            alpha_bar,
            zero_terminal_snr,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn zero_terminal_snr(&self) -> bool {
        self.zero_terminal_snr
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t, 0)?;
        Ok(self.alpha_bar[t])
    }

    fn check(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps {
            return Err(Error::TimestepOutOfRange {
                t,
                lo,
                hi: self.steps,
            });
        }
        Ok(())
    }

    /// `(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))`.
    fn coefs(&self, t: usize) -> Result<(f64, f64)> {
        let ab = self.alpha_bar(t)?;
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }
}

/// Signal-to-noise ratio `alpha_bar / (1 - alpha_bar)` at `t` in `[1, T]`.
///
/// Zero when `alpha_bar_t = 0`; [`SNR_CAP`] when `alpha_bar_t = 1`.
pub fn snr(schedule: &NoiseSchedule, t: usize) -> Result<f64> {
    schedule.check(t, 1)?;
    Ok(snr_of_alpha_bar(schedule.alpha_bar[t]))
}

pub fn snr_of_alpha_bar(ab: f64) -> f64 {
    if ab <= 0.0 {
        0.0
    } else if ab >= 1.0 {
        SNR_CAP
    } else {
        (ab / (1.0 - ab)).min(SNR_CAP)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub gamma: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { gamma: 5.0 }
    }
}

impl WeightConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }
}

/// Min-SNR weight for v-prediction: `min(snr, gamma) / (snr + 1)`.
pub fn loss_weight(snr_value: f64, cfg: &WeightConfig) -> Result<f64> {
    if snr_value.is_nan() || snr_value < 0.0 {
        return Err(Error::invalid(format!("snr must be non-negative, got {snr_value}")));
    }
    if !(cfg.gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {}", cfg.gamma)));
    }
    Ok(snr_value.min(cfg.gamma) / (snr_value + 1.0))
}

/// Forward noising `sqrt(ab) x0 + sqrt(1 - ab) eps`.
pub fn add_noise(x0: &Tensor, eps: &Tensor, schedule: &NoiseSchedule, t: usize) -> Result<Tensor> {
    schedule.check(t, 1)?;
    let (a, s) = schedule.coefs(t)?;
    x0.lincomb(a, eps, s)
}

/// Velocity target `sqrt(ab) eps - sqrt(1 - ab) x0`.
pub fn v_target(x0: &Tensor, eps: &Tensor, schedule: &NoiseSchedule, t: usize) -> Result<Tensor> {
    let (a, s) = schedule.coefs(t)?;
    eps.lincomb(a, x0, -s)
}

/// Noise implied by a velocity: `sqrt(ab) v + sqrt(1 - ab) z_t`.
pub fn v_to_eps(v: &Tensor, z_t: &Tensor, schedule: &NoiseSchedule, t: usize) -> Result<Tensor> {
    let (a, s) = schedule.coefs(t)?;
    v.lincomb(a, z_t, s)
}

/// Clean sample implied by a velocity: `sqrt(ab) z_t - sqrt(1 - ab) v`.
pub fn v_to_x0(v: &Tensor, z_t: &Tensor, schedule: &NoiseSchedule, t: usize) -> Result<Tensor> {
    let (a, s) = schedule.coefs(t)?;
    z_t.lincomb(a, v, -s)
}

/// What the network predicted at a reverse step.
#[derive(Clone, Copy, Debug)]
pub enum Prediction<'a> {
    Epsilon(&'a Tensor),
    Velocity(&'a Tensor),
}

/// One deterministic DDIM step (eta = 0) from `t` down to `t_prev`.
///
/// With an epsilon prediction this is the textbook update. With a velocity
/// prediction the clean estimate and the noise are both recovered from `v`,
/// which stays defined at `alpha_bar_t = 0` (the terminal step of a zero-SNR
/// schedule); an epsilon prediction at that step is rejected.
pub fn ddim_step(
    z_t: &Tensor,
    pred: Prediction<'_>,
    schedule: &NoiseSchedule,
    t: usize,
    t_prev: usize,
) -> Result<Tensor> {
    schedule.check(t, 1)?;
    if t_prev >= t {
        return Err(Error::invalid(format!("ddim step needs t_prev < t, got {t_prev} >= {t}")));
    }
    let (a_t, s_t) = schedule.coefs(t)?;
    let (a_p, s_p) = schedule.coefs(t_prev)?;
    let (x0_hat, eps) = match pred {
        Prediction::Epsilon(eps) => {
            z_t.ensure_same_shape(eps)?;
            if a_t == 0.0 {
                return Err(Error::invalid(
                    "epsilon prediction cannot recover x0 where alpha_bar = 0; use a velocity prediction",
                ));
            }
            let x0 = z_t.lincomb(1.0 / a_t, eps, -s_t / a_t)?;
            (x0, eps.clone())
        }
        Prediction::Velocity(v) => {
            z_t.ensure_same_shape(v)?;
            (z_t.lincomb(a_t, v, -s_t)?, v.lincomb(a_t, z_t, s_t)?)
        }
    };
    x0_hat.lincomb(a_p, &eps, s_p)
}

/// Evenly spaced timesteps for a `steps`-step sampler, from `T` down to 0,
/// `floor(k T / steps)` for `k = steps..=0`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::invalid(format!(
            "sampler steps must lie in [1, {total}], got {steps}"
        )));
    }
    Ok((0..=steps).rev().map(|k| k * total / steps).collect())
}

/// Runs the full deterministic reverse pass from `z_start` (at `t = T`)
/// using a velocity predictor `predict(z_t, t)`.
pub fn ddim_sample<F>(z_start: &Tensor, schedule: &NoiseSchedule, steps: usize, mut predict: F) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    let ts = ddim_timesteps(schedule.steps(), steps)?;
    let mut z = z_start.clone();
    for pair in ts.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        let v = predict(&z, t)?;
        z = ddim_step(&z, Prediction::Velocity(&v), schedule, t, t_prev)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched(levels: &[f64]) -> NoiseSchedule {
        let mut ab = vec![1.0];
        ab.extend_from_slice(levels);
        NoiseSchedule::from_alpha_bar(ab).unwrap()
    }

    #[test]
    fn zero_snr_schedule_ends_at_exact_zero() {
        let s = make_schedule(1000, 1e-4, 0.02, true).unwrap();
        assert_eq!(s.alpha_bars()[1000], 0.0);
        assert_eq!(snr(&s, 1000).unwrap(), 0.0);
        assert!(s.zero_terminal_snr());
        let plain = make_schedule(1000, 1e-4, 0.02, false).unwrap();
        assert!((s.alpha_bars()[1] - plain.alpha_bars()[1]).abs() < 1e-15);
    }

    #[test]
    fn short_schedule_strictly_decreasing() {
        let s = make_schedule(10, 0.1, 0.3, false).unwrap();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars()[10] > 0.0);
        let z = make_schedule(1, 0.1, 0.1, true).unwrap();
        assert_eq!(z.alpha_bars(), &[1.0, 0.0]);
    }

    #[test]
    fn schedule_rejects_bad_arguments() {
        assert!(make_schedule(0, 1e-4, 0.02, false).is_err());
        assert!(make_schedule(10, 0.0, 0.02, false).is_err());
        assert!(make_schedule(10, 0.02, 0.01, false).is_err());
        assert!(make_schedule(10, 0.01, 1.0, false).is_err());
    }

    #[test]
    fn snr_examples() {
        let s = sched(&[0.9, 0.5, 0.0]);
        assert_eq!(snr(&s, 2).unwrap(), 1.0);
        assert!((snr(&s, 1).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(snr(&s, 3).unwrap(), 0.0);
        assert!(snr(&s, 0).is_err());
        assert!(snr(&s, 4).is_err());
        assert_eq!(snr_of_alpha_bar(1.0), SNR_CAP);
    }

    #[test]
    fn weight_examples() {
        let cfg = WeightConfig::default();
        assert_eq!(loss_weight(0.0, &cfg).unwrap(), 0.0);
        assert_eq!(loss_weight(5.0, &cfg).unwrap(), 5.0 / 6.0);
        assert_eq!(loss_weight(100.0, &cfg).unwrap(), 5.0 / 101.0);
        assert!(loss_weight(-1.0, &cfg).is_err());
        assert!(WeightConfig::new(0.0).is_err());
        assert!(loss_weight(SNR_CAP, &cfg).unwrap().is_finite());
    }

    #[test]
    fn noising_and_velocity_examples() {
        let s = sched(&[0.5, 0.25, 0.0]);
        let ones = Tensor::full(&[1, 4, 2, 2], 1.0);
        let zeros = Tensor::zeros(&[1, 4, 2, 2]);
        let z = add_noise(&ones, &zeros, &s, 2).unwrap();
        assert!(z.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert_eq!(add_noise(&ones, &zeros, &s, 3).unwrap(), zeros);
        assert!(v_target(&ones, &ones, &s, 1).unwrap().max_abs() < 1e-15);
        assert_eq!(v_target(&ones, &zeros, &s, 3).unwrap(), ones.scale(-1.0));
        // alpha_bar = 1 at t = 0
        assert_eq!(v_target(&ones, &zeros, &s, 0).unwrap(), zeros);
        assert!(add_noise(&ones, &Tensor::zeros(&[1, 4, 2, 1]), &s, 1).is_err());
    }

    #[test]
    fn ddim_examples() {
        let s = make_schedule(100, 1e-4, 0.02, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = Tensor::randn(&[2, 4, 3, 3], &mut rng);
        let eps = Tensor::randn(&[2, 4, 3, 3], &mut rng);
        let z = add_noise(&x0, &eps, &s, 40).unwrap();
        let back = ddim_step(&z, Prediction::Epsilon(&eps), &s, 40, 0).unwrap();
        assert!(back.max_abs_diff(&x0) < 1e-12);

        // equal levels: identity step
        let flat = NoiseSchedule {
            steps: 2,
            alpha_bar: vec![1.0, 0.5, 0.5],
            zero_terminal_snr: false,
        };
        let z = add_noise(&x0, &eps, &flat, 2).unwrap();
        let same = ddim_step(&z, Prediction::Epsilon(&eps), &flat, 2, 1).unwrap();
        assert!(same.max_abs_diff(&z) < 1e-12);

        assert!(ddim_step(&z, Prediction::Epsilon(&eps), &s, 10, 10).is_err());
        assert!(ddim_step(&z, Prediction::Epsilon(&eps), &s, 101, 0).is_err());
    }

    #[test]
    fn terminal_zero_snr_step_uses_velocity() {
        let s = make_schedule(50, 1e-4, 0.02, true).unwrap();
        let x0 = Tensor::full(&[1, 4, 1, 1], 0.7);
        let eps = Tensor::full(&[1, 4, 1, 1], -1.3);
        let z = add_noise(&x0, &eps, &s, 50).unwrap();
        assert_eq!(z, eps);
        let v = v_target(&x0, &eps, &s, 50).unwrap();
        let out = ddim_step(&z, Prediction::Velocity(&v), &s, 50, 0).unwrap();
        assert!(out.max_abs_diff(&x0) < 1e-15);
        assert!(ddim_step(&z, Prediction::Epsilon(&eps), &s, 50, 0).is_err());
    }

    #[test]
    fn timestep_spacing() {
        assert_eq!(ddim_timesteps(1000, 1).unwrap(), vec![1000, 0]);
        let ts = ddim_timesteps(1000, 50).unwrap();
        assert_eq!(ts.len(), 51);
        assert_eq!(ts[0], 1000);
        assert_eq!(ts[1], 980);
        assert_eq!(*ts.last().unwrap(), 0);
        assert_eq!(ddim_timesteps(10, 3).unwrap(), vec![10, 6, 3, 0]);
        assert!(ddim_timesteps(10, 0).is_err());
        assert!(ddim_timesteps(10, 11).is_err());
    }

    #[test]
    fn schedule_json_shape() {
        let s = make_schedule(3, 0.1, 0.2, false).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["T"], 3);
        assert_eq!(v["alpha_bar"].as_array().unwrap().len(), 4);
        assert_eq!(v["zero_terminal_snr"], false);
        let back: NoiseSchedule = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
