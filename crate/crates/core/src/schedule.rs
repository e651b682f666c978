//! Diffusion noise schedule and deterministic DDIM step arithmetic.
//!
//! Steps are indexed `t = 1..=T` in sampling order reversed: sampling starts at
//! `t = T` (most noise) and finishes at `t = 1`. Step `0` is the terminal,
//! noise-free state with `alpha = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentImage;

/// Inference step index. `0` marks termination.
pub type Step = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    LinearBeta,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear-beta" => Ok(ScheduleKind::LinearBeta),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::config(
                "schedule_kind",
                format!("unknown schedule kind `{other}` (expected linear-beta or cosine)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of inference steps `T`.
    pub steps: usize,
    /// Length of the underlying training schedule that inference steps subsample.
    pub train_steps: usize,
    pub kind: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 40,
            train_steps: 1000,
            kind: ScheduleKind::LinearBeta,
            beta_start: 1e-4,
            beta_end: 2e-2,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if self.train_steps < self.steps {
            return Err(Error::config(
                "train_steps",
                format!(
                    "training schedule ({}) shorter than inference steps ({})",
                    self.train_steps, self.steps
                ),
            ));
        }
        if !(self.beta_start > 0.0 && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return Err(Error::config(
                "beta",
                format!(
                    "need 0 < beta_start < beta_end < 1, got [{}, {}]",
                    self.beta_start, self.beta_end
                ),
            ));
        }
        Ok(())
    }
}

/// Cumulative signal-retention coefficients for each inference step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `alphas[t - 1]` is `alpha_t`.
    alphas: Vec<f64>,
    /// Training timestep (1-based) that inference step `t` maps onto.
    timesteps: Vec<usize>,
}

pub fn build_schedule(cfg: &SamplerConfig) -> Result<NoiseSchedule> {
    cfg.validate()?;
    let n = cfg.train_steps;
    let betas: Vec<f64> = match cfg.kind {
        ScheduleKind::LinearBeta => (0..n)
            .map(|k| {
                if n == 1 {
                    cfg.beta_start
                } else {
                    cfg.beta_start + (cfg.beta_end - cfg.beta_start) * k as f64 / (n - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            const OFFSET: f64 = 0.008;
            let f = |k: usize| {
                let x = (k as f64 / n as f64 + OFFSET) / (1.0 + OFFSET) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            (0..n).map(|k| (1.0 - f(k + 1) / f(k)).clamp(1e-8, 0.999)).collect()
        }
    };
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 1.0;
    for beta in &betas {
        acc *= 1.0 - beta;
        cumulative.push(acc);
    }
    // Uniform subsampling: inference step t sits at training step round(t * n / T).
    let timesteps: Vec<usize> = (1..=cfg.steps)
        .map(|t| ((t as f64 * n as f64 / cfg.steps as f64).round() as usize).clamp(1, n))
        .collect();
    let alphas = timesteps.iter().map(|&k| cumulative[k - 1]).collect();
    NoiseSchedule::with_timesteps(alphas, timesteps)
}

impl NoiseSchedule {
    /// Schedule from explicit per-step alphas (`alphas[0]` is `alpha_1`).
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        let timesteps = (1..=alphas.len()).collect();
        Self::with_timesteps(alphas, timesteps)
    }

    fn with_timesteps(alphas: Vec<f64>, timesteps: Vec<usize>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::config("steps", "schedule must have at least one step"));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::config("alphas", format!("alpha {a} outside (0, 1]")));
        }
        if alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("alphas", "alphas must strictly decrease with t"));
        }
        Ok(Self { alphas, timesteps })
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_t`; step 0 is the terminal state with `alpha = 1`.
    pub fn alpha(&self, t: Step) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.alphas.len() => Ok(self.alphas[t - 1]),
            t => Err(Error::contract(format!(
                "step {t} outside schedule 0..={}",
                self.alphas.len()
            ))),
        }
    }

    /// Standard deviation of the latent noise at step `t`.
    pub fn sigma(&self, t: Step) -> Result<f64> {
        Ok((1.0 - self.alpha(t)?).sqrt())
    }

    /// Training timestep for inference step `t` (0 for the terminal state).
    pub fn timestep(&self, t: Step) -> Result<usize> {
        self.alpha(t)?;
        Ok(if t == 0 { 0 } else { self.timesteps[t - 1] })
    }

    /// Sampling order: `T, T-1, ..., 1`.
    pub fn sampling_steps(&self) -> impl Iterator<Item = Step> {
        (1..=self.alphas.len()).rev()
    }

    pub fn predict_x0(&self, x_t: &LatentImage, eps: &LatentImage, t: Step) -> Result<LatentImage> {
        predict_x0_at(x_t, eps, self.alpha(t)?)
    }

    /// Deterministic DDIM update towards `t_next` (`t_next <= t`, 0 terminates).
    pub fn ddim_step(
        &self,
        x0_hat: &LatentImage,
        eps: &LatentImage,
        t: Step,
        t_next: Step,
    ) -> Result<LatentImage> {
        self.alpha(t)?;
        if t_next > t {
            return Err(Error::contract(format!(
                "ddim_step must not move backwards in time ({t} -> {t_next})"
            )));
        }
        ddim_step_at(x0_hat, eps, self.alpha(t_next)?)
    }

    pub fn add_noise(&self, x0: &LatentImage, eps: &LatentImage, t: Step) -> Result<LatentImage> {
        add_noise_at(x0, eps, self.alpha(t)?)
    }
}

/// `(x_t - sqrt(1 - a) * eps) / sqrt(a)`.
pub fn predict_x0_at(x_t: &LatentImage, eps: &LatentImage, alpha: f64) -> Result<LatentImage> {
    let sa = alpha.sqrt();
    let sb = (1.0 - alpha).sqrt();
    x_t.zip_map(eps, "predict_x0", |x, e| (x - sb * e) / sa)
}

/// `sqrt(a_next) * x0_hat + sqrt(1 - a_next) * eps`.
pub fn ddim_step_at(x0_hat: &LatentImage, eps: &LatentImage, alpha_next: f64) -> Result<LatentImage> {
    let sa = alpha_next.sqrt();
    let sb = (1.0 - alpha_next).sqrt();
    x0_hat.zip_map(eps, "ddim_step", |x0, e| sa * x0 + sb * e)
}

/// `sqrt(a) * x0 + sqrt(1 - a) * eps`.
pub fn add_noise_at(x0: &LatentImage, eps: &LatentImage, alpha: f64) -> Result<LatentImage> {
    let sa = alpha.sqrt();
    let sb = (1.0 - alpha).sqrt();
    x0.zip_map(eps, "add_noise", |x, e| sa * x + sb * e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> LatentImage {
        LatentImage::filled(1, 1, 1, v)
    }

    #[test]
    fn single_step_schedule() {
        let cfg = SamplerConfig {
            steps: 1,
            ..Default::default()
        };
        let s = build_schedule(&cfg).unwrap();
        assert_eq!(s.steps(), 1);
        let a = s.alpha(1).unwrap();
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn linear_alpha_matches_direct_product() {
        // 40 training steps, 40 inference steps: alpha_40 is the product of all 40 (1 - beta).
        let cfg = SamplerConfig {
            steps: 40,
            train_steps: 40,
            ..Default::default()
        };
        let s = build_schedule(&cfg).unwrap();
        let mut product = 1.0;
        for k in 0..40 {
            let beta = 1e-4 + (2e-2 - 1e-4) * k as f64 / 39.0;
            product *= 1.0 - beta;
        }
        assert!((s.alpha(40).unwrap() - product).abs() < 1e-12);

        // Default: 1000 training steps subsampled to 40, top step is the full product.
        let s = build_schedule(&SamplerConfig::default()).unwrap();
        let mut product = 1.0;
        for k in 0..1000 {
            product *= 1.0 - (1e-4 + (2e-2 - 1e-4) * k as f64 / 999.0);
        }
        assert!((s.alpha(40).unwrap() - product).abs() < 1e-12);
        assert_eq!(s.timestep(1).unwrap(), 25);
        assert_eq!(s.timestep(40).unwrap(), 1000);
    }

    #[test]
    fn invalid_configs_rejected() {
        let zero = SamplerConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(matches!(build_schedule(&zero), Err(Error::Config { field, .. }) if field == "steps"));
        assert!("quadratic".parse::<ScheduleKind>().is_err());
        assert!(NoiseSchedule::from_alphas(vec![0.5, 0.6]).is_err());
        assert!(NoiseSchedule::from_alphas(vec![1.2]).is_err());
    }

    #[test]
    fn step_out_of_range() {
        let s = NoiseSchedule::from_alphas(vec![0.9, 0.5]).unwrap();
        assert!(s.alpha(3).is_err());
        assert!(s.ddim_step(&scalar(0.0), &scalar(0.0), 1, 2).is_err());
        assert!(s.ddim_step(&scalar(0.0), &scalar(0.0), 3, 2).is_err());
    }

    #[test]
    fn hand_arithmetic() {
        // alpha_1 = 0.81, alpha_2 = 0.64
        let s = NoiseSchedule::from_alphas(vec![0.81, 0.64]).unwrap();
        let x0 = s.predict_x0(&scalar(1.0), &scalar(0.5), 2).unwrap();
        assert!((x0.as_slice()[0] - 0.875).abs() < 1e-12);

        let next = s.ddim_step(&x0, &scalar(0.5), 2, 1).unwrap();
        let expected = 0.9 * 0.875 + 0.19f64.sqrt() * 0.5;
        assert!((next.as_slice()[0] - expected).abs() < 1e-12);
        assert!((next.as_slice()[0] - 1.005445).abs() < 1e-6);

        let q = NoiseSchedule::from_alphas(vec![0.25]).unwrap();
        let noisy = q.add_noise(&scalar(2.0), &scalar(-1.0), 1).unwrap();
        assert!((noisy.as_slice()[0] - (1.0 - 0.75f64.sqrt())).abs() < 1e-12);
        assert!((noisy.as_slice()[0] - 0.13397).abs() < 1e-5);
    }

    #[test]
    fn alpha_one_identities() {
        let x = LatentImage::from_fn(2, 2, 3, |y, x, c| (y * 7 + x * 3 + c) as f64 * 0.1);
        let eps = LatentImage::from_fn(2, 2, 3, |y, x, c| (y + x + c) as f64 - 2.0);
        assert_eq!(predict_x0_at(&x, &eps, 1.0).unwrap(), x);
        assert_eq!(ddim_step_at(&x, &eps, 1.0).unwrap(), x);
        assert_eq!(add_noise_at(&x, &eps, 1.0).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let a = LatentImage::zeros(2, 2, 4);
        let b = LatentImage::zeros(2, 2, 3);
        assert!(matches!(predict_x0_at(&a, &b, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn oracle_eps_chain_recovers_x0() {
        let s = build_schedule(&SamplerConfig::default()).unwrap();
        let x0 = LatentImage::from_fn(3, 3, 4, |y, x, c| ((y * 31 + x * 17 + c * 5) % 11) as f64 / 5.0 - 1.0);
        let mut x = LatentImage::from_fn(3, 3, 4, |y, x, c| ((y + 2 * x + 3 * c) % 5) as f64 - 2.0);
        for t in s.sampling_steps() {
            let a = s.alpha(t).unwrap();
            // Exact forward residual of the fixed x0.
            let eps = x.zip_map(&x0, "eps", |xt, x0| (xt - a.sqrt() * x0) / (1.0 - a).sqrt()).unwrap();
            let x0_hat = s.predict_x0(&x, &eps, t).unwrap();
            x = s.ddim_step(&x0_hat, &eps, t, t - 1).unwrap();
        }
        assert!(x.max_abs_diff(&x0) < 1e-5);
    }

    fn latent_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..32).prop_flat_map(|n| {
            (
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(-3.0f64..3.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn schedules_strictly_decrease(steps in 1usize..64, cosine in any::<bool>(), train in 64usize..1200) {
            let cfg = SamplerConfig {
                steps,
                train_steps: train,
                kind: if cosine { ScheduleKind::Cosine } else { ScheduleKind::LinearBeta },
                ..Default::default()
            };
            let s = build_schedule(&cfg).unwrap();
            prop_assert_eq!(s.steps(), steps);
            prop_assert!(s.alphas().iter().all(|a| *a > 0.0 && *a <= 1.0));
            prop_assert!(s.alphas().windows(2).all(|w| w[1] < w[0]));
            // Determinism.
            prop_assert_eq!(s, build_schedule(&cfg).unwrap());
        }

        #[test]
        fn add_noise_then_predict_is_identity((x0, eps) in latent_strategy(), t in 1usize..=40) {
            let s = build_schedule(&SamplerConfig::default()).unwrap();
            let n = x0.len();
            let x0 = LatentImage::from_vec(1, n, 1, x0).unwrap();
            let eps = LatentImage::from_vec(1, n, 1, eps).unwrap();
            let xt = s.add_noise(&x0, &eps, t).unwrap();
            let back = s.predict_x0(&xt, &eps, t).unwrap();
            prop_assert!(back.max_abs_diff(&x0) < 1e-6);
        }

        #[test]
        fn ddim_step_without_advance_is_fixed_point((xt, eps) in latent_strategy(), t in 1usize..=40) {
            let s = build_schedule(&SamplerConfig::default()).unwrap();
            let n = xt.len();
            let xt = LatentImage::from_vec(1, n, 1, xt).unwrap();
            let eps = LatentImage::from_vec(1, n, 1, eps).unwrap();
            let x0 = s.predict_x0(&xt, &eps, t).unwrap();
            let again = s.ddim_step(&x0, &eps, t, t).unwrap();
            prop_assert!(again.max_abs_diff(&xt) < 1e-6);
        }
    }
}
