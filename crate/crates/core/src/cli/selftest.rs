//! Built-in invariant suites for `texgen selftest`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codec::{LatentCodec, ToyCodec};
use crate::denoiser::{sample_ddim, GaussianBackend, GaussianPrior, PromptCondition};
use crate::geometry::{inverse_render, primitives, rasterize, render, CameraPose, Intrinsics, RgbImage, TextureMap};
use crate::guidance::{
    disentangle_texture_condition, multi_cond_combine, texture_noise, DenoiseOutput, GuidanceWeights, Omega2Mode,
};
use crate::latent::LatentImage;
use crate::schedule::{build_schedule, NoiseSchedule, SamplerConfig};

pub const SUITES: [&str; 5] = ["schedule", "guidance", "codec", "raster", "gaussian"];

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub suites: Vec<SuiteResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            let _ = writeln!(out, "{:<10} {:<4} {}", s.name, if s.passed { "PASS" } else { "FAIL" }, s.detail);
        }
        out
    }
}

type Check = Result<String, String>;

fn random_latent(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> LatentImage {
    LatentImage::from_fn(h, w, c, |_, _, _| rng.sample(StandardNormal))
}

fn schedule_suite(corrupt: bool) -> Check {
    let cfg = SamplerConfig::default();
    let sched = build_schedule(&cfg).map_err(|e| e.to_string())?;
    let mut alphas = sched.alphas().to_vec();
    if corrupt {
        let mid = alphas.len() / 2;
        alphas[mid] *= 1.001;
    }
    let mut acc = 1.0;
    let mut cumulative = Vec::new();
    for k in 0..cfg.train_steps {
        let beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * k as f64 / (cfg.train_steps - 1) as f64;
        acc *= 1.0 - beta;
        cumulative.push(acc);
    }
    for (i, a) in alphas.iter().enumerate() {
        let k = sched.timestep(i + 1).map_err(|e| e.to_string())?;
        if (a - cumulative[k - 1]).abs() > 1e-12 {
            return Err(format!("alpha_{} = {a} but product gives {}", i + 1, cumulative[k - 1]));
        }
    }
    let sched = NoiseSchedule::from_alphas(alphas).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = random_latent(&mut rng, 2, 2, 4);
    let eps = random_latent(&mut rng, 2, 2, 4);
    for t in 1..=sched.steps() {
        let xt = sched.add_noise(&x0, &eps, t).map_err(|e| e.to_string())?;
        let back = sched.predict_x0(&xt, &eps, t).map_err(|e| e.to_string())?;
        if back.max_abs_diff(&x0) > 1e-6 {
            return Err(format!("add_noise/predict_x0 mismatch at t = {t}"));
        }
    }
    Ok(format!("{} steps", sched.steps()))
}

fn guidance_suite() -> Check {
    let sched = build_schedule(&SamplerConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let t = 1 + i % sched.steps();
        let omega = rng.gen_range(0.5..12.0);
        let out = DenoiseOutput::new(random_latent(&mut rng, 2, 3, 4), random_latent(&mut rng, 2, 3, 4))
            .map_err(|e| e.to_string())?;
        let x = random_latent(&mut rng, 2, 3, 4);
        let g = random_latent(&mut rng, 2, 3, 4);
        let hat = texture_noise(&x, &g, t, &sched).map_err(|e| e.to_string())?;
        let tex = disentangle_texture_condition(&hat, &out.eps_uncond, omega).map_err(|e| e.to_string())?;
        let recombined = out
            .eps_uncond
            .zip_map(&tex, "recombine", |u, e| u + omega * (e - u))
            .map_err(|e| e.to_string())?;
        worst = worst.max(recombined.max_abs_diff(&hat));
        let w = GuidanceWeights::new(omega, sched.steps()).with_mode(Omega2Mode::TextureOnly);
        let collapsed = multi_cond_combine(&out, &tex, &w, t).map_err(|e| e.to_string())?;
        worst = worst.max(collapsed.max_abs_diff(&hat));
        let x0 = sched.predict_x0(&x, &hat, t).map_err(|e| e.to_string())?;
        if x0.max_abs_diff(&g) > 1e-6 {
            return Err(format!("texture noise does not reproduce the render at t = {t}"));
        }
    }
    if worst > 1e-9 {
        return Err(format!("identity residual {worst:.3e}"));
    }
    Ok(format!("max residual {worst:.1e}"))
}

fn codec_suite() -> Check {
    let codec = ToyCodec::new(2, 4).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = RgbImage::from_fn(16, 16, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    let once = codec.decode(&codec.encode(&img).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let twice = codec.decode(&codec.encode(&once).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let diff = once
        .data
        .iter()
        .flatten()
        .zip(twice.data.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if diff > 1e-6 {
        return Err(format!("round trip not idempotent ({diff:.3e})"));
    }
    Ok(format!("idempotency residual {diff:.1e}"))
}

fn raster_suite() -> Check {
    let sphere = primitives::uv_sphere(12, 24, true);
    let pose = CameraPose {
        azimuth_deg: 30.0,
        elevation_deg: 20.0,
        radius: 3.0,
        intrinsics: Intrinsics::square(45.0, 48),
    };
    let raster = rasterize(&sphere, &pose, 32, 32);
    if raster.valid_count() == 0 {
        return Err("sphere not visible".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tex = TextureMap::new(32, 32, [0.5; 3]);
    for (t, w) in tex.texels.iter_mut().zip(tex.writer.iter_mut()) {
        *t = [rng.gen(), rng.gen(), rng.gen()];
        *w = Some(0);
    }
    let first = render(&tex, &raster, [0.0; 3]);
    let mut rebuilt = TextureMap::new(32, 32, [0.5; 3]);
    inverse_render(&first, &raster, &mut rebuilt, 0, None).map_err(|e| e.to_string())?;
    let second = render(&rebuilt, &raster, [0.0; 3]);
    for (i, f) in raster.fragments.iter().enumerate() {
        if f.is_some() && first.data[i] != second.data[i] {
            return Err(format!("pixel {i} changed after round trip"));
        }
    }
    Ok(format!("{} valid pixels", raster.valid_count()))
}

fn gaussian_suite() -> Check {
    let mu = vec![0.5, -1.0, 2.0, 0.0];
    let s = 0.5;
    let backend = GaussianBackend::new(GaussianPrior::isotropic(mu.clone(), s)).map_err(|e| e.to_string())?;
    let sched = build_schedule(&SamplerConfig {
        kind: crate::schedule::ScheduleKind::Cosine,
        ..SamplerConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let n = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..n {
        let x = random_latent(&mut rng, 1, 1, 4);
        let y = sample_ddim(&backend, &sched, x, &PromptCondition::null(), 1.0).map_err(|e| e.to_string())?;
        for (k, v) in y.as_slice().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for k in 0..4 {
        let m = sum[k] / n as f64;
        let var = sq[k] / n as f64 - m * m;
        worst_mean = worst_mean.max((m - mu[k]).abs());
        worst_var = worst_var.max((var / (s * s) - 1.0).abs());
    }
    if worst_mean > 0.1 || worst_var > 0.2 {
        return Err(format!("mean error {worst_mean:.3}, variance error {:.1}%", 100.0 * worst_var));
    }
    Ok(format!("{n} chains, mean error {worst_mean:.3}, variance error {:.1}%", 100.0 * worst_var))
}

/// Run every suite; `fault` names a suite whose inputs are deliberately corrupted.
pub fn run(fault: Option<&str>) -> Report {
    let suites = SUITES
        .iter()
        .map(|&name| {
            let result = match name {
                "schedule" => schedule_suite(fault == Some("schedule")),
                "guidance" => guidance_suite(),
                "codec" => codec_suite(),
                "raster" => raster_suite(),
                _ => gaussian_suite(),
            };
            let (passed, detail) = match result {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            SuiteResult { name, passed, detail }
        })
        .collect();
    Report { suites }
}
