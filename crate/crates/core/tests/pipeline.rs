//! End-to-end sampling loop behaviour on in-process backends.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use texgen::codec::{CodecSpec, LatentCodec};
use texgen::denoiser::{DenoiseRequest, Denoiser, PromptCondition};
use texgen::geometry::texture::{inverse_render, render, GrazingFilter};
use texgen::geometry::{primitives, Mesh};
use texgen::guidance::{cfg_combine, DenoiseOutput};
use texgen::pipeline::{
    blend_latent, build_backend, run_with, texture_hash, BackendKind, Engine, RunConfig, ViewRig,
};
use texgen::geometry::texture::Mask;
use texgen::schedule::SamplerConfig;
use texgen::{BackendError, Error};

fn small(kind: BackendKind, codec: CodecSpec) -> RunConfig {
    let mut cfg = RunConfig {
        prompt: "weathered bronze".into(),
        sampler: SamplerConfig {
            steps: 6,
            ..SamplerConfig::default()
        },
        codec,
        rig: ViewRig {
            n_azimuth: 4,
            add_top: true,
            ..ViewRig::default()
        },
        tex_size: 32,
        img_size: 32,
        ..RunConfig::default()
    };
    cfg.backend.kind = kind;
    cfg
}

fn engine(cfg: &RunConfig, mesh: Mesh) -> Engine {
    let (d, c) = build_backend(cfg).unwrap();
    Engine::new(cfg.clone(), mesh, d, c).unwrap()
}

#[test]
fn minimal_run_is_one_decoded_denoise_baked() {
    let mut cfg = small(BackendKind::Gaussian, CodecSpec::identity());
    cfg.sampler.steps = 1;
    cfg.rig = ViewRig {
        n_azimuth: 1,
        add_top: false,
        ..ViewRig::default()
    };
    let e = engine(&cfg, primitives::cube());
    let out = e.run().unwrap();

    let slot = &e.views()[0];
    let x_t = e.init_state().latents.remove(0);
    let sched = e.schedule();
    let req = DenoiseRequest::new(
        x_t.clone(),
        1,
        sched.timestep(1).unwrap(),
        sched.alpha(1).unwrap(),
        PromptCondition::text(cfg.prompt.clone()),
    )
    .with_depth(slot.depth.clone());
    let pred = e.denoiser().denoise(&req).unwrap();
    let eps = cfg_combine(&pred, cfg.omega).unwrap();
    let x0 = sched.predict_x0(&x_t, &eps, 1).unwrap();
    let img = e.codec().decode(&x0).unwrap().clamped();
    let mut tex = e.empty_texture();
    let filter = GrazingFilter::from_rasters(0.2, 32 * 32, [&slot.raster]);
    inverse_render(&img, &slot.raster, &mut tex, 0, Some(&filter)).unwrap();

    assert_eq!(out.texture, tex);
    assert_eq!(out.latents, vec![x0]);
    assert!(tex.covered_count() > 0);
}

#[test]
fn single_view_bakes_its_own_observation_every_step() {
    let mut cfg = small(BackendKind::Toyattn, CodecSpec::toy(2, 4));
    cfg.rig = ViewRig {
        n_azimuth: 1,
        add_top: false,
        ..ViewRig::default()
    };
    let e = engine(&cfg, primitives::cube());
    let mut state = e.init_state();
    while state.step > 0 {
        let t = state.step;
        let x_t = state.latents[0].clone();
        e.agvs_step(&mut state).unwrap();
        assert_eq!(state.latents[0], x_t, "the reference view is never blended");
        let pred = state.outputs[0].clone().unwrap();
        let x0 = e.schedule().predict_x0(&x_t, &cfg_combine(&pred, cfg.omega).unwrap(), t).unwrap();
        let img = e.codec().decode(&x0).unwrap().clamped();
        let slot = &e.views()[0];
        let filter = GrazingFilter::from_rasters(0.2, 32 * 32, [&slot.raster]);
        let mut tex = e.empty_texture();
        inverse_render(&img, &slot.raster, &mut tex, 0, Some(&filter)).unwrap();
        assert_eq!(state.texture, tex, "step {t}");
        e.t2gr_step(&mut state).unwrap();
    }
}

#[test]
fn runs_are_deterministic_and_seeded() {
    for kind in [BackendKind::Gaussian, BackendKind::Toyattn] {
        let cfg = small(kind, CodecSpec::toy(2, 4));
        let a = engine(&cfg, primitives::cube()).run().unwrap();
        let b = engine(&cfg, primitives::cube()).run().unwrap();
        assert_eq!(texture_hash(&a.texture), texture_hash(&b.texture));
        assert_eq!(a.latents, b.latents);

        let mut other = cfg.clone();
        other.sampler.seed += 1;
        let c = engine(&other, primitives::cube()).run().unwrap();
        assert_ne!(texture_hash(&a.texture), texture_hash(&c.texture));
    }
}

#[test]
fn fully_covered_texture_replaces_the_whole_latent() {
    let cfg = small(BackendKind::Gaussian, CodecSpec::identity());
    let e = engine(&cfg, primitives::cube());
    let mut tex = e.empty_texture();
    for (i, (t, w)) in tex.texels.iter_mut().zip(tex.writer.iter_mut()).enumerate() {
        *t = [(i % 7) as f64 / 7.0, (i % 5) as f64 / 5.0, (i % 3) as f64 / 3.0];
        *w = Some(0);
    }
    let state = e.init_state();
    let sched = e.schedule();
    for (k, slot) in e.views().iter().enumerate().skip(1) {
        let g = e.encoded_render(&tex, slot).unwrap();
        let eps = texgen::LatentImage::from_fn(32, 32, 3, |y, x, c| ((y * 31 + x * 7 + c) % 11) as f64 / 5.0 - 1.0);
        let mask = Mask::filled(32, 32, false);
        for t in [1, 3, 6] {
            let blended = blend_latent(&state.latents[k], &g, &eps, &mask, sched, t).unwrap();
            assert_eq!(blended, sched.add_noise(&g, &eps, t).unwrap());
            let x0 = sched.predict_x0(&blended, &eps, t).unwrap();
            assert!(x0.max_abs_diff(&g) < 1e-9);
            let decoded = e.codec().decode(&x0).unwrap();
            let rendered = render(&tex, &slot.raster, cfg.background);
            let diff = decoded
                .data
                .iter()
                .flatten()
                .zip(rendered.data.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-9);
        }
    }
}

#[test]
fn text_only_weights_give_independent_cfg_ddim() {
    let mut cfg = small(BackendKind::Toyattn, CodecSpec::toy(2, 4));
    cfg.ablation.omega2_zero = true;
    let e = engine(&cfg, primitives::cube());
    let mut state = e.init_state();
    while state.step > 0 {
        let t = state.step;
        e.agvs_step(&mut state).unwrap();
        let sched = e.schedule();
        let expected: Vec<_> = state
            .latents
            .iter()
            .zip(&state.outputs)
            .map(|(x, out)| {
                let eps = cfg_combine(out.as_ref().unwrap(), cfg.omega).unwrap();
                let x0 = sched.predict_x0(x, &eps, t).unwrap();
                sched.ddim_step(&x0, &eps, t, t - 1).unwrap()
            })
            .collect();
        e.t2gr_step(&mut state).unwrap();
        assert_eq!(state.latents, expected, "step {t}");
    }
}

#[test]
fn texture_only_weights_pin_views_to_the_texture() {
    let mut cfg = small(BackendKind::Gaussian, CodecSpec::identity());
    cfg.ablation.omega1_zero = true;
    let e = engine(&cfg, primitives::cube());
    let out = e.run().unwrap();
    for (slot, latent) in e.views().iter().zip(&out.latents) {
        let g = e.encoded_render(&out.texture, slot).unwrap();
        let diff = latent.max_abs_diff(&g);
        assert!(diff < 1e-6, "view {}: {diff:.3e}", slot.index);
    }
}

#[test]
fn coverage_grows_within_a_sweep_and_repeats_across_steps() {
    let cfg = small(BackendKind::Gaussian, CodecSpec::toy(2, 4));
    let e = engine(&cfg, primitives::uv_sphere(16, 32, true));
    let mut tex = e.empty_texture();
    let mut last = 0;
    for slot in e.views() {
        let img = texgen::geometry::RgbImage::filled(32, 32, [1.0; 3]);
        inverse_render(&img, &slot.raster, &mut tex, slot.index as u16, None).unwrap();
        assert!(tex.covered_count() >= last);
        last = tex.covered_count();
    }
    let out = e.run().unwrap();
    let first = out.steps[0].coverage;
    assert!(first > 0.5);
    assert!(out.steps.iter().all(|s| s.coverage == first));
    assert_eq!(out.steps.iter().map(|s| s.t).collect::<Vec<_>>(), (1..=6).rev().collect::<Vec<_>>());
}

#[test]
fn reference_attention_is_used_unless_disabled() {
    let cfg = small(BackendKind::Toyattn, CodecSpec::toy(2, 4));
    assert!(engine(&cfg, primitives::cube()).run().unwrap().attention_used);
    let mut off = cfg.clone();
    off.ablation.no_attention = true;
    assert!(!engine(&off, primitives::cube()).run().unwrap().attention_used);
    let gaussian = small(BackendKind::Gaussian, CodecSpec::toy(2, 4));
    assert!(!engine(&gaussian, primitives::cube()).run().unwrap().attention_used);
}

struct FailOnCall {
    inner: Arc<dyn Denoiser>,
    calls: AtomicUsize,
    fail_at: usize,
}

impl Denoiser for FailOnCall {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn supports_kv(&self) -> bool {
        self.inner.supports_kv()
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseOutput, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == self.fail_at {
            return Err(BackendError::Unavailable("injected".into()));
        }
        self.inner.denoise(req)
    }
}

#[test]
fn failure_flushes_a_failed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(BackendKind::Toyattn, CodecSpec::toy(2, 4));
    cfg.out_dir = Some(dir.path().to_path_buf());
    let (d, codec) = build_backend(&cfg).unwrap();
    // 5 views per step; call 7 is the third view of step 5.
    let flaky = Arc::new(FailOnCall {
        inner: d,
        calls: AtomicUsize::new(0),
        fail_at: 7,
    });
    let err = run_with(&cfg, primitives::cube(), flaky, codec).unwrap_err();
    match &err {
        Error::AtStep { t, .. } => assert_eq!(*t, 5),
        other => panic!("expected step context, got {other}"),
    }
    assert!(matches!(err.root(), Error::Backend(BackendError::Unavailable(_))));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "FAILED");
    assert!(manifest["error"].as_str().unwrap().contains("injected"));
    assert_eq!(manifest["steps"].as_array().unwrap().len(), 1);
    assert!(manifest["final_hashes"].is_null());
    assert!(dir.path().join("texture.png").exists());
}

#[test]
fn successful_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(BackendKind::Gaussian, CodecSpec::toy(2, 4));
    cfg.sampler.steps = 2;
    cfg.out_dir = Some(dir.path().to_path_buf());
    cfg.debug_renders = true;
    let (d, codec) = build_backend(&cfg).unwrap();
    let result = run_with(&cfg, primitives::cube(), d, codec).unwrap();
    for name in ["texture.png", "coverage.png", "manifest.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let debug = std::fs::read_dir(dir.path().join("debug")).unwrap().count();
    assert_eq!(debug, 2 * 5);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["seed"], cfg.sampler.seed);
    assert_eq!(
        manifest["final_hashes"]["texture_sha256"],
        texture_hash(&result.output.texture)
    );
    let tex = texgen::imageio::load_texture(dir.path().join("texture.png"), [0.5; 3]).unwrap();
    assert_eq!((tex.width, tex.height), (32, 32));
}

#[test]
fn mismatched_codec_instance_is_rejected() {
    let cfg = small(BackendKind::Gaussian, CodecSpec::toy(2, 4));
    let (d, _) = build_backend(&cfg).unwrap();
    let other: Arc<dyn LatentCodec> = texgen::codec::local_codec(&CodecSpec::identity()).unwrap();
    assert!(Engine::new(cfg, primitives::cube(), d, other).is_err());
}

/// Regression pin for the default toy profile on the cube fixture.
#[test]
fn toy_profile_texture_hash_is_pinned() {
    let cfg = RunConfig {
        prompt: "a wooden crate".into(),
        ..RunConfig::default()
    };
    let e = engine(&cfg, primitives::cube());
    let hash = texture_hash(&e.run().unwrap().texture);
    assert_eq!(hash, "4990ce03011abcdb855282a2b0abc492f3482c0074a186437288fd04cd62dff9");
}
