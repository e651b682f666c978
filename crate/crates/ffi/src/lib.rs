//! C ABI for the texgen engine.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_load` function and released by the matching `*_free`. Calls
//! return a [`TexgenStatus`]; on failure `texgen_last_error` describes the
//! most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use texgen::denoiser::PromptCondition;
use texgen::geometry::{load_mesh, primitives, Mesh, TextureMap};
use texgen::guidance::{cfg_combine, omega2_schedule, DenoiseOutput};
use texgen::pipeline::{self, BackendKind, RunConfig};
use texgen::{BackendError, Error, LatentImage};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TexgenStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    /// The configuration failed validation.
    Config = 2,
    /// The mesh could not be loaded or is unusable.
    Mesh = 3,
    /// The denoiser backend is unreachable, timed out or misbehaved.
    Backend = 4,
    /// The run failed for any other reason.
    Run = 5,
    Io = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TexgenBackend {
    Gaussian = 0,
    ToyAttention = 1,
    Remote = 2,
}

pub struct TexgenMesh {
    mesh: Mesh,
}

pub struct TexgenConfig {
    cfg: RunConfig,
}

pub struct TexgenTexture {
    texture: TextureMap,
    hash: CString,
    coverage: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_for(err: &Error) -> TexgenStatus {
    match err.root() {
        Error::Config { .. } => TexgenStatus::Config,
        Error::MissingUv | Error::Mesh(_) | Error::Parse { .. } => TexgenStatus::Mesh,
        Error::Backend(_) => TexgenStatus::Backend,
        Error::Io(_) => TexgenStatus::Io,
        _ => TexgenStatus::Run,
    }
}

struct Fail(TexgenStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_for(&e), e.to_string())
    }
}

impl From<BackendError> for Fail {
    fn from(e: BackendError) -> Self {
        Fail(TexgenStatus::Backend, e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(TexgenStatus::InvalidArgument, msg.to_string())
}

/// Run `body` behind a panic guard and record its error.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> TexgenStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TexgenStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TexgenStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn texgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn texgen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Load a Wavefront OBJ mesh with a UV atlas.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn texgen_mesh_load(path: *const c_char, out: *mut *mut TexgenMesh) -> TexgenStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let mesh = load_mesh(path)?;
        put(out, TexgenMesh { mesh })
    })
}

/// Built-in unit cube with one UV island per face.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn texgen_mesh_cube(out: *mut *mut TexgenMesh) -> TexgenStatus {
    guard(|| put(out, TexgenMesh { mesh: primitives::cube() }))
}

/// Number of triangles, or 0 for a null mesh.
///
/// # Safety
/// `mesh` must be null or a live mesh handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_mesh_face_count(mesh: *const TexgenMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.faces.len())
}

/// # Safety
/// `mesh` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn texgen_mesh_free(mesh: *mut TexgenMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Configuration with the in-process toy profile defaults.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_new(out: *mut *mut TexgenConfig) -> TexgenStatus {
    guard(|| put(out, TexgenConfig { cfg: RunConfig::default() }))
}

/// Configuration with the remote-backend defaults for `endpoint`.
///
/// # Safety
/// `endpoint` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_new_remote(endpoint: *const c_char, out: *mut *mut TexgenConfig) -> TexgenStatus {
    guard(|| {
        let endpoint = str_arg(endpoint, "endpoint")?;
        put(out, TexgenConfig { cfg: RunConfig::remote_profile(endpoint) })
    })
}

/// # Safety
/// `config` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_free(config: *mut TexgenConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

unsafe fn with_config(config: *mut TexgenConfig, f: impl FnOnce(&mut RunConfig) -> Result<(), Fail>) -> TexgenStatus {
    guard(|| f(&mut mut_arg(config, "config")?.cfg))
}

/// # Safety
/// `config` must be a live handle and `prompt` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_prompt(config: *mut TexgenConfig, prompt: *const c_char) -> TexgenStatus {
    with_config(config, |c| {
        c.prompt = str_arg(prompt, "prompt")?.to_string();
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_steps(config: *mut TexgenConfig, steps: usize) -> TexgenStatus {
    with_config(config, |c| {
        c.sampler.steps = steps;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_seed(config: *mut TexgenConfig, seed: u64) -> TexgenStatus {
    with_config(config, |c| {
        c.sampler.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_omega(config: *mut TexgenConfig, omega: f64) -> TexgenStatus {
    with_config(config, |c| {
        c.omega = omega;
        Ok(())
    })
}

/// Equatorial view count and whether to add the top view.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_views(config: *mut TexgenConfig, views: usize, top: bool) -> TexgenStatus {
    with_config(config, |c| {
        c.rig.n_azimuth = views;
        c.rig.add_top = top;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_sizes(config: *mut TexgenConfig, tex_size: usize, img_size: usize) -> TexgenStatus {
    with_config(config, |c| {
        c.tex_size = tex_size;
        c.img_size = img_size;
        Ok(())
    })
}

/// Select an in-process backend. Use `texgen_config_new_remote` for a server.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_backend(config: *mut TexgenConfig, backend: TexgenBackend) -> TexgenStatus {
    with_config(config, |c| {
        c.backend.kind = match backend {
            TexgenBackend::Gaussian => BackendKind::Gaussian,
            TexgenBackend::ToyAttention => BackendKind::Toyattn,
            TexgenBackend::Remote => BackendKind::Remote,
        };
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_ablation(
    config: *mut TexgenConfig,
    no_attention: bool,
    omega1_zero: bool,
    omega2_zero: bool,
) -> TexgenStatus {
    with_config(config, |c| {
        c.ablation.no_attention = no_attention;
        c.ablation.omega1_zero = omega1_zero;
        c.ablation.omega2_zero = omega2_zero;
        Ok(())
    })
}

/// Directory for texture, coverage and manifest files; null disables output.
///
/// # Safety
/// `config` must be a live handle; `dir` null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_set_out_dir(config: *mut TexgenConfig, dir: *const c_char) -> TexgenStatus {
    with_config(config, |c| {
        c.out_dir = if dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(dir, "dir")?))
        };
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_config_validate(config: *const TexgenConfig) -> TexgenStatus {
    guard(|| Ok(ref_arg(config, "config")?.cfg.validate()?))
}

/// Run the full sampler on `mesh`.
///
/// # Safety
/// `config` and `mesh` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn texgen_generate(
    config: *const TexgenConfig,
    mesh: *const TexgenMesh,
    out: *mut *mut TexgenTexture,
) -> TexgenStatus {
    guard(|| {
        let cfg = &ref_arg(config, "config")?.cfg;
        let mesh = ref_arg(mesh, "mesh")?.mesh.clone();
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        cfg.validate()?;
        let (denoiser, codec) = pipeline::build_backend(cfg)?;
        denoiser.health()?;
        let result = pipeline::run_with(cfg, mesh, denoiser, codec)?;
        let hashes = result.manifest.final_hashes.as_ref();
        let hash = hashes.map(|h| h.texture_sha256.clone()).unwrap_or_default();
        let coverage = hashes.map_or(0.0, |h| h.coverage);
        put(
            out,
            TexgenTexture {
                texture: result.output.texture,
                hash: CString::new(hash).expect("hex digest has no NUL"),
                coverage,
            },
        )
    })
}

/// # Safety
/// `texture` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_texture_width(texture: *const TexgenTexture) -> usize {
    texture.as_ref().map_or(0, |t| t.texture.width)
}

/// # Safety
/// `texture` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_texture_height(texture: *const TexgenTexture) -> usize {
    texture.as_ref().map_or(0, |t| t.texture.height)
}

/// Fraction of atlas texels written by some view.
///
/// # Safety
/// `texture` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_texture_coverage(texture: *const TexgenTexture) -> f64 {
    texture.as_ref().map_or(0.0, |t| t.coverage)
}

/// Hex SHA-256 of the texture, owned by the handle.
///
/// # Safety
/// `texture` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn texgen_texture_hash(texture: *const TexgenTexture) -> *const c_char {
    texture.as_ref().map_or(ptr::null(), |t| t.hash.as_ptr())
}

/// Copy row-major RGB texels (row 0 at v = 1) into `buf`, which must hold
/// `3 * width * height` floats.
///
/// # Safety
/// `texture` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn texgen_texture_copy_rgb(texture: *const TexgenTexture, buf: *mut f32, len: usize) -> TexgenStatus {
    guard(|| {
        let t = &ref_arg(texture, "texture")?.texture;
        let need = 3 * t.width * t.height;
        if buf.is_null() || len < need {
            return Err(invalid(&format!("buffer must hold {need} floats")));
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for (dst, src) in out.chunks_exact_mut(3).zip(&t.texels) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s as f32;
            }
        }
        Ok(())
    })
}

/// Write the texture as an 8-bit PNG.
///
/// # Safety
/// `texture` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn texgen_texture_save_png(texture: *const TexgenTexture, path: *const c_char) -> TexgenStatus {
    guard(|| {
        let t = &ref_arg(texture, "texture")?.texture;
        let path = str_arg(path, "path")?;
        Ok(texgen::imageio::save_rgb(&t.as_image(), path)?)
    })
}

/// # Safety
/// `texture` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn texgen_texture_free(texture: *mut TexgenTexture) {
    if !texture.is_null() {
        drop(Box::from_raw(texture));
    }
}

/// Texture guidance weight at step `t` of a `total_steps` run.
#[no_mangle]
pub extern "C" fn texgen_omega2(t: usize, total_steps: usize, omega: f64) -> f64 {
    omega2_schedule(t, total_steps, omega)
}

/// Classifier-free combination of `n` prediction pairs into `out`.
///
/// # Safety
/// `cond`, `uncond` and `out` must each be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn texgen_cfg_combine(
    cond: *const f64,
    uncond: *const f64,
    n: usize,
    omega: f64,
    out: *mut f64,
) -> TexgenStatus {
    guard(|| {
        if cond.is_null() || uncond.is_null() || out.is_null() {
            return Err(invalid("null buffer"));
        }
        let vec = |p: *const f64| LatentImage::from_vec(1, 1, n, std::slice::from_raw_parts(p, n).to_vec());
        let pair = DenoiseOutput::new(vec(cond)?, vec(uncond)?)?;
        let eps = cfg_combine(&pair, omega)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(eps.as_slice());
        Ok(())
    })
}

/// Stable 32-byte digest of a prompt; null selects the null prompt.
///
/// # Safety
/// `prompt` must be null or a NUL-terminated string; `out` valid for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn texgen_prompt_digest(prompt: *const c_char, out: *mut u8) -> TexgenStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output buffer is null"));
        }
        let cond = if prompt.is_null() {
            PromptCondition::null()
        } else {
            PromptCondition::text(str_arg(prompt, "prompt")?)
        };
        ptr::copy_nonoverlapping(cond.digest().as_ptr(), out, 32);
        Ok(())
    })
}
