#ifndef TEXGEN_H
#define TEXGEN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TexgenBackend {
  TEXGEN_BACKEND_GAUSSIAN = 0,
  TEXGEN_BACKEND_TOY_ATTENTION = 1,
  TEXGEN_BACKEND_REMOTE = 2,
} TexgenBackend;

typedef enum TexgenStatus {
  TEXGEN_STATUS_OK = 0,
  /*
   A required pointer was null or a string was not UTF-8.
   */
  TEXGEN_STATUS_INVALID_ARGUMENT = 1,
  /*
   The configuration failed validation.
   */
  TEXGEN_STATUS_CONFIG = 2,
  /*
   The mesh could not be loaded or is unusable.
   */
  TEXGEN_STATUS_MESH = 3,
  /*
   The denoiser backend is unreachable, timed out or misbehaved.
   */
  TEXGEN_STATUS_BACKEND = 4,
  /*
   The run failed for any other reason.
   */
  TEXGEN_STATUS_RUN = 5,
  TEXGEN_STATUS_IO = 6,
  /*
   A Rust panic was caught at the boundary.
   */
  TEXGEN_STATUS_PANIC = 7,
} TexgenStatus;

typedef struct TexgenConfig TexgenConfig;

typedef struct TexgenMesh TexgenMesh;

typedef struct TexgenTexture TexgenTexture;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *texgen_version(void);

/*
 Message for the last failed call on this thread, or null. Valid until the
 next call on the same thread.
 */
const char *texgen_last_error(void);

/*
 Load a Wavefront OBJ mesh with a UV atlas.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TexgenStatus texgen_mesh_load(const char *path, struct TexgenMesh **out);

/*
 Built-in unit cube with one UV island per face.

 # Safety
 `out` must be a valid pointer.
 */
enum TexgenStatus texgen_mesh_cube(struct TexgenMesh **out);

/*
 Number of triangles, or 0 for a null mesh.

 # Safety
 `mesh` must be null or a live mesh handle.
 */
size_t texgen_mesh_face_count(const struct TexgenMesh *mesh);

/*
 # Safety
 `mesh` must be null or a handle from this library, freed at most once.
 */
void texgen_mesh_free(struct TexgenMesh *mesh);

/*
 Configuration with the in-process toy profile defaults.

 # Safety
 `out` must be a valid pointer.
 */
enum TexgenStatus texgen_config_new(struct TexgenConfig **out);

/*
 Configuration with the remote-backend defaults for `endpoint`.

 # Safety
 `endpoint` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TexgenStatus texgen_config_new_remote(const char *endpoint, struct TexgenConfig **out);

/*
 # Safety
 `config` must be null or a handle from this library, freed at most once.
 */
void texgen_config_free(struct TexgenConfig *config);

/*
 # Safety
 `config` must be a live handle and `prompt` a NUL-terminated string.
 */
enum TexgenStatus texgen_config_set_prompt(struct TexgenConfig *config, const char *prompt);

/*
 # Safety
 `config` must be a live handle.
 */
enum TexgenStatus texgen_config_set_steps(struct TexgenConfig *config, size_t steps);

/*
 # Safety
 `config` must be a live handle.
 */
enum TexgenStatus texgen_config_set_seed(struct TexgenConfig *config, uint64_t seed);

/*
 # Safety
 `config` must be a live handle.
 */
enum TexgenStatus texgen_config_set_omega(struct TexgenConfig *config, double omega);

/*
 Equatorial view count and whether to add the top view.

 # Safety
 `config` must be a live handle.
 */
enum TexgenStatus texgen_config_set_views(struct TexgenConfig *config, size_t views, bool top);

/*
 # Safety
 `config` must be a live handle.
 */
enum TexgenStatus texgen_config_set_sizes(struct TexgenConfig *config,
                                          size_t tex_size,
                                          size_t img_size);

/*
 Select an in-process backend. Use `texgen_config_new_remote` for a server.

 # Safety
 `config` must be a live handle.
 */
enum TexgenStatus texgen_config_set_backend(struct TexgenConfig *config,
                                            enum TexgenBackend backend);

/*
 # Safety
 `config` must be a live handle.
 */
enum TexgenStatus texgen_config_set_ablation(struct TexgenConfig *config,
                                             bool no_attention,
                                             bool omega1_zero,
                                             bool omega2_zero);

/*
 Directory for texture, coverage and manifest files; null disables output.

 # Safety
 `config` must be a live handle; `dir` null or a NUL-terminated string.
 */
enum TexgenStatus texgen_config_set_out_dir(struct TexgenConfig *config, const char *dir);

/*
 # Safety
 `config` must be a live handle.
 */
enum TexgenStatus texgen_config_validate(const struct TexgenConfig *config);

/*
 Run the full sampler on `mesh`.

 # Safety
 `config` and `mesh` must be live handles and `out` a valid pointer.
 */
enum TexgenStatus texgen_generate(const struct TexgenConfig *config,
                                  const struct TexgenMesh *mesh,
                                  struct TexgenTexture **out);

/*
 # Safety
 `texture` must be null or a live handle.
 */
size_t texgen_texture_width(const struct TexgenTexture *texture);

/*
 # Safety
 `texture` must be null or a live handle.
 */
size_t texgen_texture_height(const struct TexgenTexture *texture);

/*
 Fraction of atlas texels written by some view.

 # Safety
 `texture` must be null or a live handle.
 */
double texgen_texture_coverage(const struct TexgenTexture *texture);

/*
 Hex SHA-256 of the texture, owned by the handle.

 # Safety
 `texture` must be null or a live handle.
 */
const char *texgen_texture_hash(const struct TexgenTexture *texture);

/*
 Copy row-major RGB texels (row 0 at v = 1) into `buf`, which must hold
 `3 * width * height` floats.

 # Safety
 `texture` must be a live handle and `buf` valid for `len` writes.
 */
enum TexgenStatus texgen_texture_copy_rgb(const struct TexgenTexture *texture,
                                          float *buf,
                                          size_t len);

/*
 Write the texture as an 8-bit PNG.

 # Safety
 `texture` must be a live handle and `path` a NUL-terminated string.
 */
enum TexgenStatus texgen_texture_save_png(const struct TexgenTexture *texture, const char *path);

/*
 # Safety
 `texture` must be null or a handle from this library, freed at most once.
 */
void texgen_texture_free(struct TexgenTexture *texture);

/*
 Texture guidance weight at step `t` of a `total_steps` run.
 */
double texgen_omega2(size_t t, size_t total_steps, double omega);

/*
 Classifier-free combination of `n` prediction pairs into `out`.

 # Safety
 `cond`, `uncond` and `out` must each be valid for `n` elements.
 */
enum TexgenStatus texgen_cfg_combine(const double *cond,
                                     const double *uncond,
                                     size_t n,
                                     double omega,
                                     double *out);

/*
 Stable 32-byte digest of a prompt; null selects the null prompt.

 # Safety
 `prompt` must be null or a NUL-terminated string; `out` valid for 32 bytes.
 */
enum TexgenStatus texgen_prompt_digest(const char *prompt, uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEXGEN_H */
