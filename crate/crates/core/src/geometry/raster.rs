//! Z-buffered triangle rasterization into a per-pixel texel-ID buffer.

use super::camera::CameraPose;
use super::math::{dot, normalize, orient2d, sub, Vec2};
use super::mesh::Mesh;

/// Faces with any vertex closer than this to the camera plane are skipped.
pub const NEAR_PLANE: f64 = 1e-3;

/// Geometry sample stored for a covered pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    /// Row-major texel index in the texture the raster was built for.
    pub texel: u32,
    /// Distance along the camera's forward axis.
    pub depth: f64,
    /// `|normal · view direction|`, in `[0, 1]`.
    pub cos_angle: f64,
    pub face: u32,
}

/// Per-pixel geometry buffer from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMap {
    pub width: usize,
    pub height: usize,
    pub tex_width: usize,
    pub tex_height: usize,
    pub fragments: Vec<Option<Fragment>>,
}

impl RasterMap {
    pub fn get(&self, x: usize, y: usize) -> Option<&Fragment> {
        self.fragments[y * self.width + x].as_ref()
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.fragments[pixel].is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_some()).count()
    }

    /// Depth condition image: 1 at the nearest surface, falling linearly to
    /// 0.1 at the farthest; background is 0.
    pub fn depth_image(&self) -> DepthImage {
        let (lo, hi) = self
            .fragments
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
                (lo.min(f.depth), hi.max(f.depth))
            });
        let span = (hi - lo).max(1e-12);
        DepthImage {
            width: self.width,
            height: self.height,
            data: self
                .fragments
                .iter()
                .map(|f| f.map_or(0.0, |f| 1.0 - 0.9 * (f.depth - lo) / span))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Map a UV coordinate to a row-major texel index (row 0 at v = 1).
pub fn texel_index(uv: Vec2, tex_width: usize, tex_height: usize) -> u32 {
    let col = ((uv[0] * tex_width as f64).floor() as i64).clamp(0, tex_width as i64 - 1) as usize;
    let row = (((1.0 - uv[1]) * tex_height as f64).floor() as i64).clamp(0, tex_height as i64 - 1) as usize;
    (row * tex_width + col) as u32
}

/// Rasterize front-facing triangles of `mesh` seen from `pose`.
///
/// Pixel centres sit at half-integer coordinates and are covered when all
/// three edge functions are non-negative. Depth and UV are interpolated
/// perspective-correctly. On equal depth the lower face index wins.
pub fn rasterize(mesh: &Mesh, pose: &CameraPose, tex_width: usize, tex_height: usize) -> RasterMap {
    let frame = pose.frame();
    let (w, h) = (pose.intrinsics.width, pose.intrinsics.height);
    let mut fragments: Vec<Option<Fragment>> = vec![None; w * h];
    let mut zbuf = vec![f64::INFINITY; w * h];

    for (fi, face) in mesh.faces.iter().enumerate() {
        let world = face.map(|i| mesh.positions[i as usize]);
        let normal = mesh.face_area_normal(face);
        // Back-face culling against the camera position.
        if dot(normal, sub(frame.position, world[0])) <= 0.0 {
            continue;
        }
        let view = world.map(|p| frame.to_view(p));
        if view.iter().any(|v| v[2] <= NEAR_PLANE) {
            continue;
        }
        let screen = view.map(|v| frame.to_pixel(v));
        let area = orient2d(screen[0], screen[1], screen[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let unit_normal = normalize(normal);
        let uvs = mesh.face_uvs[fi];
        let inv_z = view.map(|v| 1.0 / v[2]);

        let xmin = screen.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let xmax = screen.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let ymin = screen.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let ymax = screen.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (xmin - 0.5).ceil().max(0.0) as usize;
        let y0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let x1 = ((xmax - 0.5).floor()).min(w as f64 - 1.0);
        let y1 = ((ymax - 0.5).floor()).min(h as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);

        for py in y0..=y1 {
            for px in x0..=x1 {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let b0 = orient2d(screen[1], screen[2], p) / area;
                let b1 = orient2d(screen[2], screen[0], p) / area;
                let b2 = orient2d(screen[0], screen[1], p) / area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let w0 = b0 * inv_z[0];
                let w1 = b1 * inv_z[1];
                let w2 = b2 * inv_z[2];
                let sum = w0 + w1 + w2;
                let depth = 1.0 / sum;
                let idx = py * w + px;
                if depth >= zbuf[idx] {
                    continue;
                }
                zbuf[idx] = depth;
                let uv = [
                    (w0 * uvs[0][0] + w1 * uvs[1][0] + w2 * uvs[2][0]) / sum,
                    (w0 * uvs[0][1] + w1 * uvs[1][1] + w2 * uvs[2][1]) / sum,
                ];
                let point = [
                    (w0 * world[0][0] + w1 * world[1][0] + w2 * world[2][0]) / sum,
                    (w0 * world[0][1] + w1 * world[1][1] + w2 * world[2][1]) / sum,
                    (w0 * world[0][2] + w1 * world[1][2] + w2 * world[2][2]) / sum,
                ];
                let to_cam = normalize(sub(frame.position, point));
                fragments[idx] = Some(Fragment {
                    texel: texel_index(uv, tex_width, tex_height),
                    depth,
                    cos_angle: dot(unit_normal, to_cam).abs().min(1.0),
                    face: fi as u32,
                });
            }
        }
    }

    RasterMap {
        width: w,
        height: h,
        tex_width,
        tex_height,
        fragments,
    }
}
