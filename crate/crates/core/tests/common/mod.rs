//! Brute-force references shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texgen::geometry::math::{cross, dot, sub, Vec2, Vec3};
use texgen::geometry::{rasterize, CameraPose, Mesh};

pub struct Hit {
    pub face: usize,
    pub depth: f64,
    pub uv: Vec2,
    /// Smallest barycentric coordinate; near or below zero means the ray grazes an edge.
    pub margin: f64,
}

/// Brute-force nearest front-facing hit along the ray through pixel centre `(px, py)`.
pub fn cast(mesh: &Mesh, pose: &CameraPose, px: usize, py: usize) -> (Option<Hit>, f64) {
    let frame = pose.frame();
    let origin = frame.position;
    let dir = frame.ray_direction(px as f64 + 0.5, py as f64 + 0.5);
    let mut best: Option<Hit> = None;
    let mut runner_up = f64::INFINITY;
    for (fi, face) in mesh.faces.iter().enumerate() {
        let [a, b, c] = face.map(|i| mesh.positions[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        if dot(n, sub(origin, a)) <= 0.0 {
            continue;
        }
        let e1 = sub(b, a);
        let e2 = sub(c, a);
        let p = cross(dir, e2);
        let det = dot(e1, p);
        if det.abs() < 1e-14 {
            continue;
        }
        let s = sub(origin, a);
        let u = dot(s, p) / det;
        let q = cross(s, e1);
        let v = dot(dir, q) / det;
        let t = dot(e2, q) / det;
        let w = 1.0 - u - v;
        if u < -1e-9 || v < -1e-9 || w < -1e-9 || t <= 0.0 {
            continue;
        }
        let depth = t * dot(dir, frame.forward);
        let uvs = mesh.face_uvs[fi];
        let uv = [
            w * uvs[0][0] + u * uvs[1][0] + v * uvs[2][0],
            w * uvs[0][1] + u * uvs[1][1] + v * uvs[2][1],
        ];
        let hit = Hit {
            face: fi,
            depth,
            uv,
            margin: u.min(v).min(w),
        };
        match &best {
            Some(h) if h.depth <= depth => runner_up = runner_up.min(depth),
            _ => {
                if let Some(h) = &best {
                    runner_up = runner_up.min(h.depth);
                }
                best = Some(hit);
            }
        }
    }
    (best, runner_up)
}

pub fn expected_texel(uv: Vec2, w: usize, h: usize) -> Option<u32> {
    let x = uv[0] * w as f64;
    let y = (1.0 - uv[1]) * h as f64;
    let near_line = |v: f64| (v - v.round()).abs() < 1e-7;
    if near_line(x) || near_line(y) {
        return None;
    }
    let col = (x.floor() as i64).clamp(0, w as i64 - 1) as usize;
    let row = (y.floor() as i64).clamp(0, h as i64 - 1) as usize;
    Some((row * w + col) as u32)
}

/// Random single-sided triangles near the origin, many overlapping in screen and depth.
pub fn random_soup(seed: u64, n: usize) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    let mut face_uvs = Vec::new();
    let cells = (n as f64).sqrt().ceil() as usize;
    for k in 0..n {
        let centre: Vec3 = [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)];
        let base = positions.len() as u32;
        for _ in 0..3 {
            positions.push([
                centre[0] + rng.gen_range(-0.5..0.5),
                centre[1] + rng.gen_range(-0.5..0.5),
                centre[2] + rng.gen_range(-0.5..0.5),
            ]);
        }
        faces.push([base, base + 1, base + 2]);
        let (cx, cy) = ((k % cells) as f64 / cells as f64, (k / cells) as f64 / cells as f64);
        let s = 0.9 / cells as f64;
        face_uvs.push([[cx, cy], [cx + s, cy], [cx, cy + s]]);
    }
    Mesh::new(positions, faces, face_uvs).unwrap()
}

pub fn check_against_raycast(mesh: &Mesh, pose: &CameraPose, tex: usize) -> (usize, usize) {
    let raster = rasterize(mesh, pose, tex, tex);
    let (w, h) = (pose.intrinsics.width, pose.intrinsics.height);
    let (mut compared, mut skipped) = (0, 0);
    for py in 0..h {
        for px in 0..w {
            let (hit, runner_up) = cast(mesh, pose, px, py);
            let got = raster.get(px, py);
            match hit {
                None => {
                    assert!(got.is_none(), "pixel ({px},{py}) covered by raster but missed by ray");
                }
                Some(hit) if hit.margin < 1e-9 || runner_up - hit.depth < 1e-9 => skipped += 1,
                Some(hit) => {
                    let f = got.unwrap_or_else(|| panic!("pixel ({px},{py}) hit face {} but raster is empty", hit.face));
                    assert_eq!(f.face as usize, hit.face, "pixel ({px},{py})");
                    assert!((f.depth - hit.depth).abs() < 1e-5, "pixel ({px},{py}): {} vs {}", f.depth, hit.depth);
                    match expected_texel(hit.uv, tex, tex) {
                        Some(texel) => {
                            assert_eq!(f.texel, texel, "pixel ({px},{py})");
                            compared += 1;
                        }
                        None => skipped += 1,
                    }
                }
            }
        }
    }
    (compared, skipped)
}

/// Pixels whose colour changes under render, inverse render into an empty
/// texture, render again. Only valid pixels are compared.
pub fn render_round_trip_mismatches(mesh: &Mesh, pose: &CameraPose, tex: usize, seed: u64) -> (usize, usize) {
    use texgen::geometry::texture::{inverse_render, render};
    use texgen::geometry::TextureMap;

    let raster = rasterize(mesh, pose, tex, tex);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = TextureMap::new(tex, tex, [0.5; 3]);
    for (t, w) in source.texels.iter_mut().zip(source.writer.iter_mut()) {
        *t = [rng.gen(), rng.gen(), rng.gen()];
        *w = Some(0);
    }
    let first = render(&source, &raster, [0.0; 3]);
    let mut rebuilt = TextureMap::new(tex, tex, [0.5; 3]);
    inverse_render(&first, &raster, &mut rebuilt, 0, None).unwrap();
    let second = render(&rebuilt, &raster, [0.0; 3]);
    let mismatches = raster
        .fragments
        .iter()
        .enumerate()
        .filter(|(i, f)| f.is_some() && first.data[*i] != second.data[*i])
        .count();
    (mismatches, raster.valid_count())
}
