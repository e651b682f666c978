//! Procedural meshes with valid UV atlases, used as fixtures and for self-tests.

use std::f64::consts::PI;

use super::math::Vec3;
use super::mesh::Mesh;

/// Square of side `size` in the plane `z = z`, facing +Z, UVs spanning the unit square.
pub fn quad(size: f64, z: f64) -> Mesh {
    let h = size * 0.5;
    Mesh::new(
        vec![[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]],
        vec![[0, 1, 2], [0, 2, 3]],
        vec![
            [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        ],
    )
    .expect("quad fixture is valid")
}

/// Unit cube with one UV island per face laid out on a 3x2 grid.
pub fn cube() -> Mesh {
    let positions: Vec<Vec3> = vec![
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ];
    // Each face as a CCW (seen from outside) quad.
    let quads: [[u32; 4]; 6] = [
        [4, 5, 6, 7], // +Z
        [1, 0, 3, 2], // -Z
        [5, 1, 2, 6], // +X
        [0, 4, 7, 3], // -X
        [7, 6, 2, 3], // +Y
        [0, 1, 5, 4], // -Y
    ];
    let pad = 0.02;
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    for (k, q) in quads.iter().enumerate() {
        let (cx, cy) = ((k % 3) as f64 / 3.0, (k / 3) as f64 / 2.0);
        let (w, h) = (1.0 / 3.0, 0.5);
        let corner = [
            [cx + pad, cy + pad],
            [cx + w - pad, cy + pad],
            [cx + w - pad, cy + h - pad],
            [cx + pad, cy + h - pad],
        ];
        faces.push([q[0], q[1], q[2]]);
        uvs.push([corner[0], corner[1], corner[2]]);
        faces.push([q[0], q[2], q[3]]);
        uvs.push([corner[0], corner[2], corner[3]]);
    }
    Mesh::new(positions, faces, uvs).expect("cube fixture is valid")
}

/// Unit sphere around the Y axis. `equal_area` uses `v = (1 + sin(latitude)) / 2`
/// (texel area proportional to surface area); otherwise `v` is linear in latitude.
pub fn uv_sphere(stacks: usize, slices: usize, equal_area: bool) -> Mesh {
    let mut positions = Vec::new();
    let mut vcoord = Vec::new();
    for i in 0..=stacks {
        let lat = -PI / 2.0 + PI * i as f64 / stacks as f64;
        let v = if equal_area {
            (1.0 + lat.sin()) * 0.5
        } else {
            i as f64 / stacks as f64
        };
        for j in 0..=slices {
            let theta = 2.0 * PI * j as f64 / slices as f64;
            positions.push([lat.cos() * theta.sin(), lat.sin(), lat.cos() * theta.cos()]);
            vcoord.push(v);
        }
    }
    let idx = |i: usize, j: usize| (i * (slices + 1) + j) as u32;
    let uv = |i: usize, j: usize| {
        let v: f64 = vcoord[i * (slices + 1) + j];
        [j as f64 / slices as f64, v.clamp(0.0, 1.0)]
    };
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    for i in 0..stacks {
        for j in 0..slices {
            let (a, b, c, d) = (idx(i, j), idx(i, j + 1), idx(i + 1, j + 1), idx(i + 1, j));
            let (ua, ub, uc, ud) = (uv(i, j), uv(i, j + 1), uv(i + 1, j + 1), uv(i + 1, j));
            if i != 0 {
                faces.push([a, b, c]);
                uvs.push([ua, ub, uc]);
            }
            if i != stacks - 1 {
                faces.push([a, c, d]);
                uvs.push([ua, uc, ud]);
            }
        }
    }
    Mesh::new(positions, faces, uvs).expect("sphere fixture is valid")
}
