//! Triangle meshes with a precomputed UV atlas, loaded from Wavefront OBJ.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use log::warn;

use super::math::{add, cross, normalize, norm, orient2d, scale, sub, Vec2, Vec3};
use crate::error::{Error, Result};

/// Resolution of the grid used to detect overlapping UV islands on load.
pub const ATLAS_CHECK_RESOLUTION: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// UV coordinates for each face corner.
    pub face_uvs: Vec<[Vec2; 3]>,
    /// Unit normal per position.
    pub normals: Vec<Vec3>,
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_obj(&mut std::io::BufReader::new(file), path)
}

/// Parse OBJ text; `origin` only labels errors.
pub fn parse_obj(reader: &mut impl BufRead, origin: &Path) -> Result<Mesh> {
    let options = tobj::LoadOptions {
        single_index: false,
        triangulate: true,
        ignore_points: true,
        ignore_lines: true,
    };
    let (models, _) = tobj::load_obj_buf(reader, &options, |_| {
        Ok((Vec::new(), Default::default()))
    })
    .map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;

    let mut positions: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    let mut face_uvs = Vec::new();
    let mut normal_sum: Vec<Vec3> = Vec::new();
    let mut has_normals = true;

    for model in &models {
        let m = &model.mesh;
        if m.indices.is_empty() {
            continue;
        }
        if m.texcoords.is_empty() || m.texcoord_indices.len() != m.indices.len() {
            return Err(Error::MissingUv);
        }
        let base = positions.len() as u32;
        positions.extend(m.positions.chunks_exact(3).map(|p| [p[0], p[1], p[2]]));
        normal_sum.resize(positions.len(), [0.0; 3]);
        let uv = |i: u32| -> Vec2 {
            let i = i as usize * 2;
            [m.texcoords[i], m.texcoords[i + 1]]
        };
        let corner_normals = m.normal_indices.len() == m.indices.len() && !m.normals.is_empty();
        has_normals &= corner_normals;
        for (corner, tri) in m.indices.chunks_exact(3).enumerate() {
            let face = [tri[0] + base, tri[1] + base, tri[2] + base];
            let t = &m.texcoord_indices[corner * 3..corner * 3 + 3];
            faces.push(face);
            face_uvs.push([uv(t[0]), uv(t[1]), uv(t[2])]);
            if corner_normals {
                for k in 0..3 {
                    let n = m.normal_indices[corner * 3 + k] as usize * 3;
                    let v = [m.normals[n], m.normals[n + 1], m.normals[n + 2]];
                    let slot = &mut normal_sum[face[k] as usize];
                    *slot = add(*slot, v);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            message: "no triangles".into(),
        });
    }

    let mut mesh = Mesh {
        positions,
        faces,
        face_uvs,
        normals: Vec::new(),
    };
    mesh.normals = if has_normals {
        normal_sum
            .into_iter()
            .enumerate()
            .map(|(i, n)| if norm(n) > 0.0 { normalize(n) } else { mesh.derived_normal(i) })
            .collect()
    } else {
        mesh.derive_normals()
    };
    mesh.validate()?;
    Ok(mesh)
}

impl Mesh {
    /// Build a mesh from parts, deriving vertex normals from face geometry.
    pub fn new(positions: Vec<Vec3>, faces: Vec<[u32; 3]>, face_uvs: Vec<[Vec2; 3]>) -> Result<Self> {
        let mut mesh = Mesh {
            positions,
            faces,
            face_uvs,
            normals: Vec::new(),
        };
        mesh.normals = mesh.derive_normals();
        mesh.validate()?;
        Ok(mesh)
    }

    /// Area-weighted normals; unreferenced vertices get +Y.
    fn derive_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![[0.0; 3]; self.positions.len()];
        for f in &self.faces {
            let n = self.face_area_normal(f);
            for &i in f {
                acc[i as usize] = add(acc[i as usize], n);
            }
        }
        acc.into_iter()
            .map(|n| if norm(n) > 0.0 { normalize(n) } else { [0.0, 1.0, 0.0] })
            .collect()
    }

    fn derived_normal(&self, vertex: usize) -> Vec3 {
        let mut n = [0.0; 3];
        for f in self.faces.iter().filter(|f| f.contains(&(vertex as u32))) {
            n = add(n, self.face_area_normal(f));
        }
        if norm(n) > 0.0 {
            normalize(n)
        } else {
            [0.0, 1.0, 0.0]
        }
    }

    /// Unnormalized normal whose length is twice the face area.
    pub fn face_area_normal(&self, face: &[u32; 3]) -> Vec3 {
        let [a, b, c] = face.map(|i| self.positions[i as usize]);
        cross(sub(b, a), sub(c, a))
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        normalize(self.face_area_normal(&self.faces[face]))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len() as u32;
        if self.faces.len() != self.face_uvs.len() {
            return Err(Error::MissingUv);
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Mesh(format!("face {f:?} references a missing vertex")));
        }
        if self.normals.len() != self.positions.len() {
            return Err(Error::Mesh("normal count does not match vertex count".into()));
        }
        if let Some(nrm) = self.normals.iter().find(|v| (norm(**v) - 1.0).abs() > 1e-4) {
            return Err(Error::Mesh(format!("normal {nrm:?} is not unit length")));
        }
        for uv in self.face_uvs.iter().flatten() {
            if !(-1e-6..=1.0 + 1e-6).contains(&uv[0]) || !(-1e-6..=1.0 + 1e-6).contains(&uv[1]) {
                return Err(Error::Mesh(format!("UV {uv:?} outside the unit square")));
            }
        }
        self.check_atlas_overlap(ATLAS_CHECK_RESOLUTION)?;
        self.warn_non_manifold();
        Ok(())
    }

    /// Rejects atlases in which two UV triangles strictly contain the same grid point.
    pub fn check_atlas_overlap(&self, resolution: usize) -> Result<()> {
        let mut owner = vec![u32::MAX; resolution * resolution];
        for (fi, uvs) in self.face_uvs.iter().enumerate() {
            let area = orient2d(uvs[0], uvs[1], uvs[2]);
            if area.abs() < 1e-14 {
                continue;
            }
            let eps = 1e-9 * area.abs();
            for_each_cell_in(uvs, resolution, resolution, |cell, p| {
                let w0 = orient2d(uvs[1], uvs[2], p) * area.signum();
                let w1 = orient2d(uvs[2], uvs[0], p) * area.signum();
                let w2 = orient2d(uvs[0], uvs[1], p) * area.signum();
                if w0 > eps && w1 > eps && w2 > eps {
                    if owner[cell] != u32::MAX && owner[cell] != fi as u32 {
                        return Err(Error::Mesh(format!(
                            "UV islands overlap (faces {} and {fi})",
                            owner[cell]
                        )));
                    }
                    owner[cell] = fi as u32;
                }
                Ok(())
            })?;
        }
        Ok(())
    }

    fn warn_non_manifold(&self) {
        let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let bad = edges.values().filter(|&&c| c > 2).count();
        if bad > 0 {
            warn!("mesh is non-manifold: {bad} edges shared by more than two faces");
        }
    }

    /// Texels (row-major, row 0 at v = 1) whose centres fall inside some UV triangle.
    pub fn atlas_occupancy(&self, width: usize, height: usize) -> Vec<bool> {
        let mut occupied = vec![false; width * height];
        for uvs in &self.face_uvs {
            let area = orient2d(uvs[0], uvs[1], uvs[2]);
            if area.abs() < 1e-14 {
                continue;
            }
            let _ = for_each_cell_in(uvs, width, height, |cell, p| {
                let s = area.signum();
                if orient2d(uvs[1], uvs[2], p) * s >= 0.0
                    && orient2d(uvs[2], uvs[0], p) * s >= 0.0
                    && orient2d(uvs[0], uvs[1], p) * s >= 0.0
                {
                    occupied[cell] = true;
                }
                Ok(())
            });
        }
        occupied
    }

    /// Copy translated to the bounding-box centre and scaled to unit bounding radius.
    pub fn normalized(&self) -> Mesh {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let centre = scale(add(lo, hi), 0.5);
        let radius = self
            .positions
            .iter()
            .map(|p| norm(sub(*p, centre)))
            .fold(0.0, f64::max);
        let s = if radius > 0.0 { 1.0 / radius } else { 1.0 };
        Mesh {
            positions: self.positions.iter().map(|p| scale(sub(*p, centre), s)).collect(),
            ..self.clone()
        }
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for p in &self.positions {
            let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
        }
        for n in &self.normals {
            let _ = writeln!(out, "vn {} {} {}", n[0], n[1], n[2]);
        }
        for uvs in &self.face_uvs {
            for uv in uvs {
                let _ = writeln!(out, "vt {} {}", uv[0], uv[1]);
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            let t = fi * 3 + 1;
            let _ = writeln!(
                out,
                "f {}/{}/{} {}/{}/{} {}/{}/{}",
                f[0] + 1, t, f[0] + 1,
                f[1] + 1, t + 1, f[1] + 1,
                f[2] + 1, t + 2, f[2] + 1
            );
        }
        out
    }
}

/// Visit texel cells whose centres lie in the UV bounding box of `uvs`.
fn for_each_cell_in(
    uvs: &[Vec2; 3],
    width: usize,
    height: usize,
    mut f: impl FnMut(usize, Vec2) -> Result<()>,
) -> Result<()> {
    let umin = uvs.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let umax = uvs.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let vmin = uvs.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let vmax = uvs.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let c0 = ((umin * width as f64 - 0.5).floor().max(0.0)) as usize;
    let c1 = ((umax * width as f64 - 0.5).ceil().max(0.0) as usize).min(width - 1);
    let r0 = (((1.0 - vmax) * height as f64 - 0.5).floor().max(0.0)) as usize;
    let r1 = ((((1.0 - vmin) * height as f64 - 0.5).ceil().max(0.0)) as usize).min(height - 1);
    for row in r0..=r1 {
        for col in c0..=c1 {
            let p = [
                (col as f64 + 0.5) / width as f64,
                1.0 - (row as f64 + 0.5) / height as f64,
            ];
            f(row * width + col, p)?;
        }
    }
    Ok(())
}
