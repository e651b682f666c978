//! Rasterizer, scatter/gather and mesh loading against independent references.

use std::path::PathBuf;

mod common;

use common::{check_against_raycast, expected_texel, random_soup, render_round_trip_mismatches};
use texgen::geometry::texture::{downsample_mask, first_obs_mask, inverse_render, render, GrazingFilter};
use texgen::geometry::{load_mesh, primitives, rasterize, sample_views, CameraPose, Intrinsics, TextureMap};
use texgen::geometry::RgbImage;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn raster_matches_raycast_on_overlapping_soup() {
    for seed in 0..4 {
        let mesh = random_soup(seed, 24);
        for (az, el, size) in [(0.0, 0.0, 64), (45.0, 20.0, 48), (200.0, -30.0, 40), (0.0, 85.0, 64)] {
            let pose = CameraPose {
                azimuth_deg: az,
                elevation_deg: el,
                radius: 3.0,
                intrinsics: Intrinsics::square(50.0, size),
            };
            let (compared, skipped) = check_against_raycast(&mesh, &pose, 32);
            assert!(compared > 50, "seed {seed}: only {compared} pixels compared");
            assert!(skipped * 50 < compared, "seed {seed}: {skipped} ambiguous pixels");
        }
    }
}

#[test]
fn raster_matches_raycast_on_closed_meshes() {
    for mesh in [primitives::cube(), primitives::uv_sphere(8, 16, true)] {
        for pose in sample_views(8, true, 3.5, Intrinsics::square(45.0, 48)) {
            let (compared, _) = check_against_raycast(&mesh, &pose, 64);
            assert!(compared > 200);
        }
    }
}

#[test]
fn render_inverse_render_round_trip_is_exact() {
    let meshes = [primitives::cube(), primitives::uv_sphere(12, 24, true), random_soup(9, 30)];
    for (m, mesh) in meshes.iter().enumerate() {
        for (v, pose) in sample_views(4, true, 3.0, Intrinsics::square(50.0, 64)).iter().enumerate() {
            for tex in [16, 64] {
                let (bad, valid) = render_round_trip_mismatches(mesh, pose, tex, (m * 10 + v) as u64);
                assert!(valid > 0);
                assert_eq!(bad, 0, "mesh {m} view {v} tex {tex}");
            }
        }
    }
}

fn checker(texel: usize, w: usize) -> [f64; 3] {
    if (texel / w + texel % w) % 2 == 0 {
        [1.0, 1.0, 1.0]
    } else {
        [0.0, 0.0, 0.0]
    }
}

#[test]
fn checkerboard_quad_lookup() {
    let quad = primitives::quad(1.0, 0.0);
    let pose = CameraPose {
        azimuth_deg: 0.0,
        elevation_deg: 0.0,
        radius: 2.0,
        intrinsics: Intrinsics::square(40.0, 64),
    };
    let tw = 8;
    let mut tex = TextureMap::new(tw, tw, [0.5; 3]);
    for i in 0..tw * tw {
        tex.texels[i] = checker(i, tw);
        tex.writer[i] = Some(0);
    }
    let raster = rasterize(&quad, &pose, tw, tw);
    let img = render(&tex, &raster, [0.25; 3]);
    let frame = pose.frame();
    let mut inside = 0;
    for py in 0..64 {
        for px in 0..64 {
            let dir = frame.ray_direction(px as f64 + 0.5, py as f64 + 0.5);
            let t = -frame.position[2] / dir[2];
            let x = frame.position[0] + t * dir[0];
            let y = frame.position[1] + t * dir[1];
            let pixel = img.get(px, py);
            if x.abs() < 0.5 - 1e-6 && y.abs() < 0.5 - 1e-6 {
                let Some(texel) = expected_texel([x + 0.5, y + 0.5], tw, tw) else { continue };
                assert_eq!(pixel, checker(texel as usize, tw), "pixel ({px},{py})");
                inside += 1;
            } else if x.abs() > 0.5 + 1e-6 || y.abs() > 0.5 + 1e-6 {
                assert_eq!(pixel, [0.25; 3], "pixel ({px},{py}) outside the quad");
            }
        }
    }
    assert!(inside > 1000);
}

#[test]
fn half_covered_texture_masks_the_other_half() {
    let quad = primitives::quad(1.0, 0.0);
    let pose = CameraPose {
        azimuth_deg: 0.0,
        elevation_deg: 0.0,
        radius: 2.0,
        intrinsics: Intrinsics::square(40.0, 64),
    };
    let tw = 16;
    let raster = rasterize(&quad, &pose, tw, tw);
    let mut tex = TextureMap::new(tw, tw, [0.0; 3]);
    for i in 0..tw * tw {
        if i % tw < tw / 2 {
            tex.writer[i] = Some(0);
        }
    }
    let mask = first_obs_mask(&raster, &tex);
    let mut expected = 0;
    for (pixel, f) in raster.fragments.iter().enumerate() {
        let want = f.is_some_and(|f| f.texel as usize % tw >= tw / 2);
        assert_eq!(mask.data[pixel], want, "pixel {pixel}");
        expected += want as usize;
    }
    assert_eq!(mask.count(), expected);
    assert!(expected > 0 && expected < raster.valid_count());

    let coarse = downsample_mask(&mask, 8).unwrap();
    for cy in 0..8 {
        for cx in 0..8 {
            let any = (0..8).any(|dy| (0..8).any(|dx| mask.get(cx * 8 + dx, cy * 8 + dy)));
            assert_eq!(coarse.get(cx, cy), any);
        }
    }
}

#[test]
fn scatter_is_first_write_wins() {
    let quad = primitives::quad(1.0, 0.0);
    let pose = CameraPose {
        azimuth_deg: 0.0,
        elevation_deg: 0.0,
        radius: 2.0,
        intrinsics: Intrinsics::square(40.0, 32),
    };
    let raster = rasterize(&quad, &pose, 8, 8);
    let mut tex = TextureMap::new(8, 8, [0.0; 3]);
    inverse_render(&RgbImage::filled(32, 32, [1.0, 0.0, 0.0]), &raster, &mut tex, 0, None).unwrap();
    let after_first = tex.clone();
    inverse_render(&RgbImage::filled(32, 32, [0.0, 1.0, 0.0]), &raster, &mut tex, 1, None).unwrap();
    assert_eq!(tex, after_first);
    assert_eq!(tex.covered_count(), 64);
    assert!(tex.writer.iter().all(|w| *w == Some(0)));
}

#[test]
fn grazing_filter_prefers_frontal_views() {
    let quad = primitives::quad(1.0, 0.0);
    let oblique = CameraPose {
        azimuth_deg: 84.0,
        elevation_deg: 0.0,
        radius: 2.0,
        intrinsics: Intrinsics::square(60.0, 64),
    };
    let frontal = CameraPose {
        azimuth_deg: 0.0,
        ..oblique
    };
    let r_obl = rasterize(&quad, &oblique, 8, 8);
    let r_front = rasterize(&quad, &frontal, 8, 8);
    assert!(r_obl.valid_count() > 0);
    let filter = GrazingFilter::from_rasters(0.2, 64, [&r_obl, &r_front]);
    let mut tex = TextureMap::new(8, 8, [0.0; 3]);
    inverse_render(&RgbImage::filled(64, 64, [1.0; 3]), &r_obl, &mut tex, 0, Some(&filter)).unwrap();
    assert_eq!(tex.covered_count(), 0);
    inverse_render(&RgbImage::filled(64, 64, [0.5; 3]), &r_front, &mut tex, 1, Some(&filter)).unwrap();
    assert_eq!(tex.covered_count(), 64);

    let mut unfiltered = TextureMap::new(8, 8, [0.0; 3]);
    let lone = GrazingFilter::from_rasters(0.2, 64, [&r_obl]);
    inverse_render(&RgbImage::filled(64, 64, [1.0; 3]), &r_obl, &mut unfiltered, 0, Some(&lone)).unwrap();
    assert!(unfiltered.covered_count() > 0);
}

#[test]
fn fixture_meshes_load() {
    let cube = load_mesh(fixture("cube.obj")).unwrap();
    assert_eq!(cube.positions.len(), 8);
    assert_eq!(cube.faces.len(), 12);
    cube.check_atlas_overlap(256).unwrap();

    let quad = load_mesh(fixture("quad.obj")).unwrap();
    assert_eq!(quad.faces.len(), 2);
    assert_eq!(quad.face_uvs[0], [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);

    let sphere = load_mesh(fixture("sphere.obj")).unwrap();
    assert_eq!(sphere.faces.len(), primitives::uv_sphere(24, 48, true).faces.len());

    let err = load_mesh(fixture("no_uv.obj")).unwrap_err().to_string();
    assert!(err.contains("mesh has no UV atlas"), "{err}");
    assert!(load_mesh(fixture("missing.obj")).is_err());
}

/// Eight equatorial views plus the top view cover the sphere atlas.
#[test]
fn sphere_coverage_with_standard_rig() {
    let sphere = primitives::uv_sphere(48, 96, true);
    let tex = 32;
    let poses = sample_views(8, true, 10.0, Intrinsics::square(12.0, 128));
    let rasters: Vec<_> = poses.iter().map(|p| rasterize(&sphere, p, tex, tex)).collect();
    let filter = GrazingFilter::from_rasters(0.2, tex * tex, &rasters);
    let mut texture = TextureMap::new(tex, tex, [0.0; 3]);
    for (i, r) in rasters.iter().enumerate() {
        inverse_render(&RgbImage::filled(128, 128, [1.0; 3]), r, &mut texture, i as u16, Some(&filter)).unwrap();
    }
    let occupancy = sphere.atlas_occupancy(tex, tex);
    let coverage = texture.coverage_of(&occupancy);
    assert!(coverage >= 0.99, "coverage {coverage:.4}");
}
