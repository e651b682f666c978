//! PNG input/output for RGB images, textures and coverage maps.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb as PixelRgb};

use crate::error::{Error, Result};
use crate::geometry::{RgbImage, TextureMap};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let buf: ImageBuffer<PixelRgb<u8>, Vec<u8>> = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let p = img.get(x as usize, y as usize);
        PixelRgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    });
    buf.save(path.as_ref())
        .map_err(|e| Error::Image(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = image::open(path.as_ref())
        .map_err(|e| Error::Image(format!("{}: {e}", path.as_ref().display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    }))
}

/// Grayscale map: white where a texel is covered.
pub fn save_coverage(tex: &TextureMap, path: impl AsRef<Path>) -> Result<()> {
    let buf = GrayImage::from_fn(tex.width as u32, tex.height as u32, |x, y| {
        let covered = tex.is_covered(y as usize * tex.width + x as usize);
        Luma([if covered { 255 } else { 0 }])
    });
    buf.save(path.as_ref())
        .map_err(|e| Error::Image(format!("{}: {e}", path.as_ref().display())))
}

/// Texture from a PNG, every texel marked covered.
pub fn load_texture(path: impl AsRef<Path>, background: [f64; 3]) -> Result<TextureMap> {
    let img = load_rgb(path)?;
    let mut tex = TextureMap::uniform(img.width, img.height, background, background);
    tex.texels = img.data;
    Ok(tex)
}
