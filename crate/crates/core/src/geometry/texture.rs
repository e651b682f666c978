//! Texture maps, RGB images, and nearest-texel scatter/gather between them.

use crate::error::{Error, Result};

use super::raster::RasterMap;

pub type Rgb = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Rgb>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    pub fn clamped(mut self) -> Self {
        for p in &mut self.data {
            for v in p.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }
}

/// RGB texel grid with per-texel coverage and writer view.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub width: usize,
    pub height: usize,
    pub texels: Vec<Rgb>,
    /// View that wrote each texel; `None` means uncovered.
    pub writer: Vec<Option<u16>>,
    pub background: Rgb,
}

impl TextureMap {
    pub fn new(width: usize, height: usize, background: Rgb) -> Self {
        Self {
            width,
            height,
            texels: vec![background; width * height],
            writer: vec![None; width * height],
            background,
        }
    }

    /// Fully covered texture with every texel set to `value`, attributed to view 0.
    pub fn uniform(width: usize, height: usize, value: Rgb, background: Rgb) -> Self {
        Self {
            width,
            height,
            texels: vec![value; width * height],
            writer: vec![Some(0); width * height],
            background,
        }
    }

    pub fn is_covered(&self, texel: usize) -> bool {
        self.writer[texel].is_some()
    }

    pub fn covered_count(&self) -> usize {
        self.writer.iter().filter(|w| w.is_some()).count()
    }

    /// Fraction of `region` texels that are covered.
    pub fn coverage_of(&self, region: &[bool]) -> f64 {
        let total = region.iter().filter(|&&r| r).count();
        if total == 0 {
            return 0.0;
        }
        let hit = region
            .iter()
            .zip(&self.writer)
            .filter(|(&r, w)| r && w.is_some())
            .count();
        hit as f64 / total as f64
    }

    pub fn as_image(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.texels.clone(),
        }
    }

    /// Reset to an empty texture with the same dimensions.
    pub fn clear(&mut self) {
        self.texels.fill(self.background);
        self.writer.fill(None);
    }
}

/// Boolean image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Policy for rejecting grazing-angle writes during inverse rendering.
#[derive(Debug, Clone)]
pub struct GrazingFilter {
    pub min_cos: f64,
    /// Texels that some view observes at `cos_angle >= min_cos`.
    pub well_seen: Vec<bool>,
}

impl GrazingFilter {
    /// Precompute which texels have a non-grazing observation among `rasters`.
    pub fn from_rasters<'a>(min_cos: f64, texels: usize, rasters: impl IntoIterator<Item = &'a RasterMap>) -> Self {
        let mut well_seen = vec![false; texels];
        for r in rasters {
            for f in r.fragments.iter().flatten() {
                if f.cos_angle >= min_cos {
                    well_seen[f.texel as usize] = true;
                }
            }
        }
        Self { min_cos, well_seen }
    }

    fn admits(&self, texel: usize, cos_angle: f64) -> bool {
        cos_angle >= self.min_cos || !self.well_seen[texel]
    }
}

/// Nearest-texel gather; invalid pixels and uncovered texels show `background`.
pub fn render(texture: &TextureMap, raster: &RasterMap, background: Rgb) -> RgbImage {
    RgbImage {
        width: raster.width,
        height: raster.height,
        data: raster
            .fragments
            .iter()
            .map(|f| match f {
                Some(f) if texture.is_covered(f.texel as usize) => texture.texels[f.texel as usize],
                _ => background,
            })
            .collect(),
    }
}

/// First-write-wins scatter of `image` into uncovered texels.
pub fn inverse_render(
    image: &RgbImage,
    raster: &RasterMap,
    texture: &mut TextureMap,
    view_index: u16,
    filter: Option<&GrazingFilter>,
) -> Result<()> {
    if image.width != raster.width || image.height != raster.height {
        return Err(Error::contract(format!(
            "image {}x{} does not match raster {}x{}",
            image.width, image.height, raster.width, raster.height
        )));
    }
    if texture.width != raster.tex_width || texture.height != raster.tex_height {
        return Err(Error::contract("raster was built for a different texture size"));
    }
    for (pixel, frag) in raster.fragments.iter().enumerate() {
        let Some(frag) = frag else { continue };
        let texel = frag.texel as usize;
        if texture.is_covered(texel) {
            continue;
        }
        if let Some(filter) = filter {
            if !filter.admits(texel, frag.cos_angle) {
                continue;
            }
        }
        texture.texels[texel] = image.data[pixel];
        texture.writer[texel] = Some(view_index);
    }
    Ok(())
}

/// Pixels that are valid and whose texel is not yet covered.
pub fn first_obs_mask(raster: &RasterMap, texture: &TextureMap) -> Mask {
    Mask {
        width: raster.width,
        height: raster.height,
        data: raster
            .fragments
            .iter()
            .map(|f| f.is_some_and(|f| !texture.is_covered(f.texel as usize)))
            .collect(),
    }
}

pub fn validity_mask(raster: &RasterMap) -> Mask {
    Mask {
        width: raster.width,
        height: raster.height,
        data: raster.fragments.iter().map(Option::is_some).collect(),
    }
}

/// Block-reduce by `factor`; a cell is true when any pixel in its block is.
pub fn downsample_mask(mask: &Mask, factor: usize) -> Result<Mask> {
    if factor == 0 || mask.width % factor != 0 || mask.height % factor != 0 {
        return Err(Error::contract(format!(
            "mask {}x{} is not divisible by factor {factor}",
            mask.width, mask.height
        )));
    }
    let (w, h) = (mask.width / factor, mask.height / factor);
    let mut out = Mask::filled(w, h, false);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                out.data[(y / factor) * w + x / factor] = true;
            }
        }
    }
    Ok(out)
}
