//! Images, class dictionaries and per-pixel label maps.

mod pnm;
mod taxonomy;

pub use pnm::{
    decode_pgm, encode_pgm, encode_ppm, load_gray, load_labelmap, load_labelmap_unchecked, load_rgb,
    save_gray, save_labelmap, save_rgb,
};
pub use taxonomy::{class, ClassId, ClassMigrationMap, ClassTaxonomy, MigrationTarget, TaxonomyEntry};

use crate::error::{Error, Result};

/// Hard cap on decoded image area, guarding against hostile headers.
pub const MAX_PIXELS: usize = 1 << 28;

fn check_dims(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n / channels <= MAX_PIXELS)
        .ok_or_else(|| Error::invalid(format!("image dimensions {width}x{height} overflow")))?;
    if expected != len {
        return Err(Error::DimensionMismatch {
            expected: format!("{expected} samples for {width}x{height}x{channels}"),
            found: format!("{len} samples"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    /// `pixels` holds row-major `[r, g, b]` triples.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, 3, pixels.len())?;
        Ok(RgbImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Pixel by row-major index.
    pub fn pixel_at(&self, index: usize) -> [u8; 3] {
        let i = index * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, 1, pixels.len())?;
        Ok(GrayImage { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Grid of class IDs, row-major with the origin at the top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    cells: Vec<ClassId>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, cells: Vec<ClassId>) -> Result<Self> {
        check_dims(width, height, 1, cells.len())?;
        Ok(LabelMap { width, height, cells })
    }

    pub fn filled(width: usize, height: usize, class: ClassId) -> Result<Self> {
        Self::new(width, height, vec![class; width.saturating_mul(height)])
    }

    /// Builds a map and checks every cell against `tax`.
    pub fn with_taxonomy(width: usize, height: usize, cells: Vec<ClassId>, tax: &ClassTaxonomy) -> Result<Self> {
        let map = Self::new(width, height, cells)?;
        map.validate(tax)?;
        Ok(map)
    }

    pub fn validate(&self, tax: &ClassTaxonomy) -> Result<()> {
        match self.cells.iter().find(|&&c| !tax.contains(c)) {
            Some(&c) => Err(Error::UnknownClass { class: c as u32 }),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[ClassId] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: ClassId) {
        self.cells[y * self.width + x] = class;
    }

    /// Fills the half-open rectangle `[x0, x1) x [y0, y1)`, clipped to the map.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, class: ClassId) {
        let cx0 = x0.clamp(0, self.width as i64) as usize;
        let cx1 = x1.clamp(0, self.width as i64) as usize;
        let cy0 = y0.clamp(0, self.height as i64) as usize;
        let cy1 = y1.clamp(0, self.height as i64) as usize;
        for y in cy0..cy1 {
            self.cells[y * self.width + cx0..y * self.width + cx1].fill(class);
        }
    }

    /// Pixel count per class ID, indexed by ID (length 256).
    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &c in &self.cells {
            h[c as usize] += 1;
        }
        h
    }

    /// Row-major indices of the cells holding `class`.
    pub fn mask(&self, class: ClassId) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Exponent applied to the weighted channel mean in [`rgb_to_gray`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GrayMode {
    /// `1/2.2`, the gamma-space inverse; identity on achromatic input.
    #[default]
    Normalized,
    /// Plain square root as in the original formula; clamped to 255.
    Literal,
}

impl std::str::FromStr for GrayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(GrayMode::Normalized),
            "literal" => Ok(GrayMode::Literal),
            other => Err(Error::invalid(format!("unknown gray mode {other:?}"))),
        }
    }
}

const GAMMA: f64 = 2.2;
const GREEN_WEIGHT: f64 = 1.5;
const BLUE_WEIGHT: f64 = 0.6;

/// Gamma-weighted luminance of one pixel.
pub fn gray_value(r: u8, g: u8, b: u8, mode: GrayMode) -> u8 {
    let norm = 1.0 + GREEN_WEIGHT.powf(GAMMA) + BLUE_WEIGHT.powf(GAMMA);
    let num = (r as f64).powf(GAMMA)
        + (GREEN_WEIGHT * g as f64).powf(GAMMA)
        + (BLUE_WEIGHT * b as f64).powf(GAMMA);
    let exponent = match mode {
        GrayMode::Normalized => 1.0 / GAMMA,
        GrayMode::Literal => 0.5,
    };
    // f64::round is half-away-from-zero.
    (num / norm).powf(exponent).round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_gray(img: &RgbImage, mode: GrayMode) -> GrayImage {
    // Each channel takes only 256 values, so cache the powered terms.
    let mut lut: std::collections::HashMap<[u8; 3], u8> = std::collections::HashMap::new();
    let pixels = img
        .as_bytes()
        .chunks_exact(3)
        .map(|p| *lut.entry([p[0], p[1], p[2]]).or_insert_with(|| gray_value(p[0], p[1], p[2], mode)))
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Maps each gray level to the class with the nearest gray value (ties to the
/// lower class ID).
pub fn gray_to_labelmap(img: &GrayImage, tax: &ClassTaxonomy) -> LabelMap {
    let lut = tax.nearest_class_lut();
    LabelMap {
        width: img.width,
        height: img.height,
        cells: img.pixels.iter().map(|&g| lut[g as usize]).collect(),
    }
}

pub fn labelmap_to_gray(map: &LabelMap, tax: &ClassTaxonomy) -> Result<GrayImage> {
    let pixels = map
        .cells
        .iter()
        .map(|&c| tax.gray(c).ok_or(Error::UnknownClass { class: c as u32 }))
        .collect::<Result<Vec<_>>>()?;
    Ok(GrayImage {
        width: map.width,
        height: map.height,
        pixels,
    })
}

/// Rewrites every cell through `rules`; dropped classes become background.
pub fn migrate(map: &LabelMap, rules: &ClassMigrationMap, target: &ClassTaxonomy) -> Result<LabelMap> {
    let mut table: [Option<ClassId>; 256] = [None; 256];
    for (source, rule) in rules.rules() {
        table[source as usize] = Some(match rule {
            MigrationTarget::Class(t) => {
                if !target.contains(t) {
                    return Err(Error::UnknownClass { class: t as u32 });
                }
                t
            }
            MigrationTarget::Drop => class::BACKGROUND,
        });
    }
    let cells = map
        .cells
        .iter()
        .map(|&c| table[c as usize].ok_or(Error::MissingRule { class: c as u32 }))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelMap {
        width: map.width,
        height: map.height,
        cells,
    })
}
