//! Raster output: the ordered proximity matrix, feature strips, region
//! boxes and contact sheets.

use image::{ImageEncoder, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureMatrix, Scenery};
use crate::proximity::ProximityMatrix;

pub const DEFAULT_MAX_PIXELS: u32 = 4096;
pub const DEFAULT_STRIP_HEIGHT: u32 = 12;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("colormap: {0}")]
    Colormap(String),
    #[error("strip feature {0:?} is not in the schema")]
    UnknownFeature(String),
    #[error("box [{lo}, {hi}) outside 0..{size}")]
    BoxOutOfRange { lo: usize, hi: usize, size: usize },
    #[error("window [{x0}, {x1}) x [{y0}, {y1}) is empty or outside 0..{size}")]
    BadWindow {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        size: usize,
    },
    #[error("order has {order} entries for {size} rows")]
    OrderLength { order: usize, size: usize },
    #[error("type row requested but the dataset has no labels")]
    MissingLabels,
    #[error("max_pixels must be positive")]
    ZeroPixels,
    #[error("png encoding: {0}")]
    Png(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub t: f64,
    pub rgb: [f64; 3],
}

/// Piecewise-linear colormap over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Anchor>", into = "Vec<Anchor>")]
pub struct Colormap {
    anchors: Vec<Anchor>,
}

impl TryFrom<Vec<Anchor>> for Colormap {
    type Error = RenderError;

    fn try_from(anchors: Vec<Anchor>) -> Result<Self, Self::Error> {
        Colormap::new(anchors)
    }
}

impl From<Colormap> for Vec<Anchor> {
    fn from(c: Colormap) -> Self {
        c.anchors
    }
}

const PARULA: [(f64, [f64; 3]); 9] = [
    (0.0, [0.2422, 0.1504, 0.6603]),
    (0.125, [0.2810, 0.3228, 0.9579]),
    (0.25, [0.1786, 0.5289, 0.9682]),
    (0.375, [0.0689, 0.6948, 0.8394]),
    (0.5, [0.2161, 0.7843, 0.5923]),
    (0.625, [0.6720, 0.7793, 0.2227]),
    (0.75, [0.9970, 0.7659, 0.2199]),
    (0.875, [0.9598, 0.9218, 0.0948]),
    (1.0, [0.9769, 0.9839, 0.0805]),
];

impl Colormap {
    pub fn new(anchors: Vec<Anchor>) -> Result<Self, RenderError> {
        let bad = |m: &str| Err(RenderError::Colormap(m.to_owned()));
        if anchors.len() < 2 {
            return bad("need at least two anchors");
        }
        if anchors[0].t != 0.0 || anchors[anchors.len() - 1].t != 1.0 {
            return bad("anchors must start at 0 and end at 1");
        }
        if anchors
            .windows(2)
            .any(|w| w[0].t.partial_cmp(&w[1].t) != Some(std::cmp::Ordering::Less))
        {
            return bad("anchor positions must increase strictly");
        }
        if anchors
            .iter()
            .flat_map(|a| a.rgb)
            .any(|c| !(0.0..=1.0).contains(&c))
        {
            return bad("channels must lie in [0, 1]");
        }
        Ok(Self { anchors })
    }

    /// Nine-anchor approximation of the parula ramp, dark blue to yellow.
    pub fn parula() -> Self {
        Self {
            anchors: PARULA.iter().map(|&(t, rgb)| Anchor { t, rgb }).collect(),
        }
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Color at `t`, clamped into `[0, 1]`; NaN maps to mid-scale.
    pub fn map(&self, t: f64) -> Rgb<u8> {
        let t = if t.is_nan() { 0.5 } else { t.clamp(0.0, 1.0) };
        let k = self
            .anchors
            .partition_point(|a| a.t <= t)
            .clamp(1, self.anchors.len() - 1);
        let (a, b) = (&self.anchors[k - 1], &self.anchors[k]);
        let s = (t - a.t) / (b.t - a.t);
        let ch = |i: usize| ((a.rgb[i] + s * (b.rgb[i] - a.rgb[i])) * 255.0).round() as u8;
        Rgb([ch(0), ch(1), ch(2)])
    }
}

impl Default for Colormap {
    fn default() -> Self {
        Self::parula()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    Independent,
    /// One range across every strip of the feature's display group.
    SharedGroup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripSpec {
    pub feature: String,
    #[serde(default)]
    pub calibration: Calibration,
}

/// Labelled block `[lo, hi)` on the diagonal of the ordered matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lo: usize,
    pub hi: usize,
    #[serde(default)]
    pub label: String,
}

fn default_max_pixels() -> u32 {
    DEFAULT_MAX_PIXELS
}

fn default_type_row() -> bool {
    true
}

fn default_strip_height() -> u32 {
    DEFAULT_STRIP_HEIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    #[serde(default = "default_max_pixels")]
    pub max_pixels: u32,
    #[serde(default)]
    pub downsample: Reduce,
    /// Strips in display order; `None` means every schema column, with
    /// grouped columns sharing their range.
    #[serde(default)]
    pub strips: Option<Vec<StripSpec>>,
    #[serde(default = "default_strip_height")]
    pub strip_height: u32,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    /// Append the scenery row when the dataset carries labels.
    #[serde(default = "default_type_row")]
    pub type_row: bool,
    #[serde(default)]
    pub colormap: Colormap,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            max_pixels: DEFAULT_MAX_PIXELS,
            downsample: Reduce::Mean,
            strips: None,
            strip_height: DEFAULT_STRIP_HEIGHT,
            boxes: Vec::new(),
            type_row: true,
            colormap: Colormap::parula(),
        }
    }
}

/// Half-open window of the ordered matrix: columns `x0..x1`, rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixWindow {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl MatrixWindow {
    pub fn full(size: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: size,
            y1: size,
        }
    }

    pub fn validate(&self, size: usize) -> Result<(), RenderError> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > size || self.y1 > size {
            return Err(RenderError::BadWindow {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                size,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Matrix entries per output pixel side so that the longer side fits.
pub fn block_factor(extent: usize, max_pixels: u32) -> usize {
    extent.div_ceil(max_pixels.max(1) as usize).max(1)
}

/// Pixel → ordered-index mapping of a rendered window: index = origin + pixel × scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGeometry {
    pub window: MatrixWindow,
    pub factor: usize,
    pub width: u32,
    pub height: u32,
}

impl TileGeometry {
    pub fn new(window: MatrixWindow, max_pixels: u32) -> Self {
        let factor = block_factor(window.width().max(window.height()), max_pixels);
        Self::with_factor(window, factor)
    }

    pub fn with_factor(window: MatrixWindow, factor: usize) -> Self {
        Self {
            window,
            factor,
            width: window.width().div_ceil(factor) as u32,
            height: window.height().div_ceil(factor) as u32,
        }
    }
}

fn reduce_block(values: impl Iterator<Item = f64>, reduce: Reduce) -> f64 {
    let mut n = 0usize;
    let mut acc = match reduce {
        Reduce::Mean => 0.0,
        Reduce::Max => f64::NEG_INFINITY,
    };
    for v in values {
        n += 1;
        match reduce {
            Reduce::Mean => acc += v,
            Reduce::Max => acc = acc.max(v),
        }
    }
    match reduce {
        Reduce::Mean => acc / n as f64,
        Reduce::Max => acc,
    }
}

fn check_order(order: &[usize], size: usize) -> Result<(), RenderError> {
    if order.len() != size {
        return Err(RenderError::OrderLength {
            order: order.len(),
            size,
        });
    }
    Ok(())
}

/// Renders `P[order[y], order[x]]` over `window`. Value 0 maps to the
/// bottom of the colormap and 1 to the top; blocks are aggregated on a grid
/// anchored at the window origin.
pub fn render_window(
    p: &ProximityMatrix,
    order: &[usize],
    window: MatrixWindow,
    max_pixels: u32,
    reduce: Reduce,
    cmap: &Colormap,
) -> Result<(RgbImage, TileGeometry), RenderError> {
    if max_pixels == 0 {
        return Err(RenderError::ZeroPixels);
    }
    window.validate(p.size())?;
    let factor = TileGeometry::new(window, max_pixels).factor;
    render_window_scaled(p, order, window, factor, reduce, cmap)
}

/// Like [`render_window`] with the block factor given directly, so that
/// neighbouring tiles of different extent share one downsampling grid.
pub fn render_window_scaled(
    p: &ProximityMatrix,
    order: &[usize],
    window: MatrixWindow,
    factor: usize,
    reduce: Reduce,
    cmap: &Colormap,
) -> Result<(RgbImage, TileGeometry), RenderError> {
    check_order(order, p.size())?;
    window.validate(p.size())?;
    if factor == 0 {
        return Err(RenderError::ZeroPixels);
    }
    let geo = TileGeometry::with_factor(window, factor);
    let f = geo.factor;
    let (w, h) = (geo.width as usize, geo.height as usize);
    let trees = f64::from(p.trees());
    let mut buf = vec![0u8; w * h * 3];
    buf.par_chunks_mut(w * 3).enumerate().for_each(|(py, row)| {
        let ys = window.y0 + py * f..(window.y0 + (py + 1) * f).min(window.y1);
        for px in 0..w {
            let xs = window.x0 + px * f..(window.x0 + (px + 1) * f).min(window.x1);
            // reduce integer counts and divide once, so uniform blocks map exactly
            let v = reduce_block(
                ys.clone()
                    .flat_map(|y| xs.clone().map(move |x| (y, x)))
                    .map(|(y, x)| f64::from(p.count(order[y], order[x]))),
                reduce,
            ) / trees;
            row[px * 3..px * 3 + 3].copy_from_slice(&cmap.map(v).0);
        }
    });
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches dimensions");
    Ok((img, geo))
}

/// Whole ordered matrix, then any boxes from the spec.
pub fn render_matrix(
    p: &ProximityMatrix,
    order: &[usize],
    spec: &RenderSpec,
) -> Result<RgbImage, RenderError> {
    let (mut img, geo) = render_window(
        p,
        order,
        MatrixWindow::full(p.size()),
        spec.max_pixels,
        spec.downsample,
        &spec.colormap,
    )?;
    draw_boxes(&mut img, &spec.boxes, p.size(), geo.factor)?;
    Ok(img)
}

/// Default strip list: every column, grouped columns sharing a range.
pub fn default_strips(matrix: &FeatureMatrix) -> Vec<StripSpec> {
    matrix
        .schema()
        .columns()
        .iter()
        .map(|c| StripSpec {
            feature: c.name.clone(),
            calibration: if c.display_group.is_some() {
                Calibration::SharedGroup
            } else {
                Calibration::Independent
            },
        })
        .collect()
}

/// `(min, max)` used to normalize each strip.
pub fn strip_ranges(
    matrix: &FeatureMatrix,
    strips: &[StripSpec],
) -> Result<Vec<(f64, f64)>, RenderError> {
    let schema = matrix.schema();
    let ranges = matrix.column_ranges();
    strips
        .iter()
        .map(|s| {
            let j = schema
                .index_of(&s.feature)
                .ok_or_else(|| RenderError::UnknownFeature(s.feature.clone()))?;
            let group = schema.columns()[j].display_group.as_deref();
            match (s.calibration, group) {
                (Calibration::SharedGroup, Some(g)) => Ok(schema
                    .columns()
                    .iter()
                    .zip(&ranges)
                    .filter(|(c, _)| c.display_group.as_deref() == Some(g))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, r)| {
                        (lo.min(r.0), hi.max(r.1))
                    })),
                _ => Ok(ranges[j]),
            }
        })
        .collect()
}

fn normalize(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

pub fn scenery_color(s: Scenery) -> Rgb<u8> {
    match s {
        Scenery::Highway => Rgb([220, 30, 30]),
        Scenery::Crossing => Rgb([30, 170, 50]),
        Scenery::Roundabout => Rgb([40, 70, 220]),
    }
}

/// One band per strip (plus the scenery row when requested) under the
/// same column grid as [`render_matrix`].
pub fn render_strips(
    matrix: &FeatureMatrix,
    order: &[usize],
    spec: &RenderSpec,
) -> Result<RgbImage, RenderError> {
    let m = matrix.n_rows();
    check_order(order, m)?;
    if spec.max_pixels == 0 {
        return Err(RenderError::ZeroPixels);
    }
    let labels = match (spec.type_row, matrix.labels()) {
        (true, None) => return Err(RenderError::MissingLabels),
        (true, Some(l)) => Some(l),
        (false, _) => None,
    };
    let strips = spec
        .strips
        .clone()
        .unwrap_or_else(|| default_strips(matrix));
    let ranges = strip_ranges(matrix, &strips)?;
    let f = block_factor(m, spec.max_pixels);
    let w = m.div_ceil(f);
    let band = spec.strip_height.max(1);
    let bands = strips.len() + usize::from(labels.is_some());
    let mut img = RgbImage::new(w as u32, (bands as u32 * band).max(1));

    let schema = matrix.schema();
    for (s, (strip, range)) in strips.iter().zip(&ranges).enumerate() {
        let j = schema
            .index_of(&strip.feature)
            .expect("checked by strip_ranges");
        for px in 0..w {
            let block = px * f..((px + 1) * f).min(m);
            let t = reduce_block(
                block.map(|k| normalize(matrix.get(order[k], j), *range)),
                spec.downsample,
            );
            fill_band(
                &mut img,
                px as u32,
                s as u32 * band,
                band,
                spec.colormap.map(t),
            );
        }
    }
    if let Some(labels) = labels {
        let y = strips.len() as u32 * band;
        for px in 0..w {
            let block = px * f..((px + 1) * f).min(m);
            let mut counts = [0usize; 3];
            for k in block.clone() {
                counts[Scenery::ALL
                    .iter()
                    .position(|&s| s == labels[order[k]])
                    .unwrap()] += 1;
            }
            // majority, ties to the first label met in the block
            let first = labels[order[block.start]];
            let best = *counts.iter().max().unwrap();
            let pick = if counts[Scenery::ALL.iter().position(|&s| s == first).unwrap()] == best {
                first
            } else {
                Scenery::ALL[counts.iter().position(|&c| c == best).unwrap()]
            };
            fill_band(&mut img, px as u32, y, band, scenery_color(pick));
        }
    }
    Ok(img)
}

fn fill_band(img: &mut RgbImage, x: u32, y0: u32, height: u32, color: Rgb<u8>) {
    for y in y0..y0 + height {
        img.put_pixel(x, y, color);
    }
}

pub const BOX_COLOR: Rgb<u8> = Rgb([255, 255, 255]);

/// Outlines each diagonal block `[lo, hi)` at pixel rows and columns
/// `lo / factor ..= (hi - 1) / factor` and writes its label inside the
/// top-left corner.
pub fn draw_boxes(
    img: &mut RgbImage,
    boxes: &[BoxSpec],
    size: usize,
    factor: usize,
) -> Result<(), RenderError> {
    for b in boxes {
        if b.lo >= b.hi || b.hi > size {
            return Err(RenderError::BoxOutOfRange {
                lo: b.lo,
                hi: b.hi,
                size,
            });
        }
    }
    let (w, h) = img.dimensions();
    for b in boxes {
        let a = ((b.lo / factor) as u32).min(w - 1);
        let z = (((b.hi - 1) / factor) as u32).min(w - 1).min(h - 1);
        for k in a..=z {
            for (x, y) in [(k, a), (k, z), (a, k), (z, k)] {
                img.put_pixel(x, y, BOX_COLOR);
            }
        }
        draw_text(img, a + 2, a + 2, &b.label, 1, BOX_COLOR);
    }
    Ok(())
}

/// 3×5 glyphs, one row per byte, most significant of the low three bits leftmost.
fn glyph(c: char) -> Option<[u8; 5]> {
    let g = match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '-' => [0, 0, 7, 0, 0],
        '.' => [0, 0, 0, 0, 2],
        '_' => [0, 0, 0, 0, 7],
        '=' => [0, 7, 0, 7, 0],
        ' ' => [0; 5],
        _ => return None,
    };
    Some(g)
}

/// Draws `text` with its top-left at `(x, y)`, clipped to the image.
/// Unsupported characters are skipped.
pub fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, scale: u32, color: Rgb<u8>) {
    let scale = scale.max(1);
    let (w, h) = img.dimensions();
    let mut cx = x;
    for c in text.chars() {
        let Some(rows) = glyph(c) else { continue };
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..3u32 {
                if bits & (4 >> rx) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (px, py) = (cx + rx * scale + dx, y + ry as u32 * scale + dy);
                        if px < w && py < h {
                            img.put_pixel(px, py, color);
                        }
                    }
                }
            }
        }
        cx += 4 * scale;
    }
}

/// Places images left to right with `gap` pixels between them and a
/// caption line above each.
pub fn contact_sheet(panels: &[(String, RgbImage)], gap: u32) -> RgbImage {
    const CAPTION: u32 = 12;
    let width = panels.iter().map(|(_, i)| i.width()).sum::<u32>()
        + gap * panels.len().saturating_sub(1) as u32;
    let height = panels.iter().map(|(_, i)| i.height()).max().unwrap_or(0) + CAPTION;
    let mut sheet = RgbImage::from_pixel(width.max(1), height, Rgb([32, 32, 32]));
    let mut x = 0;
    for (caption, img) in panels {
        draw_text(&mut sheet, x + 1, 2, caption, 2, Rgb([230, 230, 230]));
        image::imageops::replace(&mut sheet, img, i64::from(x), i64::from(CAPTION));
        x += img.width() + gap;
    }
    sheet
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}
