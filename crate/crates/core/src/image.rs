//! Coordinate-based image construction: a single-channel cluster-index image
//! per instance, with the side length chosen by adaptive resolution scaling
//! and a non-overlapping patch decomposition for the image encoder.

use crate::instance::{GtspInstance, InstanceError};
use std::io::Write;

/// W×H grid of cluster-index pixels. 0 is background; a node of cluster `c`
/// marks its pixel with `c + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceImage {
    pub width: usize,
    pub height: usize,
    pub patch_size: usize,
    /// Row-major pixel values: `pixels[y * width + x]`.
    pub pixels: Vec<u32>,
}

impl InstanceImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.pixels[y * self.width + x]
    }
}

/// Non-overlapping w×w patches of an image, flattened row-major, each tagged
/// with the normalized coordinates of its top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    /// Patch values, `patch_count * patch_size^2` entries.
    pub patches: Vec<u32>,
    /// `(x/W, y/H)` of each patch's top-left pixel.
    pub patch_coords: Vec<[f64; 2]>,
}

impl PatchGrid {
    pub fn patch_count(&self) -> usize {
        self.patch_coords.len()
    }

    pub fn patch(&self, p: usize) -> &[u32] {
        let area = self.patch_size * self.patch_size;
        &self.patches[p * area..(p + 1) * area]
    }
}

/// Adaptive resolution scaling: `W = H = ceil(alpha * sqrt(n) / w) * w`.
/// The side length grows with the square root of the node count and is always
/// a positive multiple of the patch size.
pub fn ars_dims(n: usize, patch_size: usize, alpha: f64) -> Result<(usize, usize), InstanceError> {
    if n < 1 {
        return Err(InstanceError::Validation("ars_dims requires n >= 1".into()));
    }
    if patch_size < 1 {
        return Err(InstanceError::Validation("ars_dims requires patch size >= 1".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(InstanceError::Validation(format!(
            "ars_dims requires a positive finite alpha, got {alpha}"
        )));
    }
    let blocks = (alpha * (n as f64).sqrt() / patch_size as f64).ceil().max(1.0) as usize;
    let side = blocks * patch_size;
    Ok((side, side))
}

/// Rasterizes an instance: node i marks pixel
/// `(floor(x_i * W), floor(y_i * H))`, clamped to the grid, with value
/// `cluster_of(i) + 1`. On collisions the higher node index wins (nodes are
/// written in index order). All other pixels stay 0.
pub fn build_image(
    instance: &GtspInstance,
    width: usize,
    height: usize,
    patch_size: usize,
) -> Result<InstanceImage, InstanceError> {
    if width != height {
        return Err(InstanceError::Validation(format!(
            "image must be square, got {width}x{height}"
        )));
    }
    if patch_size == 0 || width % patch_size != 0 {
        return Err(InstanceError::Validation(format!(
            "width {width} is not a multiple of patch size {patch_size}"
        )));
    }
    let mut pixels = vec![0u32; width * height];
    for (i, c) in instance.coords.iter().enumerate() {
        let x = ((c[0] * width as f64).floor() as usize).min(width - 1);
        let y = ((c[1] * height as f64).floor() as usize).min(height - 1);
        pixels[y * width + x] = instance.cluster[i] as u32 + 1;
    }
    Ok(InstanceImage {
        width,
        height,
        patch_size,
        pixels,
    })
}

/// Builds the image at the ARS resolution for this instance.
pub fn build_ars_image(
    instance: &GtspInstance,
    patch_size: usize,
    alpha: f64,
) -> Result<InstanceImage, InstanceError> {
    let (w, h) = ars_dims(instance.n, patch_size, alpha)?;
    build_image(instance, w, h, patch_size)
}

/// Splits the image into its `(W/w)^2` patches, row-major over the patch grid
/// and row-major within each patch. Reassembling the patches reproduces the
/// image exactly.
pub fn extract_patches(image: &InstanceImage) -> PatchGrid {
    let w = image.patch_size;
    let per_side = image.width / w;
    let mut patches = Vec::with_capacity(per_side * per_side * w * w);
    let mut patch_coords = Vec::with_capacity(per_side * per_side);
    for py in 0..per_side {
        for px in 0..per_side {
            patch_coords.push([
                (px * w) as f64 / image.width as f64,
                (py * w) as f64 / image.height as f64,
            ]);
            for dy in 0..w {
                let row = py * w + dy;
                let col = px * w;
                patches.extend_from_slice(&image.pixels[row * image.width + col..row * image.width + col + w]);
            }
        }
    }
    PatchGrid {
        patch_size: w,
        patches,
        patch_coords,
    }
}

/// Debug export: textual PGM (P2), maxval = max(pixel values, 1), row per
/// image row, samples separated by single spaces.
pub fn write_pgm<W: Write>(image: &InstanceImage, mut sink: W) -> std::io::Result<()> {
    let maxval = image.pixels.iter().copied().max().unwrap_or(0).max(1);
    writeln!(sink, "P2")?;
    writeln!(sink, "{} {}", image.width, image.height)?;
    writeln!(sink, "{maxval}")?;
    for y in 0..image.height {
        let row: Vec<String> = (0..image.width).map(|x| image.get(x, y).to_string()).collect();
        writeln!(sink, "{}", row.join(" "))?;
    }
    Ok(())
}
