//! Fixed-camera orthographic rasterizer.
//!
//! Each cube becomes a filled square with a lighter strip along its top edge.
//! The floor is a dark line along the bottom image row. Painter's order is
//! the scene's block order, which puts the displaced block last.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::world::TowerScene;
use crate::{Error, Result};

pub const IMAGE_SIZE: usize = 256;

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&color);
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Render(format!(
                "expected {} bytes for {width}x{height}, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn fill_rect(&mut self, cols: (usize, usize), rows: (usize, usize), color: [u8; 3]) {
        for r in rows.0..rows.1 {
            let start = (r * self.width + cols.0) * 3;
            let end = (r * self.width + cols.1) * 3;
            for px in self.pixels[start..end].chunks_exact_mut(3) {
                px.copy_from_slice(&color);
            }
        }
    }

    pub fn mirrored_horizontally(&self) -> Image {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                let src = (r * self.width + (self.width - 1 - c)) * 3;
                let dst = (r * self.width + c) * 3;
                out.pixels[dst..dst + 3].copy_from_slice(&self.pixels[src..src + 3]);
            }
        }
        out
    }

    /// Hex SHA-256 of the raw pixel bytes.
    pub fn digest(&self) -> String {
        let d = Sha256::digest(&self.pixels);
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Render("pixel buffer size mismatch".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    /// Load any supported image file, convert to RGB and resample to `size`×`size`.
    pub fn load_resized(path: &Path, size: usize) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img
            .resize_exact(size as u32, size as u32, image::imageops::FilterType::Triangle)
            .to_rgb8();
        Image::from_raw(size, size, rgb.into_raw())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    /// Pixels per world unit.
    pub scale: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub background: [u8; 3],
    pub floor_color: [u8; 3],
    /// Top strip color is `255 - shade * (255 - c)` per channel; 1.0 means no lightening.
    pub top_shade: f64,
    /// Height of the top strip as a fraction of the block height.
    pub top_strip_fraction: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            scale: 0.2,
            image_width: IMAGE_SIZE,
            image_height: IMAGE_SIZE,
            background: [236, 236, 236],
            floor_color: [70, 70, 70],
            top_shade: 0.55,
            top_strip_fraction: 0.15,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::Config("camera scale must be positive".into()));
        }
        if !(self.top_shade > 0.0 && self.top_shade <= 1.0) {
            return Err(Error::Config("top_shade must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Affine world → pixel map with the y axis flipped; the result is a pixel
/// boundary coordinate, rounded half away from zero.
pub fn world_to_pixel(x: f64, y: f64, cam: &CameraConfig) -> (i64, i64) {
    let px = (x * cam.scale).round();
    let py = (cam.image_height as f64 - y * cam.scale).round();
    (px as i64, py as i64)
}

fn lighten(color: [u8; 3], shade: f64) -> [u8; 3] {
    color.map(|c| (255.0 - shade * (255.0 - c as f64)).round().clamp(0.0, 255.0) as u8)
}

pub fn rasterize(scene: &TowerScene, cam: &CameraConfig) -> Result<Image> {
    let (w, h) = (cam.image_width, cam.image_height);
    let mut img = Image::filled(w, h, cam.background);
    img.fill_rect((0, w), (h - 1, h), cam.floor_color);

    for (i, b) in scene.blocks.iter().enumerate() {
        let (c0, r1) = world_to_pixel(b.left(), b.y_bottom, cam);
        let (c1, r0) = world_to_pixel(b.right(), b.top(), cam);
        if c0 < 0 || r0 < 0 || c1 > w as i64 || r1 > h as i64 {
            return Err(Error::Render(format!(
                "block {i} of scene {} projects outside the image: cols {c0}..{c1}, rows {r0}..{r1}",
                scene.seed
            )));
        }
        let (c0, c1, r0, r1) = (c0 as usize, c1 as usize, r0 as usize, r1 as usize);
        img.fill_rect((c0, c1), (r0, r1), b.color);
        let strip = ((b.height * cam.scale * cam.top_strip_fraction).round() as usize).max(1);
        img.fill_rect((c0, c1), (r0, (r0 + strip).min(r1)), lighten(b.color, cam.top_shade));
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_side_block_scene, generate_top_block_scene, DatasetKind, WorldConfig};

    #[test]
    fn anchor_points() {
        let cam = CameraConfig::default();
        assert_eq!(world_to_pixel(0.0, 0.0, &cam), (0, 256));
        assert_eq!(world_to_pixel(640.0, 0.0, &cam).0, 128);
        let (a, _) = world_to_pixel(300.0, 0.0, &cam);
        let (b, _) = world_to_pixel(500.0, 0.0, &cam);
        assert_eq!(b - a, 40);
        // half away from zero
        assert_eq!(world_to_pixel(2.5, 0.0, &cam).0, 1);
        assert_eq!(world_to_pixel(-2.5, 0.0, &cam).0, -1);
    }

    #[test]
    fn empty_scene_is_background_and_floor() {
        let cam = CameraConfig::default();
        let scene = TowerScene {
            blocks: vec![],
            displaced_index: 0,
            dataset_kind: DatasetKind::TopBlock,
            seed: 0,
        };
        let img = rasterize(&scene, &cam).unwrap();
        assert_eq!(img.pixels.len(), 256 * 256 * 3);
        assert_eq!(img.get(17, 100), cam.background);
        assert_eq!(img.get(17, 255), cam.floor_color);
    }

    #[test]
    fn rendering_is_deterministic_and_mirrors() {
        let cfg = WorldConfig::default();
        let cam = CameraConfig::default();
        for seed in 0..40 {
            for scene in [
                generate_top_block_scene(seed, &cfg, None),
                generate_side_block_scene(seed, &cfg),
            ] {
                let a = rasterize(&scene, &cam).unwrap();
                assert_eq!(a, rasterize(&scene, &cam).unwrap());
                let m = rasterize(&scene.mirrored(&cfg), &cam).unwrap();
                assert_eq!(m, a.mirrored_horizontally(), "seed {seed}");
            }
        }
    }

    #[test]
    fn block_center_distance_is_scaled() {
        let cfg = WorldConfig::default();
        let cam = CameraConfig::default();
        let scene = generate_top_block_scene(11, &cfg, None);
        let img = rasterize(&scene, &cam).unwrap();
        let d = scene.displaced();
        let (_, row) = world_to_pixel(0.0, d.y_bottom + d.height / 2.0, &cam);
        let cols: Vec<usize> = (0..256)
            .filter(|&c| img.get(c, row as usize) == d.color)
            .collect();
        let center_px = (cols[0] + cols[cols.len() - 1] + 1) as f64 / 2.0;
        let expected = (d.x_center - cfg.tower_center_x()) * cam.scale + 128.0;
        assert!((center_px - expected).abs() <= 1.0);
    }

    #[test]
    fn out_of_frame_block_is_an_error() {
        let cfg = WorldConfig::default();
        let cam = CameraConfig::default();
        let mut scene = generate_top_block_scene(3, &cfg, None);
        scene.blocks[0].x_center = 1250.0;
        assert!(rasterize(&scene, &cam).is_err());
    }
}
