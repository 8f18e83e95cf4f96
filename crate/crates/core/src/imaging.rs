//! In-memory images and PNG / PPM I/O.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageBuffer, ImageEncoder, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};

/// RGB image with real-valued channels, nominally in `[0, 1]`, stored
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

/// Single-channel real image (dark channel, transmission, luminance).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n-2`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        RgbImage { width, height, data }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("RgbImage", width * height, data.len()));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.data
    }

    pub fn same_size(&self, other_w: usize, other_h: usize) -> bool {
        self.width == other_w && self.height == other_h
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn clamped(&self) -> RgbImage {
        self.map(|p| p.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Rec.601 luma `0.299 R + 0.587 G + 0.114 B`.
    pub fn luminance(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| luma(p)).collect(),
        }
    }

    /// Copies the `size×size` window whose top-left corner is `(x0, y0)` as
    /// planar CHW `f32`.
    pub fn crop_chw(&self, x0: usize, y0: usize, size: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; 3 * size * size];
        for dy in 0..size {
            for dx in 0..size {
                let p = self.get(x0 + dx, y0 + dy);
                for c in 0..3 {
                    out[c * size * size + dy * size + dx] = p[c] as f32;
                }
            }
        }
        out
    }

    /// Planar CHW `size×size` patch centred on `(cx, cy)` (rows
    /// `cy - size/2 .. cy + size/2`), mirrored at the borders.
    pub fn centered_patch(&self, cx: usize, cy: usize, size: usize, out: &mut [f32]) {
        let half = (size / 2) as isize;
        let plane = size * size;
        for dy in 0..size {
            let y = reflect(cy as isize - half + dy as isize, self.height);
            for dx in 0..size {
                let x = reflect(cx as isize - half + dx as isize, self.width);
                let p = self.data[y * self.width + x];
                let i = dy * size + dx;
                out[i] = p[0] as f32;
                out[plane + i] = p[1] as f32;
                out[2 * plane + i] = p[2] as f32;
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect();
        Ok(RgbImage {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    /// 8-bit encoding, clamped and rounded.
    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let mut buf = ImageBuffer::new(self.width as u32, self.height as u32);
        for (dst, src) in buf.pixels_mut().zip(&self.data) {
            *dst = Rgb(src.map(to_u8));
        }
        buf
    }

    /// Saves as PNG, or binary PPM when the extension is `.ppm`/`.pnm`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let err = |source| Error::Image {
            path: path.to_path_buf(),
            source,
        };
        let buf = self.to_rgb8();
        match image_format(path) {
            ImageFormat::Pnm => {
                let file = std::io::BufWriter::new(std::fs::File::create(path)?);
                PnmEncoder::new(file)
                    .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                    .write_image(buf.as_raw(), buf.width(), buf.height(), ExtendedColorType::Rgb8)
                    .map_err(err)
            }
            f => buf.save_with_format(path, f).map_err(err),
        }
    }
}

fn image_format(path: &Path) -> ImageFormat {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(e) if e == "ppm" || e == "pnm" || e == "pgm" => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

impl Plane {
    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("Plane", width * height, data.len()));
        }
        Ok(Plane { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Loads any image as grayscale in `[0, 1]` (16-bit sources keep their
    /// precision).
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let g = img.to_luma16();
        let (w, h) = g.dimensions();
        Ok(Plane {
            width: w as usize,
            height: h as usize,
            data: g.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        })
    }

    /// 16-bit grayscale PNG, values clamped to `[0, 1]`.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(self.width as u32, self.height as u32);
        for (dst, &v) in buf.pixels_mut().zip(&self.data) {
            *dst = Luma([(v.clamp(0.0, 1.0) * 65535.0).round() as u16]);
        }
        buf.save_with_format(path, ImageFormat::Png).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(12, 5), 4);
        assert_eq!(reflect(-7, 3), 1);
        assert_eq!(reflect(3, 1), 0);
        for i in -50..50 {
            assert!(reflect(i, 4) < 4);
        }
    }

    #[test]
    fn centered_patch_interior_matches_crop() {
        let img = RgbImage::from_fn(30, 25, |x, y| [x as f64 / 30.0, y as f64 / 25.0, 0.5]);
        let mut p = vec![0.0; 1200];
        img.centered_patch(15, 12, 20, &mut p);
        assert_eq!(p, img.crop_chw(5, 2, 20));
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(7, 5, |x, y| [x as f64 / 6.0, y as f64 / 4.0, 1.0 - x as f64 / 6.0]);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            let back = RgbImage::load(&p).unwrap();
            assert_eq!((back.width(), back.height()), (7, 5));
            for (a, b) in back.pixels().iter().zip(img.pixels()) {
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
                }
            }
        }
        let ppm = std::fs::read(dir.path().join("a.ppm")).unwrap();
        assert_eq!(&ppm[..2], b"P6");
    }

    #[test]
    fn png16_keeps_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let plane = Plane::from_fn(4, 3, |x, y| 0.1 + 0.05 * x as f64 + 0.2 * y as f64);
        plane.save_png16(&p).unwrap();
        let back = Plane::load(&p).unwrap();
        for (a, b) in back.data().iter().zip(plane.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        let decoded = image::open(&p).unwrap();
        assert_eq!(decoded.color(), image::ColorType::L16);
    }
}
