//! Procedural clear images for hermetic training and tests.
//!
//! The textures loosely imitate outdoor content: smooth gradients, hard
//! edges, colored noise, grass blades, fences in front of foliage and
//! composite scenes with a sky band. Most of them contain shadows and
//! saturated colors, so local patches usually have a dark channel near
//! zero the way natural haze-free photographs do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Gradient,
    Checkerboard,
    ColoredNoise,
    Grass,
    Fence,
    Scene,
}

impl Texture {
    pub const ALL: [Texture; 6] = [
        Texture::Gradient,
        Texture::Checkerboard,
        Texture::ColoredNoise,
        Texture::Grass,
        Texture::Fence,
        Texture::Scene,
    ];
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // saturated-ish: one channel forced low, as in most natural surfaces
    let mut c = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let k = rng.random_range(0..3);
    c[k] *= 0.25;
    c
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Bilinearly interpolated lattice noise in `[0, 1]`.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = cells + 2;
        ValueNoise {
            cells,
            lattice: (0..n * n).map(|_| rng.random()).collect(),
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let n = self.cells + 2;
        let x = u.clamp(0.0, 1.0) * self.cells as f64;
        let y = v.clamp(0.0, 1.0) * self.cells as f64;
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let l = |i: usize, j: usize| self.lattice[j * n + i];
        let top = l(x0, y0) + (l(x0 + 1, y0) - l(x0, y0)) * sx;
        let bot = l(x0, y0 + 1) + (l(x0 + 1, y0 + 1) - l(x0, y0 + 1)) * sx;
        top + (bot - top) * sy
    }
}

fn shade(c: [f64; 3], s: f64) -> [f64; 3] {
    c.map(|v| (v * s).clamp(0.0, 1.0))
}

/// Renders one texture.
pub fn generate(texture: Texture, width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    match texture {
        Texture::Gradient => {
            let a = random_color(&mut rng);
            let b = random_color(&mut rng);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let noise = ValueNoise::new(6, &mut rng);
            RgbImage::from_fn(width, height, |x, y| {
                let (u, v) = (x as f64 / w, y as f64 / h);
                let t = (((u - 0.5) * dx + (v - 0.5) * dy) + 0.5).clamp(0.0, 1.0);
                shade(mix(a, b, t), 0.4 + 0.8 * noise.at(u, v))
            })
        }
        Texture::Checkerboard => {
            let a = random_color(&mut rng);
            let b = shade(random_color(&mut rng), 0.5);
            let cell = rng.random_range(3..12) as usize;
            let noise = ValueNoise::new(8, &mut rng);
            RgbImage::from_fn(width, height, |x, y| {
                let c = if (x / cell + y / cell) % 2 == 0 { a } else { b };
                shade(c, 0.6 + 0.6 * noise.at(x as f64 / w, y as f64 / h))
            })
        }
        Texture::ColoredNoise => {
            let coarse: Vec<ValueNoise> = (0..3).map(|_| ValueNoise::new(10, &mut rng)).collect();
            let fine_amp = rng.random_range(0.05..0.3);
            let mut fine = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
            RgbImage::from_fn(width, height, |x, y| {
                let (u, v) = (x as f64 / w, y as f64 / h);
                let mut p = [0.0; 3];
                for c in 0..3 {
                    let base = coarse[c].at(u, v);
                    p[c] = (base * base + fine_amp * (fine.random::<f64>() - 0.5)).clamp(0.0, 1.0);
                }
                p
            })
        }
        Texture::Grass => {
            let dark = [0.02, rng.random_range(0.05..0.15), 0.01];
            let light = [rng.random_range(0.3..0.6), rng.random_range(0.6..0.9), rng.random_range(0.1..0.3)];
            let mut img = RgbImage::from_fn(width, height, |_, _| shade(dark, 1.0));
            let blades = width * height / 6;
            for _ in 0..blades {
                let x0 = rng.random_range(0.0..w);
                let y0 = rng.random_range(0.0..h);
                let len = rng.random_range(4.0..14.0);
                let lean = rng.random_range(-0.5..0.5);
                let tone = rng.random_range(0.3..1.0);
                let c = mix(dark, light, tone);
                for s in 0..len as usize {
                    let t = s as f64 / len;
                    let x = (x0 + lean * s as f64) as isize;
                    let y = (y0 - s as f64) as isize;
                    if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                        img.set(x as usize, y as usize, shade(c, 0.5 + 0.5 * t));
                    }
                }
            }
            img
        }
        Texture::Fence => {
            let noise = ValueNoise::new(12, &mut rng);
            let leaf = [0.1, rng.random_range(0.3..0.6), 0.08];
            let wood = [rng.random_range(0.5..0.8), rng.random_range(0.4..0.6), rng.random_range(0.2..0.4)];
            let period = rng.random_range(6..14) as usize;
            let board = period / 2;
            let rail_y = rng.random_range(0.2..0.4) * h;
            RgbImage::from_fn(width, height, |x, y| {
                let on_board = x % period < board;
                let on_rail = ((y as f64 - rail_y).abs() < 2.0) || ((y as f64 - rail_y - h * 0.4).abs() < 2.0);
                if on_board || on_rail {
                    let edge = if x % period == 0 { 0.4 } else { 1.0 };
                    shade(wood, edge * (0.8 + 0.3 * noise.at(y as f64 / h, x as f64 / w)))
                } else {
                    shade(leaf, 0.2 + 1.2 * noise.at(x as f64 / w, y as f64 / h).powi(2))
                }
            })
        }
        Texture::Scene => {
            let horizon = rng.random_range(0.2..0.45) * h;
            let sky_top = [rng.random_range(0.3..0.5), rng.random_range(0.5..0.7), rng.random_range(0.8..1.0)];
            let sky_bottom = [0.85, 0.9, 0.95];
            let ground = random_color(&mut rng);
            let hills = ValueNoise::new(5, &mut rng);
            let detail = ValueNoise::new(16, &mut rng);
            let blocks: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(2..6))
                .map(|_| {
                    (
                        rng.random_range(0.0..w),
                        rng.random_range(6.0..w / 3.0),
                        rng.random_range(0.2..0.6) * h,
                        random_color(&mut rng),
                    )
                })
                .collect();
            RgbImage::from_fn(width, height, |x, y| {
                let (fx, fy) = (x as f64, y as f64);
                let ridge = horizon + 0.15 * h * (hills.at(fx / w, 0.5) - 0.5);
                for &(bx, bw, bh, c) in &blocks {
                    if fx >= bx && fx < bx + bw && fy >= h - bh - (h - ridge) * 0.3 {
                        let window = (x / 4 + y / 5) % 3 == 0;
                        return shade(c, if window { 0.15 } else { 0.7 + 0.3 * detail.at(fx / w, fy / h) });
                    }
                }
                if fy < ridge {
                    mix(sky_top, sky_bottom, (fy / ridge).clamp(0.0, 1.0))
                } else {
                    let d = detail.at(fx / w, fy / h);
                    shade(ground, 0.2 + 1.0 * d * d + 0.3 * (fy - ridge) / h)
                }
            })
        }
    }
}

/// `count` images cycling through every [`Texture`], each with its own
/// seed derived from `seed`.
pub fn corpus(count: usize, width: usize, height: usize, seed: u64) -> Vec<RgbImage> {
    (0..count)
        .map(|i| {
            let t = Texture::ALL[i % Texture::ALL.len()];
            generate(t, width, height, seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        for t in Texture::ALL {
            let a = generate(t, 40, 30, 5);
            assert_eq!(a, generate(t, 40, 30, 5));
            assert!(a.pixels().iter().flatten().all(|v| (0.0..=1.0).contains(v)), "{t:?}");
        }
    }

    #[test]
    fn textures_have_dark_pixels() {
        // most non-sky content keeps at least one channel low
        for t in [Texture::Grass, Texture::Fence, Texture::Checkerboard, Texture::ColoredNoise] {
            let img = generate(t, 64, 64, 11);
            let dark = img
                .pixels()
                .iter()
                .filter(|p| p.iter().cloned().fold(f64::INFINITY, f64::min) < 0.2)
                .count();
            assert!(dark * 4 > img.len(), "{t:?}: {dark} dark pixels");
        }
    }

    #[test]
    fn corpus_cycles_textures() {
        let c = corpus(7, 24, 24, 1);
        assert_eq!(c.len(), 7);
        assert_ne!(c[0], c[6]);
    }
}
