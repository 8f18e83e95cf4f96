//! Single-image dehazing: atmospheric light from the dark channel, white
//! balance, per-pixel transmission from network features and the forest,
//! guided-filter refinement, radiance recovery and exposure adjustment.

use crate::error::{Error, Result};
use crate::forest::ForestModel;
use crate::imaging::{luma, Plane, RgbImage};
use crate::net::{NetworkModel, FEATURE_DIM, PATCH};
use crate::nn::Tensor;
use crate::par::Exec;

/// Lower bound on `A` channels, keeping white balance defined.
pub const A_FLOOR: f64 = 1e-3;
/// Transmission floor used during recovery.
pub const T_RECOVER_FLOOR: f64 = 0.05;
/// Lower clamp of refined transmission maps.
pub const T_MIN: f64 = 1e-3;
/// Largest exposure gain applied.
pub const LAMBDA_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtmosphericLight(pub [f64; 3]);

/// Per-pixel transmission in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap(Plane);

impl TransmissionMap {
    pub fn new(plane: Plane) -> Result<Self> {
        if let Some(v) = plane.data().iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidArgument(format!("transmission {v} outside (0, 1]")));
        }
        Ok(TransmissionMap(plane))
    }

    pub fn constant(width: usize, height: usize, t: f64) -> Result<Self> {
        Self::new(Plane::filled(width, height, t))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }
}

/// Exposure gain `λ ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExposureFactor(pub f64);

#[derive(Clone, Debug, PartialEq)]
pub struct DehazeOptions {
    pub dark_window: usize,
    /// Transmission is predicted every `stride` pixels and filled in by
    /// nearest neighbour.
    pub stride: usize,
    pub guided_radius: usize,
    pub guided_eps: f64,
    pub exec: Exec,
}

impl Default for DehazeOptions {
    fn default() -> Self {
        DehazeOptions {
            dark_window: 15,
            stride: 1,
            guided_radius: 40,
            guided_eps: 1e-3,
            exec: Exec::default(),
        }
    }
}

/// Separable running minimum over a `(2r+1)²` window clipped at the edges.
fn min_filter(p: &Plane, r: usize) -> Plane {
    let (w, h) = (p.width(), p.height());
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = (lo..=hi).map(|i| p.get(i, y)).fold(f64::INFINITY, f64::min);
        }
    }
    Plane::from_fn(w, h, |x, y| {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        (lo..=hi).map(|j| rows[j * w + x]).fold(f64::INFINITY, f64::min)
    })
}

/// Minimum over colour channels and the `window × window` neighbourhood.
pub fn dark_channel(image: &RgbImage, window: usize) -> Result<Plane> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("dark-channel window {window} must be odd")));
    }
    let mins = Plane::from_fn(image.width(), image.height(), |x, y| {
        let p = image.get(x, y);
        p[0].min(p[1]).min(p[2])
    });
    Ok(min_filter(&mins, window / 2))
}

/// Mean colour of the `max(1, ⌈0.001·N⌉)` pixels with the largest dark
/// channel. Among equal dark values brighter pixels win, then row-major
/// order.
pub fn estimate_atmospheric_light(image: &RgbImage, window: usize) -> Result<AtmosphericLight> {
    if image.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let dark = dark_channel(image, window)?;
    let n = image.len();
    let k = ((n as f64 * 0.001).ceil() as usize).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    let key = |i: usize| (dark.data()[i], luma(image.pixels()[i]));
    idx.sort_by(|&a, &b| {
        let (da, la) = key(a);
        let (db, lb) = key(b);
        db.total_cmp(&da).then(lb.total_cmp(&la)).then(a.cmp(&b))
    });
    let mut sum = [0.0; 3];
    for &i in &idx[..k] {
        let p = image.pixels()[i];
        (0..3).for_each(|c| sum[c] += p[c]);
    }
    Ok(AtmosphericLight(sum.map(|s| (s / k as f64).clamp(A_FLOOR, 1.0))))
}

/// Divides each channel by `A`. Values may exceed 1.
pub fn white_balance(image: &RgbImage, a: AtmosphericLight) -> RgbImage {
    let a = a.0;
    image.map(|p| [p[0] / a[0], p[1] / a[1], p[2] / a[2]])
}

/// Maps output coordinate `i` to the nearest coordinate on the `stride`
/// grid that lies inside `0..n`.
fn nearest_on_grid(i: usize, stride: usize, n: usize) -> usize {
    let lo = i / stride * stride;
    let hi = lo + stride;
    if hi < n && hi - i < i - lo {
        hi
    } else {
        lo
    }
}

/// Initial per-pixel transmission: forest prediction from the network
/// features of the 20×20 patch centred on each pixel.
pub fn transmission_map(
    image: &RgbImage,
    net: &NetworkModel,
    forest: &ForestModel,
    stride: usize,
    exec: Exec,
) -> Result<TransmissionMap> {
    if !net.is_trained() {
        return Err(Error::Untrained("network"));
    }
    if forest.dim() != FEATURE_DIM {
        return Err(Error::shape("transmission_map", format!("{FEATURE_DIM}-D forest"), forest.dim()));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let (w, h) = (image.width(), image.height());
    let gw = w.div_ceil(stride);
    let gh = h.div_ceil(stride);
    const CHUNK: usize = 256;
    let patch_len = 3 * PATCH * PATCH;
    let total = gw * gh;
    let parts = exec.map(total.div_ceil(CHUNK), |c| -> Result<Vec<f64>> {
        let range = c * CHUNK..((c + 1) * CHUNK).min(total);
        let mut data = vec![0.0f32; range.len() * patch_len];
        for (k, g) in range.clone().enumerate() {
            let (gx, gy) = (g % gw, g / gw);
            image.centered_patch(gx * stride, gy * stride, PATCH, &mut data[k * patch_len..(k + 1) * patch_len]);
        }
        let patches = Tensor::from_vec([range.len(), 3, PATCH, PATCH], data)?;
        let features = net.extract_features(&patches)?;
        forest.predict_batch(&features, Exec::Sequential)
    });
    let mut grid = Vec::with_capacity(total);
    for p in parts {
        grid.extend(p?);
    }
    let plane = Plane::from_fn(w, h, |x, y| {
        let gx = nearest_on_grid(x, stride, w) / stride;
        let gy = nearest_on_grid(y, stride, h) / stride;
        grid[gy * gw + gx].clamp(T_MIN, 1.0)
    });
    TransmissionMap::new(plane)
}

/// Windowed means over `(2r+1)²` boxes clipped at the image edges.
struct BoxMean {
    w: usize,
    h: usize,
    r: usize,
}

impl BoxMean {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let (w, h, r) = (self.w, self.h, self.r);
        // Summed-area table with a zero border row and column.
        let mut s = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += v[y * w + x];
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let sum = s[y1 * (w + 1) + x1] - s[y0 * (w + 1) + x1] - s[y1 * (w + 1) + x0] + s[y0 * (w + 1) + x0];
                out[y * w + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
        out
    }
}

/// Edge-preserving smoothing of `target` by local linear models of `guide`,
/// clamped into `[T_MIN, 1]`.
pub fn guided_filter(guide: &Plane, target: &TransmissionMap, radius: usize, eps: f64) -> Result<TransmissionMap> {
    let q = guided_filter_raw(guide, target.plane(), radius, eps)?;
    TransmissionMap::new(Plane::from_vec(
        q.width(),
        q.height(),
        q.into_vec().into_iter().map(|v| v.clamp(T_MIN, 1.0)).collect(),
    )?)
}

/// Guided filter without the output clamp.
pub fn guided_filter_raw(guide: &Plane, target: &Plane, radius: usize, eps: f64) -> Result<Plane> {
    let (w, h) = (guide.width(), guide.height());
    if target.width() != w || target.height() != h {
        return Err(Error::shape(
            "guided_filter",
            format!("{w}x{h}"),
            format!("{}x{}", target.width(), target.height()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("guided-filter eps {eps} must be positive")));
    }
    let bm = BoxMean { w, h, r: radius };
    let i = guide.data();
    let p = target.data();
    let mean_i = bm.apply(i);
    let mean_p = bm.apply(p);
    let ii: Vec<f64> = i.iter().map(|v| v * v).collect();
    let ip: Vec<f64> = i.iter().zip(p).map(|(a, b)| a * b).collect();
    let corr_ii = bm.apply(&ii);
    let corr_ip = bm.apply(&ip);
    let mut a = vec![0.0; w * h];
    let mut b = vec![0.0; w * h];
    for k in 0..w * h {
        let var = corr_ii[k] - mean_i[k] * mean_i[k];
        let cov = corr_ip[k] - mean_i[k] * mean_p[k];
        a[k] = cov / (var + eps);
        b[k] = mean_p[k] - a[k] * mean_i[k];
    }
    let mean_a = bm.apply(&a);
    let mean_b = bm.apply(&b);
    Plane::from_vec(w, h, (0..w * h).map(|k| mean_a[k] * i[k] + mean_b[k]).collect())
}

fn check_same_size(image: &RgbImage, t: &TransmissionMap) -> Result<()> {
    if image.width() != t.width() || image.height() != t.height() {
        return Err(Error::shape(
            "recover",
            format!("{}x{}", image.width(), image.height()),
            format!("{}x{}", t.width(), t.height()),
        ));
    }
    Ok(())
}

/// `(I − A) / max(t, 0.05) + A` without clamping.
pub fn recover_unclamped(image: &RgbImage, a: AtmosphericLight, t: &TransmissionMap) -> Result<RgbImage> {
    check_same_size(image, t)?;
    let a = a.0;
    let mut out = image.clone();
    for (k, p) in out.pixels_mut().iter_mut().enumerate() {
        let tk = t.plane().data()[k].max(T_RECOVER_FLOOR);
        for c in 0..3 {
            p[c] = (p[c] - a[c]) / tk + a[c];
        }
    }
    Ok(out)
}

/// Scene radiance, clamped to `[0, 1]`.
pub fn recover(image: &RgbImage, a: AtmosphericLight, t: &TransmissionMap) -> Result<RgbImage> {
    Ok(recover_unclamped(image, a, t)?.clamped())
}

/// `λ = ln(ΣIˡ / ΣJˡ) + 1`, kept within `[1, LAMBDA_MAX]`.
pub fn exposure_factor(j: &RgbImage, i: &RgbImage) -> ExposureFactor {
    let sum_i: f64 = i.pixels().iter().map(|&p| luma(p)).sum();
    let sum_j: f64 = j.pixels().iter().map(|&p| luma(p)).sum();
    if sum_j <= 0.0 {
        log::warn!("recovered image is black; exposure gain capped at {LAMBDA_MAX}");
        return ExposureFactor(LAMBDA_MAX);
    }
    let lambda = (sum_i / sum_j).ln() + 1.0;
    if lambda > LAMBDA_MAX {
        log::warn!("exposure gain {lambda:.3} capped at {LAMBDA_MAX}");
        return ExposureFactor(LAMBDA_MAX);
    }
    ExposureFactor(lambda.max(1.0))
}

/// Brightens the recovered image by the exposure gain and clamps.
pub fn exposure_adjust(j: &RgbImage, i: &RgbImage) -> (RgbImage, ExposureFactor) {
    let lambda = exposure_factor(j, i);
    (j.map(|p| p.map(|v| (lambda.0 * v).clamp(0.0, 1.0))), lambda)
}

/// Every stage's result, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct DehazeOutput {
    pub dehazed: RgbImage,
    pub recovered: RgbImage,
    pub atmospheric_light: AtmosphericLight,
    pub white_balanced: RgbImage,
    pub raw_transmission: TransmissionMap,
    pub transmission: TransmissionMap,
    pub exposure: ExposureFactor,
}

pub fn dehaze(image: &RgbImage, net: &NetworkModel, forest: &ForestModel, opts: &DehazeOptions) -> Result<DehazeOutput> {
    if image.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let atmospheric_light =
        estimate_atmospheric_light(image, opts.dark_window).map_err(|e| e.in_stage("atmospheric light"))?;
    let white_balanced = white_balance(image, atmospheric_light);
    let raw_transmission = transmission_map(&white_balanced, net, forest, opts.stride, opts.exec)
        .map_err(|e| e.in_stage("transmission"))?;
    let transmission = guided_filter(&image.luminance(), &raw_transmission, opts.guided_radius, opts.guided_eps)
        .map_err(|e| e.in_stage("guided filter"))?;
    let recovered = recover(image, atmospheric_light, &transmission).map_err(|e| e.in_stage("recovery"))?;
    let (dehazed, exposure) = exposure_adjust(&recovered, image);
    Ok(DehazeOutput {
        dehazed,
        recovered,
        atmospheric_light,
        white_balanced,
        raw_transmission,
        transmission,
        exposure,
    })
}
