//! Evaluation: synthetic benchmark cases, L1 metrics, method comparison and
//! the ablation studies.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;

use crate::baseline::{fit_baseline, BaselineConfig, BaselineKind};
use crate::dehaze::{dehaze, recover, AtmosphericLight, DehazeOptions, TransmissionMap, T_MIN};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig, ForestModel};
use crate::imaging::{Plane, RgbImage};
use crate::net::{
    build_network_with_head, holdout_split, mean_loss, train_on, FeatureLayer, Head, NetworkModel, Placement, Split,
    PATCH, VALIDATION_FRACTION,
};
use crate::nn::{Tensor, TrainConfig};
use crate::par::{substream, Exec};
use crate::procedural;
use crate::synth::{build_dataset, sample_clear_patches, PatchDataset};

/// `t = 0.8·d` for disparity-driven cases.
pub const DISPARITY_SCALE: f64 = 0.8;
/// Normalised disparities are floored here so `t` stays positive.
pub const DISPARITY_FLOOR: f64 = 1.0 / 255.0;

#[derive(Clone, Debug, PartialEq)]
pub enum HazeMode {
    Constant(f64),
    /// Disparity normalised to `(0, 1]`.
    Disparity(Plane),
}

/// A clear image, its ground-truth transmission and the hazy image
/// synthesised from them under white atmospheric light.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub name: String,
    pub clear: RgbImage,
    pub transmission: TransmissionMap,
    pub hazy: RgbImage,
    pub disparity: Option<Plane>,
}

pub fn make_eval_case(name: impl Into<String>, clear: RgbImage, mode: HazeMode) -> Result<EvalCase> {
    let (w, h) = (clear.width(), clear.height());
    let (t, disparity) = match mode {
        HazeMode::Constant(t) => {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidArgument(format!("transmission {t} outside (0, 1]")));
            }
            (Plane::filled(w, h, t), None)
        }
        HazeMode::Disparity(d) => {
            if d.width() != w || d.height() != h {
                return Err(Error::shape(
                    "disparity",
                    format!("{w}x{h}"),
                    format!("{}x{}", d.width(), d.height()),
                ));
            }
            if let Some(v) = d.data().iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
                return Err(Error::InvalidArgument(format!("disparity {v} outside (0, 1]")));
            }
            let t = Plane::from_fn(w, h, |x, y| (DISPARITY_SCALE * d.get(x, y)).min(DISPARITY_SCALE));
            (t, Some(d))
        }
    };
    let hazy = RgbImage::from_fn(w, h, |x, y| {
        let tv = t.get(x, y);
        clear.get(x, y).map(|j| j * tv + (1.0 - tv))
    });
    Ok(EvalCase {
        name: name.into(),
        clear,
        transmission: TransmissionMap::new(t)?,
        hazy,
        disparity,
    })
}

/// Scales raw disparities so the maximum is 1, flooring at
/// [`DISPARITY_FLOOR`].
pub fn normalize_disparity(raw: &Plane) -> Result<Plane> {
    let max = raw.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::InvalidArgument("disparity map has no positive values".into()));
    }
    Plane::from_vec(
        raw.width(),
        raw.height(),
        raw.data().iter().map(|v| (v / max).clamp(DISPARITY_FLOOR, 1.0)).collect(),
    )
}

/// Linear ramp from 0.25 to 1 along one of four directions.
pub fn disparity_ramp(width: usize, height: usize, direction: usize) -> Plane {
    let (w, h) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
    Plane::from_fn(width, height, |x, y| {
        let u = match direction % 4 {
            0 => y as f64 / h,
            1 => 1.0 - y as f64 / h,
            2 => x as f64 / w,
            _ => (x as f64 / w + y as f64 / h) / 2.0,
        };
        0.25 + 0.75 * u
    })
}

/// `count` cases from procedural scenes, alternating constant
/// transmission and disparity ramps.
pub fn procedural_cases(count: usize, size: usize, seed: u64) -> Result<Vec<EvalCase>> {
    let images = procedural::corpus(count, size, size, seed ^ 0xe7a1);
    images
        .into_iter()
        .enumerate()
        .map(|(i, clear)| {
            if i % 2 == 0 {
                let t = 0.3 + 0.5 * ((i / 2) as f64 / (count.div_ceil(2).max(2) - 1) as f64);
                make_eval_case(format!("case{i:02}-constant"), clear, HazeMode::Constant(t))
            } else {
                let d = disparity_ramp(size, size, i / 2);
                make_eval_case(format!("case{i:02}-disparity"), clear, HazeMode::Disparity(d))
            }
        })
        .collect()
}

/// Reads a directory of case bundles. Each subdirectory holds `clear.png`
/// (or `.ppm`), optionally `disparity.png`, and optionally `meta.txt` with
/// `t=<value>` for a constant-transmission case.
pub fn load_cases(dir: &Path) -> Result<Vec<EvalCase>> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut cases = Vec::new();
    for sub in entries {
        let name = sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(clear_path) = ["clear.png", "clear.ppm"].iter().map(|f| sub.join(f)).find(|p| p.exists()) else {
            log::warn!("{}: no clear image, skipped", sub.display());
            continue;
        };
        let clear = RgbImage::load(&clear_path)?;
        let meta = sub.join("meta.txt");
        let mut t = None;
        if meta.exists() {
            for line in std::fs::read_to_string(&meta)?.lines().map(str::trim) {
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                    Some(("t", v)) => {
                        t = Some(v.parse::<f64>().map_err(|_| {
                            Error::InvalidArgument(format!("{}: bad t `{v}`", meta.display()))
                        })?)
                    }
                    _ => return Err(Error::InvalidArgument(format!("{}: unknown line `{line}`", meta.display()))),
                }
            }
        }
        let disparity = sub.join("disparity.png");
        let mode = match t {
            Some(t) => HazeMode::Constant(t),
            None if disparity.exists() => HazeMode::Disparity(normalize_disparity(&Plane::load(&disparity)?)?),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "{}: needs meta.txt with t=... or disparity.png",
                    sub.display()
                )))
            }
        };
        cases.push(make_eval_case(name, clear, mode)?);
    }
    if cases.is_empty() {
        return Err(Error::NoImages(format!("no case bundles in {}", dir.display())));
    }
    Ok(cases)
}

/// Mean absolute difference of two transmission maps.
pub fn l1_transmission(est: &TransmissionMap, gt: &TransmissionMap) -> Result<f64> {
    let (a, b) = (est.plane(), gt.plane());
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            "l1_transmission",
            format!("{}x{}", b.width(), b.height()),
            format!("{}x{}", a.width(), a.height()),
        ));
    }
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Mean absolute difference over pixels and channels.
pub fn l1_image(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            "l1_image",
            format!("{}x{}", b.width(), b.height()),
            format!("{}x{}", a.width(), a.height()),
        ));
    }
    let n = (3 * a.len()).max(1) as f64;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>())
        .sum();
    Ok(sum / n)
}

/// A dehazing method under evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    /// Returns the hazy input unchanged (transmission taken as 1).
    NoOp,
    /// Recovers with the true atmospheric light and transmission.
    Oracle,
    Pipeline {
        net: &'a NetworkModel,
        forest: &'a ForestModel,
        options: &'a DehazeOptions,
    },
}

impl Method<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Method::NoOp => "no-op",
            Method::Oracle => "oracle",
            Method::Pipeline { .. } => "pipeline",
        }
    }

    fn run(&self, case: &EvalCase) -> Result<(RgbImage, TransmissionMap)> {
        let (w, h) = (case.hazy.width(), case.hazy.height());
        match self {
            Method::NoOp => Ok((case.hazy.clone(), TransmissionMap::constant(w, h, 1.0)?)),
            Method::Oracle => Ok((
                recover(&case.hazy, AtmosphericLight([1.0; 3]), &case.transmission)?,
                case.transmission.clone(),
            )),
            Method::Pipeline { net, forest, options } => {
                let out = dehaze(&case.hazy, net, forest, options)?;
                Ok((out.dehazed, out.transmission))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub case: String,
    pub method: String,
    pub l1_transmission: Option<f64>,
    pub l1_image: Option<f64>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<CaseResult>,
}

impl EvalReport {
    /// Method labels in first-seen order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a CaseResult> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Mean L1 in transmission and image over the successful cases of
    /// `method`.
    pub fn average(&self, method: &str) -> (Option<f64>, Option<f64>) {
        let mean = |f: fn(&CaseResult) -> Option<f64>| {
            let v: Vec<f64> = self.rows_for(method).filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        (mean(|r| r.l1_transmission), mean(|r| r.l1_image))
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// `case,method,l1_transmission,l1_image,error` rows followed by one
    /// `average` row per method. Timings are left out so reruns compare
    /// equal.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(w, "case,method,l1_transmission,l1_image,error")?;
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            writeln!(w, "{},{},{},{},{}", r.case, r.method, f(r.l1_transmission), f(r.l1_image), err)?;
        }
        for m in self.methods() {
            let (t, i) = self.average(&m);
            writeln!(w, "average,{m},{},{},", f(t), f(i))?;
        }
        Ok(())
    }

    /// Aligned table: one row per case, a column pair per method.
    pub fn to_text(&self) -> String {
        let methods = self.methods();
        let mut cases: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !cases.contains(&r.case.as_str()) {
                cases.push(&r.case);
            }
        }
        let width = cases.iter().map(|c| c.len()).max().unwrap_or(4).max(7);
        let mut s = String::new();
        let _ = write!(s, "{:width$}", "case");
        for m in &methods {
            let _ = write!(s, "  {:>21}", format!("{m} (t / image)"));
        }
        s.push('\n');
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        for c in &cases {
            let _ = write!(s, "{c:width$}");
            for m in &methods {
                let r = self.rows.iter().find(|r| r.case == *c && r.method == *m);
                let text = match r {
                    Some(r) if r.error.is_some() => "failed".to_string(),
                    Some(r) => format!("{} / {}", cell(r.l1_transmission), cell(r.l1_image)),
                    None => "-".into(),
                };
                let _ = write!(s, "  {text:>21}");
            }
            s.push('\n');
        }
        let _ = write!(s, "{:width$}", "average");
        for m in &methods {
            let (t, i) = self.average(m);
            let _ = write!(s, "  {:>21}", format!("{} / {}", cell(t), cell(i)));
        }
        s.push('\n');
        let secs: f64 = self.rows.iter().map(|r| r.seconds).sum();
        let _ = writeln!(s, "{} runs, {} failed, {secs:.1}s", self.rows.len(), self.failures());
        s
    }
}

/// Runs every method on every case. Failures are recorded per row and left
/// out of the averages.
pub fn benchmark_methods(cases: &[EvalCase], methods: &[Method<'_>]) -> Result<EvalReport> {
    if cases.is_empty() || methods.is_empty() {
        return Err(Error::InvalidArgument("need at least one case and one method".into()));
    }
    let mut report = EvalReport::default();
    for case in cases {
        for m in methods {
            let start = Instant::now();
            let row = match m.run(case).and_then(|(img, t)| {
                Ok((l1_transmission(&t, &case.transmission)?, l1_image(&img, &case.clear)?))
            }) {
                Ok((lt, li)) => CaseResult {
                    case: case.name.clone(),
                    method: m.label().into(),
                    l1_transmission: Some(lt),
                    l1_image: Some(li),
                    error: None,
                    seconds: 0.0,
                },
                Err(e) => {
                    log::error!("{} on {}: {e}", m.label(), case.name);
                    CaseResult {
                        case: case.name.clone(),
                        method: m.label().into(),
                        l1_transmission: None,
                        l1_image: None,
                        error: Some(e.to_string()),
                        seconds: 0.0,
                    }
                }
            };
            report.rows.push(CaseResult {
                seconds: start.elapsed().as_secs_f64(),
                ..row
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationKind {
    RankingVsPlain,
    Placement,
    FeatureLayer,
    Regressor,
    EndToEnd,
    DataSize,
}

impl AblationKind {
    pub const ALL: [AblationKind; 6] = [
        AblationKind::RankingVsPlain,
        AblationKind::Placement,
        AblationKind::FeatureLayer,
        AblationKind::Regressor,
        AblationKind::EndToEnd,
        AblationKind::DataSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::RankingVsPlain => "ranking-vs-plain",
            AblationKind::Placement => "placement",
            AblationKind::FeatureLayer => "feature-layer",
            AblationKind::Regressor => "regressor",
            AblationKind::EndToEnd => "end-to-end",
            AblationKind::DataSize => "data-size",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown ablation `{s}` (ranking-vs-plain|placement|feature-layer|regressor|end-to-end|data-size)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regressor {
    Forest,
    Baseline(BaselineKind),
}

impl Regressor {
    pub fn name(self) -> &'static str {
        match self {
            Regressor::Forest => "forest",
            Regressor::Baseline(k) => k.name(),
        }
    }
}

fn feature_layer_name(f: FeatureLayer) -> &'static str {
    match f {
        FeatureLayer::Pool2 => "pool2",
        FeatureLayer::Fc1 => "fc1",
        FeatureLayer::Fc2 => "fc2",
    }
}

/// Everything that defines one ablation arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmConfig {
    pub placement: Placement,
    pub head: Head,
    pub feature_layer: FeatureLayer,
    pub regressor: Regressor,
    pub clear_patches: usize,
    pub per_patch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub forest_samples: usize,
    pub trees: usize,
}

impl Default for ArmConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ArmConfig {
            placement: Placement::default(),
            head: Head::Classifier,
            feature_layer: FeatureLayer::Fc2,
            regressor: Regressor::Forest,
            clear_patches: 2000,
            per_patch: 10,
            epochs: t.epochs,
            batch_size: t.batch_size,
            initial_lr: t.initial_lr,
            momentum: t.momentum,
            seed: 0,
            forest_samples: 10_000,
            trees: 200,
        }
    }
}

impl ArmConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            initial_lr: self.initial_lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            rng_seed: self.seed,
        }
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        let head = match self.head {
            Head::Classifier => "classifier",
            Head::Regression => "regression",
        };
        format!(
            "placement={}\nhead={head}\nfeature_layer={}\nregressor={}\nclear_patches={}\nper_patch={}\n\
             epochs={}\nbatch_size={}\ninitial_lr={}\nmomentum={}\nseed={}\nforest_samples={}\ntrees={}\n",
            self.placement,
            feature_layer_name(self.feature_layer),
            self.regressor.name(),
            self.clear_patches,
            self.per_patch,
            self.epochs,
            self.batch_size,
            self.initial_lr,
            self.momentum,
            self.seed,
            self.forest_samples,
            self.trees,
        )
    }

    /// Identifies the trained network: every field that affects training.
    fn train_key(&self) -> String {
        format!(
            "{}|{:?}|{}|{}|{}|{}|{}|{}|{}",
            self.placement,
            self.head,
            self.clear_patches,
            self.per_patch,
            self.epochs,
            self.batch_size,
            self.initial_lr,
            self.momentum,
            self.seed
        )
    }
}

/// The arms of an ablation: labels with configs that differ from `base` in
/// the studied factor only.
pub fn arms(kind: AblationKind, base: &ArmConfig, data_sizes: &[usize]) -> Vec<(String, ArmConfig)> {
    let with = |f: &dyn Fn(&mut ArmConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match kind {
        AblationKind::RankingVsPlain => vec![
            ("ranking".into(), with(&|c| c.placement = Placement::AfterPool1)),
            ("plain".into(), with(&|c| c.placement = Placement::None)),
        ],
        AblationKind::Placement => Placement::ALL[..5]
            .iter()
            .map(|&p| (format!("after-{p}"), with(&|c| c.placement = p)))
            .collect(),
        AblationKind::FeatureLayer => [FeatureLayer::Pool2, FeatureLayer::Fc1, FeatureLayer::Fc2]
            .into_iter()
            .map(|f| (feature_layer_name(f).to_string(), with(&|c| c.feature_layer = f)))
            .collect(),
        AblationKind::Regressor => [
            Regressor::Forest,
            Regressor::Baseline(BaselineKind::Linear),
            Regressor::Baseline(BaselineKind::LogisticLink),
            Regressor::Baseline(BaselineKind::Kernel),
        ]
        .into_iter()
        .map(|r| (r.name().to_string(), with(&|c| c.regressor = r)))
        .collect(),
        AblationKind::EndToEnd => vec![
            ("classifier+forest".into(), with(&|c| c.head = Head::Classifier)),
            ("regression-head".into(), with(&|c| c.head = Head::Regression)),
        ],
        AblationKind::DataSize => data_sizes
            .iter()
            .map(|&n| (format!("{n}-patches"), with(&|c| c.clear_patches = n)))
            .collect(),
    }
}

/// Outcome of one arm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArmResult {
    pub label: String,
    pub config: String,
    /// Mean absolute transmission error on the validation patches.
    pub val_l1: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Loss of the untrained network on the validation patches.
    pub initial_loss: Option<f64>,
    pub first_epoch_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// First epoch whose mean loss is at most half the initial loss.
    pub epochs_to_half: Option<usize>,
    pub importance_sum: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub name: String,
    pub rows: Vec<ArmResult>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&ArmResult> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(
            w,
            "ablation,arm,val_l1,val_accuracy,initial_loss,first_epoch_loss,final_loss,epochs_to_half,importance_sum,error"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                self.name,
                r.label,
                f(r.val_l1),
                f(r.val_accuracy),
                f(r.initial_loss),
                f(r.first_epoch_loss),
                f(r.final_loss),
                r.epochs_to_half.map(|e| e.to_string()).unwrap_or_default(),
                f(r.importance_sum),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
        let mut s = format!("ablation: {}\n", self.name);
        let _ = writeln!(
            s,
            "{:width$}  {:>8}  {:>8}  {:>10}  {:>10}  {:>8}  {:>10}",
            "arm", "val L1", "val acc", "first loss", "final loss", "half at", "importance"
        );
        for r in &self.rows {
            if let Some(e) = &r.error {
                let _ = writeln!(s, "{:width$}  failed: {e}", r.label);
                continue;
            }
            let _ = writeln!(
                s,
                "{:width$}  {:>8}  {:>8}  {:>10}  {:>10}  {:>8}  {:>10}",
                r.label,
                cell(r.val_l1),
                cell(r.val_accuracy),
                cell(r.first_epoch_loss),
                cell(r.final_loss),
                r.epochs_to_half.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
                r.importance_sum.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into()),
            );
        }
        if let (Some(a), Some(b)) = (self.row("ranking"), self.row("plain")) {
            if let (Some(ea), Some(eb)) = (a.epochs_to_half, b.epochs_to_half) {
                let ratio = ea.max(eb) as f64 / ea.min(eb).max(1) as f64;
                let _ = writeln!(
                    s,
                    "convergence: ranking reaches half its initial loss at epoch {ea}, plain at {eb} (ratio {ratio:.2}{})",
                    if ratio <= 2.0 { ", comparable" } else { "" }
                );
            }
        }
        s
    }
}

/// A trained network with everything needed to evaluate it.
pub struct Trained {
    pub model: NetworkModel,
    pub history: crate::net::TrainReport,
    pub split: Split,
    pub dataset: Arc<PatchDataset>,
    pub initial_loss: f64,
}

/// Shared state for ablation runs: one pool of clear patches and caches of
/// datasets and trained networks, so arms that only differ after training
/// reuse the same network.
pub struct Experiment {
    clear: Vec<Vec<f32>>,
    data_seed: u64,
    exec: Exec,
    datasets: HashMap<(usize, usize), Arc<PatchDataset>>,
    trained: HashMap<String, Arc<Trained>>,
}

/// Procedural source images used by [`Experiment::procedural`].
pub const CORPUS_IMAGES: usize = 24;
pub const CORPUS_SIZE: usize = 128;

impl Experiment {
    /// Clear patches come from `images`; patch `i` is the same whatever
    /// the total, so smaller arms use a prefix.
    pub fn from_images(images: &[RgbImage], max_patches: usize, data_seed: u64, exec: Exec) -> Result<Self> {
        let clear = sample_clear_patches(images, max_patches, PATCH, data_seed.wrapping_add(1))?;
        Ok(Experiment {
            clear,
            data_seed,
            exec,
            datasets: HashMap::new(),
            trained: HashMap::new(),
        })
    }

    pub fn procedural(max_patches: usize, data_seed: u64, exec: Exec) -> Result<Self> {
        let images = procedural::corpus(CORPUS_IMAGES, CORPUS_SIZE, CORPUS_SIZE, data_seed);
        Self::from_images(&images, max_patches, data_seed, exec)
    }

    pub fn dataset(&mut self, clear_patches: usize, per_patch: usize) -> Result<Arc<PatchDataset>> {
        if clear_patches == 0 || clear_patches > self.clear.len() {
            return Err(Error::InvalidArgument(format!(
                "{clear_patches} clear patches requested, pool holds {}",
                self.clear.len()
            )));
        }
        if let Some(d) = self.datasets.get(&(clear_patches, per_patch)) {
            return Ok(d.clone());
        }
        let ds = Arc::new(build_dataset(
            &self.clear[..clear_patches],
            per_patch,
            self.data_seed.wrapping_add(2),
            self.exec,
        )?);
        self.datasets.insert((clear_patches, per_patch), ds.clone());
        Ok(ds)
    }

    /// Trains (or fetches) the network described by `arm`.
    pub fn train(&mut self, arm: &ArmConfig) -> Result<Arc<Trained>> {
        let key = arm.train_key();
        if let Some(t) = self.trained.get(&key) {
            return Ok(t.clone());
        }
        let dataset = self.dataset(arm.clear_patches, arm.per_patch)?;
        let split = holdout_split(dataset.len(), VALIDATION_FRACTION, arm.seed);
        let mut model = build_network_with_head(arm.placement, arm.head, arm.seed);
        model.assume_trained();
        let probe = if split.validation.is_empty() { &split.train } else { &split.validation };
        let initial_loss = mean_loss(&model, &dataset, probe)?;
        let history = train_on(&mut model, &dataset, &split, &arm.train_config(), |e| {
            log::info!("epoch {} loss {:.4} acc {:?}", e.epoch, e.mean_loss, e.val_accuracy)
        })?;
        let t = Arc::new(Trained {
            model,
            history,
            split,
            dataset,
            initial_loss,
        });
        self.trained.insert(key, t.clone());
        Ok(t)
    }

    /// Trains if needed, fits the arm's regressor on training-patch
    /// features and scores it on the validation patches.
    pub fn evaluate(&mut self, arm: &ArmConfig) -> Result<ArmResult> {
        let t = self.train(arm)?;
        let ds = &t.dataset;
        let val = if t.split.validation.is_empty() { &t.split.train } else { &t.split.validation };
        let val_t: Vec<f64> = val.iter().map(|&i| ds.samples[i].t).collect();
        let hist = &t.history.history;
        let mut result = ArmResult {
            config: arm.to_text(),
            val_accuracy: hist.last().and_then(|e| e.val_accuracy),
            initial_loss: Some(t.initial_loss),
            first_epoch_loss: hist.first().map(|e| e.mean_loss),
            final_loss: hist.last().map(|e| e.mean_loss),
            epochs_to_half: hist.iter().find(|e| e.mean_loss <= 0.5 * t.initial_loss).map(|e| e.epoch),
            ..Default::default()
        };
        let mae = |pred: &[f64]| pred.iter().zip(&val_t).map(|(p, y)| (p - y).abs()).sum::<f64>() / val_t.len() as f64;

        if arm.head == Head::Regression {
            let refs: Vec<&[f32]> = val.iter().map(|&i| ds.samples[i].hazy.as_slice()).collect();
            let mut pred = Vec::with_capacity(val.len());
            for chunk in refs.chunks(256) {
                let mut data = Vec::with_capacity(chunk.len() * 3 * PATCH * PATCH);
                chunk.iter().for_each(|r| data.extend_from_slice(r));
                let y = t.model.logits(&Tensor::from_vec([chunk.len(), 3, PATCH, PATCH], data)?)?;
                pred.extend(y.data().iter().map(|&v| (v as f64).clamp(T_MIN, 1.0)));
            }
            result.val_l1 = Some(mae(&pred));
            return Ok(result);
        }

        let (xf, train_t) = self.regressor_training_set(&t, arm)?;
        let val_refs: Vec<&[f32]> = val.iter().map(|&i| ds.samples[i].hazy.as_slice()).collect();
        let dim = t.model.feature_dim(arm.feature_layer);
        let vf = t.model.features_for(&val_refs, arm.feature_layer, self.exec)?;
        let pred = match arm.regressor {
            Regressor::Forest => {
                let cfg = ForestConfig {
                    n_trees: arm.trees,
                    seed: arm.seed,
                    ..Default::default()
                };
                let forest = fit_forest(&xf, dim, &train_t, &cfg, self.exec)?;
                result.importance_sum = Some(forest.feature_importance().iter().sum());
                forest.predict_batch(&vf, self.exec)?
            }
            Regressor::Baseline(kind) => {
                let cfg = BaselineConfig {
                    seed: arm.seed,
                    ..Default::default()
                };
                fit_baseline(kind, &xf, dim, &train_t, &cfg)?.predict_batch(&vf, self.exec)?
            }
        };
        result.val_l1 = Some(mae(&pred));
        Ok(result)
    }

    /// Features and targets of up to `arm.forest_samples` training patches,
    /// drawn without replacement.
    fn regressor_training_set(&self, t: &Trained, arm: &ArmConfig) -> Result<(Vec<f32>, Vec<f64>)> {
        let pool = &t.split.train;
        let m = arm.forest_samples.min(pool.len());
        let mut pick: Vec<usize> = sample(&mut substream(arm.seed, 0xf0e5), pool.len(), m)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        pick.sort_unstable();
        let refs: Vec<&[f32]> = pick.iter().map(|&i| t.dataset.samples[i].hazy.as_slice()).collect();
        let targets = pick.iter().map(|&i| t.dataset.samples[i].t).collect();
        Ok((t.model.features_for(&refs, arm.feature_layer, self.exec)?, targets))
    }

    /// The trained network of `arm` and a forest fitted on its features.
    pub fn network_and_forest(&mut self, arm: &ArmConfig) -> Result<(Arc<Trained>, ForestModel)> {
        let t = self.train(arm)?;
        let (xf, yt) = self.regressor_training_set(&t, arm)?;
        let cfg = ForestConfig {
            n_trees: arm.trees,
            seed: arm.seed,
            ..Default::default()
        };
        let forest = fit_forest(&xf, t.model.feature_dim(arm.feature_layer), &yt, &cfg, self.exec)?;
        Ok((t, forest))
    }

    /// Runs every arm of `kind`; a failing arm is recorded and the rest
    /// still run.
    pub fn run(&mut self, kind: AblationKind, base: &ArmConfig, data_sizes: &[usize]) -> AblationReport {
        let rows = arms(kind, base, data_sizes)
            .into_iter()
            .map(|(label, cfg)| {
                log::info!("ablation {kind}: arm {label}");
                match self.evaluate(&cfg) {
                    Ok(r) => ArmResult { label, ..r },
                    Err(e) => {
                        log::error!("ablation {kind}: arm {label} failed: {e}");
                        ArmResult {
                            label,
                            config: cfg.to_text(),
                            error: Some(e.to_string()),
                            ..Default::default()
                        }
                    }
                }
            })
            .collect();
        AblationReport {
            name: kind.name().into(),
            rows,
        }
    }
}

/// Settings for a standalone ablation run on procedural data.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub base: ArmConfig,
    pub data_seed: u64,
    /// Clear-patch counts for the data-size study.
    pub data_sizes: Vec<usize>,
    pub exec: Exec,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let base = ArmConfig::default();
        let n = base.clear_patches;
        AblationConfig {
            data_sizes: vec![n / 4, n / 2, n],
            base,
            data_seed: 0,
            exec: Exec::default(),
        }
    }
}

pub fn run_ablation(kind: AblationKind, config: &AblationConfig) -> Result<AblationReport> {
    let max = match kind {
        AblationKind::DataSize => config.data_sizes.iter().copied().max().unwrap_or(0),
        _ => config.base.clear_patches,
    };
    let mut exp = Experiment::procedural(max.max(1), config.data_seed, config.exec)?;
    Ok(exp.run(kind, &config.base, &config.data_sizes))
}
