use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rand::seq::index::sample;

use rankdehaze::dehaze::{dehaze, DehazeOptions};
use rankdehaze::eval::{
    benchmark_methods, load_cases, procedural_cases, AblationConfig, AblationKind, ArmConfig, Experiment, Method,
};
use rankdehaze::forest::{fit_forest, ForestConfig, ForestModel};
use rankdehaze::imaging::RgbImage;
use rankdehaze::net::{build_network, train, FeatureLayer, NetworkModel, Placement};
use rankdehaze::nn::TrainConfig;
use rankdehaze::par::{substream, with_threads, Exec};
use rankdehaze::synth::{build_dataset, read_dataset, sample_clear_patches, write_dataset, PatchDataset};
use rankdehaze::{procedural, Error};

use crate::config::{pick, pick_opt, ConfigFile};
use crate::{AblateArgs, Cli, Command, DehazeArgs, EvalArgs, FitRfArgs, PipelineArgs, SynthArgs, TrainArgs};

/// Source images for `synth --procedural`.
const PROCEDURAL_IMAGES: usize = 24;
const PROCEDURAL_SIZE: usize = 128;

#[derive(Debug)]
pub struct CmdError {
    pub error: anyhow::Error,
    user: bool,
}

impl CmdError {
    pub fn code(&self) -> u8 {
        if self.user {
            2
        } else {
            1
        }
    }
}

fn user(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError { error: e.into(), user: true }
}

/// Whether a library error stems from the inputs rather than from us.
fn is_user_error(e: &Error) -> bool {
    match e {
        Error::InvalidArgument(_)
        | Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Corrupt { .. }
        | Error::NoImages(_)
        | Error::Image { .. }
        | Error::Untrained(_)
        | Error::Shape { .. } => true,
        Error::Io(io) => matches!(
            io.kind(),
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::InvalidData
        ),
        Error::Stage { source, .. } => is_user_error(source),
        _ => false,
    }
}

impl From<anyhow::Error> for CmdError {
    fn from(error: anyhow::Error) -> Self {
        let user = error.chain().any(|c| c.downcast_ref::<Error>().is_some_and(is_user_error));
        CmdError { error, user }
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError { error: e.into(), user: false }
    }
}

type CmdResult<T = ()> = Result<T, CmdError>;

fn required<T>(v: Option<T>, flag: &str) -> CmdResult<T> {
    v.ok_or_else(|| user(anyhow!("missing --{flag}")))
}

fn input_file(p: &Path) -> CmdResult<()> {
    if !p.is_file() {
        return Err(user(anyhow!("input not found: {}", p.display())));
    }
    Ok(())
}

fn output_file(p: &Path) -> CmdResult<()> {
    let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(user(anyhow!("output directory does not exist: {}", parent.display())));
    }
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(p: &Path) -> CmdResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
}

pub fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p).map_err(user)?,
        None => ConfigFile::default(),
    };
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var("RANKDEHAZE_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| user(anyhow!("RANKDEHAZE_THREADS must be a number, got `{v}`")))?,
            ),
            _ => None,
        },
    };
    let threads = pick_opt(threads, &cfg, "threads").map_err(user)?;
    if threads == Some(0) {
        return Err(user(anyhow!("--threads must be at least 1")));
    }
    with_threads(threads, move || match cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::Train(a) => train_cmd(a, &cfg),
        Command::FitRf(a) => fit_rf(a, &cfg),
        Command::Dehaze(a) => dehaze_cmd(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Ablate(a) => ablate(a, &cfg),
    })
}

fn load_image_dir(dir: &Path) -> CmdResult<(Vec<RgbImage>, Vec<String>)> {
    if !dir.is_dir() {
        return Err(user(anyhow!("image directory not found: {}", dir.display())));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pnm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(user(anyhow!("no PNG or PPM images in {}", dir.display())));
    }
    let mut images = Vec::with_capacity(paths.len());
    let mut names = Vec::with_capacity(paths.len());
    for p in paths {
        images.push(RgbImage::load(&p)?);
        names.push(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    Ok((images, names))
}

fn synth(a: SynthArgs, cfg: &ConfigFile) -> CmdResult {
    cfg.check_keys(&["images", "procedural", "out", "patches", "per-patch", "seed", "threads"])
        .map_err(user)?;
    let out = required(pick_opt(a.out, cfg, "out").map_err(user)?, "out")?;
    output_file(&out)?;
    let patches = pick(a.patches, cfg, "patches", 1000).map_err(user)?;
    let per_patch = pick(a.per_patch, cfg, "per-patch", 10).map_err(user)?;
    let seed = pick(a.seed, cfg, "seed", 0).map_err(user)?;
    let procedural = a.procedural || cfg.flag("procedural").map_err(user)?;
    let images_dir: Option<PathBuf> = pick_opt(a.images, cfg, "images").map_err(user)?;
    let (images, sources) = match (images_dir, procedural) {
        (Some(_), true) => return Err(user(anyhow!("--images and --procedural are exclusive"))),
        (Some(dir), false) => load_image_dir(&dir)?,
        (None, true) => {
            let imgs = procedural::corpus(PROCEDURAL_IMAGES, PROCEDURAL_SIZE, PROCEDURAL_SIZE, seed);
            let names = (0..imgs.len()).map(|i| format!("procedural:{seed}:{i}")).collect();
            (imgs, names)
        }
        (None, false) => return Err(user(anyhow!("give --images DIR or --procedural"))),
    };
    let clear = sample_clear_patches(&images, patches, rankdehaze::net::PATCH, seed.wrapping_add(1))?;
    let mut ds = build_dataset(&clear, per_patch, seed.wrapping_add(2), Exec::Parallel)?;
    ds.provenance.sources = sources;
    write_dataset(&out, &ds)?;
    println!("wrote {} samples ({patches} patches x {per_patch}) to {}", ds.len(), out.display());
    println!("bin histogram: {:?}", ds.label_histogram());
    Ok(())
}

fn read_dataset_checked(p: &Path) -> CmdResult<PatchDataset> {
    input_file(p)?;
    let ds = read_dataset(p).with_context(|| format!("reading dataset {}", p.display()))?;
    if ds.patch_size != rankdehaze::net::PATCH || ds.is_empty() {
        return Err(user(anyhow!(
            "{}: need a non-empty dataset of 20x20 patches (found {} samples of {}x{})",
            p.display(),
            ds.len(),
            ds.patch_size,
            ds.patch_size
        )));
    }
    Ok(ds)
}

fn load_model(p: &Path) -> CmdResult<NetworkModel> {
    input_file(p)?;
    Ok(NetworkModel::load(p).with_context(|| format!("reading model {}", p.display()))?)
}

fn load_forest(p: &Path) -> CmdResult<ForestModel> {
    input_file(p)?;
    Ok(ForestModel::load(p).with_context(|| format!("reading forest {}", p.display()))?)
}

fn train_cmd(a: TrainArgs, cfg: &ConfigFile) -> CmdResult {
    cfg.check_keys(&[
        "dataset", "out", "epochs", "batch-size", "lr", "momentum", "seed", "placement", "history", "threads",
    ])
    .map_err(user)?;
    let dataset = required(pick_opt(a.dataset, cfg, "dataset").map_err(user)?, "dataset")?;
    let out = required(pick_opt(a.out, cfg, "out").map_err(user)?, "out")?;
    let history = pick_opt(a.history, cfg, "history").map_err(user)?.unwrap_or_else(|| with_suffix(&out, ".history.csv"));
    input_file(&dataset)?;
    output_file(&out)?;
    output_file(&history)?;
    let d = TrainConfig::default();
    let seed = pick(a.seed, cfg, "seed", 0).map_err(user)?;
    let config = TrainConfig {
        initial_lr: pick(a.lr, cfg, "lr", d.initial_lr).map_err(user)?,
        momentum: pick(a.momentum, cfg, "momentum", d.momentum).map_err(user)?,
        batch_size: pick(a.batch_size, cfg, "batch-size", d.batch_size).map_err(user)?,
        epochs: pick(a.epochs, cfg, "epochs", d.epochs).map_err(user)?,
        rng_seed: seed,
    };
    config.validate()?;
    let placement: Placement = pick_opt(a.placement, cfg, "placement")
        .map_err(user)?
        .map(|s: String| s.parse())
        .transpose()?
        .unwrap_or_default();
    let ds = read_dataset_checked(&dataset)?;
    let mut model = build_network(placement, seed);
    println!(
        "training {placement} placement on {} samples: {} epochs, batch {}",
        ds.len(),
        config.epochs,
        config.batch_size
    );
    let report = train(&mut model, &ds, &config)?;
    for e in &report.history {
        println!(
            "epoch {:>3}  loss {:.4}  val acc {}  lr {:.6}",
            e.epoch,
            e.mean_loss,
            e.val_accuracy.map(|v| format!("{:.3}", v)).unwrap_or_else(|| "-".into()),
            e.lr
        );
    }
    model.save(&out, Some(&config))?;
    let mut w = create(&history)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    println!("wrote {} and {}", out.display(), history.display());
    Ok(())
}

fn fit_rf(a: FitRfArgs, cfg: &ConfigFile) -> CmdResult {
    cfg.check_keys(&["dataset", "model", "out", "samples", "trees", "seed", "importance", "threads"])
        .map_err(user)?;
    let dataset = required(pick_opt(a.dataset, cfg, "dataset").map_err(user)?, "dataset")?;
    let model_path = required(pick_opt(a.model, cfg, "model").map_err(user)?, "model")?;
    let out = required(pick_opt(a.out, cfg, "out").map_err(user)?, "out")?;
    let importance = pick_opt(a.importance, cfg, "importance")
        .map_err(user)?
        .unwrap_or_else(|| with_suffix(&out, ".importance.csv"));
    input_file(&dataset)?;
    input_file(&model_path)?;
    output_file(&out)?;
    output_file(&importance)?;
    let mut samples = pick(a.samples, cfg, "samples", 10_000).map_err(user)?;
    let trees = pick(a.trees, cfg, "trees", 200).map_err(user)?;
    let seed = pick(a.seed, cfg, "seed", 0).map_err(user)?;
    let ds = read_dataset_checked(&dataset)?;
    let model = load_model(&model_path)?;
    if samples > ds.len() {
        log::warn!("--samples {samples} exceeds the dataset; using all {} samples", ds.len());
        samples = ds.len();
    }
    let mut pick_idx = sample(&mut substream(seed, 0xf0e5), ds.len(), samples).into_vec();
    pick_idx.sort_unstable();
    let refs: Vec<&[f32]> = pick_idx.iter().map(|&i| ds.samples[i].hazy.as_slice()).collect();
    let targets: Vec<f64> = pick_idx.iter().map(|&i| ds.samples[i].t).collect();
    let features = model.features_for(&refs, FeatureLayer::Fc2, Exec::Parallel)?;
    let config = ForestConfig {
        n_trees: trees,
        seed,
        ..Default::default()
    };
    let forest = fit_forest(&features, model.feature_dim(FeatureLayer::Fc2), &targets, &config, Exec::Parallel)?;
    forest.save(&out)?;
    let mut w = create(&importance)?;
    forest.write_importance_csv(&mut w)?;
    w.flush()?;
    println!(
        "fitted {trees} trees on {samples} samples; importance sum {:.4}; wrote {} and {}",
        forest.feature_importance().iter().sum::<f64>(),
        out.display(),
        importance.display()
    );
    Ok(())
}

fn pipeline_options(p: &PipelineArgs, cfg: &ConfigFile) -> CmdResult<DehazeOptions> {
    let d = DehazeOptions::default();
    Ok(DehazeOptions {
        dark_window: pick(p.window, cfg, "window", d.dark_window).map_err(user)?,
        stride: pick(p.stride, cfg, "stride", d.stride).map_err(user)?,
        guided_radius: pick(p.radius, cfg, "radius", d.guided_radius).map_err(user)?,
        guided_eps: pick(p.eps, cfg, "eps", d.guided_eps).map_err(user)?,
        exec: Exec::Parallel,
    })
}

const PIPELINE_KEYS: [&str; 4] = ["stride", "radius", "eps", "window"];

fn dehaze_cmd(a: DehazeArgs, cfg: &ConfigFile) -> CmdResult {
    let mut keys = vec!["input", "model", "forest", "out", "emit-transmission", "emit-airlight", "threads"];
    keys.extend(PIPELINE_KEYS);
    cfg.check_keys(&keys).map_err(user)?;
    let input = required(pick_opt(a.input, cfg, "input").map_err(user)?, "input")?;
    let model_path = required(pick_opt(a.model, cfg, "model").map_err(user)?, "model")?;
    let forest_path = required(pick_opt(a.forest, cfg, "forest").map_err(user)?, "forest")?;
    let out = required(pick_opt(a.out, cfg, "out").map_err(user)?, "out")?;
    let emit_t = match pick_opt(a.emit_transmission, cfg, "emit-transmission").map_err(user)? {
        Some(p) if p.as_os_str() == "-" => Some(out.with_extension("transmission.png")),
        other => other,
    };
    let emit_a = a.emit_airlight || cfg.flag("emit-airlight").map_err(user)?;
    let opts = pipeline_options(&a.pipeline, cfg)?;
    input_file(&input)?;
    input_file(&model_path)?;
    input_file(&forest_path)?;
    output_file(&out)?;
    if let Some(p) = &emit_t {
        output_file(p)?;
    }
    let image = RgbImage::load(&input)?;
    let model = load_model(&model_path)?;
    let forest = load_forest(&forest_path)?;
    let result = dehaze(&image, &model, &forest, &opts)?;
    result.dehazed.save(&out)?;
    let a = result.atmospheric_light.0;
    println!(
        "A = ({:.4}, {:.4}, {:.4}); exposure gain {:.4}; wrote {}",
        a[0],
        a[1],
        a[2],
        result.exposure.0,
        out.display()
    );
    if let Some(p) = emit_t {
        result.transmission.plane().save_png16(&p)?;
        println!("wrote {}", p.display());
    }
    if emit_a {
        let p = with_suffix(&out, ".airlight.txt");
        std::fs::write(&p, format!("{} {} {}\n", a[0], a[1], a[2]))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn eval(a: EvalArgs, cfg: &ConfigFile) -> CmdResult {
    let mut keys = vec!["cases", "procedural-cases", "case-size", "model", "forest", "out", "seed", "threads"];
    keys.extend(PIPELINE_KEYS);
    cfg.check_keys(&keys).map_err(user)?;
    let model_path = required(pick_opt(a.model, cfg, "model").map_err(user)?, "model")?;
    let forest_path = required(pick_opt(a.forest, cfg, "forest").map_err(user)?, "forest")?;
    let out = required(pick_opt(a.out, cfg, "out").map_err(user)?, "out")?;
    let cases_dir: Option<PathBuf> = pick_opt(a.cases, cfg, "cases").map_err(user)?;
    let n_proc: Option<usize> = pick_opt(a.procedural_cases, cfg, "procedural-cases").map_err(user)?;
    let size = pick(a.case_size, cfg, "case-size", 96).map_err(user)?;
    let seed = pick(a.seed, cfg, "seed", 0).map_err(user)?;
    let opts = pipeline_options(&a.pipeline, cfg)?;
    input_file(&model_path)?;
    input_file(&forest_path)?;
    output_file(&out)?;
    let cases = match (cases_dir, n_proc) {
        (Some(dir), None) => {
            if !dir.is_dir() {
                return Err(user(anyhow!("case directory not found: {}", dir.display())));
            }
            load_cases(&dir)?
        }
        (None, Some(n)) => procedural_cases(n, size, seed)?,
        (None, None) => procedural_cases(10, size, seed)?,
        (Some(_), Some(_)) => return Err(user(anyhow!("--cases and --procedural-cases are exclusive"))),
    };
    let model = load_model(&model_path)?;
    let forest = load_forest(&forest_path)?;
    let methods = [
        Method::NoOp,
        Method::Oracle,
        Method::Pipeline {
            net: &model,
            forest: &forest,
            options: &opts,
        },
    ];
    let report = benchmark_methods(&cases, &methods)?;
    let mut w = create(&out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let text = report.to_text();
    std::fs::write(out.with_extension("txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn ablate(a: AblateArgs, cfg: &ConfigFile) -> CmdResult {
    cfg.check_keys(&[
        "name", "out", "patches", "per-patch", "epochs", "batch-size", "forest-samples", "trees", "seed", "threads",
    ])
    .map_err(user)?;
    let name: String = required(pick_opt(a.name, cfg, "name").map_err(user)?, "name")?;
    let kind: AblationKind = name.parse()?;
    let out: Option<PathBuf> = pick_opt(a.out, cfg, "out").map_err(user)?;
    if let Some(p) = &out {
        output_file(p)?;
    }
    let d = ArmConfig::default();
    let seed = pick(a.seed, cfg, "seed", 0).map_err(user)?;
    let base = ArmConfig {
        clear_patches: pick(a.patches, cfg, "patches", d.clear_patches).map_err(user)?,
        per_patch: pick(a.per_patch, cfg, "per-patch", d.per_patch).map_err(user)?,
        epochs: pick(a.epochs, cfg, "epochs", d.epochs).map_err(user)?,
        batch_size: pick(a.batch_size, cfg, "batch-size", d.batch_size).map_err(user)?,
        forest_samples: pick(a.forest_samples, cfg, "forest-samples", d.forest_samples).map_err(user)?,
        trees: pick(a.trees, cfg, "trees", d.trees).map_err(user)?,
        seed,
        ..d
    };
    base.train_config().validate()?;
    let n = base.clear_patches;
    let config = AblationConfig {
        data_sizes: vec![(n / 4).max(1), (n / 2).max(1), n],
        base,
        data_seed: seed,
        exec: Exec::Parallel,
    };
    let max = config.data_sizes.iter().copied().max().unwrap_or(n);
    let mut exp = Experiment::procedural(max, config.data_seed, config.exec)?;
    let report = exp.run(kind, &config.base, &config.data_sizes);
    print!("{}", report.to_text());
    if let Some(p) = out {
        let mut w = create(&p)?;
        report.write_csv(&mut w)?;
        w.flush()?;
        std::fs::write(p.with_extension("txt"), report.to_text())?;
        println!("wrote {}", p.display());
    }
    if report.rows.iter().all(|r| r.error.is_some()) {
        return Err(anyhow!("every arm of {kind} failed").into());
    }
    Ok(())
}
