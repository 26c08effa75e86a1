//! The `gen`, `train`, `eval`, `embed` and `compare` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sidda_core::data::{gen_astro, gen_shapes, read_dataset, write_dataset, Dataset, ShiftConfig};
use sidda_core::metrics::{isomap, silhouette, to_array, write_embedding_csv, Domain};
use sidda_core::rng::Stream;
use sidda_core::train::{evaluate, train_with, validation_split, DaMethod, EpochRecord, TrainData};
use sidda_core::Tensor;

use crate::artifacts::{
    read_checkpoint, sha256_file, write_bytes, write_checkpoint, write_json, FileHash, Manifest,
};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{domain_metrics, Comparison, ComparisonRow, DomainMetrics, RunReport, SeedMetrics, EVAL_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Shapes,
    Astro,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenArgs {
    pub kind: GenKind,
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub shift: ShiftConfig,
    /// Path of the unshifted file; the shifted twin goes next to it with a
    /// `_shifted` suffix.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenFile {
    pub path: PathBuf,
    pub count: usize,
    pub class_counts: Vec<usize>,
    pub sha256: String,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path).map_err(|e| CliError::from_core(e, Some(path)))
}

fn save_dataset(ds: &Dataset, path: &Path) -> Result<GenFile> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_dataset(ds, path).map_err(|e| CliError::from_core(e, Some(path)))?;
    Ok(GenFile {
        path: path.to_path_buf(),
        count: ds.len(),
        class_counts: ds.class_counts(),
        sha256: sha256_file(path)?,
    })
}

/// `out` with `_shifted` inserted before the extension.
pub fn shifted_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_shifted.{}", ext.to_string_lossy()),
        None => format!("{stem}_shifted"),
    };
    out.with_file_name(name)
}

/// Generates a dataset and, unless the shift is `none`, its shifted twin.
pub fn cmd_gen(args: &GenArgs) -> Result<Vec<GenFile>> {
    args.shift.validate().map_err(|e| CliError::config(e.to_string()))?;
    let ds = match args.kind {
        GenKind::Shapes => gen_shapes(args.n, args.size, args.seed)?,
        GenKind::Astro => gen_astro(args.n, args.size, args.seed)?,
    };
    let mut files = vec![save_dataset(&ds, &args.out)?];
    if args.shift != ShiftConfig::None {
        let shifted = args.shift.apply_dataset(&ds, args.seed)?;
        files.push(save_dataset(&shifted, &shifted_path(&args.out))?);
    }
    Ok(files)
}

struct RunData {
    source_train: Dataset,
    source_test: Dataset,
    target_train: Dataset,
    target_test: Dataset,
}

fn load_run_data(cfg: &RunConfig) -> Result<RunData> {
    let d = RunData {
        source_train: load_dataset(&cfg.data.source_train)?,
        source_test: load_dataset(&cfg.data.source_test)?,
        target_train: load_dataset(&cfg.data.target_train)?,
        target_test: load_dataset(&cfg.data.target_test)?,
    };
    for (name, ds) in [("source_test", &d.source_test), ("target_train", &d.target_train), ("target_test", &d.target_test)] {
        if !ds.same_geometry(&d.source_train) {
            return Err(CliError::config(format!(
                "data.{name}: geometry {:?} with {} classes differs from data.source_train {:?} with {} classes",
                ds.image_shape(),
                ds.num_classes,
                d.source_train.image_shape(),
                d.source_train.num_classes
            )));
        }
    }
    Ok(d)
}

fn seed_dir(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}"))
}

/// Trains every seed of `cfg` into `dir`.
///
/// Layout: `config.txt` (verbatim copy), `manifest.json`, per seed
/// `seed-N/{checkpoint.bin, history.json, metrics.json}`, and `report.json`.
/// A failing seed leaves `seed-N/history.partial.json` with the completed
/// epochs; earlier seeds keep their files.
pub fn run_training(cfg: &RunConfig, config_text: &str, dir: &Path, command: &str) -> Result<RunReport> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let config_copy = dir.join("config.txt");
    write_bytes(&config_copy, config_text.as_bytes())?;

    let data = load_run_data(cfg)?;
    let mut files = vec![FileHash { role: "config".into(), path: config_copy.clone(), sha256: sha256_file(&config_copy)? }];
    for (role, path) in cfg.data.named() {
        files.push(FileHash { role: role.into(), path: path.to_path_buf(), sha256: sha256_file(path)? });
    }
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            version: sidda_core::VERSION.to_string(),
            command: command.to_string(),
            config: "config.txt".into(),
            seeds: cfg.seeds.clone(),
            files,
        },
    )?;

    let spec = cfg.model_spec(data.source_train.image_shape(), data.source_train.num_classes);
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let sdir = seed_dir(dir, seed);
        let mut partial: Vec<EpochRecord> = Vec::new();
        let started = Instant::now();
        let trained = train_with(
            &spec,
            &cfg.schedule,
            TrainData {
                source: &data.source_train,
                target: &data.target_train,
                monitor: Some(&data.target_test),
            },
            seed,
            &mut |r| partial.push(r.clone()),
        );
        let wall = started.elapsed().as_secs_f64();
        let mut out = match trained {
            Ok(out) => out,
            Err(e) => {
                write_json(&sdir.join("history.partial.json"), &partial)?;
                return Err(e.into());
            }
        };
        write_checkpoint(&out.checkpoint, &sdir.join("checkpoint.bin"))?;
        write_json(&sdir.join("history.json"), &out.history)?;
        let metrics = SeedMetrics::new(&mut out.model, &out.history, &data.source_test, &data.target_test, wall)?;
        write_json(&sdir.join("metrics.json"), &metrics)?;
        per_seed.push(metrics);
    }
    let report = RunReport::new(cfg.model.name(), &cfg.schedule.da_method.name(), per_seed);
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_train(config: &Path) -> Result<RunReport> {
    let cfg = RunConfig::load(config)?;
    let text = std::fs::read_to_string(config).map_err(|e| CliError::io(config, e))?;
    run_training(&cfg, &text, &cfg.output.clone(), "train")
}

/// Result of `eval`: flat metrics for one dataset, per domain for two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvalOutput {
    Single(DomainMetrics),
    Pair { source: DomainMetrics, target: DomainMetrics },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub target: Option<PathBuf>,
    /// Evaluate on the validation split the training run held out from
    /// `data` (fraction as configured for training).
    pub val_fraction: Option<f64>,
    pub out: Option<PathBuf>,
}

fn check_geometry(ckpt_input: [usize; 3], classes: usize, ds: &Dataset, path: &Path) -> Result<()> {
    if ds.image_shape() != ckpt_input || ds.num_classes != classes {
        return Err(CliError::config(format!(
            "{}: images {:?} with {} classes do not match the checkpoint's {:?} with {} classes",
            path.display(),
            ds.image_shape(),
            ds.num_classes,
            ckpt_input,
            classes
        )));
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutput> {
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let mut model = ckpt.model()?;
    let load = |p: &Path| -> Result<Dataset> {
        let ds = load_dataset(p)?;
        check_geometry(ckpt.spec.input, ckpt.spec.num_classes, &ds, p)?;
        Ok(ds)
    };
    let mut source = load(&args.data)?;
    if let Some(f) = args.val_fraction {
        source = validation_split(&source, f, ckpt.seed, Stream::Data)?.1;
    }
    let target = args.target.as_deref().map(load).transpose()?;
    let (s, _) = domain_metrics(&mut model, &source)?;
    let out = match target {
        None => EvalOutput::Single(s),
        Some(mut t) => {
            if let Some(f) = args.val_fraction {
                t = validation_split(&t, f, ckpt.seed, Stream::Target)?.1;
            }
            EvalOutput::Pair { source: s, target: domain_metrics(&mut model, &t)?.0 }
        }
    };
    if let Some(path) = &args.out {
        write_json(path, &out)?;
    }
    Ok(out)
}

/// Validation cross-entropy and accuracy of a checkpoint on the split its
/// training run held out of `data`.
pub fn validation_metrics(checkpoint: &Path, data: &Path, val_fraction: f64) -> Result<(f64, f64)> {
    let ckpt = read_checkpoint(checkpoint)?;
    let mut model = ckpt.model()?;
    let ds = load_dataset(data)?;
    let (_, val) = validation_split(&ds, val_fraction, ckpt.seed, Stream::Data)?;
    let (ce, acc, _) = evaluate(&mut model, &val, EVAL_CHUNK)?;
    Ok((ce, acc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedArgs {
    pub checkpoint: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
    pub k: usize,
    /// Use only the first `max_points` samples of each domain.
    pub max_points: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub rows: usize,
    pub k: usize,
    pub residual_variance: f64,
    /// Silhouette by class of the pooled latents.
    pub silhouette_latent: f64,
    /// Silhouette by class of the 2-D embedding.
    pub silhouette_embedded: f64,
}

pub fn cmd_embed(args: &EmbedArgs) -> Result<EmbedSummary> {
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let mut model = ckpt.model()?;
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    let mut domains = Vec::new();
    for (path, domain) in [(&args.source, Domain::Source), (&args.target, Domain::Target)] {
        let mut ds = load_dataset(path)?;
        check_geometry(ckpt.spec.input, ckpt.spec.num_classes, &ds, path)?;
        if let Some(m) = args.max_points {
            if ds.len() > m {
                ds = ds.subset(&(0..m).collect::<Vec<_>>());
            }
        }
        let (_, z) = model.predict(&ds.tensor(), EVAL_CHUNK)?;
        latents.push(z);
        labels.extend(ds.labels.iter().copied());
        domains.extend(std::iter::repeat_n(domain, ds.len()));
    }
    let pooled = Tensor::concat_rows(&latents.iter().collect::<Vec<_>>())?;
    let points = to_array(&pooled);
    let emb = isomap(&points, args.k, 2).map_err(|e| match e {
        e @ sidda_core::Error::Disconnected { .. } => {
            CliError::config(format!("{e}; try a larger --k than {}", args.k))
        }
        e => e.into(),
    })?;
    let mut csv = Vec::new();
    write_embedding_csv(&mut csv, &emb.coordinates, &labels, &domains)?;
    write_bytes(&args.out, &csv)?;
    let classes: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Ok(EmbedSummary {
        rows: labels.len(),
        k: args.k,
        residual_variance: emb.residual_variance,
        silhouette_latent: silhouette(&points, &classes)?,
        silhouette_embedded: silhouette(&emb.coordinates, &classes)?,
    })
}

/// Directory-safe name of a method, e.g. `fixed-1-10` for `fixed(1,10)`.
pub fn method_dir(method: &DaMethod) -> String {
    method
        .name()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect::<String>()
        .trim_matches('-')
        .to_string()
}

/// Trains `cfg` once per method with identical seeds and schedule, each in
/// `dir/<method>/`, and writes `dir/comparison.json`.
pub fn run_comparison(cfg: &RunConfig, config_text: &str, methods: &[DaMethod], dir: &Path) -> Result<(Comparison, Vec<RunReport>)> {
    if methods.is_empty() {
        return Err(CliError::config("no methods to compare"));
    }
    let mut reports = Vec::with_capacity(methods.len());
    for m in methods {
        let sub = dir.join(method_dir(m));
        reports.push(run_training(&cfg.with_method(*m), config_text, &sub, &format!("compare {}", m.name()))?);
    }
    let comparison = Comparison {
        model: cfg.model.name().to_string(),
        seeds: cfg.seeds.clone(),
        rows: reports.iter().map(ComparisonRow::from_report).collect(),
    };
    write_json(&dir.join("comparison.json"), &comparison)?;
    Ok((comparison, reports))
}

pub fn parse_methods(list: &str) -> Result<Vec<DaMethod>> {
    // Commas inside `fixed(a,b)` do not separate methods.
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in list.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur);
    out.iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| DaMethod::parse(s).map_err(|e| CliError::config(e.to_string())))
        .collect()
}

pub fn cmd_compare(config: &Path, methods: &[DaMethod]) -> Result<Comparison> {
    let cfg = RunConfig::load(config)?;
    let text = std::fs::read_to_string(config).map_err(|e| CliError::io(config, e))?;
    Ok(run_comparison(&cfg, &text, methods, &cfg.output.clone())?.0)
}
