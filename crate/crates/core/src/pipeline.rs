//! Dataset-level operations behind the `qpd` command line: generation,
//! estimation, evaluation and kernel inspection.
//!
//! Every command is deterministic for a fixed configuration. Scenes are
//! processed in parallel on a dedicated pool, each scene writes only inside
//! its own directory, and per-scene randomness is keyed by the scene's
//! position in the sorted scene list rather than by scheduling order.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{ImageBuffer, ImageFormat, Rgb};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{MaskedPlane, View};
use crate::io::{
    self, discover_scenes, load_scene, pfm, split_dataset, DatasetManifest, LoadOutcome, SplitSpec,
    Transfer, GT_FILE, MANIFEST_FILE, MASK_FILE, VIEW_EXT,
};
use crate::metrics::{evaluate, IrlsConfig, MetricReport};
use crate::optics::{coc_from_depth, CameraParams};
use crate::psf::{make_kernel_with, KernelRegistry, DEFAULT_FAMILY};
use crate::render::{add_gaussian_noise, plan_layers, render_qp, DEFAULT_LAYER_WIDTH_PX};
use crate::solver::{estimate, SolverConfig};

pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";
pub const GENERATE_SUMMARY_FILE: &str = "generate_summary.json";
pub const ESTIMATE_SUMMARY_FILE: &str = "estimate_summary.json";
pub const EVAL_JSON_FILE: &str = "eval.json";
pub const EVAL_TABLE_FILE: &str = "eval.txt";
pub const NOISY_DIR: &str = "noisy";
pub const PRED_FILE: &str = "disp.pfm";
pub const PRED_VIS_FILE: &str = "disp_vis.png";
pub const PRED_RANGE_FILE: &str = "disp_range.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RendererConfig {
    pub layer_width_px: f64,
    pub kernel_family: String,
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            layer_width_px: DEFAULT_LAYER_WIDTH_PX,
            kernel_family: DEFAULT_FAMILY.to_owned(),
        }
    }
}

/// Noisy copies are written only when `variance > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub variance: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            variance: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Accepted depth range in meters.
    pub depth_range: (f64, f64),
    /// Scenes with a smaller in-range fraction are skipped.
    pub min_valid_fraction: f64,
    pub transfer: Transfer,
    /// Exact `[train, val, test]` sizes; used when they match the scene count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_counts: Option<[usize; 3]>,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            depth_range: (0.5, 50.0),
            min_valid_fraction: 1.0,
            transfer: Transfer::Srgb,
            split_counts: None,
            split_ratios: [301.0, 38.0, 38.0],
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Complete configuration for a run, loaded from TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scene-level worker threads; `None` uses all cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub camera: CameraParams,
    pub renderer: RendererConfig,
    pub solver: SolverConfig,
    pub noise: NoiseConfig,
    pub dataset: DatasetConfig,
    pub metrics: IrlsConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let r = &self.renderer;
        if !(r.layer_width_px.is_finite() && r.layer_width_px > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "layer width must be positive, got {}",
                r.layer_width_px
            )));
        }
        KernelRegistry::default().get(&r.kernel_family)?;
        self.solver.validate()?;
        if !(self.noise.variance.is_finite() && self.noise.variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {}",
                self.noise.variance
            )));
        }
        let d = &self.dataset;
        if !(d.depth_range.0 >= 0.0 && d.depth_range.0 < d.depth_range.1) {
            return Err(Error::InvalidArgument(format!(
                "bad depth range {:?}",
                d.depth_range
            )));
        }
        if !(0.0..=1.0).contains(&d.min_valid_fraction) {
            return Err(Error::InvalidArgument(format!(
                "min valid fraction must lie in [0, 1], got {}",
                d.min_valid_fraction
            )));
        }
        let m = &self.metrics;
        if !(m.epsilon > 0.0 && m.tolerance > 0.0 && m.max_iterations > 0) {
            return Err(Error::InvalidArgument(
                "IRLS settings must be positive".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }

    fn snapshot(&self, out_root: &Path) -> Result<()> {
        write_text(&out_root.join(CONFIG_SNAPSHOT_FILE), &self.to_toml())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    write_text(path, &(text + "\n"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedScene {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub generated: Vec<String>,
    pub skipped: Vec<SkippedScene>,
    pub noisy: bool,
}

enum SceneResult {
    Done(String),
    Skipped(SkippedScene),
}

fn noise_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Renders every scene under `rgbd_root` into `out_root`, plus a noisy
/// copy under `out_root/noisy` when noise is configured.
pub fn cmd_generate(
    config: &RunConfig,
    rgbd_root: &Path,
    out_root: &Path,
) -> Result<GenerateSummary> {
    config.validate()?;
    let scenes = discover_scenes(rgbd_root, config.camera)?;
    create_dir(out_root)?;
    let noisy = config.noise.variance > 0.0;
    if noisy {
        create_dir(&out_root.join(NOISY_DIR))?;
    }
    let family = KernelRegistry::default().get(&config.renderer.kernel_family)?;

    let results: Vec<SceneResult> = config.pool()?.install(|| {
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, rec)| {
                let start = Instant::now();
                let outcome = (|| -> Result<Option<String>> {
                    let (image, depth) = match load_scene(
                        rec,
                        config.dataset.depth_range,
                        config.dataset.min_valid_fraction,
                        config.dataset.transfer,
                    )? {
                        LoadOutcome::Loaded { image, depth } => (image, depth),
                        LoadOutcome::Rejected { valid_fraction } => {
                            return Ok(Some(format!(
                                "only {:.2}% of depths inside the range",
                                100.0 * valid_fraction
                            )))
                        }
                    };
                    let coc = coc_from_depth(&rec.camera, &depth)?;
                    let layering = plan_layers(&coc, config.renderer.layer_width_px)?;
                    let frames =
                        render_qp(&image, &depth, &rec.camera, &layering, family.as_ref())?;
                    io::write_frameset(&frames, &out_root.join(&rec.id))?;
                    if noisy {
                        let seed = noise_seed(config.noise.seed, i);
                        let n = add_gaussian_noise(&frames, config.noise.variance, seed)?;
                        io::write_frameset(&n, &out_root.join(NOISY_DIR).join(&rec.id))?;
                    }
                    Ok(None)
                })();
                match outcome {
                    Ok(None) => {
                        log::info!("{}: rendered in {:.2?}", rec.id, start.elapsed());
                        SceneResult::Done(rec.id.clone())
                    }
                    Ok(Some(reason)) => {
                        log::warn!("{}: skipped, {reason}", rec.id);
                        SceneResult::Skipped(SkippedScene {
                            id: rec.id.clone(),
                            reason,
                        })
                    }
                    Err(e) => {
                        log::warn!("{}: skipped, {e}", rec.id);
                        SceneResult::Skipped(SkippedScene {
                            id: rec.id.clone(),
                            reason: e.to_string(),
                        })
                    }
                }
            })
            .collect()
    });

    let mut summary = GenerateSummary {
        generated: Vec::new(),
        skipped: Vec::new(),
        noisy,
    };
    for r in results {
        match r {
            SceneResult::Done(id) => summary.generated.push(id),
            SceneResult::Skipped(s) => summary.skipped.push(s),
        }
    }

    let settings = serde_json::to_value(config).expect("run config serializes");
    let manifest = DatasetManifest::new(summary.generated.iter().cloned(), settings);
    let n = summary.generated.len();
    let spec = match config.dataset.split_counts {
        Some(c) if c.iter().sum::<usize>() == n => SplitSpec::Counts(c),
        Some(c) => {
            log::warn!(
                "split counts {c:?} do not match {n} generated scenes, using ratios {:?}",
                config.dataset.split_ratios
            );
            SplitSpec::Ratios(config.dataset.split_ratios)
        }
        None => SplitSpec::Ratios(config.dataset.split_ratios),
    };
    let manifest = split_dataset(&manifest, spec, config.dataset.split_seed)?;
    manifest.write(&out_root.join(MANIFEST_FILE))?;
    config.snapshot(out_root)?;
    if noisy {
        let noisy_root = out_root.join(NOISY_DIR);
        manifest.write(&noisy_root.join(MANIFEST_FILE))?;
        config.snapshot(&noisy_root)?;
    }
    write_json(&out_root.join(GENERATE_SUMMARY_FILE), &summary)?;
    log::info!(
        "generated {} scenes, skipped {}",
        summary.generated.len(),
        summary.skipped.len()
    );
    Ok(summary)
}

/// Scene ids of a generated dataset: the manifest's records when present,
/// otherwise every subdirectory holding at least one view file.
pub fn dataset_scene_ids(root: &Path) -> Result<Vec<String>> {
    let manifest = root.join(MANIFEST_FILE);
    if manifest.is_file() {
        let m = DatasetManifest::read(&manifest)?;
        let mut ids: Vec<String> = m.records.into_iter().map(|r| r.id).collect();
        ids.sort();
        return Ok(ids);
    }
    subdirs_with(root, |dir| {
        View::ALL
            .iter()
            .any(|v| dir.join(format!("{}.{VIEW_EXT}", v.name())).is_file())
    })
}

fn subdirs_with(root: &Path, pred: impl Fn(&Path) -> bool) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && pred(&path) {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedScene {
    pub id: String,
    pub low_confidence: bool,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub estimated: Vec<EstimatedScene>,
    pub skipped: Vec<SkippedScene>,
}

impl EstimateSummary {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

/// Fixed blue-white-red map for signed values scaled to `[-1, 1]`.
pub fn diverging_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() {
        t.clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let lo = [59.0, 76.0, 192.0];
    let mid = [242.0, 242.0, 242.0];
    let hi = [180.0, 4.0, 38.0];
    let (a, b, u) = if t < 0.0 { (mid, lo, -t) } else { (mid, hi, t) };
    let mix = |i: usize| (a[i] + (b[i] - a[i]) * u).round() as u8;
    [mix(0), mix(1), mix(2)]
}

/// Writes a colour-mapped PNG scaled symmetrically to `±scale`.
pub fn write_disparity_png(path: &Path, disp: &Array2<f64>, scale: f64) -> Result<()> {
    let (h, w) = disp.dim();
    let s = if scale > 0.0 { scale } else { 1.0 };
    let mut data = Vec::with_capacity(3 * w * h);
    for v in disp.iter() {
        data.extend(diverging_color(v / s));
    }
    ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, data)
        .expect("buffer sized from map")
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
}

/// Estimates disparity for every scene of `dataset_root`. Scenes that fail to
/// load are skipped and counted; only output errors are fatal.
pub fn cmd_estimate(
    config: &RunConfig,
    dataset_root: &Path,
    out_root: &Path,
) -> Result<EstimateSummary> {
    config.validate()?;
    let ids = dataset_scene_ids(dataset_root)?;
    create_dir(out_root)?;

    enum Outcome {
        Done(EstimatedScene),
        Skipped(SkippedScene),
        Fatal(Error),
    }

    let results: Vec<Outcome> = config.pool()?.install(|| {
        ids.par_iter()
            .map(|id| {
                let start = Instant::now();
                let est = io::read_frameset(&dataset_root.join(id))
                    .and_then(|frames| estimate(&frames, &config.solver));
                let est = match est {
                    Ok(e) => e,
                    Err(e) => {
                        log::warn!("{id}: skipped, {e}");
                        return Outcome::Skipped(SkippedScene {
                            id: id.clone(),
                            reason: e.to_string(),
                        });
                    }
                };
                let disp = &est.disparity.values;
                let (min, max) = disp
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                        (a.min(v), b.max(v))
                    });
                let scale = min.abs().max(max.abs());
                let dir = out_root.join(id);
                let written = create_dir(&dir)
                    .and_then(|_| pfm::write(&dir.join(PRED_FILE), disp))
                    .and_then(|_| write_disparity_png(&dir.join(PRED_VIS_FILE), disp, scale))
                    .and_then(|_| {
                        write_text(
                            &dir.join(PRED_RANGE_FILE),
                            &format!(
                                "colormap=blue-white-red\nmin={min}\nmax={max}\nscale=+-{scale}\n"
                            ),
                        )
                    });
                if let Err(e) = written {
                    return Outcome::Fatal(e);
                }
                if est.low_confidence {
                    log::warn!("{id}: textureless reference view, low-confidence output");
                }
                log::info!("{id}: estimated in {:.2?}", start.elapsed());
                Outcome::Done(EstimatedScene {
                    id: id.clone(),
                    low_confidence: est.low_confidence,
                    min,
                    max,
                })
            })
            .collect()
    });

    let mut summary = EstimateSummary {
        estimated: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Outcome::Done(s) => summary.estimated.push(s),
            Outcome::Skipped(s) => summary.skipped.push(s),
            Outcome::Fatal(e) => return Err(e),
        }
    }
    config.snapshot(out_root)?;
    write_json(&out_root.join(ESTIMATE_SUMMARY_FILE), &summary)?;
    log::info!(
        "estimated {} scenes, skipped {}",
        summary.estimated.len(),
        summary.skip_count()
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub id: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// Unweighted mean over scenes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub d05: f64,
    pub d1: f64,
    pub d2: f64,
    pub ai1: f64,
    pub ai2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: Vec<SceneReport>,
    pub mean: MeanMetrics,
}

impl EvalReport {
    /// Human-readable table, one row per scene plus the mean.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>10} {:>10} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
            "scene", "mae", "rmse", "d0.5", "d1", "d2", "ai1", "ai2"
        );
        let mut row = |id: &str, m: MeanMetrics| {
            out.push_str(&format!(
                "{:<24} {:>10.5} {:>10.5} {:>8.4} {:>8.4} {:>8.4} {:>10.5} {:>10.5}\n",
                id, m.mae, m.rmse, m.d05, m.d1, m.d2, m.ai1, m.ai2
            ));
        };
        for s in &self.scenes {
            row(&s.id, flat(&s.report));
        }
        row("mean", self.mean);
        out
    }
}

fn flat(r: &MetricReport) -> MeanMetrics {
    MeanMetrics {
        mae: r.basic.mae,
        rmse: r.basic.rmse,
        d05: r.basic.d05,
        d1: r.basic.d1,
        d2: r.basic.d2,
        ai1: r.ai1,
        ai2: r.ai2,
    }
}

fn read_gt(dir: &Path) -> Result<MaskedPlane> {
    let values = pfm::read(&dir.join(GT_FILE))?;
    let mask_path = dir.join(MASK_FILE);
    let valid = if mask_path.is_file() {
        pfm::read(&mask_path)?.mapv(|m| m > 0.5)
    } else {
        values.mapv(f64::is_finite)
    };
    MaskedPlane::new(values, valid)
}

/// Scores predictions under `pred_root` against ground truth under `gt_root`.
/// Both roots must hold exactly the same scene ids.
pub fn cmd_eval(pred_root: &Path, gt_root: &Path, irls: &IrlsConfig) -> Result<EvalReport> {
    let pred_ids: BTreeSet<String> = subdirs_with(pred_root, |d| d.join(PRED_FILE).is_file())?
        .into_iter()
        .collect();
    let gt_ids: BTreeSet<String> = subdirs_with(gt_root, |d| d.join(GT_FILE).is_file())?
        .into_iter()
        .collect();
    if pred_ids != gt_ids {
        return Err(Error::SceneMismatch {
            only_pred: pred_ids.difference(&gt_ids).cloned().collect(),
            only_gt: gt_ids.difference(&pred_ids).cloned().collect(),
        });
    }
    if pred_ids.is_empty() {
        return Err(Error::EmptyValidRegion("scene set"));
    }
    let scenes = pred_ids
        .par_iter()
        .map(|id| {
            let pred = MaskedPlane::dense(pfm::read(&pred_root.join(id).join(PRED_FILE))?);
            let gt = read_gt(&gt_root.join(id))?;
            Ok(SceneReport {
                id: id.clone(),
                report: evaluate(&pred, &gt, irls)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scenes.len() as f64;
    let mut mean = MeanMetrics::default();
    for s in &scenes {
        let m = flat(&s.report);
        mean.mae += m.mae / n;
        mean.rmse += m.rmse / n;
        mean.d05 += m.d05 / n;
        mean.d1 += m.d1 / n;
        mean.d2 += m.d2 / n;
        mean.ai1 += m.ai1 / n;
        mean.ai2 += m.ai2 / n;
    }
    Ok(EvalReport { scenes, mean })
}

/// Writes `eval.json` and `eval.txt` into `out_root`.
pub fn write_eval(report: &EvalReport, out_root: &Path) -> Result<()> {
    create_dir(out_root)?;
    write_json(&out_root.join(EVAL_JSON_FILE), report)?;
    write_text(&out_root.join(EVAL_TABLE_FILE), &report.table())
}

/// Writes the kernel taps for one view as a float map.
///
/// The radius is a signed CoC: a negative value gives the kernel a point in
/// front of the focal plane sees, which is the flipped view's kernel.
pub fn cmd_psf(family: &str, radius_px: f64, view: View, out: &Path) -> Result<()> {
    let family = KernelRegistry::default().get(family)?;
    let view = if radius_px < 0.0 {
        view.flipped()
    } else {
        view
    };
    let kernel = make_kernel_with(family.as_ref(), radius_px.abs(), view)?;
    pfm::write(out, kernel.taps())
}
