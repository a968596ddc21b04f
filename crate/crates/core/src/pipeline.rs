//! End-to-end commands over a run directory:
//!
//! ```text
//! <dir>/config.resolved
//! <dir>/metrics.csv
//! <dir>/model.ckpt
//! <dir>/eval/*.csv
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::losses::StepMetrics;
use crate::model::ModelState;
use crate::subspace::matrix_to_text;
use crate::synthdata::{generate_world, Dataset};
use crate::training::{load_model, Ablation, Trainer};
use crate::verify::{gradcheck_suite, GradCheckResult};

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.resolved")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// The dataset at `path`, or the world described by `cfg` when absent.
pub fn dataset(cfg: &RunConfig, path: Option<&Path>) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::load(p),
        None => generate_world(&cfg.world),
    }
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    cfg.world.validate()?;
    let ds = generate_world(&cfg.world)?;
    ds.save(out)?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub first: Option<StepMetrics>,
    pub last: Option<StepMetrics>,
    pub steps: u64,
}

/// Trains into `cfg.output_dir`. With `resume`, continues from the
/// checkpoint already there (which must carry the same config digest) and
/// appends to the metrics log.
pub fn train(
    cfg: &RunConfig,
    resume: bool,
    mut progress: impl FnMut(&StepMetrics),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let dir = RunDir::new(&cfg.output_dir);
    fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    write_file(&dir.config(), &cfg.to_text())?;

    let ds = generate_world(&cfg.world)?;
    let digest = cfg.digest();
    let ckpt_path = dir.checkpoint();
    let (mut trainer, log) = if resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let t = Trainer::resume(cfg.train.clone(), cfg.model_config(), ds, digest, &ckpt)?;
        let path = dir.metrics();
        let f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        (t, f)
    } else {
        let t = Trainer::new(cfg.train.clone(), cfg.model_config(), ds, digest)?;
        let path = dir.metrics();
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", StepMetrics::CSV_HEADER).map_err(|e| Error::io(&path, e))?;
        (t, f)
    };
    let metrics_path = dir.metrics();
    let mut log = BufWriter::new(log);
    let mut summary = TrainSummary {
        first: None,
        last: None,
        steps: 0,
    };
    let outcome = trainer.run(|m| {
        writeln!(log, "{}", m.csv_row()).map_err(|e| Error::io(&metrics_path, e))?;
        summary.first.get_or_insert_with(|| m.clone());
        summary.last = Some(m.clone());
        progress(m);
        Ok(())
    });
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;
    outcome?;
    summary.steps = trainer.step();
    trainer.checkpoint().save(&ckpt_path)?;
    Ok(summary)
}

pub fn load_checkpoint_model(path: &Path) -> Result<ModelState> {
    load_model(&Checkpoint::load(path)?)
}

fn check_compatible(model: &ModelState, ds: &Dataset) -> Result<()> {
    if model.config.obs_dim != ds.obs_dim || model.config.classes != ds.identities {
        return Err(Error::Contract(format!(
            "checkpoint expects obs_dim {} and {} identities, dataset has {} and {}",
            model.config.obs_dim, model.config.classes, ds.obs_dim, ds.identities
        )));
    }
    Ok(())
}

/// Evaluates a checkpoint and writes `probe.csv`, `cluster.csv`,
/// `summary.csv` and the basis matrix `basis.txt` into `out_dir`.
pub fn evaluate(model: &ModelState, ds: &Dataset, probe_seed: u64, out_dir: &Path) -> Result<EvalReport> {
    check_compatible(model, ds)?;
    let report = eval::evaluate(model, ds, probe_seed)?;
    write_file(&out_dir.join("probe.csv"), &report.probe_csv())?;
    write_file(&out_dir.join("cluster.csv"), &report.cluster_csv())?;
    write_file(&out_dir.join("summary.csv"), &report.summary_csv())?;
    write_file(&out_dir.join("basis.txt"), &matrix_to_text(&model.effective_basis()?))?;
    Ok(report)
}

/// Sweeps motion between samples `a` and `b` and writes one row per step:
/// `t`, the motion descriptor, then the decoded observation.
pub fn interpolate(
    model: &ModelState,
    ds: &Dataset,
    a: usize,
    b: usize,
    steps: usize,
    out: &Path,
) -> Result<eval::InterpolationSweep> {
    check_compatible(model, ds)?;
    for i in [a, b] {
        if i >= ds.len() {
            return Err(Error::Index {
                op: "interpolate",
                index: i,
                size: ds.len(),
            });
        }
    }
    let sweep = eval::interpolation_sweep(model, &ds.observations(&[a]), &ds.observations(&[b]), steps)?;
    let n = model.config.basis.latent;
    let mut text = String::from("t");
    (0..n).for_each(|k| text.push_str(&format!(",w_m_{k}")));
    (0..ds.obs_dim).for_each(|k| text.push_str(&format!(",obs_{k}")));
    text.push('\n');
    for ((t, w), o) in sweep.t.iter().zip(&sweep.motion_path).zip(&sweep.outputs) {
        let row: Vec<String> = std::iter::once(*t)
            .chain(w.iter().copied())
            .chain(o.iter().copied())
            .map(|x| format!("{x:e}"))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_file(out, &text)?;
    Ok(sweep)
}

/// PCA of the identity descriptors, written as `x,y,identity_label`.
pub fn project(model: &ModelState, ds: &Dataset, out: &Path) -> Result<Vec<(f64, f64)>> {
    check_compatible(model, ds)?;
    let desc = eval::dataset_descriptors(model, ds)?;
    let w_id: Vec<Vec<f64>> = desc.into_iter().map(|d| d.w_id).collect();
    let xy = eval::project_2d(&w_id)?;
    write_file(out, &eval::projection_csv(&xy, &ds.labels()))?;
    Ok(xy)
}

pub fn gradcheck(cfg: &RunConfig) -> Result<Vec<GradCheckResult>> {
    cfg.validate()?;
    gradcheck_suite(&cfg.model_config(), cfg.train.seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub probe_w_m: f64,
    pub recon_mse: f64,
    pub silhouette: f64,
}

pub const ABLATION_CSV_HEADER: &str = "ablation,probe_identity_from_w_m,reconstruction_mse,silhouette_w_id";

/// Trains and evaluates every ablation level in turn, each in
/// `<output_dir>/<level>`, and writes `ablation.csv` at the top.
pub fn ablation(cfg: &RunConfig, mut progress: impl FnMut(Ablation, &StepMetrics)) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let ds = generate_world(&cfg.world)?;
    let mut rows = Vec::new();
    for level in Ablation::ALL {
        let mut c = cfg.clone();
        c.train.ablation = level;
        c.output_dir = cfg.output_dir.join(level.as_str().trim_start_matches('+'));
        train(&c, false, |m| progress(level, m))?;
        let model = load_checkpoint_model(&RunDir::new(&c.output_dir).checkpoint())?;
        let r = evaluate(&model, &ds, c.eval.probe_seed, &RunDir::new(&c.output_dir).eval_dir())?;
        rows.push(AblationRow {
            ablation: level,
            probe_w_m: r.probe_motion.test_accuracy,
            recon_mse: r.recon_mse,
            silhouette: r.cluster.silhouette,
        });
    }
    let mut text = format!("{ABLATION_CSV_HEADER}\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.ablation.as_str(),
            r.probe_w_m,
            r.recon_mse,
            r.silhouette
        ));
    }
    write_file(&cfg.output_dir.join("ablation.csv"), &text)?;
    Ok(rows)
}
