//! Run configuration: a sectioned `key = value` file (TOML syntax) where
//! every key has a default and unknown keys are rejected.
//!
//! ```text
//! [world]   identities frames_per_identity dim_zid dim_zm obs_dim mixing noise_sigma seed
//! [model]   identity_basis motion_basis latent hidden
//! [train]   steps batch lr_gen lr_disc disc_steps optimizer ablation seed
//! [loss]    recon vgg adv s d r id
//! [eval]    probe_seed interpolation_steps
//! [output]  dir
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::subspace::BasisDims;
use crate::synthdata::WorldSpec;
use crate::training::{config_digest, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub identity_basis: usize,
    pub motion_basis: usize,
    pub latent: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            identity_basis: 8,
            motion_basis: 8,
            latent: 64,
            hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub probe_seed: u64,
    pub interpolation_steps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            probe_seed: 0,
            interpolation_steps: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            model: ModelDims::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn config_err(key: String, msg: impl Into<String>) -> Error {
    Error::Config {
        key,
        msg: msg.into(),
    }
}

fn as_uint(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(config_err(key.into(), format!("expected a non-negative integer, got {v}"))),
    }
}

fn as_float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(config_err(key.into(), format!("expected a number, got {v}"))),
    }
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| config_err(key.into(), format!("expected a string, got {v}")))
}

fn parse_enum<T: std::str::FromStr<Err = String>>(key: &str, v: &Value) -> Result<T> {
    as_str(key, v)?.parse().map_err(|e: String| config_err(key.into(), e))
}

impl RunConfig {
    /// Parses a config file body; absent keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::format("config", e.message().to_string()))?;
        let mut cfg = Self::default();
        for (section, body) in &table {
            let body = body.as_table().ok_or_else(|| {
                config_err(section.clone(), "top-level keys must live inside a [section]")
            })?;
            for (key, value) in body {
                cfg.set(section, key, value)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies `section.key=value`. The value is read as a TOML literal and
    /// falls back to a bare string, so `--train.ablation=base` works.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| config_err(assignment.into(), "override must look like section.key=value"))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| config_err(path.into(), "override key must look like section.key"))?;
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(section, key, &value)
    }

    fn set(&mut self, section: &str, key: &str, v: &Value) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match (section, key) {
            ("world", "identities") => self.world.identities = as_uint(k, v)? as usize,
            ("world", "frames_per_identity") => self.world.frames_per_identity = as_uint(k, v)? as usize,
            ("world", "dim_zid") => self.world.dim_zid = as_uint(k, v)? as usize,
            ("world", "dim_zm") => self.world.dim_zm = as_uint(k, v)? as usize,
            ("world", "obs_dim") => self.world.obs_dim = as_uint(k, v)? as usize,
            ("world", "mixing") => self.world.mixing = parse_enum(k, v)?,
            ("world", "noise_sigma") => self.world.noise_sigma = as_float(k, v)?,
            ("world", "seed") => self.world.seed = as_uint(k, v)?,

            ("model", "identity_basis") => self.model.identity_basis = as_uint(k, v)? as usize,
            ("model", "motion_basis") => self.model.motion_basis = as_uint(k, v)? as usize,
            ("model", "latent") => self.model.latent = as_uint(k, v)? as usize,
            ("model", "hidden") => self.model.hidden = as_uint(k, v)? as usize,

            ("train", "steps") => self.train.steps = as_uint(k, v)?,
            ("train", "batch") => self.train.batch = as_uint(k, v)? as usize,
            ("train", "lr_gen") => self.train.lr_gen = as_float(k, v)?,
            ("train", "lr_disc") => self.train.lr_disc = as_float(k, v)?,
            ("train", "disc_steps") => self.train.disc_steps = as_uint(k, v)? as usize,
            ("train", "optimizer") => self.train.optimizer = parse_enum(k, v)?,
            ("train", "ablation") => self.train.ablation = parse_enum(k, v)?,
            ("train", "seed") => self.train.seed = as_uint(k, v)?,

            ("loss", "recon") => self.train.weights.recon = as_float(k, v)?,
            ("loss", "vgg") => self.train.weights.vgg = as_float(k, v)?,
            ("loss", "adv") => self.train.weights.adv = as_float(k, v)?,
            ("loss", "s") => self.train.weights.s = as_float(k, v)?,
            ("loss", "d") => self.train.weights.d = as_float(k, v)?,
            ("loss", "r") => self.train.weights.r = as_float(k, v)?,
            ("loss", "id") => self.train.weights.id = as_float(k, v)?,

            ("eval", "probe_seed") => self.eval.probe_seed = as_uint(k, v)?,
            ("eval", "interpolation_steps") => self.eval.interpolation_steps = as_uint(k, v)? as usize,

            ("output", "dir") => self.output_dir = PathBuf::from(as_str(k, v)?),

            _ => return Err(config_err(full, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        let m = &self.model;
        for (key, v) in [
            ("identity_basis", m.identity_basis),
            ("motion_basis", m.motion_basis),
            ("hidden", m.hidden),
        ] {
            if v == 0 {
                return Err(config_err(format!("model.{key}"), "must be positive"));
            }
        }
        if m.latent < m.identity_basis + m.motion_basis {
            return Err(config_err(
                "model.latent".into(),
                format!("must be at least identity_basis + motion_basis = {}", m.identity_basis + m.motion_basis),
            ));
        }
        if self.eval.interpolation_steps < 2 {
            return Err(config_err("eval.interpolation_steps".into(), "must be at least 2"));
        }
        if self.train.batch > self.world.len() {
            return Err(config_err(
                "train.batch".into(),
                format!("larger than the dataset ({} samples)", self.world.len()),
            ));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            obs_dim: self.world.obs_dim,
            basis: BasisDims {
                identity: self.model.identity_basis,
                motion: self.model.motion_basis,
                latent: self.model.latent,
            },
            hidden: self.model.hidden,
            classes: self.world.identities,
            learned_basis: self.train.ablation.learned_basis(),
        }
    }

    /// The fully resolved configuration, every key present, in a fixed order.
    pub fn to_text(&self) -> String {
        self.render(true)
    }

    fn render(&self, with_run_keys: bool) -> String {
        let w = &self.world;
        let t = &self.train;
        let l = &t.weights;
        let mut s = String::new();
        let f = |x: f64| Value::Float(x).to_string();
        let _ = writeln!(s, "[world]");
        let _ = writeln!(s, "identities = {}", w.identities);
        let _ = writeln!(s, "frames_per_identity = {}", w.frames_per_identity);
        let _ = writeln!(s, "dim_zid = {}", w.dim_zid);
        let _ = writeln!(s, "dim_zm = {}", w.dim_zm);
        let _ = writeln!(s, "obs_dim = {}", w.obs_dim);
        let _ = writeln!(s, "mixing = \"{}\"", w.mixing.as_str());
        let _ = writeln!(s, "noise_sigma = {}", f(w.noise_sigma));
        let _ = writeln!(s, "seed = {}", w.seed);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "identity_basis = {}", self.model.identity_basis);
        let _ = writeln!(s, "motion_basis = {}", self.model.motion_basis);
        let _ = writeln!(s, "latent = {}", self.model.latent);
        let _ = writeln!(s, "hidden = {}", self.model.hidden);
        let _ = writeln!(s, "\n[train]");
        if with_run_keys {
            let _ = writeln!(s, "steps = {}", t.steps);
        }
        let _ = writeln!(s, "batch = {}", t.batch);
        let _ = writeln!(s, "lr_gen = {}", f(t.lr_gen));
        let _ = writeln!(s, "lr_disc = {}", f(t.lr_disc));
        let _ = writeln!(s, "disc_steps = {}", t.disc_steps);
        let _ = writeln!(s, "optimizer = \"{}\"", t.optimizer.as_str());
        let _ = writeln!(s, "ablation = \"{}\"", t.ablation.as_str());
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "\n[loss]");
        for (k, v) in [
            ("recon", l.recon),
            ("vgg", l.vgg),
            ("adv", l.adv),
            ("s", l.s),
            ("d", l.d),
            ("r", l.r),
            ("id", l.id),
        ] {
            let _ = writeln!(s, "{k} = {}", f(v));
        }
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "probe_seed = {}", self.eval.probe_seed);
        let _ = writeln!(s, "interpolation_steps = {}", self.eval.interpolation_steps);
        if with_run_keys {
            let _ = writeln!(s, "\n[output]");
            let _ = writeln!(s, "dir = {}", Value::String(self.output_dir.display().to_string()));
        }
        s
    }

    /// Digest of everything that defines the trajectory. The step budget and
    /// output directory are left out so a run can be extended by resuming.
    pub fn digest(&self) -> [u8; 32] {
        config_digest(&self.render(false))
    }
}
