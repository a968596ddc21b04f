//! Synthetic identities × frames benchmark with known generating factors.
//!
//! Each identity owns a fixed code `z_id`; each frame draws a motion code
//! `z_m`. Observations are a fixed random mix of both plus Gaussian noise,
//! so identity and motion are recoverable but entangled in observation
//! space.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::{gram_schmidt_rows, matmul_raw};
use crate::error::{Error, Result};
use crate::losses::batch_pairs;

const MAX_MIXING_RETRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixing {
    Linear,
    MlpNonlinear,
}

impl Mixing {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mixing::Linear => "linear",
            Mixing::MlpNonlinear => "mlp-nonlinear",
        }
    }
}

impl std::str::FromStr for Mixing {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Mixing::Linear),
            "mlp-nonlinear" => Ok(Mixing::MlpNonlinear),
            other => Err(format!("unknown mixing `{other}` (linear | mlp-nonlinear)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub identities: usize,
    pub frames_per_identity: usize,
    pub dim_zid: usize,
    pub dim_zm: usize,
    pub obs_dim: usize,
    pub mixing: Mixing,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            identities: 16,
            frames_per_identity: 64,
            dim_zid: 8,
            dim_zm: 8,
            obs_dim: 32,
            mixing: Mixing::Linear,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config {
            key: format!("world.{key}"),
            msg,
        };
        if self.identities < 2 {
            return Err(bad("identities", format!("need at least 2, got {}", self.identities)));
        }
        if self.frames_per_identity == 0 {
            return Err(bad("frames_per_identity", "must be positive".into()));
        }
        if self.dim_zid == 0 || self.dim_zm == 0 {
            return Err(bad("dim_zid", "factor dimensions must be positive".into()));
        }
        if self.obs_dim < self.dim_zid + self.dim_zm {
            return Err(bad(
                "obs_dim",
                format!(
                    "must be at least dim_zid + dim_zm = {}",
                    self.dim_zid + self.dim_zm
                ),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(bad("noise_sigma", format!("must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.identities * self.frames_per_identity
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub observation: Vec<f64>,
    pub identity_label: usize,
    pub z_id: Vec<f64>,
    pub z_m: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim_zid: usize,
    pub dim_zm: usize,
    pub obs_dim: usize,
    pub identities: usize,
    pub samples: Vec<SyntheticSample>,
}

/// The fixed maps from factors to observations.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMaps {
    /// `M×dim_zid`, row-major.
    pub identity: Vec<f64>,
    /// `M×dim_zm`, row-major.
    pub motion: Vec<f64>,
    /// Output map `M×M` after the tanh layer (nonlinear mixing only).
    pub hidden_out: Option<Vec<f64>>,
}

fn gaussian_matrix(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    (0..rows * cols).map(|_| n.sample(rng)).collect()
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = m[i * cols + j];
        }
    }
    t
}

/// Full column rank iff Gram-Schmidt over the columns finds no degenerate
/// residual.
fn full_column_rank(m: &[f64], rows: usize, cols: usize) -> bool {
    gram_schmidt_rows(&transpose(m, rows, cols), cols, rows).is_ok()
}

fn sample_mixing(spec: &WorldSpec) -> Result<MixingMaps> {
    let m = spec.obs_dim;
    let sigma = 1.0 / ((spec.dim_zid + spec.dim_zm) as f64).sqrt();
    for attempt in 0..MAX_MIXING_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + attempt as u64);
        let identity = gaussian_matrix(m, spec.dim_zid, sigma, &mut rng);
        let motion = gaussian_matrix(m, spec.dim_zm, sigma, &mut rng);
        if !full_column_rank(&identity, m, spec.dim_zid) || !full_column_rank(&motion, m, spec.dim_zm) {
            continue;
        }
        let hidden_out = match spec.mixing {
            Mixing::Linear => None,
            Mixing::MlpNonlinear => Some(gaussian_matrix(m, m, 1.0 / (m as f64).sqrt(), &mut rng)),
        };
        return Ok(MixingMaps {
            identity,
            motion,
            hidden_out,
        });
    }
    Err(Error::RankDeficient(MAX_MIXING_RETRIES))
}

impl MixingMaps {
    pub fn apply(&self, z_id: &[f64], z_m: &[f64], obs_dim: usize) -> Vec<f64> {
        let a = matmul_raw(&self.identity, z_id, obs_dim, z_id.len(), 1);
        let b = matmul_raw(&self.motion, z_m, obs_dim, z_m.len(), 1);
        let lin: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        match &self.hidden_out {
            None => lin,
            Some(w) => {
                let h: Vec<f64> = lin.iter().map(|x| x.tanh()).collect();
                matmul_raw(w, &h, obs_dim, obs_dim, 1)
            }
        }
    }
}

/// Deterministically generates the benchmark. Samples are ordered by
/// identity, then frame.
pub fn generate_world(spec: &WorldSpec) -> Result<Dataset> {
    spec.validate()?;
    let maps = sample_mixing(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut samples = Vec::with_capacity(spec.len());
    for label in 0..spec.identities {
        let z_id: Vec<f64> = (0..spec.dim_zid).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..spec.frames_per_identity {
            let z_m: Vec<f64> = (0..spec.dim_zm).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut observation = maps.apply(&z_id, &z_m, spec.obs_dim);
            if spec.noise_sigma > 0.0 {
                observation.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
            }
            samples.push(SyntheticSample {
                observation,
                identity_label: label,
                z_id: z_id.clone(),
                z_m,
            });
        }
    }
    Ok(Dataset {
        dim_zid: spec.dim_zid,
        dim_zm: spec.dim_zm,
        obs_dim: spec.obs_dim,
        identities: spec.identities,
        samples,
    })
}

/// Mixing maps used by [`generate_world`] for `spec`.
pub fn mixing_maps(spec: &WorldSpec) -> Result<MixingMaps> {
    spec.validate()?;
    sample_mixing(spec)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.identity_label).collect()
    }

    /// Observations of `indices`, row-stacked.
    pub fn observations(&self, indices: &[usize]) -> Vec<f64> {
        indices
            .iter()
            .flat_map(|&i| self.samples[i].observation.iter().copied())
            .collect()
    }

    pub fn identity_codes(&self, indices: &[usize]) -> Vec<f64> {
        indices
            .iter()
            .flat_map(|&i| self.samples[i].z_id.iter().copied())
            .collect()
    }

    fn header(&self) -> String {
        format!(
            "identities={},dim_zid={},dim_zm={},obs_dim={},samples={}",
            self.identities,
            self.dim_zid,
            self.dim_zm,
            self.obs_dim,
            self.samples.len()
        )
    }

    /// Header line, then `label, z_id…, z_m…, observation…` per sample with
    /// 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for smp in &self.samples {
            write!(s, "{}", smp.identity_label).unwrap();
            for v in smp.z_id.iter().chain(&smp.z_m).chain(&smp.observation) {
                write!(s, ",{v:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::format("dataset", "empty input"))?;
        let mut fields = std::collections::HashMap::new();
        for kv in header.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::format("dataset", format!("bad header field `{kv}`")))?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|e| Error::format("dataset", format!("header `{k}`: {e}")))?;
            fields.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::format("dataset", format!("header missing `{k}`")))
        };
        let (identities, dim_zid, dim_zm, obs_dim, count) = (
            get("identities")?,
            get("dim_zid")?,
            get("dim_zm")?,
            get("obs_dim")?,
            get("samples")?,
        );
        let mut samples = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(',');
            let label: usize = parts
                .next()
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|e| Error::format("dataset", format!("record {i} label: {e}")))?;
            if label >= identities {
                return Err(Error::format("dataset", format!("record {i}: label {label} >= {identities}")));
            }
            let vals: Vec<f64> = parts
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("dataset", format!("record {i}: {e}")))?;
            if vals.len() != dim_zid + dim_zm + obs_dim {
                return Err(Error::format(
                    "dataset",
                    format!("record {i} has {} values, expected {}", vals.len(), dim_zid + dim_zm + obs_dim),
                ));
            }
            samples.push(SyntheticSample {
                identity_label: label,
                z_id: vals[..dim_zid].to_vec(),
                z_m: vals[dim_zid..dim_zid + dim_zm].to_vec(),
                observation: vals[dim_zid + dim_zm..].to_vec(),
            });
        }
        if samples.len() != count {
            return Err(Error::format(
                "dataset",
                format!("header says {count} samples, found {}", samples.len()),
            ));
        }
        Ok(Self {
            dim_zid,
            dim_zm,
            obs_dim,
            identities,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

// ---- batching ---------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// Source and driving are the same frame.
    SelfReenact,
    /// Driving is taken from the mirrored batch position.
    CrossPair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub source: Vec<usize>,
    pub driving: Vec<usize>,
    /// `(t, T + t)` pairs for the similarity loss.
    pub pairs: Vec<(usize, usize)>,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Resumable position of a [`Batcher`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatcherState {
    pub seed: u64,
    pub epoch: u64,
    pub cursor: usize,
}

/// Endless deterministic batch stream.
///
/// Each epoch visits every sample once in round-robin identity order:
/// every identity contributes one frame per round, frame and identity
/// orders reshuffled from `(seed, epoch)`. A trailing partial batch is
/// dropped.
#[derive(Clone, Debug)]
pub struct Batcher {
    by_identity: Vec<Vec<usize>>,
    batch: usize,
    mode: PairMode,
    state: BatcherState,
    order: Vec<usize>,
}

impl Batcher {
    pub fn new(dataset: &Dataset, batch: usize, mode: PairMode, seed: u64) -> Result<Self> {
        if batch == 0 || batch % 2 != 0 {
            return Err(Error::Contract(format!("batch size must be even, got {batch}")));
        }
        if batch > dataset.len() {
            return Err(Error::Contract(format!(
                "batch size {batch} exceeds dataset size {}",
                dataset.len()
            )));
        }
        let mut by_identity = vec![Vec::new(); dataset.identities];
        for (i, s) in dataset.samples.iter().enumerate() {
            by_identity[s.identity_label].push(i);
        }
        let mut b = Self {
            by_identity,
            batch,
            mode,
            state: BatcherState {
                seed,
                epoch: 0,
                cursor: 0,
            },
            order: Vec::new(),
        };
        b.order = b.epoch_order(0);
        Ok(b)
    }

    pub fn state(&self) -> BatcherState {
        self.state
    }

    pub fn restore(&mut self, state: BatcherState) {
        self.state = state;
        self.order = self.epoch_order(state.epoch);
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.state.seed);
        rng.set_stream(epoch);
        let mut pools: Vec<Vec<usize>> = self.by_identity.clone();
        for p in &mut pools {
            p.shuffle(&mut rng);
        }
        let rounds = pools.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids: Vec<usize> = (0..pools.len()).collect();
        let mut order = Vec::new();
        for r in 0..rounds {
            ids.shuffle(&mut rng);
            order.extend(ids.iter().filter_map(|&id| pools[id].get(r).copied()));
        }
        order
    }

    pub fn next_batch(&mut self) -> PairedBatch {
        if self.state.cursor + self.batch > self.order.len() {
            self.state.epoch += 1;
            self.state.cursor = 0;
            self.order = self.epoch_order(self.state.epoch);
        }
        let c = self.state.cursor;
        let source = self.order[c..c + self.batch].to_vec();
        self.state.cursor += self.batch;
        let driving = match self.mode {
            PairMode::SelfReenact => source.clone(),
            PairMode::CrossPair => source.iter().rev().copied().collect(),
        };
        PairedBatch {
            source,
            driving,
            pairs: batch_pairs(self.batch).expect("batch size validated"),
        }
    }
}

/// Convenience: the first `count` batches of a fresh stream.
pub fn make_batches(
    dataset: &Dataset,
    batch: usize,
    mode: PairMode,
    seed: u64,
    count: usize,
) -> Result<Vec<PairedBatch>> {
    let mut b = Batcher::new(dataset, batch, mode, seed)?;
    Ok((0..count).map(|_| b.next_batch()).collect())
}
