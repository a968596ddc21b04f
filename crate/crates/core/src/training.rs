//! Alternating generator / discriminator optimization.
//!
//! Each step runs two phases on one batch:
//!
//! 1. generator phase: orthonormalize, encode, decode, re-encode, evaluate
//!    the weighted objective (domain loss with negative sign) and update
//!    every parameter except the discriminator's;
//! 2. discriminator phase: a fresh graph over the detached motion
//!    descriptors, minimizing the domain loss over discriminator
//!    parameters only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Tensor, Var};
use crate::checkpoint::{Checkpoint, Record};
use crate::error::{Error, Result};
use crate::losses::{
    domain_loss, identity_loss, latent_regression_loss, reconstruction_loss, similarity_loss,
    total_generator_loss, LossTerms, LossWeights, StepMetrics, SIMILARITY_EPS,
};
use crate::model::{BoundModel, ModelConfig, ModelState, ParamGroup};
use crate::optim::{Optimizer, OptimizerKind};
use crate::subspace::{BasisDims, DescriptorVars, OrthonormalBasis};
use crate::synthdata::{Batcher, BatcherState, Dataset, PairMode, PairedBatch};

/// Cumulative ablation levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    /// Plain autoencoder: fixed coordinate embedding, reconstruction only.
    Base,
    /// Learned orthonormal subspaces, reconstruction only.
    Subspaces,
    /// Adds similarity distillation and the adversarial domain loss.
    Decoupling,
    /// Adds latent regression and identity classification.
    Semantics,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Base,
        Ablation::Subspaces,
        Ablation::Decoupling,
        Ablation::Semantics,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Base => "base",
            Ablation::Subspaces => "+subspaces",
            Ablation::Decoupling => "+decoupling",
            Ablation::Semantics => "+semantics",
        }
    }

    pub fn learned_basis(&self) -> bool {
        *self >= Ablation::Subspaces
    }

    /// Zeroes the weights of terms this level does not use.
    pub fn effective_weights(&self, w: &LossWeights) -> LossWeights {
        let mut out = *w;
        if *self < Ablation::Decoupling {
            out.s = 0.0;
            out.d = 0.0;
        }
        if *self < Ablation::Semantics {
            out.r = 0.0;
            out.id = 0.0;
        }
        out
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "base" => Ok(Ablation::Base),
            "+subspaces" | "subspaces" => Ok(Ablation::Subspaces),
            "+decoupling" | "decoupling" => Ok(Ablation::Decoupling),
            "+semantics" | "semantics" => Ok(Ablation::Semantics),
            other => Err(format!(
                "unknown ablation `{other}` (base | +subspaces | +decoupling | +semantics)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
    pub optimizer: OptimizerKind,
    pub weights: LossWeights,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 32,
            lr_gen: 0.02,
            lr_disc: 0.01,
            disc_steps: 1,
            optimizer: OptimizerKind::Sgd,
            weights: LossWeights::synthetic(),
            ablation: Ablation::Semantics,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config {
            key: format!("train.{key}"),
            msg,
        };
        if self.steps == 0 {
            return Err(bad("steps", "must be positive".into()));
        }
        if self.batch == 0 || self.batch % 2 != 0 {
            return Err(bad("batch", format!("must be even and positive, got {}", self.batch)));
        }
        if self.disc_steps == 0 {
            return Err(bad("disc_steps", "must be positive".into()));
        }
        for (k, lr) in [("lr_gen", self.lr_gen), ("lr_disc", self.lr_disc)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(bad(k, format!("must be a finite non-negative number, got {lr}")));
            }
        }
        self.weights.validate()
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.ablation.effective_weights(&self.weights)
    }
}

/// SHA-256 of a canonical configuration text.
pub fn config_digest(canonical: &str) -> [u8; 32] {
    Sha256::digest(canonical.as_bytes()).into()
}

/// Bitwise fingerprint of a set of tensors, for isolation checks.
pub fn tensor_digest<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in tensors {
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Generator-side inputs for one batch, already on the graph.
pub struct LossInputs<'a> {
    pub source: Var,
    pub driving: Var,
    /// Reference identity features of the source rows.
    pub f_id: Var,
    pub source_labels: &'a [usize],
    pub driving_labels: &'a [usize],
    /// Fixed `(w_id, w_m)` targets for the latent regression. When absent
    /// the first-pass descriptors are used, detached.
    pub latent_targets: Option<(Var, Var)>,
}

/// Encode, generate, re-encode and combine every active loss term.
///
/// Terms whose weight is zero are not built and stay at zero. The latent
/// regression compares the re-encoded output against the first-pass
/// descriptors, which enter as constants.
pub fn generator_losses(
    g: &mut Graph,
    bound: &BoundModel,
    inputs: &LossInputs,
    w: &LossWeights,
) -> Result<(LossTerms, Var, DescriptorVars)> {
    let b = g.shape(inputs.source)[0];
    let desc = bound.encode(g, inputs.source, inputs.driving)?;
    let out = bound.generate(g, &desc)?;

    let mut terms = LossTerms::zeros(g);
    terms.recon = reconstruction_loss(g, out, inputs.driving)?;
    if w.s > 0.0 {
        terms.s = similarity_loss(g, desc.w_id, inputs.f_id, SIMILARITY_EPS)?;
    }
    if w.d > 0.0 {
        let logits = bound.discriminate(g, desc.w_m)?;
        terms.d = domain_loss(g, logits, inputs.driving_labels)?;
    }
    if w.r > 0.0 {
        let hat = bound.encode(g, out, out)?;
        let (t_id, t_m) = match inputs.latent_targets {
            Some(t) => t,
            None => (g.detach(desc.w_id), g.detach(desc.w_m)),
        };
        let sum = latent_regression_loss(g, hat.w_id, t_id, hat.w_m, t_m)?;
        terms.r = g.scale(sum, 1.0 / b as f64)?;
    }
    if w.id > 0.0 {
        let logits = bound.classify_identity(g, desc.w_id)?;
        terms.id = identity_loss(g, logits, inputs.source_labels)?;
    }
    let total = total_generator_loss(g, &terms, w)?;
    Ok((terms, total, desc))
}

pub struct Trainer {
    cfg: TrainConfig,
    model: ModelState,
    dataset: Dataset,
    batcher: Batcher,
    gen_opt: Optimizer,
    disc_opt: Optimizer,
    // parameter index -> group, in named_params order
    groups: Vec<ParamGroup>,
    step: u64,
    digest: [u8; 32],
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        mut model_cfg: ModelConfig,
        dataset: Dataset,
        digest: [u8; 32],
    ) -> Result<Self> {
        cfg.validate()?;
        model_cfg.learned_basis = cfg.ablation.learned_basis();
        if model_cfg.obs_dim != dataset.obs_dim || model_cfg.classes != dataset.identities {
            return Err(Error::Contract(format!(
                "model expects M={} C={}, dataset has M={} C={}",
                model_cfg.obs_dim, model_cfg.classes, dataset.obs_dim, dataset.identities
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = ModelState::init(model_cfg, &mut rng)?;
        let batcher = Batcher::new(
            &dataset,
            cfg.batch,
            PairMode::SelfReenact,
            cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        )?;
        let named = model.named_params();
        let groups: Vec<ParamGroup> = named.iter().map(|(_, _, g)| *g).collect();
        let sizes = |grp: ParamGroup| {
            named
                .iter()
                .filter(|(_, _, g)| *g == grp)
                .map(|(_, t, _)| t.len())
                .collect::<Vec<_>>()
        };
        let gen_opt = Optimizer::new(cfg.optimizer, cfg.lr_gen, &sizes(ParamGroup::Generator));
        let disc_opt = Optimizer::new(cfg.optimizer, cfg.lr_disc, &sizes(ParamGroup::Discriminator));
        Ok(Self {
            cfg,
            model,
            dataset,
            batcher,
            gen_opt,
            disc_opt,
            groups,
            step: 0,
            digest,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Draws the next batch from the stream.
    pub fn next_batch(&mut self) -> PairedBatch {
        self.batcher.next_batch()
    }

    /// Digest of the parameters in one group.
    pub fn group_digest(&self, group: ParamGroup) -> [u8; 32] {
        tensor_digest(
            self.model
                .named_params()
                .into_iter()
                .filter(|(_, _, g)| *g == group)
                .map(|(_, t, _)| t),
        )
    }

    fn update_group(&mut self, group: ParamGroup, grads: &[Option<Vec<f64>>]) -> Result<()> {
        let groups = self.groups.clone();
        let mut params: Vec<&mut Tensor> = self
            .model
            .params_mut()
            .into_iter()
            .zip(&groups)
            .filter(|(_, g)| **g == group)
            .map(|(t, _)| t)
            .collect();
        let grads: Vec<Option<&[f64]>> = grads.iter().map(|g| g.as_deref()).collect();
        let opt = match group {
            ParamGroup::Generator => &mut self.gen_opt,
            ParamGroup::Discriminator => &mut self.disc_opt,
        };
        opt.update(&mut params, &grads)
    }

    /// Generator phase on `batch`. Returns the logged losses and the motion
    /// descriptors `w_m[B×N]` it produced.
    pub fn generator_phase(&mut self, batch: &PairedBatch) -> Result<(StepMetrics, Tensor)> {
        let w = self.cfg.effective_weights();
        let b = batch.len();
        let m = self.dataset.obs_dim;
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g)?;
        let source = g.constant(vec![b, m], self.dataset.observations(&batch.source))?;
        let driving = g.constant(vec![b, m], self.dataset.observations(&batch.driving))?;
        let f_id = g.constant(
            vec![b, self.dataset.dim_zid],
            self.dataset.identity_codes(&batch.source),
        )?;
        let (source_labels, driving_labels) = (self.labels(&batch.source), self.labels(&batch.driving));
        let inputs = LossInputs {
            source,
            driving,
            f_id,
            source_labels: &source_labels,
            driving_labels: &driving_labels,
            latent_targets: None,
        };
        let (terms, total, desc) = generator_losses(&mut g, &bound, &inputs, &w)?;
        let metrics = StepMetrics {
            step: self.step + 1,
            recon: g.scalar(terms.recon),
            s: g.scalar(terms.s),
            d: g.scalar(terms.d),
            r: g.scalar(terms.r),
            id: g.scalar(terms.id),
            total: g.scalar(total),
            disc: 0.0,
        };
        if let Some(name) = metrics.first_non_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
        g.backward(total)?;

        let grads: Vec<Option<Vec<f64>>> = bound
            .leaves()
            .into_iter()
            .zip(&self.groups)
            .filter(|(_, grp)| **grp == ParamGroup::Generator)
            .map(|(v, _)| g.grad(v).map(<[f64]>::to_vec))
            .collect();
        let w_m = g.to_tensor(desc.w_m);
        self.update_group(ParamGroup::Generator, &grads)?;
        Ok((metrics, w_m))
    }

    /// Discriminator phase: minimizes the domain loss on detached `w_m`.
    pub fn discriminator_phase(&mut self, w_m: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(w_m.shape().to_vec(), w_m.data().to_vec())?;
        let disc = self.model.disc.bind(&mut g);
        let logits = disc.forward(&mut g, x)?;
        let loss = domain_loss(&mut g, logits, labels)?;
        g.backward(loss)?;
        let grads: Vec<Option<Vec<f64>>> = disc
            .leaves()
            .map(|v| g.grad(v).map(<[f64]>::to_vec))
            .collect();
        let value = g.scalar(loss);
        self.update_group(ParamGroup::Discriminator, &grads)?;
        Ok(value)
    }

    fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .map(|&i| self.dataset.samples[i].identity_label)
            .collect()
    }

    /// One full training step on the next batch.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let batch = self.batcher.next_batch();
        let (mut metrics, w_m) = self.generator_phase(&batch)?;
        if self.cfg.effective_weights().d > 0.0 {
            let labels = self.labels(&batch.driving);
            for _ in 0..self.cfg.disc_steps {
                metrics.disc = self.discriminator_phase(&w_m, &labels)?;
            }
        }
        if let Some(name) = metrics.first_non_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
        if !self.model.all_finite() {
            return Err(Error::NonFiniteLoss("parameters"));
        }
        self.step += 1;
        Ok(metrics)
    }

    /// Trains until `cfg.steps`, reporting each step.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepMetrics) -> Result<()>) -> Result<()> {
        while self.step < self.cfg.steps {
            let m = self.train_step()?;
            on_step(&m)?;
        }
        Ok(())
    }

    /// Continues until `steps` total, overriding the configured count.
    pub fn set_total_steps(&mut self, steps: u64) {
        self.cfg.steps = steps;
    }

    // ---- persistence -----------------------------------------------------

    pub fn checkpoint(&self) -> Checkpoint {
        let mut records = vec![model_config_record(&self.model.config)];
        let named = self.model.named_params();
        for (name, t, _) in &named {
            records.push(Record::new(format!("param/{name}"), t.shape().to_vec(), t.data().to_vec()));
        }
        for (tag, opt, group) in [
            ("opt.gen", &self.gen_opt, ParamGroup::Generator),
            ("opt.disc", &self.disc_opt, ParamGroup::Discriminator),
        ] {
            records.push(Record::scalar(format!("{tag}/step"), opt.steps_taken() as f64));
            let (m, v) = opt.moments();
            let group_params: Vec<_> = named.iter().filter(|(_, _, g)| *g == group).collect();
            for (which, moments) in [("m", m), ("v", v)] {
                for ((name, t, _), data) in group_params.iter().zip(moments) {
                    records.push(Record::new(
                        format!("{tag}/{which}/{name}"),
                        t.shape().to_vec(),
                        data.clone(),
                    ));
                }
            }
        }
        records.push(Record::scalar("train/step", self.step as f64));
        let s = self.batcher.state();
        records.push(Record::new(
            "rng/batcher",
            vec![4],
            vec![
                (s.seed >> 32) as f64,
                (s.seed & 0xFFFF_FFFF) as f64,
                s.epoch as f64,
                s.cursor as f64,
            ],
        ));
        Checkpoint {
            digest: self.digest,
            records,
        }
    }

    /// Rebuilds a trainer from `ckpt`; the digest must match `digest`.
    pub fn resume(
        cfg: TrainConfig,
        model_cfg: ModelConfig,
        dataset: Dataset,
        digest: [u8; 32],
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        if ckpt.digest != digest {
            return Err(Error::Contract(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        let mut t = Self::new(cfg, model_cfg, dataset, digest)?;
        t.model = load_model(ckpt)?;
        if t.model.config != {
            let mut c = model_cfg;
            c.learned_basis = t.cfg.ablation.learned_basis();
            c
        } {
            return Err(Error::Contract("checkpoint model dimensions differ from config".into()));
        }
        let named: Vec<(String, ParamGroup)> = t
            .model
            .named_params()
            .into_iter()
            .map(|(n, _, g)| (n, g))
            .collect();
        for (tag, group) in [("opt.gen", ParamGroup::Generator), ("opt.disc", ParamGroup::Discriminator)] {
            let step = ckpt.scalar(&format!("{tag}/step"))? as u64;
            let mut moments = [Vec::new(), Vec::new()];
            let adam = matches!(t.cfg.optimizer, OptimizerKind::Adam { .. });
            if adam {
                for (k, which) in ["m", "v"].iter().enumerate() {
                    for (name, _) in named.iter().filter(|(_, g)| *g == group) {
                        moments[k].push(ckpt.get(&format!("{tag}/{which}/{name}"))?.data.clone());
                    }
                }
            }
            let [m, v] = moments;
            let opt = match group {
                ParamGroup::Generator => &mut t.gen_opt,
                ParamGroup::Discriminator => &mut t.disc_opt,
            };
            opt.restore(step, m, v)?;
        }
        t.step = ckpt.scalar("train/step")? as u64;
        let rng = ckpt.get("rng/batcher")?;
        let [hi, lo, epoch, cursor] = rng.data[..] else {
            return Err(Error::format("checkpoint", "rng/batcher must hold 4 values"));
        };
        t.batcher.restore(BatcherState {
            seed: ((hi as u64) << 32) | lo as u64,
            epoch: epoch as u64,
            cursor: cursor as usize,
        });
        Ok(t)
    }
}

fn model_config_record(c: &ModelConfig) -> Record {
    Record::new(
        "model/config",
        vec![7],
        vec![
            c.obs_dim as f64,
            c.basis.identity as f64,
            c.basis.motion as f64,
            c.basis.latent as f64,
            c.hidden as f64,
            c.classes as f64,
            if c.learned_basis { 1.0 } else { 0.0 },
        ],
    )
}

/// Reconstructs the model (parameters only) stored in a checkpoint.
pub fn load_model(ckpt: &Checkpoint) -> Result<ModelState> {
    let c = &ckpt.get("model/config")?.data;
    let [obs, p, q, n, hidden, classes, learned] = c[..] else {
        return Err(Error::format("checkpoint", "model/config must hold 7 values"));
    };
    let config = ModelConfig {
        obs_dim: obs as usize,
        basis: BasisDims {
            identity: p as usize,
            motion: q as usize,
            latent: n as usize,
        },
        hidden: hidden as usize,
        classes: classes as usize,
        learned_basis: learned != 0.0,
    };
    // initialize for shapes, then overwrite every tensor
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ModelState::init(config, &mut rng)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _, _)| n).collect();
    for (name, t) in names.iter().zip(model.params_mut()) {
        let r = ckpt.get(&format!("param/{name}"))?;
        if r.shape != t.shape() {
            return Err(Error::format(
                "checkpoint",
                format!("`{name}` has shape {:?}, expected {:?}", r.shape, t.shape()),
            ));
        }
        t.data_mut().copy_from_slice(&r.data);
    }
    let raw = model.basis.raw().clone();
    model.basis = OrthonormalBasis::new(raw, config.basis)?;
    Ok(model)
}
