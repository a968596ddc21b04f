//! Networks around the basis: coefficient encoders, decoder, identity
//! discriminator on motion descriptors and identity classifier on identity
//! descriptors. All are plain MLPs over row-stacked batches.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::subspace::{
    compose, basis_from_raw, coordinate_basis, BasisDims, BasisVars, DescriptorVars, OrthonormalBasis,
    SubspaceDescriptors,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    /// Applied after every layer but the last.
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Contract(format!("invalid MLP widths {widths:?}")));
        }
        Ok(Self { widths, activation })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in×out`, so a batch `x[B×in]` maps as `x·W + b`.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(spec: &MlpSpec, rng: &mut R) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Linear {
                    weight: Tensor::new(vec![fan_in, fan_out], data).unwrap().with_grad(),
                    bias: Tensor::zeros(vec![fan_out]).with_grad(),
                }
            })
            .collect();
        Self {
            layers,
            activation: spec.activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.leaf(&l.weight), g.leaf(&l.bias)))
                .collect(),
            activation: self.activation,
        }
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// An [`Mlp`] whose parameters have been copied into a graph.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    activation: Activation,
}

impl MlpVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            h = g.add_bias(z, b)?;
            if i < last {
                h = match self.activation {
                    Activation::Tanh => g.tanh(h)?,
                    Activation::Relu => g.relu(h)?,
                };
            }
        }
        Ok(h)
    }

    pub fn leaves(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Observation width `M`.
    pub obs_dim: usize,
    pub basis: BasisDims,
    pub hidden: usize,
    /// Number of training identities `C`.
    pub classes: usize,
    /// When false the basis is bypassed by a fixed coordinate embedding.
    pub learned_basis: bool,
}

impl ModelConfig {
    pub fn enc_id_spec(&self) -> MlpSpec {
        let h = self.hidden;
        MlpSpec::new(vec![self.obs_dim, h, h, self.basis.identity], Activation::Tanh).unwrap()
    }

    pub fn enc_m_spec(&self) -> MlpSpec {
        let h = self.hidden;
        MlpSpec::new(vec![self.obs_dim, h, h, self.basis.motion], Activation::Tanh).unwrap()
    }

    pub fn decoder_spec(&self) -> MlpSpec {
        let h = self.hidden;
        MlpSpec::new(vec![self.basis.latent, h, h, self.obs_dim], Activation::Tanh).unwrap()
    }

    /// Three linear layers, `N → h → h → C`.
    pub fn disc_spec(&self) -> MlpSpec {
        let h = self.hidden;
        MlpSpec::new(vec![self.basis.latent, h, h, self.classes], Activation::Relu).unwrap()
    }

    pub fn classifier_spec(&self) -> MlpSpec {
        self.disc_spec()
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(Error::Contract(format!("invalid model config {self:?}")));
        }
        if self.basis.identity == 0
            || self.basis.motion == 0
            || self.basis.rows() > self.basis.latent
        {
            return Err(Error::Contract(format!("invalid basis dims {:?}", self.basis)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub basis: OrthonormalBasis,
    pub enc_id: Mlp,
    pub enc_m: Mlp,
    pub decoder: Mlp,
    pub disc: Mlp,
    pub classifier: Mlp,
}

/// Which parameter groups an update may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Generator,
    Discriminator,
}

impl ModelState {
    /// Initializes every network in a fixed order from one RNG.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let basis = OrthonormalBasis::random(config.basis, rng)?;
        let enc_id = Mlp::init(&config.enc_id_spec(), rng);
        let enc_m = Mlp::init(&config.enc_m_spec(), rng);
        let decoder = Mlp::init(&config.decoder_spec(), rng);
        let disc = Mlp::init(&config.disc_spec(), rng);
        let classifier = Mlp::init(&config.classifier_spec(), rng);
        Ok(Self {
            config,
            basis,
            enc_id,
            enc_m,
            decoder,
            disc,
            classifier,
        })
    }

    /// Every parameter tensor with a stable name, in storage order.
    pub fn named_params(&self) -> Vec<(String, &Tensor, ParamGroup)> {
        let mut out = vec![("basis.raw".to_string(), self.basis.raw(), ParamGroup::Generator)];
        for (net, mlp, group) in self.networks() {
            for (i, t) in mlp.tensors().enumerate() {
                let kind = if i % 2 == 0 { "weight" } else { "bias" };
                out.push((format!("{net}.{}.{kind}", i / 2), t, group));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![self.basis.raw_mut()];
        out.extend(self.enc_id.tensors_mut());
        out.extend(self.enc_m.tensors_mut());
        out.extend(self.decoder.tensors_mut());
        out.extend(self.disc.tensors_mut());
        out.extend(self.classifier.tensors_mut());
        out
    }

    fn networks(&self) -> [(&'static str, &Mlp, ParamGroup); 5] {
        [
            ("enc_id", &self.enc_id, ParamGroup::Generator),
            ("enc_m", &self.enc_m, ParamGroup::Generator),
            ("decoder", &self.decoder, ParamGroup::Generator),
            ("disc", &self.disc, ParamGroup::Discriminator),
            ("classifier", &self.classifier, ParamGroup::Generator),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t, _)| t.is_finite())
    }

    /// Copies all parameters into `g` and orthonormalizes the basis.
    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel> {
        let leaves: Vec<Var> = self.named_params().iter().map(|(_, t, _)| g.leaf(t)).collect();
        self.bind_leaves(g, &leaves)
    }

    /// Like [`bind`](Self::bind) but on caller-made leaves, one per entry of
    /// [`named_params`](Self::named_params) and in that order. Without a
    /// learned basis the raw leaf is carried along unused.
    pub fn bind_leaves(&self, g: &mut Graph, leaves: &[Var]) -> Result<BoundModel> {
        let expected = self.named_params().len();
        if leaves.len() != expected {
            return Err(Error::dim("bind_leaves", &[leaves.len()], &[expected]));
        }
        let raw = leaves[0];
        let basis = if self.config.learned_basis {
            basis_from_raw(g, raw, self.config.basis)?
        } else {
            coordinate_basis(g, self.config.basis)?
        };
        let mut rest = &leaves[1..];
        let mut take = |mlp: &Mlp| {
            let (head, tail) = rest.split_at(2 * mlp.layers.len());
            rest = tail;
            MlpVars {
                layers: head.chunks(2).map(|c| (c[0], c[1])).collect(),
                activation: mlp.activation,
            }
        };
        Ok(BoundModel {
            obs_dim: self.config.obs_dim,
            raw,
            basis,
            enc_id: take(&self.enc_id),
            enc_m: take(&self.enc_m),
            decoder: take(&self.decoder),
            disc: take(&self.disc),
            classifier: take(&self.classifier),
        })
    }

    /// Descriptors for each row of `source`/`driving` (both `B×M`), no grad.
    pub fn encode_values(&self, source: &Tensor, driving: &Tensor) -> Result<Vec<SubspaceDescriptors>> {
        let mut g = Graph::new();
        let m = self.bind(&mut g)?;
        let s = g.leaf(source);
        let d = g.leaf(driving);
        let desc = m.encode(&mut g, s, d)?;
        let rows = g.shape(desc.f)[0];
        Ok((0..rows)
            .map(|i| SubspaceDescriptors::from_batch(&g, &desc, i))
            .collect())
    }

    /// Decodes a batch of composed representations `F[B×N]`.
    pub fn decode_values(&self, f: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let dec = self.decoder.bind(&mut g);
        let x = g.leaf(f);
        let out = dec.forward(&mut g, x)?;
        Ok(g.to_tensor(out))
    }

    pub fn generate_values(&self, d: &SubspaceDescriptors) -> Result<Vec<f64>> {
        let f = Tensor::new(vec![1, d.f.len()], d.f.clone())?;
        Ok(self.decode_values(&f)?.data().to_vec())
    }

    /// The `(p+q)×N` basis actually used by the forward pass.
    pub fn effective_basis(&self) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g)?;
        Ok(g.to_tensor(m.basis.full))
    }
}

/// A [`ModelState`] bound into one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    obs_dim: usize,
    pub raw: Var,
    pub basis: BasisVars,
    pub enc_id: MlpVars,
    pub enc_m: MlpVars,
    pub decoder: MlpVars,
    pub disc: MlpVars,
    pub classifier: MlpVars,
}

impl BoundModel {
    /// Leaves in the same order as [`ModelState::named_params`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = vec![self.raw];
        out.extend(self.enc_id.leaves());
        out.extend(self.enc_m.leaves());
        out.extend(self.decoder.leaves());
        out.extend(self.disc.leaves());
        out.extend(self.classifier.leaves());
        out
    }

    /// `a_id` from the source rows, `b_m` from the driving rows.
    pub fn encode(&self, g: &mut Graph, source: Var, driving: Var) -> Result<DescriptorVars> {
        for v in [source, driving] {
            let s = g.shape(v);
            if s.len() != 2 || s[1] != self.obs_dim {
                return Err(Error::dim("encode", s, &[self.obs_dim]));
            }
        }
        let a_id = self.enc_id.forward(g, source)?;
        let b_m = self.enc_m.forward(g, driving)?;
        compose(g, &self.basis, a_id, b_m)
    }

    pub fn generate(&self, g: &mut Graph, d: &DescriptorVars) -> Result<Var> {
        self.decoder.forward(g, d.f)
    }

    pub fn discriminate(&self, g: &mut Graph, w_m: Var) -> Result<Var> {
        self.disc.forward(g, w_m)
    }

    pub fn classify_identity(&self, g: &mut Graph, w_id: Var) -> Result<Var> {
        self.classifier.forward(g, w_id)
    }
}
