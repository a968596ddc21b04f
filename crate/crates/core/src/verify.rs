//! Finite-difference checks of every primitive and of the full generator
//! objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, Graph, Tensor, Var};
use crate::error::Result;
use crate::losses::LossWeights;
use crate::model::{ModelConfig, ModelState};
use crate::training::{generator_losses, LossInputs};

pub const GRAD_CHECK_TOL: f64 = 1e-4;
pub const GRAD_CHECK_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckResult {
    pub name: String,
    pub error: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.error < GRAD_CHECK_TOL
    }
}

fn uniform(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

type Build = fn(&mut Graph, &[Var]) -> Result<Var>;

/// Each primitive op through a scalar reduction, random inputs in [-1, 1].
pub fn primitive_checks(seed: u64) -> Result<Vec<GradCheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        ("add", vec![vec![3, 2], vec![3, 2]], |g, v| {
            let y = g.add(v[0], v[1])?;
            let y = g.mul(y, y)?;
            g.sum(y)
        }),
        ("sub", vec![vec![4], vec![4]], |g, v| {
            let y = g.sub(v[0], v[1])?;
            let y = g.mul(y, y)?;
            g.sum(y)
        }),
        ("mul", vec![vec![2, 3], vec![2, 3]], |g, v| {
            let y = g.mul(v[0], v[1])?;
            let y = g.mul(y, v[0])?;
            g.sum(y)
        }),
        ("scale", vec![vec![4]], |g, v| {
            let y = g.scale(v[0], -2.5)?;
            let y = g.mul(y, v[0])?;
            g.sum(y)
        }),
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let y = g.mul(y, y)?;
            g.sum(y)
        }),
        ("tanh", vec![vec![5]], |g, v| {
            let y = g.tanh(v[0])?;
            let y = g.mul(y, y)?;
            g.sum(y)
        }),
        ("relu", vec![vec![5]], |g, v| {
            let y = g.relu(v[0])?;
            let y = g.mul(y, v[0])?;
            g.sum(y)
        }),
        ("sqrt+recip", vec![vec![3]], |g, v| {
            let s = g.dot(v[0], v[0])?;
            let r = g.sqrt(s)?;
            g.recip(r)
        }),
        ("dot", vec![vec![4], vec![4]], |g, v| g.dot(v[0], v[1])),
        ("scale_by", vec![vec![4], vec![]], |g, v| {
            let y = g.scale_by(v[0], v[1])?;
            let y = g.mul(y, y)?;
            g.sum(y)
        }),
        ("add_all", vec![vec![], vec![], vec![]], |g, v| {
            let y = g.add_all(v)?;
            g.mul(y, y)
        }),
        ("add_bias", vec![vec![3, 4], vec![4]], |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            let y = g.tanh(y)?;
            g.sum(y)
        }),
        ("rows+stack", vec![vec![3, 2]], |g, v| {
            let a = g.row(v[0], 2)?;
            let b = g.rows(v[0], 0, 1)?;
            let b = g.row(b, 0)?;
            let s = g.stack(&[a, b, a])?;
            let s = g.mul(s, s)?;
            g.sum(s)
        }),
        ("cosine_sim", vec![vec![4], vec![4]], |g, v| g.cosine_sim(v[0], v[1], 1e-8)),
        ("softmax_ce", vec![vec![5]], |g, v| g.softmax_cross_entropy(v[0], 2)),
        ("softmax_ce_rows", vec![vec![3, 4]], |g, v| {
            g.softmax_cross_entropy_rows(v[0], &[1, 3, 0])
        }),
        ("l1_distance", vec![vec![6], vec![6]], |g, v| g.l1_distance(v[0], v[1])),
        ("mse", vec![vec![2, 3], vec![2, 3]], |g, v| g.mse(v[0], v[1])),
        ("gram_schmidt", vec![vec![3, 5]], |g, v| {
            let q = g.gram_schmidt(v[0])?;
            let w = g.constant(vec![3, 5], (0..15).map(|i| (i as f64 * 0.37).sin()).collect())?;
            let y = g.mul(q, w)?;
            g.sum(y)
        }),
    ];
    cases
        .into_iter()
        .map(|(name, shapes, build)| {
            let params = shapes
                .into_iter()
                .map(|s| uniform(s, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(GradCheckResult {
                name: name.to_string(),
                error: grad_check(build, &params, GRAD_CHECK_STEP)?,
            })
        })
        .collect()
}

/// The weighted generator objective (encode → generate → re-encode → total)
/// differentiated with respect to every model parameter.
///
/// Observations are standard normal, reference identity features uniform,
/// and every loss term is active with the reference weights. Parameters
/// are jittered away from their initialization so that no relu sits
/// exactly at zero. The latent
/// regression targets are evaluated once at the starting point and then
/// held fixed, which is exactly the gradient training applies.
pub fn composite_check(model_cfg: &ModelConfig, batch: usize, seed: u64) -> Result<GradCheckResult> {
    composite_check_weighted(model_cfg, batch, seed, LossWeights::reference())
}

pub fn composite_check_weighted(model_cfg: &ModelConfig, batch: usize, seed: u64, weights: LossWeights) -> Result<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = model_cfg.clone();
    cfg.learned_basis = true;
    let mut model = ModelState::init(cfg, &mut rng)?;
    // Zero biases can put whole relu layers exactly on their kink.
    for t in model.params_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.05..0.05));
    }
    let m = model.config.obs_dim;
    let classes = model.config.classes;
    let obs: Vec<f64> = (0..batch * m)
        .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
        .collect();
    let f_id = uniform(vec![batch, 4], &mut rng)?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

    let targets = {
        let x = Tensor::new(vec![batch, m], obs.clone())?;
        let d = model.encode_values(&x, &x)?;
        let rows = |f: fn(&crate::subspace::SubspaceDescriptors) -> &Vec<f64>| {
            d.iter().flat_map(|r| f(r).iter().copied()).collect::<Vec<f64>>()
        };
        (rows(|r| &r.w_id), rows(|r| &r.w_m))
    };
    let n = model.config.basis.latent;
    let params: Vec<Tensor> = model.named_params().iter().map(|(_, t, _)| (*t).clone()).collect();
    let build = |g: &mut Graph, leaves: &[Var]| -> Result<Var> {
        let bound = model.bind_leaves(g, leaves)?;
        let x = g.constant(vec![batch, m], obs.clone())?;
        let f = g.constant(f_id.shape().to_vec(), f_id.data().to_vec())?;
        let t_id = g.constant(vec![batch, n], targets.0.clone())?;
        let t_m = g.constant(vec![batch, n], targets.1.clone())?;
        let inputs = LossInputs {
            source: x,
            driving: x,
            f_id: f,
            source_labels: &labels,
            driving_labels: &labels,
            latent_targets: Some((t_id, t_m)),
        };
        Ok(generator_losses(g, &bound, &inputs, &weights)?.1)
    };
    Ok(GradCheckResult {
        name: "generator objective".into(),
        error: grad_check(build, &params, GRAD_CHECK_STEP)?,
    })
}

/// Every primitive plus the composite objective.
pub fn gradcheck_suite(model_cfg: &ModelConfig, seed: u64) -> Result<Vec<GradCheckResult>> {
    let mut out = primitive_checks(seed)?;
    out.push(composite_check(model_cfg, 4, seed)?);
    Ok(out)
}
