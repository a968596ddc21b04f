//! Training objectives and their weighted combination.
//!
//! The domain (identity-from-motion) loss enters the generator objective
//! with a negative weight; the discriminator minimizes the same loss with a
//! positive sign in its own update.

use std::fmt::Write as _;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Clamp for the cosine denominators of the similarity loss.
pub const SIMILARITY_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub vgg: f64,
    pub adv: f64,
    pub s: f64,
    pub d: f64,
    pub r: f64,
    pub id: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::reference()
    }
}

impl LossWeights {
    /// Published weights, image losses included.
    pub fn reference() -> Self {
        Self {
            recon: 1.0,
            vgg: 1.0,
            adv: 1.0,
            s: 2.0,
            d: 0.04,
            r: 1.0,
            id: 0.05,
        }
    }

    /// Reference weights with the image-only terms switched off.
    pub fn synthetic() -> Self {
        Self {
            vgg: 0.0,
            adv: 0.0,
            ..Self::reference()
        }
    }

    pub fn zero() -> Self {
        Self {
            recon: 0.0,
            vgg: 0.0,
            adv: 0.0,
            s: 0.0,
            d: 0.0,
            r: 0.0,
            id: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("recon", self.recon),
            ("vgg", self.vgg),
            ("adv", self.adv),
            ("s", self.s),
            ("d", self.d),
            ("r", self.r),
            ("id", self.id),
        ];
        for (name, w) in named {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config {
                    key: format!("loss.{name}"),
                    msg: format!("weight must be a finite non-negative number, got {w}"),
                });
            }
        }
        Ok(())
    }
}

/// The fixed pairing `(t, T + t)` for `t < T = B/2`.
pub fn batch_pairs(batch: usize) -> Result<Vec<(usize, usize)>> {
    if batch == 0 || batch % 2 != 0 {
        return Err(Error::Contract(format!(
            "similarity pairing needs an even, non-zero batch, got {batch}"
        )));
    }
    let t = batch / 2;
    Ok((0..t).map(|i| (i, t + i)).collect())
}

fn pairwise_similarities(g: &mut Graph, rows: Var, pairs: &[(usize, usize)], eps: f64) -> Result<Var> {
    let sims = pairs
        .iter()
        .map(|&(i, j)| {
            let a = g.row(rows, i)?;
            let b = g.row(rows, j)?;
            g.cosine_sim(a, b, eps)
        })
        .collect::<Result<Vec<_>>>()?;
    g.stack(&sims)
}

/// Negative cosine between the pairwise-similarity vector of the identity
/// descriptors and that of the reference identity features.
///
/// `w_id` is `B×N`, `f_id` is `B×K`; both are paired as `(t, T + t)`.
pub fn similarity_loss(g: &mut Graph, w_id: Var, f_id: Var, eps: f64) -> Result<Var> {
    let (sw, sf) = (g.shape(w_id).to_vec(), g.shape(f_id).to_vec());
    if sw.len() != 2 || sf.len() != 2 || sw[0] != sf[0] {
        return Err(Error::dim("similarity_loss", &sw, &sf));
    }
    let pairs = batch_pairs(sw[0])?;
    let s_w = pairwise_similarities(g, w_id, &pairs, eps)?;
    let s_id = pairwise_similarities(g, f_id, &pairs, eps)?;
    let c = g.cosine_sim(s_id, s_w, eps)?;
    g.scale(c, -1.0)
}

/// Cross-entropy of discriminator logits `[B×C]` against driving labels.
pub fn domain_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.softmax_cross_entropy_rows(logits, labels)
}

/// Cross-entropy of classifier logits `[B×C]` against source labels.
pub fn identity_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.softmax_cross_entropy_rows(logits, labels)
}

/// `‖ŵ_id − w_id‖₁ + ‖ŵ_m − w_m‖₁`.
pub fn latent_regression_loss(
    g: &mut Graph,
    hat_w_id: Var,
    w_id: Var,
    hat_w_m: Var,
    w_m: Var,
) -> Result<Var> {
    let a = g.l1_distance(hat_w_id, w_id)?;
    let b = g.l1_distance(hat_w_m, w_m)?;
    g.add(a, b)
}

/// Mean squared error over all observation entries.
pub fn reconstruction_loss(g: &mut Graph, generated: Var, target: Var) -> Result<Var> {
    g.mse(generated, target)
}

/// Scalar loss terms of one generator step, all from the same graph.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub recon: Var,
    pub vgg: Var,
    pub adv: Var,
    pub s: Var,
    pub d: Var,
    pub r: Var,
    pub id: Var,
}

impl LossTerms {
    /// All terms set to a shared zero constant.
    pub fn zeros(g: &mut Graph) -> Self {
        let z = g.scalar_constant(0.0);
        Self {
            recon: z,
            vgg: z,
            adv: z,
            s: z,
            d: z,
            r: z,
            id: z,
        }
    }
}

/// `recon + vgg + adv + s − d + r + id`, each term scaled by its weight.
pub fn total_generator_loss(g: &mut Graph, parts: &LossTerms, w: &LossWeights) -> Result<Var> {
    let weighted = [
        (parts.recon, w.recon),
        (parts.vgg, w.vgg),
        (parts.adv, w.adv),
        (parts.s, w.s),
        (parts.d, -w.d),
        (parts.r, w.r),
        (parts.id, w.id),
    ]
    .into_iter()
    .map(|(v, k)| g.scale(v, k))
    .collect::<Result<Vec<_>>>()?;
    g.add_all(&weighted)
}

/// Per-step loss values as logged.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub recon: f64,
    pub s: f64,
    pub d: f64,
    pub r: f64,
    pub id: f64,
    pub total: f64,
    /// Discriminator loss in its own update (not logged in the CSV).
    pub disc: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,L_recon,L_s,L_d,L_r,L_id,total";

    pub fn csv_row(&self) -> String {
        let mut s = self.step.to_string();
        for v in [self.recon, self.s, self.d, self.r, self.id, self.total] {
            write!(s, ",{v:e}").unwrap();
        }
        s
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("L_recon", self.recon),
            ("L_s", self.s),
            ("L_d", self.d),
            ("L_r", self.r),
            ("L_id", self.id),
            ("total", self.total),
            ("L_d(disc)", self.disc),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}
