//! Post-hoc measurements on frozen descriptors: linear identity probes,
//! silhouette of identity clusters, PCA projection, motion interpolation
//! and the zeroed-descriptor check.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{dot, Tensor};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::subspace::{interpolate_motion, Subspace, SubspaceDescriptors};
use crate::synthdata::Dataset;

// ---- linear probe -----------------------------------------------------------

pub const PROBE_MAX_ITERS: usize = 10_000;
pub const PROBE_GRAD_TOL: f64 = 1e-6;
const PROBE_L2: f64 = 1e-4;
const MAX_RESPLITS: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeTarget {
    IdentityFromMotion,
    IdentityFromIdentity,
}

impl ProbeTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeTarget::IdentityFromMotion => "identity-from-w_m",
            ProbeTarget::IdentityFromIdentity => "identity-from-w_id",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub chance: f64,
    pub iterations: usize,
    pub split_seed: u64,
}

/// Multinomial logistic regression on an 80/20 split, fitted by full-batch
/// gradient descent (step `1/L` from the curvature bound) until the
/// gradient norm drops below [`PROBE_GRAD_TOL`] or [`PROBE_MAX_ITERS`].
///
/// Features are standardized with training statistics; a small L2 penalty
/// keeps the optimum finite on separable data. If some class is missing
/// from the training split the split is redrawn with the next seed.
pub fn linear_probe(features: &[Vec<f64>], labels: &[usize], split_seed: u64) -> Result<ProbeReport> {
    if features.len() != labels.len() {
        return Err(Error::dim("linear_probe", &[features.len()], &[labels.len()]));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::Contract("probe needs at least 2 identities".into()));
    }
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if counts.iter().any(|&c| c < 4) {
        return Err(Error::Contract("probe needs at least 4 samples per identity".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Contract("probe features have ragged widths".into()));
    }

    let n = features.len();
    let n_train = (n * 4) / 5;
    let mut seed = split_seed;
    let (train, test) = loop {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (tr, te) = idx.split_at(n_train);
        let mut present = vec![false; classes];
        tr.iter().for_each(|&i| present[labels[i]] = true);
        if present.iter().all(|&p| p) {
            break (tr.to_vec(), te.to_vec());
        }
        seed += 1;
        if seed - split_seed > MAX_RESPLITS {
            return Err(Error::Contract("could not draw a split covering every class".into()));
        }
    };

    // standardize with training statistics, append a bias column
    let mut mean = vec![0.0; dim];
    for &i in &train {
        mean.iter_mut().zip(&features[i]).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut sd = vec![0.0; dim];
    for &i in &train {
        sd.iter_mut()
            .zip(features[i].iter().zip(&mean))
            .for_each(|(s, (x, m))| *s += (x - m) * (x - m));
    }
    sd.iter_mut().for_each(|s| {
        *s = (*s / train.len() as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    });
    let d = dim + 1;
    let design = |rows: &[usize]| -> Vec<f64> {
        let mut x = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            x.extend(features[i].iter().zip(mean.iter().zip(&sd)).map(|(v, (m, s))| (v - m) / s));
            x.push(1.0);
        }
        x
    };
    let (x_train, x_test, lambda_max) = {
        // Gradient descent from zero never leaves the row space of the
        // training design, so fit in that (often much smaller) basis.
        let full_train = design(&train);
        let full_test = design(&test);
        let gram = nalgebra::DMatrix::from_row_slice(d, d, &gram_matrix(&full_train, train.len(), d));
        let eig = nalgebra::SymmetricEigen::new(gram);
        let lambda_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..d)
            .filter(|&k| eig.eigenvalues[k] > 1e-10 * lambda_max)
            .collect();
        let reduce = |x: &[f64]| -> Vec<f64> {
            x.chunks(d)
                .flat_map(|row| {
                    keep.iter()
                        .map(|&k| dot(row, eig.eigenvectors.column(k).as_slice()))
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        (reduce(&full_train), reduce(&full_test), lambda_max)
    };
    let d = x_train.len() / train.len();
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();

    let lipschitz = 0.5 * lambda_max + PROBE_L2;
    let step = 1.0 / lipschitz;
    let mut w = vec![0.0; d * classes];
    let mut iterations = 0;
    let nt = train.len() as f64;
    let mut probs = vec![0.0; classes];
    for it in 0..PROBE_MAX_ITERS {
        iterations = it + 1;
        let mut grad: Vec<f64> = w.iter().map(|wi| PROBE_L2 * wi).collect();
        for (r, &y) in y_train.iter().enumerate() {
            let xr = &x_train[r * d..(r + 1) * d];
            softmax_row(xr, &w, classes, &mut probs);
            probs[y] -= 1.0;
            for (k, xk) in xr.iter().enumerate() {
                let gk = &mut grad[k * classes..(k + 1) * classes];
                gk.iter_mut().zip(&probs).for_each(|(g, p)| *g += xk * p / nt);
            }
        }
        if dot(&grad, &grad).sqrt() < PROBE_GRAD_TOL {
            break;
        }
        w.iter_mut().zip(&grad).for_each(|(w, g)| *w -= step * g);
    }

    let accuracy = |x: &[f64], y: &[usize]| {
        let correct = y
            .iter()
            .enumerate()
            .filter(|&(r, &t)| {
                let mut p = vec![0.0; classes];
                softmax_row(&x[r * d..(r + 1) * d], &w, classes, &mut p);
                argmax(&p) == t
            })
            .count();
        correct as f64 / y.len().max(1) as f64
    };
    Ok(ProbeReport {
        train_accuracy: accuracy(&x_train, &y_train),
        test_accuracy: accuracy(&x_test, &y_test),
        chance: 1.0 / classes as f64,
        iterations,
        split_seed: seed,
    })
}

fn softmax_row(x: &[f64], w: &[f64], classes: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (k, xk) in x.iter().enumerate() {
        if *xk != 0.0 {
            out.iter_mut()
                .zip(&w[k * classes..(k + 1) * classes])
                .for_each(|(o, wk)| *o += xk * wk);
        }
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    out.iter_mut().for_each(|o| {
        *o = (*o - max).exp();
        total += *o;
    });
    out.iter_mut().for_each(|o| *o /= total);
}

fn argmax(v: &[f64]) -> usize {
    // first maximum wins, so constant scores pick class 0 deterministically
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn gram_matrix(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        for i in 0..d {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..d {
                g[i * d + j] += xi * row[j];
            }
        }
    }
    g.iter_mut().for_each(|v| *v /= n as f64);
    g
}

fn sym_matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

// ---- clustering -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterReport {
    pub silhouette: f64,
    /// Per identity: mean distance of members to their own centroid.
    pub intra_distance: Vec<f64>,
    /// Per identity: distance from its centroid to the nearest other one.
    pub nearest_centroid_distance: Vec<f64>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn centroids(points: &[Vec<f64>], labels: &[usize], classes: usize) -> Vec<Option<Vec<f64>>> {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (p, &l) in points.iter().zip(labels) {
        sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        counts[l] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(mut s, c)| {
            (c > 0).then(|| {
                s.iter_mut().for_each(|x| *x /= c as f64);
                s
            })
        })
        .collect()
}

/// Mean silhouette with Euclidean distance; a sample alone in its cluster
/// scores 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<ClusterReport> {
    if points.len() != labels.len() {
        return Err(Error::dim("silhouette", &[points.len()], &[labels.len()]));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![0usize; classes];
    labels.iter().for_each(|&l| present[l] += 1);
    if present.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Contract("silhouette needs at least 2 identities".into()));
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; classes];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += euclid(&points[i], &points[j]);
            }
        }
        let own = labels[i];
        if present[own] == 1 {
            continue;
        }
        let a = sums[own] / (present[own] - 1) as f64;
        let b = (0..classes)
            .filter(|&c| c != own && present[c] > 0)
            .map(|c| sums[c] / present[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    let cents = centroids(points, labels, classes);
    let mut intra = vec![0.0; classes];
    for (p, &l) in points.iter().zip(labels) {
        intra[l] += euclid(p, cents[l].as_ref().unwrap()) / present[l] as f64;
    }
    let nearest = (0..classes)
        .map(|c| match &cents[c] {
            None => f64::NAN,
            Some(cc) => cents
                .iter()
                .enumerate()
                .filter(|(o, _)| *o != c)
                .filter_map(|(_, o)| o.as_ref().map(|o| euclid(cc, o)))
                .fold(f64::INFINITY, f64::min),
        })
        .collect();
    Ok(ClusterReport {
        silhouette: total / n as f64,
        intra_distance: intra,
        nearest_centroid_distance: nearest,
    })
}

/// Fraction of points whose nearest class centroid is their own class.
pub fn nearest_centroid_accuracy(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let cents = centroids(points, labels, classes);
    let correct = points
        .iter()
        .zip(labels)
        .filter(|(p, &l)| {
            let best = cents
                .iter()
                .enumerate()
                .filter_map(|(c, cc)| cc.as_ref().map(|cc| (c, euclid(p, cc))))
                .fold((usize::MAX, f64::INFINITY), |b, (c, d)| if d < b.1 { (c, d) } else { b });
            best.0 == l
        })
        .count();
    correct as f64 / points.len().max(1) as f64
}

// ---- PCA projection ---------------------------------------------------------

const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITERS: usize = 10_000;

/// Top principal directions of the centered data, by power iteration with
/// deflation. Each returned direction has its largest-magnitude entry
/// positive; zero-variance directions come back as `None`.
pub fn principal_components(points: &[Vec<f64>], k: usize) -> Result<(Vec<f64>, Vec<Option<Vec<f64>>>)> {
    if points.is_empty() {
        return Err(Error::Contract("no points to project".into()));
    }
    let d = points[0].len();
    let n = points.len();
    let mut mean = vec![0.0; d];
    points.iter().for_each(|p| mean.iter_mut().zip(p).for_each(|(m, x)| *m += x));
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = points
        .iter()
        .flat_map(|p| p.iter().zip(&mean).map(|(x, m)| x - m))
        .collect();
    let mut cov = gram_matrix(&centered, n, d);
    let scale = (0..d).map(|i| cov[i * d + i]).sum::<f64>();

    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        // deterministic start that is not orthogonal to generic data
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i + c) as f64 * 0.618).sin()).collect();
        let mut lambda = 0.0;
        let mut found = false;
        for _ in 0..PCA_MAX_ITERS {
            let mut next = sym_matvec(&cov, &v);
            let nrm = dot(&next, &next).sqrt();
            if !(nrm > PCA_TOL * scale.max(f64::MIN_POSITIVE)) {
                break;
            }
            next.iter_mut().for_each(|x| *x /= nrm);
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            lambda = nrm;
            found = true;
            if diff < PCA_TOL {
                break;
            }
        }
        if !found || scale == 0.0 {
            comps.push(None);
            continue;
        }
        // sign convention
        let big = v
            .iter()
            .copied()
            .fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        comps.push(Some(v));
    }
    Ok((mean, comps))
}

/// 2-D coordinates of each point on the top two principal components.
pub fn project_2d(points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if points.len() < 3 {
        return Err(Error::Contract("projection needs at least 3 descriptors".into()));
    }
    let (mean, comps) = principal_components(points, 2)?;
    let coord = |p: &[f64], c: &Option<Vec<f64>>| match c {
        None => 0.0,
        Some(c) => p.iter().zip(&mean).zip(c).map(|((x, m), v)| (x - m) * v).sum(),
    };
    Ok(points
        .iter()
        .map(|p| (coord(p, &comps[0]), coord(p, &comps[1])))
        .collect())
}

// ---- model-level procedures ---------------------------------------------------

/// Self-reenactment descriptors (source = driving) for every sample.
pub fn dataset_descriptors(model: &ModelState, dataset: &Dataset) -> Result<Vec<SubspaceDescriptors>> {
    let m = dataset.obs_dim;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let obs = Tensor::new(vec![idx.len(), m], dataset.observations(&idx))?;
    model.encode_values(&obs, &obs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationSweep {
    pub t: Vec<f64>,
    pub motion_path: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

/// Holds `w_id` of `a` fixed and walks `w_m` linearly from `a` to `b` at
/// `t = 0, 1/(steps−1), …, 1`, decoding each point.
pub fn interpolation_sweep(
    model: &ModelState,
    a: &[f64],
    b: &[f64],
    steps: usize,
) -> Result<InterpolationSweep> {
    if steps < 2 {
        return Err(Error::Contract(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let m = model.config.obs_dim;
    let pair = Tensor::new(vec![2, m], [a, b].concat())?;
    let d = model.encode_values(&pair, &pair)?;
    let (da, db) = (&d[0], &d[1]);
    let mut t = Vec::with_capacity(steps);
    let mut motion_path = Vec::with_capacity(steps);
    let mut fs = Vec::with_capacity(steps * model.config.basis.latent);
    for k in 0..steps {
        let tk = if k == steps - 1 { 1.0 } else { k as f64 / (steps - 1) as f64 };
        let wm = interpolate_motion(&da.w_m, &db.w_m, tk)?;
        fs.extend(da.with_motion(wm.clone()).f);
        t.push(tk);
        motion_path.push(wm);
    }
    let out = model.decode_values(&Tensor::new(vec![steps, model.config.basis.latent], fs)?)?;
    let outputs = (0..steps).map(|k| out.row(k).to_vec()).collect();
    Ok(InterpolationSweep {
        t,
        motion_path,
        outputs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroedReport {
    /// Nearest-centroid identity accuracy of outputs decoded with `b_m = 0`.
    pub zero_motion_accuracy: f64,
    /// The same for outputs decoded with `a_id = 0`.
    pub zero_identity_accuracy: f64,
}

pub fn zeroed_descriptor_eval(model: &ModelState, dataset: &Dataset) -> Result<ZeroedReport> {
    let desc = dataset_descriptors(model, dataset)?;
    let labels = dataset.labels();
    let n = model.config.basis.latent;
    let decode = |which: Subspace| -> Result<Vec<Vec<f64>>> {
        let f: Vec<f64> = desc
            .iter()
            .flat_map(|d| d.zero_descriptor(which).f)
            .collect();
        let out = model.decode_values(&Tensor::new(vec![desc.len(), n], f)?)?;
        Ok((0..desc.len()).map(|i| out.row(i).to_vec()).collect())
    };
    Ok(ZeroedReport {
        zero_motion_accuracy: nearest_centroid_accuracy(&decode(Subspace::Motion)?, &labels),
        zero_identity_accuracy: nearest_centroid_accuracy(&decode(Subspace::Identity)?, &labels),
    })
}

/// Full evaluation of a model on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub probe_motion: ProbeReport,
    pub probe_identity: ProbeReport,
    pub cluster: ClusterReport,
    pub zeroed: ZeroedReport,
    pub recon_mse: f64,
}

pub fn evaluate(model: &ModelState, dataset: &Dataset, probe_seed: u64) -> Result<EvalReport> {
    let desc = dataset_descriptors(model, dataset)?;
    let labels = dataset.labels();
    let w_m: Vec<Vec<f64>> = desc.iter().map(|d| d.w_m.clone()).collect();
    let w_id: Vec<Vec<f64>> = desc.iter().map(|d| d.w_id.clone()).collect();
    Ok(EvalReport {
        probe_motion: linear_probe(&w_m, &labels, probe_seed)?,
        probe_identity: linear_probe(&w_id, &labels, probe_seed)?,
        cluster: silhouette(&w_id, &labels)?,
        zeroed: zeroed_descriptor_eval(model, dataset)?,
        recon_mse: reconstruction_mse(model, dataset, &desc)?,
    })
}

/// Mean squared reconstruction error over the whole dataset.
pub fn reconstruction_mse(model: &ModelState, dataset: &Dataset, desc: &[SubspaceDescriptors]) -> Result<f64> {
    let n = model.config.basis.latent;
    let f: Vec<f64> = desc.iter().flat_map(|d| d.f.iter().copied()).collect();
    let out = model.decode_values(&Tensor::new(vec![desc.len(), n], f)?)?;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let target = dataset.observations(&idx);
    Ok(out
        .data()
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / target.len() as f64)
}

// ---- CSV --------------------------------------------------------------------

impl EvalReport {
    pub fn probe_csv(&self) -> String {
        let mut s = String::from("target,train_accuracy,test_accuracy,chance\n");
        for (t, p) in [
            (ProbeTarget::IdentityFromMotion, &self.probe_motion),
            (ProbeTarget::IdentityFromIdentity, &self.probe_identity),
        ] {
            writeln!(s, "{},{},{},{}", t.as_str(), p.train_accuracy, p.test_accuracy, p.chance).unwrap();
        }
        s
    }

    pub fn cluster_csv(&self) -> String {
        let mut s = String::from("identity,intra_distance,nearest_centroid_distance\n");
        for (i, (a, b)) in self
            .cluster
            .intra_distance
            .iter()
            .zip(&self.cluster.nearest_centroid_distance)
            .enumerate()
        {
            writeln!(s, "{i},{a},{b}").unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in [
            ("probe_identity_from_w_m", self.probe_motion.test_accuracy),
            ("probe_identity_from_w_id", self.probe_identity.test_accuracy),
            ("silhouette_w_id", self.cluster.silhouette),
            ("zero_motion_centroid_accuracy", self.zeroed.zero_motion_accuracy),
            ("zero_identity_centroid_accuracy", self.zeroed.zero_identity_accuracy),
            ("reconstruction_mse", self.recon_mse),
        ] {
            writeln!(s, "{k},{v}").unwrap();
        }
        s
    }
}

pub fn projection_csv(coords: &[(f64, f64)], labels: &[usize]) -> String {
    let mut s = String::from("x,y,identity_label\n");
    for ((x, y), l) in coords.iter().zip(labels) {
        writeln!(s, "{x},{y},{l}").unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn labels(classes: usize, per: usize) -> Vec<usize> {
        (0..classes * per).map(|i| i % classes).collect()
    }

    #[test]
    fn probe_on_one_hot_is_perfect() {
        let y = labels(5, 8);
        let x: Vec<Vec<f64>> = y
            .iter()
            .map(|&l| (0..5).map(|k| if k == l { 1.0 } else { 0.0 }).collect())
            .collect();
        let r = linear_probe(&x, &y, 0).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert_eq!(r.train_accuracy, 1.0);
        assert_eq!(r.chance, 0.2);
    }

    #[test]
    fn probe_on_constant_features_is_at_most_max_prior() {
        let y = labels(4, 10);
        let x = vec![vec![0.7, -1.0, 2.0]; y.len()];
        let r = linear_probe(&x, &y, 3).unwrap();
        assert!(r.test_accuracy <= 0.25 + 1e-12 + 0.25, "{r:?}");
        // a constant model predicts a single class on the balanced test set
        let per_class_max = 10.0 / 8.0; // at most all 8 test samples of one class
        assert!(r.test_accuracy <= per_class_max);
    }

    #[test]
    fn probe_rejects_tiny_classes() {
        let y = vec![0, 0, 0, 1, 1, 1, 1, 1];
        let x = vec![vec![0.0]; 8];
        assert!(linear_probe(&x, &y, 0).is_err());
    }

    #[test]
    fn silhouette_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        let mut ys = Vec::new();
        for c in 0..2 {
            for _ in 0..10 {
                pts.push(vec![c as f64 * 100.0 + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
                ys.push(c);
            }
        }
        let r = silhouette(&pts, &ys).unwrap();
        assert!(r.silhouette > 0.9);
        assert!(r.nearest_centroid_distance[0] > 99.0);
    }

    #[test]
    fn silhouette_duplicated_identity_is_not_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let pts: Vec<Vec<f64>> = base.iter().chain(&base).cloned().collect();
        let ys: Vec<usize> = (0..16).map(|i| i / 8).collect();
        assert!(silhouette(&pts, &ys).unwrap().silhouette <= 0.0);
    }

    #[test]
    fn silhouette_singleton_scores_zero() {
        let pts = vec![vec![0.0], vec![10.0], vec![10.5]];
        let r = silhouette(&pts, &[0, 1, 1]).unwrap();
        // singleton contributes 0; the pair scores close to 1 each
        let s_pair = |a: f64, b: f64| (b - a) / a.max(b);
        let expected = (s_pair(0.5, 10.0) + s_pair(0.5, 10.5)) / 3.0;
        assert!((r.silhouette - expected).abs() < 1e-12);
        assert!(silhouette(&pts, &[0, 0, 0]).is_err());
    }

    #[test]
    fn projection_of_collinear_and_identical_points() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let xy = project_2d(&pts).unwrap();
        assert!(xy.iter().all(|(_, y)| y.abs() < 1e-8));
        assert!(xy.iter().any(|(x, _)| x.abs() > 1.0));
        let same = vec![vec![1.0, 2.0]; 4];
        assert!(project_2d(&same).unwrap().iter().all(|&(x, y)| x == 0.0 && y == 0.0));
        assert!(project_2d(&same[..2]).is_err());
    }

    #[test]
    fn nearest_centroid_on_clean_clusters() {
        let pts = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.2]];
        assert_eq!(nearest_centroid_accuracy(&pts, &[0, 0, 1, 1]), 1.0);
    }
}
