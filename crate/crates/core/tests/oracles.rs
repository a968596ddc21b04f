//! Checks against independent reference computations.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use dispace::autodiff::Tensor;
use dispace::eval::{linear_probe, principal_components, project_2d, silhouette};
use dispace::subspace::{project, BasisDims, OrthonormalBasis, SubspaceDescriptors};
use dispace::synthdata::{generate_world, make_batches, Mixing, PairMode, WorldSpec};

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.singular_values();
    s.max() / s.min()
}

#[test]
fn gram_schmidt_matches_householder_qr() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (r, n) = (5, 8);
    let mut checked = 0;
    while checked < 50 {
        let data = gaussian(&mut rng, r, n);
        let m = DMatrix::from_row_slice(r, n, &data);
        if condition_number(&m) >= 100.0 {
            continue;
        }
        let dims = BasisDims {
            identity: 2,
            motion: 3,
            latent: n,
        };
        let ours = OrthonormalBasis::new(Tensor::new(vec![r, n], data).unwrap(), dims)
            .unwrap()
            .orthonormalized()
            .unwrap();
        // Rows of ours span the same flags as the columns of Q in mᵀ = QR.
        let q = m.transpose().qr().q();
        for i in 0..r {
            let row = ours.row(i);
            let col: Vec<f64> = q.column(i).iter().copied().collect();
            let sign = if row.iter().zip(&col).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                -1.0
            } else {
                1.0
            };
            for (a, b) in row.iter().zip(&col) {
                assert!((a - sign * b).abs() < 1e-8, "matrix {checked} row {i}: {a} vs {b}");
            }
        }
        checked += 1;
    }
}

#[test]
fn linear_world_is_explained_by_its_factors() {
    let spec = WorldSpec::default();
    assert_eq!(spec.mixing, Mixing::Linear);
    let ds = generate_world(&spec).unwrap();
    let k = spec.dim_zid + spec.dim_zm;
    let n = ds.len();
    let z = DMatrix::from_fn(n, k, |i, j| {
        let s = &ds.samples[i];
        if j < spec.dim_zid {
            s.z_id[j]
        } else {
            s.z_m[j - spec.dim_zid]
        }
    });
    let obs = DMatrix::from_fn(n, spec.obs_dim, |i, j| ds.samples[i].observation[j]);
    // Normal equations: (ZᵀZ) W = Zᵀ O.
    let w = (z.transpose() * &z).cholesky().unwrap().solve(&(z.transpose() * &obs));
    let resid = &obs - &z * w;
    let rms = (resid.norm_squared() / (n * spec.obs_dim) as f64).sqrt();
    assert!(rms < spec.noise_sigma, "residual rms {rms} vs noise {}", spec.noise_sigma);
    assert!(rms > 0.5 * spec.noise_sigma);
}

#[test]
fn identities_are_balanced_over_any_100_batches() {
    let spec = WorldSpec::default();
    let ds = generate_world(&spec).unwrap();
    let batches = make_batches(&ds, 32, PairMode::SelfReenact, 5, 300).unwrap();
    for start in [0, 1, 17, 63, 200] {
        let mut counts = vec![0usize; spec.identities];
        for b in &batches[start..start + 100] {
            for &i in &b.source {
                counts[ds.samples[i].identity_label] += 1;
            }
        }
        let mean = counts.iter().sum::<usize>() as f64 / spec.identities as f64;
        for (id, &c) in counts.iter().enumerate() {
            assert!((c as f64 - mean).abs() <= 1.0, "start {start} identity {id}: {c} vs {mean}");
        }
    }
}

#[test]
fn probe_on_noise_sits_at_chance() {
    let classes = 16;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let labels: Vec<usize> = (0..1024).map(|i| i % classes).collect();
        let features: Vec<Vec<f64>> = labels.iter().map(|_| gaussian(&mut rng, 1, 64)).collect();
        let r = linear_probe(&features, &labels, seed).unwrap();
        let chance = 1.0 / classes as f64;
        assert!((r.test_accuracy - chance).abs() <= 0.08, "seed {seed}: {}", r.test_accuracy);
    }
}

#[test]
fn silhouette_of_shuffled_labels_is_near_zero() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let centers: Vec<Vec<f64>> = (0..8).map(|_| gaussian(&mut rng, 1, 6)).collect();
    let mut labels: Vec<usize> = (0..1600).map(|i| i % 8).collect();
    let points: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let noise = gaussian(&mut rng, 1, 6);
            centers[l].iter().zip(noise).map(|(c, e)| 3.0 * c + 0.3 * e).collect()
        })
        .collect();
    assert!(silhouette(&points, &labels).unwrap().silhouette > 0.5);
    for seed in 0..5 {
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let s = silhouette(&points, &labels).unwrap().silhouette;
        assert!(s.abs() < 0.1, "seed {seed}: {s}");
    }
}

#[test]
fn two_components_match_truncated_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, d) = (50, 16);
    let points: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, 1, d)).collect();
    let (mean, pcs) = principal_components(&points, 2).unwrap();

    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let ours: f64 = points
        .iter()
        .map(|p| {
            let c: Vec<f64> = p.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let mut rec = vec![0.0; d];
            for v in pcs.iter().flatten() {
                let coef: f64 = c.iter().zip(v).map(|(a, b)| a * b).sum();
                rec.iter_mut().zip(v).for_each(|(r, b)| *r += coef * b);
            }
            c.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    let svd = centered.svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let truncated: f64 = s[2..].iter().map(|x| x * x).sum();
    assert!((ours - truncated).abs() < 1e-6, "{ours} vs {truncated}");
}

fn orthonormal(rows: usize, cols: usize, seed: u64) -> (BasisDims, Tensor) {
    let dims = BasisDims {
        identity: rows / 2,
        motion: rows - rows / 2,
        latent: cols,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = OrthonormalBasis::random(dims, &mut rng)
        .unwrap()
        .orthonormalized()
        .unwrap();
    (dims, q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn orthonormalized_rows_are_orthonormal(rows in 2usize..=40, extra in 0usize..=472, seed: u64) {
        let (_, q) = orthonormal(rows, rows + extra, seed);
        let n = q.shape()[1];
        for i in 0..rows {
            for j in 0..rows {
                let d: f64 = (0..n).map(|k| q.at(i, k) * q.at(j, k)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn descriptors_are_orthogonal_and_decomposable(
        rows in 2usize..=20,
        extra in 0usize..=40,
        seed: u64,
        coef_seed: u64,
    ) {
        let (dims, q) = orthonormal(rows, rows + extra, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(coef_seed);
        let a: Vec<f64> = (0..dims.identity).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..dims.motion).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = SubspaceDescriptors::compose(&q, dims.identity, &a, &b).unwrap();
        let dot: f64 = d.w_id.iter().zip(&d.w_m).map(|(x, y)| x * y).sum();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(dot.abs() <= 1e-6 * norm(&d.w_id) * norm(&d.w_m) + 1e-300);

        let n = dims.latent;
        let x_id = Tensor::new(vec![dims.identity, n], q.data()[..dims.identity * n].to_vec()).unwrap();
        let y_m = Tensor::new(vec![dims.motion, n], q.data()[dims.identity * n..].to_vec()).unwrap();
        for (got, want) in project(&x_id, &d.f).iter().zip(&a) {
            prop_assert!((got - want).abs() < 1e-9);
        }
        for (got, want) in project(&y_m, &d.f).iter().zip(&b) {
            prop_assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_ignores_translation(seed: u64, shift in prop::collection::vec(-50.0f64..50.0, 6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let mut p = gaussian(&mut rng, 1, 6);
                p[i % 3] += 4.0 * (i % 3) as f64;
                p
            })
            .collect();
        let moved: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().zip(&shift).map(|(x, s)| x + s).collect())
            .collect();
        let a = project_2d(&points).unwrap();
        let b = project_2d(&moved).unwrap();
        for ((ax, ay), (bx, by)) in a.iter().zip(&b) {
            prop_assert!((ax - bx).abs() < 1e-9 && (ay - by).abs() < 1e-9);
        }
    }
}
