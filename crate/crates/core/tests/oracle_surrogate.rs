//! Cross-checks the fitted outcome models against independently coded
//! oracles: the polynomial fit against raw-monomial normal equations solved
//! by Gaussian elimination, and the nearest-neighbor lookup against an
//! exhaustive scan. Both oracles avoid the implementation's linear-algebra
//! stack entirely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windfall::surrogate::{fit_nearest, fit_polynomial};

/// All exponent tuples with positive total degree at most `degree`,
/// enumerated by counting in base degree+1 and filtering. The order differs
/// from the implementation's graded enumeration; predictions do not care.
fn all_exponents(n_features: usize, degree: usize) -> Vec<Vec<u32>> {
    let base = degree as u32 + 1;
    let mut out = Vec::new();
    let combos = (base as usize).pow(n_features as u32);
    for code in 0..combos {
        let mut rest = code;
        let mut exps = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            exps.push((rest % base as usize) as u32);
            rest /= base as usize;
        }
        let total: u32 = exps.iter().sum();
        if total >= 1 && total <= degree as u32 {
            out.push(exps);
        }
    }
    out
}

fn monomials(exps: &[Vec<u32>], x: &[f64]) -> Vec<f64> {
    exps.iter()
        .map(|e| e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product())
        .collect()
}

/// Solves A·β = b in place by Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        assert!(a[col][col].abs() > 0.0, "singular normal matrix");
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                let upper = a[col][k];
                a[row][k] -= factor * upper;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut beta = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * beta[k];
        }
        beta[row] = acc / a[row][row];
    }
    beta
}

/// Least squares on the raw monomial design (intercept first) via the
/// normal equations XᵀX·β = Xᵀy.
struct NormalEquationsFit {
    exps: Vec<Vec<u32>>,
    beta: Vec<f64>,
}

impl NormalEquationsFit {
    fn fit(xs: &[Vec<f64>], ys: &[f64], degree: usize) -> Self {
        let exps = all_exponents(xs[0].len(), degree);
        let rows: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let mut row = vec![1.0];
                row.extend(monomials(&exps, x));
                row
            })
            .collect();
        let m = exps.len() + 1;
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for (row, &y) in rows.iter().zip(ys) {
            for i in 0..m {
                for j in 0..m {
                    gram[i][j] += row[i] * row[j];
                }
                rhs[i] += row[i] * y;
            }
        }
        NormalEquationsFit { exps, beta: solve_dense(gram, rhs) }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = self.beta[0];
        for (b, v) in self.beta[1..].iter().zip(monomials(&self.exps, x)) {
            acc += b * v;
        }
        acc
    }
}

fn random_poly_targets(rng: &mut ChaCha8Rng, xs: &[Vec<f64>], degree: usize) -> Vec<f64> {
    let exps = all_exponents(xs[0].len(), degree);
    let coefs: Vec<f64> = (0..=exps.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    xs.iter()
        .map(|x| {
            coefs[0]
                + coefs[1..]
                    .iter()
                    .zip(monomials(&exps, x))
                    .map(|(c, v)| c * v)
                    .sum::<f64>()
        })
        .collect()
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

/// The standardized SVD fit and the raw normal equations are different
/// numerical routes to the same least-squares optimum; in-range predictions
/// must agree to well under 1e-6 relative.
#[test]
fn polynomial_fit_matches_normal_equations_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for trial in 0..30 {
        let n_feat = rng.gen_range(1..=3usize);
        let degree = rng.gen_range(1..=3usize);
        let xs: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..n_feat).map(|_| rng.gen_range(0.0..8.0)).collect())
            .collect();
        let ys_flat = random_poly_targets(&mut rng, &xs, degree);
        let ys: Vec<Vec<f64>> = ys_flat.iter().map(|&y| vec![y]).collect();

        let model = fit_polynomial(&xs, &ys, degree).unwrap();
        let oracle = NormalEquationsFit::fit(&xs, &ys_flat, degree);

        for _ in 0..20 {
            let q: Vec<f64> = (0..n_feat).map(|_| rng.gen_range(0.0..8.0)).collect();
            let got = model.predict(&q)[0];
            let want = oracle.predict(&q);
            assert!(
                rel_gap(got, want) < 1e-6,
                "trial {trial} feat {n_feat} deg {degree}: {got} vs {want}"
            );
        }
    }
}

/// Noiseless data generated by a quadratic is reproduced exactly; both
/// routes interpolate, so the training residual itself is ~0.
#[test]
fn quadratic_data_is_interpolated_by_both_routes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC);
    let xs: Vec<Vec<f64>> = (0..50)
        .map(|_| vec![rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0)])
        .collect();
    let ys_flat = random_poly_targets(&mut rng, &xs, 2);
    let ys: Vec<Vec<f64>> = ys_flat.iter().map(|&y| vec![y]).collect();
    let model = fit_polynomial(&xs, &ys, 2).unwrap();
    let oracle = NormalEquationsFit::fit(&xs, &ys_flat, 2);
    for (x, &y) in xs.iter().zip(&ys_flat) {
        assert!(rel_gap(model.predict(x)[0], y) < 1e-6, "fit missed a training point");
        assert!(rel_gap(oracle.predict(x), y) < 1e-6, "oracle missed a training point");
    }
}

/// Multi-target fits share one design matrix; each column must match its
/// own single-target oracle fit.
#[test]
fn multi_target_columns_fit_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2C01);
    let xs: Vec<Vec<f64>> = (0..40)
        .map(|_| vec![rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)])
        .collect();
    let col0 = random_poly_targets(&mut rng, &xs, 2);
    let col1 = random_poly_targets(&mut rng, &xs, 2);
    let ys: Vec<Vec<f64>> = col0.iter().zip(&col1).map(|(&a, &b)| vec![a, b]).collect();
    let model = fit_polynomial(&xs, &ys, 2).unwrap();
    let o0 = NormalEquationsFit::fit(&xs, &col0, 2);
    let o1 = NormalEquationsFit::fit(&xs, &col1, 2);
    for _ in 0..20 {
        let q = vec![rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)];
        let got = model.predict(&q);
        assert!(rel_gap(got[0], o0.predict(&q)) < 1e-6);
        assert!(rel_gap(got[1], o1.predict(&q)) < 1e-6);
    }
}

/// Exhaustive scan under the same min-max normalization, coded from the
/// training data alone: recompute the per-feature extents, normalize, and
/// argmin squared distance with strict improvement (ties keep the earliest
/// index).
fn scan_nearest(xs: &[Vec<f64>], query: &[f64]) -> usize {
    let n_feat = query.len();
    let mut lo = vec![f64::INFINITY; n_feat];
    let mut hi = vec![f64::NEG_INFINITY; n_feat];
    for row in xs {
        for (k, &v) in row.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let span: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(&a, &b)| if b > a { b - a } else { 1.0 })
        .collect();
    let norm = |row: &[f64]| -> Vec<f64> {
        row.iter()
            .zip(&lo)
            .zip(&span)
            .map(|((&v, &min), &s)| (v - min) / s)
            .collect()
    };
    let q = norm(query);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, row) in xs.iter().enumerate() {
        let r = norm(row);
        let d: f64 = r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[test]
fn nearest_lookup_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5CA7);
    let xs: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            // Features on wildly different scales exercise the
            // normalization: raw distance would be dominated by the third.
            vec![
                rng.gen_range(0.0..1.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(1e9..2e9),
            ]
        })
        .collect();
    let ys: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64]).collect();
    let model = fit_nearest(&xs, &ys).unwrap();
    for _ in 0..1000 {
        let q = vec![
            rng.gen_range(-0.2..1.2),
            rng.gen_range(-60.0..60.0),
            rng.gen_range(0.9e9..2.1e9),
        ];
        let want = scan_nearest(&xs, &q);
        assert_eq!(model.predict(&q), ys[want], "query {q:?}");
    }
}

/// Every training point is its own nearest neighbor, so lookup on the
/// training set reproduces the targets exactly.
#[test]
fn training_points_reproduce_their_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7EA1);
    let xs: Vec<Vec<f64>> = (0..150)
        .map(|_| vec![rng.gen_range(0.0..1e6), rng.gen_range(0.0..1e6)])
        .collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] - x[1], x[0] * 2.0]).collect();
    let model = fit_nearest(&xs, &ys).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        assert_eq!(&model.predict(x), y);
    }
}

/// A feature constant across training contributes nothing to the distance
/// (its fallback span is 1), so ranking falls to the remaining features.
#[test]
fn constant_feature_does_not_poison_distances() {
    let xs = vec![vec![7.0, 0.0], vec![7.0, 10.0], vec![7.0, 20.0]];
    let ys = vec![vec![1.0], vec![2.0], vec![3.0]];
    let model = fit_nearest(&xs, &ys).unwrap();
    assert_eq!(model.predict(&[7.0, 11.0]), vec![2.0]);
    // Even a query moving the constant feature stays finite and ranked.
    assert_eq!(model.predict(&[900.0, 19.0]), vec![3.0]);
}
