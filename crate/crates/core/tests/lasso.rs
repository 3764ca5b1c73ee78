#![allow(clippy::needless_range_loop)]

use convperf::classifiers::{train_lasso, train_lasso_traced, LassoParams};

fn toy() -> (Vec<Vec<f64>>, Vec<u8>) {
    let xs: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            let t = i as f64;
            vec![
                (t * 0.37).sin() * 3.0,
                (t * 0.11).cos(),
                t / 30.0 + (t * 1.3).sin() * 0.2,
            ]
        })
        .collect();
    let ys = xs
        .iter()
        .map(|r| u8::from(r[0] + 2.0 * r[2] > 0.5))
        .collect();
    (xs, ys)
}

/// Solves the 4x4 normal equations of least squares with intercept.
fn normal_equations(xs: &[Vec<f64>], ys: &[u8]) -> Vec<f64> {
    let p = xs[0].len() + 1;
    let mut m = vec![vec![0.0; p + 1]; p];
    for (x, &y) in xs.iter().zip(ys) {
        let row: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
        for i in 0..p {
            for j in 0..p {
                m[i][j] += row[i] * row[j];
            }
            m[i][p] += row[i] * y as f64;
        }
    }
    // Gauss-Jordan
    for c in 0..p {
        let piv = (c..p)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != c {
                let f = m[r][c];
                for k in 0..=p {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    m.iter().map(|r| r[p]).collect()
}

#[test]
fn zero_penalty_is_least_squares() {
    let (xs, ys) = toy();
    let m = train_lasso(
        &xs,
        &ys,
        &LassoParams {
            lambda: 0.0,
            iters: 50_000,
        },
    )
    .unwrap();
    let (w, b) = m.raw_coefficients();
    let beta = normal_equations(&xs, &ys);
    assert!((b - beta[0]).abs() < 1e-6, "{b} vs {}", beta[0]);
    for (a, o) in w.iter().zip(&beta[1..]) {
        assert!((a - o).abs() < 1e-6, "{a} vs {o}");
    }
}

#[test]
fn support_shrinks_as_penalty_grows() {
    let (xs, ys) = toy();
    let mut last = usize::MAX;
    for lambda in [0.0, 0.01, 0.05, 0.1, 0.2, 0.4, 1.0, 10.0] {
        let nz = train_lasso(
            &xs,
            &ys,
            &LassoParams {
                lambda,
                iters: 5000,
            },
        )
        .unwrap()
        .support()
        .len();
        assert!(nz <= last, "lambda {lambda}: {nz} > {last}");
        last = nz;
    }
    assert_eq!(last, 0);
}

#[test]
fn huge_penalty_leaves_mean_intercept() {
    let (xs, ys) = toy();
    let m = train_lasso(
        &xs,
        &ys,
        &LassoParams {
            lambda: 1e9,
            iters: 10,
        },
    )
    .unwrap();
    assert!(m.weights.iter().all(|&w| w == 0.0));
    let mean = ys.iter().map(|&y| y as f64).sum::<f64>() / ys.len() as f64;
    assert_eq!(m.intercept, mean);
}

#[test]
fn objective_never_increases() {
    let (xs, ys) = toy();
    let (_, trace) = train_lasso_traced(
        &xs,
        &ys,
        &LassoParams {
            lambda: 0.05,
            iters: 200,
        },
    )
    .unwrap();
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn negative_penalty_is_rejected() {
    let (xs, ys) = toy();
    assert!(train_lasso(
        &xs,
        &ys,
        &LassoParams {
            lambda: -1.0,
            iters: 10
        }
    )
    .is_err());
}
