//! Baseline classifiers over feature rows: logistic regression, an L1
//! shrinkage linear classifier (lasso on {0,1} targets thresholded at 0.5),
//! and a Gini random forest.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Standardizer;

fn check_xy(xs: &[Vec<f64>], ys: &[u8], min: usize) -> Result<usize> {
    if xs.len() < min {
        return Err(Error::invalid(format!(
            "need at least {min} training sample(s), got {}",
            xs.len()
        )));
    }
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    if ys.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let width = xs[0].len();
    if xs.iter().any(|r| r.len() != width) {
        return Err(Error::invalid("feature rows are not rectangular"));
    }
    Ok(width)
}

fn check_width(expected: usize, xs: &[Vec<f64>]) -> Result<()> {
    match xs.iter().find(|r| r.len() != expected) {
        Some(r) => Err(Error::DimensionMismatch {
            expected,
            got: r.len(),
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logistic,
    Lasso,
}

/// Linear model over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub standardizer: Standardizer,
}

impl LinearModel {
    /// Linear score on a raw feature row.
    pub fn decision(&self, row: &[f64]) -> f64 {
        let z = self.standardizer.transform_row(row);
        z.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() + self.intercept
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<u8>> {
        check_width(self.weights.len(), xs)?;
        Ok(xs
            .iter()
            .map(|r| {
                let s = self.decision(r);
                let p = match self.kind {
                    LinearKind::Logistic => sigmoid(s),
                    LinearKind::Lasso => s,
                };
                u8::from(p >= 0.5)
            })
            .collect())
    }

    /// Indices of non-zero weights.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&i| self.weights[i] != 0.0)
            .collect()
    }

    /// Coefficients in the original (unstandardized) feature space.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let w: Vec<f64> = self
            .weights
            .iter()
            .zip(&s.scale)
            .map(|(w, sc)| w / sc)
            .collect();
        let b = self.intercept - w.iter().zip(&s.mean).map(|(w, m)| w * m).sum::<f64>();
        (w, b)
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood on standardized rows.
fn logistic_nll(zs: &[Vec<f64>], ys: &[u8], w: &[f64], b: f64) -> f64 {
    zs.iter()
        .zip(ys)
        .map(|(z, &y)| {
            let s = z.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + b;
            // log(1 + e^s) - y s
            let softplus = if s > 0.0 {
                s + (-s).exp().ln_1p()
            } else {
                s.exp().ln_1p()
            };
            softplus - f64::from(y) * s
        })
        .sum::<f64>()
        / zs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub lr: f64,
    pub iters: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            lr: 0.1,
            iters: 500,
        }
    }
}

/// Unpenalized logistic regression by full-batch gradient descent from zero.
/// Also returns the loss before each iteration.
pub fn train_logistic_traced(
    xs: &[Vec<f64>],
    ys: &[u8],
    params: &LogisticParams,
) -> Result<(LinearModel, Vec<f64>)> {
    let width = check_xy(xs, ys, 2)?;
    let standardizer = Standardizer::fit(xs);
    let zs = standardizer.transform(xs);
    let n = zs.len() as f64;
    let mut w = vec![0.0; width];
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(params.iters);
    for _ in 0..params.iters {
        trace.push(logistic_nll(&zs, ys, &w, b));
        let mut gw = vec![0.0; width];
        let mut gb = 0.0;
        for (z, &y) in zs.iter().zip(ys) {
            let s = z.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
            let r = sigmoid(s) - f64::from(y);
            for (g, x) in gw.iter_mut().zip(z) {
                *g += r * x;
            }
            gb += r;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= params.lr * g / n;
        }
        b -= params.lr * gb / n;
    }
    Ok((
        LinearModel {
            kind: LinearKind::Logistic,
            weights: w,
            intercept: b,
            standardizer,
        },
        trace,
    ))
}

pub fn train_logistic(xs: &[Vec<f64>], ys: &[u8], params: &LogisticParams) -> Result<LinearModel> {
    train_logistic_traced(xs, ys, params).map(|(m, _)| m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoParams {
    pub lambda: f64,
    pub iters: usize,
}

impl Default for LassoParams {
    fn default() -> Self {
        LassoParams {
            lambda: 0.1,
            iters: 1000,
        }
    }
}

pub fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    rho.signum() * (rho.abs() - lambda).max(0.0)
}

fn lasso_objective(zs: &[Vec<f64>], ys: &[u8], w: &[f64], b: f64, lambda: f64) -> f64 {
    let mse = zs
        .iter()
        .zip(ys)
        .map(|(z, &y)| {
            let r = z.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + b - f64::from(y);
            r * r
        })
        .sum::<f64>()
        / zs.len() as f64;
    0.5 * mse + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent for `0.5 * mean((Xw + b - y)^2) + lambda * |w|_1`
/// on z-scored columns with an unpenalized intercept. Returns the model and
/// the objective after every sweep (starting with the zero model).
pub fn train_lasso_traced(
    xs: &[Vec<f64>],
    ys: &[u8],
    params: &LassoParams,
) -> Result<(LinearModel, Vec<f64>)> {
    let width = check_xy(xs, ys, 2)?;
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(Error::invalid("lambda must be finite and >= 0"));
    }
    let standardizer = Standardizer::fit(xs);
    let zs = standardizer.transform(xs);
    let n = zs.len() as f64;
    let col_sq: Vec<f64> = (0..width)
        .map(|j| zs.iter().map(|z| z[j] * z[j]).sum::<f64>() / n)
        .collect();
    // centred columns make the optimal intercept the label mean
    let b = ys.iter().map(|&y| f64::from(y)).sum::<f64>() / n;
    let mut w = vec![0.0; width];
    let mut resid: Vec<f64> = ys.iter().map(|&y| f64::from(y) - b).collect();
    let mut trace = vec![lasso_objective(&zs, ys, &w, b, params.lambda)];
    for _ in 0..params.iters {
        let mut max_delta: f64 = 0.0;
        for j in 0..width {
            if col_sq[j] == 0.0 {
                continue;
            }
            let rho = zs
                .iter()
                .zip(&resid)
                .map(|(z, r)| z[j] * (r + z[j] * w[j]))
                .sum::<f64>()
                / n;
            let new = soft_threshold(rho, params.lambda) / col_sq[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (r, z) in resid.iter_mut().zip(&zs) {
                    *r -= z[j] * delta;
                }
                w[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        trace.push(lasso_objective(&zs, ys, &w, b, params.lambda));
        if max_delta < 1e-15 {
            break;
        }
    }
    Ok((
        LinearModel {
            kind: LinearKind::Lasso,
            weights: w,
            intercept: b,
            standardizer,
        },
        trace,
    ))
}

pub fn train_lasso(xs: &[Vec<f64>], ys: &[u8], params: &LassoParams) -> Result<LinearModel> {
    train_lasso_traced(xs, ys, params).map(|(m, _)| m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: [usize; 2],
    },
}

/// Binary decision tree stored as a node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf { counts } => return u8::from(counts[1] > counts[0]),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub seed: u64,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Majority vote; a tie goes to 0.
    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<u8>> {
        check_width(self.n_features, xs)?;
        Ok(xs
            .iter()
            .map(|r| {
                let ones = self.trees.iter().filter(|t| t.predict_row(r) == 1).count();
                u8::from(2 * ones > self.trees.len())
            })
            .collect())
    }
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = counts[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [u8],
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let ones = idx.iter().filter(|&&i| self.ys[i] == 1).count();
        [idx.len() - ones, ones]
    }

    /// Best (feature, threshold, weighted child impurity). Features are
    /// visited in random order until `max_features` non-constant ones have
    /// been scored.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let n_features = self.xs[0].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        order.shuffle(&mut self.rng);
        let total = self.counts(idx);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut inspected = 0;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
        for f in order {
            if inspected == self.max_features {
                break;
            }
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.xs[i][f], self.ys[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[sorted.len() - 1].0 {
                continue;
            }
            inspected += 1;
            let mut left = [0usize; 2];
            let n = sorted.len() as f64;
            for k in 0..sorted.len() - 1 {
                left[sorted[k].1 as usize] += 1;
                if sorted[k].0 == sorted[k + 1].0 {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let nl = (k + 1) as f64;
                let score = (nl * gini(left) + (n - nl) * gini(right)) / n;
                if best.is_none_or(|(_, _, s)| score < s) {
                    let mut thr = 0.5 * (sorted[k].0 + sorted[k + 1].0);
                    if thr >= sorted[k + 1].0 {
                        thr = sorted[k].0;
                    }
                    best = Some((f, thr, score));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let counts = self.counts(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        if idx.len() < 2 || counts[0] == 0 || counts[1] == 0 {
            return id;
        }
        let Some((feature, threshold, _)) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.xs[i][feature] <= threshold);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Bagged Gini trees with `ceil(sqrt(F))` candidate features per split,
/// grown until pure. Tree `t` draws from its own seeded stream.
pub fn train_forest(xs: &[Vec<f64>], ys: &[u8], params: &ForestParams) -> Result<Forest> {
    let width = check_xy(xs, ys, 1)?;
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be >= 1"));
    }
    let max_features = ((width as f64).sqrt().ceil() as usize).max(1);
    let n = xs.len();
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = TreeBuilder {
                xs,
                ys,
                max_features,
                rng,
                nodes: Vec::new(),
            };
            b.grow(sample);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest {
        trees,
        n_features: width,
        seed: params.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_1d() -> (Vec<Vec<f64>>, Vec<u8>) {
        let xs: Vec<Vec<f64>> = [-3.0, -2.0, -1.5, -1.0, 1.0, 1.5, 2.0, 3.0]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let ys = vec![0, 0, 0, 0, 1, 1, 1, 1];
        (xs, ys)
    }

    fn accuracy(p: &[u8], y: &[u8]) -> f64 {
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn logistic_symmetric_data_has_zero_intercept() {
        let xs = vec![vec![1.0], vec![-1.0], vec![2.0], vec![-2.0]];
        let ys = vec![1, 0, 1, 0];
        let m = train_logistic(&xs, &ys, &LogisticParams::default()).unwrap();
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn logistic_separates_toy() {
        let (xs, ys) = toy_1d();
        let (m, trace) = train_logistic_traced(&xs, &ys, &LogisticParams::default()).unwrap();
        assert_eq!(accuracy(&m.predict(&xs).unwrap(), &ys), 1.0);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn logistic_single_class() {
        let xs = vec![vec![0.1, 2.0], vec![0.4, -1.0], vec![0.3, 0.0]];
        let m = train_logistic(&xs, &[0, 0, 0], &LogisticParams::default()).unwrap();
        assert_eq!(m.predict(&xs).unwrap(), vec![0, 0, 0]);
        let m = train_logistic(&xs, &[1, 1, 1], &LogisticParams::default()).unwrap();
        assert_eq!(m.predict(&[vec![9.0, 9.0]]).unwrap(), vec![1]);
    }

    #[test]
    fn logistic_boundary_goes_to_one() {
        let (xs, ys) = toy_1d();
        let mut m = train_logistic(&xs, &ys, &LogisticParams::default()).unwrap();
        m.weights = vec![0.0];
        m.intercept = 0.0;
        assert_eq!(m.predict(&[vec![5.0]]).unwrap(), vec![1]);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(train_logistic(&[], &[], &LogisticParams::default()).is_err());
        assert!(train_lasso(&[], &[], &LassoParams::default()).is_err());
        assert!(train_forest(&[], &[], &ForestParams::default()).is_err());
    }

    #[test]
    fn lasso_full_shrinkage() {
        let (xs, ys) = toy_1d();
        let m = train_lasso(
            &xs,
            &ys,
            &LassoParams {
                lambda: 1e6,
                iters: 1000,
            },
        )
        .unwrap();
        assert_eq!(m.weights, vec![0.0]);
        assert_eq!(m.intercept, 0.5);
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(0.3, 0.1), 0.3 - 0.1);
        assert_eq!(soft_threshold(-0.3, 0.1), -0.3 + 0.1);
        assert_eq!(soft_threshold(0.05, 0.1), 0.0);
        assert_eq!(soft_threshold(-0.05, 0.1), 0.0);
    }

    #[test]
    fn lasso_single_column_is_soft_thresholded_correlation() {
        // one z-scored column: the first coordinate update is already optimal
        let xs: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 3.0, 4.0].iter().map(|&v| vec![v]).collect();
        let ys = vec![0, 0, 1, 0, 1];
        let st = Standardizer::fit(&xs);
        let z: Vec<f64> = st.transform(&xs).into_iter().map(|r| r[0]).collect();
        let yb = 0.4;
        let rho = z
            .iter()
            .zip(&ys)
            .map(|(z, &y)| z * (f64::from(y) - yb))
            .sum::<f64>()
            / 5.0;
        for lambda in [0.0, 0.1, 0.3] {
            let m = train_lasso(&xs, &ys, &LassoParams { lambda, iters: 1 }).unwrap();
            let expected = rho.signum() * (rho.abs() - lambda).max(0.0);
            assert!((m.weights[0] - expected).abs() < 1e-12, "lambda {lambda}");
        }
    }

    #[test]
    fn lasso_objective_monotone() {
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64;
                vec![t.sin(), (0.3 * t).cos(), t * 0.1, (t * 1.7).sin() + 0.1 * t]
            })
            .collect();
        let ys: Vec<u8> = (0..20).map(|i| u8::from((i * 7) % 5 < 2)).collect();
        for lambda in [0.0, 0.01, 0.1] {
            let (_, trace) =
                train_lasso_traced(&xs, &ys, &LassoParams { lambda, iters: 200 }).unwrap();
            for w in trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-15,
                    "lambda {lambda}: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn lasso_threshold_rule() {
        let (xs, ys) = toy_1d();
        let mut m = train_lasso(&xs, &ys, &LassoParams::default()).unwrap();
        m.weights = vec![0.0];
        m.intercept = 0.7;
        assert_eq!(m.predict(&xs).unwrap(), vec![1; 8]);
    }

    #[test]
    fn width_mismatch_errors() {
        let (xs, ys) = toy_1d();
        let m = train_lasso(&xs, &ys, &LassoParams::default()).unwrap();
        assert!(m.predict(&[vec![1.0, 2.0]]).is_err());
        let f = train_forest(
            &xs,
            &ys,
            &ForestParams {
                n_trees: 3,
                seed: 1,
            },
        )
        .unwrap();
        assert!(f.predict(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn forest_single_sample() {
        let f = train_forest(
            &[vec![1.0, 2.0]],
            &[1],
            &ForestParams {
                n_trees: 5,
                seed: 2,
            },
        )
        .unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(
            f.predict(&[vec![-5.0, 0.0], vec![9.0, 9.0]]).unwrap(),
            vec![1, 1]
        );
    }

    #[test]
    fn forest_fits_toy_and_is_deterministic() {
        let (xs, ys) = toy_1d();
        let p = ForestParams {
            n_trees: 25,
            seed: 4,
        };
        let a = train_forest(&xs, &ys, &p).unwrap();
        let b = train_forest(&xs, &ys, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(accuracy(&a.predict(&xs).unwrap(), &ys), 1.0);
    }

    #[test]
    fn forest_vote_tie_goes_to_zero() {
        let leaf = |c: [usize; 2]| Tree {
            nodes: vec![Node::Leaf { counts: c }],
        };
        let f = Forest {
            trees: vec![leaf([0, 3]), leaf([2, 0])],
            n_features: 1,
            seed: 0,
        };
        assert_eq!(f.predict(&[vec![0.0]]).unwrap(), vec![0]);
    }

    #[test]
    fn forest_order_invariant() {
        let (xs, ys) = toy_1d();
        let mut f = train_forest(
            &xs,
            &ys,
            &ForestParams {
                n_trees: 9,
                seed: 8,
            },
        )
        .unwrap();
        let probe: Vec<Vec<f64>> = (-8..8).map(|i| vec![i as f64 * 0.4]).collect();
        let before = f.predict(&probe).unwrap();
        f.trees.reverse();
        assert_eq!(f.predict(&probe).unwrap(), before);
    }

    #[test]
    fn leaves_are_non_empty_and_splits_valid() {
        let xs: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 7) as f64, (i % 3) as f64, 1.0])
            .collect();
        let ys: Vec<u8> = (0..30).map(|i| u8::from(i % 7 > 3)).collect();
        let f = train_forest(
            &xs,
            &ys,
            &ForestParams {
                n_trees: 10,
                seed: 3,
            },
        )
        .unwrap();
        for t in &f.trees {
            for n in &t.nodes {
                match n {
                    Node::Split { feature, .. } => assert!(*feature < 3),
                    Node::Leaf { counts } => assert!(counts[0] + counts[1] > 0),
                }
            }
        }
    }
}
