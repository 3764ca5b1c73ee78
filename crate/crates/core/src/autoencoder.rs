//! Autoencoder with a softmax classification head.
//!
//! Layout: `z1 = W1 x + b1` (linear), `z = relu(W2 z1 + b2)` (bottleneck),
//! `x_hat = W3 z + b3` (decoder), `probs = softmax(W4 z + b4)` (2 classes).
//! Trained full-batch with Adam on `rec_weight * L_rec + cls_weight * L_cls`,
//! where `L_rec` is the per-dimension mean squared reconstruction error and
//! `L_cls` the cross-entropy of the true label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub rec_weight: f64,
    pub cls_weight: f64,
}

impl AeConfig {
    /// Defaults: hidden `ceil(d/2)`, bottleneck `max(2, ceil(d/4))`,
    /// lr 0.01, 100 epochs, unit loss weights.
    pub fn new(input_dim: usize) -> Self {
        AeConfig {
            input_dim,
            hidden_dim: input_dim.div_ceil(2).max(1),
            bottleneck_dim: input_dim.div_ceil(4).max(2),
            learning_rate: 0.01,
            epochs: 100,
            seed: 0,
            rec_weight: 1.0,
            cls_weight: 1.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.bottleneck_dim == 0 {
            return Err(Error::invalid("autoencoder dimensions must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.rec_weight >= 0.0 && self.cls_weight >= 0.0) {
            return Err(Error::invalid("loss weights must be >= 0"));
        }
        Ok(())
    }
}

/// Trainable parameters; also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
    pub w4: Matrix,
    pub b4: Vec<f64>,
}

impl AeParams {
    pub fn zeros(cfg: &AeConfig) -> Self {
        let (d, h, k) = (cfg.input_dim, cfg.hidden_dim, cfg.bottleneck_dim);
        AeParams {
            w1: Matrix::zeros(h, d),
            b1: vec![0.0; h],
            w2: Matrix::zeros(k, h),
            b2: vec![0.0; k],
            w3: Matrix::zeros(d, k),
            b3: vec![0.0; d],
            w4: Matrix::zeros(2, k),
            b4: vec![0.0; 2],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &AeConfig, rng: &mut impl Rng) -> Self {
        let mut p = AeParams::zeros(cfg);
        for w in [&mut p.w1, &mut p.w2, &mut p.w3, &mut p.w4] {
            let s = (6.0 / (w.rows + w.cols) as f64).sqrt();
            for v in &mut w.data {
                *v = rng.random_range(-s..s);
            }
        }
        p
    }

    /// All parameter slices in a fixed order.
    pub fn slices(&self) -> [&[f64]; 8] {
        [
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
            &self.w3.data,
            &self.b3,
            &self.w4.data,
            &self.b4,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
            &mut self.w3.data,
            &mut self.b3,
            &mut self.w4.data,
            &mut self.b4,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn scale(&mut self, f: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeModel {
    pub config: AeConfig,
    pub params: AeParams,
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub z1: Vec<f64>,
    pub pre_relu: Vec<f64>,
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub rec: f64,
    pub cls: f64,
    pub total: f64,
}

fn log_softmax(logits: &[f64], label: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    logits[label] - lse
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

impl AeModel {
    pub fn new(config: AeConfig, params: AeParams) -> Result<Self> {
        config.validate()?;
        let (d, h, k) = (config.input_dim, config.hidden_dim, config.bottleneck_dim);
        let p = &params;
        let ok = (p.w1.rows, p.w1.cols) == (h, d)
            && p.b1.len() == h
            && (p.w2.rows, p.w2.cols) == (k, h)
            && p.b2.len() == k
            && (p.w3.rows, p.w3.cols) == (d, k)
            && p.b3.len() == d
            && (p.w4.rows, p.w4.cols) == (2, k)
            && p.b4.len() == 2;
        if !ok {
            return Err(Error::invalid("parameter shapes do not match config"));
        }
        if !params.is_finite() {
            return Err(Error::validation("non-finite autoencoder parameter"));
        }
        Ok(AeModel { config, params })
    }

    /// Randomly initialized model.
    pub fn initialize(config: AeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = AeParams::init(&config, &mut rng);
        Ok(AeModel { config, params })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Forward {
        let p = &self.params;
        let z1 = p.w1.affine(x, &p.b1);
        let pre_relu = p.w2.affine(&z1, &p.b2);
        let z: Vec<f64> = pre_relu.iter().map(|v| v.max(0.0)).collect();
        let x_hat = p.w3.affine(&z, &p.b3);
        let logits = p.w4.affine(&z, &p.b4);
        let probs = softmax2(&logits);
        Forward {
            z1,
            pre_relu,
            z,
            x_hat,
            logits,
            probs,
        }
    }

    fn losses_of(&self, x: &[f64], f: &Forward, label: usize) -> Losses {
        let rec = f
            .x_hat
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / x.len() as f64;
        let cls = -log_softmax(&f.logits, label);
        Losses {
            rec,
            cls,
            total: self.config.rec_weight * rec + self.config.cls_weight * cls,
        }
    }

    pub fn losses(&self, x: &[f64], label: u8) -> Result<Losses> {
        check_label(label)?;
        let f = self.forward(x)?;
        Ok(self.losses_of(x, &f, label as usize))
    }

    /// Mean losses over a batch.
    pub fn batch_losses(&self, xs: &[Vec<f64>], labels: &[u8]) -> Result<Losses> {
        check_batch(self, xs, labels)?;
        let mut acc = Losses {
            rec: 0.0,
            cls: 0.0,
            total: 0.0,
        };
        for (x, &y) in xs.iter().zip(labels) {
            let l = self.losses_of(x, &self.forward_unchecked(x), y as usize);
            acc.rec += l.rec;
            acc.cls += l.cls;
            acc.total += l.total;
        }
        let n = xs.len() as f64;
        Ok(Losses {
            rec: acc.rec / n,
            cls: acc.cls / n,
            total: acc.total / n,
        })
    }

    /// Analytic gradient of the mean total loss over the batch.
    pub fn gradients(&self, xs: &[Vec<f64>], labels: &[u8]) -> Result<AeParams> {
        check_batch(self, xs, labels)?;
        let cfg = &self.config;
        let p = &self.params;
        let mut g = AeParams::zeros(cfg);
        let d = cfg.input_dim as f64;
        for (x, &y) in xs.iter().zip(labels) {
            let f = self.forward_unchecked(x);
            let d_xhat: Vec<f64> = f
                .x_hat
                .iter()
                .zip(x)
                .map(|(a, b)| cfg.rec_weight * 2.0 * (a - b) / d)
                .collect();
            let mut d_logits = f.probs.to_vec();
            d_logits[y as usize] -= 1.0;
            d_logits.iter_mut().for_each(|v| *v *= cfg.cls_weight);

            g.w3.add_outer(&d_xhat, &f.z, 1.0);
            add(&mut g.b3, &d_xhat);
            g.w4.add_outer(&d_logits, &f.z, 1.0);
            add(&mut g.b4, &d_logits);

            let mut d_z = p.w3.transpose_mul(&d_xhat);
            add(&mut d_z, &p.w4.transpose_mul(&d_logits));
            let d_pre: Vec<f64> = d_z
                .iter()
                .zip(&f.pre_relu)
                .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
                .collect();
            g.w2.add_outer(&d_pre, &f.z1, 1.0);
            add(&mut g.b2, &d_pre);

            let d_z1 = p.w2.transpose_mul(&d_pre);
            g.w1.add_outer(&d_z1, x, 1.0);
            add(&mut g.b1, &d_z1);
        }
        g.scale(1.0 / xs.len() as f64);
        Ok(g)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2]> {
        Ok(self.forward(x)?.probs)
    }

    /// Argmax class; exact ties go to 0.
    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<u8>> {
        xs.iter()
            .map(|x| self.predict_proba(x).map(|p| u8::from(p[1] > p[0])))
            .collect()
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn check_label(label: u8) -> Result<()> {
    if label > 1 {
        return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
    }
    Ok(())
}

fn check_batch(m: &AeModel, xs: &[Vec<f64>], labels: &[u8]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if xs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            xs.len(),
            labels.len()
        )));
    }
    for x in xs {
        m.check_input(x)?;
    }
    labels.iter().try_for_each(|&l| check_label(l))
}

/// Adam state over [`AeParams`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: AeParams,
    v: AeParams,
}

impl Adam {
    pub fn new(cfg: &AeConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: AeParams::zeros(cfg),
            v: AeParams::zeros(cfg),
        }
    }

    pub fn step(&mut self, params: &mut AeParams, grads: &AeParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let ps = params.slices_mut();
        let gs = grads.slices();
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Per-epoch losses, each measured before that epoch's update, plus the
/// loss of the returned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<Losses>,
    pub final_loss: Losses,
}

impl TrainTrace {
    pub fn initial(&self) -> Losses {
        self.epochs[0]
    }
}

/// Full-batch Adam training from a seeded Glorot initialization.
pub fn train(xs: &[Vec<f64>], labels: &[u8], config: &AeConfig) -> Result<(AeModel, TrainTrace)> {
    let mut model = AeModel::initialize(config.clone())?;
    check_batch(&model, xs, labels)?;
    let mut adam = Adam::new(config);
    let mut epochs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        epochs.push(model.batch_losses(xs, labels)?);
        let g = model.gradients(xs, labels)?;
        adam.step(&mut model.params, &g);
    }
    if !model.params.is_finite() {
        return Err(Error::validation("autoencoder training diverged"));
    }
    let final_loss = model.batch_losses(xs, labels)?;
    Ok((model, TrainTrace { epochs, final_loss }))
}

/// Autoencoder plus the train-split standardization of its inputs: the
/// unit stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeClassifier {
    pub model: AeModel,
    pub standardizer: Standardizer,
}

impl AeClassifier {
    /// Standardizes with train statistics, then trains. `config.input_dim`
    /// is overwritten with the feature width when it disagrees.
    pub fn fit(rows: &[Vec<f64>], labels: &[u8], config: &AeConfig) -> Result<(Self, TrainTrace)> {
        let width = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("empty training set"))?;
        let config = if config.input_dim == width {
            config.clone()
        } else {
            AeConfig {
                seed: config.seed,
                learning_rate: config.learning_rate,
                epochs: config.epochs,
                rec_weight: config.rec_weight,
                cls_weight: config.cls_weight,
                ..AeConfig::new(width)
            }
        };
        let standardizer = Standardizer::fit(rows);
        let xs = standardizer.transform(rows);
        let (model, trace) = train(&xs, labels, &config)?;
        Ok((
            AeClassifier {
                model,
                standardizer,
            },
            trace,
        ))
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
        for r in rows {
            if r.len() != self.standardizer.width() {
                return Err(Error::DimensionMismatch {
                    expected: self.standardizer.width(),
                    got: r.len(),
                });
            }
        }
        self.model.predict(&self.standardizer.transform(rows))
    }
}
