//! Minibatch Adam training with epoch selection on cross-validation FT.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::decodesim::Label;
use crate::metrics::{self, MetricsError, TARGET_FS};
use crate::util::fmt_sig9;

/// A bundle of flat `f64` tensors in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Something trainable by [`train`]: a differentiable scorer of one input type.
pub trait Model: Parameters + Clone + Send + Sync {
    type Input: Sync + ?Sized;

    /// Adds the gradient of the per-sample BCE loss into `grad` and returns the loss.
    fn sample_grad(&self, x: &Self::Input, target: f64, grad: &mut Self) -> f64;

    /// Probability of an intended trigger.
    fn predict(&self, x: &Self::Input) -> f64;

    /// Learning-rate multiplier per tensor, in [`Parameters::tensors`] order.
    fn lr_scales(&self) -> Vec<f64> {
        vec![1.0; self.tensors().len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// FS operating point for epoch selection on cv.
    pub target_fs: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 1, target_fs: TARGET_FS }
    }
}

pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    scales: Vec<f64>,
}

impl Adam {
    pub fn new<P: Parameters>(params: &P, scales: Vec<f64>) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        assert_eq!(shapes.len(), scales.len());
        Self { m: shapes.iter().map(|&n| vec![0.0; n]).collect(), v: shapes.iter().map(|&n| vec![0.0; n]).collect(), t: 0, scales }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            let lr = cfg.learning_rate * self.scales[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

/// A labelled training or evaluation input.
pub struct Example<'a, I: ?Sized> {
    pub id: &'a str,
    pub input: &'a I,
    pub label: Label,
}

impl<I: ?Sized> Clone for Example<'_, I> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<I: ?Sized> Copy for Example<'_, I> {}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub cv_loss: f64,
    pub cv_threshold: f64,
    pub cv_ft: f64,
    pub cv_auc: f64,
}

pub fn epoch_log_tsv(log: &[EpochLog], selected: usize) -> String {
    let mut s = String::from("epoch\ttrain_loss\tcv_loss\tcv_threshold\tcv_ft\tcv_auc\tselected\n");
    for e in log {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.epoch,
            fmt_sig9(e.train_loss),
            fmt_sig9(e.cv_loss),
            fmt_sig9(e.cv_threshold),
            fmt_sig9(e.cv_ft),
            fmt_sig9(e.cv_auc),
            u8::from(e.epoch == selected)
        )
        .unwrap();
    }
    s
}

/// Mean loss and summed gradient over `batch`. Per-sample gradients are
/// computed in parallel and reduced in input order.
pub fn batch_grad<M: Model>(model: &M, batch: &[Example<M::Input>]) -> (f64, M) {
    let parts: Vec<(f64, M)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = model.zeros_like();
            let loss = model.sample_grad(ex.input, ex.label.target(), &mut g);
            (loss, g)
        })
        .collect();
    let mut grad = model.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.add_assign(g);
    }
    (loss, grad)
}

pub fn predict_all<M: Model>(model: &M, xs: &[Example<M::Input>]) -> Vec<f64> {
    xs.par_iter().map(|ex| model.predict(ex.input)).collect()
}

/// Trains for `cfg.epochs` epochs and returns the epoch whose cv FT at
/// `cfg.target_fs` is lowest (earliest on ties), with the per-epoch log.
pub fn train<M: Model>(
    init: M,
    train_set: &[Example<M::Input>],
    cv: &[Example<M::Input>],
    cfg: &TrainConfig,
) -> Result<(M, usize, Vec<EpochLog>), MetricsError> {
    assert!(!train_set.is_empty() && !cv.is_empty(), "training needs non-empty train and cv sets");
    let mut model = init;
    let mut adam = Adam::new(&model, model.lr_scales());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, M)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<Example<M::Input>> = chunk.iter().map(|&i| train_set[i]).collect();
            let (loss, mut grad) = batch_grad(&model, &batch);
            total += loss;
            grad.scale(1.0 / batch.len() as f64);
            adam.step(&mut model, &grad, cfg);
        }

        let scores = predict_all(&model, cv);
        let labelled: Vec<(Label, f64)> = cv.iter().zip(&scores).map(|(ex, &y)| (ex.label, y)).collect();
        let cv_loss = labelled
            .iter()
            .map(|&(l, y)| {
                let y = y.clamp(1e-300, 1.0 - 1e-16);
                -(l.target() * y.ln() + (1.0 - l.target()) * (1.0 - y).ln())
            })
            .sum::<f64>()
            / labelled.len() as f64;
        let (cv_threshold, cv_ft) = metrics::ft_at_fs(&labelled, &labelled, cfg.target_fs)?;
        let cv_auc = metrics::det_curve(&labelled)?.auc_region(metrics::AUC_FS_MAX);
        log.push(EpochLog { epoch, train_loss: total / train_set.len() as f64, cv_loss, cv_threshold, cv_ft, cv_auc });
        if best.as_ref().is_none_or(|(ft, _, _)| cv_ft < *ft) {
            best = Some((cv_ft, epoch, model.clone()));
        }
    }
    let (_, epoch, params) = best.expect("at least one epoch");
    Ok((params, epoch, log))
}
