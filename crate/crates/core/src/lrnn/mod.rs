//! Bidirectional lattice RNN.
//!
//! Forward direction, in topological order:
//!
//! ```text
//! h_f(start) = h0_f
//! m_a        = tanh(W_a x_a + W_h h_f(src a) + b)     for each arc a into v
//! h_f(v)     = mean of m_a over the arcs into v
//! ```
//!
//! The backward direction runs the same recurrence with its own parameters on
//! the arc-reversed lattice, starting from `h_b(end) = h0_b`. The lattice
//! embedding is `[h_f(end), h_b(start)]`, fed to a one-hidden-layer relu
//! classifier with a sigmoid output (the probability of an intended trigger).
//!
//! Gradients are exact reverse-mode derivatives through the head, the mean
//! pooling, `tanh`, and both DAG recurrences.

mod params;
mod prepared;
pub mod train;

use thiserror::Error;

use crate::lattice::{Lattice, LatticeError};
use crate::util::{sigmoid, softplus};

pub use params::{Direction, Encoder, Head, LrnnParams, ParamsError};
pub use prepared::PreparedLattice;
pub(crate) use params::{parse_head, parse_lrnn_block, parse_tensor, write_tensor};
pub use train::{Parameters, Model, TrainConfig, EpochLog, Example};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LrnnError {
    #[error("classifier expects input width {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// `[h_f(end), h_b(start)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeEmbedding {
    pub h_f_end: Vec<f64>,
    pub h_b_start: Vec<f64>,
}

impl LatticeEmbedding {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.h_f_end.clone();
        v.extend_from_slice(&self.h_b_start);
        v
    }
}

/// Per-direction activations kept for backprop.
#[derive(Debug, Clone)]
pub struct DirTrace {
    /// Node states, `num_nodes x H`.
    h: Vec<f64>,
    /// Arc messages, `num_arcs x H`.
    msg: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    fwd: DirTrace,
    bwd: DirTrace,
}

fn matvec_acc(out: &mut [f64], m: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += m^T y` for row-major `m` with `y.len()` rows.
fn matvec_t_acc(out: &mut [f64], m: &[f64], y: &[f64]) {
    let cols = out.len();
    for (row, &yi) in m.chunks_exact(cols).zip(y) {
        if yi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }
}

/// `m += y x^T`.
fn outer_acc(m: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &yi) in m.chunks_exact_mut(cols).zip(y) {
        if yi != 0.0 {
            for (a, xj) in row.iter_mut().zip(x) {
                *a += yi * xj;
            }
        }
    }
}

impl Direction {
    /// `reverse = false`: forward pass from `start`; `true`: backward pass from `end`.
    fn run(&self, g: &PreparedLattice, reverse: bool) -> DirTrace {
        let h = self.hidden();
        let mut states = vec![0.0; g.num_nodes * h];
        let mut msg = vec![0.0; g.arcs.len() * h];
        let origin = if reverse { g.end } else { g.start };
        states[origin * h..(origin + 1) * h].copy_from_slice(&self.h0);
        let visit = |v: usize, states: &mut Vec<f64>, msg: &mut Vec<f64>| {
            if v == origin {
                return;
            }
            let arcs = if reverse { &g.outgoing[v] } else { &g.incoming[v] };
            let inv = 1.0 / arcs.len() as f64;
            let mut acc = vec![0.0; h];
            for &a in arcs {
                let arc = &g.arcs[a];
                let pred = if reverse { arc.dst } else { arc.src };
                let m = &mut msg[a * h..(a + 1) * h];
                m.copy_from_slice(&self.b);
                self.add_input(m, arc);
                matvec_acc(m, &self.w_h, &states[pred * h..(pred + 1) * h]);
                for (mi, ai) in m.iter_mut().zip(acc.iter_mut()) {
                    *mi = mi.tanh();
                    *ai += *mi;
                }
            }
            for (s, a) in states[v * h..(v + 1) * h].iter_mut().zip(&acc) {
                *s = a * inv;
            }
        };
        if reverse {
            for &v in g.order.iter().rev() {
                visit(v, &mut states, &mut msg);
            }
        } else {
            for &v in &g.order {
                visit(v, &mut states, &mut msg);
            }
        }
        DirTrace { h: states, msg }
    }

    /// `out += W_a x` using the sparse layout of the arc feature vector.
    fn add_input(&self, out: &mut [f64], arc: &prepared::PArc) {
        let f = self.feat_dim();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.w_a[i * f..(i + 1) * f];
            *o += row[0] * arc.dense[0] + row[1] * arc.dense[1] + row[2] * arc.dense[2] + row[3 + arc.bucket];
        }
    }

    /// Backprop of `dstate` (gradient on the final node state) through one direction.
    fn backprop(&self, g: &PreparedLattice, trace: &DirTrace, reverse: bool, dfinal: &[f64], grad: &mut Direction) {
        let h = self.hidden();
        let f = self.feat_dim();
        let (origin, last) = if reverse { (g.end, g.start) } else { (g.start, g.end) };
        let mut dh = vec![0.0; g.num_nodes * h];
        dh[last * h..(last + 1) * h].copy_from_slice(dfinal);
        let mut dz = vec![0.0; h];
        let mut step = |v: usize, dh: &mut Vec<f64>| {
            if v == origin {
                return;
            }
            let arcs = if reverse { &g.outgoing[v] } else { &g.incoming[v] };
            let inv = 1.0 / arcs.len() as f64;
            let dv: Vec<f64> = dh[v * h..(v + 1) * h].to_vec();
            if dv.iter().all(|&x| x == 0.0) {
                return;
            }
            for &a in arcs {
                let arc = &g.arcs[a];
                let pred = if reverse { arc.dst } else { arc.src };
                let m = &trace.msg[a * h..(a + 1) * h];
                for i in 0..h {
                    dz[i] = dv[i] * inv * (1.0 - m[i] * m[i]);
                }
                for (i, &d) in dz.iter().enumerate() {
                    let row = &mut grad.w_a[i * f..(i + 1) * f];
                    row[0] += d * arc.dense[0];
                    row[1] += d * arc.dense[1];
                    row[2] += d * arc.dense[2];
                    row[3 + arc.bucket] += d;
                    grad.b[i] += d;
                }
                outer_acc(&mut grad.w_h, &dz, &trace.h[pred * h..(pred + 1) * h]);
                matvec_t_acc(&mut dh[pred * h..(pred + 1) * h], &self.w_h, &dz);
            }
        };
        // Consumers of a node's state come later in processing order, so walking
        // that order backwards sees each node's gradient complete.
        if reverse {
            for &v in &g.order {
                step(v, &mut dh);
            }
        } else {
            for &v in g.order.iter().rev() {
                step(v, &mut dh);
            }
        }
        for (g0, d) in grad.h0.iter_mut().zip(&dh[origin * h..(origin + 1) * h]) {
            *g0 += d;
        }
    }
}

impl Encoder {
    pub fn embed_prepared(&self, g: &PreparedLattice) -> LatticeEmbedding {
        self.embed_traced(g).0
    }

    pub fn embed_traced(&self, g: &PreparedLattice) -> (LatticeEmbedding, EncoderTrace) {
        let h = self.hidden;
        let fwd = self.fwd.run(g, false);
        let bwd = self.bwd.run(g, true);
        let e = LatticeEmbedding {
            h_f_end: fwd.h[g.end * h..(g.end + 1) * h].to_vec(),
            h_b_start: bwd.h[g.start * h..(g.start + 1) * h].to_vec(),
        };
        (e, EncoderTrace { fwd, bwd })
    }

    /// Accumulates into `grad` the parameter gradients implied by `d_embed`,
    /// the gradient on `[h_f(end), h_b(start)]`.
    pub fn backprop(&self, g: &PreparedLattice, trace: &EncoderTrace, d_embed: &[f64], grad: &mut Encoder) {
        let h = self.hidden;
        self.fwd.backprop(g, &trace.fwd, false, &d_embed[..h], &mut grad.fwd);
        self.bwd.backprop(g, &trace.bwd, true, &d_embed[h..2 * h], &mut grad.bwd);
    }
}

/// Activations of one head evaluation.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    z1: Vec<f64>,
    r: Vec<f64>,
    pub logit: f64,
    pub y: f64,
}

impl Head {
    pub fn forward(&self, x: &[f64]) -> Result<HeadTrace, LrnnError> {
        if x.len() != self.input_width {
            return Err(LrnnError::WidthMismatch { expected: self.input_width, got: x.len() });
        }
        let mut z1 = self.b1.clone();
        matvec_acc(&mut z1, &self.w1, x);
        let r: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let logit = self.b2[0] + self.w2.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        Ok(HeadTrace { z1, r, logit, y: sigmoid(logit) })
    }

    /// `sigmoid(w2 . relu(W1 x + b1) + b2)`.
    pub fn classify(&self, x: &[f64]) -> Result<f64, LrnnError> {
        Ok(self.forward(x)?.y)
    }

    /// Accumulates parameter gradients for `dlogit` and returns the input gradient.
    pub fn backprop(&self, x: &[f64], trace: &HeadTrace, dlogit: f64, grad: &mut Head) -> Vec<f64> {
        grad.b2[0] += dlogit;
        let mut dz1 = vec![0.0; self.hidden];
        for i in 0..self.hidden {
            grad.w2[i] += dlogit * trace.r[i];
            dz1[i] = if trace.z1[i] > 0.0 { dlogit * self.w2[i] } else { 0.0 };
        }
        for (gb, d) in grad.b1.iter_mut().zip(&dz1) {
            *gb += d;
        }
        outer_acc(&mut grad.w1, &dz1, x);
        let mut dx = vec![0.0; self.input_width];
        matvec_t_acc(&mut dx, &self.w1, &dz1);
        dx
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`, and its derivative in the logit.
pub fn bce_with_logit(logit: f64, target: f64) -> (f64, f64) {
    (softplus(logit) - target * logit, sigmoid(logit) - target)
}

impl LrnnParams {
    pub fn embed(&self, l: &Lattice) -> Result<LatticeEmbedding, LrnnError> {
        Ok(self.encoder.embed_prepared(&PreparedLattice::new(l)?))
    }

    pub fn classify(&self, e: &[f64]) -> Result<f64, LrnnError> {
        self.head.classify(e)
    }

    /// Probability that `g` is an intended trigger.
    pub fn predict(&self, g: &PreparedLattice) -> Result<f64, LrnnError> {
        self.head.classify(&self.encoder.embed_prepared(g).concat())
    }

    /// Loss and gradient for one sample; gradients are accumulated into `grad`.
    pub fn sample_grad(&self, g: &PreparedLattice, target: f64, grad: &mut LrnnParams) -> f64 {
        let (e, trace) = self.encoder.embed_traced(g);
        let x = e.concat();
        let ht = self.head.forward(&x).expect("encoder output matches head width");
        let (loss, dlogit) = bce_with_logit(ht.logit, target);
        let dx = self.head.backprop(&x, &ht, dlogit, &mut grad.head);
        self.encoder.backprop(g, &trace, &dx, &mut grad.encoder);
        loss
    }

    /// Mean BCE over the batch and the exact gradient of that mean.
    pub fn loss_and_grads(&self, batch: &[(&Lattice, f64)]) -> Result<(f64, LrnnParams), LrnnError> {
        assert!(!batch.is_empty(), "loss over an empty batch");
        let mut grad = Parameters::zeros_like(self);
        let mut total = 0.0;
        for &(l, target) in batch {
            total += self.sample_grad(&PreparedLattice::new(l)?, target, &mut grad);
        }
        let n = batch.len() as f64;
        grad.scale(1.0 / n);
        Ok((total / n, grad))
    }

    /// Scores for the samples' `tag` lattices, in input order.
    pub fn predict_scores<'a>(
        &self,
        samples: impl IntoIterator<Item = (&'a str, crate::decodesim::Label, &'a PreparedLattice)>,
    ) -> Result<Vec<crate::metrics::ScoredSample>, LrnnError> {
        if self.head.input_width != 2 * self.encoder.hidden {
            return Err(LrnnError::WidthMismatch { expected: 2 * self.encoder.hidden, got: self.head.input_width });
        }
        samples
            .into_iter()
            .map(|(id, label, g)| Ok(crate::metrics::ScoredSample { id: id.to_string(), label, score: self.predict(g)? }))
            .collect()
    }
}

impl train::Model for LrnnParams {
    type Input = PreparedLattice;

    fn sample_grad(&self, x: &PreparedLattice, target: f64, grad: &mut Self) -> f64 {
        LrnnParams::sample_grad(self, x, target, grad)
    }

    fn predict(&self, x: &PreparedLattice) -> f64 {
        LrnnParams::predict(self, x).expect("encoder output matches head width")
    }
}
