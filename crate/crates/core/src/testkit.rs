//! Random lattice generators for property tests, gradient checks and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lattice::{Arc, Lattice, LmTag, NodeId};
use crate::lrnn::train::Model;
use crate::lrnn::{Direction, Encoder};

const WORDS: &[&str] = &[
    "hey", "device", "play", "music", "stop", "timer", "what", "time", "is", "it", "the", "weather", "call", "mom",
    "turn", "on", "off", "lights", "set", "alarm", "i", "think", "so", "yeah", "okay", "we", "should", "go",
];

fn random_arc<R: Rng>(rng: &mut R, src: NodeId, dst: NodeId) -> Arc {
    let word = WORDS[rng.random_range(0..WORDS.len())];
    Arc::new(
        src,
        dst,
        word,
        -rng.random_range(0.0..4.0),
        -rng.random_range(0.0..6.0),
        rng.random_range(1..60),
    )
}

/// Random connected DAG with `num_nodes` nodes and roughly `extra_arcs`
/// arcs beyond the spanning ones. Node ids are shuffled so that id order
/// and topological order disagree. Retries until the path count is at most
/// `max_paths`.
pub fn random_lattice<R: Rng>(rng: &mut R, num_nodes: u32, extra_arcs: usize, max_paths: u128) -> Lattice {
    assert!(num_nodes >= 2);
    let mut extra = extra_arcs;
    loop {
        let n = num_nodes;
        let mut arcs = Vec::new();
        for v in 1..n - 1 {
            let u = rng.random_range(0..v);
            arcs.push(random_arc(rng, u, v));
            let w = rng.random_range(v + 1..n);
            arcs.push(random_arc(rng, v, w));
        }
        if n == 2 {
            arcs.push(random_arc(rng, 0, 1));
        }
        for _ in 0..extra {
            let u = rng.random_range(0..n - 1);
            let v = rng.random_range(u + 1..n);
            arcs.push(random_arc(rng, u, v));
        }
        arcs.shuffle(rng);
        let mut perm: Vec<NodeId> = (0..n).collect();
        perm.shuffle(rng);
        let lat = Lattice { utterance_id: format!("r{}", rng.random::<u32>()), lm_tag: LmTag::Base, num_nodes: n, start: 0, end: n - 1, arcs }
            .relabel(&perm);
        let count = lat.path_count().expect("generator builds valid lattices");
        if count <= max_paths {
            return lat;
        }
        extra /= 2;
    }
}

/// A linear chain `start -> ... -> end` of `len` arcs with node ids in order.
pub fn random_chain<R: Rng>(rng: &mut R, len: u32) -> Lattice {
    let arcs = (0..len).map(|i| random_arc(rng, i, i + 1)).collect();
    Lattice { utterance_id: "chain".into(), lm_tag: LmTag::Base, num_nodes: len + 1, start: 0, end: len, arcs }
}

/// The same random lattice decoded under both tags, with independent scores.
pub fn random_pair<R: Rng>(rng: &mut R, num_nodes: u32, extra_arcs: usize, max_paths: u128) -> (Lattice, Lattice) {
    let base = random_lattice(rng, num_nodes, extra_arcs, max_paths);
    let mut chatter = random_lattice(rng, num_nodes, extra_arcs, max_paths);
    chatter.lm_tag = LmTag::Chatter;
    (base, chatter)
}

/// Plain sequential bidirectional RNN over the arcs of a chain, written with
/// dense feature vectors. Returns `[h_f(end), h_b(start)]`.
pub fn chain_birnn(enc: &Encoder, chain: &Lattice) -> Vec<f64> {
    let mut arcs: Vec<&Arc> = chain.arcs.iter().collect();
    arcs.sort_by_key(|a| a.src);
    let xs: Vec<Vec<f64>> = arcs.iter().map(|a| a.features.vector()).collect();
    let step = |d: &Direction, h: &[f64], x: &[f64]| -> Vec<f64> {
        let (hd, f) = (enc.hidden, enc.feat_dim);
        (0..hd)
            .map(|i| {
                let mut z = d.b[i];
                for j in 0..f {
                    z += d.w_a[i * f + j] * x[j];
                }
                for j in 0..hd {
                    z += d.w_h[i * hd + j] * h[j];
                }
                z.tanh()
            })
            .collect()
    };
    let mut hf = enc.fwd.h0.clone();
    for x in &xs {
        hf = step(&enc.fwd, &hf, x);
    }
    let mut hb = enc.bwd.h0.clone();
    for x in xs.iter().rev() {
        hb = step(&enc.bwd, &hb, x);
    }
    hf.extend(hb);
    hf
}

/// Largest relative error between analytic gradients and central finite
/// differences of the per-sample loss, over every parameter. The relative
/// error of one entry is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<M: Model>(model: &M, x: &M::Input, target: f64, eps: f64) -> f64 {
    let mut g = model.zeros_like();
    model.sample_grad(x, target, &mut g);
    let loss = |m: &M| {
        let mut scratch = m.zeros_like();
        m.sample_grad(x, target, &mut scratch)
    };
    let mut m = model.clone();
    let mut worst = 0.0f64;
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = m.tensors()[ti][i];
            m.tensors_mut()[ti][i] = orig + eps;
            let lp = loss(&m);
            m.tensors_mut()[ti][i] = orig - eps;
            let lm = loss(&m);
            m.tensors_mut()[ti][i] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = g.tensors()[ti][i];
            worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-6));
        }
    }
    worst
}
