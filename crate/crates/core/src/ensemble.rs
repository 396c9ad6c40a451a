//! Paired-lattice classifiers: the probability-ratio baseline and the
//! parallel Bi-LRNN ensembles (score merge, embedding merge, end-to-end
//! parallel, mixture of experts).

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::decodesim::{Label, SamplePair};
use crate::lattice::{Lattice, LatticeError};
use crate::lm::DomainPrior;
use crate::lrnn::train::{Model, Parameters};
use crate::lrnn::{bce_with_logit, Encoder, Head, HeadTrace, LrnnError, LrnnParams, ParamsError, PreparedLattice};
use crate::lrnn::{parse_head, parse_lrnn_block, parse_tensor, write_tensor};
use crate::util::sigmoid;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Lrnn(#[from] LrnnError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("unknown ensemble variant `{0}`")]
    UnknownVariant(String),
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Log of the in-domain to out-of-domain posterior ratio. `P(X)` cancels, so
/// this is `log_evidence(base) + ln p_in - log_evidence(chatter) - ln p_out`.
/// Larger means more likely intended.
pub fn ratio_score(base: &Lattice, chatter: &Lattice, prior: DomainPrior) -> Result<f64, LatticeError> {
    Ok((base.log_evidence()? - chatter.log_evidence()?) + (prior.p_in.ln() - prior.p_out.ln()))
}

pub fn ratio_score_pair(pair: &SamplePair, prior: DomainPrior) -> Result<f64, LatticeError> {
    ratio_score(&pair.base, &pair.chatter, prior)
}

/// Strictly increasing map of the real line onto (0, 1), used to turn a ratio
/// score into a detection score. Unlike a logistic it stays injective far out
/// in the tails, so DET thresholds stay distinct.
pub fn squash(s: f64) -> f64 {
    0.5 + s.atan() / std::f64::consts::PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnsembleKind {
    Ratio,
    ScoreMerge,
    EmbedMerge,
    ParallelFull,
    Moe,
}

impl EnsembleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::Ratio => "RATIO",
            EnsembleKind::ScoreMerge => "SCORE_MERGE",
            EnsembleKind::EmbedMerge => "EMBED_MERGE",
            EnsembleKind::ParallelFull => "PARALLEL_FULL",
            EnsembleKind::Moe => "MOE",
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleKind {
    type Err = EnsembleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "RATIO" => EnsembleKind::Ratio,
            "SCORE_MERGE" => EnsembleKind::ScoreMerge,
            "EMBED_MERGE" => EnsembleKind::EmbedMerge,
            "PARALLEL_FULL" => EnsembleKind::ParallelFull,
            "MOE" => EnsembleKind::Moe,
            _ => return Err(EnsembleError::UnknownVariant(s.to_string())),
        })
    }
}

/// Both lattices of a sample, prepared for encoder passes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub base: PreparedLattice,
    pub chatter: PreparedLattice,
}

impl PairInput {
    pub fn new(pair: &SamplePair) -> Result<Self, LatticeError> {
        Ok(Self { base: PreparedLattice::new(&pair.base)?, chatter: PreparedLattice::new(&pair.chatter)? })
    }
}

/// A classifier head trained on fixed feature vectors.
impl Model for Head {
    type Input = [f64];

    fn sample_grad(&self, x: &[f64], target: f64, grad: &mut Self) -> f64 {
        let t = self.forward(x).expect("feature width matches head");
        let (loss, dlogit) = bce_with_logit(t.logit, target);
        self.backprop(x, &t, dlogit, grad);
        loss
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.classify(x).expect("feature width matches head")
    }
}

/// `[y_base, y_chatter]` from two frozen single models.
pub fn score_merge_features(base: &LrnnParams, chatter: &LrnnParams, x: &PairInput) -> Result<Vec<f64>, LrnnError> {
    Ok(vec![base.predict(&x.base)?, chatter.predict(&x.chatter)?])
}

/// `[h1_f, h1_b, h2_f, h2_b]` from two frozen encoders.
pub fn embed_merge_features(base: &Encoder, chatter: &Encoder, x: &PairInput) -> Vec<f64> {
    let mut v = base.embed_prepared(&x.base).concat();
    v.extend(chatter.embed_prepared(&x.chatter).concat());
    v
}

pub fn score_merge_forward(base: &LrnnParams, chatter: &LrnnParams, head: &Head, x: &PairInput) -> Result<f64, LrnnError> {
    head.classify(&score_merge_features(base, chatter, x)?)
}

pub fn embed_merge_forward(base: &LrnnParams, chatter: &LrnnParams, head: &Head, x: &PairInput) -> Result<f64, LrnnError> {
    head.classify(&embed_merge_features(&base.encoder, &chatter.encoder, x))
}

/// Scalar mixture gate over the concatenated embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    /// Length `4H`.
    pub w_g: Vec<f64>,
    /// Length 1.
    pub b_g: Vec<f64>,
}

impl Gate {
    pub fn zeros(hidden: usize) -> Self {
        Self { w_g: vec![0.0; 4 * hidden], b_g: vec![0.0] }
    }

    pub fn alpha(&self, u: &[f64]) -> f64 {
        sigmoid(self.b_g[0] + self.w_g.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
    }
}

/// Two lattice encoders trained jointly with one head. Without a gate the head
/// reads `[h1_f, h1_b, h2_f, h2_b]`; with a gate it reads
/// `[a h1_f + (1-a) h2_f, a h1_b + (1-a) h2_b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelModel {
    pub base: Encoder,
    pub chatter: Encoder,
    pub head: Head,
    pub gate: Option<Gate>,
    /// Learning-rate multiplier for encoder tensors.
    pub encoder_lr_scale: f64,
}

struct PairTrace {
    e1: Vec<f64>,
    e2: Vec<f64>,
    t1: crate::lrnn::EncoderTrace,
    t2: crate::lrnn::EncoderTrace,
    alpha: Option<f64>,
    x: Vec<f64>,
    head: HeadTrace,
}

impl ParallelModel {
    /// Fresh encoders and head. `moe` selects the gated 2H-input form; the
    /// gate starts at zero (a plain average).
    pub fn random<R: Rng>(rng: &mut R, hidden: usize, feat_dim: usize, classifier_hidden: usize, moe: bool) -> Self {
        let base = Encoder::init(rng, hidden, feat_dim);
        let chatter = Encoder::init(rng, hidden, feat_dim);
        let width = if moe { 2 * hidden } else { 4 * hidden };
        let head = Head::init(rng, width, classifier_hidden, 1.0 / (hidden as f64).sqrt());
        Self { base, chatter, head, gate: moe.then(|| Gate::zeros(hidden)), encoder_lr_scale: 1.0 }
    }

    /// Encoders copied from trained single models; `head` must match the form.
    pub fn pretrained(
        base: &LrnnParams,
        chatter: &LrnnParams,
        head: Head,
        moe: bool,
        encoder_lr_scale: f64,
    ) -> Result<Self, LrnnError> {
        let hidden = base.encoder.hidden;
        if chatter.encoder.hidden != hidden {
            return Err(LrnnError::WidthMismatch { expected: hidden, got: chatter.encoder.hidden });
        }
        let width = if moe { 2 * hidden } else { 4 * hidden };
        if head.input_width != width {
            return Err(LrnnError::WidthMismatch { expected: width, got: head.input_width });
        }
        Ok(Self {
            base: base.encoder.clone(),
            chatter: chatter.encoder.clone(),
            head,
            gate: moe.then(|| Gate::zeros(hidden)),
            encoder_lr_scale,
        })
    }

    pub fn kind(&self) -> EnsembleKind {
        if self.gate.is_some() {
            EnsembleKind::Moe
        } else {
            EnsembleKind::ParallelFull
        }
    }

    pub fn hidden(&self) -> usize {
        self.base.hidden
    }

    fn forward_traced(&self, x: &PairInput) -> Result<PairTrace, LrnnError> {
        let (e1, t1) = self.base.embed_traced(&x.base);
        let (e2, t2) = self.chatter.embed_traced(&x.chatter);
        let (e1, e2) = (e1.concat(), e2.concat());
        let (alpha, feats) = match &self.gate {
            None => {
                let mut v = e1.clone();
                v.extend_from_slice(&e2);
                (None, v)
            }
            Some(g) => {
                let mut u = e1.clone();
                u.extend_from_slice(&e2);
                if g.w_g.len() != u.len() {
                    return Err(LrnnError::WidthMismatch { expected: g.w_g.len(), got: u.len() });
                }
                let a = g.alpha(&u);
                (Some(a), e1.iter().zip(&e2).map(|(p, q)| a * p + (1.0 - a) * q).collect())
            }
        };
        let head = self.head.forward(&feats)?;
        Ok(PairTrace { e1, e2, t1, t2, alpha, x: feats, head })
    }

    /// Output probability and, for the gated form, the mixture weight.
    pub fn forward(&self, x: &PairInput) -> Result<(f64, Option<f64>), LrnnError> {
        let t = self.forward_traced(x)?;
        Ok((t.head.y, t.alpha))
    }

    pub fn pair_grad(&self, x: &PairInput, target: f64, grad: &mut Self) -> Result<f64, LrnnError> {
        let t = self.forward_traced(x)?;
        let (loss, dlogit) = bce_with_logit(t.head.logit, target);
        let dx = self.head.backprop(&t.x, &t.head, dlogit, &mut grad.head);
        let (d1, d2) = match (&self.gate, t.alpha) {
            (Some(g), Some(a)) => {
                let dalpha: f64 = dx.iter().zip(t.e1.iter().zip(&t.e2)).map(|(d, (p, q))| d * (p - q)).sum();
                let dz = dalpha * a * (1.0 - a);
                let n = t.e1.len();
                let gg = grad.gate.as_mut().expect("gradient has a gate");
                for i in 0..n {
                    gg.w_g[i] += dz * t.e1[i];
                    gg.w_g[n + i] += dz * t.e2[i];
                }
                gg.b_g[0] += dz;
                let d1 = (0..n).map(|i| a * dx[i] + dz * g.w_g[i]).collect::<Vec<_>>();
                let d2 = (0..n).map(|i| (1.0 - a) * dx[i] + dz * g.w_g[n + i]).collect::<Vec<_>>();
                (d1, d2)
            }
            _ => {
                let n = t.e1.len();
                (dx[..n].to_vec(), dx[n..].to_vec())
            }
        };
        self.base.backprop(&x.base, &t.t1, &d1, &mut grad.base);
        self.chatter.backprop(&x.chatter, &t.t2, &d2, &mut grad.chatter);
        Ok(loss)
    }
}

/// `(y, alpha)` of a gated model.
pub fn moe_forward(m: &ParallelModel, x: &PairInput) -> Result<(f64, f64), LrnnError> {
    match m.forward(x)? {
        (y, Some(a)) => Ok((y, a)),
        (_, None) => Err(LrnnError::WidthMismatch { expected: 2 * m.hidden(), got: m.head.input_width }),
    }
}

impl Parameters for Gate {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w_g, &self.b_g]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w_g, &mut self.b_g]
    }
}

impl Parameters for ParallelModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.base.tensors();
        t.extend(self.chatter.tensors());
        t.extend(self.head.tensors());
        if let Some(g) = &self.gate {
            t.extend(g.tensors());
        }
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.base.tensors_mut();
        t.extend(self.chatter.tensors_mut());
        t.extend(self.head.tensors_mut());
        if let Some(g) = &mut self.gate {
            t.extend(g.tensors_mut());
        }
        t
    }
}

impl Model for ParallelModel {
    type Input = PairInput;

    fn sample_grad(&self, x: &PairInput, target: f64, grad: &mut Self) -> f64 {
        self.pair_grad(x, target, grad).expect("consistent widths")
    }

    fn predict(&self, x: &PairInput) -> f64 {
        self.forward(x).expect("consistent widths").0
    }

    fn lr_scales(&self) -> Vec<f64> {
        let enc = self.base.tensors().len() + self.chatter.tensors().len();
        let rest = self.tensors().len() - enc;
        let mut s = vec![self.encoder_lr_scale; enc];
        s.extend(std::iter::repeat_n(1.0, rest));
        s
    }
}

/// A trained paired classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleParams {
    Ratio { prior: DomainPrior },
    ScoreMerge { base: LrnnParams, chatter: LrnnParams, head: Head },
    EmbedMerge { base: LrnnParams, chatter: LrnnParams, head: Head },
    Parallel(ParallelModel),
}

impl EnsembleParams {
    pub fn kind(&self) -> EnsembleKind {
        match self {
            EnsembleParams::Ratio { .. } => EnsembleKind::Ratio,
            EnsembleParams::ScoreMerge { .. } => EnsembleKind::ScoreMerge,
            EnsembleParams::EmbedMerge { .. } => EnsembleKind::EmbedMerge,
            EnsembleParams::Parallel(m) => m.kind(),
        }
    }

    /// Detection score in (0, 1) for a pair; the ratio baseline is squashed.
    pub fn score(&self, pair: &SamplePair, x: &PairInput) -> Result<f64, EnsembleError> {
        Ok(match self {
            EnsembleParams::Ratio { prior } => squash(ratio_score_pair(pair, *prior)?),
            EnsembleParams::ScoreMerge { base, chatter, head } => score_merge_forward(base, chatter, head, x)?,
            EnsembleParams::EmbedMerge { base, chatter, head } => embed_merge_forward(base, chatter, head, x)?,
            EnsembleParams::Parallel(m) => m.forward(x)?.0,
        })
    }

    /// `ENS v1 <variant>` then the constituent blocks.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self {
            EnsembleParams::Ratio { prior } => {
                s.push_str("ENS v1 RATIO\n");
                write_tensor(&mut s, "prior", &[prior.p_in, prior.p_out]);
            }
            EnsembleParams::ScoreMerge { base, chatter, head } | EnsembleParams::EmbedMerge { base, chatter, head } => {
                s.push_str(&format!("ENS v1 {}\n", self.kind()));
                s.push_str(&base.to_text());
                s.push_str(&chatter.to_text());
                write_named(&mut s, "merge", &head_names(), head);
            }
            EnsembleParams::Parallel(m) => {
                s.push_str(&format!(
                    "ENS v1 {} {} {} {} {:?}\n",
                    m.kind(),
                    m.base.hidden,
                    m.base.feat_dim,
                    m.head.hidden,
                    m.encoder_lr_scale
                ));
                write_named(&mut s, "base", &encoder_names(), &m.base);
                write_named(&mut s, "chatter", &encoder_names(), &m.chatter);
                write_named(&mut s, "head", &head_names(), &m.head);
                if let Some(g) = &m.gate {
                    write_named(&mut s, "gate", &["w_g", "b_g"], g);
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, EnsembleError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (i, header) = lines.next().ok_or(ParamsError::Parse { line: 1, msg: "empty checkpoint".into() })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let bad = |msg: String| ParamsError::Parse { line: i + 1, msg };
        if h.len() < 3 || h[0] != "ENS" || h[1] != "v1" {
            return Err(bad(format!("bad ENS header `{header}`")).into());
        }
        let kind: EnsembleKind = h[2].parse()?;
        let p = match kind {
            EnsembleKind::Ratio => {
                let v = parse_tensor(&mut lines, "prior", 2)?;
                EnsembleParams::Ratio { prior: DomainPrior { p_in: v[0], p_out: v[1] } }
            }
            EnsembleKind::ScoreMerge | EnsembleKind::EmbedMerge => {
                let base = parse_lrnn_block(&mut lines)?;
                let chatter = parse_lrnn_block(&mut lines)?;
                let width = if kind == EnsembleKind::ScoreMerge { 2 } else { 4 * base.encoder.hidden };
                let head = parse_head(&mut lines, "merge", width)?;
                if kind == EnsembleKind::ScoreMerge {
                    EnsembleParams::ScoreMerge { base, chatter, head }
                } else {
                    EnsembleParams::EmbedMerge { base, chatter, head }
                }
            }
            EnsembleKind::ParallelFull | EnsembleKind::Moe => {
                if h.len() != 7 {
                    return Err(bad(format!("bad ENS header `{header}`")).into());
                }
                let num = |t: &str| t.parse::<usize>().map_err(|_| bad(format!("bad integer `{t}`")));
                let (hidden, feat, c) = (num(h[3])?, num(h[4])?, num(h[5])?);
                let scale: f64 = h[6].parse().map_err(|_| bad(format!("bad lr scale `{}`", h[6])))?;
                let moe = kind == EnsembleKind::Moe;
                let mut m = ParallelModel {
                    base: zero_encoder(hidden, feat),
                    chatter: zero_encoder(hidden, feat),
                    head: Head::zeros(if moe { 2 * hidden } else { 4 * hidden }, c),
                    gate: moe.then(|| Gate::zeros(hidden)),
                    encoder_lr_scale: scale,
                };
                read_named(&mut lines, "base", &encoder_names(), &mut m.base)?;
                read_named(&mut lines, "chatter", &encoder_names(), &mut m.chatter)?;
                read_named(&mut lines, "head", &head_names(), &mut m.head)?;
                if let Some(g) = &mut m.gate {
                    read_named(&mut lines, "gate", &["w_g", "b_g"], g)?;
                }
                EnsembleParams::Parallel(m)
            }
        };
        if let Some((i, l)) = lines.next() {
            return Err(ParamsError::Parse { line: i + 1, msg: format!("trailing content `{l}`") }.into());
        }
        Ok(p)
    }
}

fn zero_encoder(hidden: usize, feat: usize) -> Encoder {
    let d = || crate::lrnn::Direction {
        w_a: vec![0.0; hidden * feat],
        w_h: vec![0.0; hidden * hidden],
        b: vec![0.0; hidden],
        h0: vec![0.0; hidden],
    };
    Encoder { hidden, feat_dim: feat, fwd: d(), bwd: d() }
}

fn encoder_names() -> [&'static str; 8] {
    ["fwd.w_a", "fwd.w_h", "fwd.b", "fwd.h0", "bwd.w_a", "bwd.w_h", "bwd.b", "bwd.h0"]
}

fn head_names() -> [&'static str; 4] {
    ["w1", "b1", "w2", "b2"]
}

fn write_named<P: Parameters>(s: &mut String, prefix: &str, names: &[&str], p: &P) {
    for (n, t) in names.iter().zip(p.tensors()) {
        write_tensor(s, &format!("{prefix}.{n}"), t);
    }
}

fn read_named<'a, P: Parameters>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    prefix: &str,
    names: &[&str],
    p: &mut P,
) -> Result<(), ParamsError> {
    for (n, t) in names.iter().zip(p.tensors_mut()) {
        let v = parse_tensor(lines, &format!("{prefix}.{n}"), t.len())?;
        t.copy_from_slice(&v);
    }
    Ok(())
}

/// One cached feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedFeatures {
    pub id: String,
    pub label: Label,
    pub features: Vec<f64>,
}

const CACHE_MAGIC: &[u8; 8] = b"FTMEMB1\n";

/// Binary cache: magic, record count, then per record `id_len u32, id,
/// label u8 (1 = TT), dim u32, dim x f64`, all little-endian.
pub fn write_feature_cache<W: Write>(mut w: W, recs: &[CachedFeatures]) -> io::Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(recs.len() as u64).to_le_bytes())?;
    for r in recs {
        w.write_all(&(r.id.len() as u32).to_le_bytes())?;
        w.write_all(r.id.as_bytes())?;
        w.write_all(&[u8::from(r.label == Label::TT)])?;
        w.write_all(&(r.features.len() as u32).to_le_bytes())?;
        for x in &r.features {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_feature_cache<R: Read>(mut r: R) -> Result<Vec<CachedFeatures>, EnsembleError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], EnsembleError> {
        let s = buf.get(pos..pos + n).ok_or_else(|| EnsembleError::Cache("truncated".into()))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != CACHE_MAGIC {
        return Err(EnsembleError::Cache("bad magic".into()));
    }
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let id = String::from_utf8(take(len)?.to_vec()).map_err(|_| EnsembleError::Cache("id not utf-8".into()))?;
        let label = match take(1)?[0] {
            1 => Label::TT,
            0 => Label::FT,
            b => return Err(EnsembleError::Cache(format!("bad label byte {b}"))),
        };
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let features = (0..dim)
            .map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())))
            .collect::<Result<Vec<_>, EnsembleError>>()?;
        out.push(CachedFeatures { id, label, features });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
