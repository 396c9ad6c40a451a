use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use super::train::Parameters;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One recurrence direction. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    /// `H x F`
    pub w_a: Vec<f64>,
    /// `H x H`
    pub w_h: Vec<f64>,
    pub b: Vec<f64>,
    pub h0: Vec<f64>,
}

impl Direction {
    pub fn hidden(&self) -> usize {
        self.b.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.w_a.len() / self.b.len()
    }

    fn init<R: Rng>(rng: &mut R, hidden: usize, feat_dim: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_a: uniform(rng, hidden * feat_dim, bound),
            w_h: uniform(rng, hidden * hidden, bound),
            b: vec![0.0; hidden],
            h0: vec![0.0; hidden],
        }
    }
}

/// Both directions of a bidirectional lattice RNN.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub hidden: usize,
    pub feat_dim: usize,
    pub fwd: Direction,
    pub bwd: Direction,
}

impl Encoder {
    pub fn init<R: Rng>(rng: &mut R, hidden: usize, feat_dim: usize) -> Self {
        Self { hidden, feat_dim, fwd: Direction::init(rng, hidden, feat_dim), bwd: Direction::init(rng, hidden, feat_dim) }
    }
}

/// `sigmoid(w2 . relu(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub input_width: usize,
    pub hidden: usize,
    /// `C x input_width`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Length 1.
    pub b2: Vec<f64>,
}

impl Head {
    /// Weights uniform in `±bound`, biases zero.
    pub fn init<R: Rng>(rng: &mut R, input_width: usize, hidden: usize, bound: f64) -> Self {
        Self {
            input_width,
            hidden,
            w1: uniform(rng, hidden * input_width, bound),
            b1: vec![0.0; hidden],
            w2: uniform(rng, hidden, bound),
            b2: vec![0.0],
        }
    }

    pub fn zeros(input_width: usize, hidden: usize) -> Self {
        Self { input_width, hidden, w1: vec![0.0; hidden * input_width], b1: vec![0.0; hidden], w2: vec![0.0; hidden], b2: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrnnParams {
    pub encoder: Encoder,
    pub head: Head,
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl LrnnParams {
    /// Weights uniform in `±1/sqrt(H)`, biases and initial states zero.
    pub fn init<R: Rng>(rng: &mut R, hidden: usize, feat_dim: usize, classifier_hidden: usize) -> Self {
        let encoder = Encoder::init(rng, hidden, feat_dim);
        let head = Head::init(rng, 2 * hidden, classifier_hidden, 1.0 / (hidden as f64).sqrt());
        Self { encoder, head }
    }

    /// `LRNN v1 <H> <F> <input_width>` followed by one line per tensor.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "LRNN v1 {} {} {}", self.encoder.hidden, self.encoder.feat_dim, self.head.input_width).unwrap();
        write_tensors(&mut s, self);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ParamsError> {
        let mut lines = text.lines().enumerate();
        let p = parse_lrnn_block(&mut lines)?;
        if let Some((i, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(ParamsError::Parse { line: i + 1, msg: format!("trailing content `{l}`") });
        }
        Ok(p)
    }
}

const TENSOR_NAMES: [&str; 12] = [
    "fwd.w_a", "fwd.w_h", "fwd.b", "fwd.h0", "bwd.w_a", "bwd.w_h", "bwd.b", "bwd.h0", "head.w1", "head.b1", "head.w2", "head.b2",
];

pub(crate) fn write_tensor(s: &mut String, name: &str, t: &[f64]) {
    write!(s, "{name} {}", t.len()).unwrap();
    for x in t {
        // `{:?}` is the shortest representation that parses back to the same bits.
        write!(s, " {x:?}").unwrap();
    }
    s.push('\n');
}

fn write_tensors(s: &mut String, p: &LrnnParams) {
    for (name, t) in TENSOR_NAMES.iter().zip(p.tensors()) {
        write_tensor(s, name, t);
    }
}

pub(crate) fn parse_tensor<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    name: &str,
    len: usize,
) -> Result<Vec<f64>, ParamsError> {
    let (i, line) = lines.next().ok_or(ParamsError::Parse { line: 0, msg: format!("missing tensor {name}") })?;
    let err = |msg: String| ParamsError::Parse { line: i + 1, msg };
    let mut f = line.split_whitespace();
    if f.next() != Some(name) {
        return Err(err(format!("expected tensor {name}")));
    }
    let n: usize = f.next().and_then(|t| t.parse().ok()).ok_or_else(|| err("bad length".into()))?;
    if n != len {
        return Err(err(format!("{name} has {n} values, expected {len}")));
    }
    let v: Vec<f64> = f.map(|t| t.parse::<f64>().map_err(|_| err(format!("bad value `{t}`")))).collect::<Result<_, _>>()?;
    if v.len() != len {
        return Err(err(format!("{name} lists {} values, header says {len}", v.len())));
    }
    Ok(v)
}

pub(crate) fn parse_lrnn_block<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<LrnnParams, ParamsError> {
    let (i, header) = lines.next().ok_or(ParamsError::Parse { line: 1, msg: "missing LRNN header".into() })?;
    let err = |msg: String| ParamsError::Parse { line: i + 1, msg };
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 || h[0] != "LRNN" || h[1] != "v1" {
        return Err(err(format!("bad LRNN header `{header}`")));
    }
    let num = |t: &str| t.parse::<usize>().map_err(|_| err(format!("bad integer `{t}`")));
    let (hidden, feat, width) = (num(h[2])?, num(h[3])?, num(h[4])?);
    let mut dir = |prefix: &str| -> Result<Direction, ParamsError> {
        Ok(Direction {
            w_a: parse_tensor(lines, &format!("{prefix}.w_a"), hidden * feat)?,
            w_h: parse_tensor(lines, &format!("{prefix}.w_h"), hidden * hidden)?,
            b: parse_tensor(lines, &format!("{prefix}.b"), hidden)?,
            h0: parse_tensor(lines, &format!("{prefix}.h0"), hidden)?,
        })
    };
    let fwd = dir("fwd")?;
    let bwd = dir("bwd")?;
    let head = parse_head(lines, "head", width)?;
    Ok(LrnnParams { encoder: Encoder { hidden, feat_dim: feat, fwd, bwd }, head })
}

/// A head block: `<prefix>.w1`, `.b1`, `.w2`, `.b2`; the hidden width is read from `w1`.
pub(crate) fn parse_head<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    prefix: &str,
    width: usize,
) -> Result<Head, ParamsError> {
    let (i, line) = lines.next().ok_or(ParamsError::Parse { line: 0, msg: format!("missing {prefix}.w1") })?;
    let len: usize = line.split_whitespace().nth(1).and_then(|t| t.parse().ok()).unwrap_or(0);
    if width == 0 || len % width != 0 {
        return Err(ParamsError::Parse { line: i + 1, msg: format!("{prefix}.w1 length {len} not a multiple of {width}") });
    }
    let c = len / width;
    let w1 = parse_tensor(&mut std::iter::once((i, line)), &format!("{prefix}.w1"), c * width)?;
    Ok(Head {
        input_width: width,
        hidden: c,
        w1,
        b1: parse_tensor(lines, &format!("{prefix}.b1"), c)?,
        w2: parse_tensor(lines, &format!("{prefix}.w2"), c)?,
        b2: parse_tensor(lines, &format!("{prefix}.b2"), 1)?,
    })
}

impl Parameters for Direction {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w_a, &self.w_h, &self.b, &self.h0]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w_a, &mut self.w_h, &mut self.b, &mut self.h0]
    }
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.fwd.tensors();
        t.extend(self.bwd.tensors());
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.fwd.tensors_mut();
        t.extend(self.bwd.tensors_mut());
        t
    }
}

impl Parameters for Head {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl Parameters for LrnnParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}
