//! Word-hypothesis lattices: validation, traversal, exact path evidence and the
//! line-oriented `LAT v1` text format.
//!
//! A lattice is a DAG over node ids `0..num_nodes` with a single start and end
//! node. Every arc carries a word and its acoustic/language log-scores, so the
//! total log-probability mass of all hypotheses can be computed exactly with a
//! forward pass in topological order.

use std::collections::{BinaryHeap, VecDeque};
use std::cmp::Reverse;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::util::{fmt_sig9, fnv1a, log_add, logsumexp};

pub type NodeId = u32;

/// Number of hash buckets for the lexical part of the arc feature vector.
pub const V_HASH: usize = 64;
/// Durations are divided by this before entering the feature vector.
pub const MAX_FRAMES: f64 = 100.0;
/// Width of [`ArcFeatures::write_vector`]: am, lm, scaled duration, word one-hot.
pub const FEATURE_DIM: usize = 3 + V_HASH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LmTag {
    Base,
    Chatter,
}

impl LmTag {
    pub fn as_str(self) -> &'static str {
        match self {
            LmTag::Base => "BASE",
            LmTag::Chatter => "CHATTER",
        }
    }
}

impl fmt::Display for LmTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LmTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "BASE" => Ok(LmTag::Base),
            "CHATTER" => Ok(LmTag::Chatter),
            other => Err(format!("unknown lm tag `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcFeatures {
    /// Natural-log acoustic score.
    pub am_score: f64,
    /// Natural-log language model score.
    pub lm_score: f64,
    /// Frames.
    pub duration: u32,
    pub word_embed_index: usize,
}

impl ArcFeatures {
    pub fn new(word: &str, am_score: f64, lm_score: f64, duration: u32) -> Self {
        Self {
            am_score,
            lm_score,
            duration,
            word_embed_index: word_bucket(word),
        }
    }

    /// Writes the dense feature vector into `out[..FEATURE_DIM]`.
    pub fn write_vector(&self, out: &mut [f64]) {
        out[..FEATURE_DIM].fill(0.0);
        out[0] = self.am_score;
        out[1] = self.lm_score;
        out[2] = f64::from(self.duration) / MAX_FRAMES;
        out[3 + self.word_embed_index] = 1.0;
    }

    pub fn vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; FEATURE_DIM];
        self.write_vector(&mut v);
        v
    }
}

pub fn word_bucket(word: &str) -> usize {
    (fnv1a(word.as_bytes()) % V_HASH as u64) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub src: NodeId,
    pub dst: NodeId,
    pub word: String,
    pub features: ArcFeatures,
}

impl Arc {
    pub fn new(src: NodeId, dst: NodeId, word: &str, am_score: f64, lm_score: f64, duration: u32) -> Self {
        Self {
            src,
            dst,
            word: word.to_string(),
            features: ArcFeatures::new(word, am_score, lm_score, duration),
        }
    }

    /// `am + lm` for this arc.
    pub fn score(&self) -> f64 {
        self.features.am_score + self.features.lm_score
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub utterance_id: String,
    pub lm_tag: LmTag,
    pub num_nodes: u32,
    pub start: NodeId,
    pub end: NodeId,
    pub arcs: Vec<Arc>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("lattice `{0}` is empty")]
    EmptyLattice(String),
    #[error("arc {arc} references node {node}, but the lattice has {num_nodes} nodes")]
    DanglingArc { arc: usize, node: NodeId, num_nodes: u32 },
    #[error("cycle through node {0}")]
    CycleDetected(NodeId),
    #[error("node {0} is not on any start-to-end path")]
    UnreachableNode(NodeId),
    #[error("lattice has {count} paths, more than the limit of {limit}")]
    TooManyPaths { count: u128, limit: usize },
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
}

/// Adjacency and topological order of a validated lattice.
#[derive(Debug, Clone)]
pub struct Topology {
    /// Node ids, start first, end last.
    pub order: Vec<NodeId>,
    /// Arc indices entering each node, in arc-list order.
    pub incoming: Vec<Vec<usize>>,
    /// Arc indices leaving each node, in arc-list order.
    pub outgoing: Vec<Vec<usize>>,
}

/// One complete start-to-end hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct PathHypothesis {
    pub words: Vec<String>,
    pub am_score: f64,
    pub lm_score: f64,
}

impl PathHypothesis {
    pub fn total(&self) -> f64 {
        self.am_score + self.lm_score
    }
}

impl Lattice {
    /// Builds and validates.
    pub fn new(
        utterance_id: impl Into<String>,
        lm_tag: LmTag,
        num_nodes: u32,
        start: NodeId,
        end: NodeId,
        arcs: Vec<Arc>,
    ) -> Result<Self, LatticeError> {
        let lat = Self {
            utterance_id: utterance_id.into(),
            lm_tag,
            num_nodes,
            start,
            end,
            arcs,
        };
        lat.validate()?;
        Ok(lat)
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        self.check().map(|_| ())
    }

    /// Validates and returns the adjacency/topological order in one pass.
    pub fn topology(&self) -> Result<Topology, LatticeError> {
        self.check()
    }

    pub fn topological_order(&self) -> Result<Vec<NodeId>, LatticeError> {
        Ok(self.check()?.order)
    }

    fn check(&self) -> Result<Topology, LatticeError> {
        let n = self.num_nodes as usize;
        if n == 0 || self.arcs.is_empty() || self.start == self.end {
            return Err(LatticeError::EmptyLattice(self.utterance_id.clone()));
        }
        for &node in &[self.start, self.end] {
            if node as usize >= n {
                return Err(LatticeError::DanglingArc { arc: usize::MAX, node, num_nodes: self.num_nodes });
            }
        }
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for (i, arc) in self.arcs.iter().enumerate() {
            for node in [arc.src, arc.dst] {
                if node as usize >= n {
                    return Err(LatticeError::DanglingArc { arc: i, node, num_nodes: self.num_nodes });
                }
            }
            if arc.src == arc.dst {
                return Err(LatticeError::CycleDetected(arc.src));
            }
            outgoing[arc.src as usize].push(i);
            incoming[arc.dst as usize].push(i);
        }

        // Kahn's algorithm, smallest ready id first.
        let mut indeg: Vec<usize> = incoming.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<NodeId>> =
            (0..n).filter(|&v| indeg[v] == 0).map(|v| Reverse(v as NodeId)).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for &a in &outgoing[v as usize] {
                let d = self.arcs[a].dst as usize;
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    ready.push(Reverse(d as NodeId));
                }
            }
        }
        if order.len() < n {
            let on_cycle = (0..n).find(|&v| indeg[v] > 0).expect("some node left unsorted");
            return Err(LatticeError::CycleDetected(on_cycle as NodeId));
        }

        let fwd = reachable(n, self.start, &outgoing, |a| self.arcs[a].dst);
        let bwd = reachable(n, self.end, &incoming, |a| self.arcs[a].src);
        if let Some(v) = (0..n).find(|&v| !(fwd[v] && bwd[v])) {
            return Err(LatticeError::UnreachableNode(v as NodeId));
        }
        // Acyclic and fully connected: start is the unique source, end the unique sink,
        // so the min-id Kahn order already begins with start and ends with end.
        debug_assert_eq!(order.first(), Some(&self.start));
        debug_assert_eq!(order.last(), Some(&self.end));
        Ok(Topology { order, incoming, outgoing })
    }

    /// Number of start-to-end paths, saturating at `u128::MAX`.
    pub fn path_count(&self) -> Result<u128, LatticeError> {
        let topo = self.check()?;
        Ok(count_paths(self, &topo))
    }

    /// All start-to-end paths in depth-first order, following arc-list order at each node.
    pub fn enumerate_paths(&self, max_paths: usize) -> Result<Vec<PathHypothesis>, LatticeError> {
        let topo = self.check()?;
        let count = count_paths(self, &topo);
        if count > max_paths as u128 {
            return Err(LatticeError::TooManyPaths { count, limit: max_paths });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut stack: Vec<usize> = Vec::new();
        self.dfs(self.start, &topo, &mut stack, &mut out);
        Ok(out)
    }

    fn dfs(&self, v: NodeId, topo: &Topology, stack: &mut Vec<usize>, out: &mut Vec<PathHypothesis>) {
        if v == self.end {
            let mut hyp = PathHypothesis { words: Vec::with_capacity(stack.len()), am_score: 0.0, lm_score: 0.0 };
            for &a in stack.iter() {
                let arc = &self.arcs[a];
                hyp.words.push(arc.word.clone());
                hyp.am_score += arc.features.am_score;
                hyp.lm_score += arc.features.lm_score;
            }
            out.push(hyp);
            return;
        }
        for &a in &topo.outgoing[v as usize] {
            stack.push(a);
            self.dfs(self.arcs[a].dst, topo, stack, out);
            stack.pop();
        }
    }

    /// `ln Σ_paths exp(am + lm)` by a forward pass in topological order.
    pub fn log_evidence(&self) -> Result<f64, LatticeError> {
        let topo = self.check()?;
        Ok(self.log_evidence_with(&topo))
    }

    pub fn log_evidence_with(&self, topo: &Topology) -> f64 {
        let mut alpha = vec![f64::NEG_INFINITY; self.num_nodes as usize];
        alpha[self.start as usize] = 0.0;
        for &v in &topo.order {
            let v = v as usize;
            for &a in &topo.incoming[v] {
                let arc = &self.arcs[a];
                alpha[v] = log_add(alpha[v], alpha[arc.src as usize] + arc.score());
            }
        }
        alpha[self.end as usize]
    }

    /// The same graph with node ids permuted by `perm[old] = new`.
    pub fn relabel(&self, perm: &[NodeId]) -> Lattice {
        Lattice {
            utterance_id: self.utterance_id.clone(),
            lm_tag: self.lm_tag,
            num_nodes: self.num_nodes,
            start: perm[self.start as usize],
            end: perm[self.end as usize],
            arcs: self
                .arcs
                .iter()
                .map(|a| Arc { src: perm[a.src as usize], dst: perm[a.dst as usize], ..a.clone() })
                .collect(),
        }
    }
}

fn reachable(n: usize, from: NodeId, adj: &[Vec<usize>], next: impl Fn(usize) -> NodeId) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([from]);
    seen[from as usize] = true;
    while let Some(v) = queue.pop_front() {
        for &a in &adj[v as usize] {
            let w = next(a);
            if !seen[w as usize] {
                seen[w as usize] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

fn count_paths(lat: &Lattice, topo: &Topology) -> u128 {
    let mut count = vec![0u128; lat.num_nodes as usize];
    count[lat.start as usize] = 1;
    for &v in &topo.order {
        let v = v as usize;
        for &a in &topo.incoming[v] {
            count[v] = count[v].saturating_add(count[lat.arcs[a].src as usize]);
        }
    }
    count[lat.end as usize]
}

/// Log-sum-exp over enumerated path totals; the brute-force counterpart of
/// [`Lattice::log_evidence`].
pub fn log_evidence_by_enumeration(lat: &Lattice, max_paths: usize) -> Result<f64, LatticeError> {
    let totals: Vec<f64> = lat.enumerate_paths(max_paths)?.iter().map(PathHypothesis::total).collect();
    Ok(logsumexp(&totals))
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

/// Serializes a validated lattice as one `LAT v1` record (header + `ARC` lines).
pub fn write_lattice(lat: &Lattice) -> Result<String, LatticeError> {
    lat.validate()?;
    let mut s = String::new();
    write_record(lat, &mut s);
    Ok(s)
}

pub(crate) fn write_record(lat: &Lattice, s: &mut String) {
    writeln!(
        s,
        "LAT v1 {} {} {} {} {}",
        lat.utterance_id, lat.lm_tag, lat.num_nodes, lat.start, lat.end
    )
    .unwrap();
    for a in &lat.arcs {
        writeln!(
            s,
            "ARC {} {} {} {} {} {}",
            a.src,
            a.dst,
            a.word,
            fmt_sig9(a.features.am_score),
            fmt_sig9(a.features.lm_score),
            a.features.duration
        )
        .unwrap();
    }
}

/// Serializes several records back to back.
pub fn write_lattices<'a>(lats: impl IntoIterator<Item = &'a Lattice>) -> Result<String, LatticeError> {
    let mut s = String::new();
    for lat in lats {
        lat.validate()?;
        write_record(lat, &mut s);
    }
    Ok(s)
}

/// Parses exactly one record.
pub fn read_lattice(text: &str) -> Result<Lattice, LatticeError> {
    let mut lats = read_lattices(text)?;
    match lats.len() {
        1 => Ok(lats.pop().unwrap()),
        n => Err(LatticeError::ParseError { line: 1, msg: format!("expected one lattice record, found {n}") }),
    }
}

/// Parses any number of newline-separated records; blank lines are ignored.
pub fn read_lattices(text: &str) -> Result<Vec<Lattice>, LatticeError> {
    let mut out = Vec::new();
    let mut current: Option<Lattice> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| LatticeError::ParseError { line, msg };
        let fields: Vec<&str> = raw.split_whitespace().collect();
        match fields.first().copied() {
            None => continue,
            Some("LAT") => {
                if let Some(done) = current.take() {
                    done.validate()?;
                    out.push(done);
                }
                if fields.len() != 7 {
                    return Err(err(format!("header needs 7 fields, found {}", fields.len())));
                }
                if fields[1] != "v1" {
                    return Err(err(format!("unsupported version `{}`", fields[1])));
                }
                current = Some(Lattice {
                    utterance_id: fields[2].to_string(),
                    lm_tag: fields[3].parse().map_err(err)?,
                    num_nodes: parse_field(fields[4], "num_nodes", line)?,
                    start: parse_field(fields[5], "start", line)?,
                    end: parse_field(fields[6], "end", line)?,
                    arcs: Vec::new(),
                });
            }
            Some("ARC") => {
                let lat = current.as_mut().ok_or_else(|| err("ARC before LAT header".into()))?;
                if fields.len() != 7 {
                    return Err(err(format!("ARC needs 7 fields, found {}", fields.len())));
                }
                let am: f64 = parse_field(fields[4], "am_score", line)?;
                let lm: f64 = parse_field(fields[5], "lm_score", line)?;
                if !am.is_finite() || !lm.is_finite() {
                    return Err(err("non-finite score".into()));
                }
                lat.arcs.push(Arc::new(
                    parse_field(fields[1], "src", line)?,
                    parse_field(fields[2], "dst", line)?,
                    fields[3],
                    am,
                    lm,
                    parse_field(fields[6], "duration", line)?,
                ));
            }
            Some(other) => return Err(err(format!("unknown record type `{other}`"))),
        }
    }
    if let Some(done) = current {
        done.validate()?;
        out.push(done);
    }
    Ok(out)
}

fn parse_field<T: FromStr>(tok: &str, name: &str, line: usize) -> Result<T, LatticeError> {
    tok.parse()
        .map_err(|_| LatticeError::ParseError { line, msg: format!("bad {name} `{tok}`") })
}
