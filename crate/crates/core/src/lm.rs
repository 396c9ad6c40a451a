//! Interpolated absolute-discount n-gram language models.
//!
//! For a history `h` with continuation counts `c(h, ·)`:
//!
//! ```text
//! P(w | h) = max(c(h,w) - d, 0) / c(h) + d * N1+(h ·) / c(h) * P(w | h')
//! ```
//!
//! where `h'` drops the oldest word and the recursion bottoms out in the
//! uniform distribution over the predictable vocabulary. Unseen histories
//! back off entirely. The predictable vocabulary is every token except `<s>`,
//! so every conditional distribution sums to one and gives `<unk>` positive mass.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::lattice::LmTag;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("discount must lie in (0, 1), got {0}")]
    BadDiscount(f64),
    #[error("order must lie in 1..=4, got {0}")]
    BadOrder(usize),
    #[error("domain prior must lie in (0, 1), got {0}")]
    BadPrior(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// `P(L_D)` and `P(L_O)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainPrior {
    pub p_in: f64,
    pub p_out: f64,
}

impl DomainPrior {
    pub fn new(p_in: f64) -> Result<Self, LmError> {
        if !(p_in > 0.0 && p_in < 1.0) {
            return Err(LmError::BadPrior(p_in));
        }
        Ok(Self { p_in, p_out: 1.0 - p_in })
    }

    pub fn swapped(self) -> Self {
        Self { p_in: self.p_out, p_out: self.p_in }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Context {
    total: u64,
    counts: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    pub tag: LmTag,
    order: usize,
    discount: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// `contexts[k]` maps a history of length `k` to its continuation counts.
    contexts: Vec<HashMap<Vec<u32>, Context>>,
}

impl NGramModel {
    pub fn train(corpus: &[Vec<String>], order: usize, discount: f64, tag: LmTag) -> Result<Self, LmError> {
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(LmError::EmptyCorpus);
        }
        let mut model = Self::empty(tag, order, discount)?;
        for sent in corpus {
            for w in sent {
                model.intern(w);
            }
        }
        for sent in corpus {
            if sent.is_empty() {
                continue;
            }
            let ids = model.sentence_ids(sent);
            for i in 1..ids.len() {
                // Histories never extend past the leading <s>.
                for k in 0..order.min(i + 1) {
                    model.bump(ids[i - k..i].to_vec(), ids[i], 1);
                }
            }
        }
        Ok(model)
    }

    /// Uniform distribution over `vocab` plus the specials; no counts.
    pub fn uniform<S: AsRef<str>>(vocab: &[S], tag: LmTag) -> Self {
        let mut model = Self::empty(tag, 1, 0.5).expect("valid defaults");
        for w in vocab {
            model.intern(w.as_ref());
        }
        model
    }

    fn empty(tag: LmTag, order: usize, discount: f64) -> Result<Self, LmError> {
        if !(1..=4).contains(&order) {
            return Err(LmError::BadOrder(order));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(LmError::BadDiscount(discount));
        }
        let mut m = Self {
            tag,
            order,
            discount,
            vocab: Vec::new(),
            index: HashMap::new(),
            contexts: vec![HashMap::new(); order],
        };
        for s in [BOS, EOS, UNK] {
            m.intern(s);
        }
        Ok(m)
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.index.get(w) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.push(w.to_string());
        self.index.insert(w.to_string(), id);
        id
    }

    fn bump(&mut self, hist: Vec<u32>, w: u32, n: u64) {
        let ctx = self.contexts[hist.len()].entry(hist).or_default();
        ctx.total += n;
        *ctx.counts.entry(w).or_insert(0) += n;
    }

    /// `<s> w1 .. wk </s>` as ids, with OOV words mapped to `<unk>`.
    fn sentence_ids<S: AsRef<str>>(&self, sent: &[S]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(sent.len() + 2);
        ids.push(BOS_ID);
        ids.extend(sent.iter().map(|w| self.id(w.as_ref())));
        ids.push(EOS_ID);
        ids
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, w: &str) -> bool {
        self.index.contains_key(w)
    }

    /// Vocabulary id, or `<unk>` for out-of-vocabulary words.
    pub fn id(&self, w: &str) -> u32 {
        self.index.get(w).copied().unwrap_or(UNK_ID)
    }

    /// Number of tokens that can be predicted (everything but `<s>`).
    pub fn predictable_size(&self) -> usize {
        self.vocab.len() - 1
    }

    fn trim<'h>(&self, history: &'h [u32]) -> &'h [u32] {
        let keep = history.len().min(self.order - 1);
        &history[history.len() - keep..]
    }

    /// `P(w | history)` for vocabulary ids.
    pub fn prob_ids(&self, history: &[u32], w: u32) -> f64 {
        if w == BOS_ID {
            return 0.0;
        }
        let history = self.trim(history);
        let mut p = 1.0 / self.predictable_size() as f64;
        for k in 0..=history.len() {
            let hist = &history[history.len() - k..];
            if let Some(ctx) = self.contexts[k].get(hist) {
                let total = ctx.total as f64;
                let c = ctx.counts.get(&w).copied().unwrap_or(0) as f64;
                let backoff = self.discount * ctx.counts.len() as f64 / total;
                p = (c - self.discount).max(0.0) / total + backoff * p;
            }
        }
        p
    }

    /// `ln P(w | history)` with string tokens; OOV maps to `<unk>`.
    pub fn log_prob_word<S: AsRef<str>>(&self, history: &[S], w: &str) -> f64 {
        let hist: Vec<u32> = history.iter().map(|h| self.id(h.as_ref())).collect();
        self.prob_ids(&hist, self.id(w)).ln()
    }

    /// Probability of every vocabulary entry after `history`, indexed like
    /// [`NGramModel::vocab`]. The `<s>` entry is zero.
    pub fn next_word_dist_ids(&self, history: &[u32]) -> Vec<f64> {
        let history = self.trim(history);
        let v = self.vocab.len();
        let mut dist = vec![1.0 / self.predictable_size() as f64; v];
        dist[BOS_ID as usize] = 0.0;
        for k in 0..=history.len() {
            let hist = &history[history.len() - k..];
            if let Some(ctx) = self.contexts[k].get(hist) {
                let total = ctx.total as f64;
                let backoff = self.discount * ctx.counts.len() as f64 / total;
                for p in dist.iter_mut() {
                    *p *= backoff;
                }
                for (&w, &c) in &ctx.counts {
                    dist[w as usize] += (c as f64 - self.discount) / total;
                }
            }
        }
        dist
    }

    pub fn next_word_dist<S: AsRef<str>>(&self, history: &[S]) -> Vec<f64> {
        let hist: Vec<u32> = history.iter().map(|h| self.id(h.as_ref())).collect();
        self.next_word_dist_ids(&hist)
    }

    /// `Σ_t ln P(w_t | history)` including the `</s>` transition.
    pub fn logprob<S: AsRef<str>>(&self, sentence: &[S]) -> f64 {
        let ids = self.sentence_ids(sentence);
        (1..ids.len()).map(|i| self.prob_ids(&ids[..i], ids[i]).ln()).sum()
    }

    pub fn perplexity<S: AsRef<str>>(&self, corpus: &[Vec<S>]) -> Result<f64, LmError> {
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut total = 0.0;
        let mut tokens = 0usize;
        for sent in corpus {
            total += self.logprob(sent);
            tokens += sent.len() + 1;
        }
        Ok((-total / tokens as f64).exp())
    }

    // -----------------------------------------------------------------------
    // Model file
    // -----------------------------------------------------------------------

    /// `NGLM v1` text: header, one vocabulary token per line, then `NG` count lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "NGLM v1 {} {} {} {}", self.tag, self.order, self.discount, self.vocab.len()).unwrap();
        for w in &self.vocab {
            writeln!(s, "{w}").unwrap();
        }
        for (k, table) in self.contexts.iter().enumerate() {
            let mut rows: Vec<(Vec<u32>, u64)> = table
                .iter()
                .flat_map(|(h, ctx)| {
                    ctx.counts.iter().map(move |(&w, &c)| {
                        let mut g = h.clone();
                        g.push(w);
                        (g, c)
                    })
                })
                .collect();
            rows.sort();
            for (gram, c) in rows {
                write!(s, "NG {}", k + 1).unwrap();
                for id in gram {
                    write!(s, " {}", self.vocab[id as usize]).unwrap();
                }
                writeln!(s, " {c}").unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, LmError> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: String| LmError::Parse { line: line + 1, msg };
        let (_, header) = lines.next().ok_or_else(|| err(0, "missing header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 6 || h[0] != "NGLM" || h[1] != "v1" {
            return Err(err(0, format!("bad header `{header}`")));
        }
        let tag = LmTag::from_str(h[2]).map_err(|e| err(0, e))?;
        let order: usize = h[3].parse().map_err(|_| err(0, "bad order".into()))?;
        let discount: f64 = h[4].parse().map_err(|_| err(0, "bad discount".into()))?;
        let vocab_size: usize = h[5].parse().map_err(|_| err(0, "bad vocab size".into()))?;
        let mut model = Self::empty(tag, order, discount)?;
        model.vocab.clear();
        model.index.clear();
        for _ in 0..vocab_size {
            let (i, w) = lines.next().ok_or_else(|| err(0, "truncated vocabulary".into()))?;
            if w.split_whitespace().count() != 1 {
                return Err(err(i, format!("bad vocabulary entry `{w}`")));
            }
            model.intern(w);
        }
        if model.vocab.len() != vocab_size || model.vocab[..3] != [BOS, EOS, UNK] {
            return Err(err(0, "vocabulary must start with <s> </s> <unk> and be unique".into()));
        }
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f[0] != "NG" || f.len() < 4 {
                return Err(err(i, format!("bad count line `{line}`")));
            }
            let n: usize = f[1].parse().map_err(|_| err(i, "bad n".into()))?;
            if n == 0 || n > order || f.len() != n + 3 {
                return Err(err(i, format!("bad n-gram arity in `{line}`")));
            }
            let mut gram = Vec::with_capacity(n);
            for w in &f[2..2 + n] {
                gram.push(*model.index.get(*w).ok_or_else(|| err(i, format!("unknown token `{w}`")))?);
            }
            let c: u64 = f[n + 2].parse().map_err(|_| err(i, "bad count".into()))?;
            let w = gram.pop().unwrap();
            model.bump(gram, w, c);
        }
        Ok(model)
    }
}
