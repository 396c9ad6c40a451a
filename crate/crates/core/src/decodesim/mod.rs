//! Synthetic labeled utterances, an acoustic confusion surrogate, and a beam
//! decoder that turns each utterance into a pair of lattices: one decoded with
//! the in-domain LM and one with the chatter LM.

pub mod grammar;
mod manifest;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{Arc, Lattice, LatticeError, LmTag, NodeId};
use crate::lm::{NGramModel, BOS_ID, EOS};
use crate::util::{fnv1a, mix_seed, quantize9};

pub use manifest::{read_dataset, read_utterances, write_dataset, write_utterances, ManifestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// Intended invocation.
    TT,
    /// Unintended invocation.
    FT,
}

impl Label {
    /// 1 for TT, 0 for FT.
    pub fn target(self) -> f64 {
        match self {
            Label::TT => 1.0,
            Label::FT => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::TT => "TT",
            Label::FT => "FT",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TT" => Ok(Label::TT),
            "FT" => Ok(Label::FT),
            _ => Err(format!("unknown label `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Cv,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Cv, Split::Dev, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Cv => "cv",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }

    pub fn augmented(self) -> bool {
        matches!(self, Split::Train | Split::Cv)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| format!("unknown split `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
    pub label: Label,
    pub split: Split,
    pub augment_index: u8,
}

impl Utterance {
    /// Duration multiplier standing in for speed perturbation.
    pub fn speed(&self) -> f64 {
        match self.augment_index {
            1 => 0.9,
            2 => 1.1,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("utterance `{0}` has no words")]
    EmptyUtterance(String),
    #[error("word `{0}` is not in the confusion vocabulary")]
    UnknownWord(String),
    #[error("augmentation is only defined for train/cv, got {0}")]
    InvalidSplit(Split),
    #[error("augment index {0} out of range 0..=2")]
    InvalidAugmentIndex(u8),
    #[error("beam width must be at least 1")]
    EmptyBeam,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Per-split class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub tt: [usize; 4],
    pub ft: [usize; 4],
}

/// Source (pre-augmentation) class counts of the reference far-field dataset,
/// in `Split::ALL` order.
pub const REFERENCE_TT: [usize; 4] = [14_225, 1_582, 5_829, 11_646];
pub const REFERENCE_FT: [usize; 4] = [6_223, 691, 5_657, 11_316];

impl SplitSizes {
    pub fn scaled(scale: f64) -> Self {
        let s = |n: usize| ((n as f64 * scale).round() as usize).max(1);
        Self { tt: REFERENCE_TT.map(s), ft: REFERENCE_FT.map(s) }
    }

    pub fn of(&self, split: Split) -> (usize, usize) {
        let i = Split::ALL.iter().position(|&s| s == split).unwrap();
        (self.tt[i], self.ft[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSizes {
    pub lm_sentences: usize,
    pub heldout_sentences: usize,
    pub splits: SplitSizes,
    /// Fraction of false triggers that carry one near-trigger token.
    pub near_miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    pub in_domain: Vec<Vec<String>>,
    pub chatter: Vec<Vec<String>>,
    pub in_domain_heldout: Vec<Vec<String>>,
    pub chatter_heldout: Vec<Vec<String>>,
}

fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(&[seed, fnv1a(name.as_bytes())]))
}

/// Generates both LM corpora (plus held-out halves) and the un-augmented
/// labeled utterance set, in manifest order.
pub fn gen_corpora(seed: u64, sizes: &CorpusSizes) -> (Corpora, Vec<Utterance>) {
    let gen = |name: &str, n: usize, f: fn(&mut ChaCha8Rng) -> Vec<String>| {
        let mut rng = stream(seed, name);
        (0..n).map(|_| f(&mut rng)).collect::<Vec<_>>()
    };
    let corpora = Corpora {
        in_domain: gen("lm-in-domain", sizes.lm_sentences, grammar::in_domain_sentence),
        chatter: gen("lm-chatter", sizes.lm_sentences, grammar::chatter_sentence),
        in_domain_heldout: gen("heldout-in-domain", sizes.heldout_sentences, grammar::in_domain_sentence),
        chatter_heldout: gen("heldout-chatter", sizes.heldout_sentences, grammar::chatter_sentence),
    };

    let mut utterances = Vec::new();
    for split in Split::ALL {
        let mut rng = stream(seed, &format!("utterances-{split}"));
        let (n_tt, n_ft) = sizes.splits.of(split);
        let mut labels: Vec<Label> = std::iter::repeat_n(Label::TT, n_tt).chain(std::iter::repeat_n(Label::FT, n_ft)).collect();
        labels.shuffle(&mut rng);
        for (i, label) in labels.into_iter().enumerate() {
            let words = match label {
                Label::TT => grammar::in_domain_sentence(&mut rng),
                Label::FT => {
                    let w = grammar::chatter_sentence(&mut rng);
                    if rng.random_bool(sizes.near_miss_rate) {
                        let mut p = grammar::near_miss_prefix(&mut rng);
                        p.extend(w);
                        p
                    } else {
                        w
                    }
                }
            };
            utterances.push(Utterance { id: format!("{split}-{i:05}"), words, label, split, augment_index: 0 });
        }
    }
    (corpora, utterances)
}

/// Variant `k` of a train/cv utterance. `k = 0` is the source itself; the
/// others get their own id (and hence jitter stream) and a duration scale.
pub fn augment(u: &Utterance, k: u8) -> Result<Utterance, DecodeError> {
    if !u.split.augmented() {
        return Err(DecodeError::InvalidSplit(u.split));
    }
    if k > 2 {
        return Err(DecodeError::InvalidAugmentIndex(k));
    }
    if k == 0 {
        return Ok(u.clone());
    }
    Ok(Utterance { id: format!("{}.a{k}", u.id), augment_index: k, ..u.clone() })
}

/// Acoustic surrogate: each word is confusable with every vocabulary word
/// within edit distance 2, at base log-score `-lambda * distance`.
#[derive(Debug, Clone)]
pub struct ConfusionModel {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// Per word: `(word id, base log-score)`, best first; the word itself leads with 0.
    sets: Vec<Vec<(u32, f64)>>,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

impl ConfusionModel {
    pub fn new(vocab: &[String], lambda: f64, noise_sigma: f64, seed: u64) -> Self {
        let mut vocab = vocab.to_vec();
        vocab.sort();
        vocab.dedup();
        let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let sets = vocab
            .iter()
            .map(|w| {
                let mut set: Vec<(usize, u32)> = vocab
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (edit_distance(w, v), j as u32))
                    .filter(|&(d, _)| d <= 2)
                    .collect();
                set.sort();
                set.into_iter().map(|(d, j)| (j, -lambda * d as f64)).collect()
            })
            .collect();
        Self { vocab, index, sets, noise_sigma, seed }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn word(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    /// The confusion set of `word` as `(word, base log-score)`.
    pub fn confusions(&self, word: &str) -> Option<Vec<(&str, f64)>> {
        let id = *self.index.get(word)?;
        Some(self.sets[id as usize].iter().map(|&(j, s)| (self.word(j), s)).collect())
    }

    /// Candidates for reference word at `position` of utterance `utt_id`:
    /// base score plus Gaussian jitter, top `max_arcs` kept (the reference word
    /// always), renormalized so the best candidate scores 0.
    fn candidates(&self, utt_id: &str, position: usize, word: u32, max_arcs: usize) -> Vec<(u32, f64)> {
        let utt_seed = mix_seed(&[self.seed, fnv1a(utt_id.as_bytes())]);
        let mut scored: Vec<(u32, f64)> = self.sets[word as usize]
            .iter()
            .map(|&(c, base)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[utt_seed, position as u64, u64::from(c)]));
                let z: f64 = rng.sample(StandardNormal);
                (c, base + self.noise_sigma * z)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut keep: Vec<(u32, f64)> = scored.iter().copied().take(max_arcs.max(1)).collect();
        if !keep.iter().any(|&(c, _)| c == word) {
            keep.pop();
            keep.push(*scored.iter().find(|&&(c, _)| c == word).expect("word is in its own set"));
        }
        let best = keep.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max);
        keep.into_iter().map(|(c, s)| (c, quantize9(s - best))).collect()
    }
}

/// Frames spanned by a word at normal speed.
fn frames(word: &str) -> f64 {
    8.0 + 6.0 * word.chars().count() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_arcs_per_step: usize,
}

struct Hyp {
    /// Last `order - 1` words (confusion-vocab ids; `u32::MAX` is `<s>`).
    key: Vec<u32>,
    score: f64,
    is_ref: bool,
}

struct Link {
    from: usize,
    to: usize,
    word: u32,
    am: f64,
    lm: f64,
}

const BOS_KEY: u32 = u32::MAX;

/// Time-synchronous beam search over word positions.
///
/// States are `(position, last order-1 words)`; each step expands every
/// surviving state with the confusion candidates of the reference word and
/// keeps the reference state plus the `beam - 1` best others by Viterbi score.
/// Surviving states become lattice nodes, joined to a final node by `</s>` arcs.
pub fn decode(
    u: &Utterance,
    cm: &ConfusionModel,
    m: &NGramModel,
    cfg: DecodeConfig,
    tag: LmTag,
) -> Result<Lattice, DecodeError> {
    if cfg.beam == 0 {
        return Err(DecodeError::EmptyBeam);
    }
    if u.words.is_empty() {
        return Err(DecodeError::EmptyUtterance(u.id.clone()));
    }
    let refs: Vec<u32> = u
        .words
        .iter()
        .map(|w| cm.index.get(w).copied().ok_or_else(|| DecodeError::UnknownWord(w.clone())))
        .collect::<Result<_, _>>()?;
    let lm_id: Vec<u32> = cm.vocab.iter().map(|w| m.id(w)).collect();
    let to_lm = |k: u32| if k == BOS_KEY { BOS_ID } else { lm_id[k as usize] };
    let hist_len = m.order() - 1;
    let trim = |mut key: Vec<u32>| {
        if key.len() > hist_len {
            key.drain(..key.len() - hist_len);
        }
        key
    };

    let mut layers: Vec<Vec<Hyp>> = vec![vec![Hyp { key: trim(vec![BOS_KEY]), score: 0.0, is_ref: true }]];
    let mut links: Vec<Vec<Link>> = Vec::with_capacity(refs.len());
    for (pos, &ref_word) in refs.iter().enumerate() {
        let cands = cm.candidates(&u.id, pos, ref_word, cfg.max_arcs_per_step);
        let mut next: Vec<Hyp> = Vec::new();
        let mut slot: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut step_links = Vec::new();
        for (from, hyp) in layers[pos].iter().enumerate() {
            let hist: Vec<u32> = hyp.key.iter().map(|&k| to_lm(k)).collect();
            for &(c, am) in &cands {
                let lm = quantize9(m.prob_ids(&hist, lm_id[c as usize]).ln());
                let mut key = hyp.key.clone();
                key.push(c);
                let key = trim(key);
                let score = hyp.score + am + lm;
                let is_ref = hyp.is_ref && c == ref_word;
                let to = *slot.entry(key.clone()).or_insert_with(|| {
                    next.push(Hyp { key, score: f64::NEG_INFINITY, is_ref: false });
                    next.len() - 1
                });
                next[to].score = next[to].score.max(score);
                next[to].is_ref |= is_ref;
                step_links.push(Link { from, to, word: c, am, lm });
            }
        }

        let mut ranked: Vec<usize> = (0..next.len()).collect();
        ranked.sort_by(|&a, &b| next[b].score.total_cmp(&next[a].score).then_with(|| next[a].key.cmp(&next[b].key)));
        let ref_slot = ranked.iter().position(|&i| next[i].is_ref).expect("reference state is always generated");
        let mut kept = vec![ranked[ref_slot]];
        kept.extend(ranked.iter().copied().filter(|&i| !next[i].is_ref).take(cfg.beam - 1));
        kept.sort_by_key(|&i| ranked.iter().position(|&r| r == i).unwrap());

        let mut remap = vec![usize::MAX; next.len()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let mut taken: Vec<Option<Hyp>> = next.into_iter().map(Some).collect();
        layers.push(kept.iter().map(|&i| taken[i].take().unwrap()).collect());
        links.push(
            step_links
                .into_iter()
                .filter(|l| remap[l.to] != usize::MAX)
                .map(|l| Link { to: remap[l.to], ..l })
                .collect(),
        );
    }

    // Drop states whose successors were all pruned.
    let depth = refs.len();
    let mut alive: Vec<Vec<bool>> = layers.iter().map(|l| vec![false; l.len()]).collect();
    alive[depth].fill(true);
    for pos in (0..depth).rev() {
        for l in &links[pos] {
            if alive[pos + 1][l.to] {
                alive[pos][l.from] = true;
            }
        }
    }

    let mut node_of: Vec<Vec<NodeId>> = Vec::with_capacity(layers.len());
    let mut next_id: NodeId = 0;
    for layer_alive in &alive {
        node_of.push(
            layer_alive
                .iter()
                .map(|&a| {
                    if a {
                        next_id += 1;
                        next_id - 1
                    } else {
                        NodeId::MAX
                    }
                })
                .collect(),
        );
    }
    let end = next_id;
    let mut arcs = Vec::new();
    for (pos, step) in links.iter().enumerate() {
        let dur = ((frames(&u.words[pos]) * u.speed()).round() as u32).max(1);
        for l in step {
            if alive[pos][l.from] && alive[pos + 1][l.to] {
                arcs.push(Arc::new(node_of[pos][l.from], node_of[pos + 1][l.to], cm.word(l.word), l.am, l.lm, dur));
            }
        }
    }
    for (i, hyp) in layers[depth].iter().enumerate() {
        let hist: Vec<u32> = hyp.key.iter().map(|&k| to_lm(k)).collect();
        let lm = quantize9(m.prob_ids(&hist, m.id(EOS)).ln());
        arcs.push(Arc::new(node_of[depth][i], end, EOS, 0.0, lm, 1));
    }
    Ok(Lattice::new(u.id.clone(), tag, end + 1, 0, end, arcs)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub utterance_id: String,
    pub label: Label,
    pub split: Split,
    pub base: Lattice,
    pub chatter: Lattice,
}

impl SamplePair {
    pub fn lattice(&self, tag: LmTag) -> &Lattice {
        match tag {
            LmTag::Base => &self.base,
            LmTag::Chatter => &self.chatter,
        }
    }
}

/// Paired lattices in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<SamplePair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&SamplePair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    pub fn tt_fraction(&self, split: Split) -> f64 {
        let s = self.split(split);
        s.iter().filter(|p| p.label == Label::TT).count() as f64 / s.len().max(1) as f64
    }
}

/// Expands train/cv into their three variants, in source order.
pub fn expand_augmented(utterances: &[Utterance]) -> Vec<Utterance> {
    let mut out = Vec::with_capacity(utterances.len() * 3);
    for u in utterances {
        if u.split.augmented() {
            out.extend((0..3).map(|k| augment(u, k).expect("train/cv")));
        } else {
            out.push(u.clone());
        }
    }
    out
}

/// Decodes every (augmented) utterance with both LMs. Parallel over
/// utterances; output order and content do not depend on the thread count.
pub fn build_dataset(
    utterances: &[Utterance],
    cm: &ConfusionModel,
    base: &NGramModel,
    chatter: &NGramModel,
    cfg: DecodeConfig,
) -> Result<Dataset, DecodeError> {
    let all = expand_augmented(utterances);
    let pairs = all
        .par_iter()
        .map(|u| {
            Ok(SamplePair {
                utterance_id: u.id.clone(),
                label: u.label,
                split: u.split,
                base: decode(u, cm, base, cfg, LmTag::Base)?,
                chatter: decode(u, cm, chatter, cfg, LmTag::Chatter)?,
            })
        })
        .collect::<Result<Vec<_>, DecodeError>>()?;
    Ok(Dataset { pairs })
}
