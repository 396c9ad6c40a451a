//! End-to-end experiment stages over a run directory.
//!
//! ```text
//! <run>/config.txt                      resolved configuration
//! <run>/data/corpora/*.txt              LM training and held-out text
//! <run>/data/utterances.tsv             labeled source utterances
//! <run>/data/manifest.tsv, lattices/    paired lattices (see decodesim::manifest)
//! <run>/lm/{base,chatter}.nglm          language models
//! <run>/lm/perplexity_{base,chatter}.tsv
//! <run>/models/<variant>.ckpt           classifier checkpoints
//! <run>/models/<variant>.epochs.tsv     per-epoch training log
//! <run>/cache/<variant>/<split>.emb     frozen-model features
//! <run>/eval/scores/<variant>.tsv       dev and eval scores
//! <run>/eval/summary.csv, det_*.csv, det.svg, error_matrix.csv
//! <run>/report.md
//! ```
//!
//! Every file is written through a temp file and renamed into place. A stage
//! only writes its own outputs.

mod config;
mod report;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use config::{ConfigError, RunConfig, Variant};
pub use report::{report, SummaryRow};

use crate::decodesim::{self as manifest, ManifestError};
use crate::decodesim::{self, grammar, ConfusionModel, Corpora, DecodeError, Label, Split};
use crate::ensemble::{self, CachedFeatures, EnsembleError, EnsembleParams, PairInput, ParallelModel};
use crate::fsutil::write_atomic;
use crate::lattice::{LatticeError, LmTag, FEATURE_DIM};
use crate::lm::{DomainPrior, LmError, NGramModel};
use crate::lrnn::train::{self as trainer, epoch_log_tsv, EpochLog, Example, Model};
use crate::lrnn::{Head, LrnnError, LrnnParams, ParamsError, PreparedLattice};
use crate::metrics::{self, DetCurve, MetricsError, ScoredSample, AUC_FS_MAX};
use crate::util::{fmt_sig9, fnv1a, mix_seed};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Lrnn(#[from] LrnnError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{what} is missing; run `ftmkit {stage}` first")]
    Missing { what: String, stage: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(io_err(path))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

const CORPORA: [&str; 4] = ["in_domain", "chatter", "in_domain_heldout", "chatter_heldout"];

fn tag_name(tag: LmTag) -> &'static str {
    match tag {
        LmTag::Base => "base",
        LmTag::Chatter => "chatter",
    }
}

/// Perplexity of one model on both held-out sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub tag: LmTag,
    pub in_domain_ppl: f64,
    pub chatter_ppl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    /// `(split, tt, ft)` sample counts after augmentation.
    pub splits: Vec<(Split, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub variant: Variant,
    pub selected_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
}

/// A run directory and the configuration that drives it.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
}

/// Decoded samples with their prepared lattices, in manifest order.
pub struct Samples {
    pub data: decodesim::Dataset,
    pub inputs: Vec<PairInput>,
}

impl Samples {
    fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.data.pairs.len()).filter(|&i| self.data.pairs[i].split == split).collect()
    }

    fn pair_examples(&self, split: Split) -> Vec<Example<'_, PairInput>> {
        self.indices(split)
            .into_iter()
            .map(|i| Example { id: &self.data.pairs[i].utterance_id, input: &self.inputs[i], label: self.data.pairs[i].label })
            .collect()
    }

    fn single_examples(&self, split: Split, tag: LmTag) -> Vec<Example<'_, PreparedLattice>> {
        self.indices(split)
            .into_iter()
            .map(|i| {
                let x = &self.inputs[i];
                let input = match tag {
                    LmTag::Base => &x.base,
                    LmTag::Chatter => &x.chatter,
                };
                Example { id: &self.data.pairs[i].utterance_id, input, label: self.data.pairs[i].label }
            })
            .collect()
    }
}

impl Run {
    pub fn new(cfg: RunConfig, dir: impl Into<PathBuf>) -> Self {
        Self { cfg, dir: dir.into() }
    }

    /// Run directory taken from the config's `out` key.
    pub fn from_config(cfg: RunConfig) -> Self {
        let dir = cfg.out.clone();
        Self { cfg, dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn data_dir(&self) -> PathBuf {
        self.path("data")
    }

    fn lm_path(&self, tag: LmTag) -> PathBuf {
        self.path(&format!("lm/{}.nglm", tag_name(tag)))
    }

    pub fn checkpoint_path(&self, v: Variant) -> PathBuf {
        self.path(&format!("models/{v}.ckpt"))
    }

    fn stage_seed(&self, what: &str) -> u64 {
        mix_seed(&[self.cfg.seed, fnv1a(what.as_bytes())])
    }

    fn missing(what: impl Into<String>, stage: &str) -> PipelineError {
        PipelineError::Missing { what: what.into(), stage: stage.into() }
    }

    // -------------------------------------------------------------------
    // Data
    // -------------------------------------------------------------------

    /// Corpora, utterances, both LMs (when absent) and the decoded dataset.
    pub fn gen_data(&self) -> Result<DataSummary> {
        write_file(&self.path("config.txt"), self.cfg.to_text().as_bytes())?;
        let (corpora, utterances) = decodesim::gen_corpora(self.cfg.seed, &self.cfg.corpus_sizes());
        let sets = [&corpora.in_domain, &corpora.chatter, &corpora.in_domain_heldout, &corpora.chatter_heldout];
        for (name, set) in CORPORA.iter().zip(sets) {
            let text: String = set.iter().map(|s| format!("{}\n", s.join(" "))).collect();
            write_file(&self.path(&format!("data/corpora/{name}.txt")), text.as_bytes())?;
        }
        manifest::write_utterances(&self.data_dir().join("utterances.tsv"), &utterances)?;
        for tag in [LmTag::Base, LmTag::Chatter] {
            if !self.lm_path(tag).exists() {
                self.train_lm(Some(tag))?;
            }
        }
        self.decode()
    }

    fn read_corpora(&self) -> Result<Corpora> {
        let read = |name: &str| -> Result<Vec<Vec<String>>> {
            let path = self.path(&format!("data/corpora/{name}.txt"));
            if !path.exists() {
                return Err(Self::missing(format!("corpus {}", path.display()), "gen-data"));
            }
            Ok(read_file(&path)?.lines().map(|l| l.split_whitespace().map(String::from).collect()).collect())
        };
        Ok(Corpora {
            in_domain: read(CORPORA[0])?,
            chatter: read(CORPORA[1])?,
            in_domain_heldout: read(CORPORA[2])?,
            chatter_heldout: read(CORPORA[3])?,
        })
    }

    /// Trains one LM (or both) from the stored corpora and reports held-out perplexities.
    pub fn train_lm(&self, which: Option<LmTag>) -> Result<Vec<LmReport>> {
        let corpora = self.read_corpora()?;
        let tags = match which {
            Some(t) => vec![t],
            None => vec![LmTag::Base, LmTag::Chatter],
        };
        let mut out = Vec::new();
        for tag in tags {
            let corpus = match tag {
                LmTag::Base => &corpora.in_domain,
                LmTag::Chatter => &corpora.chatter,
            };
            let m = NGramModel::train(corpus, self.cfg.lm_order, self.cfg.lm_discount, tag)?;
            write_file(&self.lm_path(tag), m.to_text().as_bytes())?;
            let r = LmReport {
                tag,
                in_domain_ppl: m.perplexity(&corpora.in_domain_heldout)?,
                chatter_ppl: m.perplexity(&corpora.chatter_heldout)?,
            };
            let tsv = format!(
                "model\tin_domain_heldout\tchatter_heldout\n{}\t{}\t{}\n",
                tag,
                fmt_sig9(r.in_domain_ppl),
                fmt_sig9(r.chatter_ppl)
            );
            write_file(&self.path(&format!("lm/perplexity_{}.tsv", tag_name(tag))), tsv.as_bytes())?;
            out.push(r);
        }
        Ok(out)
    }

    pub fn load_lm(&self, tag: LmTag) -> Result<NGramModel> {
        let path = self.lm_path(tag);
        if !path.exists() {
            return Err(Self::missing(format!("language model {}", path.display()), "train-lm"));
        }
        Ok(NGramModel::from_text(&read_file(&path)?)?)
    }

    /// Decodes every utterance with both LMs and writes the manifest.
    pub fn decode(&self) -> Result<DataSummary> {
        let upath = self.data_dir().join("utterances.tsv");
        if !upath.exists() {
            return Err(Self::missing("data/utterances.tsv", "gen-data"));
        }
        let utterances = manifest::read_utterances(&upath)?;
        let base = self.load_lm(LmTag::Base)?;
        let chatter = self.load_lm(LmTag::Chatter)?;
        let cm = ConfusionModel::new(
            &grammar::pooled_vocab(),
            self.cfg.confusion_lambda,
            self.cfg.noise_sigma,
            self.stage_seed("confusion"),
        );
        let data = decodesim::build_dataset(&utterances, &cm, &base, &chatter, self.cfg.decode_config())?;
        manifest::write_dataset(&self.data_dir(), &data)?;
        let splits = Split::ALL
            .iter()
            .map(|&s| {
                let p = data.split(s);
                let tt = p.iter().filter(|x| x.label == Label::TT).count();
                (s, tt, p.len() - tt)
            })
            .collect();
        Ok(DataSummary { splits })
    }

    pub fn load_samples(&self) -> Result<Samples> {
        if !self.data_dir().join("manifest.tsv").exists() {
            return Err(Self::missing("data/manifest.tsv", "gen-data"));
        }
        let data = manifest::read_dataset(&self.data_dir())?;
        let inputs = data.pairs.par_iter().map(PairInput::new).collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Samples { data, inputs })
    }

    // -------------------------------------------------------------------
    // Classifiers
    // -------------------------------------------------------------------

    pub fn load_single(&self, v: Variant) -> Result<LrnnParams> {
        let path = self.checkpoint_path(v);
        if !path.exists() {
            return Err(Self::missing(format!("checkpoint {}", path.display()), &format!("train-ftm --variant {v}")));
        }
        Ok(LrnnParams::from_text(&read_file(&path)?)?)
    }

    pub fn load_ensemble(&self, v: Variant) -> Result<EnsembleParams> {
        let path = self.checkpoint_path(v);
        if !path.exists() {
            return Err(Self::missing(format!("checkpoint {}", path.display()), &format!("train-ftm --variant {v}")));
        }
        Ok(EnsembleParams::from_text(&read_file(&path)?)?)
    }

    fn save_log(&self, v: Variant, epoch: usize, log: &[EpochLog]) -> Result<()> {
        write_file(&self.path(&format!("models/{v}.epochs.tsv")), epoch_log_tsv(log, epoch).as_bytes())
    }

    fn fit<M: Model>(
        &self,
        v: Variant,
        init: M,
        tr: &[Example<M::Input>],
        cv: &[Example<M::Input>],
    ) -> Result<(M, usize, Vec<EpochLog>)> {
        let (m, epoch, log) = trainer::train(init, tr, cv, &self.cfg.train_config(self.stage_seed(&format!("train-{v}"))))?;
        self.save_log(v, epoch, &log)?;
        Ok((m, epoch, log))
    }

    fn prior(&self, s: &Samples) -> Result<DomainPrior> {
        Ok(DomainPrior::new(self.cfg.prior.unwrap_or_else(|| s.data.tt_fraction(Split::Train)))?)
    }

    /// Trains one classifier variant and writes its checkpoint.
    pub fn train_ftm(&self, v: Variant) -> Result<TrainSummary> {
        let s = self.load_samples()?;
        self.train_ftm_with(v, &s)
    }

    pub fn train_ftm_with(&self, v: Variant, s: &Samples) -> Result<TrainSummary> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(self.stage_seed(&format!("init-{v}")));
        let bound = 1.0 / (cfg.hidden as f64).sqrt();
        let (text, epoch, log) = match v {
            Variant::BaseSingle | Variant::ChatterSingle => {
                let tag = if v == Variant::BaseSingle { LmTag::Base } else { LmTag::Chatter };
                let init = LrnnParams::init(&mut rng, cfg.hidden, FEATURE_DIM, cfg.classifier_hidden);
                let (m, e, log) =
                    self.fit(v, init, &s.single_examples(Split::Train, tag), &s.single_examples(Split::Cv, tag))?;
                (m.to_text(), Some(e), log)
            }
            Variant::Ratio => (EnsembleParams::Ratio { prior: self.prior(s)? }.to_text(), None, Vec::new()),
            Variant::ScoreMerge | Variant::EmbedMerge => {
                let base = self.load_single(Variant::BaseSingle)?;
                let chatter = self.load_single(Variant::ChatterSingle)?;
                let feats = self.frozen_features(v, s, &base, &chatter)?;
                let width = feats[0].1.features.len();
                let examples = |split: Split| -> Vec<Example<[f64]>> {
                    feats
                        .iter()
                        .filter(|(sp, _)| *sp == split)
                        .map(|(_, r)| Example { id: &r.id, input: r.features.as_slice(), label: r.label })
                        .collect()
                };
                let init = Head::init(&mut rng, width, cfg.classifier_hidden, bound);
                let (head, e, log) = self.fit(v, init, &examples(Split::Train), &examples(Split::Cv))?;
                let p = if v == Variant::ScoreMerge {
                    EnsembleParams::ScoreMerge { base, chatter, head }
                } else {
                    EnsembleParams::EmbedMerge { base, chatter, head }
                };
                (p.to_text(), Some(e), log)
            }
            Variant::ParallelFullRandom | Variant::ParallelFullPretrained | Variant::Moe => {
                let moe = v == Variant::Moe;
                let init = if v == Variant::ParallelFullRandom {
                    ParallelModel::random(&mut rng, cfg.hidden, FEATURE_DIM, cfg.classifier_hidden, false)
                } else {
                    let base = self.load_single(Variant::BaseSingle)?;
                    let chatter = self.load_single(Variant::ChatterSingle)?;
                    let width = if moe { 2 * cfg.hidden } else { 4 * cfg.hidden };
                    let head = Head::init(&mut rng, width, cfg.classifier_hidden, bound);
                    ParallelModel::pretrained(&base, &chatter, head, moe, cfg.finetune_lr_scale)?
                };
                let (m, e, log) = self.fit(v, init, &s.pair_examples(Split::Train), &s.pair_examples(Split::Cv))?;
                (EnsembleParams::Parallel(m).to_text(), Some(e), log)
            }
        };
        write_file(&self.checkpoint_path(v), text.as_bytes())?;
        Ok(TrainSummary { variant: v, selected_epoch: epoch, log })
    }

    /// Features of the frozen single models for every split, cached on disk.
    fn frozen_features(
        &self,
        v: Variant,
        s: &Samples,
        base: &LrnnParams,
        chatter: &LrnnParams,
    ) -> Result<Vec<(Split, CachedFeatures)>> {
        let mut all = Vec::new();
        for split in Split::ALL {
            let idx = s.indices(split);
            let recs = idx
                .par_iter()
                .map(|&i| {
                    let x = &s.inputs[i];
                    let features = match v {
                        Variant::ScoreMerge => ensemble::score_merge_features(base, chatter, x)?,
                        _ => ensemble::embed_merge_features(&base.encoder, &chatter.encoder, x),
                    };
                    let p = &s.data.pairs[i];
                    Ok(CachedFeatures { id: p.utterance_id.clone(), label: p.label, features })
                })
                .collect::<std::result::Result<Vec<_>, LrnnError>>()?;
            let mut buf = Vec::new();
            ensemble::write_feature_cache(&mut buf, &recs).expect("writing to memory");
            write_file(&self.path(&format!("cache/{v}/{split}.emb")), &buf)?;
            all.extend(recs.into_iter().map(|r| (split, r)));
        }
        Ok(all)
    }

    /// Detection scores of one trained variant on the given splits, in manifest order.
    pub fn score_variant(&self, v: Variant, s: &Samples, splits: &[Split]) -> Result<Vec<(Split, ScoredSample)>> {
        enum Scorer {
            Single(LrnnParams, LmTag),
            Pair(EnsembleParams),
        }
        let scorer = match v {
            Variant::BaseSingle => Scorer::Single(self.load_single(v)?, LmTag::Base),
            Variant::ChatterSingle => Scorer::Single(self.load_single(v)?, LmTag::Chatter),
            _ => Scorer::Pair(self.load_ensemble(v)?),
        };
        let idx: Vec<usize> = (0..s.data.pairs.len()).filter(|&i| splits.contains(&s.data.pairs[i].split)).collect();
        idx.par_iter()
            .map(|&i| {
                let p = &s.data.pairs[i];
                let x = &s.inputs[i];
                let score = match &scorer {
                    Scorer::Single(m, LmTag::Base) => m.predict(&x.base)?,
                    Scorer::Single(m, LmTag::Chatter) => m.predict(&x.chatter)?,
                    Scorer::Pair(e) => e.score(p, x)?,
                };
                Ok((p.split, ScoredSample { id: p.utterance_id.clone(), label: p.label, score }))
            })
            .collect()
    }

    // -------------------------------------------------------------------
    // Evaluation
    // -------------------------------------------------------------------

    /// Scores every trained variant on dev and eval; writes the summary table,
    /// DET curves and, when both single models exist, the error matrix.
    pub fn eval(&self) -> Result<Vec<SummaryRow>> {
        let trained: Vec<Variant> = Variant::ALL.into_iter().filter(|&v| self.checkpoint_path(v).exists()).collect();
        if trained.is_empty() {
            return Err(Self::missing("any trained checkpoint", "train-ftm"));
        }
        let s = self.load_samples()?;
        let mut rows = Vec::new();
        let mut curves: Vec<(Variant, DetCurve)> = Vec::new();
        let mut kept: Vec<(Variant, f64, Vec<ScoredSample>)> = Vec::new();
        for v in trained {
            let scored = self.score_variant(v, &s, &[Split::Dev, Split::Eval])?;
            let mut tsv = String::from("id\tlabel\tsplit\tscore\n");
            for (sp, x) in &scored {
                writeln!(tsv, "{}\t{}\t{}\t{:?}", x.id, x.label, sp, x.score).unwrap();
            }
            write_file(&self.path(&format!("eval/scores/{v}.tsv")), tsv.as_bytes())?;
            let pick = |split| scored.iter().filter(|(sp, _)| *sp == split).map(|(_, x)| (x.label, x.score)).collect::<Vec<_>>();
            let (dev, ev) = (pick(Split::Dev), pick(Split::Eval));
            let (t, ft) = metrics::ft_at_fs(&dev, &ev, self.cfg.target_fs)?;
            let curve = metrics::det_curve(&ev)?;
            let auc = curve.auc_region(AUC_FS_MAX);
            write_file(&self.path(&format!("eval/det_{v}.csv")), curve.to_csv().as_bytes())?;
            rows.push(SummaryRow { classifier: v.to_string(), ft_at_fs: ft, auc });
            curves.push((v, curve));
            if matches!(v, Variant::BaseSingle | Variant::ChatterSingle) {
                kept.push((v, t, scored.into_iter().filter(|(sp, _)| *sp == Split::Eval).map(|(_, x)| x).collect()));
            }
        }
        let mut csv = String::from("classifier,ft_at_fs_0.4pct,auc\n");
        for r in &rows {
            writeln!(csv, "{},{},{}", r.classifier, fmt_sig9(r.ft_at_fs), fmt_sig9(r.auc)).unwrap();
        }
        write_file(&self.path("eval/summary.csv"), csv.as_bytes())?;
        let named: Vec<(&str, &DetCurve)> = curves.iter().map(|(v, c)| (v.as_str(), c)).collect();
        write_file(&self.path("eval/det.svg"), metrics::det_svg(&named, AUC_FS_MAX).as_bytes())?;
        if let [(_, ta, a), (_, tb, b)] = kept.as_slice() {
            let m = metrics::error_matrix(a, b, *ta, *tb)?;
            write_file(&self.path("eval/error_matrix.csv"), m.to_csv("base", "chatter").as_bytes())?;
        }
        Ok(rows)
    }

    /// Configured variants preceded by their prerequisites, each once.
    pub fn training_order(&self) -> Vec<Variant> {
        let mut todo: Vec<Variant> = Vec::new();
        for &v in &self.cfg.variants {
            for &p in v.prerequisites().iter().chain([&v]) {
                if !todo.contains(&p) {
                    todo.push(p);
                }
            }
        }
        todo
    }

    pub fn write_report(&self) -> Result<PathBuf> {
        let path = self.path("report.md");
        write_file(&path, report(&self.dir)?.as_bytes())?;
        Ok(path)
    }

    /// Every stage, in order, for the configured variants.
    pub fn run_all(&self) -> Result<Vec<SummaryRow>> {
        self.gen_data()?;
        let s = self.load_samples()?;
        for v in self.training_order() {
            self.train_ftm_with(v, &s)?;
        }
        let rows = self.eval()?;
        self.write_report()?;
        Ok(rows)
    }
}

#[cfg(test)]
mod tests;
