//! Fixtures shared by the benchmarks: seeded lattices, decoded samples and
//! score lists of a realistic size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ftmkit::decodesim::{self, grammar, ConfusionModel, DecodeConfig, Label, Utterance};
use ftmkit::lattice::{Lattice, LmTag, FEATURE_DIM};
use ftmkit::lm::NGramModel;
use ftmkit::pipeline::RunConfig;
use ftmkit::testkit::random_lattice;
use ftmkit::{LrnnParams, PreparedLattice};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random lattices with `nodes` nodes and about twice as many arcs.
pub fn lattices(n: usize, nodes: u32) -> Vec<Lattice> {
    let mut r = rng(7);
    (0..n).map(|_| random_lattice(&mut r, nodes, 2 * nodes as usize, u128::MAX)).collect()
}

pub fn prepared(lats: &[Lattice]) -> Vec<PreparedLattice> {
    lats.iter().map(|l| PreparedLattice::new(l).unwrap()).collect()
}

pub fn model(hidden: usize) -> LrnnParams {
    LrnnParams::init(&mut rng(3), hidden, FEATURE_DIM, hidden)
}

/// Both LMs and the confusion model of the default configuration, plus a
/// handful of utterances to decode.
pub struct DecodeFixture {
    pub base: NGramModel,
    pub chatter: NGramModel,
    pub confusion: ConfusionModel,
    pub config: DecodeConfig,
    pub utterances: Vec<Utterance>,
}

pub fn decode_fixture(n: usize) -> DecodeFixture {
    let cfg = RunConfig::default();
    let (corpora, utterances) = decodesim::gen_corpora(cfg.seed, &cfg.corpus_sizes());
    let base = NGramModel::train(&corpora.in_domain, cfg.lm_order, cfg.lm_discount, LmTag::Base).unwrap();
    let chatter = NGramModel::train(&corpora.chatter, cfg.lm_order, cfg.lm_discount, LmTag::Chatter).unwrap();
    let confusion = ConfusionModel::new(&grammar::pooled_vocab(), cfg.confusion_lambda, cfg.noise_sigma, 1);
    DecodeFixture { base, chatter, confusion, config: cfg.decode_config(), utterances: utterances.into_iter().take(n).collect() }
}

/// `n` labeled scores, roughly balanced, TT scores shifted up.
pub fn scores(n: usize) -> Vec<(Label, f64)> {
    let mut r = rng(11);
    (0..n)
        .map(|_| {
            let tt = r.random_bool(0.5);
            let y: f64 = r.random_range(0.0..1.0);
            if tt {
                (Label::TT, y.sqrt())
            } else {
                (Label::FT, y * y)
            }
        })
        .collect()
}
