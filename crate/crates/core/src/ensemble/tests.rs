use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::decodesim::Split;
use crate::lattice::{log_evidence_by_enumeration, LmTag, FEATURE_DIM};
use crate::lrnn::train::{Example, TrainConfig};
use crate::testkit::{grad_check, random_lattice, random_pair};

fn jitter<P: Parameters, R: Rng>(p: &mut P, rng: &mut R) {
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    }
}

fn pair_of(base: Lattice, chatter: Lattice) -> SamplePair {
    SamplePair { utterance_id: "u".into(), label: Label::TT, split: Split::Dev, base, chatter }
}

fn single(seed: u64, h: usize) -> LrnnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LrnnParams::init(&mut rng, h, FEATURE_DIM, 3);
    jitter(&mut p, &mut rng);
    p
}

#[test]
fn identical_lattices_with_even_prior_score_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l = random_lattice(&mut rng, 8, 6, 1000);
    assert_eq!(ratio_score(&l, &l, DomainPrior::new(0.5).unwrap()).unwrap(), 0.0);
}

#[test]
fn ratio_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..25 {
        let (b, c) = random_pair(&mut rng, 9, 8, 2000);
        let prior = DomainPrior::new(rng.random_range(0.05..0.95)).unwrap();
        let brute = log_evidence_by_enumeration(&b, 10_000).unwrap() + prior.p_in.ln()
            - log_evidence_by_enumeration(&c, 10_000).unwrap()
            - prior.p_out.ln();
        assert!((ratio_score(&b, &c, prior).unwrap() - brute).abs() < 1e-9);
        let swapped = ratio_score(&c, &b, prior.swapped()).unwrap();
        assert_eq!(swapped, -ratio_score(&b, &c, prior).unwrap());
    }
}

#[test]
fn ratio_grows_with_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, c) = random_pair(&mut rng, 6, 4, 100);
    let s: Vec<f64> = [0.1, 0.5, 0.9, 0.999].iter().map(|&p| ratio_score(&b, &c, DomainPrior::new(p).unwrap()).unwrap()).collect();
    assert!(s.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn ratio_of_two_single_arc_lattices() {
    let mk = |am, lm| Lattice::new("u".to_string(), LmTag::Base, 2, 0, 1, vec![crate::lattice::Arc::new(0, 1, "a", am, lm, 5)]).unwrap();
    let prior = DomainPrior::new(0.25).unwrap();
    let s = ratio_score(&mk(-1.0, -2.0), &mk(-0.5, -4.0), prior).unwrap();
    assert!((s - (-3.0 + 4.5 + (1.0f64 / 3.0).ln())).abs() < 1e-12);
}

#[test]
fn squash_is_increasing_and_bounded() {
    let xs = [-1e12, -50.0, -1.0, 0.0, 1e-9, 3.0, 80.0, 1e12];
    let ys: Vec<f64> = xs.iter().map(|&x| squash(x)).collect();
    assert!(ys.windows(2).all(|w| w[0] < w[1]));
    assert!(ys.iter().all(|&y| y > 0.0 && y < 1.0));
    assert_eq!(squash(0.0), 0.5);
}

fn pair_input(rng: &mut ChaCha8Rng) -> (SamplePair, PairInput) {
    let (b, c) = random_pair(rng, 7, 5, 300);
    let p = pair_of(b, c);
    let x = PairInput::new(&p).unwrap();
    (p, x)
}

#[test]
fn score_merge_head_can_copy_the_base_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (base, chatter) = (single(5, 3), single(6, 3));
    let k = 8.0;
    let head = Head { input_width: 2, hidden: 1, w1: vec![1.0, 0.0], b1: vec![0.0], w2: vec![k], b2: vec![-0.5 * k] };
    for _ in 0..20 {
        let (_, x) = pair_input(&mut rng);
        let y1 = base.predict(&x.base).unwrap();
        let y = score_merge_forward(&base, &chatter, &head, &x).unwrap();
        assert_eq!(y >= 0.5, y1 >= 0.5);
    }
}

#[test]
fn score_merge_sees_the_two_model_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (_, x) = pair_input(&mut rng);
    let mut half = single(8, 3);
    half.head = Head::zeros(6, 3);
    assert_eq!(score_merge_features(&half, &half, &x).unwrap(), vec![0.5, 0.5]);
}

#[test]
fn zero_embed_merge_head_gives_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (_, x) = pair_input(&mut rng);
    let (b, c) = (single(10, 4), single(11, 4));
    assert_eq!(embed_merge_forward(&b, &c, &Head::zeros(16, 5), &x).unwrap(), 0.5);
}

#[test]
fn antisymmetric_head_cancels_identical_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let l = random_lattice(&mut rng, 7, 5, 300);
    let p = pair_of(l.clone(), l);
    let x = PairInput::new(&p).unwrap();
    let m = single(13, 3);
    let (h, c) = (3, 4);
    let mut head = Head::zeros(4 * h, c);
    for i in 0..c {
        for j in 0..2 * h {
            let w = rng.random_range(-1.0..1.0);
            head.w1[i * 4 * h + j] = w;
            head.w1[i * 4 * h + 2 * h + j] = -w;
        }
        head.w2[i] = rng.random_range(-1.0..1.0);
    }
    head.b2[0] = 0.7;
    assert_eq!(embed_merge_forward(&m, &m, &head, &x).unwrap(), sigmoid(0.7));
}

#[test]
fn width_mismatch_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (_, x) = pair_input(&mut rng);
    let m = single(15, 3);
    assert!(matches!(
        embed_merge_forward(&m, &m, &Head::zeros(5, 2), &x),
        Err(LrnnError::WidthMismatch { expected: 5, got: 12 })
    ));
}

#[test]
fn head_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for k in 0..10 {
        let mut head = Head::zeros(12, 5);
        jitter(&mut head, &mut rng);
        let feats: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = grad_check(&head, feats.as_slice(), (k % 2) as f64, 1e-5);
        assert!(err < 1e-4, "rel err {err}");
    }
}

fn random_parallel(seed: u64, h: usize, moe: bool) -> ParallelModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ParallelModel::random(&mut rng, h, FEATURE_DIM, 4, moe);
    jitter(&mut m, &mut rng);
    m
}

#[test]
fn parallel_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in 0..4 {
        let (_, x) = pair_input(&mut rng);
        let err = grad_check(&random_parallel(30 + k, 3, false), &x, (k % 2) as f64, 1e-5);
        assert!(err < 1e-4, "rel err {err}");
    }
}

#[test]
fn moe_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for k in 0..4 {
        let (_, x) = pair_input(&mut rng);
        let err = grad_check(&random_parallel(40 + k, 3, true), &x, (k % 2) as f64, 1e-5);
        assert!(err < 1e-4, "rel err {err}");
    }
}

#[test]
fn pretrained_parallel_with_zero_lr_equals_embed_merge() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (b, c) = (single(20, 3), single(21, 3));
    let mut head = Head::zeros(12, 4);
    jitter(&mut head, &mut rng);
    let init = ParallelModel::pretrained(&b, &c, head.clone(), false, 0.1).unwrap();
    let pairs: Vec<(SamplePair, PairInput)> = (0..12).map(|_| pair_input(&mut rng)).collect();
    let ex: Vec<Example<PairInput>> = pairs
        .iter()
        .enumerate()
        .map(|(i, (_, x))| Example { id: "p", input: x, label: if i % 3 == 0 { Label::FT } else { Label::TT } })
        .collect();
    let cfg = TrainConfig { epochs: 2, learning_rate: 0.0, ..TrainConfig::default() };
    let (trained, _, _) = crate::lrnn::train::train(init, &ex, &ex, &cfg).unwrap();
    for (_, x) in &pairs {
        assert_eq!(trained.predict(x), embed_merge_forward(&b, &c, &head, x).unwrap());
    }
}

#[test]
fn pretrained_encoders_get_the_scaled_learning_rate() {
    let (b, c) = (single(22, 2), single(23, 2));
    let m = ParallelModel::pretrained(&b, &c, Head::zeros(4, 2), true, 0.1).unwrap();
    assert_eq!(m.lr_scales(), [vec![0.1; 16], vec![1.0; 6]].concat());
}

#[test]
fn zero_gate_averages_the_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut m = random_parallel(25, 3, true);
    m.gate = Some(Gate::zeros(3));
    let (_, x) = pair_input(&mut rng);
    let (y, a) = moe_forward(&m, &x).unwrap();
    assert_eq!(a, 0.5);
    let e1 = m.base.embed_prepared(&x.base).concat();
    let e2 = m.chatter.embed_prepared(&x.chatter).concat();
    let mean: Vec<f64> = e1.iter().zip(&e2).map(|(p, q)| 0.5 * p + 0.5 * q).collect();
    assert_eq!(y, m.head.classify(&mean).unwrap());
}

#[test]
fn saturated_gate_reduces_to_the_base_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut m = random_parallel(27, 3, true);
    m.gate.as_mut().unwrap().b_g[0] = 60.0;
    let (_, x) = pair_input(&mut rng);
    let (y, a) = moe_forward(&m, &x).unwrap();
    assert!(1.0 - a < 1e-20);
    let yb = m.head.classify(&m.base.embed_prepared(&x.base).concat()).unwrap();
    assert!((y - yb).abs() < 1e-12);
}

#[test]
fn gate_weight_is_a_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    for k in 0..20 {
        let (_, x) = pair_input(&mut rng);
        let (_, a) = moe_forward(&random_parallel(50 + k, 3, true), &x).unwrap();
        assert!(a > 0.0 && a < 1.0);
    }
}

#[test]
fn tied_encoders_on_identical_lattices_ignore_the_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let l = random_lattice(&mut rng, 8, 6, 500);
    let x = PairInput::new(&pair_of(l.clone(), l)).unwrap();
    let mut m = random_parallel(30, 3, true);
    m.chatter = m.base.clone();
    let y0 = m.forward(&x).unwrap().0;
    for _ in 0..10 {
        jitter(m.gate.as_mut().unwrap(), &mut rng);
        assert!((m.forward(&x).unwrap().0 - y0).abs() < 1e-15);
    }
}

#[test]
fn moe_forward_rejects_an_ungated_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (_, x) = pair_input(&mut rng);
    assert!(moe_forward(&random_parallel(32, 2, false), &x).is_err());
}

#[test]
fn checkpoints_round_trip_for_every_variant() {
    let (b, c) = (single(33, 3), single(34, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mut h2 = Head::zeros(2, 4);
    let mut h12 = Head::zeros(12, 4);
    jitter(&mut h2, &mut rng);
    jitter(&mut h12, &mut rng);
    let mut pf = random_parallel(36, 3, false);
    pf.encoder_lr_scale = 0.1;
    let all = [
        EnsembleParams::Ratio { prior: DomainPrior::new(0.7).unwrap() },
        EnsembleParams::ScoreMerge { base: b.clone(), chatter: c.clone(), head: h2 },
        EnsembleParams::EmbedMerge { base: b, chatter: c, head: h12 },
        EnsembleParams::Parallel(pf),
        EnsembleParams::Parallel(random_parallel(37, 3, true)),
    ];
    for p in &all {
        let text = p.to_text();
        assert!(text.starts_with(&format!("ENS v1 {}", p.kind())));
        let q = EnsembleParams::from_text(&text).unwrap();
        assert_eq!(&q, p);
        assert_eq!(q.to_text(), text);
    }
}

#[test]
fn scoring_is_deterministic_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let (pair, x) = pair_input(&mut rng);
    let (b, c) = (single(39, 3), single(40, 3));
    let all = [
        EnsembleParams::Ratio { prior: DomainPrior::new(0.7).unwrap() },
        EnsembleParams::EmbedMerge { base: b, chatter: c, head: Head::zeros(12, 2) },
        EnsembleParams::Parallel(random_parallel(41, 3, true)),
    ];
    for p in &all {
        let y = p.score(&pair, &x).unwrap();
        assert!(y > 0.0 && y < 1.0);
        assert_eq!(y, p.score(&pair, &x).unwrap());
    }
}

#[test]
fn unknown_variant_is_rejected() {
    assert!(EnsembleParams::from_text("ENS v1 STACKED\n").is_err());
    assert!("moe".parse::<EnsembleKind>().is_err());
}

#[test]
fn feature_cache_round_trips() {
    let recs = vec![
        CachedFeatures { id: "dev-00001".into(), label: Label::TT, features: vec![0.1, -2.5, f64::MIN_POSITIVE] },
        CachedFeatures { id: "dev-00002".into(), label: Label::FT, features: vec![] },
    ];
    let mut buf = Vec::new();
    write_feature_cache(&mut buf, &recs).unwrap();
    assert_eq!(read_feature_cache(buf.as_slice()).unwrap(), recs);
    buf.pop();
    assert!(read_feature_cache(buf.as_slice()).is_err());
}
