//! Acceptance criteria 1 to 9. Each test writes one `PASS`/`FAIL` line to
//! stderr (uncaptured) and then asserts.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evrag::eval::{DEFAULT_BETA_GRID, DEFAULT_K_GRID};
use evrag::train::{check_gradients, LossOptions};
use evrag::{
    evaluate, fit, generate_synthetic, load_hotpotqa, normalize_weights, sweep_alignment_weight,
    sweep_top_k, Checkpoint, Dataset, EvidenceChunk, EvidenceIndex, EvidenceMode, Granularity,
    Model, RunConfig, SemanticVector, SyntheticSpec, TrainSample, Vocabulary,
};

fn report(n: usize, pass: bool, detail: &str, elapsed: Duration) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("{tag} criterion {n}: {detail} [{:.2}s]\n", elapsed.as_secs_f64());
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> SemanticVector {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SemanticVector::normalized(v).unwrap()
}

#[test]
fn criterion_1_top_k_matches_exhaustive_scan() {
    let t0 = Instant::now();
    let dim = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let chunks: Vec<EvidenceChunk> = (0..1000u64)
        .map(|id| EvidenceChunk {
            id,
            text: String::new(),
            vector: random_unit(&mut rng, dim),
        })
        .collect();
    let index = EvidenceIndex::from_chunks(dim, chunks.clone(), "random".into()).unwrap();
    let mut mismatches = 0;
    for _ in 0..100 {
        let q = random_unit(&mut rng, dim);
        let mut all: Vec<(u64, f64)> = chunks
            .iter()
            .map(|c| {
                let s: f64 = q.values().iter().zip(c.vector.values()).map(|(a, b)| a * b).sum();
                (c.id, s)
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for k in [1, 5, 50] {
            let got: Vec<u64> = index.top_k(&q, k).unwrap().iter().map(|r| r.chunk_id).collect();
            let want: Vec<u64> = all[..k].iter().map(|p| p.0).collect();
            if got != want {
                mismatches += 1;
            }
        }
    }
    let elapsed = t0.elapsed();
    report(
        1,
        mismatches == 0 && elapsed < Duration::from_secs(5),
        &format!("300 top-k lists, {mismatches} mismatches"),
        elapsed,
    );
}

#[test]
fn criterion_2_weights_form_a_shift_invariant_simplex() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut negative = 0;
    let mut non_uniform = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=20);
        let scores: Vec<(u64, f64)> = (0..n).map(|i| (i as u64, rng.gen_range(-1.0..1.0))).collect();
        let beta = rng.gen_range(0.0..50.0);
        let c = rng.gen_range(-10.0..10.0);
        let w = normalize_weights(&scores, beta).unwrap();
        let shifted: Vec<(u64, f64)> = scores.iter().map(|&(i, s)| (i, s + c)).collect();
        let ws = normalize_weights(&shifted, beta).unwrap();
        let sum: f64 = w.entries.iter().map(|e| e.alpha).sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        negative += w.entries.iter().filter(|e| e.alpha < 0.0).count();
        for (a, b) in w.entries.iter().zip(&ws.entries) {
            worst_shift = worst_shift.max((a.alpha - b.alpha).abs());
        }
        let u = normalize_weights(&scores, 0.0).unwrap();
        non_uniform += u.entries.iter().filter(|e| e.alpha != 1.0 / n as f64).count();
    }
    let pass = worst_sum <= 1e-9 && negative == 0 && worst_shift <= 1e-9 && non_uniform == 0;
    report(
        2,
        pass,
        &format!(
            "10000 draws, max |sum-1| {worst_sum:.1e}, max shift diff {worst_shift:.1e}, \
             {negative} negative, {non_uniform} non-uniform at beta=0"
        ),
        t0.elapsed(),
    );
}

fn tiny_model(seed: u64) -> Model {
    // 4 reserved + 20 words + 8 buckets = 32 ids.
    let words = (0..20).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::new(words, 8);
    assert_eq!(vocab.size(), 32);
    Model::init(vocab, 8, 8, seed)
}

fn tiny_sample() -> TrainSample {
    TrainSample {
        id: "g".into(),
        question: vec![4, 5, 6],
        target: vec![7, 8, 9, 2],
        candidates: vec![
            (0, vec![4, 5, 7, 10]),
            (1, vec![6, 8, 9, 11, 12]),
            (2, vec![13, 14, 15]),
            (3, vec![5, 16, 17, 28]),
            (4, vec![18, 19, 20, 21, 22]),
        ],
        gold: vec![0, 1],
    }
}

#[test]
fn criterion_3_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let model = tiny_model(3);
    let sample = tiny_sample();
    let base = LossOptions {
        evidence: EvidenceMode::Retrieved,
        top_k: 3,
        tau: -1.0,
        beta: 2.0,
        lambda: 0.0,
        cons_eps: 1e-12,
        alpha_grad: true,
        encoder_grad: true,
        nll_weight: 1.0,
    };
    let objectives = [
        ("l_nll", LossOptions { lambda: 0.0, nll_weight: 1.0, ..base }),
        ("l_cons", LossOptions { lambda: 1.0, nll_weight: 0.0, ..base }),
        ("l_joint", LossOptions { lambda: 0.5, nll_weight: 1.0, ..base }),
    ];
    let mut details = Vec::new();
    let mut pass = true;
    for (name, opts) in objectives {
        let r = check_gradients(&model, &sample, &opts, 150, 3).unwrap();
        let n = r.checks.len();
        let e = r.max_rel_err();
        pass &= n >= 100 && e < 1e-4;
        details.push(format!("{name} {n} coords max rel err {e:.1e}"));
    }
    let elapsed = t0.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    report(3, pass, &details.join(", "), elapsed);
}

#[derive(serde::Deserialize)]
struct PairCase {
    pred: String,
    gold: String,
    expected: f64,
}

#[derive(serde::Deserialize)]
struct CorpusCase {
    preds: Vec<String>,
    refs: Vec<String>,
    expected: f64,
}

#[derive(serde::Deserialize)]
struct MetricFixture {
    em: Vec<PairCase>,
    f1: Vec<PairCase>,
    bleu: Vec<CorpusCase>,
    rouge_l: Vec<PairCase>,
}

#[test]
fn criterion_4_metrics_match_hand_computed_fixture() {
    let t0 = Instant::now();
    let text = std::fs::read_to_string(fixture("metrics.json")).unwrap();
    let fx: MetricFixture = serde_json::from_str(&text).unwrap();
    let mut failures = Vec::new();
    let mut check_pairs = |name: &str, cases: &[PairCase], f: fn(&str, &str) -> f64| {
        for c in cases {
            let got = f(&c.pred, &c.gold);
            if (got - c.expected).abs() > 1e-5 {
                failures.push(format!("{name}({:?}, {:?}) = {got}", c.pred, c.gold));
            }
        }
    };
    check_pairs("em", &fx.em, evrag::exact_match);
    check_pairs("f1", &fx.f1, evrag::token_f1);
    check_pairs("rouge_l", &fx.rouge_l, evrag::rouge_l);
    for c in &fx.bleu {
        let p: Vec<&str> = c.preds.iter().map(String::as_str).collect();
        let r: Vec<&str> = c.refs.iter().map(String::as_str).collect();
        let got = evrag::bleu(&p, &r).unwrap();
        if (got - c.expected).abs() > 1e-5 {
            failures.push(format!("bleu({p:?}, {r:?}) = {got}"));
        }
    }
    let min_cases = fx.em.len().min(fx.f1.len()).min(fx.bleu.len()).min(fx.rouge_l.len());
    let landmarks = (evrag::token_f1("new york city", "york city") - 0.8).abs() < 1e-5
        && (evrag::rouge_l("a b c d", "a c d") - 0.857143).abs() < 1e-5
        && (evrag::bleu(&["a b c d"], &["a b c d e"]).unwrap() - 0.778801).abs() < 1e-5;
    let pass = failures.is_empty() && min_cases >= 10 && landmarks;
    report(
        4,
        pass,
        &format!(
            "{} cases (min {min_cases} per metric), {} mismatches {:?}",
            fx.em.len() + fx.f1.len() + fx.bleu.len() + fx.rouge_l.len(),
            failures.len(),
            failures
        ),
        t0.elapsed(),
    );
}

fn overfit_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.encoder.dim = 32;
    cfg.decoder.hidden = 32;
    cfg.retrieval.prepend_title = false;
    cfg.training.evidence = EvidenceMode::Gold;
    cfg.training.learning_rate = 0.01;
    cfg.training.epochs = 300;
    cfg.eval.evidence = EvidenceMode::Gold;
    cfg.eval.max_len = 8;
    cfg
}

#[test]
fn criterion_5_overfits_eight_samples() {
    let t0 = Instant::now();
    let samples = load_hotpotqa(&fixture("overfit8.json")).unwrap();
    assert_eq!(samples.len(), 8);
    let ds = Dataset::from_samples(samples, Granularity::Paragraph, false);
    let mut pass = true;
    let mut details = Vec::new();
    for seed in 0..3 {
        let cfg = overfit_config(seed);
        let ck = fit(&ds, &cfg).unwrap();
        let nll = ck.training_log.last().unwrap().l_nll;
        let em = evaluate(&ds, &ck, &cfg).unwrap().metrics.em;
        pass &= cfg.training.epochs <= 500 && nll < 0.1 && em == 100.0;
        details.push(format!("seed {seed}: l_nll {nll:.4} EM {em:.0}"));
    }
    let elapsed = t0.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    report(5, pass, &details.join(", "), elapsed);
}

fn alignment_run(seed: u64, lambda: f64) -> (f64, f64) {
    let spec = SyntheticSpec {
        seed,
        n_samples: 64,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.encoder.dim = 32;
    cfg.decoder.hidden = 32;
    cfg.retrieval.prepend_title = false;
    cfg.training.learning_rate = 0.01;
    cfg.training.epochs = 40;
    cfg.training.lambda = lambda;
    cfg.eval.max_len = 4;
    let ck = fit(&ds, &cfg).unwrap();
    let r = evaluate(&ds, &ck, &cfg).unwrap();
    (r.mean_consistency, r.evidence_support_rate)
}

#[test]
fn criterion_6_alignment_term_pulls_generation_toward_evidence() {
    let t0 = Instant::now();
    let (mut d0, mut d1, mut s0, mut s1) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..5 {
        let (d, s) = alignment_run(seed, 0.0);
        d0 += d / 5.0;
        s0 += s / 5.0;
        let (d, s) = alignment_run(seed, 1.0);
        d1 += d / 5.0;
        s1 += s / 5.0;
    }
    report(
        6,
        d1 < d0 && s1 >= s0,
        &format!(
            "mean |h_gen - e| {d1:.4} (lambda 1) vs {d0:.4} (lambda 0), \
             support {s1:.4} vs {s0:.4}"
        ),
        t0.elapsed(),
    );
}

/// Two-gold task with 40 near-duplicate distractors per question.
fn shape_spec(seed: u64, n_samples: usize) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        n_samples,
        vocab_size: 128,
        n_gold_evidence: 2,
        n_distractors: 40,
        distractor_similarity: 0.7,
        question_len: 4,
        gold2_overlap: 2,
        filler_len: 13,
        answer_repeat: 2,
        decoy: true,
        n_questions: 8,
    }
}

fn shape_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.encoder.dim = 256;
    cfg.decoder.hidden = 32;
    cfg.retrieval.beta = 4.0;
    cfg.retrieval.top_k = 5;
    cfg.retrieval.prepend_title = false;
    cfg.training.evidence = EvidenceMode::Gold;
    cfg.training.freeze_encoder = true;
    cfg.training.epochs = 40;
    cfg.training.learning_rate = 0.01;
    cfg.training.lambda = 0.0;
    cfg.eval.max_len = 4;
    cfg
}

struct ShapeRun {
    test: Dataset,
    checkpoint: Checkpoint,
    cfg: RunConfig,
}

/// One trained model per seed, shared by the two curve criteria.
fn shape_runs() -> &'static [ShapeRun] {
    static RUNS: OnceLock<Vec<ShapeRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..5)
            .map(|seed| {
                let train = generate_synthetic(&shape_spec(seed, 1000)).unwrap();
                let test = generate_synthetic(&shape_spec(seed + 1000, 60)).unwrap();
                let cfg = shape_config(seed);
                let mut train_cfg = cfg.clone();
                train_cfg.retrieval.beta = 0.0;
                let checkpoint = fit(&train, &train_cfg).unwrap();
                ShapeRun { test, checkpoint, cfg }
            })
            .collect()
    })
}

fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.len() as f64;
    (0..curves[0].len())
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n)
        .collect()
}

fn fmt_curve(xs: &[f64], ys: &[f64]) -> String {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| format!("{x}:{y:.1}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn criterion_7_em_peaks_at_interior_top_k() {
    let t0 = Instant::now();
    let curves: Vec<Vec<f64>> = shape_runs()
        .iter()
        .map(|r| sweep_top_k(&r.test, &r.checkpoint, &r.cfg, &DEFAULT_K_GRID).unwrap().em())
        .collect();
    let em = mean_curve(&curves);
    let (first, last) = (em[0], em[em.len() - 1]);
    let pass = em[1..em.len() - 1]
        .iter()
        .any(|&e| e >= first + 10.0 && e >= last + 10.0);
    let ks: Vec<f64> = DEFAULT_K_GRID.iter().map(|&k| k as f64).collect();
    report(7, pass, &format!("mean EM by k {}", fmt_curve(&ks, &em)), t0.elapsed());
}

#[test]
fn criterion_8_em_peaks_at_interior_beta() {
    let t0 = Instant::now();
    let curves: Vec<Vec<f64>> = shape_runs()
        .iter()
        .map(|r| {
            sweep_alignment_weight(&r.test, &r.checkpoint, &r.cfg, &DEFAULT_BETA_GRID)
                .unwrap()
                .em()
        })
        .collect();
    let em = mean_curve(&curves);
    let at = |b: f64| em[DEFAULT_BETA_GRID.iter().position(|&x| x == b).unwrap()];
    let (zero, eight) = (at(0.0), at(8.0));
    let pass = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .any(|&b| at(b) >= zero + 10.0 && at(b) >= eight + 10.0);
    report(
        8,
        pass,
        &format!("mean EM by beta {}", fmt_curve(&DEFAULT_BETA_GRID, &em)),
        t0.elapsed(),
    );
}

#[test]
fn criterion_9_identical_config_gives_identical_bytes() {
    let t0 = Instant::now();
    let ds = generate_synthetic(&SyntheticSpec {
        seed: 9,
        n_samples: 16,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 9;
    cfg.encoder.dim = 16;
    cfg.decoder.hidden = 16;
    cfg.training.epochs = 5;
    cfg.retrieval.prepend_title = false;
    let run = |cfg: &RunConfig| {
        let ck = fit(&ds, cfg).unwrap();
        let report = evaluate(&ds, &ck, cfg).unwrap();
        let index = EvidenceIndex::build(&ds.corpus.pairs(), &ck.model.vocab, &ck.model.encoder)
            .unwrap()
            .with_metadata(cfg.to_json());
        (ck.to_json(), report.to_json(), index.to_bytes())
    };
    let a = run(&cfg);
    let b = run(&RunConfig::from_json(&cfg.to_json()).unwrap());
    let pass = a == b;
    report(
        9,
        pass,
        &format!(
            "checkpoint {} bytes, report {} bytes, index {} bytes, identical: {pass}",
            a.0.len(),
            a.1.len(),
            a.2.len()
        ),
        t0.elapsed(),
    );
}
