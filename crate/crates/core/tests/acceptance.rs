//! Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use common::*;
use ragscore::corpus::{
    collapse, parse_semeval_xml, validate, Label5, LabeledResponse, Scheme, Split,
};
use ragscore::embed::loss::{
    cosine_sentence_loss, cosine_similarity_loss, triplet_loss, triplet_min_active_margin,
    PairExample, TripletExample,
};
use ragscore::embed::{
    train, BaseEmbedder, EmbeddingAdapter, HashEmbedder, LossKind, TrainConfig, TrainingData,
    Vector,
};
use ragscore::glm::MockBackend;
use ragscore::harness::{
    prepare, rag_fraction_experiment, run_scenario, sample_fraction, ConfusionMatrix, EvalReport,
    ExperimentConfig,
};
use ragscore::optimizer::{
    optimize, CandidateScorer, OptimizerConfig, OptimizerError, ScriptedCritic,
};
use ragscore::pairset::{
    balance, build_triplets, enumerate_pairs, label_pair, LabelingStrategy, TripletCap,
};
use ragscore::promptkit::{
    format_examples, render, Example, Placeholder, PromptBindings, PromptTemplate, TemplateSet,
};
use ragscore::vstore::{EntryMetadata, RetrievalConfig, RetrievalScope, VectorStore};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Outcome, String>;
type Criterion = (&'static str, fn() -> Check);
type LossFn<'a> = &'a dyn Fn(&EmbeddingAdapter) -> (f64, DMatrix<f64>);
type OptimizerCase<'a> = (&'a [(&'a str, f64)], usize, usize, &'a [f64]);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))
}

fn c1_metrics() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let names = ["a", "b", "c", "d", "e"];
    for case in 0..1000 {
        let n = [2, 3, 5][case % 3];
        let len = rng.random_range(1..120);
        let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
        let pred: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
        let g: Vec<&str> = gold.iter().map(|&i| names[i]).collect();
        let p: Vec<&str> = pred.iter().map(|&i| names[i]).collect();
        let cm = ConfusionMatrix::from_pairs(&names[..n], &g, &p).map_err(|e| e.to_string())?;
        let want = brute_metrics(&gold, &pred, n);
        let got = cm.metrics().map_err(|e| e.to_string())?;
        for (name, a, b) in [
            ("accuracy", got.acc, want.acc),
            ("macro F1", got.m_f1, want.macro_f1),
            ("weighted F1", got.w_f1, want.weighted_f1),
        ] {
            ensure((a - b).abs() <= 1e-9, || {
                format!("case {case}: {name} {a} vs brute force {b}")
            })?;
        }
    }
    let cm = ConfusionMatrix::from_pairs(&["A", "B"], &["A", "A", "B"], &["A", "B", "B"])
        .map_err(|e| e.to_string())?;
    let m = cm.metrics().map_err(|e| e.to_string())?;
    for v in [m.acc, m.m_f1, m.w_f1] {
        ensure((v - 2.0 / 3.0).abs() < 1e-12, || {
            format!("worked example gave {v}")
        })?;
    }
    within(Duration::from_secs(5), start)?;
    Ok(Outcome::Pass(format!(
        "1000 matrices within 1e-9, worked example 2/3 ({:.2?})",
        start.elapsed()
    )))
}

fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

fn perturbed(adapter: &EmbeddingAdapter, r: usize, c: usize, h: f64) -> EmbeddingAdapter {
    let mut w = adapter.weights().clone();
    w[(r, c)] += h;
    EmbeddingAdapter::from_weights(w).unwrap()
}

fn finite_difference(
    adapter: &EmbeddingAdapter,
    f: &dyn Fn(&EmbeddingAdapter) -> f64,
) -> DMatrix<f64> {
    let h = 1e-5;
    let d = adapter.dim();
    DMatrix::from_fn(d, d, |r, c| {
        (f(&perturbed(adapter, r, c, h)) - f(&perturbed(adapter, r, c, -h))) / (2.0 * h)
    })
}

fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}

fn c2_gradients() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 6;
    let margin = 0.5;
    let mut worst = [0.0f64; 3];
    let mut batches = 0;
    let mut kinks = 0;
    while batches < 100 {
        let w = DMatrix::from_fn(d, d, |r, c| {
            f64::from(u8::from(r == c)) + rng.random_range(-0.5..0.5)
        });
        let adapter = EmbeddingAdapter::from_weights(w).map_err(|e| e.to_string())?;
        let pairs: Vec<PairExample> = (0..8)
            .map(|i| PairExample {
                a: rand_vec(&mut rng, d),
                b: rand_vec(&mut rng, d),
                label: (i % 2) as f64,
            })
            .collect();
        let triplets: Vec<TripletExample> = (0..8)
            .map(|_| TripletExample {
                anchor: rand_vec(&mut rng, d),
                positive: rand_vec(&mut rng, d),
                negative: rand_vec(&mut rng, d),
            })
            .collect();
        if triplet_min_active_margin(&adapter, &triplets, margin).unwrap() < 1e-3 {
            kinks += 1;
            continue;
        }
        let checks: [(LossFn, usize); 3] = [
            (
                &|a| {
                    let lg = cosine_similarity_loss(a, &pairs).unwrap();
                    (lg.loss, lg.grad)
                },
                0,
            ),
            (
                &|a| {
                    let lg = cosine_sentence_loss(a, &pairs, 1.0).unwrap();
                    (lg.loss, lg.grad)
                },
                1,
            ),
            (
                &|a| {
                    let lg = triplet_loss(a, &triplets, margin).unwrap();
                    (lg.loss, lg.grad)
                },
                2,
            ),
        ];
        for (f, slot) in checks {
            let analytic = f(&adapter).1;
            let numeric = finite_difference(&adapter, &|a| f(a).0);
            worst[slot] = worst[slot].max(relative_error(&analytic, &numeric));
        }
        batches += 1;
    }
    let names = ["cosine similarity", "cosine sentence", "triplet"];
    for (name, err) in names.iter().zip(worst) {
        ensure(err < 1e-4, || {
            format!("{name}: worst relative error {err:.3e}")
        })?;
    }
    within(Duration::from_secs(30), start)?;
    Ok(Outcome::Pass(format!(
        "worst relative errors {:.1e}/{:.1e}/{:.1e} over 100 batches, {kinks} kink batches redrawn ({:.2?})",
        worst[0],
        worst[1],
        worst[2],
        start.elapsed()
    )))
}

fn c3_retrieval() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 24;
    let mut store = VectorStore::empty(d, "random");
    let mut raw: Vec<Vec<f64>> = Vec::new();
    for i in 0..10_000 {
        // One in ten rows repeats an earlier vector, so exact ties occur.
        let v: Vec<f64> = if i > 0 && rng.random_range(0..10) == 0 {
            raw[rng.random_range(0..raw.len())].clone()
        } else {
            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let meta = EntryMetadata {
            response_text: format!("r{i}"),
            judgment: "correct".into(),
            question: None,
            reference_answer: None,
            rubric: None,
            response_id: Some(format!("r{i}")),
            question_id: Some(format!("q{}", i % 7)),
        };
        store.push(&v, meta).map_err(|e| e.to_string())?;
        raw.push(v);
    }
    let rows: Vec<Vec<f32>> = (0..store.len()).map(|i| store.row(i).to_vec()).collect();
    for qn in 0..100 {
        let x: Vec<f64> = if qn % 4 == 0 {
            rows[rng.random_range(0..rows.len())]
                .iter()
                .map(|&v| f64::from(v))
                .collect()
        } else {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / n).collect()
        };
        let qid = format!("q{}", qn % 7);
        for scope in [RetrievalScope::CorpusWide, RetrievalScope::SameQuestionOnly] {
            let mut all: Vec<(usize, f64)> = rows
                .iter()
                .enumerate()
                .filter(|(i, _)| scope == RetrievalScope::CorpusWide || i % 7 == qn % 7)
                .map(|(i, r)| (i, r.iter().zip(&x).map(|(a, b)| f64::from(*a) * b).sum()))
                .collect();
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let want: Vec<usize> = all.iter().take(25).map(|h| h.0).collect();
            let got: Vec<usize> = store
                .top_k_vector(&x, Some(&qid), RetrievalConfig { k: 25, scope })
                .map_err(|e| e.to_string())?
                .iter()
                .map(|h| h.index)
                .collect();
            ensure(got == want, || {
                format!("query {qn} ({scope:?}): {got:?} != {want:?}")
            })?;
        }
    }
    within(Duration::from_secs(10), start)?;
    Ok(Outcome::Pass(format!(
        "100 queries x 2 scopes match the full sort ({:.2?})",
        start.elapsed()
    )))
}

fn hand_responses() -> Vec<LabeledResponse> {
    vec![
        response("c1", "q", "a", Label5::Correct),
        response("c2", "q", "b", Label5::Correct),
        response("x1", "q", "c", Label5::Contradictory),
        response("x2", "q", "d", Label5::Contradictory),
        response("i1", "q", "e", Label5::PcIncomplete),
    ]
}

fn positives(
    rs: &[LabeledResponse],
    scheme: Scheme,
    strategy: LabelingStrategy,
) -> BTreeMap<(String, String), u8> {
    let cat: HashMap<&str, &str> = rs
        .iter()
        .map(|r| (r.id.as_str(), collapse(r.label, scheme)))
        .collect();
    enumerate_pairs(rs)
        .unwrap()
        .into_iter()
        .map(|k| {
            let l = label_pair(cat[k.a_id.as_str()], cat[k.b_id.as_str()], strategy);
            ((k.a_id, k.b_id), l)
        })
        .collect()
}

fn c4_pairs() -> Check {
    let rs = hand_responses();
    let four = &rs[..4];
    ensure(enumerate_pairs(four).unwrap().len() == 6, || {
        "4 responses did not give 6 pairs".into()
    })?;
    let pairs = enumerate_pairs(&rs).unwrap();
    let keys: Vec<(&str, &str)> = pairs
        .iter()
        .map(|k| (k.a_id.as_str(), k.b_id.as_str()))
        .collect();
    let want_keys = vec![
        ("c1", "c2"),
        ("c1", "x1"),
        ("c1", "x2"),
        ("c1", "i1"),
        ("c2", "x1"),
        ("c2", "x2"),
        ("c2", "i1"),
        ("x1", "x2"),
        ("i1", "x1"),
        ("i1", "x2"),
    ];
    ensure(keys == want_keys, || format!("pair set {keys:?}"))?;

    let pos = |scheme, strategy| -> Vec<(String, String)> {
        positives(&rs, scheme, strategy)
            .into_iter()
            .filter(|(_, l)| *l == 1)
            .map(|(k, _)| k)
            .collect()
    };
    let s = |a: &str, b: &str| (a.to_string(), b.to_string());
    let cases = [
        (
            Scheme::ThreeWay,
            LabelingStrategy::Strict,
            vec![s("c1", "c2")],
        ),
        (
            Scheme::ThreeWay,
            LabelingStrategy::General,
            vec![s("c1", "c2"), s("x1", "x2")],
        ),
        (
            Scheme::TwoWay,
            LabelingStrategy::Strict,
            vec![s("c1", "c2"), s("i1", "x1"), s("i1", "x2"), s("x1", "x2")],
        ),
        (
            Scheme::TwoWay,
            LabelingStrategy::General,
            vec![s("c1", "c2"), s("i1", "x1"), s("i1", "x2"), s("x1", "x2")],
        ),
    ];
    for (scheme, strategy, want) in cases {
        let got = pos(scheme, strategy);
        ensure(got == want, || {
            format!("{scheme:?}/{strategy:?} positives {got:?}")
        })?;
    }

    let cat: HashMap<&str, &str> = rs
        .iter()
        .map(|r| (r.id.as_str(), collapse(r.label, Scheme::ThreeWay)))
        .collect();
    let labeled: Vec<_> = pairs
        .iter()
        .cloned()
        .map(|k| {
            let l = label_pair(
                cat[k.a_id.as_str()],
                cat[k.b_id.as_str()],
                LabelingStrategy::General,
            );
            k.with_label(l)
        })
        .collect();
    let b = balance(labeled, 9);
    ensure(
        b.positives == 2 && b.negatives == 2 && !b.imbalanced,
        || format!("balance gave {}/{}", b.positives, b.negatives),
    )?;

    let triplets = build_triplets(&rs, Scheme::ThreeWay, 5, TripletCap::HalfPeers).unwrap();
    let want: HashSet<(&str, &str)> =
        [("c1", "c2"), ("c2", "c1"), ("x1", "x2"), ("x2", "x1")].into();
    let got: HashSet<(&str, &str)> = triplets
        .iter()
        .map(|t| (t.anchor_id.as_str(), t.positive_id.as_str()))
        .collect();
    ensure(triplets.len() == 4 && got == want, || {
        format!("triplets {triplets:?}")
    })?;
    for t in &triplets {
        let (a, p, n) = (
            cat[t.anchor_id.as_str()],
            cat[t.positive_id.as_str()],
            cat[t.negative_id.as_str()],
        );
        ensure(
            a == p && a != n && t.anchor_id != t.positive_id && t.question_id == "q",
            || format!("triplet structure violated: {t:?}"),
        )?;
    }
    let big: Vec<LabeledResponse> = (0..6)
        .map(|i| {
            response(
                &format!("r{i}"),
                "q",
                "t",
                if i < 4 {
                    Label5::Correct
                } else {
                    Label5::Irrelevant
                },
            )
        })
        .collect();
    let t = build_triplets(&big, Scheme::ThreeWay, 1, TripletCap::Fixed(6)).unwrap();
    let unique: HashSet<_> = t
        .iter()
        .map(|x| (&x.anchor_id, &x.positive_id, &x.negative_id))
        .collect();
    ensure(unique.len() == t.len() && t.len() == 4 * 6 + 2 * 4, || {
        format!(
            "fixed cap produced {} triplets ({} unique)",
            t.len(),
            unique.len()
        )
    })?;
    Ok(Outcome::Pass(
        "pair sets, labels, balance and triplets match the hand oracle".into(),
    ))
}

fn check_against_one_nn(
    report: &EvalReport,
    entries: &[&LabeledResponse],
    embedder: &dyn ragscore::embed::TextEmbedder,
    corpus: &ragscore::corpus::Corpus,
    same_question: bool,
    scheme: Scheme,
) -> Result<usize, String> {
    for p in &report.predictions {
        let q = corpus
            .find_response(&p.response_id)
            .ok_or("unknown response")?;
        let want =
            one_nn(entries, embedder, q, same_question, scheme).unwrap_or(scheme.fallback_label());
        ensure(p.predicted == want, || {
            format!("{}: pipeline {} vs 1-NN {want}", p.response_id, p.predicted)
        })?;
    }
    Ok(report.predictions.len())
}

fn c5_end_to_end() -> Check {
    let mut checked = 0;
    let corpora = vec![
        (tiny(), Scheme::ThreeWay),
        (
            random_corpus(
                11,
                4,
                &[
                    (Split::Train, 12),
                    (Split::Ua, 5),
                    (Split::Uq, 10),
                    (Split::Ud, 10),
                ],
            ),
            Scheme::TwoWay,
        ),
        (
            random_corpus(12, 3, &[(Split::Train, 10), (Split::Ua, 6), (Split::Uq, 8)]),
            Scheme::FiveWay,
        ),
    ];
    for (corpus, scheme) in &corpora {
        for loss in [None, Some(LossKind::Triplet)] {
            let config = ExperimentConfig {
                scheme: *scheme,
                loss,
                embedding_dim: 64,
                train: TrainConfig {
                    epochs: 1,
                    learning_rate: 0.05,
                    ..TrainConfig::default()
                },
                ..ExperimentConfig::default()
            };
            let a = prepare(&config, corpus, 0).map_err(|e| e.to_string())?;
            let train: Vec<&LabeledResponse> = corpus.split(Split::Train).iter().collect();
            let report = run_scenario(&config, corpus, Split::Ua, &MockBackend)
                .map_err(|e| e.to_string())?;
            checked += check_against_one_nn(&report, &train, &a.embedder, corpus, true, *scheme)?;

            for split in [Split::Uq, Split::Ud] {
                if !corpus.has_split(split) {
                    continue;
                }
                let report = rag_fraction_experiment(&config, corpus, 0.4, split, &MockBackend)
                    .map_err(|e| e.to_string())?;
                let delta = report.store_delta.as_ref().ok_or("no store delta")?;
                let added: HashSet<&str> = delta.added_ids.iter().map(String::as_str).collect();
                let test = corpus.split(split);
                let mut entries = train.clone();
                entries.extend(test.iter().filter(|r| added.contains(r.id.as_str())));
                let expected_added = (0.4 * test.len() as f64 + 1e-9).floor() as usize;
                ensure(
                    delta.added == expected_added && delta.scored == test.len() - expected_added,
                    || format!("store delta {}/{}", delta.added, delta.scored),
                )?;
                ensure(
                    report
                        .predictions
                        .iter()
                        .all(|p| !added.contains(p.response_id.as_str())),
                    || "a moved response was also scored".into(),
                )?;
                checked +=
                    check_against_one_nn(&report, &entries, &a.embedder, corpus, false, *scheme)?;
            }
        }
    }
    Ok(Outcome::Pass(format!(
        "{checked} predictions agree with the 1-NN oracle"
    )))
}

fn template_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("templates")
}

fn c6_templates() -> Check {
    let index: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(template_dir().join("index.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let bundled = TemplateSet::bundled().map_err(|e| e.to_string())?;
    ensure(
        bundled.templates().len() == index.len() && index.len() == 8,
        || {
            format!(
                "{} bundled templates, {} indexed",
                bundled.templates().len(),
                index.len()
            )
        },
    )?;
    for entry in &index {
        let file = entry["path"].as_str().ok_or("index entry without path")?;
        let bytes = std::fs::read(template_dir().join(file)).map_err(|e| e.to_string())?;
        let digest = hex::encode(Sha256::digest(&bytes));
        ensure(Some(digest.as_str()) == entry["sha256"].as_str(), || {
            format!("{file}: digest mismatch")
        })?;
        let t = bundled
            .templates()
            .iter()
            .find(|t| t.id == entry["id"].as_str().unwrap_or_default())
            .ok_or_else(|| format!("{file} not bundled"))?;
        ensure(t.body().as_bytes() == bytes.as_slice(), || {
            format!("{file}: bundled body differs")
        })?;
        check_round_trip(t)?;
    }
    Ok(Outcome::Pass(
        "8 templates hash-match and round-trip byte for byte".into(),
    ))
}

fn check_round_trip(t: &PromptTemplate) -> Result<(), String> {
    let sentinel = |p: Placeholder| format!("\u{1}{}\u{1}", p.name());
    let examples = t.has(Placeholder::Examples).then(|| {
        vec![Example {
            answer: sentinel(Placeholder::Examples),
            judgment: "correct".into(),
        }]
    });
    let bindings = PromptBindings {
        question: Some(sentinel(Placeholder::Question)),
        reference_answer: Some(sentinel(Placeholder::ReferenceAnswer)),
        examples: examples.clone(),
        new_answer: sentinel(Placeholder::NewAnswer),
    };
    let rendered = render(t, &bindings).map_err(|e| e.to_string())?.text;
    ensure(!rendered.contains("{{"), || {
        format!("{}: placeholder left after render", t.id)
    })?;
    let mut back = rendered;
    if let Some(ex) = &examples {
        back = back.replace(&format_examples(ex), &Placeholder::Examples.token());
    }
    for p in [
        Placeholder::Question,
        Placeholder::ReferenceAnswer,
        Placeholder::NewAnswer,
    ] {
        back = back.replace(&sentinel(p), &p.token());
    }
    ensure(back == t.body(), || {
        format!("{}: reverse substitution differs", t.id)
    })
}

fn c7_training() -> Check {
    let start = Instant::now();
    let data = two_clusters(7, 40, 20);
    let base = HashEmbedder::new(64);
    let identity = precision_at_5(&base, &EmbeddingAdapter::identity(base.dim()), &data);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = data.train.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let same = data.train[i].1 == data.train[j].1;
            pairs.push((
                data.train[i].0.clone(),
                data.train[j].0.clone(),
                f64::from(u8::from(same)),
            ));
        }
    }
    pairs.shuffle(&mut rng);
    pairs.truncate(600);
    let mut triplets = Vec::new();
    for i in 0..n {
        for _ in 0..4 {
            let draw = |rng: &mut ChaCha8Rng, same: bool| loop {
                let j = rng.random_range(0..n);
                if j != i && (data.train[j].1 == data.train[i].1) == same {
                    break j;
                }
            };
            let (p, q) = (draw(&mut rng, true), draw(&mut rng, false));
            triplets.push((
                data.train[i].0.clone(),
                data.train[p].0.clone(),
                data.train[q].0.clone(),
            ));
        }
    }
    let mut summary = vec![format!("identity {identity:.3}")];
    for loss in [
        LossKind::CosineSimilarity,
        LossKind::CosineSentence,
        LossKind::Triplet,
    ] {
        let config = TrainConfig {
            loss,
            learning_rate: 0.2,
            epochs: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let data_set = match loss {
            LossKind::Triplet => TrainingData::Triplets(triplets.clone()),
            _ => TrainingData::Pairs(pairs.clone()),
        };
        let out = train(&config, &data_set, &base).map_err(|e| e.to_string())?;
        let p = precision_at_5(&base, &out.adapter, &data);
        let losses = &out.trace.epoch_mean_losses;
        ensure(p >= 1.2 * identity, || {
            format!("{loss:?}: precision@5 {p:.3} vs identity {identity:.3}")
        })?;
        ensure(losses.last() < losses.first(), || {
            format!("{loss:?}: epoch losses {losses:?}")
        })?;
        summary.push(format!("{} {p:.3}", loss.as_str()));
    }
    within(Duration::from_secs(60), start)?;
    Ok(Outcome::Pass(format!(
        "precision@5 {} ({:.2?})",
        summary.join(", "),
        start.elapsed()
    )))
}

struct TableScorer(HashMap<String, f64>);

impl CandidateScorer for TableScorer {
    fn dev_set_id(&self) -> String {
        "table".into()
    }

    fn score(&self, t: &PromptTemplate) -> Result<f64, OptimizerError> {
        let tag = t.body().split('|').next().unwrap_or_default();
        Ok(self.0.get(tag).copied().unwrap_or(0.0))
    }
}

fn c8_optimizer() -> Check {
    let draft = PromptTemplate::new(
        "draft",
        ragscore::promptkit::Task::Sb3,
        ragscore::promptkit::Scenario::WithoutExamples,
        ragscore::promptkit::Style::Cpg,
        "draft|{{QUESTION}} {{NEW_ANSWER}}",
    )
    .map_err(|e| e.to_string())?;
    let reply =
        |tag: &str| format!("<template>\n{tag}|{{{{QUESTION}}}} {{{{NEW_ANSWER}}}}\n</template>");
    let cases: [OptimizerCase; 3] = [
        (
            &[("draft", 0.4), ("a", 0.5), ("b", 0.7), ("c", 0.6)],
            3,
            1,
            &[0.4, 0.5, 0.7, 0.7],
        ),
        (
            &[
                ("draft", 0.4),
                ("a", 0.5),
                ("b", 0.3),
                ("c", 0.45),
                ("d", 0.9),
            ],
            2,
            2,
            &[0.4, 0.5, 0.9],
        ),
        (
            &[("draft", 0.6), ("a", 0.2), ("b", 0.1)],
            2,
            1,
            &[0.6, 0.6, 0.6],
        ),
    ];
    for (table, steps, beam, want) in cases {
        let scorer = TableScorer(table.iter().map(|(k, v)| (k.to_string(), *v)).collect());
        let critic = ScriptedCritic::new(table[1..].iter().map(|(k, _)| reply(k)));
        let config = OptimizerConfig {
            steps,
            beam,
            ..OptimizerConfig::default()
        };
        let r = optimize(&config, draft.clone(), &critic, &scorer).map_err(|e| e.to_string())?;
        ensure(r.best_trace == want, || {
            format!("trace {:?}, expected {want:?}", r.best_trace)
        })?;
        ensure(r.best_trace.windows(2).all(|w| w[0] <= w[1]), || {
            "trace decreased".into()
        })?;
    }
    Ok(Outcome::Pass(
        "best-retained traces match the hand simulation".into(),
    ))
}

fn find_dir(root: &Path, needle: &str) -> Option<PathBuf> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_dir())
        .find(|e| {
            e.file_name()
                .to_string_lossy()
                .to_lowercase()
                .contains(needle)
        })
        .map(|e| e.into_path())
}

fn c9_dataset() -> Check {
    let Some(root) = std::env::var_os("RAGSCORE_SEMEVAL_DIR").map(PathBuf::from) else {
        return Ok(Outcome::Skip("RAGSCORE_SEMEVAL_DIR not set".into()));
    };
    let table: [(&str, Split, [usize; 5]); 3] = [
        ("beetle", Split::Train, [1665, 919, 1049, 113, 195]),
        ("scientsbank", Split::Train, [2008, 1324, 499, 1115, 23]),
        ("scientsbank", Split::Ua, [233, 113, 58, 133, 3]),
    ];
    for (name, split, want) in table {
        let dir = find_dir(&root, name)
            .ok_or_else(|| format!("no {name} directory under {}", root.display()))?;
        let corpus = parse_semeval_xml(&dir).map_err(|e| e.to_string())?;
        let report = validate(&corpus);
        let got: Vec<usize> = Label5::ALL
            .iter()
            .map(|&l| report.count(split, l))
            .collect();
        if got != want {
            return Ok(Outcome::Fail(format!(
                "{name} {split}: {got:?}, expected {want:?}"
            )));
        }
    }
    Ok(Outcome::Pass(
        "label counts match for BEETLE train and SciEntsBank train/UA".into(),
    ))
}

fn c10_determinism() -> Check {
    let corpus = random_corpus(
        21,
        3,
        &[(Split::Train, 12), (Split::Ua, 4), (Split::Uq, 10)],
    );
    let run = || -> Result<String, String> {
        let mut out = String::new();
        let by_q = corpus.by_question(Split::Train);
        for rs in by_q.values() {
            let cat: Vec<&str> = rs
                .iter()
                .map(|r| collapse(r.label, Scheme::ThreeWay))
                .collect();
            let labeled: Vec<_> = enumerate_pairs(rs)
                .unwrap()
                .into_iter()
                .map(|k| {
                    let ia = rs.iter().position(|r| r.id == k.a_id).unwrap();
                    let ib = rs.iter().position(|r| r.id == k.b_id).unwrap();
                    let l = label_pair(cat[ia], cat[ib], LabelingStrategy::General);
                    k.with_label(l)
                })
                .collect();
            out += &format!("{:?}\n", balance(labeled, 4).pairs);
            out += &format!(
                "{:?}\n",
                build_triplets(rs, Scheme::ThreeWay, 4, TripletCap::HalfPeers).unwrap()
            );
        }
        out += &format!("{:?}\n", sample_fraction(97, 0.4, 8));
        let texts: Vec<&LabeledResponse> = corpus.split(Split::Train).iter().collect();
        let pairs: Vec<(String, String, f64)> = texts
            .windows(2)
            .map(|w| {
                (
                    w[0].text.clone(),
                    w[1].text.clone(),
                    f64::from(u8::from(w[0].label == w[1].label)),
                )
            })
            .collect();
        let base = HashEmbedder::new(32);
        let trained = train(
            &TrainConfig {
                learning_rate: 0.05,
                ..TrainConfig::default()
            },
            &TrainingData::Pairs(pairs),
            &base,
        )
        .map_err(|e| e.to_string())?;
        let bits: Vec<u64> = trained
            .trace
            .batch_losses
            .iter()
            .map(|v| v.to_bits())
            .collect();
        out += &format!(
            "{bits:?}\n{}\n",
            hex::encode(Sha256::digest(trained.adapter.to_bytes()))
        );
        let config = ExperimentConfig {
            loss: Some(LossKind::CosineSentence),
            embedding_dim: 32,
            seeds: vec![0, 1],
            train: TrainConfig {
                epochs: 1,
                learning_rate: 0.05,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        };
        out += &run_scenario(&config, &corpus, Split::Ua, &MockBackend)
            .map_err(|e| e.to_string())?
            .to_json();
        out += &rag_fraction_experiment(&config, &corpus, 0.3, Split::Uq, &MockBackend)
            .map_err(|e| e.to_string())?
            .to_json();
        Ok(out)
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "two runs with the same seeds differ".into())?;
    Ok(Outcome::Pass(format!(
        "two runs identical ({} bytes of output compared)",
        a.len()
    )))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", c1_metrics),
        ("gradient correctness", c2_gradients),
        ("retrieval exactness", c3_retrieval),
        ("pair-mining correctness", c4_pairs),
        ("end-to-end 1-NN equivalence", c5_end_to_end),
        ("template fidelity", c6_templates),
        ("training efficacy", c7_training),
        ("optimizer monotonicity", c8_optimizer),
        ("dataset label counts", c9_dataset),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(o)) => o,
            Ok(Err(msg)) => Outcome::Fail(msg),
            Err(_) => Outcome::Fail("panicked".into()),
        };
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
