//! Shared fixtures and independent oracles for the integration and
//! acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ragscore::corpus::{
    collapse, parse_jsonl, Corpus, Label5, LabeledResponse, Question, Scheme, Split,
};
use ragscore::embed::{EmbeddingAdapter, HashEmbedder, TextEmbedder};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn tiny() -> Corpus {
    parse_jsonl(fixture("tiny.jsonl")).expect("tiny fixture parses")
}

pub fn question(id: &str, text: &str) -> Question {
    Question {
        id: id.into(),
        text: text.into(),
        reference_answers: vec![format!("reference for {id}")],
    }
}

pub fn response(id: &str, qid: &str, text: &str, label: Label5) -> LabeledResponse {
    LabeledResponse {
        id: id.into(),
        question_id: qid.into(),
        text: text.into(),
        label,
    }
}

fn word(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect()
}

/// Random corpus with `questions` questions per question group and the
/// given number of responses per question in each split. Train and UA share
/// one group; UQ and UD each get their own. Answers draw from a small shared
/// vocabulary so retrieval has real neighbours and exact ties.
pub fn random_corpus(seed: u64, questions: usize, per_split: &[(Split, usize)]) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..24).map(|_| word(&mut rng, 5)).collect();
    let group = |split: Split| match split {
        Split::Uq => "u",
        Split::Ud => "d",
        _ => "q",
    };
    let mut qs: BTreeMap<String, Question> = BTreeMap::new();
    let mut splits: BTreeMap<Split, Vec<LabeledResponse>> = BTreeMap::new();
    for &(split, n) in per_split {
        for qi in 0..questions {
            let qid = format!("{}{qi}", group(split));
            qs.entry(qid.clone())
                .or_insert_with(|| question(&qid, &format!("question {qid}")));
            for j in 0..n {
                let len = rng.random_range(2..6);
                let text: Vec<&str> = (0..len)
                    .map(|_| vocab[rng.random_range(0..vocab.len())].as_str())
                    .collect();
                let label = Label5::ALL[rng.random_range(0..5)];
                splits.entry(split).or_default().push(response(
                    &format!("{qid}.{split}.{j}"),
                    &qid,
                    &text.join(" "),
                    label,
                ));
            }
        }
    }
    Corpus::new(format!("random-{seed}"), qs.into_values().collect(), splits)
        .expect("valid random corpus")
}

/// Independent 1-nearest-neighbour classifier over `entries` in insertion
/// order. Each entry is embedded under its own question and rounded to f32,
/// as stored rows are; the first maximum wins. `None` when no candidate
/// passes the question filter.
pub fn one_nn(
    entries: &[&LabeledResponse],
    embedder: &dyn TextEmbedder,
    query: &LabeledResponse,
    same_question: bool,
    scheme: Scheme,
) -> Option<&'static str> {
    let x = embedder
        .embed_answer(&query.text, Some(&query.question_id))
        .unwrap();
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        if same_question && e.question_id != query.question_id {
            continue;
        }
        let v = embedder
            .embed_answer(&e.text, Some(&e.question_id))
            .unwrap();
        let s: f64 = v
            .iter()
            .zip(x.iter())
            .map(|(a, b)| f64::from(*a as f32) * b)
            .sum();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| collapse(entries[i].label, scheme))
}

/// Brute-force per-class statistics from flat gold/prediction lists.
pub struct BruteMetrics {
    pub acc: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

pub fn brute_metrics(gold: &[usize], pred: &[usize], n: usize) -> BruteMetrics {
    let total = gold.len() as f64;
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64;
    let mut f1s = Vec::new();
    let mut weighted = 0.0;
    for c in 0..n {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (g, p) in gold.iter().zip(pred) {
            if *p == c && *g == c {
                tp += 1.0;
            } else if *p == c {
                fp += 1.0;
            } else if *g == c {
                fneg += 1.0;
            }
        }
        if tp + fp + fneg == 0.0 {
            continue;
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 {
            tp / (tp + fneg)
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1s.push(f1);
        weighted += (tp + fneg) / total * f1;
    }
    BruteMetrics {
        acc: correct / total,
        macro_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        weighted_f1: weighted,
    }
}

/// Two-class synthetic texts: each holds a few class-specific signal words
/// buried among shared noise words, so the raw hash embedding is dominated
/// by noise while a linear map emphasising the signal features separates
/// the classes.
pub struct TwoClusters {
    pub train: Vec<(String, usize)>,
    pub queries: Vec<(String, usize)>,
}

pub fn two_clusters(seed: u64, train_per_class: usize, queries_per_class: usize) -> TwoClusters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal: Vec<Vec<String>> = (0..2)
        .map(|_| (0..4).map(|_| word(&mut rng, 6)).collect())
        .collect();
    let noise: Vec<String> = (0..30).map(|_| word(&mut rng, 6)).collect();
    let make = |class: usize, rng: &mut ChaCha8Rng| {
        let mut words: Vec<String> = vec![signal[class][rng.random_range(0..4)].clone()];
        for _ in 0..6 {
            words.push(noise[rng.random_range(0..noise.len())].clone());
        }
        words.shuffle(rng);
        words.join(" ")
    };
    let mut train = Vec::new();
    let mut queries = Vec::new();
    for class in 0..2 {
        for _ in 0..train_per_class {
            train.push((make(class, &mut rng), class));
        }
        for _ in 0..queries_per_class {
            queries.push((make(class, &mut rng), class));
        }
    }
    TwoClusters { train, queries }
}

/// Mean fraction of same-class items among each query's 5 nearest training
/// texts under `adapter`.
pub fn precision_at_5(base: &HashEmbedder, adapter: &EmbeddingAdapter, data: &TwoClusters) -> f64 {
    let embed = |t: &str| adapter.embed(base, t).unwrap();
    let store: Vec<_> = data.train.iter().map(|(t, c)| (embed(t), *c)).collect();
    let mut total = 0.0;
    for (q, class) in &data.queries {
        let x = embed(q);
        let mut scored: Vec<(f64, usize, usize)> = store
            .iter()
            .enumerate()
            .map(|(i, (v, c))| (v.dot(&x), i, *c))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        total += scored.iter().take(5).filter(|s| s.2 == *class).count() as f64 / 5.0;
    }
    total / data.queries.len() as f64
}
