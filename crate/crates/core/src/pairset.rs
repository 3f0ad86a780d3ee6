//! Pair and triplet training sets for the embedding adapter.
//!
//! Pairs are mined within a question only. Every unordered pair of
//! responses is labeled under a strict or general rule, then the negatives
//! are down-sampled to the number of positives. Triplets use each response
//! as an anchor with round-robin positives and negatives.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{collapse, Corpus, LabeledResponse, Scheme, Split, INCORRECT};
use crate::derive_seed;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairsetError {
    #[error("responses span several questions ({first:?} and {other:?})")]
    MixedQuestions { first: String, other: String },
    #[error("response id {0:?} appears twice")]
    DuplicateResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelingStrategy {
    Strict,
    General,
}

impl FromStr for LabelingStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(LabelingStrategy::Strict),
            "general" => Ok(LabelingStrategy::General),
            _ => Err(format!("unknown labeling strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    QuestionSpecific,
    Global,
}

impl FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "question" | "question_specific" => Ok(Scope::QuestionSpecific),
            "global" => Ok(Scope::Global),
            _ => Err(format!("unknown scope {s:?} (expected question or global)")),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::QuestionSpecific => "question",
            Scope::Global => "global",
        })
    }
}

/// Unordered, unlabeled response pair with `a_id < b_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub a_id: String,
    pub b_id: String,
    pub question_id: String,
}

impl PairKey {
    fn new(x: &str, y: &str, question_id: &str) -> Self {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        PairKey {
            a_id: a.into(),
            b_id: b.into(),
            question_id: question_id.into(),
        }
    }

    pub fn with_label(self, label: u8) -> AnswerPair {
        AnswerPair {
            a_id: self.a_id,
            b_id: self.b_id,
            question_id: self.question_id,
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnswerPair {
    #[serde(rename = "a")]
    pub a_id: String,
    #[serde(rename = "b")]
    pub b_id: String,
    pub label: u8,
    #[serde(rename = "qid")]
    pub question_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerTriplet {
    #[serde(rename = "anchor")]
    pub anchor_id: String,
    #[serde(rename = "pos")]
    pub positive_id: String,
    #[serde(rename = "neg")]
    pub negative_id: String,
    #[serde(rename = "qid")]
    pub question_id: String,
}

fn check_single_question<R: Borrow<LabeledResponse>>(responses: &[R]) -> Result<(), PairsetError> {
    let Some(first) = responses.first() else {
        return Ok(());
    };
    let qid = &first.borrow().question_id;
    let mut ids = HashSet::new();
    for r in responses {
        let r = r.borrow();
        if &r.question_id != qid {
            return Err(PairsetError::MixedQuestions {
                first: qid.clone(),
                other: r.question_id.clone(),
            });
        }
        if !ids.insert(r.id.as_str()) {
            return Err(PairsetError::DuplicateResponse(r.id.clone()));
        }
    }
    Ok(())
}

/// All `n(n-1)/2` unordered pairs of responses to one question.
pub fn enumerate_pairs<R: Borrow<LabeledResponse>>(
    responses: &[R],
) -> Result<Vec<PairKey>, PairsetError> {
    check_single_question(responses)?;
    let Some(first) = responses.first() else {
        return Ok(Vec::new());
    };
    let qid = &first.borrow().question_id;
    let mut pairs = Vec::with_capacity(responses.len() * responses.len().saturating_sub(1) / 2);
    for (i, x) in responses.iter().enumerate() {
        for y in &responses[i + 1..] {
            pairs.push(PairKey::new(&x.borrow().id, &y.borrow().id, qid));
        }
    }
    Ok(pairs)
}

/// Binary similarity label of a pair given the two collapsed categories.
///
/// Strict: 1 only when both are `correct` or both are `incorrect`.
/// General: 1 whenever the categories match.
pub fn label_pair(a: &str, b: &str, strategy: LabelingStrategy) -> u8 {
    let same = a == b;
    let privileged = a == "correct" || a == INCORRECT;
    match strategy {
        LabelingStrategy::General => same as u8,
        LabelingStrategy::Strict => (same && privileged) as u8,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalancedPairs {
    pub pairs: Vec<AnswerPair>,
    pub positives: usize,
    pub negatives: usize,
    /// Fewer negatives than positives were available.
    pub imbalanced: bool,
}

/// Keep every positive pair and a uniform sample (without replacement) of
/// as many negatives. Relative input order is preserved.
pub fn balance(pairs: Vec<AnswerPair>, seed: u64) -> BalancedPairs {
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    if positives == 0 {
        return BalancedPairs {
            pairs: Vec::new(),
            positives: 0,
            negatives: 0,
            imbalanced: false,
        };
    }
    let negative_slots: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.label != 1)
        .map(|(i, _)| i)
        .collect();
    let imbalanced = negative_slots.len() < positives;
    let mut keep = vec![false; pairs.len()];
    for (i, p) in pairs.iter().enumerate() {
        keep[i] = p.label == 1;
    }
    if imbalanced {
        for &i in &negative_slots {
            keep[i] = true;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in index::sample(&mut rng, negative_slots.len(), positives) {
            keep[negative_slots[j]] = true;
        }
    }
    let kept: Vec<AnswerPair> = pairs
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect();
    let negatives = kept.len() - positives;
    BalancedPairs {
        pairs: kept,
        positives,
        negatives,
        imbalanced,
    }
}

/// How many triplets a single anchor may produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletCap {
    /// `max(1, floor(peers / 2))`.
    #[default]
    HalfPeers,
    Fixed(usize),
}

impl TripletCap {
    pub fn for_peers(self, peers: usize) -> usize {
        match self {
            TripletCap::HalfPeers => (peers / 2).max(1),
            TripletCap::Fixed(n) => n.max(1),
        }
    }
}

/// Anchor/positive/negative triplets for one question.
///
/// Anchors are taken in input order. The same-category and other-category
/// pools are shuffled once under `seed`; each anchor then walks its pools
/// round-robin from per-category cursors that carry over between anchors.
/// Within an anchor, step `k` picks positive `k mod P` and negative
/// `(k / P + k mod P) mod N` (both offset by the cursors), which never repeats a
/// (positive, negative) combination for `k < P·N`.
pub fn build_triplets<R: Borrow<LabeledResponse>>(
    responses: &[R],
    scheme: Scheme,
    seed: u64,
    cap: TripletCap,
) -> Result<Vec<AnswerTriplet>, PairsetError> {
    check_single_question(responses)?;
    let cats: Vec<&'static str> = responses
        .iter()
        .map(|r| collapse(r.borrow().label, scheme))
        .collect();
    let mut categories: Vec<&'static str> = cats.clone();
    categories.sort_unstable();
    categories.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for &c in &categories {
        let mut same: Vec<usize> = (0..responses.len()).filter(|&i| cats[i] == c).collect();
        let mut other: Vec<usize> = (0..responses.len()).filter(|&i| cats[i] != c).collect();
        same.shuffle(&mut rng);
        other.shuffle(&mut rng);
        pools.insert(c, (same, other));
    }
    let mut cursors: BTreeMap<&str, (usize, usize)> = BTreeMap::new();

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (a, anchor) in responses.iter().enumerate() {
        let anchor = anchor.borrow();
        let (same, other) = &pools[cats[a]];
        let peers: Vec<usize> = same.iter().copied().filter(|&i| i != a).collect();
        if peers.is_empty() || other.is_empty() {
            continue;
        }
        let (p_len, n_len) = (peers.len(), other.len());
        let limit = cap.for_peers(p_len).min(p_len * n_len);
        let cursor = cursors.entry(cats[a]).or_insert((0, 0));
        for k in 0..limit {
            let p = peers[(cursor.0 + k) % p_len];
            let n = other[(cursor.1 + k / p_len + k % p_len) % n_len];
            let t = AnswerTriplet {
                anchor_id: anchor.id.clone(),
                positive_id: responses[p].borrow().id.clone(),
                negative_id: responses[n].borrow().id.clone(),
                question_id: anchor.question_id.clone(),
            };
            if seen.insert(t.clone()) {
                out.push(t);
            }
        }
        cursor.0 = (cursor.0 + limit) % p_len.max(1);
        cursor.1 = (cursor.1 + limit) % n_len.max(1);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairsetConfig {
    pub scheme: Scheme,
    pub strategy: LabelingStrategy,
    pub scope: Scope,
    pub seed: u64,
    #[serde(default)]
    pub triplet_cap: TripletCap,
}

/// Training units for one adapter: one question, or all of them merged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingGroup {
    /// Question id, or `None` for the merged global group.
    pub question_id: Option<String>,
    pub pairs: Vec<AnswerPair>,
    pub triplets: Vec<AnswerTriplet>,
    pub imbalanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairsetManifest {
    pub corpus: String,
    pub scheme: Scheme,
    pub strategy: LabelingStrategy,
    pub scope: Scope,
    pub seed: u64,
    pub triplet_cap: TripletCap,
    pub questions: usize,
    pub pairs: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub triplets: usize,
    pub imbalanced_questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSets {
    pub manifest: PairsetManifest,
    pub groups: Vec<TrainingGroup>,
}

impl TrainingSets {
    pub fn all_pairs(&self) -> impl Iterator<Item = &AnswerPair> {
        self.groups.iter().flat_map(|g| g.pairs.iter())
    }

    pub fn all_triplets(&self) -> impl Iterator<Item = &AnswerTriplet> {
        self.groups.iter().flat_map(|g| g.triplets.iter())
    }

    pub fn pairs_jsonl(&self) -> String {
        self.all_pairs()
            .map(|p| serde_json::to_string(p).expect("pair serializes") + "\n")
            .collect()
    }

    pub fn triplets_jsonl(&self) -> String {
        self.all_triplets()
            .map(|t| serde_json::to_string(t).expect("triplet serializes") + "\n")
            .collect()
    }
}

/// Mine the training split question by question. Each question gets its
/// own seed derived from `config.seed` and the question id, so results do
/// not depend on iteration order. The global scope concatenates the
/// per-question balanced sets.
pub fn build_training_sets(corpus: &Corpus, config: &PairsetConfig) -> TrainingSets {
    let mut per_question = Vec::new();
    for (qid, responses) in corpus.by_question(Split::Train) {
        let qseed = derive_seed(config.seed, qid);
        let labeled: Vec<AnswerPair> = enumerate_pairs(&responses)
            .expect("grouped by question with unique ids")
            .into_iter()
            .map(|key| {
                let a = responses
                    .iter()
                    .find(|r| r.id == key.a_id)
                    .expect("pair member");
                let b = responses
                    .iter()
                    .find(|r| r.id == key.b_id)
                    .expect("pair member");
                let label = label_pair(
                    collapse(a.label, config.scheme),
                    collapse(b.label, config.scheme),
                    config.strategy,
                );
                key.with_label(label)
            })
            .collect();
        let balanced = balance(labeled, qseed);
        let triplets = build_triplets(
            &responses,
            config.scheme,
            qseed ^ 0x7472_6970,
            config.triplet_cap,
        )
        .expect("grouped by question with unique ids");
        per_question.push(TrainingGroup {
            question_id: Some(qid.to_string()),
            pairs: balanced.pairs,
            triplets,
            imbalanced: balanced.imbalanced,
        });
    }

    let imbalanced_questions = per_question
        .iter()
        .filter(|g| g.imbalanced)
        .filter_map(|g| g.question_id.clone())
        .collect();
    let questions = per_question.len();
    let groups = match config.scope {
        Scope::QuestionSpecific => per_question,
        Scope::Global => {
            let mut merged = TrainingGroup {
                question_id: None,
                pairs: vec![],
                triplets: vec![],
                imbalanced: false,
            };
            for g in per_question {
                merged.pairs.extend(g.pairs);
                merged.triplets.extend(g.triplets);
                merged.imbalanced |= g.imbalanced;
            }
            vec![merged]
        }
    };
    let pairs: usize = groups.iter().map(|g| g.pairs.len()).sum();
    let positive_pairs = groups
        .iter()
        .flat_map(|g| &g.pairs)
        .filter(|p| p.label == 1)
        .count();
    let manifest = PairsetManifest {
        corpus: corpus.name().to_string(),
        scheme: config.scheme,
        strategy: config.strategy,
        scope: config.scope,
        seed: config.seed,
        triplet_cap: config.triplet_cap,
        questions,
        pairs,
        positive_pairs,
        negative_pairs: pairs - positive_pairs,
        triplets: groups.iter().map(|g| g.triplets.len()).sum(),
        imbalanced_questions,
    };
    TrainingSets { manifest, groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label5;

    fn r(id: &str, label: Label5) -> LabeledResponse {
        LabeledResponse {
            id: id.into(),
            question_id: "q".into(),
            text: id.into(),
            label,
        }
    }

    fn pair(a: &str, b: &str, label: u8) -> AnswerPair {
        AnswerPair {
            a_id: a.into(),
            b_id: b.into(),
            label,
            question_id: "q".into(),
        }
    }

    #[test]
    fn enumeration_counts() {
        let rs: Vec<_> = (0..4)
            .map(|i| r(&format!("r{i}"), Label5::Correct))
            .collect();
        assert_eq!(enumerate_pairs(&rs).unwrap().len(), 6);
        assert_eq!(enumerate_pairs(&rs[..1]).unwrap().len(), 0);
        assert!(enumerate_pairs::<LabeledResponse>(&[]).unwrap().is_empty());
    }

    #[test]
    fn ten_responses_match_nested_loop_oracle() {
        // Ids deliberately out of lexical order.
        let rs: Vec<_> = (0..10)
            .map(|i| r(&format!("r{}", (i * 7) % 10), Label5::Correct))
            .collect();
        let got: HashSet<_> = enumerate_pairs(&rs).unwrap().into_iter().collect();
        let mut oracle = HashSet::new();
        for x in &rs {
            for y in &rs {
                if x.id < y.id {
                    oracle.insert((x.id.clone(), y.id.clone()));
                }
            }
        }
        assert_eq!(got.len(), 45);
        let got_ids: HashSet<_> = got
            .iter()
            .map(|p| (p.a_id.clone(), p.b_id.clone()))
            .collect();
        assert_eq!(got_ids, oracle);
    }

    #[test]
    fn mixed_questions_rejected() {
        let mut rs = vec![r("a", Label5::Correct), r("b", Label5::Correct)];
        rs[1].question_id = "other".into();
        assert!(matches!(
            enumerate_pairs(&rs),
            Err(PairsetError::MixedQuestions { .. })
        ));
        assert!(build_triplets(&rs, Scheme::TwoWay, 0, TripletCap::HalfPeers).is_err());
    }

    #[test]
    fn labeling_rules() {
        use LabelingStrategy::*;
        for s in [Strict, General] {
            assert_eq!(label_pair("correct", "correct", s), 1);
            assert_eq!(label_pair("correct", "incorrect", s), 0);
        }
        assert_eq!(label_pair("contradictory", "contradictory", Strict), 0);
        assert_eq!(label_pair("contradictory", "contradictory", General), 1);
        assert_eq!(label_pair("incorrect", "incorrect", Strict), 1);
        // Under 5-way only `correct` is privileged.
        let irr = collapse(Label5::Irrelevant, Scheme::FiveWay);
        assert_eq!(label_pair(irr, irr, Strict), 0);
        assert_eq!(label_pair(irr, irr, General), 1);
    }

    #[test]
    fn balance_downsamples_negatives() {
        let mut pairs: Vec<_> = (0..3).map(|i| pair(&format!("p{i}"), "z", 1)).collect();
        pairs.extend((0..10).map(|i| pair(&format!("n{i:02}"), "z", 0)));
        let b = balance(pairs.clone(), 5);
        assert_eq!(b.pairs.len(), 6);
        assert_eq!((b.positives, b.negatives), (3, 3));
        assert!(!b.imbalanced);
        assert_eq!(balance(pairs, 5), b);
    }

    #[test]
    fn balance_edge_cases() {
        let zeros: Vec<_> = (0..4).map(|i| pair(&format!("n{i}"), "z", 0)).collect();
        assert!(balance(zeros, 1).pairs.is_empty());

        let mut few = vec![pair("a", "b", 1), pair("a", "c", 1), pair("a", "d", 1)];
        few.push(pair("b", "c", 0));
        let b = balance(few, 1);
        assert!(b.imbalanced);
        assert_eq!(b.pairs.len(), 4);
    }

    #[test]
    fn balance_is_seeded() {
        let mut pairs: Vec<_> = (0..100)
            .map(|i| pair(&format!("p{i:03}"), "z", 1))
            .collect();
        pairs.extend((0..400).map(|i| pair(&format!("n{i:03}"), "z", 0)));
        let a = balance(pairs.clone(), 42);
        let b = balance(pairs.clone(), 42);
        assert_eq!(a.pairs.len(), 200);
        assert_eq!(a, b);
        assert_ne!(a, balance(pairs, 43));
    }

    #[test]
    fn triplets_forced_structure() {
        let rs = vec![
            r("c1", Label5::Correct),
            r("c2", Label5::Correct),
            r("x", Label5::Irrelevant),
        ];
        let ts = build_triplets(&rs, Scheme::TwoWay, 9, TripletCap::HalfPeers).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(
            (
                ts[0].anchor_id.as_str(),
                ts[0].positive_id.as_str(),
                ts[0].negative_id.as_str()
            ),
            ("c1", "c2", "x")
        );
        assert_eq!(
            (
                ts[1].anchor_id.as_str(),
                ts[1].positive_id.as_str(),
                ts[1].negative_id.as_str()
            ),
            ("c2", "c1", "x")
        );

        let same = vec![r("a", Label5::Correct), r("b", Label5::Correct)];
        assert!(
            build_triplets(&same, Scheme::TwoWay, 9, TripletCap::HalfPeers)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn fixed_cap_exhausts_combinations_without_repeats() {
        let rs = vec![
            r("c1", Label5::Correct),
            r("c2", Label5::Correct),
            r("c3", Label5::Correct),
            r("i1", Label5::NonDomain),
            r("i2", Label5::Irrelevant),
        ];
        let ts = build_triplets(&rs, Scheme::TwoWay, 3, TripletCap::Fixed(100)).unwrap();
        // Each correct anchor: 2 peers x 2 negatives; each incorrect anchor: 1 x 3.
        assert_eq!(ts.len(), 3 * 4 + 2 * 3);
        let unique: HashSet<_> = ts.iter().collect();
        assert_eq!(unique.len(), ts.len());
    }

    #[test]
    fn global_is_concatenation_of_question_sets() {
        use crate::corpus::Question;
        let mk = |id: &str, q: &str, l| LabeledResponse {
            id: id.into(),
            question_id: q.into(),
            text: id.into(),
            label: l,
        };
        let train = vec![
            mk("a1", "qa", Label5::Correct),
            mk("a2", "qa", Label5::Correct),
            mk("a3", "qa", Label5::Irrelevant),
            mk("a4", "qa", Label5::Contradictory),
            mk("b1", "qb", Label5::Correct),
            mk("b2", "qb", Label5::NonDomain),
            mk("b3", "qb", Label5::NonDomain),
        ];
        let qs = ["qa", "qb"]
            .iter()
            .map(|q| Question {
                id: q.to_string(),
                text: "t".into(),
                reference_answers: vec![],
            })
            .collect();
        let corpus = Corpus::new("c", qs, BTreeMap::from([(Split::Train, train)])).unwrap();
        let mut cfg = PairsetConfig {
            scheme: Scheme::ThreeWay,
            strategy: LabelingStrategy::General,
            scope: Scope::QuestionSpecific,
            seed: 11,
            triplet_cap: TripletCap::HalfPeers,
        };
        let per_q = build_training_sets(&corpus, &cfg);
        cfg.scope = Scope::Global;
        let global = build_training_sets(&corpus, &cfg);
        assert_eq!(per_q.groups.len(), 2);
        assert_eq!(global.groups.len(), 1);
        let concat: Vec<_> = per_q.all_pairs().cloned().collect();
        assert_eq!(global.groups[0].pairs, concat);
        assert!(global.all_pairs().all(|p| p.a_id[..1] == p.b_id[..1]));
        assert_eq!(global.manifest.pairs, per_q.manifest.pairs);
    }
}
