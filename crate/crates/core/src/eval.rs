//! Macro-averaged F1@M / F1@5 over present and absent splits, plus the
//! diversity measures.
//!
//! Matching is exact equality of Porter-stemmed token sequences, after
//! stem-level deduplication of both sides. A document whose gold set is
//! empty for a split does not contribute to that split's averages.
//!
//! Diversity is measured on the raw prediction list of each document:
//! `dup_token_ratio = 1 - unique/total` over all stemmed tokens, and
//! `emb_sim` is the mean pairwise cosine of the phrases' supplied vectors.
//! Corpus values average over documents with at least one (dup) or two
//! (emb) predictions.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpcore::{
    dedup_stemmed, split_present_absent, Document, Keyphrase, KeyphraseSet, Token,
};

pub const TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }

    fn zero() -> Self {
        Prf::default()
    }
}

fn stems_of(set: &KeyphraseSet) -> Vec<Vec<Token>> {
    dedup_stemmed(set).iter().map(Keyphrase::stemmed).collect()
}

fn prf(preds: &[Vec<Token>], gold: &KeyphraseSet, precision_denom: usize) -> Prf {
    let gold = stems_of(gold);
    if preds.is_empty() || gold.is_empty() {
        return Prf::zero();
    }
    let gold: HashSet<_> = gold.into_iter().collect();
    let hits = preds.iter().filter(|p| gold.contains(*p)).count() as f64;
    Prf::new(hits / precision_denom as f64, hits / gold.len() as f64)
}

/// Scores every (deduplicated) prediction.
pub fn f1_at_m(preds: &KeyphraseSet, gold: &KeyphraseSet) -> Prf {
    let p = stems_of(preds);
    let n = p.len();
    prf(&p, gold, n)
}

/// Scores the first five deduplicated predictions; precision always
/// divides by five.
pub fn f1_at_5(preds: &KeyphraseSet, gold: &KeyphraseSet) -> Prf {
    let mut p = stems_of(preds);
    p.truncate(TOP_K);
    prf(&p, gold, TOP_K)
}

pub fn dup_token_ratio(preds: &KeyphraseSet) -> f64 {
    let tokens: Vec<_> = preds.iter().flat_map(Keyphrase::stemmed).collect();
    if tokens.is_empty() {
        return 0.0;
    }
    let unique: HashSet<_> = tokens.iter().collect();
    1.0 - unique.len() as f64 / tokens.len() as f64
}

/// Phrase vectors keyed by the phrase's normalized surface (tokens joined
/// by single spaces).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Embeddings {
    vectors: HashMap<String, Vec<f64>>,
}

impl Embeddings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts under the normalized key; a repeated phrase overwrites.
    pub fn insert(&mut self, phrase: &str, vector: Vec<f64>) -> Result<()> {
        let key = Keyphrase::parse(phrase).ok_or_else(|| {
            Error::InvalidInput(format!("embedding phrase {phrase:?} has no tokens"))
        })?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite embedding for {phrase:?}"
            )));
        }
        self.vectors.insert(key.to_string(), vector);
        Ok(())
    }

    pub fn get(&self, phrase: &Keyphrase) -> Option<&[f64]> {
        self.vectors.get(&phrase.to_string()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Mean cosine similarity over unordered prediction pairs; 0 with fewer
/// than two predictions.
pub fn emb_sim(preds: &KeyphraseSet, embeddings: &Embeddings) -> Result<f64> {
    let vecs = preds
        .iter()
        .map(|p| {
            embeddings
                .get(p)
                .ok_or_else(|| Error::MissingEmbedding(p.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = vecs.first() {
        if let Some(bad) = vecs.iter().find(|v| v.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: bad.len(),
            });
        }
    }
    if vecs.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            total += cosine(vecs[i], vecs[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone)]
pub struct GoldDoc {
    pub id: String,
    pub doc: Document,
    pub gold: KeyphraseSet,
}

#[derive(Debug, Clone)]
pub struct PredDoc {
    pub id: String,
    pub preds: KeyphraseSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitReport {
    pub docs: usize,
    pub at_m: Prf,
    pub at_5: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub dup_token_ratio: f64,
    pub emb_sim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub docs: usize,
    pub present: SplitReport,
    pub absent: SplitReport,
    pub diversity: DiversityReport,
}

#[derive(Default)]
struct DocScores {
    present: Option<(Prf, Prf)>,
    absent: Option<(Prf, Prf)>,
    dup: Option<f64>,
    emb: Option<f64>,
}

fn score_document(g: &GoldDoc, p: &PredDoc, embeddings: Option<&Embeddings>) -> Result<DocScores> {
    let (gold_p, gold_a) = split_present_absent(&g.doc, &g.gold);
    let (pred_p, pred_a) = split_present_absent(&g.doc, &p.preds);
    let split = |preds: &KeyphraseSet, gold: &KeyphraseSet| {
        (!gold.is_empty()).then(|| (f1_at_m(preds, gold), f1_at_5(preds, gold)))
    };
    let emb = match embeddings {
        Some(e) if p.preds.len() >= 2 => Some(emb_sim(&p.preds, e)?),
        _ => None,
    };
    Ok(DocScores {
        present: split(&pred_p, &gold_p),
        absent: split(&pred_a, &gold_a),
        dup: (!p.preds.is_empty()).then(|| dup_token_ratio(&p.preds)),
        emb,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn macro_prf(scores: &[Prf]) -> Prf {
    if scores.is_empty() {
        return Prf::zero();
    }
    let n = scores.len() as f64;
    Prf {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

fn split_report<'a>(per_doc: impl Iterator<Item = &'a (Prf, Prf)>) -> SplitReport {
    let (m, five): (Vec<Prf>, Vec<Prf>) = per_doc.copied().unzip();
    SplitReport {
        docs: m.len(),
        at_m: macro_prf(&m),
        at_5: macro_prf(&five),
    }
}

/// Pairs predictions with gold by position; ids must agree.
pub fn evaluate_corpus(
    preds: &[PredDoc],
    gold: &[GoldDoc],
    embeddings: Option<&Embeddings>,
) -> Result<EvalReport> {
    if gold.is_empty() && preds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for position in 0..gold.len().max(preds.len()) {
        let left = gold.get(position).map_or("<missing>", |g| g.id.as_str());
        let right = preds.get(position).map_or("<missing>", |p| p.id.as_str());
        if left != right {
            return Err(Error::AlignmentError {
                position,
                left: left.to_string(),
                right: right.to_string(),
            });
        }
    }
    let scores = gold
        .par_iter()
        .zip(preds.par_iter())
        .map(|(g, p)| score_document(g, p, embeddings))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        docs: gold.len(),
        present: split_report(scores.iter().filter_map(|s| s.present.as_ref())),
        absent: split_report(scores.iter().filter_map(|s| s.absent.as_ref())),
        diversity: DiversityReport {
            dup_token_ratio: mean(scores.iter().filter_map(|s| s.dup)).unwrap_or(0.0),
            emb_sim: embeddings.map(|_| mean(scores.iter().filter_map(|s| s.emb)).unwrap_or(0.0)),
        },
    })
}

impl EvalReport {
    /// Fixed-width plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "split", "docs", "P@M", "R@M", "F1@M", "P@5", "R@5", "F1@5"
        );
        for (name, s) in [("present", &self.present), ("absent", &self.absent)] {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                name,
                s.docs,
                s.at_m.precision,
                s.at_m.recall,
                s.at_m.f1,
                s.at_5.precision,
                s.at_5.recall,
                s.at_5.f1
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<16} {:>8}", "documents", self.docs);
        let _ = writeln!(
            out,
            "{:<16} {:>8.4}",
            "dup_token_ratio", self.diversity.dup_token_ratio
        );
        match self.diversity.emb_sim {
            Some(v) => {
                let _ = writeln!(out, "{:<16} {:>8.4}", "emb_sim", v);
            }
            None => {
                let _ = writeln!(out, "{:<16} {:>8}", "emb_sim", "n/a");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kpcore::SetKind;

    fn set(texts: &[&str]) -> KeyphraseSet {
        KeyphraseSet::from_strings(texts, SetKind::Predicted)
    }

    fn gold(texts: &[&str]) -> KeyphraseSet {
        KeyphraseSet::from_strings(texts, SetKind::Gold)
    }

    #[test]
    fn f1_at_m_examples() {
        assert_eq!(
            f1_at_m(&set(&["a", "b"]), &gold(&["a", "c"])),
            Prf::new(0.5, 0.5)
        );
        assert_eq!(f1_at_m(&set(&["a", "b"]), &gold(&["a", "c"])).f1, 0.5);
        assert_eq!(f1_at_m(&set(&["x y", "z"]), &gold(&["z", "x y"])).f1, 1.0);
        assert_eq!(f1_at_m(&set(&["dogs"]), &gold(&["dog"])).f1, 1.0);
        assert_eq!(f1_at_m(&set(&[]), &gold(&["dog"])), Prf::zero());
    }

    #[test]
    fn f1_at_m_dedups_predictions() {
        let p = f1_at_m(&set(&["dog", "dogs", "cat"]), &gold(&["dog"]));
        assert_eq!(p.precision, 0.5);
        assert_eq!(p.recall, 1.0);
    }

    #[test]
    fn f1_at_5_examples() {
        let p = f1_at_5(&set(&["a", "b"]), &gold(&["a", "b", "c", "d"]));
        assert_eq!((p.precision, p.recall), (0.4, 0.5));
        let all = ["a", "b", "c", "d", "e"];
        assert_eq!(
            f1_at_5(&set(&["a", "b", "c", "d", "e", "x"]), &gold(&all)).f1,
            1.0
        );
        assert_eq!(f1_at_5(&set(&[]), &gold(&all)), Prf::zero());
    }

    #[test]
    fn dup_ratio_examples() {
        assert_eq!(
            dup_token_ratio(&set(&["safe problem", "safe hazard"])),
            0.25
        );
        assert_eq!(dup_token_ratio(&set(&["a b", "c"])), 0.0);
        assert_eq!(dup_token_ratio(&set(&["a b", "a b"])), 0.5);
        assert_eq!(dup_token_ratio(&set(&[])), 0.0);
    }

    fn embeddings(pairs: &[(&str, Vec<f64>)]) -> Embeddings {
        let mut e = Embeddings::new();
        for (p, v) in pairs {
            e.insert(p, v.clone()).unwrap();
        }
        e
    }

    #[test]
    fn emb_sim_examples() {
        let e = embeddings(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![1.0, 0.0]),
            ("c", vec![0.0, 1.0]),
            ("d", vec![0.0, 1.0, 0.0]),
        ]);
        assert_eq!(emb_sim(&set(&["a", "b"]), &e).unwrap(), 1.0);
        assert_eq!(emb_sim(&set(&["a", "c"]), &e).unwrap(), 0.0);
        assert!((emb_sim(&set(&["a", "b", "c"]), &e).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(emb_sim(&set(&["a"]), &e).unwrap(), 0.0);
        assert!(matches!(
            emb_sim(&set(&["a", "zz"]), &e),
            Err(Error::MissingEmbedding(_))
        ));
        assert!(matches!(
            emb_sim(&set(&["a", "d"]), &e),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn gold_doc(id: &str, doc: &str, g: &[&str]) -> GoldDoc {
        GoldDoc {
            id: id.into(),
            doc: Document::new(doc),
            gold: gold(g),
        }
    }

    fn pred_doc(id: &str, p: &[&str]) -> PredDoc {
        PredDoc {
            id: id.into(),
            preds: set(p),
        }
    }

    #[test]
    fn single_document_report() {
        let g = [gold_doc("1", "the dog ate", &["dog", "cat"])];
        let p = [pred_doc("1", &["dogs", "bird"])];
        let r = evaluate_corpus(&p, &g, None).unwrap();
        assert_eq!(r.present.at_m, f1_at_m(&set(&["dogs"]), &gold(&["dog"])));
        assert_eq!(r.absent.at_m, f1_at_m(&set(&["bird"]), &gold(&["cat"])));
        assert_eq!(r.present.docs, 1);
        assert_eq!(r.diversity.emb_sim, None);
    }

    #[test]
    fn corpus_errors() {
        assert!(matches!(
            evaluate_corpus(&[], &[], None),
            Err(Error::EmptyCorpus)
        ));
        let g = [gold_doc("1", "d", &["d"])];
        assert!(matches!(
            evaluate_corpus(&[pred_doc("2", &["d"])], &g, None),
            Err(Error::AlignmentError { position: 0, .. })
        ));
        assert!(matches!(
            evaluate_corpus(&[], &g, None),
            Err(Error::AlignmentError { .. })
        ));
    }

    #[test]
    fn empty_gold_split_excluded() {
        let g = [
            gold_doc("1", "dog", &["dog"]),
            gold_doc("2", "cat", &["cat"]),
        ];
        let p = [pred_doc("1", &["dog"]), pred_doc("2", &[])];
        let r = evaluate_corpus(&p, &g, None).unwrap();
        assert_eq!(r.present.docs, 2);
        assert_eq!(r.present.at_m.f1, 0.5);
        assert_eq!(r.absent.docs, 0);
        assert_eq!(r.absent.at_m, Prf::zero());
    }

    #[test]
    fn table_lists_both_splits() {
        let g = [gold_doc("1", "dog", &["dog"])];
        let r = evaluate_corpus(&[pred_doc("1", &["dog"])], &g, None).unwrap();
        let t = r.to_table();
        assert!(t.contains("present"));
        assert!(t.contains("absent"));
        assert!(t.contains("emb_sim               n/a"));
    }
}
