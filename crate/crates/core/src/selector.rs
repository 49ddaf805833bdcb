//! Candidate selection cast as sequence labeling: prompt rendering,
//! candidate ordering, reply parsing and label application.
//!
//! Tuning data presents candidates in a seeded random order; inference
//! presents them sorted by the generator's average log-probability.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpcore::{dedup_stemmed, Document, Keyphrase, KeyphraseSet, SetKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    T,
    F,
}

impl Label {
    fn as_char(self) -> char {
        match self {
            Label::T => 'T',
            Label::F => 'F',
        }
    }
}

/// Keep/discard decisions, one per candidate. Serialized as `"T F F"`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct LabelSequence {
    labels: Vec<Label>,
}

impl LabelSequence {
    pub fn new(labels: Vec<Label>) -> Self {
        LabelSequence { labels }
    }

    pub fn all(label: Label, n: usize) -> Self {
        LabelSequence {
            labels: vec![label; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Label> + '_ {
        self.labels.iter().copied()
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.labels
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.labels.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", l.as_char())?;
        }
        Ok(())
    }
}

impl From<LabelSequence> for String {
    fn from(s: LabelSequence) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for LabelSequence {
    type Error = Error;

    /// Strict inverse of `Display`: only `T`/`F` separated by whitespace.
    fn try_from(s: String) -> Result<Self> {
        s.split_whitespace()
            .map(|w| match w {
                "T" => Ok(Label::T),
                "F" => Ok(Label::F),
                other => Err(Error::InvalidInput(format!("bad label {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(LabelSequence::new)
    }
}

/// A generator output offered to the selector.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub phrase: Keyphrase,
    pub avg_logprob: f64,
    pub source_code: usize,
}

impl Candidate {
    pub fn new(phrase: Keyphrase, avg_logprob: f64, source_code: usize) -> Result<Self> {
        if avg_logprob.is_nan() || avg_logprob > 0.0 {
            return Err(Error::InvalidInput(format!(
                "candidate {phrase} has avg_logprob {avg_logprob}, expected <= 0"
            )));
        }
        Ok(Candidate {
            phrase,
            avg_logprob,
            source_code,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingMode {
    Random { seed: u64 },
    SortedByQuality,
}

impl FromStr for OrderingMode {
    type Err = Error;

    /// Accepts `sorted` or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "sorted" {
            return Ok(OrderingMode::SortedByQuality);
        }
        s.strip_prefix("random:")
            .and_then(|seed| seed.parse().ok())
            .map(|seed| OrderingMode::Random { seed })
            .ok_or_else(|| {
                Error::InvalidInput(format!("ordering {s:?}: expected sorted or random:<seed>"))
            })
    }
}

/// Presentation order as indices into `cands`.
pub fn order_candidates(cands: &[Candidate], mode: OrderingMode) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    match mode {
        OrderingMode::SortedByQuality => {
            order.sort_by(|&a, &b| cands[b].avg_logprob.total_cmp(&cands[a].avg_logprob));
        }
        OrderingMode::Random { seed } => {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    order
}

/// Mixes an instance id into a base seed (FNV-1a), so per-instance
/// shuffles differ but stay reproducible.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(id.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Present,
    Absent,
    Scoring,
}

impl TemplateKind {
    fn header(self) -> &'static str {
        match self {
            TemplateKind::Present | TemplateKind::Absent => "### Task Definition:",
            TemplateKind::Scoring => "### Instruction:",
        }
    }

    fn instruction(self) -> &'static str {
        match self {
            TemplateKind::Present | TemplateKind::Absent => {
                "You are required to perform a sequence labeling task to select multiple keyphrases \
                 from the numbered candidates according to the given document. Use the label \"T\" to \
                 indicate the selection of a candidate and the label \"F\" to indicate its rejection. \
                 For instance, a label sequence \"T F F\" denotes selecting candidate [1] and rejecting \
                 candidates [2] and [3]."
            }
            TemplateKind::Scoring => "Score each candidate according to the given document.",
        }
    }

    fn response_slot(self) -> &'static str {
        match self {
            TemplateKind::Present | TemplateKind::Absent => "Label sequence:",
            TemplateKind::Scoring => "Score:",
        }
    }
}

/// Renders the instruction with the document and numbered candidates,
/// leaving the response slot empty. The text ends right after the slot name.
pub fn render_prompt(doc: &Document, cands: &[Candidate], kind: TemplateKind) -> Result<String> {
    if cands.is_empty() {
        return Err(Error::InvalidInput(
            "prompt needs at least one candidate".into(),
        ));
    }
    if doc.raw().trim().is_empty() {
        log::warn!("rendering a prompt for an empty document");
    }
    let mut out = String::new();
    out.push_str(kind.header());
    out.push_str("\n\n");
    out.push_str(kind.instruction());
    out.push_str("\n\n### Input:\n\nDocument: ");
    out.push_str(doc.raw());
    out.push_str("\n\nCandidates:\n\n");
    for (i, c) in cands.iter().enumerate() {
        out.push_str(&format!("[{}] {}\n", i + 1, c.phrase));
    }
    out.push_str("\n### Response:\n\n");
    out.push_str(kind.response_slot());
    Ok(out)
}

/// [`render_prompt`] with the label slot filled, as used for tuning data.
pub fn render_labeled_prompt(
    doc: &Document,
    cands: &[Candidate],
    kind: TemplateKind,
    labels: &LabelSequence,
) -> Result<String> {
    if kind == TemplateKind::Scoring {
        return Err(Error::InvalidInput(
            "the scoring template has no label slot".into(),
        ));
    }
    check_lengths(cands, labels)?;
    Ok(format!("{} {labels}", render_prompt(doc, cands, kind)?))
}

/// Reads the first `n` T/F labels from a free-form reply. Words made only of
/// the letters t and f count one label per letter; everything else is
/// ignored. A short reply is padded with F.
pub fn parse_label_sequence(text: &str, n: usize) -> Result<LabelSequence> {
    if n == 0 {
        return Err(Error::InvalidInput("label count must be at least 1".into()));
    }
    let mut labels: Vec<Label> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && w.chars().all(|c| matches!(c, 't' | 'T' | 'f' | 'F')))
        .flat_map(|w| w.chars())
        .map(|c| {
            if c.eq_ignore_ascii_case(&'t') {
                Label::T
            } else {
                Label::F
            }
        })
        .take(n)
        .collect();
    if labels.is_empty() {
        return Err(Error::UnparseableReply(text.chars().take(80).collect()));
    }
    labels.resize(n, Label::F);
    Ok(LabelSequence::new(labels))
}

fn check_lengths(cands: &[Candidate], labels: &LabelSequence) -> Result<()> {
    if cands.len() != labels.len() {
        return Err(Error::LabelLengthMismatch {
            labels: labels.len(),
            candidates: cands.len(),
        });
    }
    Ok(())
}

/// Keeps the T-labelled candidates in order, then drops stem duplicates.
pub fn apply_labels(cands: &[Candidate], labels: &LabelSequence) -> Result<KeyphraseSet> {
    check_lengths(cands, labels)?;
    let kept = cands
        .iter()
        .zip(labels.iter())
        .filter(|(_, l)| *l == Label::T)
        .map(|(c, _)| c.phrase.clone())
        .collect();
    Ok(dedup_stemmed(&KeyphraseSet::new(kept, SetKind::Predicted)))
}

/// One selector prompt; `labels` is set only for tuning data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorRecord {
    pub id: String,
    pub doc: String,
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelSequence>,
    pub prompt: String,
}

/// Target labels: T iff the candidate's stems equal some gold phrase's stems.
pub fn gold_labels(cands: &[Candidate], gold: &KeyphraseSet) -> LabelSequence {
    let stems: HashSet<_> = gold.iter().map(Keyphrase::stemmed).collect();
    LabelSequence::new(
        cands
            .iter()
            .map(|c| {
                if stems.contains(&c.phrase.stemmed()) {
                    Label::T
                } else {
                    Label::F
                }
            })
            .collect(),
    )
}

/// Shuffles candidates with `seed`, labels them against `gold` and renders
/// the unfilled prompt. The record's candidates are in presentation order.
pub fn export_tuning_record(
    id: &str,
    doc: &Document,
    cands: &[Candidate],
    gold: &KeyphraseSet,
    seed: u64,
    kind: TemplateKind,
) -> Result<SelectorRecord> {
    let order = order_candidates(cands, OrderingMode::Random { seed });
    let shown: Vec<Candidate> = order.iter().map(|&i| cands[i].clone()).collect();
    let labels = gold_labels(&shown, gold);
    Ok(SelectorRecord {
        id: id.to_string(),
        doc: doc.raw().to_string(),
        candidates: shown.iter().map(|c| c.phrase.to_string()).collect(),
        prompt: render_prompt(doc, &shown, kind)?,
        labels: Some(labels),
    })
}
