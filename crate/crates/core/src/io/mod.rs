//! JSONL record formats and file helpers.
//!
//! Every file holds one JSON object per line. Blank lines are skipped on
//! read. Floats round-trip bit-exactly.

pub mod synth;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpcore::{present_mask, Document, Keyphrase, KeyphraseSet, SetKind};
use crate::matching::{CodePrediction, PredictionSet, TokenId};
use crate::selector::{Candidate, LabelSequence};

/// Generator output for one instance, in the generator's token-id space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionPayload {
    /// Id the generator emits for the null target.
    pub null_token: TokenId,
    /// Token ids of each gold phrase, aligned with the record's `gold`.
    pub gold_token_ids: Vec<Vec<TokenId>>,
    pub codes: Vec<CodePrediction>,
}

impl PredictionPayload {
    pub fn prediction_set(&self) -> Result<PredictionSet> {
        PredictionSet::new(self.codes.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub phrase: String,
    pub avg_logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_code: Option<usize>,
}

/// A code deliberately built to predict a gold phrase (synthetic data only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedPair {
    pub code: usize,
    pub truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: String,
    pub doc: String,
    pub gold: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PredictionPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<CandidateRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<Vec<PlantedPair>>,
}

/// Gold indices split by presence in the document, input order kept.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TruthSplit {
    pub present: Vec<usize>,
    pub absent: Vec<usize>,
}

impl InstanceRecord {
    pub fn document(&self) -> Document {
        Document::new(self.doc.as_str())
    }

    pub fn gold_set(&self) -> KeyphraseSet {
        KeyphraseSet::from_strings(&self.gold, SetKind::Gold)
    }

    /// Present/absent gold indices. Phrases without tokens are dropped.
    pub fn split_truths(&self) -> TruthSplit {
        let parsed: Vec<(usize, Keyphrase)> = self
            .gold
            .iter()
            .enumerate()
            .filter_map(|(i, g)| Keyphrase::parse(g).map(|k| (i, k)))
            .collect();
        let phrases: Vec<Keyphrase> = parsed.iter().map(|(_, k)| k.clone()).collect();
        let mask = present_mask(&self.document(), &phrases);
        let mut split = TruthSplit::default();
        for ((i, _), present) in parsed.iter().zip(mask) {
            if present {
                split.present.push(*i);
            } else {
                split.absent.push(*i);
            }
        }
        split
    }

    pub fn payload(&self) -> Result<&PredictionPayload> {
        self.predictions.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("instance {:?} has no predictions", self.id))
        })
    }

    /// Candidates in file order; phrases without tokens are dropped.
    pub fn candidate_list(&self) -> Result<Vec<Candidate>> {
        let Some(cands) = &self.candidates else {
            return Err(Error::InvalidInput(format!(
                "instance {:?} has no candidates",
                self.id
            )));
        };
        cands
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                Keyphrase::parse(&c.phrase)
                    .map(|k| Candidate::new(k, c.avg_logprob, c.source_code.unwrap_or(i)))
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if let Some(p) = &self.predictions {
            p.prediction_set()?;
            if p.gold_token_ids.len() != self.gold.len() {
                return Err(Error::InvalidInput(format!(
                    "{} gold phrases but {} token-id lists",
                    self.gold.len(),
                    p.gold_token_ids.len()
                )));
            }
        }
        if let Some(c) = &self.candidates {
            if let Some(bad) = c
                .iter()
                .find(|c| c.avg_logprob.is_nan() || c.avg_logprob > 0.0)
            {
                return Err(Error::InvalidInput(format!(
                    "candidate {:?} has avg_logprob {}",
                    bad.phrase, bad.avg_logprob
                )));
            }
        }
        Ok(())
    }
}

/// Keyphrases predicted for one instance, in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub keyphrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub phrase: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplyRecord {
    pub instance_id: String,
    pub reply_text: String,
}

/// Per-code targets as indices into the instance's `gold` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentRecord {
    pub id: String,
    pub assigner: String,
    pub present: Vec<Option<usize>>,
    pub absent: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

/// Emitted labels and their log-probabilities for the selector loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub id: String,
    pub labels: LabelSequence,
    pub logprobs: Vec<f64>,
}

/// Parses JSONL from a reader; `line` numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl Read) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Parse {
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(writer: impl Write, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_jsonl(File::open(path)?)
}

pub fn write_jsonl_file<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    write_jsonl(File::create(path)?, records)
}

/// Parses instances, rejecting duplicate ids and invalid payloads.
pub fn parse_instances(reader: impl Read) -> Result<Vec<InstanceRecord>> {
    let mut out: Vec<InstanceRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|source| Error::Parse {
            line: i + 1,
            source,
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId {
                id: rec.id,
                line: i + 1,
            });
        }
        rec.validate()
            .map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<InstanceRecord>> {
    parse_instances(File::open(path)?)
}

pub fn save_instances(path: impl AsRef<Path>, records: &[InstanceRecord]) -> Result<()> {
    write_jsonl_file(path, records)
}
