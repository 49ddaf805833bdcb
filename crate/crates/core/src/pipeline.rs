//! Per-instance operations over JSONL records: the units the CLI maps over.
//!
//! Gold phrases are split into present and absent by their stemmed
//! occurrence in the document. Codes `0..N/2` serve the present split and
//! `N/2..N` the absent one. Assignment targets are reported as indices into
//! the record's `gold` list.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bipartite;
use crate::error::{Error, Result};
use crate::eval::{Embeddings, GoldDoc, PredDoc};
use crate::io::{
    AssignmentRecord, EmbeddingRecord, InstanceRecord, LabelRecord, PredictionRecord, TruthSplit,
};
use crate::kpcore::{present_mask, Keyphrase, KeyphraseSet, SetKind};
use crate::losses::{self, GeneratorLossConfig, LabelLogProbs};
use crate::matching::{self, PredictionSet, TokenId};
use crate::selector::{self, Candidate, OrderingMode, SelectorRecord, TemplateKind};
use crate::transport::{self, AssignConfig, AssignmentPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assigner {
    Ot,
    Bipartite,
}

impl fmt::Display for Assigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assigner::Ot => "ot",
            Assigner::Bipartite => "bipartite",
        })
    }
}

impl FromStr for Assigner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot" => Ok(Assigner::Ot),
            "bipartite" => Ok(Assigner::Bipartite),
            other => Err(Error::InvalidInput(format!("unknown assigner {other:?}"))),
        }
    }
}

/// Truth token ids per half, with the gold indices they came from.
struct HalfTruths {
    split: TruthSplit,
    present: Vec<Vec<TokenId>>,
    absent: Vec<Vec<TokenId>>,
}

fn half_truths(rec: &InstanceRecord, half: usize) -> Result<(HalfTruths, PredictionSet)> {
    let payload = rec.payload()?;
    let mut split = rec.split_truths();
    for (name, idx) in [
        ("present", &mut split.present),
        ("absent", &mut split.absent),
    ] {
        if idx.len() > half {
            log::warn!(
                "instance {:?}: keeping the first {half} of {} {name} truths",
                rec.id,
                idx.len()
            );
            idx.truncate(half);
        }
    }
    let ids = |idx: &[usize]| {
        idx.iter()
            .map(|&i| payload.gold_token_ids[i].clone())
            .collect()
    };
    let truths = HalfTruths {
        present: ids(&split.present),
        absent: ids(&split.absent),
        split,
    };
    Ok((truths, payload.prediction_set()?))
}

fn to_gold(plan: &AssignmentPlan, idx: &[usize]) -> Vec<Option<usize>> {
    plan.targets.iter().map(|t| t.map(|i| idx[i])).collect()
}

pub fn assign_instance(
    rec: &InstanceRecord,
    assigner: Assigner,
    cfg: &AssignConfig,
) -> Result<AssignmentRecord> {
    let (t, preds) = half_truths(rec, cfg.n_codes / 2)?;
    let (present, absent, converged) = match assigner {
        Assigner::Ot => {
            let a = transport::assign_from_predictions(&t.present, &t.absent, &preds, cfg)?;
            let converged = a.present.converged && a.absent.converged;
            if !converged {
                log::warn!(
                    "instance {:?}: Sinkhorn stopped before reaching tolerance",
                    rec.id
                );
            }
            (a.present.plan, a.absent.plan, Some(converged))
        }
        Assigner::Bipartite => {
            let (p, a) = bipartite::assign_from_predictions(&t.present, &t.absent, &preds, cfg)?;
            (p, a, None)
        }
    };
    Ok(AssignmentRecord {
        id: rec.id.clone(),
        assigner: assigner.to_string(),
        present: to_gold(&present, &t.split.present),
        absent: to_gold(&absent, &t.split.absent),
        converged,
    })
}

/// Exact counterpart of [`assign_instance`], for small instances only.
pub fn oracle_instance(
    rec: &InstanceRecord,
    assigner: Assigner,
    cfg: &AssignConfig,
) -> Result<AssignmentRecord> {
    cfg.validate()?;
    let (t, preds) = half_truths(rec, cfg.n_codes / 2)?;
    transport::check_shape(&preds, cfg)?;
    let half = cfg.n_codes / 2;
    let halves = [(&t.present, 0..half), (&t.absent, half..cfg.n_codes)];
    let mut plans = Vec::with_capacity(2);
    for (truths, range) in halves {
        let sub = preds.slice(range);
        plans.push(match assigner {
            Assigner::Ot => {
                let mm = matching::match_matrix(truths, &sub);
                let mu = matching::normalize_mu(&mm, cfg.tau, cfg.axis)?;
                transport::harden(&transport::exact_solve(&transport::build_problem(
                    &mu, cfg.k,
                )?)?)
            }
            Assigner::Bipartite => bipartite::assign_half_brute_force(truths, &sub)?,
        });
    }
    Ok(AssignmentRecord {
        id: rec.id.clone(),
        assigner: format!("{assigner}-exact"),
        present: to_gold(&plans[0], &t.split.present),
        absent: to_gold(&plans[1], &t.split.absent),
        converged: None,
    })
}

/// Intermediate matrices of one half; rows follow `truths`, then the null row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfScores {
    pub truths: Vec<usize>,
    pub match_scores: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub supplies: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub present: HalfScores,
    pub absent: HalfScores,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn score_instance(rec: &InstanceRecord, cfg: &AssignConfig) -> Result<ScoreRecord> {
    cfg.validate()?;
    let (t, preds) = half_truths(rec, cfg.n_codes / 2)?;
    transport::check_shape(&preds, cfg)?;
    let half = cfg.n_codes / 2;
    let score = |truths: &[Vec<TokenId>], idx: &[usize], range| -> Result<HalfScores> {
        let mm = matching::match_matrix(truths, &preds.slice(range));
        let mu = matching::normalize_mu(&mm, cfg.tau, cfg.axis)?;
        Ok(HalfScores {
            truths: idx.to_vec(),
            match_scores: rows(&mm.scores),
            supplies: transport::build_supplies(&mu, cfg.k)?,
            mu: rows(&mu.mu),
        })
    };
    Ok(ScoreRecord {
        id: rec.id.clone(),
        present: score(&t.present, &t.split.present, 0..half)?,
        absent: score(&t.absent, &t.split.absent, half..cfg.n_codes)?,
    })
}

/// Generator loss of one instance under an assignment that indexes `gold`.
pub fn generator_loss_instance(
    rec: &InstanceRecord,
    assignment: &AssignmentRecord,
    cfg: &GeneratorLossConfig,
) -> Result<f64> {
    if rec.id != assignment.id {
        return Err(Error::AlignmentError {
            position: 0,
            left: rec.id.clone(),
            right: assignment.id.clone(),
        });
    }
    let payload = rec.payload()?;
    let plan = |targets: &[Option<usize>]| AssignmentPlan {
        targets: targets.to_vec(),
    };
    losses::generator_loss(
        &plan(&assignment.present),
        &plan(&assignment.absent),
        &payload.prediction_set()?,
        &payload.gold_token_ids,
        &payload.gold_token_ids,
        payload.null_token,
        cfg,
    )
}

pub fn selector_loss_record(r: &LabelRecord) -> Result<f64> {
    Ok(losses::selector_loss(&LabelLogProbs::new(
        r.labels.clone(),
        r.logprobs.clone(),
    )?))
}

/// Which candidates a selector prompt covers, and with which template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectKind {
    /// Candidates occurring in the document.
    Present,
    /// Candidates not occurring in the document.
    Absent,
    /// Every candidate, labeling template.
    All,
    /// Every candidate, scoring template.
    Scoring,
}

impl SelectKind {
    pub fn template(self) -> TemplateKind {
        match self {
            SelectKind::Present | SelectKind::All => TemplateKind::Present,
            SelectKind::Absent => TemplateKind::Absent,
            SelectKind::Scoring => TemplateKind::Scoring,
        }
    }
}

/// The record's candidates restricted to `kind`, file order kept.
pub fn selection_candidates(rec: &InstanceRecord, kind: SelectKind) -> Result<Vec<Candidate>> {
    let cands = rec.candidate_list()?;
    let keep_present = match kind {
        SelectKind::Present => true,
        SelectKind::Absent => false,
        SelectKind::All | SelectKind::Scoring => return Ok(cands),
    };
    let phrases: Vec<Keyphrase> = cands.iter().map(|c| c.phrase.clone()).collect();
    let mask = present_mask(&rec.document(), &phrases);
    Ok(cands
        .into_iter()
        .zip(mask)
        .filter_map(|(c, present)| (present == keep_present).then_some(c))
        .collect())
}

/// Random orderings get a per-instance seed derived from the given one.
pub fn instance_ordering(mode: OrderingMode, id: &str) -> OrderingMode {
    match mode {
        OrderingMode::Random { seed } => OrderingMode::Random {
            seed: selector::derive_seed(seed, id),
        },
        sorted => sorted,
    }
}

fn presented(rec: &InstanceRecord, kind: SelectKind, mode: OrderingMode) -> Result<Vec<Candidate>> {
    let cands = selection_candidates(rec, kind)?;
    let order = selector::order_candidates(&cands, instance_ordering(mode, &rec.id));
    Ok(order.into_iter().map(|i| cands[i].clone()).collect())
}

/// Inference prompt; `None` when no candidate survives the filter.
pub fn render_instance(
    rec: &InstanceRecord,
    kind: SelectKind,
    mode: OrderingMode,
) -> Result<Option<SelectorRecord>> {
    let shown = presented(rec, kind, mode)?;
    if shown.is_empty() {
        return Ok(None);
    }
    let doc = rec.document();
    Ok(Some(SelectorRecord {
        id: rec.id.clone(),
        doc: rec.doc.clone(),
        candidates: shown.iter().map(|c| c.phrase.to_string()).collect(),
        labels: None,
        prompt: selector::render_prompt(&doc, &shown, kind.template())?,
    }))
}

/// Tuning record in the order `random:<seed>` would present; `None` when no
/// candidate survives the filter.
pub fn export_instance(
    rec: &InstanceRecord,
    kind: SelectKind,
    seed: u64,
) -> Result<Option<SelectorRecord>> {
    if kind == SelectKind::Scoring {
        return Err(Error::InvalidInput(
            "tuning export needs a labeling template".into(),
        ));
    }
    let cands = selection_candidates(rec, kind)?;
    if cands.is_empty() {
        return Ok(None);
    }
    let seed = selector::derive_seed(seed, &rec.id);
    selector::export_tuning_record(
        &rec.id,
        &rec.document(),
        &cands,
        &rec.gold_set(),
        seed,
        kind.template(),
    )
    .map(Some)
}

/// Keyphrases kept by `reply`, read against the order `mode` presents.
/// A reply is required whenever the instance has candidates.
pub fn apply_reply(
    rec: &InstanceRecord,
    kind: SelectKind,
    mode: OrderingMode,
    reply: Option<&str>,
) -> Result<PredictionRecord> {
    let shown = presented(rec, kind, mode)?;
    let keyphrases = if shown.is_empty() {
        Vec::new()
    } else {
        let reply = reply
            .ok_or_else(|| Error::InvalidInput(format!("no reply for instance {:?}", rec.id)))?;
        let labels = selector::parse_label_sequence(reply, shown.len())?;
        selector::apply_labels(&shown, &labels)?
            .iter()
            .map(ToString::to_string)
            .collect()
    };
    Ok(PredictionRecord {
        id: rec.id.clone(),
        keyphrases,
    })
}

pub fn eval_inputs(
    preds: &[PredictionRecord],
    gold: &[InstanceRecord],
) -> (Vec<PredDoc>, Vec<GoldDoc>) {
    let p = preds
        .iter()
        .map(|r| PredDoc {
            id: r.id.clone(),
            preds: KeyphraseSet::from_strings(&r.keyphrases, SetKind::Predicted),
        })
        .collect();
    let g = gold
        .iter()
        .map(|r| GoldDoc {
            id: r.id.clone(),
            doc: r.document(),
            gold: r.gold_set(),
        })
        .collect();
    (p, g)
}

pub fn embeddings_from(records: &[EmbeddingRecord]) -> Result<Embeddings> {
    let mut e = Embeddings::new();
    for r in records {
        e.insert(&r.phrase, r.vector.clone())?;
    }
    Ok(e)
}

/// Indexes records by id; the first occurrence of an id wins.
pub fn by_id<T>(records: &[T], id: impl Fn(&T) -> &str) -> HashMap<String, &T> {
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        map.entry(id(r).to_string()).or_insert(r);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth::{synth_instances, SynthConfig};

    fn small() -> (Vec<InstanceRecord>, AssignConfig) {
        small_with(0.25)
    }

    fn small_with(distractor_rate: f64) -> (Vec<InstanceRecord>, AssignConfig) {
        let s = SynthConfig {
            distractor_rate,
            n_codes: 8,
            m_range: [0, 6],
            vocab_size: 60,
            instances: 15,
            seed: 4,
            ..Default::default()
        };
        let cfg = AssignConfig {
            n_codes: 8,
            ..Default::default()
        };
        (synth_instances(&s).unwrap(), cfg)
    }

    #[test]
    fn assigners_recover_planted_pairs() {
        let (recs, cfg) = small();
        for rec in &recs {
            for assigner in [Assigner::Ot, Assigner::Bipartite] {
                let a = assign_instance(rec, assigner, &cfg).unwrap();
                let all: Vec<_> = a.present.iter().chain(&a.absent).copied().collect();
                for p in rec.planted.as_ref().unwrap() {
                    assert_eq!(all[p.code], Some(p.truth), "{} {assigner}", rec.id);
                }
            }
        }
    }

    #[test]
    fn oracles_agree_on_noise_free_instances() {
        let (recs, cfg) = small();
        for rec in &recs {
            for assigner in [Assigner::Ot, Assigner::Bipartite] {
                let fast = assign_instance(rec, assigner, &cfg).unwrap();
                let exact = oracle_instance(rec, assigner, &cfg).unwrap();
                for p in rec.planted.as_ref().unwrap() {
                    let all: Vec<_> = exact.present.iter().chain(&exact.absent).copied().collect();
                    assert_eq!(all[p.code], Some(p.truth));
                }
                assert_eq!(fast.present.len(), exact.present.len());
            }
        }
    }

    #[test]
    fn planted_generator_loss_is_zero() {
        let (recs, cfg) = small_with(0.0);
        for rec in &recs {
            let a = assign_instance(rec, Assigner::Ot, &cfg).unwrap();
            let loss = generator_loss_instance(rec, &a, &GeneratorLossConfig::default()).unwrap();
            assert!(loss.abs() < 1e-12, "{} {loss}", rec.id);
        }
    }

    #[test]
    fn score_dimensions() {
        let (recs, cfg) = small();
        let s = score_instance(&recs[0], &cfg).unwrap();
        assert_eq!(s.present.match_scores.len(), s.present.truths.len() + 1);
        assert_eq!(s.present.supplies.iter().sum::<u64>(), 4);
        assert!(s.present.mu.iter().all(|r| r.len() == 4));
    }

    #[test]
    fn oracle_apply_reproduces_gold_labels() {
        let (recs, _) = small();
        for rec in &recs {
            let Some(export) = export_instance(rec, SelectKind::All, 11).unwrap() else {
                continue;
            };
            let reply = export.labels.unwrap().to_string();
            let pred = apply_reply(
                rec,
                SelectKind::All,
                OrderingMode::Random { seed: 11 },
                Some(&reply),
            )
            .unwrap();
            let gold: std::collections::HashSet<_> =
                rec.gold_set().iter().map(|k| k.stemmed()).collect();
            for k in &pred.keyphrases {
                assert!(gold.contains(&Keyphrase::parse(k).unwrap().stemmed()));
            }
        }
    }

    #[test]
    fn candidate_filters_partition() {
        let (recs, _) = small();
        for rec in &recs {
            let all = selection_candidates(rec, SelectKind::All).unwrap().len();
            let p = selection_candidates(rec, SelectKind::Present)
                .unwrap()
                .len();
            let a = selection_candidates(rec, SelectKind::Absent).unwrap().len();
            assert_eq!(p + a, all);
        }
    }
}
