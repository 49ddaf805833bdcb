//! Seeded synthetic instances whose optimal assignments are known by
//! construction.
//!
//! Token id 0 is the null target and id 1 an end-of-phrase filler; ids
//! `2..vocab_size + 2` map to pseudo-words that are fixed points of the
//! stemmer. Gold tokens are distinct within an instance and absent phrases
//! share no token with the document.
//!
//! Each planted code is the only code that puts mass on its truth's tokens:
//! at noise `v` every step is `(1 - v) * onehot(target) + v * uniform`.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CandidateRecord, InstanceRecord, PlantedPair, PredictionPayload};
use crate::error::{Error, Result};
use crate::kpcore::Token;
use crate::matching::{CodePrediction, StepDistribution, TokenId};

pub const NULL_TOKEN: TokenId = 0;
pub const FILLER_TOKEN: TokenId = 1;
const FIRST_WORD: TokenId = 2;
pub const MAX_VOCAB: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Inclusive bounds on the number of gold phrases per instance.
    #[serde(rename = "M_range")]
    pub m_range: [usize; 2],
    #[serde(rename = "N")]
    pub n_codes: usize,
    #[serde(rename = "K")]
    pub k_tokens: usize,
    pub vocab_size: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub instances: usize,
    /// Probability that a gold phrase gets a planted code.
    pub planted_fraction: f64,
    /// Probability that an unplanted code decodes a random non-gold phrase
    /// instead of the null target.
    pub distractor_rate: f64,
    /// Inclusive bounds on the number of filler words per document.
    pub doc_words: [usize; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            m_range: [1, 6],
            n_codes: 20,
            k_tokens: 2,
            vocab_size: 200,
            noise_level: 0.0,
            seed: 0,
            instances: 100,
            planted_fraction: 1.0,
            distractor_rate: 0.25,
            doc_words: [20, 40],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        let [lo, hi] = self.m_range;
        if self.n_codes == 0 || !self.n_codes.is_multiple_of(2) {
            return bad(format!("N must be even and positive, got {}", self.n_codes));
        }
        if self.k_tokens == 0 {
            return bad("K must be at least 1".into());
        }
        if lo > hi || hi > self.n_codes {
            return bad(format!(
                "M_range {:?} must be ordered and at most N",
                self.m_range
            ));
        }
        if self.vocab_size < self.k_tokens * self.n_codes {
            return bad(format!(
                "vocab_size must be at least K*N = {}",
                self.k_tokens * self.n_codes
            ));
        }
        if self.vocab_size < hi * (self.k_tokens + 1) + 1 {
            return bad(format!(
                "vocab_size must exceed the {} gold tokens an instance can use",
                hi * (self.k_tokens + 1)
            ));
        }
        if self.vocab_size > MAX_VOCAB {
            return bad(format!("vocab_size above {MAX_VOCAB}"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.noise_level) || !unit(self.planted_fraction) || !unit(self.distractor_rate) {
            return bad(
                "noise_level, planted_fraction and distractor_rate must lie in [0, 1]".into(),
            );
        }
        if self.doc_words[0] > self.doc_words[1] {
            return bad("doc_words bounds out of order".into());
        }
        Ok(())
    }
}

fn is_stem_fixed_point(w: &str) -> bool {
    Token::new(w).is_some_and(|t| t.stem().as_str() == w)
}

/// First `size` consonant-vowel pseudo-words that the stemmer leaves intact.
pub fn vocabulary(size: usize) -> Vec<String> {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let syllables: Vec<String> = CONS
        .iter()
        .flat_map(|&c| {
            VOWELS
                .iter()
                .map(move |&v| String::from_utf8(vec![c, v]).unwrap())
        })
        .collect();
    let mut words = Vec::with_capacity(size);
    let mut frontier: Vec<String> = syllables.clone();
    while words.len() < size {
        let mut next = Vec::new();
        for w in &frontier {
            if w.len() >= 4 && is_stem_fixed_point(w) {
                words.push(w.clone());
                if words.len() == size {
                    return words;
                }
            }
            if next.len() < 4 * size {
                next.extend(syllables.iter().map(|s| format!("{w}{s}")));
            }
        }
        frontier = next;
    }
    words
}

fn step(target: TokenId, listed: &[TokenId], noise: f64, v_total: usize) -> StepDistribution {
    let base = noise / v_total as f64;
    let mut probs = std::collections::BTreeMap::new();
    for &id in listed.iter().chain(std::iter::once(&target)) {
        let p = base + if id == target { 1.0 - noise } else { 0.0 };
        if p > 0.0 {
            probs.insert(id, p);
        }
    }
    let residual = base * (v_total - probs.len()) as f64;
    StepDistribution::new(probs, if residual > 0.0 { residual } else { 0.0 })
}

fn code_prediction(
    targets: &[TokenId],
    listed: &[TokenId],
    noise: f64,
    v_total: usize,
) -> CodePrediction {
    let dists: Vec<StepDistribution> = targets
        .iter()
        .map(|&t| step(t, listed, noise, v_total))
        .collect();
    let tokens: Vec<TokenId> = dists
        .iter()
        .map(|d| d.argmax().unwrap_or(NULL_TOKEN))
        .collect();
    let avg_logprob = tokens
        .iter()
        .zip(&dists)
        .map(|(&t, d)| d.prob(t).ln())
        .sum::<f64>()
        / tokens.len() as f64;
    CodePrediction {
        tokens,
        dists,
        avg_logprob,
    }
}

fn decode(tokens: &[TokenId], words: &[String]) -> Option<String> {
    let phrase: Vec<&str> = tokens
        .iter()
        .take_while(|&&t| t >= FIRST_WORD)
        .map(|&t| words[(t - FIRST_WORD) as usize].as_str())
        .collect();
    (!phrase.is_empty()).then(|| phrase.join(" "))
}

pub fn synth_instances(cfg: &SynthConfig) -> Result<Vec<InstanceRecord>> {
    cfg.validate()?;
    let words = vocabulary(cfg.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.instances)
        .map(|i| synth_one(cfg, &words, format!("synth-{i:05}"), &mut rng))
        .collect()
}

fn synth_one(
    cfg: &SynthConfig,
    words: &[String],
    id: String,
    rng: &mut ChaCha8Rng,
) -> Result<InstanceRecord> {
    let half = cfg.n_codes / 2;
    let k = cfg.k_tokens;
    let v_total = cfg.vocab_size + FIRST_WORD as usize;
    let m = rng.gen_range(cfg.m_range[0]..=cfg.m_range[1]);

    let mut ids: Vec<TokenId> = (FIRST_WORD..v_total as TokenId).collect();
    ids.shuffle(rng);
    let mut pool = ids.into_iter();

    let mut gold_ids: Vec<Vec<TokenId>> = Vec::with_capacity(m);
    let mut present = Vec::with_capacity(m);
    let (mut n_present, mut n_absent) = (0, 0);
    for _ in 0..m {
        let len = rng.gen_range(1..=k + 1);
        gold_ids.push(pool.by_ref().take(len).collect());
        let is_present = if n_present == half {
            false
        } else if n_absent == half {
            true
        } else {
            rng.gen_bool(0.5)
        };
        if is_present {
            n_present += 1;
        } else {
            n_absent += 1;
        }
        present.push(is_present);
    }
    let fillers: Vec<TokenId> = pool.collect();
    let word = |t: TokenId| words[(t - FIRST_WORD) as usize].as_str();

    // present phrases go in whole, before the filler word at their slot
    let n_words = rng.gen_range(cfg.doc_words[0]..=cfg.doc_words[1]);
    let mut slots: Vec<(usize, usize)> = (0..m)
        .filter(|&t| present[t])
        .map(|t| (rng.gen_range(0..=n_words), t))
        .collect();
    slots.sort_unstable();
    let mut slots = slots.into_iter().peekable();
    let mut doc_tokens: Vec<TokenId> = Vec::new();
    for i in 0..=n_words {
        while let Some((_, t)) = slots.next_if(|&(pos, _)| pos == i) {
            doc_tokens.extend(&gold_ids[t]);
        }
        if i < n_words {
            doc_tokens.push(*fillers.choose(rng).unwrap());
        }
    }
    let mut doc = doc_tokens
        .iter()
        .map(|&t| word(t))
        .collect::<Vec<_>>()
        .join(" ");
    if let Some(first) = doc.get(..1) {
        doc = format!("{}{}.", first.to_uppercase(), &doc[1..]);
    }

    let mut present_codes: Vec<usize> = (0..half).collect();
    let mut absent_codes: Vec<usize> = (half..cfg.n_codes).collect();
    present_codes.shuffle(rng);
    absent_codes.shuffle(rng);
    let (mut pc, mut ac) = (present_codes.into_iter(), absent_codes.into_iter());
    let mut owner: Vec<Option<usize>> = vec![None; cfg.n_codes];
    let mut planted = Vec::new();
    for (t, &is_present) in present.iter().enumerate() {
        let code = if is_present { pc.next() } else { ac.next() }.expect("half capacity checked");
        if rng.gen_bool(cfg.planted_fraction) {
            owner[code] = Some(t);
            planted.push(PlantedPair { code, truth: t });
        }
    }
    planted.sort_unstable_by_key(|p| p.code);

    let mut listed: Vec<TokenId> = vec![NULL_TOKEN, FILLER_TOKEN];
    listed.extend(gold_ids.iter().flatten().copied());
    let mut codes = Vec::with_capacity(cfg.n_codes);
    for o in &owner {
        let targets: Vec<TokenId> = match o {
            Some(t) => (0..k)
                .map(|s| gold_ids[*t].get(s).copied().unwrap_or(FILLER_TOKEN))
                .collect(),
            None if rng.gen_bool(cfg.distractor_rate) => {
                let len = rng.gen_range(1..=k);
                (0..k)
                    .map(|s| {
                        if s < len {
                            *fillers.choose(rng).unwrap()
                        } else {
                            FILLER_TOKEN
                        }
                    })
                    .collect()
            }
            None => (0..k)
                .map(|s| if s == 0 { NULL_TOKEN } else { FILLER_TOKEN })
                .collect(),
        };
        codes.push(code_prediction(&targets, &listed, cfg.noise_level, v_total));
    }

    let mut seen = HashSet::new();
    let candidates = codes
        .iter()
        .enumerate()
        .filter_map(|(j, c)| {
            let phrase = decode(&c.tokens, words)?;
            seen.insert(phrase.clone()).then_some(CandidateRecord {
                phrase,
                avg_logprob: c.avg_logprob,
                source_code: Some(j),
            })
        })
        .collect();

    Ok(InstanceRecord {
        id,
        doc,
        gold: gold_ids
            .iter()
            .map(|g| g.iter().map(|&t| word(t)).collect::<Vec<_>>().join(" "))
            .collect(),
        predictions: Some(PredictionPayload {
            null_token: NULL_TOKEN,
            gold_token_ids: gold_ids,
            codes,
        }),
        candidates: Some(candidates),
        planted: Some(planted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(noise: f64) -> SynthConfig {
        SynthConfig {
            noise_level: noise,
            instances: 20,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn vocabulary_words_are_stem_fixed_points() {
        let v = vocabulary(500);
        assert_eq!(v.len(), 500);
        assert_eq!(v.iter().collect::<HashSet<_>>().len(), 500);
        assert!(v.iter().all(|w| is_stem_fixed_point(w)));
        assert_eq!(vocabulary(10), v[..10]);
    }

    #[test]
    fn same_seed_same_output() {
        let a = serde_json::to_string(&synth_instances(&cfg(0.3)).unwrap()).unwrap();
        let b = serde_json::to_string(&synth_instances(&cfg(0.3)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_free_planted_codes_decode_their_truth() {
        for r in synth_instances(&cfg(0.0)).unwrap() {
            let p = r.predictions.as_ref().unwrap();
            for pair in r.planted.as_ref().unwrap() {
                let truth = &p.gold_token_ids[pair.truth];
                let n = truth.len().min(2);
                assert_eq!(p.codes[pair.code].tokens[..n], truth[..n]);
            }
        }
    }

    #[test]
    fn planted_halves_match_presence() {
        for r in synth_instances(&cfg(0.0)).unwrap() {
            let split = r.split_truths();
            for pair in r.planted.as_ref().unwrap() {
                assert_eq!(
                    split.present.contains(&pair.truth),
                    pair.code < 10,
                    "{}",
                    r.id
                );
            }
            assert_eq!(split.present.len() + split.absent.len(), r.gold.len());
        }
    }

    #[test]
    fn full_noise_is_uniform() {
        let r = &synth_instances(&cfg(1.0)).unwrap()[0];
        let v = 202.0;
        for code in &r.predictions.as_ref().unwrap().codes {
            for d in &code.dists {
                assert!(d.probs.values().all(|&p| (p - 1.0 / v).abs() < 1e-15));
                d.validate().unwrap();
            }
        }
    }

    #[test]
    fn distributions_validate_at_any_noise() {
        for noise in [0.0, 0.1, 0.5, 0.9] {
            for r in synth_instances(&cfg(noise)).unwrap() {
                r.predictions.as_ref().unwrap().prediction_set().unwrap();
            }
        }
    }

    #[test]
    fn config_guards() {
        let odd = SynthConfig {
            n_codes: 5,
            ..Default::default()
        };
        assert!(odd.validate().is_err());
        let small = SynthConfig {
            vocab_size: 10,
            ..Default::default()
        };
        assert!(small.validate().is_err());
        assert!(SynthConfig::default().validate().is_ok());
    }
}
