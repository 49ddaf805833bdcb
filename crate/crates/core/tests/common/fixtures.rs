//! Frozen fixtures shared by the fixture tests and the acceptance run.

use kpgen::eval::{dup_token_ratio, evaluate_corpus, f1_at_5, f1_at_m, EvalReport, Prf};
use kpgen::io::{parse_instances, read_jsonl, PredictionRecord};
use kpgen::kpcore::{Document, Keyphrase, KeyphraseSet, SetKind};
use kpgen::pipeline::eval_inputs;
use kpgen::selector::{apply_labels, parse_label_sequence, render_prompt, Candidate, TemplateKind};

pub const EVAL_GOLD: &str = include_str!("../fixtures/eval_gold.jsonl");
pub const EVAL_PRED: &str = include_str!("../fixtures/eval_pred.jsonl");
pub const PROMPT_GOLDEN: &str = include_str!("../fixtures/prompt_golden.txt");

fn set(xs: &[&str], kind: SetKind) -> KeyphraseSet {
    KeyphraseSet::from_strings(xs, kind)
}

pub fn eval_fixture_report() -> EvalReport {
    let gold = parse_instances(EVAL_GOLD.as_bytes()).unwrap();
    let preds: Vec<PredictionRecord> = read_jsonl(EVAL_PRED.as_bytes()).unwrap();
    let (p, g) = eval_inputs(&preds, &gold);
    evaluate_corpus(&p, &g, None).unwrap()
}

/// Macro average in document order, as the report computes it.
fn macro_avg(per_doc: &[(f64, f64)]) -> Prf {
    let docs: Vec<Prf> = per_doc.iter().map(|&(p, r)| Prf::new(p, r)).collect();
    let n = docs.len() as f64;
    Prf {
        precision: docs.iter().map(|d| d.precision).sum::<f64>() / n,
        recall: docs.iter().map(|d| d.recall).sum::<f64>() / n,
        f1: docs.iter().map(|d| d.f1).sum::<f64>() / n,
    }
}

/// The two-phrase half-overlap case, the stemming case and the duplicate
/// token case.
pub fn assert_metric_cases() {
    let m = f1_at_m(
        &set(&["a", "b"], SetKind::Predicted),
        &set(&["a", "c"], SetKind::Gold),
    );
    assert_eq!(
        m,
        Prf {
            precision: 0.5,
            recall: 0.5,
            f1: 0.5
        }
    );
    let five = f1_at_5(
        &set(&["a", "b"], SetKind::Predicted),
        &set(&["a", "c"], SetKind::Gold),
    );
    assert_eq!(five, Prf::new(0.2, 0.5));
    let m = f1_at_m(
        &set(&["deep learn", "neural networks"], SetKind::Predicted),
        &set(&["deep learning", "neural network"], SetKind::Gold),
    );
    assert_eq!(m, Prf::new(1.0, 1.0));
    assert_eq!(
        dup_token_ratio(&set(&["safe problem", "safe hazard"], SetKind::Predicted)),
        0.25
    );
}

/// Checks the ten-document report against hand-derived scores.
pub fn assert_eval_fixture() {
    let report = eval_fixture_report();
    assert_eq!(report.docs, 10);

    // d05 has no gold; d08 has no present gold
    let present_m = [
        (0.5, 0.5),
        (0.5, 1.0),
        (0.0, 0.0),
        (1.0, 1.0),
        (2.0 / 7.0, 1.0),
        (0.5, 1.0),
        (1.0, 1.0),
        (0.0, 0.0),
    ];
    let present_5 = [
        (0.2, 0.5),
        (0.2, 1.0),
        (0.0, 0.0),
        (0.2, 1.0),
        (0.0, 0.0),
        (0.2, 1.0),
        (0.4, 1.0),
        (0.0, 0.0),
    ];
    assert_eq!(report.present.docs, 8);
    assert_eq!(report.present.at_m, macro_avg(&present_m));
    assert_eq!(report.present.at_5, macro_avg(&present_5));

    // d02, d03, d04, d08, d09, d10 have absent gold
    let absent_m = [
        (1.0, 1.0),
        (0.0, 0.0),
        (1.0, 1.0),
        (0.5, 1.0),
        (0.5, 1.0),
        (0.0, 0.0),
    ];
    let absent_5 = [
        (0.2, 1.0),
        (0.0, 0.0),
        (0.2, 1.0),
        (0.2, 1.0),
        (0.2, 1.0),
        (0.0, 0.0),
    ];
    assert_eq!(report.absent.docs, 6);
    assert_eq!(report.absent.at_m, macro_avg(&absent_m));
    assert_eq!(report.absent.at_5, macro_avg(&absent_5));

    // d03 has no predictions and is left out of the average
    let dup = [0.0, 0.25, 0.0, 0.0, 0.0, 0.4, 0.0, 1.0 - 6.0 / 7.0, 0.0];
    let expected_dup = dup.iter().sum::<f64>() / 9.0;
    assert!((report.diversity.dup_token_ratio - expected_dup).abs() <= 1e-15);
    assert_eq!(report.diversity.emb_sim, None);

    assert!((report.present.at_m.precision - 0.473_214_285_714_285_7).abs() < 1e-15);
    assert!((report.present.at_m.f1 - 0.534_722_222_222_222_2).abs() < 1e-15);
    assert!((report.absent.at_5.f1 - 0.222_222_222_222_222_24).abs() < 1e-15);
}

pub fn prompt_fixture() -> (Document, Vec<Candidate>) {
    let doc = Document::new(
        "We study safe reinforcement learning under hard constraints. A constrained policy optimization \
         method is proposed and evaluated on robot navigation tasks.",
    );
    let cands = [
        ("safe reinforcement learning", -0.2),
        ("constrained policy optimization", -0.4),
        ("robot navigation", -0.9),
        ("policy gradient", -1.3),
    ]
    .iter()
    .enumerate()
    .map(|(i, (p, lp))| Candidate::new(Keyphrase::parse(p).unwrap(), *lp, i).unwrap())
    .collect();
    (doc, cands)
}

pub fn assert_prompt_golden() {
    let (doc, cands) = prompt_fixture();
    let prompt = render_prompt(&doc, &cands, TemplateKind::Present).unwrap();
    assert_eq!(prompt, PROMPT_GOLDEN);
    assert!(PROMPT_GOLDEN.contains("sequence labeling task"));
    assert!(PROMPT_GOLDEN.contains("\"T F F\""));
}

/// "T F F" over three candidates keeps only the first.
pub fn assert_template_example() {
    let (_, cands) = prompt_fixture();
    let labels = parse_label_sequence("T F F", 3).unwrap();
    let kept = apply_labels(&cands[..3], &labels).unwrap();
    let kept: Vec<String> = kept.iter().map(ToString::to_string).collect();
    assert_eq!(kept, vec!["safe reinforcement learning"]);
}
