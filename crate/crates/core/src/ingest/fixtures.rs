//! Deterministic corpora with known ground truth for exercising the pipeline.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{JudgeAnnotationDoc, RawRecord};
use crate::curriculum::{Annotation, Clarity};
use crate::PairId;

/// Judge-annotated joint distribution of the reference math corpus:
/// rows High / Medium / Low clarity, columns rejected quality 1..=5.
///
/// The published cells sum to 4135 and disagree with the published margins;
/// High/Q4 is reduced from 124 to 123 so that the total (4134) and the
/// difficulty strata (2674 / 1046 / 414) match the published figures.
pub const REFERENCE_JOINT_COUNTS: [[usize; 5]; 3] = [
    [946, 1728, 221, 123, 2],
    [0, 572, 474, 11, 0],
    [0, 39, 11, 2, 5],
];

/// One annotation per cell member, ids assigned in row-major order from 0.
pub fn reference_annotations() -> BTreeMap<PairId, Annotation> {
    let mut out = BTreeMap::new();
    let mut id = 0;
    for (clarity, row) in Clarity::ALL.iter().zip(REFERENCE_JOINT_COUNTS) {
        for (q, &count) in row.iter().enumerate() {
            for _ in 0..count {
                out.insert(id, Annotation::new(*clarity, q as u8 + 1).expect("1..=5"));
                id += 1;
            }
        }
    }
    out
}

/// A judge document in the four-key template.
pub fn annotation_document(annotation: &Annotation) -> Value {
    let doc = JudgeAnnotationDoc {
        clarity: annotation.clarity,
        reason: format!("preference clarity judged {}", annotation.clarity.as_str()),
        rejected_analysis: format!("rejected response quality {}", annotation.rejected_quality),
        rejected_score: annotation.rejected_quality,
    };
    serde_json::to_value(doc).expect("plain struct serializes")
}

/// `{"pair_id", "annotation"}` JSON lines for a set of annotations.
pub fn annotation_lines(annotations: &BTreeMap<PairId, Annotation>) -> String {
    annotations
        .iter()
        .map(|(id, a)| format!("{}\n", json!({"pair_id": id, "annotation": annotation_document(a)})))
        .collect()
}

#[derive(Debug, Clone)]
pub struct CurationFixture {
    pub records: Vec<RawRecord>,
    pub duplicates: usize,
    pub degenerate: usize,
    /// Kept records whose answers cannot be extracted.
    pub flagged: usize,
    pub expected_kept: usize,
}

/// 3000 records of which 700 repeat an earlier query up to whitespace and 641
/// box the same final answer in both responses, leaving 1659.
pub fn curation_fixture(seed: u64) -> CurationFixture {
    curation_fixture_sized(2300, 700, 641, seed)
}

pub fn curation_fixture_sized(unique: usize, duplicates: usize, degenerate: usize, seed: u64) -> CurationFixture {
    assert!(degenerate <= unique, "cannot plant more degenerate pairs than unique queries");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut is_degenerate = vec![false; unique];
    is_degenerate[..degenerate].iter_mut().for_each(|d| *d = true);
    is_degenerate.shuffle(&mut rng);

    let mut flagged = 0;
    let base: Vec<RawRecord> = (0..unique)
        .map(|i| {
            let (record, flag) = solution_pair(i, is_degenerate[i], &mut rng);
            flagged += usize::from(flag);
            record
        })
        .collect();

    // Each duplicate is emitted after some base record at or beyond its source.
    let mut after: Vec<Vec<RawRecord>> = vec![Vec::new(); unique];
    for _ in 0..duplicates {
        let source = rng.random_range(0..unique);
        let slot = rng.random_range(source..unique);
        let query = perturb_whitespace(&base[source].query, &mut rng);
        let answer = rng.random_range(0..100);
        after[slot].push(RawRecord {
            query,
            chosen: format!("Resampled solution. \\boxed{{{answer}}}"),
            rejected: format!("Another attempt. \\boxed{{{answer}}}"),
            ground_truth: None,
        });
    }

    let records: Vec<RawRecord> = base.into_iter().zip(after).flat_map(|(b, dups)| std::iter::once(b).chain(dups)).collect();
    CurationFixture {
        records,
        duplicates,
        degenerate,
        flagged,
        expected_kept: unique - degenerate,
    }
}

fn perturb_whitespace(query: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..4) {
        0 => query.to_owned(),
        1 => format!("  {query}\n"),
        2 => query.replace(' ', "  "),
        _ => query.replace(' ', " \t"),
    }
}

fn answer_text(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..3) {
        0 => rng.random_range(0..1000).to_string(),
        1 => format!("\\frac{{{}}}{{{}}}", rng.random_range(1..20), rng.random_range(2..30)),
        _ => format!("\\sqrt{{{}}}", rng.random_range(2..50)),
    }
}

/// Returns the record and whether it will be flagged by the consistency check.
fn solution_pair(i: usize, degenerate: bool, rng: &mut ChaCha8Rng) -> (RawRecord, bool) {
    let query = format!("Problem {i}: evaluate expression #{} and simplify.", rng.random_range(0..10_000));
    let answer = answer_text(rng);
    let chosen = format!(
        "First \\boxed{{{}}} is an intermediate value. Therefore the result is \\boxed{{{answer}}}.",
        rng.random_range(0..50)
    );
    let mut flag = false;
    let rejected = if degenerate {
        format!("A shorter derivation gives \\boxed{{ {answer} }}")
    } else {
        let mut wrong = answer_text(rng);
        while wrong == answer {
            wrong = answer_text(rng);
        }
        match rng.random_range(0..40) {
            0 => {
                flag = true;
                "The derivation stalls and no final answer is given.".to_owned()
            }
            1 => {
                flag = true;
                format!("Truncated output \\boxed{{{wrong}")
            }
            // The intermediate box matches the chosen answer; only the last counts.
            2 => format!("Guess \\boxed{{{answer}}}, but on reflection \\boxed{{{wrong}}}"),
            _ => format!("Hence \\boxed{{{wrong}}}"),
        }
    };
    let record = RawRecord {
        query,
        chosen,
        rejected,
        ground_truth: Some(answer),
    };
    (record, flag)
}

/// A judge document with the classification the parser must produce.
#[derive(Debug, Clone)]
pub struct MixedAnnotationCase {
    pub pair_id: PairId,
    pub document: String,
    /// The annotation, or the prefix of the rejection reason.
    pub expected: Result<Annotation, &'static str>,
}

/// `n` documents, roughly 60% well formed and the rest spread over the
/// schema violations the parser distinguishes.
pub fn mixed_annotation_fixture(n: usize, seed: u64) -> Vec<MixedAnnotationCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as PairId)
        .map(|pair_id| {
            let clarity = Clarity::ALL[rng.random_range(0..3)];
            let score: u8 = rng.random_range(1..=5);
            let annotation = Annotation::new(clarity, score).expect("1..=5");
            let mut doc = annotation_document(&annotation);
            let obj = doc.as_object_mut().expect("object");
            let kind = if rng.random_bool(0.6) { 0 } else { rng.random_range(1..10) };
            let expected = match kind {
                0 => Ok(annotation),
                1 => {
                    obj.insert("clarity".into(), json!(["VeryHigh", "high", "Moderate", ""][rng.random_range(0..4)]));
                    Err("unknown clarity")
                }
                2 => {
                    obj.insert("rejected_score".into(), json!([0, 6, -1, 10][rng.random_range(0..4)]));
                    Err("rejected_score out of range")
                }
                3 => {
                    let key = super::ANNOTATION_KEYS[rng.random_range(0..4)];
                    obj.remove(key);
                    Err("missing key")
                }
                4 => {
                    obj.insert(["confidence", "score", "Clarity"][rng.random_range(0..3)].into(), json!(1));
                    Err("unknown key")
                }
                5 => {
                    obj.insert("rejected_score".into(), json!([json!(2.5), json!("3"), Value::Null][rng.random_range(0..3)]));
                    Err("wrong type")
                }
                6 => {
                    obj.insert("reason".into(), json!(7));
                    Err("wrong type")
                }
                7 => {
                    doc = json!([annotation.clarity.as_str(), annotation.rejected_quality]);
                    Err("not a JSON object")
                }
                _ => {
                    let text = doc.to_string();
                    let cut = rng.random_range(1..text.len() - 1);
                    return MixedAnnotationCase {
                        pair_id,
                        document: text[..cut].to_owned(),
                        expected: Err("invalid JSON"),
                    };
                }
            };
            MixedAnnotationCase {
                pair_id,
                document: doc.to_string(),
                expected,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn curation_fixture_shrinks_as_planted() {
        let fx = curation_fixture(7);
        assert_eq!(fx.records.len(), 3000);
        let out = curate(&fx.records, QueryNormalization::Whitespace);
        assert_eq!(out.duplicates_removed, 700);
        assert_eq!(out.degenerate_removed, 641);
        assert_eq!(out.kept.len(), fx.expected_kept);
        assert_eq!(out.kept.len(), 1659);
        assert_eq!(out.flagged.len(), fx.flagged);
        assert_eq!(out.rejects.len() + out.kept.len(), out.input);
    }

    #[test]
    fn mixed_fixture_classifies_every_document() {
        let cases = mixed_annotation_fixture(500, 3);
        let docs: Vec<(PairId, String)> = cases.iter().map(|c| (c.pair_id, c.document.clone())).collect();
        let parsed = parse_annotations(&docs);
        assert_eq!(parsed.total(), 500);
        let rejected: BTreeMap<PairId, &str> =
            parsed.rejects.iter().map(|r| (r.pair_id.unwrap(), r.reason.as_str())).collect();
        for case in &cases {
            match case.expected {
                Ok(a) => assert_eq!(parsed.annotations.get(&case.pair_id), Some(&a)),
                Err(prefix) => assert!(rejected[&case.pair_id].starts_with(prefix), "{}", case.document),
            }
        }
        assert!(parsed.rejects.len() > 100 && parsed.rejects.len() < 300);
    }

    #[test]
    fn reference_lines_round_trip() {
        let reference = reference_annotations();
        let parsed = parse_annotation_lines(&annotation_lines(&reference));
        assert!(parsed.rejects.is_empty());
        assert_eq!(parsed.annotations, reference);
    }
}
