//! Curation of raw preference corpora: query deduplication, removal of pairs
//! whose final answers coincide, strict parsing of judge annotations, and
//! clarity × quality statistics.
//!
//! Every stage conserves its input: each record ends up either kept or in a
//! reject report carrying a reason.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::curriculum::{partition_difficulty, Annotation, Clarity, Strata};
use crate::{Error, PairId, Result};

pub mod fixtures;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub query: String,
    pub chosen: String,
    pub rejected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

impl RawRecord {
    pub fn new(query: impl Into<String>, chosen: impl Into<String>, rejected: impl Into<String>) -> Result<Self> {
        let record = Self {
            query: query.into(),
            chosen: chosen.into(),
            rejected: rejected.into(),
            ground_truth: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty() {
            return Err(Error::domain("empty query"));
        }
        Ok(())
    }
}

/// One entry of a reject report (JSON lines).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub stage: String,
    /// 1-based input line, when the input was line oriented.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<PairId>,
    pub reason: String,
}

impl Reject {
    fn new(stage: &str, reason: impl Into<String>) -> Self {
        Self {
            stage: stage.to_owned(),
            line: None,
            pair_id: None,
            reason: reason.into(),
        }
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a JSON-lines corpus. Blank lines are ignored; malformed lines and
/// records with an empty query go to the reject report with their line number.
pub fn read_records_jsonl(text: &str) -> (Vec<RawRecord>, Vec<Reject>) {
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(line)
            .map_err(|e| format!("invalid JSON: {e}"))
            .and_then(|r| r.validate().map(|_| r).map_err(|_| "empty query".to_owned()));
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => rejects.push(Reject {
                line: Some(i + 1),
                ..Reject::new("parse", reason)
            }),
        }
    }
    (records, rejects)
}

const BOXED: &str = "\\boxed{";

/// Content of the last `\boxed{…}` in `text`, honouring nested braces and
/// skipping escaped `\{` / `\}`.
pub fn extract_boxed_answer(text: &str) -> Option<String> {
    let start = text.rfind(BOXED)? + BOXED.len();
    let bytes = text.as_bytes();
    let mut depth = 1usize;
    let mut i = start;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if matches!(bytes.get(i + 1), Some(b'{' | b'}')) => i += 1,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..i].to_owned());
                }
            }
            _ => {}
        }
        i += 1;
    }
    warn!("unbalanced braces after \\boxed{{ at byte {}", start - BOXED.len());
    None
}

/// How queries are compared during deduplication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryNormalization {
    /// Byte-identical queries only.
    Exact,
    /// Trim and collapse whitespace runs to one space.
    #[default]
    Whitespace,
    /// `Whitespace`, then lowercase.
    WhitespaceCaseFold,
}

impl QueryNormalization {
    pub fn apply(self, query: &str) -> String {
        match self {
            QueryNormalization::Exact => query.to_owned(),
            QueryNormalization::Whitespace => query.split_whitespace().collect::<Vec<_>>().join(" "),
            QueryNormalization::WhitespaceCaseFold => {
                QueryNormalization::Whitespace.apply(query).to_lowercase()
            }
        }
    }
}

/// First occurrence of each normalised query wins; order is preserved.
pub fn dedup_queries(records: &[RawRecord]) -> (Vec<RawRecord>, usize) {
    dedup_queries_with(records, QueryNormalization::default())
}

pub fn dedup_queries_with(records: &[RawRecord], normalization: QueryNormalization) -> (Vec<RawRecord>, usize) {
    let mut seen = HashSet::with_capacity(records.len());
    let kept: Vec<RawRecord> = records
        .iter()
        .filter(|r| seen.insert(normalization.apply(&r.query)))
        .cloned()
        .collect();
    let removed = records.len() - kept.len();
    (kept, removed)
}

/// Why a kept record could not be checked for answer agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionFlag {
    /// Index into the `kept` list.
    pub index: usize,
    pub chosen_missing: bool,
    pub rejected_missing: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsistencyOutcome {
    pub kept: Vec<RawRecord>,
    pub removed: Vec<RawRecord>,
    pub flagged: Vec<ExtractionFlag>,
}

/// Drops pairs whose chosen and rejected responses box the same final answer.
/// Pairs where either extraction fails are kept and flagged.
pub fn consistency_filter(records: &[RawRecord]) -> ConsistencyOutcome {
    let answers: Vec<(Option<String>, Option<String>)> = records
        .par_iter()
        .map(|r| (extract_boxed_answer(&r.chosen), extract_boxed_answer(&r.rejected)))
        .collect();

    let mut out = ConsistencyOutcome::default();
    for (record, (chosen, rejected)) in records.iter().zip(answers) {
        match (chosen, rejected) {
            (Some(c), Some(r)) if c.trim() == r.trim() => out.removed.push(record.clone()),
            (Some(_), Some(_)) => out.kept.push(record.clone()),
            (c, r) => {
                out.flagged.push(ExtractionFlag {
                    index: out.kept.len(),
                    chosen_missing: c.is_none(),
                    rejected_missing: r.is_none(),
                });
                out.kept.push(record.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurationOutcome {
    pub input: usize,
    pub kept: Vec<RawRecord>,
    pub duplicates_removed: usize,
    pub degenerate_removed: usize,
    pub flagged: Vec<ExtractionFlag>,
    pub rejects: Vec<Reject>,
}

/// Deduplication followed by the answer-consistency check.
pub fn curate(records: &[RawRecord], normalization: QueryNormalization) -> CurationOutcome {
    let (unique, duplicates_removed) = dedup_queries_with(records, normalization);
    let mut rejects = Vec::with_capacity(duplicates_removed);
    if duplicates_removed > 0 {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(normalization.apply(&r.query)) {
                rejects.push(Reject::new("dedup", format!("duplicate query (record {})", i + 1)));
            }
        }
    }
    let consistency = consistency_filter(&unique);
    rejects.extend(
        consistency
            .removed
            .iter()
            .map(|r| Reject::new("consistency", format!("identical final answers: {:?}", r.query))),
    );
    CurationOutcome {
        input: records.len(),
        duplicates_removed,
        degenerate_removed: consistency.removed.len(),
        kept: consistency.kept,
        flagged: consistency.flagged,
        rejects,
    }
}

pub const ANNOTATION_KEYS: [&str; 4] = ["clarity", "reason", "rejected_analysis", "rejected_score"];

/// The judge's output document, exactly the four template keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeAnnotationDoc {
    pub clarity: Clarity,
    pub reason: String,
    pub rejected_analysis: String,
    pub rejected_score: u8,
}

impl JudgeAnnotationDoc {
    pub fn annotation(&self) -> Annotation {
        Annotation::new(self.clarity, self.rejected_score).expect("score validated on parse")
    }
}

/// Strict parse of one judge document. The error is a short reason.
pub fn parse_judge_document(value: &Value) -> std::result::Result<JudgeAnnotationDoc, String> {
    let obj: &Map<String, Value> = value.as_object().ok_or("not a JSON object")?;
    if let Some(key) = obj.keys().find(|k| !ANNOTATION_KEYS.contains(&k.as_str())) {
        return Err(format!("unknown key: {key}"));
    }
    if let Some(key) = ANNOTATION_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(format!("missing key: {key}"));
    }
    let text = |key: &str| {
        obj[key]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| format!("wrong type: {key} must be a string"))
    };
    let (reason, rejected_analysis) = (text("reason")?, text("rejected_analysis")?);
    let clarity = obj["clarity"]
        .as_str()
        .and_then(Clarity::parse)
        .ok_or("unknown clarity")?;
    let score = match &obj["rejected_score"] {
        Value::Number(n) => n.as_i64().ok_or("wrong type: rejected_score must be an integer")?,
        _ => return Err("wrong type: rejected_score must be an integer".into()),
    };
    if !(1..=5).contains(&score) {
        return Err("rejected_score out of range".into());
    }
    Ok(JudgeAnnotationDoc {
        clarity,
        reason,
        rejected_analysis,
        rejected_score: score as u8,
    })
}

pub fn parse_annotation_value(value: &Value) -> std::result::Result<Annotation, String> {
    parse_judge_document(value).map(|doc| doc.annotation())
}

pub fn parse_annotation_document(text: &str) -> std::result::Result<Annotation, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    parse_annotation_value(&value)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationParse {
    pub annotations: BTreeMap<PairId, Annotation>,
    pub rejects: Vec<Reject>,
}

impl AnnotationParse {
    pub fn total(&self) -> usize {
        self.annotations.len() + self.rejects.len()
    }
}

/// Parses `(pair id, document)` entries; a repeated id is rejected.
pub fn parse_annotations<S: AsRef<str>>(documents: &[(PairId, S)]) -> AnnotationParse {
    let mut out = AnnotationParse::default();
    for (id, doc) in documents {
        let result = parse_annotation_document(doc.as_ref());
        record_annotation(&mut out, *id, None, result);
    }
    out
}

fn record_annotation(
    out: &mut AnnotationParse,
    id: PairId,
    line: Option<usize>,
    result: std::result::Result<Annotation, String>,
) {
    let reason = match result {
        Ok(_) if out.annotations.contains_key(&id) => "duplicate pair_id".to_owned(),
        Ok(a) => {
            out.annotations.insert(id, a);
            return;
        }
        Err(reason) => reason,
    };
    out.rejects.push(Reject {
        line,
        pair_id: Some(id),
        ..Reject::new("annotation", reason)
    });
}

/// Parses JSON lines of the form `{"pair_id": 7, "annotation": {…}}`.
pub fn parse_annotation_lines(text: &str) -> AnnotationParse {
    let mut out = AnnotationParse::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let envelope = serde_json::from_str::<Value>(line)
            .map_err(|e| format!("invalid JSON: {e}"))
            .and_then(|v| {
                let id = v.get("pair_id").and_then(Value::as_u64).ok_or("missing key: pair_id")?;
                let doc = v.get("annotation").ok_or("missing key: annotation")?;
                Ok((id, parse_annotation_value(doc)))
            });
        match envelope {
            Ok((id, result)) => record_annotation(&mut out, id, Some(i + 1), result),
            Err(reason) => out.rejects.push(Reject {
                line: Some(i + 1),
                ..Reject::new("annotation", reason)
            }),
        }
    }
    out
}

/// Clarity × rejected-quality contingency table with difficulty strata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumReport {
    /// Rows High, Medium, Low; columns quality 1..=5.
    pub counts: [[usize; 5]; 3],
    pub row_totals: [usize; 3],
    pub column_totals: [usize; 5],
    pub grand_total: usize,
    /// Easy, Medium, Hard.
    pub strata_sizes: [usize; 3],
}

pub fn stratum_report(annotations: &BTreeMap<PairId, Annotation>) -> StratumReport {
    let mut counts = [[0usize; 5]; 3];
    for a in annotations.values() {
        counts[a.clarity.index()][a.rejected_quality as usize - 1] += 1;
    }
    let row_totals = counts.map(|row| row.iter().sum());
    let column_totals = std::array::from_fn(|q| counts.iter().map(|row| row[q]).sum());
    let strata: Strata = partition_difficulty(annotations);
    StratumReport {
        counts,
        row_totals,
        column_totals,
        grand_total: row_totals.iter().sum(),
        strata_sizes: strata.sizes(),
    }
}

impl StratumReport {
    /// Columns `clarity,q1,q2,q3,q4,q5,total`, with a final `Total` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["clarity", "q1", "q2", "q3", "q4", "q5", "total"])?;
        let rows = Clarity::ALL
            .iter()
            .map(|c| (c.as_str(), &self.counts[c.index()], self.row_totals[c.index()]))
            .chain(std::iter::once(("Total", &self.column_totals, self.grand_total)));
        for (label, cells, total) in rows {
            let mut record = vec![label.to_owned()];
            record.extend(cells.iter().map(usize::to_string));
            record.push(total.to_string());
            w.write_record(&record)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, c: &str, r: &str) -> RawRecord {
        RawRecord::new(q, c, r).unwrap()
    }

    /// Independent oracle: a recursive-descent match of balanced groups.
    fn oracle_boxed(text: &str) -> Option<String> {
        fn group(chars: &[char], mut i: usize) -> Option<usize> {
            while i < chars.len() {
                match chars[i] {
                    '\\' if i + 1 < chars.len() && matches!(chars[i + 1], '{' | '}') => i += 2,
                    '{' => i = group(chars, i + 1)? + 1,
                    '}' => return Some(i),
                    _ => i += 1,
                }
            }
            None
        }
        let pos = text.rfind("\\boxed{")? + 7;
        let prefix = text[..pos].chars().count();
        let chars: Vec<char> = text.chars().collect();
        let end = group(&chars, prefix)?;
        Some(chars[prefix..end].iter().collect())
    }

    #[test]
    fn boxed_examples() {
        assert_eq!(extract_boxed_answer("so the answer is \\boxed{42}."), Some("42".into()));
        assert_eq!(extract_boxed_answer("\\boxed{\\frac{1}{2}}"), Some("\\frac{1}{2}".into()));
        assert_eq!(extract_boxed_answer("no marker here"), None);
        assert_eq!(extract_boxed_answer("\\boxed{3} then \\boxed{5}"), Some("5".into()));
        assert_eq!(extract_boxed_answer("\\boxed{\\{x\\}}"), Some("\\{x\\}".into()));
        assert_eq!(extract_boxed_answer("\\boxed{\\frac{1}{2}"), None);
        assert_eq!(extract_boxed_answer("\\boxed{x\\}"), None);
        for s in ["\\boxed{\\frac{1}{2}}", "a \\boxed{{}{{}}} b", "\\boxed{\\sqrt{2}+\\{1\\}}"] {
            assert_eq!(extract_boxed_answer(s), oracle_boxed(s));
        }
    }

    #[test]
    fn dedup_examples() {
        let (kept, removed) = dedup_queries(&[rec("q", "a", "b"), rec("q", "c", "d")]);
        assert_eq!((kept.len(), removed), (1, 1));
        assert_eq!(kept[0].chosen, "a");

        let (kept, removed) = dedup_queries(&[rec("what is 2+2", "a", "b"), rec("what is  2+2 \n", "a", "b")]);
        assert_eq!((kept.len(), removed), (1, 1));

        let records = [rec("Q", "a", "b"), rec("q", "a", "b")];
        assert_eq!(dedup_queries(&records).1, 0);
        assert_eq!(dedup_queries_with(&records, QueryNormalization::WhitespaceCaseFold).1, 1);
        assert_eq!(dedup_queries_with(&[rec("q ", "a", "b"), rec("q", "a", "b")], QueryNormalization::Exact).1, 0);
    }

    #[test]
    fn consistency_examples() {
        let out = consistency_filter(&[
            rec("1", "\\boxed{7}", "\\boxed{ 7 }"),
            rec("2", "\\boxed{7}", "\\boxed{8}"),
            rec("3", "\\boxed{7}", "I give up"),
        ]);
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.kept.iter().map(|r| r.query.as_str()).collect::<Vec<_>>(), ["2", "3"]);
        assert_eq!(
            out.flagged,
            vec![ExtractionFlag {
                index: 1,
                chosen_missing: false,
                rejected_missing: true
            }]
        );
    }

    #[test]
    fn template_parses() {
        let doc = r#"{"clarity":"High","reason":"…","rejected_analysis":"…","rejected_score":2}"#;
        assert_eq!(parse_annotation_document(doc).unwrap(), Annotation::new(Clarity::High, 2).unwrap());
    }

    #[test]
    fn schema_violations() {
        let cases = [
            (r#"{"clarity":"VeryHigh","reason":"","rejected_analysis":"","rejected_score":2}"#, "unknown clarity"),
            (r#"{"clarity":"High","reason":"","rejected_analysis":"","rejected_score":6}"#, "rejected_score out of range"),
            (r#"{"clarity":"High","reason":"","rejected_analysis":"","rejected_score":0}"#, "rejected_score out of range"),
            (r#"{"clarity":"High","reason":"","rejected_score":2}"#, "missing key: rejected_analysis"),
            (r#"{"clarity":"High","reason":"","rejected_analysis":"","rejected_score":2,"x":1}"#, "unknown key: x"),
            (r#"{"clarity":"High","reason":"","rejected_analysis":"","rejected_score":2.5}"#, "wrong type"),
            (r#"{"clarity":"High","reason":"","rejected_analysis":"","rejected_score":"2"}"#, "wrong type"),
            (r#"{"clarity":"high","reason":"","rejected_analysis":"","rejected_score":2}"#, "unknown clarity"),
            (r#"[1,2]"#, "not a JSON object"),
            (r#"{"clarity":"High""#, "invalid JSON"),
        ];
        for (doc, reason) in cases {
            let err = parse_annotation_document(doc).unwrap_err();
            assert!(err.starts_with(reason), "{doc}: {err}");
        }
    }

    #[test]
    fn annotation_lines_keep_line_numbers() {
        let text = concat!(
            r#"{"pair_id":1,"annotation":{"clarity":"Low","reason":"","rejected_analysis":"","rejected_score":5}}"#,
            "\n\nnot json\n",
            r#"{"pair_id":1,"annotation":{"clarity":"Low","reason":"","rejected_analysis":"","rejected_score":5}}"#,
            "\n",
            r#"{"annotation":{}}"#,
        );
        let parsed = parse_annotation_lines(text);
        assert_eq!(parsed.annotations.len(), 1);
        let lines: Vec<_> = parsed.rejects.iter().map(|r| (r.line.unwrap(), r.reason.as_str())).collect();
        assert_eq!(lines[1], (4, "duplicate pair_id"));
        assert_eq!(lines[2], (5, "missing key: pair_id"));
        assert_eq!(lines[0].0, 3);
        assert!(lines[0].1.starts_with("invalid JSON"));
    }

    #[test]
    fn records_jsonl_rejects_carry_lines() {
        let text = "{\"query\":\"a\",\"chosen\":\"x\",\"rejected\":\"y\"}\n{oops\n{\"query\":\"  \",\"chosen\":\"x\",\"rejected\":\"y\"}\n";
        let (records, rejects) = read_records_jsonl(text);
        assert_eq!(records.len(), 1);
        assert_eq!(rejects.iter().map(|r| r.line.unwrap()).collect::<Vec<_>>(), [2, 3]);
        assert_eq!(rejects[1].reason, "empty query");
        assert!(read_records_jsonl("").0.is_empty());
    }

    #[test]
    fn empty_report_is_zero() {
        let report = stratum_report(&BTreeMap::new());
        assert_eq!(report.grand_total, 0);
        assert_eq!(report.counts, [[0; 5]; 3]);
        assert_eq!(report.strata_sizes, [0; 3]);
    }

    #[test]
    fn reference_report() {
        let report = stratum_report(&fixtures::reference_annotations());
        assert_eq!(report.grand_total, 4134);
        assert_eq!(report.strata_sizes, [2674, 1046, 414]);
        assert_eq!(report.row_totals, [3020, 1057, 57]);
        assert_eq!(report.column_totals, [946, 2339, 706, 136, 7]);
        let csv = report.to_csv().unwrap();
        assert!(csv.starts_with("clarity,q1,q2,q3,q4,q5,total\nHigh,946,1728,221,123,2,3020\n"));
        assert!(csv.ends_with("Total,946,2339,706,136,7,4134\n"));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn records() -> impl Strategy<Value = Vec<RawRecord>> {
            let text = prop_oneof!["[ab]{1,2}", " [ab] ", "\\\\boxed\\{[0-9]\\}", "x \\\\boxed\\{1"];
            proptest::collection::vec((text.clone(), text.clone(), text), 0..40).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (q, c, r))| RawRecord::new(format!("{q}{}", i % 5), c, r).unwrap())
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn boxed_round_trip(t in "[^\\\\{}]*") {
                prop_assert_eq!(extract_boxed_answer(&format!("\\boxed{{{t}}}")), Some(t));
            }

            #[test]
            fn dedup_conserves_is_idempotent_and_ordered(rs in records()) {
                let (kept, removed) = dedup_queries(&rs);
                prop_assert_eq!(kept.len() + removed, rs.len());
                prop_assert_eq!(dedup_queries(&kept), (kept.clone(), 0));
                let mut cursor = rs.iter();
                prop_assert!(kept.iter().all(|k| cursor.any(|r| r == k)));
            }

            #[test]
            fn consistency_conserves_is_idempotent_and_ordered(rs in records()) {
                let once = consistency_filter(&rs);
                prop_assert_eq!(once.kept.len() + once.removed.len(), rs.len());
                let twice = consistency_filter(&once.kept);
                prop_assert_eq!(&twice.kept, &once.kept);
                prop_assert!(twice.removed.is_empty());
                let mut cursor = rs.iter();
                prop_assert!(once.kept.iter().all(|k| cursor.any(|r| r == k)));
            }

            #[test]
            fn contingency_identity(cells in proptest::collection::vec((0usize..3, 1u8..=5), 0..300)) {
                let annotations: BTreeMap<PairId, Annotation> = cells
                    .iter()
                    .enumerate()
                    .map(|(i, &(c, q))| (i as PairId, Annotation::new(Clarity::ALL[c], q).unwrap()))
                    .collect();
                let report = stratum_report(&annotations);
                for (r, row) in report.counts.iter().enumerate() {
                    prop_assert_eq!(row.iter().sum::<usize>(), report.row_totals[r]);
                }
                for q in 0..5 {
                    prop_assert_eq!(report.counts.iter().map(|row| row[q]).sum::<usize>(), report.column_totals[q]);
                }
                prop_assert_eq!(report.grand_total, cells.len());
                prop_assert_eq!(report.strata_sizes.iter().sum::<usize>(), cells.len());
            }
        }
    }
}
