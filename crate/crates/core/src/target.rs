//! Target code construction: applying an edit script to a secure solution to
//! plant a vulnerability, tracking which byte spans of the result are the
//! planted part, and labeling scored tokens against those spans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ScoredContinuation;

/// How an edit script plants its vulnerability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMethod {
    Delete,
    Change,
    Add,
}

/// Label for a span of target code or a scored token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Benign,
    Vulnerable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditAction {
    Delete,
    Replace,
    Insert,
}

/// One edit against the original solution text, in original byte offsets.
///
/// `anchor_range` (final-text byte offsets) lets a delete mark surviving
/// neighbor text as the vulnerable evidence of an absence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOp {
    pub op: EditAction,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub text: String,
    pub kind: SegmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_range: Option<(usize, usize)>,
}

/// A labeled span of the final target code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub kind: SegmentKind,
}

/// The code the attack wants the victim to emit, with every byte labeled
/// benign or vulnerable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCode {
    pub code: String,
    pub segments: Vec<Segment>,
    pub injection_method: InjectionMethod,
    pub cwe: String,
    pub language: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error("edit range {start}..{end} is invalid for text of length {len}")]
    Range { start: usize, end: usize, len: usize },
    #[error("edits at {first}..{first_end} and {second}..{second_end} overlap")]
    Overlap { first: usize, first_end: usize, second: usize, second_end: usize },
    #[error("edit {op:?} at {start}..{end} is malformed: {reason}")]
    Malformed { op: EditAction, start: usize, end: usize, reason: String },
    #[error("anchor range {start}..{end} falls outside the edited text (length {len})")]
    Anchor { start: usize, end: usize, len: usize },
    #[error("scored continuation does not match target code")]
    Alignment,
}

/// Applies `edits` to `solution`, producing the labeled target.
///
/// Edits are validated against original offsets (in bounds, on char
/// boundaries, pairwise disjoint, shape matching their action), then applied
/// right to left so earlier offsets stay valid. Spans introduced by
/// vulnerability-kind edits, plus any delete anchors, become the vulnerable
/// segments of the result; the rest is benign.
pub fn apply_edits(
    solution: &str,
    edits: &[EditOp],
    cwe: &str,
    language: &str,
) -> Result<TargetCode, TargetError> {
    let mut sorted: Vec<&EditOp> = edits.iter().collect();
    sorted.sort_by_key(|e| (e.start, e.end));
    validate_edits(solution, &sorted)?;

    let mut code = solution.to_string();
    for e in sorted.iter().rev() {
        code.replace_range(e.start..e.end, &e.text);
    }

    let mut vulnerable: Vec<(usize, usize)> = Vec::new();
    let mut shift: isize = 0;
    for e in &sorted {
        let final_start = (e.start as isize + shift) as usize;
        if e.kind == SegmentKind::Vulnerable && !e.text.is_empty() {
            vulnerable.push((final_start, final_start + e.text.len()));
        }
        shift += e.text.len() as isize - (e.end - e.start) as isize;
    }
    for e in &sorted {
        if let Some((a, b)) = e.anchor_range {
            if a > b || b > code.len() || !code.is_char_boundary(a) || !code.is_char_boundary(b) {
                return Err(TargetError::Anchor { start: a, end: b, len: code.len() });
            }
            if a < b {
                vulnerable.push((a, b));
            }
        }
    }

    let injection_method = classify(&sorted);
    let segments = cover(code.len(), vulnerable);
    Ok(TargetCode {
        code,
        segments,
        injection_method,
        cwe: cwe.to_string(),
        language: language.to_string(),
    })
}

fn validate_edits(solution: &str, sorted: &[&EditOp]) -> Result<(), TargetError> {
    let len = solution.len();
    for e in sorted {
        if e.start > e.end
            || e.end > len
            || !solution.is_char_boundary(e.start)
            || !solution.is_char_boundary(e.end)
        {
            return Err(TargetError::Range { start: e.start, end: e.end, len });
        }
        let reason = match e.op {
            EditAction::Delete if !e.text.is_empty() => Some("delete carries replacement text"),
            EditAction::Delete if e.start == e.end => Some("delete removes nothing"),
            EditAction::Insert if e.start != e.end => Some("insert must use an empty range"),
            EditAction::Insert if e.text.is_empty() => Some("insert adds nothing"),
            EditAction::Replace if e.start == e.end => Some("replace must cover a non-empty range"),
            _ => None,
        };
        if let Some(reason) = reason {
            return Err(TargetError::Malformed {
                op: e.op,
                start: e.start,
                end: e.end,
                reason: reason.to_string(),
            });
        }
    }
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.end > b.start || a.start == b.start {
            return Err(TargetError::Overlap {
                first: a.start,
                first_end: a.end,
                second: b.start,
                second_end: b.end,
            });
        }
    }
    Ok(())
}

fn classify(sorted: &[&EditOp]) -> InjectionMethod {
    let vulnerable = sorted.iter().filter(|e| e.kind == SegmentKind::Vulnerable);
    let mut method = InjectionMethod::Delete;
    for e in vulnerable {
        match e.op {
            EditAction::Replace => return InjectionMethod::Change,
            EditAction::Insert => method = InjectionMethod::Add,
            EditAction::Delete => {}
        }
    }
    method
}

fn cover(len: usize, mut vulnerable: Vec<(usize, usize)>) -> Vec<Segment> {
    vulnerable.sort();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (a, b) in vulnerable {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    let mut segments = Vec::new();
    let mut cursor = 0;
    for (a, b) in merged {
        if cursor < a {
            segments.push(Segment { start: cursor, end: a, kind: SegmentKind::Benign });
        }
        segments.push(Segment { start: a, end: b, kind: SegmentKind::Vulnerable });
        cursor = b;
    }
    if cursor < len || segments.is_empty() {
        segments.push(Segment { start: cursor, end: len, kind: SegmentKind::Benign });
    }
    segments
}

/// Labels each scored token by overlap: any intersection with a vulnerable
/// segment marks the token vulnerable.
pub fn label_tokens(
    target: &TargetCode,
    scored: &ScoredContinuation,
) -> Result<Vec<SegmentKind>, TargetError> {
    if scored.continuation_text != target.code {
        return Err(TargetError::Alignment);
    }
    let vulnerable: Vec<&Segment> = target
        .segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Vulnerable)
        .collect();
    Ok(scored
        .tokens
        .iter()
        .map(|t| {
            let hit = vulnerable.iter().any(|s| t.start < s.end && s.start < t.end);
            if hit {
                SegmentKind::Vulnerable
            } else {
                SegmentKind::Benign
            }
        })
        .collect())
}

/// Structural problems found in an assembled target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub description: String,
}

/// Checks segment coverage, ordering, and the presence of a vulnerable span
/// (absence-style deletions excepted). An empty list means the target is
/// well-formed.
pub fn validate(target: &TargetCode) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut cursor = 0;
    for seg in &target.segments {
        if seg.start != cursor {
            violations.push(Violation {
                description: format!(
                    "segment {}..{} leaves bytes {}..{} uncovered or overlapping",
                    seg.start, seg.end, cursor, seg.start
                ),
            });
        }
        if seg.end < seg.start {
            violations.push(Violation {
                description: format!("segment {}..{} is reversed", seg.start, seg.end),
            });
        }
        cursor = seg.end;
    }
    if cursor != target.code.len() {
        violations.push(Violation {
            description: format!(
                "segments end at {} but code has {} bytes",
                cursor,
                target.code.len()
            ),
        });
    }
    let has_vulnerable = target.segments.iter().any(|s| s.kind == SegmentKind::Vulnerable);
    if !has_vulnerable && target.injection_method != InjectionMethod::Delete {
        violations.push(Violation {
            description: "no vulnerable segment in a non-delete target".to_string(),
        });
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScoredToken;

    fn replace(start: usize, end: usize, text: &str, kind: SegmentKind) -> EditOp {
        EditOp { op: EditAction::Replace, start, end, text: text.into(), kind, anchor_range: None }
    }

    #[test]
    fn replace_builds_vulnerable_segment_in_final_coordinates() {
        let solution = "greetuser : fgets ( namebuf ) done1";
        let target = apply_edits(
            solution,
            &[replace(12, 17, "gets", SegmentKind::Vulnerable)],
            "CWE-119",
            "c",
        )
        .unwrap();
        assert_eq!(target.code, "greetuser : gets ( namebuf ) done1");
        assert_eq!(target.injection_method, InjectionMethod::Change);
        let vuln: Vec<&Segment> =
            target.segments.iter().filter(|s| s.kind == SegmentKind::Vulnerable).collect();
        assert_eq!(vuln.len(), 1);
        assert_eq!(&target.code[vuln[0].start..vuln[0].end], "gets");
        assert!(validate(&target).is_empty());
    }

    #[test]
    fn delete_with_anchor_marks_surviving_neighbor() {
        let solution = "getindex checks lowbound then reads cell done4";
        let target = apply_edits(
            solution,
            &[EditOp {
                op: EditAction::Delete,
                start: 9,
                end: 25,
                text: String::new(),
                kind: SegmentKind::Vulnerable,
                anchor_range: Some((9, 13)),
            }],
            "CWE-20",
            "c",
        )
        .unwrap();
        assert_eq!(target.code, "getindex then reads cell done4");
        assert_eq!(target.injection_method, InjectionMethod::Delete);
        let vuln: Vec<&Segment> =
            target.segments.iter().filter(|s| s.kind == SegmentKind::Vulnerable).collect();
        assert_eq!(vuln.len(), 1);
        assert_eq!(&target.code[vuln[0].start..vuln[0].end], "then");
    }

    #[test]
    fn delete_without_anchor_yields_no_vulnerable_segment_yet_validates() {
        let target = apply_edits(
            "keep drop keep2",
            &[EditOp {
                op: EditAction::Delete,
                start: 4,
                end: 9,
                text: String::new(),
                kind: SegmentKind::Vulnerable,
                anchor_range: None,
            }],
            "CWE-20",
            "c",
        )
        .unwrap();
        assert_eq!(target.code, "keep keep2");
        assert!(target.segments.iter().all(|s| s.kind == SegmentKind::Benign));
        assert!(validate(&target).is_empty());
    }

    #[test]
    fn insert_shifts_by_following_edits_only() {
        let solution = "dropslab releases arena done5";
        let target = apply_edits(
            solution,
            &[EditOp {
                op: EditAction::Insert,
                start: 24,
                end: 24,
                text: "extrafree ".into(),
                kind: SegmentKind::Vulnerable,
                anchor_range: None,
            }],
            "CWE-476",
            "c",
        )
        .unwrap();
        assert_eq!(target.code, "dropslab releases arena extrafree done5");
        assert_eq!(target.injection_method, InjectionMethod::Add);
        let vuln: Vec<&Segment> =
            target.segments.iter().filter(|s| s.kind == SegmentKind::Vulnerable).collect();
        assert_eq!(&target.code[vuln[0].start..vuln[0].end], "extrafree ");
    }

    #[test]
    fn empty_edit_list_is_identity_with_one_benign_segment() {
        let target = apply_edits("whole text", &[], "CWE-0", "c").unwrap();
        assert_eq!(target.code, "whole text");
        assert_eq!(
            target.segments,
            vec![Segment { start: 0, end: 10, kind: SegmentKind::Benign }]
        );
        assert_eq!(target.injection_method, InjectionMethod::Delete);
    }

    #[test]
    fn multiple_edits_apply_in_original_coordinates() {
        let solution = "aaa bbb ccc";
        let target = apply_edits(
            solution,
            &[
                replace(0, 3, "xxxxx", SegmentKind::Benign),
                replace(8, 11, "y", SegmentKind::Vulnerable),
            ],
            "CWE-0",
            "c",
        )
        .unwrap();
        assert_eq!(target.code, "xxxxx bbb y");
        let vuln: Vec<&Segment> =
            target.segments.iter().filter(|s| s.kind == SegmentKind::Vulnerable).collect();
        assert_eq!(&target.code[vuln[0].start..vuln[0].end], "y");
    }

    #[test]
    fn overlapping_edits_are_rejected() {
        let err = apply_edits(
            "aaa bbb ccc",
            &[
                replace(0, 5, "x", SegmentKind::Benign),
                replace(4, 7, "y", SegmentKind::Benign),
            ],
            "CWE-0",
            "c",
        )
        .unwrap_err();
        assert!(matches!(err, TargetError::Overlap { .. }));
    }

    #[test]
    fn out_of_range_edit_is_rejected() {
        let err = apply_edits("short", &[replace(3, 99, "x", SegmentKind::Benign)], "CWE-0", "c")
            .unwrap_err();
        assert!(matches!(err, TargetError::Range { .. }));
    }

    fn scored(text: &str, spans: &[(usize, usize)]) -> ScoredContinuation {
        ScoredContinuation {
            continuation_text: text.to_string(),
            tokens: spans
                .iter()
                .map(|&(start, end)| ScoredToken {
                    text: text[start..end].to_string(),
                    start,
                    end,
                    logprob: -1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn labels_by_any_overlap() {
        let target = apply_edits(
            "aa bb cc",
            &[replace(3, 5, "XX", SegmentKind::Vulnerable)],
            "CWE-0",
            "c",
        )
        .unwrap();
        let sc = scored("aa XX cc", &[(0, 3), (3, 6), (6, 8)]);
        let labels = label_tokens(&target, &sc).unwrap();
        assert_eq!(
            labels,
            vec![SegmentKind::Benign, SegmentKind::Vulnerable, SegmentKind::Benign]
        );
    }

    #[test]
    fn straddling_token_is_vulnerable() {
        let target = apply_edits(
            "aa bb cc",
            &[replace(3, 5, "XX", SegmentKind::Vulnerable)],
            "CWE-0",
            "c",
        )
        .unwrap();
        let sc = scored("aa XX cc", &[(0, 4), (4, 8)]);
        let labels = label_tokens(&target, &sc).unwrap();
        assert_eq!(labels, vec![SegmentKind::Vulnerable, SegmentKind::Vulnerable]);
    }

    #[test]
    fn label_requires_exact_text_match() {
        let target = apply_edits("abc", &[], "CWE-0", "c").unwrap();
        let sc = scored("abx", &[(0, 3)]);
        assert_eq!(label_tokens(&target, &sc), Err(TargetError::Alignment));
    }

    #[test]
    fn validate_reports_gaps_and_overlaps() {
        let mut target = apply_edits("abcdef", &[], "CWE-0", "c").unwrap();
        target.segments = vec![
            Segment { start: 0, end: 2, kind: SegmentKind::Benign },
            Segment { start: 3, end: 6, kind: SegmentKind::Vulnerable },
        ];
        let violations = validate(&target);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].description.contains("uncovered"));
    }

    #[test]
    fn same_start_inserts_are_ambiguous_and_rejected() {
        let insert = |text: &str| EditOp {
            op: EditAction::Insert,
            start: 3,
            end: 3,
            text: text.into(),
            kind: SegmentKind::Benign,
            anchor_range: None,
        };
        let err = apply_edits("aaa bbb", &[insert("x"), insert("y")], "CWE-0", "c").unwrap_err();
        assert!(matches!(err, TargetError::Overlap { .. }));
    }
}
