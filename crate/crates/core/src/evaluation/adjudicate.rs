//! Human resolution of `needs-adjudication` object matches.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use super::{object_match, EquivalenceConfig, EvaluationError, MatchVerdict, Report, Result};
use crate::dataset::Query;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdjudicationSummary {
    pub asked: usize,
    pub decided: usize,
    pub still_pending: usize,
}

/// Recomputes the object match of every successful labeled record.
/// `queries` is keyed by (scene id, query id).
pub fn rescore(report: &mut Report, queries: &BTreeMap<(String, String), Query>, eq: &EquivalenceConfig) -> Result<()> {
    for r in report.records.iter_mut().filter(|r| r.is_ok()) {
        let Some(label) = &r.label else { continue };
        let q = queries.get(&(r.scene_id.clone(), r.query_id.clone())).ok_or_else(|| {
            EvaluationError::InvalidConfig(format!("report mentions unknown query {}/{}", r.scene_id, r.query_id))
        })?;
        r.object_match = Some(object_match(label, &q.plausible_labels, eq));
    }
    Ok(())
}

/// Asks about each distinct pending (prediction, plausible set) pair, stores
/// the answers in `eq`, and rescores the report.
///
/// Answers: `y` match, `n` no match, `s` skip, `q` stop asking.
pub fn adjudicate<R: BufRead, W: Write>(
    report: &mut Report,
    queries: &BTreeMap<(String, String), Query>,
    eq: &mut EquivalenceConfig,
    mut input: R,
    mut output: W,
) -> Result<AdjudicationSummary> {
    let io = |e: std::io::Error| EvaluationError::Io { path: "<terminal>".into(), source: e };
    let mut seen = BTreeSet::new();
    let mut cases = Vec::new();
    for (_, r) in report.pending() {
        let q = &queries.get(&(r.scene_id.clone(), r.query_id.clone())).ok_or_else(|| {
            EvaluationError::InvalidConfig(format!("report mentions unknown query {}/{}", r.scene_id, r.query_id))
        })?;
        let label = r.label.clone().unwrap_or_default();
        let key = (eq.canonical(&label), q.plausible_labels.iter().map(|l| eq.canonical(l)).collect::<BTreeSet<_>>());
        if seen.insert(key) {
            cases.push((label, (*q).clone()));
        }
    }
    let mut summary = AdjudicationSummary::default();
    'cases: for (label, q) in &cases {
        if object_match(label, &q.plausible_labels, eq) != MatchVerdict::NeedsAdjudication {
            continue;
        }
        summary.asked += 1;
        loop {
            write!(
                output,
                "\nQuery {} ({}): {}\nPredicted: {label}\nAcceptable: {}\nCount as a match? [y/n/s/q] ",
                q.query_id,
                q.query_type,
                q.text,
                q.plausible_labels.join(", ")
            )
            .map_err(io)?;
            output.flush().map_err(io)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io)? == 0 {
                break 'cases;
            }
            match line.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" => eq.record_decision(label, &q.plausible_labels, true),
                "n" | "no" => eq.record_decision(label, &q.plausible_labels, false),
                "s" | "skip" => continue 'cases,
                "q" | "quit" => break 'cases,
                _ => continue,
            }
            summary.decided += 1;
            continue 'cases;
        }
    }
    rescore(report, queries, eq)?;
    summary.still_pending = report.pending().count();
    Ok(summary)
}
