//! Prediction records, per-cell aggregation, and the CSV and Markdown
//! renderings.
//!
//! CSV columns, in order:
//! `query_id,scene_id,method,index,model,query_type,label,x,y,z,object_match,distance,status,error`.
//! Empty fields mean "not applicable": no label for the direct-index method,
//! no point or distance for failed records, no object match without a label.
//! Floats are written in shortest round-trip form, so a parsed CSV
//! reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{EvaluationError, IndexKind, MatchVerdict, Method, Result, Target};
use crate::dataset::QueryType;
use crate::geometry::WorldPoint;

pub const CSV_HEADER: [&str; 14] = [
    "query_id",
    "scene_id",
    "method",
    "index",
    "model",
    "query_type",
    "label",
    "x",
    "y",
    "z",
    "object_match",
    "distance",
    "status",
    "error",
];

/// Model column value for methods that do not call a language model.
pub const NO_MODEL: &str = "n/a";

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub query_id: String,
    pub scene_id: String,
    pub method: Method,
    pub index: IndexKind,
    pub model: String,
    pub query_type: QueryType,
    pub label: Option<String>,
    pub point: Option<WorldPoint>,
    pub object_match: Option<MatchVerdict>,
    pub distance: Option<f64>,
    /// `None` on success.
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn target(&self) -> Target {
        Target { method: self.method, index: self.index }
    }
}

/// Aggregate over the records of one (model, query type, method, index) cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellSummary {
    pub ok: usize,
    pub failed: usize,
    pub mean_distance: Option<f64>,
    pub matches: usize,
    pub no_matches: usize,
    pub pending: usize,
}

impl CellSummary {
    /// Matches over decided records; pending records are left out.
    pub fn match_rate(&self) -> Option<f64> {
        let decided = self.matches + self.no_matches;
        (decided > 0).then(|| self.matches as f64 / decided as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub model: String,
    pub query_type: QueryType,
    pub target: Target,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub records: Vec<PredictionRecord>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(s: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| EvaluationError::MalformedReport { line, message: format!("bad number {s:?}") })
}

impl Report {
    /// Cell aggregates. Means are accumulated in record order.
    pub fn cells(&self) -> BTreeMap<CellKey, CellSummary> {
        let mut sums: BTreeMap<CellKey, (CellSummary, f64)> = BTreeMap::new();
        for r in &self.records {
            let key = CellKey { model: r.model.clone(), query_type: r.query_type, target: r.target() };
            let (cell, sum) = sums.entry(key).or_default();
            match (&r.error, r.distance) {
                (None, Some(d)) => {
                    cell.ok += 1;
                    *sum += d;
                }
                _ => cell.failed += 1,
            }
            if r.is_ok() {
                match r.object_match {
                    Some(MatchVerdict::Match) => cell.matches += 1,
                    Some(MatchVerdict::NoMatch) => cell.no_matches += 1,
                    Some(MatchVerdict::NeedsAdjudication) => cell.pending += 1,
                    None => {}
                }
            }
        }
        sums.into_iter()
            .map(|(k, (mut c, sum))| {
                c.mean_distance = (c.ok > 0).then(|| sum / c.ok as f64);
                (k, c)
            })
            .collect()
    }

    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn pending(&self) -> impl Iterator<Item = (usize, &PredictionRecord)> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_ok() && r.object_match == Some(MatchVerdict::NeedsAdjudication))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.records {
            let (x, y, z) = match &r.point {
                Some(p) => (fmt_f64(p.x()), fmt_f64(p.y()), fmt_f64(p.z())),
                None => Default::default(),
            };
            w.write_record([
                r.query_id.as_str(),
                &r.scene_id,
                r.method.as_str(),
                r.index.as_str(),
                &r.model,
                r.query_type.as_str(),
                r.label.as_deref().unwrap_or(""),
                &x,
                &y,
                &z,
                r.object_match.map(|m| m.as_str()).unwrap_or(""),
                &r.distance.map(fmt_f64).unwrap_or_default(),
                if r.is_ok() { "ok" } else { "failed" },
                r.error.as_deref().unwrap_or(""),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| EvaluationError::MalformedReport { line: 1, message: e.to_string() })?;
        if header.iter().ne(CSV_HEADER) {
            return Err(EvaluationError::MalformedReport { line: 1, message: "unexpected header".into() });
        }
        let mut records = Vec::new();
        for (i, row) in rd.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| EvaluationError::MalformedReport { line, message: e.to_string() })?;
            let bad = |message: String| EvaluationError::MalformedReport { line, message };
            let f = |k: usize| row.get(k).unwrap_or("");
            let opt = |k: usize| Some(f(k).to_string()).filter(|s| !s.is_empty());
            let point = match (parse_f64(f(7), line)?, parse_f64(f(8), line)?, parse_f64(f(9), line)?) {
                (Some(x), Some(y), Some(z)) => Some(WorldPoint::new(x, y, z)),
                (None, None, None) => None,
                _ => return Err(bad("partial point".into())),
            };
            let status = f(12);
            let error = match status {
                "ok" => None,
                "failed" => Some(f(13).to_string()),
                other => return Err(bad(format!("bad status {other:?}"))),
            };
            records.push(PredictionRecord {
                query_id: f(0).to_string(),
                scene_id: f(1).to_string(),
                method: f(2).parse().map_err(bad)?,
                index: f(3).parse().map_err(bad)?,
                model: f(4).to_string(),
                query_type: f(5).parse().map_err(|v| bad(format!("bad query type {v:?}")))?,
                label: opt(6),
                point,
                object_match: opt(10).map(|m| m.parse()).transpose().map_err(bad)?,
                distance: parse_f64(f(11), line)?,
                error,
            });
        }
        Ok(Self { records })
    }

    /// Tables laid out with rows model × query type and one column per
    /// method/index: mean distance, object-match rate, and record counts.
    pub fn to_markdown(&self) -> String {
        let cells = self.cells();
        let mut models: Vec<&str> = Vec::new();
        for r in &self.records {
            if r.model != NO_MODEL && !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        if models.is_empty() {
            models.push(NO_MODEL);
        }
        let order = [QueryType::Conversational, QueryType::Implicit, QueryType::Explicit];
        let types: Vec<QueryType> =
            order.into_iter().filter(|t| self.records.iter().any(|r| r.query_type == *t)).collect();
        let lookup = |model: &str, qt: QueryType, target: Target| {
            // Methods without a model contribute the same cell to every model row.
            let model = if target.method == Method::DirectIndex { NO_MODEL } else { model };
            cells.get(&CellKey { model: model.to_string(), query_type: qt, target })
        };
        let mut out = String::new();
        let mut table = |title: &str, cell_text: &dyn Fn(Option<&CellSummary>, Target) -> String| {
            let _ = writeln!(out, "## {title}\n");
            out.push_str("| Model | Type |");
            for t in Target::TABLE_COLUMNS {
                let _ = write!(out, " {} |", t.column_title());
            }
            out.push_str("\n|---|---|");
            out.push_str(&"---|".repeat(Target::TABLE_COLUMNS.len()));
            out.push('\n');
            for qt in &types {
                for m in &models {
                    let _ = write!(out, "| {m} | {qt} |");
                    for t in Target::TABLE_COLUMNS {
                        let _ = write!(out, " {} |", cell_text(lookup(m, *qt, t), t));
                    }
                    out.push('\n');
                }
            }
            out.push('\n');
        };
        table("Mean distance to the nearest plausible object (m)", &|c, _| {
            c.and_then(|c| c.mean_distance).map_or("-".into(), |d| format!("{d:.3}"))
        });
        table("Object-match rate (%)", &|c, t| {
            if t.method == Method::DirectIndex {
                return "n/a".into();
            }
            c.and_then(|c| c.match_rate()).map_or("-".into(), |r| format!("{:.1}", 100.0 * r))
        });
        table("Records: ok / failed / pending adjudication", &|c, _| {
            c.map_or("-".into(), |c| format!("{} / {} / {}", c.ok, c.failed, c.pending))
        });
        out
    }

    /// Writes `report.csv` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| EvaluationError::Io { path: dir.to_path_buf(), source: e })?;
        for (name, text) in [("report.csv", self.to_csv()), ("report.md", self.to_markdown())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| EvaluationError::Io { path, source: e })?;
        }
        Ok(())
    }
}
