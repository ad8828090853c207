//! Object-match and distance metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvaluationError, Result};
use crate::dataset::SceneTruth;
use crate::geometry::{point_to_aabb_distance, WorldPoint};
use crate::label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchVerdict {
    Match,
    NoMatch,
    NeedsAdjudication,
}

impl MatchVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchVerdict::Match => "match",
            MatchVerdict::NoMatch => "no-match",
            MatchVerdict::NeedsAdjudication => "needs-adjudication",
        }
    }
}

impl fmt::Display for MatchVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchVerdict {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "match" => Ok(MatchVerdict::Match),
            "no-match" => Ok(MatchVerdict::NoMatch),
            "needs-adjudication" => Ok(MatchVerdict::NeedsAdjudication),
            other => Err(format!("unknown match verdict {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColocationVerdict {
    Match,
    NoMatch,
    Ambiguous,
}

/// "Answering `predicted` when `target` was wanted" is judged `verdict`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Colocation {
    pub predicted: String,
    pub target: String,
    pub verdict: ColocationVerdict,
}

/// Label equivalences used by the object-match metric.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    #[serde(default)]
    pub synonym_groups: Vec<Vec<String>>,
    #[serde(default)]
    pub colocations: Vec<Colocation>,
}

impl EquivalenceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| EvaluationError::Io { path: path.to_path_buf(), source: e })?;
        let eq: Self = serde_json::from_slice(&bytes)
            .map_err(|e| EvaluationError::InvalidConfig(format!("{}: {e}", path.display())))?;
        eq.validate()?;
        Ok(eq)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| EvaluationError::Io { path: path.to_path_buf(), source: e })
    }

    /// No label may sit in two synonym groups, and each (predicted, target)
    /// pair may be judged only once.
    pub fn validate(&self) -> Result<()> {
        let mut owner: BTreeMap<String, usize> = BTreeMap::new();
        for (g, group) in self.synonym_groups.iter().enumerate() {
            for l in group {
                let key = label::normalize(l);
                if key.is_empty() {
                    return Err(EvaluationError::InvalidConfig(format!("empty label in synonym group {g}")));
                }
                if let Some(prev) = owner.insert(key, g) {
                    if prev != g {
                        return Err(EvaluationError::InvalidConfig(format!(
                            "label {l:?} appears in synonym groups {prev} and {g}"
                        )));
                    }
                }
            }
        }
        let mut pairs = BTreeSet::new();
        for c in &self.colocations {
            if !pairs.insert((self.canonical(&c.predicted), self.canonical(&c.target))) {
                return Err(EvaluationError::InvalidConfig(format!(
                    "colocation ({:?}, {:?}) is listed twice",
                    c.predicted, c.target
                )));
            }
        }
        Ok(())
    }

    /// Normalized label, mapped to the first member of its synonym group.
    pub fn canonical(&self, l: &str) -> String {
        let key = label::normalize(l);
        self.synonym_groups
            .iter()
            .find(|g| g.iter().any(|m| label::normalize(m) == key))
            .map(|g| label::normalize(&g[0]))
            .unwrap_or(key)
    }

    /// Records a human decision for every ambiguous pair `(predicted, t)`
    /// with `t` in `plausible`, or adds `(predicted, plausible[0])` if none
    /// exists.
    pub fn record_decision(&mut self, predicted: &str, plausible: &[String], is_match: bool) {
        let verdict = if is_match { ColocationVerdict::Match } else { ColocationVerdict::NoMatch };
        let p = self.canonical(predicted);
        let targets: BTreeSet<String> = plausible.iter().map(|t| self.canonical(t)).collect();
        let mut touched = false;
        for i in 0..self.colocations.len() {
            let c = &self.colocations[i];
            if c.verdict == ColocationVerdict::Ambiguous
                && self.canonical(&c.predicted) == p
                && targets.contains(&self.canonical(&c.target))
            {
                self.colocations[i].verdict = verdict;
                touched = true;
            }
        }
        if !touched {
            if let Some(t) = plausible.first() {
                self.colocations.push(Colocation { predicted: predicted.to_string(), target: t.clone(), verdict });
            }
        }
    }
}

/// Whether `pred` answers a query whose acceptable objects are `plausible`.
pub fn object_match(pred: &str, plausible: &[String], eq: &EquivalenceConfig) -> MatchVerdict {
    let p = eq.canonical(pred);
    let targets: BTreeSet<String> = plausible.iter().map(|t| eq.canonical(t)).collect();
    if targets.contains(&p) {
        return MatchVerdict::Match;
    }
    let mut ambiguous = false;
    for c in &eq.colocations {
        if eq.canonical(&c.predicted) == p && targets.contains(&eq.canonical(&c.target)) {
            match c.verdict {
                ColocationVerdict::Match => return MatchVerdict::Match,
                ColocationVerdict::Ambiguous => ambiguous = true,
                ColocationVerdict::NoMatch => {}
            }
        }
    }
    if ambiguous {
        MatchVerdict::NeedsAdjudication
    } else {
        MatchVerdict::NoMatch
    }
}

/// Minimum distance from `p` to the box of any ground-truth object whose
/// label is in `plausible`.
pub fn distance_metric(p: &WorldPoint, truth: &SceneTruth, plausible: &[String]) -> Result<f64> {
    if plausible.is_empty() {
        return Err(EvaluationError::InvalidConfig("plausible label list is empty".into()));
    }
    if let Some(missing) = plausible.iter().find(|l| !truth.has_label(l)) {
        return Err(EvaluationError::UnknownPlausibleLabel {
            label: missing.clone(),
            scene_id: truth.scene_id.clone(),
        });
    }
    Ok(truth.objects_labeled(plausible).map(|o| point_to_aabb_distance(p, &o.aabb)).fold(f64::INFINITY, f64::min))
}
