//! Label normalization shared by the indices, the parser and the metrics.
//!
//! Two labels are the same object name when they agree after lowercasing and
//! treating underscores, hyphens and runs of whitespace as a single space.

/// Canonical key form of a label: lowercase words joined by single spaces.
pub fn normalize(label: &str) -> String {
    words(label).join(" ")
}

/// Lowercase alphanumeric words of `text`. Any other character separates words.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Deduplicates labels by normalized form, keeping first-seen order and the
/// first-seen spelling.
pub fn dedup<I, S>(labels: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for l in labels {
        let l = l.as_ref();
        if seen.insert(normalize(l)) {
            out.push(l.to_string());
        }
    }
    out
}
