//! Prompt templates with `{objects}` and `{query}` placeholders.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{GroundingError, Result};
use crate::label;

pub const OBJECTS: &str = "{objects}";
pub const QUERY: &str = "{query}";

pub const DEFAULT_TEMPLATE_ID: &str = "cartier-default-v1";
pub const DEFAULT_TEMPLATE: &str = "You are helping a mobile robot choose a navigation target. \
The robot has detected the following objects in its environment: {objects}. \
A user says: \"{query}\". \
Reply with the single object from the list that the robot should navigate to in order to help the user.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    text: String,
    objects_at: usize,
    query_at: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE_ID, DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

impl PromptTemplate {
    /// Both placeholders must occur exactly once.
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        let find_once = |p: &str| -> Result<usize> {
            let mut hits = text.match_indices(p).map(|(i, _)| i);
            match (hits.next(), hits.next()) {
                (Some(i), None) => Ok(i),
                (None, _) => Err(GroundingError::InvalidTemplate(format!("template {id:?} lacks {p}"))),
                (Some(_), Some(_)) => Err(GroundingError::InvalidTemplate(format!("template {id:?} repeats {p}"))),
            }
        };
        let objects_at = find_once(OBJECTS)?;
        let query_at = find_once(QUERY)?;
        if id.trim().is_empty() {
            return Err(GroundingError::InvalidTemplate("template id is empty".into()));
        }
        Ok(Self { id, text, objects_at, query_at })
    }

    /// Reads a template file. The id is derived from the file contents so
    /// cached responses never leak across edited templates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GroundingError::InvalidTemplate(format!("{}: {e}", path.display())))?;
        let text = text.strip_suffix('\n').unwrap_or(&text).to_string();
        let digest = hex::encode(Sha256::digest(text.as_bytes()));
        Self::new(format!("file-{}", &digest[..16]), text)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Literal pieces between placeholders, in order, and whether `{objects}`
    /// comes first.
    fn pieces(&self) -> ([&str; 3], bool) {
        let objects_first = self.objects_at < self.query_at;
        let (a, la, b, lb) = if objects_first {
            (self.objects_at, OBJECTS.len(), self.query_at, QUERY.len())
        } else {
            (self.query_at, QUERY.len(), self.objects_at, OBJECTS.len())
        };
        ([&self.text[..a], &self.text[a + la..b], &self.text[b + lb..]], objects_first)
    }

    /// Single-pass substitution: placeholder-like text inside the values is
    /// never expanded.
    pub fn render(&self, objects: &str, query: &str) -> String {
        let ([pre, mid, post], objects_first) = self.pieces();
        let (first, second) = if objects_first { (objects, query) } else { (query, objects) };
        [pre, first, mid, second, post].concat()
    }

    /// Inverse of [`render`](Self::render): recovers `(objects, query)`.
    ///
    /// When the inserted values themselves contain the literal text between
    /// placeholders the split is ambiguous; the first occurrence is used.
    pub fn extract<'a>(&self, prompt: &'a str) -> Option<(&'a str, &'a str)> {
        let ([pre, mid, post], objects_first) = self.pieces();
        let body = prompt.strip_prefix(pre)?.strip_suffix(post)?;
        let split = body.find(mid)?;
        let (first, second) = (&body[..split], &body[split + mid.len()..]);
        Some(if objects_first { (first, second) } else { (second, first) })
    }
}

/// Joins the vocabulary (deduplicated by normalized label, first-seen order)
/// with ", " and substitutes it and the query into the template.
pub fn build_prompt<S: AsRef<str>>(template: &PromptTemplate, vocabulary: &[S], query: &str) -> Result<String> {
    let vocab = label::dedup(vocabulary.iter().map(AsRef::as_ref).filter(|l| !label::normalize(l).is_empty()));
    if vocab.is_empty() {
        return Err(GroundingError::EmptyVocabulary);
    }
    if query.trim().is_empty() {
        return Err(GroundingError::EmptyQuery);
    }
    Ok(template.render(&vocab.join(", "), query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn substitutes_vocabulary_and_query() {
        let p = build_prompt(&PromptTemplate::default(), &["bed", "sofa", "mug"], "I'm sleepy").unwrap();
        assert!(p.contains("following objects in its environment: bed, sofa, mug."));
        assert!(p.contains("A user says: \"I'm sleepy\"."));
    }

    #[test]
    fn duplicates_listed_once() {
        let p = build_prompt(&PromptTemplate::default(), &["bed", "mug", "bed", "Mug", "sofa"], "q").unwrap();
        assert!(p.contains(": bed, mug, sofa."));
    }

    #[test]
    fn empty_inputs_rejected() {
        let t = PromptTemplate::default();
        assert!(matches!(build_prompt::<&str>(&t, &[], "q"), Err(GroundingError::EmptyVocabulary)));
        assert!(matches!(build_prompt(&t, &["  "], "q"), Err(GroundingError::EmptyVocabulary)));
        assert!(matches!(build_prompt(&t, &["bed"], " \n"), Err(GroundingError::EmptyQuery)));
    }

    #[test]
    fn placeholders_required_once() {
        assert!(PromptTemplate::new("a", "{objects}").is_err());
        assert!(PromptTemplate::new("a", "{objects} {query} {query}").is_err());
        assert!(PromptTemplate::new("", "{objects} {query}").is_err());
        let t = PromptTemplate::new("rev", "Q={query}; O={objects}!").unwrap();
        assert_eq!(t.render("a, b", "hi"), "Q=hi; O=a, b!");
        assert_eq!(t.extract("Q=hi; O=a, b!"), Some(("a, b", "hi")));
    }

    #[test]
    fn placeholder_text_in_query_is_not_expanded() {
        let t = PromptTemplate::default();
        let p = build_prompt(&t, &["bed"], "say {objects}").unwrap();
        assert!(p.contains("\"say {objects}\""));
        assert_eq!(t.extract(&p), Some(("bed", "say {objects}")));
    }

    #[test]
    fn loaded_template_id_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        std::fs::write(&a, "Objects: {objects}\nUser: {query}\n").unwrap();
        let t1 = PromptTemplate::load(&a).unwrap();
        assert_eq!(t1.text(), "Objects: {objects}\nUser: {query}");
        std::fs::write(&a, "Objects: {objects}\nRequest: {query}\n").unwrap();
        assert_ne!(PromptTemplate::load(&a).unwrap().id(), t1.id());
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{1,6}( [a-z]{1,6})?"
    }

    proptest! {
        #[test]
        fn distinct_inputs_give_distinct_prompts(
            cases in prop::collection::vec((prop::collection::vec(word(), 1..5), "[a-zA-Z ,.'?]{1,30}"), 2..40)
        ) {
            let t = PromptTemplate::default();
            let mut seen = std::collections::HashMap::new();
            for (vocab, query) in cases {
                prop_assume!(!query.trim().is_empty());
                let key = (label::dedup(&vocab).join(", "), query.clone());
                let p = build_prompt(&t, &vocab, &query).unwrap();
                if let Some(prev) = seen.insert(p, key.clone()) {
                    prop_assert_eq!(prev, key);
                }
            }
        }

        #[test]
        fn extract_inverts_render(vocab in prop::collection::vec(word(), 1..6), query in "[^\"]{1,40}") {
            prop_assume!(!query.trim().is_empty());
            let t = PromptTemplate::default();
            let p = build_prompt(&t, &vocab, &query).unwrap();
            let (objects, q) = t.extract(&p).unwrap();
            prop_assert_eq!(q, query.as_str());
            let listed: HashSet<_> = objects.split(", ").collect();
            prop_assert_eq!(listed.len(), label::dedup(&vocab).len());
        }
    }
}
