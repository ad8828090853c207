//! Extracting the chosen object from a free-form model response.

use super::{GroundingError, Result};
use crate::label;

/// Finds the vocabulary label named by `response`.
///
/// Matching is case-insensitive on whole words, with underscores, hyphens,
/// quotes and whitespace all acting as separators. When several labels
/// occur, the one whose last occurrence ends latest wins; ties go to the
/// label with more words, then more characters, then vocabulary order.
/// The returned string is always an element of `vocabulary`.
pub fn parse_object<'v, S: AsRef<str>>(response: &str, vocabulary: &'v [S]) -> Result<&'v str> {
    let tokens = label::words(response);
    let mut best: Option<((usize, usize, usize), usize)> = None;
    for (i, l) in vocabulary.iter().enumerate() {
        let needle = label::words(l.as_ref());
        if needle.is_empty() || needle.len() > tokens.len() {
            continue;
        }
        let Some(end) = tokens.windows(needle.len()).rposition(|w| w == needle.as_slice()).map(|s| s + needle.len())
        else {
            continue;
        };
        let rank = (end, needle.len(), l.as_ref().chars().count());
        if best.is_none_or(|(r, _)| rank > r) {
            best = Some((rank, i));
        }
    }
    match best {
        Some((_, i)) => Ok(vocabulary[i].as_ref()),
        None => Err(GroundingError::NoMatch { response: response.to_string() }),
    }
}
