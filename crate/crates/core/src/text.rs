//! Small text utilities shared by entity matching and the mock extractor.

/// Capitalized words that never start or form an entity on their own.
const STOPWORDS: &[&str] = &[
    "A",
    "An",
    "The",
    "This",
    "That",
    "These",
    "Those",
    "It",
    "Its",
    "He",
    "She",
    "They",
    "We",
    "I",
    "In",
    "On",
    "At",
    "Of",
    "For",
    "By",
    "With",
    "From",
    "To",
    "And",
    "But",
    "Or",
    "As",
    "After",
    "Before",
    "During",
    "When",
    "Where",
    "Who",
    "What",
    "Which",
    "Why",
    "How",
    "Is",
    "Was",
    "Are",
    "Were",
    "Did",
    "Does",
    "Do",
    "Has",
    "Had",
    "His",
    "Her",
    "Their",
    "Our",
    "There",
    "Here",
    "Then",
    "Also",
    "However",
    "Meanwhile",
    "Later",
    "Since",
    "While",
    "If",
];

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

/// Splits text into sentences at `.`, `!`, `?` followed by whitespace or the
/// end of input, and at line breaks.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        let boundary = match c {
            '\n' => true,
            '.' | '!' | '?' => bytes.get(i + 1).is_none_or(|b| b.is_ascii_whitespace()),
            _ => false,
        };
        if boundary {
            let s = text[start..=i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + c.len_utf8();
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// One token of a sentence: the bare word and whether punctuation followed
/// it (which ends any capitalized span).
pub struct Word<'a> {
    pub text: &'a str,
    pub breaks: bool,
}

pub fn words(sentence: &str) -> Vec<Word<'_>> {
    sentence
        .split_whitespace()
        .filter_map(|raw| {
            let text = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if text.is_empty() {
                return None;
            }
            let breaks = raw.ends_with(|c: char| !c.is_alphanumeric());
            Some(Word { text, breaks })
        })
        .collect()
}

/// Maximal runs of capitalized non-stopword words, with the index range of
/// the words they cover.
pub fn capitalized_spans(words: &[Word<'_>]) -> Vec<(String, usize, usize)> {
    let mut spans = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    let mut start = 0;
    for (i, w) in words.iter().enumerate() {
        let ok = is_capitalized(w.text) && !STOPWORDS.contains(&w.text);
        if ok {
            if cur.is_empty() {
                start = i;
            }
            cur.push(w.text);
        }
        if (!ok || w.breaks) && !cur.is_empty() {
            let end = if ok { i + 1 } else { i };
            spans.push((cur.join(" "), start, end));
            cur.clear();
        }
    }
    if !cur.is_empty() {
        spans.push((cur.join(" "), start, words.len()));
    }
    spans
}

/// Surface forms used by the mock extractor: capitalized spans of `text`.
pub fn capitalized_surface_forms(text: &str) -> Vec<String> {
    sentences(text)
        .into_iter()
        .flat_map(|s| capitalized_spans(&words(s)).into_iter().map(|(n, _, _)| n))
        .collect()
}

/// Case-folds, trims and collapses internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_name("  ACME \t Corp "), "acme corp");
        assert_eq!(normalize_name("Acme"), normalize_name("ACME"));
    }

    #[test]
    fn spans_split_on_lowercase_and_punctuation() {
        assert_eq!(capitalized_surface_forms("the CEO of Acme"), vec!["CEO", "Acme"]);
        assert_eq!(
            capitalized_surface_forms("Acme Corporation, Paris."),
            vec!["Acme Corporation", "Paris"]
        );
    }
}
