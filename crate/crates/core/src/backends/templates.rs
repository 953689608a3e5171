//! Prompt templates shipped as editable text assets.
//!
//! Placeholders are `{name}`; any other brace text (such as the JSON shape in
//! the judge prompt) is left untouched.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EXTRACT: &str = include_str!("../../assets/prompts/extract.txt");
const AUGMENT: &str = include_str!("../../assets/prompts/augment.txt");
const FORWARD: &str = include_str!("../../assets/prompts/forward.txt");
const BACKWARD: &str = include_str!("../../assets/prompts/backward.txt");
const ANSWER: &str = include_str!("../../assets/prompts/answer.txt");
const JUDGE: &str = include_str!("../../assets/prompts/judge.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub extract: String,
    pub augment: String,
    pub forward: String,
    pub backward: String,
    pub answer: String,
    pub judge: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            extract: EXTRACT.to_string(),
            augment: AUGMENT.to_string(),
            forward: FORWARD.to_string(),
            backward: BACKWARD.to_string(),
            answer: ANSWER.to_string(),
            judge: JUDGE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads `<name>.txt` overrides from `dir`; missing files keep the
    /// built-in text.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("extract", &mut t.extract),
            ("augment", &mut t.augment),
            ("forward", &mut t.forward),
            ("backward", &mut t.backward),
            ("answer", &mut t.answer),
            ("judge", &mut t.judge),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(t)
    }

    pub fn render_extract(&self, chunk: &str) -> String {
        render(&self.extract, &[("chunk", chunk)])
    }

    pub fn render_augment(&self, input_json: &str, n: usize) -> String {
        render(&self.augment, &[("input_json", input_json), ("n", &n.to_string())])
    }

    pub fn render_forward(&self, chunk: &str, question: &str) -> String {
        render(&self.forward, &[("chunk", chunk), ("question", question)])
    }

    pub fn render_backward(&self, chunk: &str, answer: &str) -> String {
        render(&self.backward, &[("chunk", chunk), ("answer", answer)])
    }

    pub fn render_judge(&self, question: &str, truth: &str, a1: &str, a2: &str) -> String {
        render(
            &self.judge,
            &[
                ("question", question),
                ("ground_truth", truth),
                ("answer1", a1),
                ("answer2", a2),
            ],
        )
    }
}

/// Single-pass placeholder substitution, so substituted values are never
/// re-expanded.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let vars: HashMap<&str, &str> = vars.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        let key = &after[..key_len];
        if after[key_len..].starts_with('}') {
            if let Some(v) = vars.get(key) {
                out.push_str(v);
                rest = &after[key_len + 1..];
                continue;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

/// Labelled sections of a rendered alignment prompt.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct PromptSections {
    pub context: Option<String>,
    pub question: Option<String>,
    pub answer: Option<String>,
}

impl PromptSections {
    /// Splits a prompt on lines starting with `Context:`, `Question:` or
    /// `Answer:`. Sections with empty bodies are `None`.
    pub fn parse(prompt: &str) -> Self {
        let mut sections = Self::default();
        let mut current: Option<(&str, String)> = None;
        let finish = |cur: Option<(&str, String)>, s: &mut Self| {
            if let Some((label, body)) = cur {
                let body = body.trim().to_string();
                let body = (!body.is_empty()).then_some(body);
                match label {
                    "Context:" => s.context = body,
                    "Question:" => s.question = body,
                    _ => s.answer = body,
                }
            }
        };
        for line in prompt.lines() {
            let label = ["Context:", "Question:", "Answer:"]
                .into_iter()
                .find(|l| line.starts_with(l));
            match label {
                Some(l) => {
                    finish(current.take(), &mut sections);
                    current = Some((l, line[l.len()..].to_string()));
                }
                None => {
                    if let Some((_, body)) = current.as_mut() {
                        body.push('\n');
                        body.push_str(line);
                    }
                }
            }
        }
        finish(current, &mut sections);
        sections
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass_and_keeps_unknown_braces() {
        let out = render("{a} {b} {\"k\": 1} {missing}", &[("a", "{b}"), ("b", "B")]);
        assert_eq!(out, "{b} B {\"k\": 1} {missing}");
    }

    #[test]
    fn forward_prompt_sections() {
        let t = PromptTemplates::default();
        let p = t.render_forward("Alice founded Acme.\nIt grew.", "Who founded Acme?");
        let s = PromptSections::parse(&p);
        assert_eq!(s.context.as_deref(), Some("Alice founded Acme.\nIt grew."));
        assert_eq!(s.question.as_deref(), Some("Who founded Acme?"));
        assert_eq!(s.answer, None);
    }

    #[test]
    fn backward_prompt_sections() {
        let t = PromptTemplates::default();
        let p = t.render_backward("ctx", "Alice");
        let s = PromptSections::parse(&p);
        assert_eq!(s.context.as_deref(), Some("ctx"));
        assert_eq!(s.answer.as_deref(), Some("Alice"));
        assert_eq!(s.question, None);
    }

    #[test]
    fn judge_prompt_keeps_json_shape() {
        let p = PromptTemplates::default().render_judge("q", "gt", "x", "y");
        assert!(p.contains("\"Overall Winner\""));
        assert!(p.contains("Answer 1: x"));
    }

    #[test]
    fn overrides_replace_only_present_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("forward.txt"), "Q={question} C={chunk}").unwrap();
        let t = PromptTemplates::with_overrides(dir.path()).unwrap();
        assert_eq!(t.render_forward("c", "q"), "Q=q C=c");
        assert_eq!(t.judge, PromptTemplates::default().judge);
    }
}
