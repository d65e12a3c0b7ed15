//! Prompt templates with `{name}` placeholders. `{{` and `}}` are literal
//! braces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    PassiveUser,
    Solver,
    Judge,
}

impl TemplateId {
    pub const ALL: [TemplateId; 3] = [TemplateId::PassiveUser, TemplateId::Solver, TemplateId::Judge];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::PassiveUser => "passive_user",
            TemplateId::Solver => "solver",
            TemplateId::Judge => "judge",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub text: String,
}

enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn pieces(text: &str) -> Result<Vec<Piece<'_>>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find(['{', '}']) {
        if i > 0 {
            out.push(Piece::Text(&rest[..i]));
        }
        let tail = &rest[i..];
        if tail.starts_with("{{") {
            out.push(Piece::Brace('{'));
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push(Piece::Brace('}'));
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            return Err(GatewayError::Template(format!("stray '}}' at byte {}", text.len() - tail.len())));
        } else {
            let end = tail[1..].find('}').map(|j| j + 1);
            match end {
                Some(j) if j > 1 && tail[1..j].chars().all(is_name_char) => {
                    out.push(Piece::Slot(&tail[1..j]));
                    rest = &tail[j + 1..];
                }
                _ => {
                    return Err(GatewayError::Template(format!(
                        "unterminated or malformed placeholder at byte {}",
                        text.len() - tail.len()
                    )))
                }
            }
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn new(id: TemplateId, text: impl Into<String>) -> Result<Self> {
        let t = Self { id, text: text.into() };
        pieces(&t.text)?;
        Ok(t)
    }

    /// The bundled template for `id`.
    pub fn builtin(id: TemplateId) -> Self {
        let text = match id {
            TemplateId::PassiveUser => include_str!("../assets/passive_user.txt"),
            TemplateId::Solver => include_str!("../assets/solver.txt"),
            TemplateId::Judge => include_str!("../assets/judge.txt"),
        };
        Self { id, text: text.to_string() }
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        pieces(&self.text)
            .map(|ps| {
                ps.into_iter()
                    .filter_map(|p| match p {
                        Piece::Slot(s) => Some(s.to_string()),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Substitutes every placeholder. Each placeholder must be bound and every
    /// binding must be used; values are inserted byte for byte.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String> {
        let ps = pieces(&self.text)?;
        let mut used = BTreeSet::new();
        let mut out = String::with_capacity(self.text.len());
        for p in ps {
            match p {
                Piece::Text(s) => out.push_str(s),
                Piece::Brace(c) => out.push(c),
                Piece::Slot(name) => {
                    let v = bindings.get(name).ok_or_else(|| GatewayError::MissingPlaceholder {
                        template: self.id.to_string(),
                        name: name.to_string(),
                    })?;
                    out.push_str(v);
                    used.insert(name);
                }
            }
        }
        if let Some(extra) = bindings.keys().find(|k| !used.contains(*k)) {
            return Err(GatewayError::ExtraBinding {
                template: self.id.to_string(),
                name: extra.to_string(),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn substitutes_and_unescapes() {
        let t = PromptTemplate::new(TemplateId::Solver, "a {x} {{b}} {y}!").unwrap();
        let s = t.render(&bind(&[("x", "{1}"), ("y", "")])).unwrap();
        assert_eq!(s, "a {1} {b} !");
    }

    #[test]
    fn rejects_missing_and_extra() {
        let t = PromptTemplate::new(TemplateId::Solver, "{x}").unwrap();
        assert!(matches!(t.render(&bind(&[])), Err(GatewayError::MissingPlaceholder { .. })));
        assert!(matches!(
            t.render(&bind(&[("x", "1"), ("z", "2")])),
            Err(GatewayError::ExtraBinding { .. })
        ));
    }

    #[test]
    fn malformed_text_is_refused() {
        for bad in ["{", "a }", "{bad name}", "{}"] {
            assert!(PromptTemplate::new(TemplateId::Judge, bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn builtin_placeholders() {
        let names = |id| PromptTemplate::builtin(id).placeholders().into_iter().collect::<Vec<_>>();
        assert_eq!(names(TemplateId::PassiveUser), ["current_question", "persona_preferences", "persona_profile"]);
        assert_eq!(names(TemplateId::Solver), ["elicited_preferences"]);
        assert_eq!(
            names(TemplateId::Judge),
            ["criterion_description", "final_response", "performance_levels", "pref_just", "pref_key", "pref_val"]
        );
    }
}
