//! Prompt templates with `{{variable}}` substitution.
//!
//! A template file is plain text, optionally split into a system and a user
//! part by `<<<SYSTEM>>>` / `<<<USER>>>` marker lines; without markers the
//! whole file is the user prompt and a generic system line is used. The
//! built-in templates are compiled into the binary; a template directory
//! can override or extend them file by file (`<id>.txt`).
//!
//! Rendering is strict: a placeholder with no binding is a configuration
//! error, never silently left in the prompt.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_SYSTEM: &str = "You are a careful assistant for video caption tooling.";

const SYSTEM_MARKER: &str = "<<<SYSTEM>>>";
const USER_MARKER: &str = "<<<USER>>>";

/// Ids of the templates compiled into the crate, in the order they are
/// registered.
pub const BUILTIN_TEMPLATE_IDS: [&str; 6] =
    ["mutate", "recaption", "judge", "order_judge", "mcq_gen", "ynq_gen"];

#[derive(Debug, Clone, PartialEq)]
struct Template {
    system: String,
    user: String,
}

/// A fully rendered prompt, ready for a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub template_id: String,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, Template>,
}

fn parse_template(raw: &str) -> Template {
    if let Some(rest) = raw.strip_prefix(SYSTEM_MARKER) {
        if let Some((system, user)) = rest.split_once(USER_MARKER) {
            return Template {
                system: system.trim().to_string(),
                user: user.trim().to_string(),
            };
        }
    }
    Template { system: DEFAULT_SYSTEM.to_string(), user: raw.trim().to_string() }
}

fn substitute(text: &str, vars: &BTreeMap<String, String>, id: &str) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| {
            Error::Config(format!("template '{id}': unterminated '{{{{' placeholder"))
        })?;
        let name = after[..end].trim();
        let value = vars.get(name).ok_or_else(|| {
            Error::Config(format!("template '{id}': variable '{name}' is not bound"))
        })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

impl TemplateStore {
    /// Only the compiled-in templates.
    pub fn builtin() -> Self {
        let sources: [(&str, &str); 6] = [
            ("mutate", include_str!("../../templates/mutate.txt")),
            ("recaption", include_str!("../../templates/recaption.txt")),
            ("judge", include_str!("../../templates/judge.txt")),
            ("order_judge", include_str!("../../templates/order_judge.txt")),
            ("mcq_gen", include_str!("../../templates/mcq_gen.txt")),
            ("ynq_gen", include_str!("../../templates/ynq_gen.txt")),
        ];
        let templates = sources
            .into_iter()
            .map(|(id, raw)| (id.to_string(), parse_template(raw)))
            .collect();
        TemplateStore { templates }
    }

    /// Built-ins plus every `<id>.txt` in `dir`, which override built-ins
    /// with the same id.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut store = Self::builtin();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut paths: Vec<_> = entries
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| {
                    Error::Config(format!("template file {} has no usable name", path.display()))
                })?;
            let raw = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            store.templates.insert(id, parse_template(&raw));
        }
        Ok(store)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.templates.keys().map(|s| s.as_str()).collect()
    }

    /// Render `id` with `vars`. Unknown template or unbound variable is a
    /// configuration error.
    pub fn render(&self, id: &str, vars: &BTreeMap<String, String>) -> Result<RenderedPrompt> {
        let template = self.templates.get(id).ok_or_else(|| {
            Error::Config(format!(
                "unknown template '{id}' (available: {})",
                self.ids().join(", ")
            ))
        })?;
        Ok(RenderedPrompt {
            template_id: id.to_string(),
            system: substitute(&template.system, vars, id)?,
            user: substitute(&template.user, vars, id)?,
        })
    }
}
