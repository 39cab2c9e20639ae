//! Stage 1: descriptive text prompts.
//!
//! A dialog template asks the chat model for `color:`, `shape:` and
//! `location:` lines about the target concept; the reply is parsed leniently
//! into an [`AttributeSet`] and rendered into the detector phrase by a prompt
//! template. Templates are registered by id so reports can name exactly which
//! wording produced a run.

mod attributes;
mod template;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attributes::{parse_attributes, AttributeSet};
pub use template::{Template, Var};

pub const DEFAULT_DIALOG_TEMPLATE: &str = "default-v1";
pub const DEFAULT_PROMPT_TEMPLATE: &str = "default-v1";

const DEFAULT_DIALOG: &str = "\
You are helping to locate a {concept} in a {modality} image.
Look at the image and describe how the {concept} appears in it.
Answer with exactly three lines and nothing else:
color: <the color of the {concept}>
shape: <the shape of the {concept}>
location: <where the {concept} is located in the image>";

const DEFAULT_PROMPT: &str = "[{color} ][{shape} ]{concept}[ located at {location}]";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("concept must not be empty")]
    EmptyConcept,
    #[error("unknown {kind} template '{id}'")]
    UnknownTemplate { kind: &'static str, id: String },
    #[error("template '{id}': {message}")]
    BadTemplate { id: String, message: String },
    #[error("reading templates from {path}: {message}")]
    Io { path: String, message: String },
}

/// What to segment and in which kind of image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptQuery {
    pub concept: String,
    pub modality: String,
}

impl ConceptQuery {
    pub fn new(concept: impl Into<String>, modality: impl Into<String>) -> Result<Self, PromptError> {
        let concept = concept.into();
        if concept.trim().is_empty() {
            return Err(PromptError::EmptyConcept);
        }
        Ok(ConceptQuery {
            concept: concept.trim().to_string(),
            modality: modality.into(),
        })
    }
}

/// Final detector phrase with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptivePrompt {
    pub text: String,
    pub attributes: AttributeSet,
    pub template_id: String,
}

/// Dialog and prompt templates by id.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    dialogs: BTreeMap<String, Template>,
    prompts: BTreeMap<String, Template>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let mut reg = TemplateRegistry {
            dialogs: BTreeMap::new(),
            prompts: BTreeMap::new(),
        };
        reg.register_dialog(DEFAULT_DIALOG_TEMPLATE, DEFAULT_DIALOG)
            .expect("built-in dialog template is valid");
        reg.register_prompt(DEFAULT_PROMPT_TEMPLATE, DEFAULT_PROMPT)
            .expect("built-in prompt template is valid");
        reg
    }
}

impl TemplateRegistry {
    pub fn register_dialog(&mut self, id: &str, source: &str) -> Result<(), PromptError> {
        let t = Template::parse(id, source)?;
        if !t.has_required(Var::Concept) {
            return Err(PromptError::BadTemplate {
                id: id.into(),
                message: "dialog must mention {concept} outside optional clauses".into(),
            });
        }
        if t.uses(Var::is_attribute) {
            return Err(PromptError::BadTemplate {
                id: id.into(),
                message: "dialog templates cannot use attribute placeholders".into(),
            });
        }
        self.dialogs.insert(id.to_string(), t);
        Ok(())
    }

    pub fn register_prompt(&mut self, id: &str, source: &str) -> Result<(), PromptError> {
        let t = Template::parse(id, source.trim_end_matches(['\n', '\r']))?;
        if !t.has_required(Var::Concept) {
            return Err(PromptError::BadTemplate {
                id: id.into(),
                message: "prompt must contain {concept} outside optional clauses".into(),
            });
        }
        self.prompts.insert(id.to_string(), t);
        Ok(())
    }

    /// Adds templates from `dir/dialog/*.txt` and `dir/prompt/*.txt`; ids are
    /// the file stems. Files with the same id as a built-in replace it.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), PromptError> {
        for (sub, is_dialog) in [("dialog", true), ("prompt", false)] {
            let path = dir.join(sub);
            if !path.is_dir() {
                continue;
            }
            let io = |e: std::io::Error| PromptError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            };
            let mut files: Vec<_> = std::fs::read_dir(&path)
                .map_err(io)?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "txt"))
                .collect();
            files.sort();
            for file in files {
                let id = file
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| PromptError::Io {
                        path: file.display().to_string(),
                        message: "file name is not valid UTF-8".into(),
                    })?
                    .to_string();
                let source = std::fs::read_to_string(&file).map_err(io)?;
                if is_dialog {
                    self.register_dialog(&id, &source)?;
                } else {
                    self.register_prompt(&id, &source)?;
                }
            }
        }
        Ok(())
    }

    pub fn has_dialog(&self, id: &str) -> bool {
        self.dialogs.contains_key(id)
    }

    pub fn has_prompt(&self, id: &str) -> bool {
        self.prompts.contains_key(id)
    }

    fn dialog(&self, id: &str) -> Result<&Template, PromptError> {
        self.dialogs.get(id).ok_or_else(|| PromptError::UnknownTemplate {
            kind: "dialog",
            id: id.to_string(),
        })
    }

    fn prompt(&self, id: &str) -> Result<&Template, PromptError> {
        self.prompts.get(id).ok_or_else(|| PromptError::UnknownTemplate {
            kind: "prompt",
            id: id.to_string(),
        })
    }

    /// Instantiates the dialog template with the concept and modality.
    pub fn build_dialog(&self, query: &ConceptQuery, template_id: &str) -> Result<String, PromptError> {
        if query.concept.trim().is_empty() {
            return Err(PromptError::EmptyConcept);
        }
        let t = self.dialog(template_id)?;
        Ok(t.render(|v| match v {
            Var::Concept => Some(query.concept.clone()),
            Var::Modality => Some(query.modality.clone()),
            _ => None,
        }))
    }

    /// Renders the detector phrase. Clauses for missing attributes are
    /// omitted; a degraded attribute set renders to the bare concept.
    pub fn render_prompt(
        &self,
        attrs: &AttributeSet,
        query: &ConceptQuery,
        template_id: &str,
    ) -> Result<DescriptivePrompt, PromptError> {
        if query.concept.trim().is_empty() {
            return Err(PromptError::EmptyConcept);
        }
        let t = self.prompt(template_id)?;
        let text = if attrs.is_degraded() {
            query.concept.clone()
        } else {
            let rendered = t.render(|v| match v {
                Var::Concept => Some(query.concept.clone()),
                Var::Modality => Some(query.modality.clone()),
                Var::Color => attrs.color.clone(),
                Var::Shape => attrs.shape.clone(),
                Var::Location => attrs.location.clone(),
            });
            rendered.split_whitespace().collect::<Vec<_>>().join(" ")
        };
        Ok(DescriptivePrompt {
            text,
            attributes: attrs.clone(),
            template_id: template_id.to_string(),
        })
    }
}
