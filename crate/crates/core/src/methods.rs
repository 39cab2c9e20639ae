//! The four comparison methods and their per-method settings.

use serde::{Deserialize, Serialize};

use crate::geom::BoxMode;
use crate::grounding::GroundingConfig;
use crate::prompting::{DEFAULT_DIALOG_TEMPLATE, DEFAULT_PROMPT_TEMPLATE};
use crate::segmenting::SelectionPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Chat description, grounding, box-prompted segmentation.
    TvSam,
    /// Grounding on the bare concept name, then box-prompted segmentation.
    Gsam,
    /// Unprompted automatic segmentation.
    SamAuto,
    /// Box prompts derived from the ground truth.
    SamBbox,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::TvSam => "tv_sam",
            MethodKind::Gsam => "gsam",
            MethodKind::SamAuto => "sam_auto",
            MethodKind::SamBbox => "sam_bbox",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            MethodKind::TvSam => "TV-SAM",
            MethodKind::Gsam => "GSAM",
            MethodKind::SamAuto => "SAM AUTO",
            MethodKind::SamBbox => "SAM BBOX",
        }
    }

    pub fn uses_grounding(self) -> bool {
        matches!(self, MethodKind::TvSam | MethodKind::Gsam)
    }
}

/// One method as configured. Fields that do not apply to `kind` must be
/// absent; [`MethodSpec::resolved`] fills in defaults for those that do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub kind: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub selection: SelectionPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_box_mode: Option<BoxMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialog_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        MethodSpec {
            kind,
            label: None,
            selection: SelectionPolicy::default(),
            grounding: None,
            gold_box_mode: None,
            dialog_template: None,
            prompt_template: None,
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.display())
    }

    pub fn validate(&self) -> Result<(), String> {
        let who = self.label();
        let stray = |field: &str| {
            Err(format!(
                "method '{who}': '{field}' does not apply to {}",
                self.kind.name()
            ))
        };
        if !self.kind.uses_grounding() && self.grounding.is_some() {
            return stray("grounding");
        }
        if self.kind != MethodKind::SamBbox && self.gold_box_mode.is_some() {
            return stray("gold_box_mode");
        }
        if self.kind != MethodKind::TvSam {
            if self.dialog_template.is_some() {
                return stray("dialog_template");
            }
            if self.prompt_template.is_some() {
                return stray("prompt_template");
            }
        }
        if let Some(g) = &self.grounding {
            g.validate().map_err(|e| format!("method '{who}': {e}"))?;
        }
        if who.trim().is_empty() {
            return Err("method labels must be non-empty".into());
        }
        Ok(())
    }

    /// Copy with every applicable default written out.
    pub fn resolved(&self) -> MethodSpec {
        let mut out = self.clone();
        out.label = Some(self.label().to_string());
        if self.kind.uses_grounding() {
            out.grounding.get_or_insert_with(GroundingConfig::default);
        }
        if self.kind == MethodKind::SamBbox {
            out.gold_box_mode.get_or_insert(BoxMode::Union);
        }
        if self.kind == MethodKind::TvSam {
            out.dialog_template
                .get_or_insert_with(|| DEFAULT_DIALOG_TEMPLATE.to_string());
            out.prompt_template
                .get_or_insert_with(|| DEFAULT_PROMPT_TEMPLATE.to_string());
        }
        out
    }

    pub fn grounding_config(&self) -> GroundingConfig {
        self.grounding.clone().unwrap_or_default()
    }
}
