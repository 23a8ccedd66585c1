//! Prompt construction.
//!
//! Sections always appear as narrative, then predictions, then the options
//! list or mapping, joined by the separator. Each non-narrative section
//! starts with a header line.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{ClassCode, ClassRegistry};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Plain,
    ExplicitMapping,
    ImplicitOptions,
    Predictions,
    PredictionsPlusMapping,
    PredictionsPlusOptions,
}

impl PromptMode {
    pub const ALL: [PromptMode; 6] = [
        PromptMode::Plain,
        PromptMode::ExplicitMapping,
        PromptMode::ImplicitOptions,
        PromptMode::Predictions,
        PromptMode::PredictionsPlusMapping,
        PromptMode::PredictionsPlusOptions,
    ];

    pub fn uses_predictions(self) -> bool {
        matches!(
            self,
            PromptMode::Predictions | PromptMode::PredictionsPlusMapping | PromptMode::PredictionsPlusOptions
        )
    }

    pub fn uses_options(self) -> bool {
        matches!(
            self,
            PromptMode::ExplicitMapping
                | PromptMode::ImplicitOptions
                | PromptMode::PredictionsPlusMapping
                | PromptMode::PredictionsPlusOptions
        )
    }

    pub fn uses_mapping(self) -> bool {
        matches!(self, PromptMode::ExplicitMapping | PromptMode::PredictionsPlusMapping)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Plain => "plain",
            PromptMode::ExplicitMapping => "explicit_mapping",
            PromptMode::ImplicitOptions => "implicit_options",
            PromptMode::Predictions => "predictions",
            PromptMode::PredictionsPlusMapping => "predictions_plus_mapping",
            PromptMode::PredictionsPlusOptions => "predictions_plus_options",
        }
    }
}

pub const PREDICTIONS_HEADER: &str = "Image model predictions (most likely first):";
pub const OPTIONS_HEADER: &str = "Possible diseases:";
pub const MAPPING_HEADER: &str = "Possible diseases and their codes:";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub separator: String,
    pub predictions_header: String,
    pub options_header: String,
    pub mapping_header: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            separator: "\n\n".into(),
            predictions_header: PREDICTIONS_HEADER.into(),
            options_header: OPTIONS_HEADER.into(),
            mapping_header: MAPPING_HEADER.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    #[serde(default)]
    pub options: Vec<ClassCode>,
    #[serde(default)]
    pub predictions: Vec<ClassCode>,
    #[serde(default)]
    pub templates: PromptTemplates,
}

impl PromptSpec {
    pub fn new(mode: PromptMode, predictions: Vec<ClassCode>, options: Vec<ClassCode>) -> Self {
        PromptSpec {
            mode,
            options,
            predictions,
            templates: PromptTemplates::default(),
        }
    }

    pub fn plain() -> Self {
        Self::new(PromptMode::Plain, Vec::new(), Vec::new())
    }

    pub fn explicit_mapping(options: Vec<ClassCode>) -> Self {
        Self::new(PromptMode::ExplicitMapping, Vec::new(), options)
    }

    pub fn implicit_options(options: Vec<ClassCode>) -> Self {
        Self::new(PromptMode::ImplicitOptions, Vec::new(), options)
    }

    pub fn predictions(predictions: Vec<ClassCode>) -> Self {
        Self::new(PromptMode::Predictions, predictions, Vec::new())
    }

    pub fn predictions_plus_mapping(predictions: Vec<ClassCode>, options: Vec<ClassCode>) -> Self {
        Self::new(PromptMode::PredictionsPlusMapping, predictions, options)
    }

    pub fn predictions_plus_options(predictions: Vec<ClassCode>, options: Vec<ClassCode>) -> Self {
        Self::new(PromptMode::PredictionsPlusOptions, predictions, options)
    }

    pub fn validate(&self, registry: &ClassRegistry) -> Result<()> {
        let check = |what: &str, codes: &[ClassCode], required: bool| -> Result<()> {
            if required && codes.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "{} mode needs a nonempty {what} list",
                    self.mode.as_str()
                )));
            }
            let mut seen = BTreeSet::new();
            for &c in codes {
                registry.check(c)?;
                if !seen.insert(c) {
                    return Err(Error::InvalidInput(format!("class {c} repeated in {what}")));
                }
            }
            Ok(())
        };
        check("options", &self.options, self.mode.uses_options())?;
        check("predictions", &self.predictions, self.mode.uses_predictions())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Narrative,
    Predictions,
    Options,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub text: String,
}

/// A rendered prompt together with the recipe that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub spec: PromptSpec,
    pub sections: Vec<PromptSection>,
}

pub fn build_prompt(narrative: &str, spec: &PromptSpec, registry: &ClassRegistry) -> Result<Prompt> {
    spec.validate(registry)?;
    let t = &spec.templates;
    let mut sections = vec![PromptSection {
        kind: SectionKind::Narrative,
        text: narrative.to_string(),
    }];
    if spec.mode.uses_predictions() {
        let mut s = t.predictions_header.clone();
        for (i, &c) in spec.predictions.iter().enumerate() {
            s.push_str(&format!("\n{}. {}", i + 1, registry.name(c)?));
        }
        sections.push(PromptSection {
            kind: SectionKind::Predictions,
            text: s,
        });
    }
    if spec.mode.uses_options() {
        let mut s = if spec.mode.uses_mapping() {
            t.mapping_header.clone()
        } else {
            t.options_header.clone()
        };
        for &c in &spec.options {
            let name = registry.name(c)?;
            if spec.mode.uses_mapping() {
                s.push_str(&format!("\n{name} \u{2192} {c}"));
            } else {
                s.push_str(&format!("\n- {name}"));
            }
        }
        sections.push(PromptSection {
            kind: SectionKind::Options,
            text: s,
        });
    }
    let text = sections
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(&t.separator);
    Ok(Prompt {
        text,
        spec: spec.clone(),
        sections,
    })
}

/// Splits prompt text back into sections using the default headers.
/// Text that does not start a known header belongs to the narrative.
pub fn parse_sections(text: &str) -> Vec<PromptSection> {
    let t = PromptTemplates::default();
    let mut out: Vec<PromptSection> = Vec::new();
    for block in text.split(t.separator.as_str()) {
        let first = block.lines().next().unwrap_or("");
        let kind = if first == t.predictions_header {
            SectionKind::Predictions
        } else if first == t.options_header || first == t.mapping_header {
            SectionKind::Options
        } else {
            SectionKind::Narrative
        };
        match out.last_mut() {
            Some(last) if last.kind == kind => {
                last.text.push_str(&t.separator);
                last.text.push_str(block);
            }
            _ => out.push(PromptSection {
                kind,
                text: block.to_string(),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(v: &[u32]) -> Vec<ClassCode> {
        v.iter().map(|&c| ClassCode(c)).collect()
    }

    #[test]
    fn plain_is_identity() {
        let r = ClassRegistry::skin26();
        let p = build_prompt("It itches.", &PromptSpec::plain(), &r).unwrap();
        assert_eq!(p.text, "It itches.");
    }

    #[test]
    fn explicit_mapping_pairs() {
        let r = ClassRegistry::skin26();
        let p = build_prompt("x", &PromptSpec::explicit_mapping(r.codes().collect()), &r).unwrap();
        assert!(p.text.contains("\nDermatofibroma \u{2192} 1\n"));
        assert!(p
            .text
            .contains("\nPsoriasis pictures Lichen Planus and related diseases \u{2192} 7\n"));
    }

    #[test]
    fn sections_in_order_and_parse_back() {
        let r = ClassRegistry::skin26();
        let spec = PromptSpec::predictions_plus_options(codes(&[3, 1]), codes(&[1, 3, 8]));
        let p = build_prompt("Red bumps.\n\nThey hurt.", &spec, &r).unwrap();
        let pred = p.text.find(PREDICTIONS_HEADER).unwrap();
        let opts = p.text.find(OPTIONS_HEADER).unwrap();
        assert!(pred < opts);
        let parsed = parse_sections(&p.text);
        assert_eq!(parsed, p.sections);
    }

    #[test]
    fn invalid_specs_rejected() {
        let r = ClassRegistry::skin26();
        assert!(build_prompt("x", &PromptSpec::implicit_options(vec![]), &r).is_err());
        assert!(build_prompt("x", &PromptSpec::predictions(codes(&[30])), &r).is_err());
        assert!(build_prompt("x", &PromptSpec::implicit_options(codes(&[2, 2])), &r).is_err());
    }
}
