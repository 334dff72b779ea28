//! JSON file formats for scenarios and evaluation inputs.
//!
//! Decoding errors carry the JSON path of the offending field and the
//! line/column reported by the parser.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, LocErrorKind};
use crate::metrics::{Detection, EvalInput, GroundTruth};
use crate::ranking::{AnchorRecord, Label, Scenario};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocKindTag {
    Iou,
    Giou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelTag {
    Pos,
    Neg,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorEntry {
    pub label: LabelTag,
    #[serde(default)]
    pub gt: Option<usize>,
    pub score: f64,
    #[serde(default, rename = "box")]
    pub bbox: Option<BBox<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub loc_kind: LocKindTag,
    pub tau: f64,
    pub gts: Vec<BBox<f64>>,
    pub anchors: Vec<AnchorEntry>,
    /// Free-form provenance text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ScenarioFile {
    pub fn from_scenario(scenario: &Scenario<f64>, note: Option<String>) -> Self {
        let (loc_kind, tau) = match scenario.loc_kind {
            LocErrorKind::Iou { tau } => (LocKindTag::Iou, tau),
            LocErrorKind::Giou { tau } => (LocKindTag::Giou, tau),
        };
        let anchors = scenario
            .anchors
            .iter()
            .map(|a| {
                let (label, gt) = match a.label {
                    Label::Positive(g) => (LabelTag::Pos, Some(g)),
                    Label::Negative => (LabelTag::Neg, None),
                    Label::Ignored => (LabelTag::Ignore, None),
                };
                AnchorEntry { label, gt, score: a.score, bbox: a.pred_box }
            })
            .collect();
        ScenarioFile { version: SCENARIO_VERSION, loc_kind, tau, gts: scenario.gts.clone(), anchors, note }
    }

    /// Semantic validation and conversion.
    pub fn to_scenario(&self) -> Result<Scenario<f64>> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::validation("version", format!("unsupported version {}, expected 1", self.version)));
        }
        if !(self.tau >= 0.0 && self.tau < 1.0) {
            return Err(Error::validation("tau", format!("must lie in [0, 1), got {}", self.tau)));
        }
        let loc_kind = match self.loc_kind {
            LocKindTag::Iou => LocErrorKind::Iou { tau: self.tau },
            LocKindTag::Giou => LocErrorKind::Giou { tau: self.tau },
        };
        let mut anchors = Vec::with_capacity(self.anchors.len());
        for (k, a) in self.anchors.iter().enumerate() {
            if !a.score.is_finite() {
                return Err(Error::validation(format!("anchors[{k}].score"), "score must be finite"));
            }
            let label = match a.label {
                LabelTag::Pos => {
                    let g = a.gt.ok_or_else(|| Error::validation(format!("anchors[{k}].gt"), "positive anchor needs a gt index"))?;
                    if g >= self.gts.len() {
                        return Err(Error::validation(
                            format!("anchors[{k}].gt"),
                            format!("gt index {g} out of range ({} gts)", self.gts.len()),
                        ));
                    }
                    if a.bbox.is_none() {
                        return Err(Error::validation(format!("anchors[{k}].box"), "positive anchor needs a box"));
                    }
                    Label::Positive(g)
                }
                LabelTag::Neg | LabelTag::Ignore => {
                    if a.gt.is_some() {
                        return Err(Error::validation(format!("anchors[{k}].gt"), "only positive anchors reference a gt"));
                    }
                    if a.label == LabelTag::Neg {
                        Label::Negative
                    } else {
                        Label::Ignored
                    }
                }
            };
            anchors.push(AnchorRecord { label, score: a.score, pred_box: a.bbox });
        }
        Scenario::new(anchors, self.gts.clone(), loc_kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub detections: Vec<Detection<f64>>,
    pub ground_truths: Vec<GroundTruth<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalFile {
    pub fn to_input(&self) -> Result<EvalInput<f64>> {
        let input = EvalInput { detections: self.detections.clone(), ground_truths: self.ground_truths.clone() };
        input.validate()?;
        Ok(input)
    }
}

fn decode<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::validation(if path.is_empty() { ".".to_string() } else { path }, e.into_inner().to_string())
    })?;
    Ok(value)
}

pub fn parse_scenario(text: &str) -> Result<Scenario<f64>> {
    decode::<ScenarioFile>(text)?.to_scenario()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario<f64>> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

pub fn scenario_to_json(scenario: &Scenario<f64>, note: Option<String>) -> Result<String> {
    serde_json::to_string_pretty(&ScenarioFile::from_scenario(scenario, note)).map_err(|e| Error::Io(e.to_string()))
}

pub fn save_scenario(path: impl AsRef<Path>, scenario: &Scenario<f64>, note: Option<String>) -> Result<()> {
    std::fs::write(path, scenario_to_json(scenario, note)? + "\n")?;
    Ok(())
}

pub fn parse_eval(text: &str) -> Result<EvalInput<f64>> {
    decode::<EvalFile>(text)?.to_input()
}

pub fn load_eval(path: impl AsRef<Path>) -> Result<EvalInput<f64>> {
    parse_eval(&std::fs::read_to_string(path)?)
}

pub fn eval_to_json(input: &EvalInput<f64>, note: Option<String>) -> Result<String> {
    let f = EvalFile { detections: input.detections.clone(), ground_truths: input.ground_truths.clone(), note };
    serde_json::to_string_pretty(&f).map_err(|e| Error::Io(e.to_string()))
}
