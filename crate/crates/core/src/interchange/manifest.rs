//! Dataset manifest: which images exist, their split and label, and where
//! their feature stacks and interest masks live.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NUM_STAGES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split {other:?} (expected train, validation or test)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    StructuralAnomaly,
    LogicalAnomaly,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::StructuralAnomaly => "structural_anomaly",
            Label::LogicalAnomaly => "logical_anomaly",
        }
    }

    pub fn is_anomalous(self) -> bool {
        self != Label::Normal
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(Label::Normal),
            "structural_anomaly" => Ok(Label::StructuralAnomaly),
            "logical_anomaly" => Ok(Label::LogicalAnomaly),
            other => Err(format!(
                "unknown label {other:?} (expected normal, structural_anomaly or logical_anomaly)"
            )),
        }
    }
}

/// On-disk JSON shape of a manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub category: String,
    pub images: Vec<ImageDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageDoc {
    pub image_id: String,
    pub split: String,
    pub label: String,
    pub stage_feature_paths: Vec<String>,
    #[serde(default)]
    pub interest_instances: Vec<InstanceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_gt_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub class_name: String,
    pub mask_path: String,
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterestInstance {
    pub class_name: String,
    pub mask_path: PathBuf,
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub split: Split,
    pub label: Label,
    pub stage_feature_paths: [PathBuf; NUM_STAGES],
    pub interest_instances: Vec<InterestInstance>,
    pub pixel_gt_path: Option<PathBuf>,
}

/// A validated manifest with all paths resolved against its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub category: String,
    pub images: Vec<ImageRecord>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.image_id == image_id)
    }
}

pub fn load_manifest(source: impl AsRef<Path>) -> Result<Manifest> {
    let source = source.as_ref();
    let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: source.to_path_buf(),
        source: e,
    })?;
    let base = source.parent().unwrap_or_else(|| Path::new("."));
    validate_manifest(doc, base)
}

pub fn write_manifest(doc: &ManifestDoc, destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    let text = serde_json::to_string_pretty(doc).expect("manifest serializes");
    std::fs::write(destination, text).map_err(|e| Error::io(destination, e))
}

/// Checks every invariant of the document and collects all offenses.
pub fn validate_manifest(doc: ManifestDoc, base: &Path) -> Result<Manifest> {
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut images = Vec::with_capacity(doc.images.len());

    if doc.images.is_empty() {
        errors.push("manifest lists no images".to_string());
    }

    for (idx, img) in doc.images.into_iter().enumerate() {
        let ctx = format!("image {idx} ({:?})", img.image_id);
        if img.image_id.is_empty() {
            errors.push(format!("{ctx}: empty image_id"));
        }
        if !seen.insert(img.image_id.clone()) {
            errors.push(format!("{ctx}: duplicate image_id {:?}", img.image_id));
        }
        let split = img
            .split
            .parse::<Split>()
            .map_err(|e| errors.push(format!("{ctx}: {e}")))
            .ok();
        let label = img
            .label
            .parse::<Label>()
            .map_err(|e| errors.push(format!("{ctx}: {e}")))
            .ok();
        if let (Some(split), Some(label)) = (split, label) {
            if split != Split::Test && label != Label::Normal {
                errors.push(format!(
                    "{ctx}: {} images must be labeled normal, got {label}",
                    split.as_str()
                ));
            }
        }

        if img.stage_feature_paths.len() != NUM_STAGES {
            errors.push(format!(
                "{ctx}: expected {NUM_STAGES} stages, got {}",
                img.stage_feature_paths.len()
            ));
        }
        let stage_paths: Vec<PathBuf> = img
            .stage_feature_paths
            .iter()
            .map(|p| base.join(p))
            .collect();
        for p in &stage_paths {
            if !p.is_file() {
                errors.push(format!("{ctx}: missing file {}", p.display()));
            }
        }

        let mut instances = Vec::with_capacity(img.interest_instances.len());
        for (k, inst) in img.interest_instances.into_iter().enumerate() {
            if inst.class_name.is_empty() {
                errors.push(format!("{ctx}: instance {k} has empty class_name"));
            }
            if !(inst.area_fraction > 0.0 && inst.area_fraction <= 1.0) {
                errors.push(format!(
                    "{ctx}: instance {k} area_fraction {} outside (0, 1]",
                    inst.area_fraction
                ));
            }
            let mask_path = base.join(&inst.mask_path);
            if !mask_path.is_file() {
                errors.push(format!("{ctx}: missing file {}", mask_path.display()));
            }
            instances.push(InterestInstance {
                class_name: inst.class_name,
                mask_path,
                area_fraction: inst.area_fraction,
            });
        }

        let pixel_gt_path = img.pixel_gt_path.map(|p| base.join(p));
        if let Some(p) = &pixel_gt_path {
            if !p.is_file() {
                errors.push(format!("{ctx}: missing file {}", p.display()));
            }
        }

        if let (Some(split), Some(label), Ok(stage_feature_paths)) =
            (split, label, <[PathBuf; NUM_STAGES]>::try_from(stage_paths))
        {
            images.push(ImageRecord {
                image_id: img.image_id,
                split,
                label,
                stage_feature_paths,
                interest_instances: instances,
                pixel_gt_path,
            });
        }
    }

    if errors.is_empty() {
        Ok(Manifest {
            category: doc.category,
            images,
        })
    } else {
        Err(Error::Validation(errors))
    }
}
