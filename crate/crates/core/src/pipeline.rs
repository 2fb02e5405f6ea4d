//! End-to-end orchestration: reference selection, bank building,
//! calibration, per-image scoring and evaluation.
//!
//! Each stage is a standalone function so the CLI can persist its output and
//! resume from files; [`run_pipeline`] chains them in memory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    fit_stats, fuse, save_stats, CalibrationStats, ScoreRecord, DEFAULT_SIGMA_FLOOR,
};
use crate::composition::{composition_score, Rule, SceneFacts, DEFAULT_MIN_AREA};
use crate::error::{Error, Result};
use crate::interchange::{
    load_manifest, load_rulespec, load_text_bank, read_tensor, ImageRecord, Manifest, RuleSpec,
    Split, TextBank,
};
use crate::interest::{
    interest_score, pool_interests, scene_facts, GridMask, InterestSet, MaskedInstance,
};
use crate::metrics::{
    pixel_auroc, report, write_report_csv, write_report_json, write_scores_csv, Report,
    PIXEL_EVAL_SIDE,
};
use crate::patch::{build_bank, patch_score, save_bank, AnomalyMap, FeatureStack, MemoryBank};

/// Coreset ratio when training on the full normal set.
pub const DEFAULT_FULL_DATA_RATIO: f64 = 0.10;
/// Coreset ratio under k-shot protocols (no reduction).
pub const DEFAULT_FEW_SHOT_RATIO: f64 = 1.0;

fn default_sigma_floor() -> f64 {
    DEFAULT_SIGMA_FLOOR
}

fn default_min_area() -> f64 {
    DEFAULT_MIN_AREA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub text_bank: Option<PathBuf>,
    /// Defaults to 0.1 in full-data mode and 1.0 under `k_shot`.
    #[serde(default)]
    pub coreset_ratio: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
    #[serde(default = "default_min_area")]
    pub min_area: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub k_shot: Option<usize>,
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            rules: None,
            text_bank: None,
            coreset_ratio: None,
            seed: 0,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            min_area: DEFAULT_MIN_AREA,
            output_dir: None,
            k_shot: None,
        }
    }

    pub fn effective_ratio(&self) -> f64 {
        self.coreset_ratio.unwrap_or(if self.k_shot.is_some() {
            DEFAULT_FEW_SHOT_RATIO
        } else {
            DEFAULT_FULL_DATA_RATIO
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let ratio = self.effective_ratio();
        if !(ratio > 0.0 && ratio <= 1.0) {
            errors.push(format!("coreset_ratio {ratio} outside (0, 1]"));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            errors.push(format!("sigma_floor {} must be positive", self.sigma_floor));
        }
        if !(0.0..1.0).contains(&self.min_area) {
            errors.push(format!("min_area {} outside [0, 1)", self.min_area));
        }
        if self.k_shot == Some(0) {
            errors.push("k_shot must be at least 1".into());
        }
        for p in std::iter::once(&self.manifest)
            .chain(self.rules.as_ref())
            .chain(self.text_bank.as_ref())
        {
            if !p.is_file() {
                errors.push(format!("missing file {}", p.display()));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

/// Reads a JSON config, resolving its paths against the config's directory.
pub fn load_config(source: impl AsRef<Path>) -> Result<PipelineConfig> {
    let source = source.as_ref();
    let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    let mut config: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: source.to_path_buf(),
        source: e,
    })?;
    let base = source.parent().unwrap_or_else(|| Path::new("."));
    config.manifest = base.join(&config.manifest);
    config.rules = config.rules.map(|p| base.join(p));
    config.text_bank = config.text_bank.map(|p| base.join(p));
    config.output_dir = config.output_dir.map(|p| base.join(p));
    Ok(config)
}

/// Everything derived from one image's interchange files.
#[derive(Debug, Clone)]
pub struct ImageFeatures {
    pub image_id: String,
    pub stack: FeatureStack,
    pub instances: Vec<MaskedInstance>,
    pub interests: InterestSet,
    pub facts: SceneFacts,
}

pub fn load_image(record: &ImageRecord) -> Result<ImageFeatures> {
    let stack = FeatureStack::load(&record.stage_feature_paths)?;
    let instances = record
        .interest_instances
        .iter()
        .map(|inst| {
            Ok(MaskedInstance {
                class_name: inst.class_name.clone(),
                mask: GridMask::load(&inst.mask_path)?,
                area_fraction: inst.area_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let interests = pool_interests(&stack, &instances)?;
    let mut facts = scene_facts(&interests, &instances)?;
    facts.grid = (stack.height(), stack.width());
    Ok(ImageFeatures {
        image_id: record.image_id.clone(),
        stack,
        instances,
        interests,
        facts,
    })
}

fn load_images(records: &[&ImageRecord], stage: &'static str) -> Result<Vec<ImageFeatures>> {
    records
        .par_iter()
        .map(|r| load_image(r).map_err(|e| e.at_stage(stage, &r.image_id)))
        .collect()
}

/// Normal training images backing the memory bank: all of them, or `k`
/// drawn by a seeded shuffle (returned in manifest order).
pub fn select_references(
    manifest: &Manifest,
    k_shot: Option<usize>,
    seed: u64,
) -> Result<Vec<&ImageRecord>> {
    let train: Vec<&ImageRecord> = manifest.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::InvalidConfig("manifest has no train images".into()));
    }
    let Some(k) = k_shot else {
        return Ok(train);
    };
    if k == 0 || k > train.len() {
        return Err(Error::InvalidConfig(format!(
            "k_shot {k} not in 1..={}",
            train.len()
        )));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| train[i]).collect())
}

pub fn bank_from_images(images: &[ImageFeatures], ratio: f64, seed: u64) -> Result<MemoryBank> {
    let stacks: Vec<FeatureStack> = images.iter().map(|i| i.stack.clone()).collect();
    Ok(build_bank(&stacks, ratio, seed)?
        .with_provenance(images.iter().map(|i| i.image_id.clone()).collect()))
}

/// Loads the reference images and builds the patch memory bank.
pub fn build_reference_bank(
    manifest: &Manifest,
    k_shot: Option<usize>,
    ratio: f64,
    seed: u64,
) -> Result<(MemoryBank, Vec<ImageFeatures>)> {
    let refs = select_references(manifest, k_shot, seed)?;
    let images = load_images(&refs, "load_reference")?;
    let bank = bank_from_images(&images, ratio, seed)?;
    Ok((bank, images))
}

/// Reference images named in a bank's provenance, loaded from the manifest.
pub fn load_bank_references(manifest: &Manifest, bank: &MemoryBank) -> Result<Vec<ImageFeatures>> {
    let mut missing = Vec::new();
    let records: Vec<&ImageRecord> = bank
        .source_image_ids
        .iter()
        .filter_map(|id| {
            let r = manifest.get(id);
            if r.is_none() {
                missing.push(format!("bank reference {id:?} not in manifest"));
            }
            r
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(missing));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(
            "bank provenance lists no reference images",
        ));
    }
    load_images(&records, "load_reference")
}

/// Uncalibrated detector outputs for one image.
#[derive(Debug, Clone)]
pub struct RawScores {
    pub s_p: f64,
    pub s_in: f64,
    pub no_interests: bool,
    pub map: AnomalyMap,
}

pub fn raw_scores(
    image: &ImageFeatures,
    bank: &MemoryBank,
    references: &[InterestSet],
) -> Result<RawScores> {
    let (s_p, map) =
        patch_score(&image.stack, bank).map_err(|e| e.at_stage("patch_score", &image.image_id))?;
    let s_in = interest_score(&image.interests, references)
        .map_err(|e| e.at_stage("interest_score", &image.image_id))?;
    Ok(RawScores {
        s_p,
        s_in: s_in.value,
        no_interests: s_in.no_interests,
        map,
    })
}

fn interest_sets(images: &[ImageFeatures]) -> Vec<InterestSet> {
    images.iter().map(|i| i.interests.clone()).collect()
}

/// Calibration from the validation split's normal images scored against the
/// full reference set.
pub fn calibrate_on_validation(
    manifest: &Manifest,
    bank: &MemoryBank,
    references: &[ImageFeatures],
    sigma_floor: f64,
) -> Result<CalibrationStats> {
    let records: Vec<&ImageRecord> = manifest.split(Split::Validation).collect();
    if records.is_empty() {
        return Err(Error::InvalidConfig(
            "no validation images to calibrate on (use k-shot leave-one-out)".into(),
        ));
    }
    let images = load_images(&records, "load_validation")?;
    let refs = interest_sets(references);
    let scores = images
        .par_iter()
        .map(|img| raw_scores(img, bank, &refs))
        .collect::<Result<Vec<_>>>()?;
    let sp: Vec<f64> = scores.iter().map(|s| s.s_p).collect();
    let sin: Vec<f64> = scores.iter().map(|s| s.s_in).collect();
    let mut stats = fit_stats(&sp, &sin, sigma_floor)?;
    stats.source = "validation".into();
    stats.source_image_ids = images.iter().map(|i| i.image_id.clone()).collect();
    Ok(stats)
}

/// Leave-one-out scores of each reference against the remaining ones.
pub fn leave_one_out_scores(
    references: &[ImageFeatures],
    ratio: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if references.len() < 2 {
        return Err(Error::InvalidConfig(
            "leave-one-out needs at least two references".into(),
        ));
    }
    (0..references.len())
        .into_par_iter()
        .map(|held_out| {
            let rest: Vec<ImageFeatures> = references
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != held_out)
                .map(|(_, r)| r.clone())
                .collect();
            let bank = bank_from_images(&rest, ratio, seed)?;
            let s = raw_scores(&references[held_out], &bank, &interest_sets(&rest))?;
            Ok((s.s_p, s.s_in))
        })
        .collect()
}

/// Few-shot calibration: leave-one-out over the references when there are at
/// least two, otherwise the single reference's self-score with floored
/// deviations.
pub fn calibrate_few_shot(
    references: &[ImageFeatures],
    ratio: f64,
    seed: u64,
    sigma_floor: f64,
) -> Result<CalibrationStats> {
    let ids: Vec<String> = references.iter().map(|r| r.image_id.clone()).collect();
    if references.len() == 1 {
        let bank = bank_from_images(references, ratio, seed)?;
        let s = raw_scores(&references[0], &bank, &interest_sets(references))?;
        let mut stats = fit_stats(&[s.s_p], &[s.s_in], sigma_floor)?;
        stats.source = "single_reference".into();
        stats.source_image_ids = ids;
        stats.flags.insert(
            0,
            "WARNING: one reference image; mean is its self-score and deviations are floored"
                .into(),
        );
        return Ok(stats);
    }
    let pairs = leave_one_out_scores(references, ratio, seed)?;
    let (sp, sin): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let mut stats = fit_stats(&sp, &sin, sigma_floor)?;
    stats.source = "leave_one_out".into();
    stats.source_image_ids = ids;
    Ok(stats)
}

/// Immutable state shared by every per-image scoring call.
pub struct Scorer<'a> {
    pub bank: &'a MemoryBank,
    pub references: Vec<InterestSet>,
    pub stats: &'a CalibrationStats,
    /// `None` disables the composition detector.
    pub rules: Option<&'a [Rule]>,
    pub text_bank: &'a TextBank,
    pub min_area: f64,
}

impl Scorer<'_> {
    pub fn score(&self, record: &ImageRecord) -> Result<(ScoreRecord, AnomalyMap)> {
        let image = load_image(record).map_err(|e| e.at_stage("load", &record.image_id))?;
        self.score_features(&image, record)
    }

    pub fn score_features(
        &self,
        image: &ImageFeatures,
        record: &ImageRecord,
    ) -> Result<(ScoreRecord, AnomalyMap)> {
        let raw = raw_scores(image, self.bank, &self.references)?;
        let mut flags = Vec::new();
        if raw.no_interests {
            flags.push("no interests detected".to_string());
        }
        let (s_c, verdicts) = match self.rules {
            Some(rules) => {
                let out = composition_score(rules, &image.facts, self.text_bank, self.min_area)
                    .map_err(|e| e.at_stage("composition_score", &record.image_id))?;
                flags.extend(out.warnings);
                (out.score, out.verdicts)
            }
            None => (0, Vec::new()),
        };
        let s = fuse(raw.s_p, raw.s_in, s_c, self.stats);
        Ok((
            ScoreRecord {
                image_id: record.image_id.clone(),
                label: record.label.as_str().to_string(),
                s_p: raw.s_p,
                s_in: raw.s_in,
                s_c,
                s,
                verdicts,
                flags,
            },
            raw.map,
        ))
    }

    /// Scores every test image in manifest order.
    pub fn score_test_split(&self, manifest: &Manifest) -> Result<Vec<(ScoreRecord, AnomalyMap)>> {
        let test: Vec<&ImageRecord> = manifest.split(Split::Test).collect();
        test.par_iter().map(|r| self.score(r)).collect()
    }
}

/// Cross-file checks: instance classes are declared interests, masks match
/// the stage grid and their stated area, stage grids agree across images,
/// and rule vocabularies resolve in the text bank.
pub fn validate_dataset(
    manifest: &Manifest,
    rules: Option<&RuleSpec>,
    text_bank: Option<&TextBank>,
) -> Result<()> {
    let mut errors = Vec::new();
    if let (Some(spec), Some(bank)) = (rules, text_bank) {
        for rule in &spec.rules {
            if let Err(e) = rule.check_against(bank) {
                errors.push(format!("rule {}: {e}", rule.id));
            }
        }
    } else if let Some(spec) = rules {
        for rule in spec
            .rules
            .iter()
            .filter(|r| !r.kind.vocabulary().is_empty())
        {
            errors.push(format!("rule {} needs a text bank", rule.id));
        }
    }
    let interests: Option<HashSet<&str>> =
        rules.map(|s| s.interests.iter().map(String::as_str).collect());
    let mut reference_dims: Option<(usize, usize, Vec<usize>)> = None;

    for record in &manifest.images {
        let ctx = format!("image {:?}", record.image_id);
        let stack = match FeatureStack::load(&record.stage_feature_paths) {
            Ok(s) => s,
            Err(e) => {
                errors.push(format!("{ctx}: {e}"));
                continue;
            }
        };
        let dims = (stack.height(), stack.width(), stack.dims());
        match &reference_dims {
            None => reference_dims = Some(dims),
            Some(r) if *r != dims => errors.push(format!(
                "{ctx}: grid {}x{} with stage dims {:?} differs from {}x{} with {:?}",
                dims.0, dims.1, dims.2, r.0, r.1, r.2
            )),
            _ => {}
        }
        if let Some(bank) = text_bank {
            let last = *stack.dims().last().expect("four stages");
            if !bank.embeddings.is_empty() && last != bank.dim {
                errors.push(format!(
                    "{ctx}: final stage dim {last} differs from text bank dim {}",
                    bank.dim
                ));
            }
        }
        for (k, inst) in record.interest_instances.iter().enumerate() {
            if let Some(set) = &interests {
                if !set.contains(inst.class_name.as_str()) {
                    errors.push(format!(
                        "{ctx}: instance {k} class {:?} is not a configured interest",
                        inst.class_name
                    ));
                }
            }
            let mask = match read_tensor(&inst.mask_path).and_then(|t| GridMask::from_tensor(&t)) {
                Ok(m) => m,
                Err(e) => {
                    errors.push(format!("{ctx}: instance {k}: {e}"));
                    continue;
                }
            };
            if (mask.height, mask.width) != (stack.height(), stack.width()) {
                errors.push(format!(
                    "{ctx}: instance {k} mask {}x{} differs from stage grid {}x{}",
                    mask.height,
                    mask.width,
                    stack.height(),
                    stack.width()
                ));
            } else if mask.count() == 0 {
                errors.push(format!("{ctx}: instance {k} mask is empty"));
            } else if (mask.area_fraction() - inst.area_fraction).abs() > 1e-6 {
                errors.push(format!(
                    "{ctx}: instance {k} area_fraction {} but mask covers {}",
                    inst.area_fraction,
                    mask.area_fraction()
                ));
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errors))
    }
}

/// Pixel AUROC over test images (maps in manifest order), when any
/// ground-truth mask marks at least one anomalous cell.
pub fn pixel_metric(manifest: &Manifest, maps: &[AnomalyMap]) -> Result<Option<f64>> {
    let test: Vec<&ImageRecord> = manifest.split(Split::Test).collect();
    if test.iter().all(|r| r.pixel_gt_path.is_none()) {
        return Ok(None);
    }
    let masks = test
        .iter()
        .map(|r| r.pixel_gt_path.as_ref().map(GridMask::load).transpose())
        .collect::<Result<Vec<_>>>()?;
    if !masks.iter().flatten().any(|m| m.cells.iter().any(|&c| c)) {
        return Ok(None);
    }
    if maps.len() != masks.len() {
        return Err(Error::DimensionMismatch {
            context: "anomaly maps per test image".into(),
            expected: masks.len(),
            actual: maps.len(),
        });
    }
    let pairs: Vec<(&AnomalyMap, Option<&GridMask>)> = maps
        .iter()
        .zip(&masks)
        .map(|(map, m)| (map, m.as_ref()))
        .collect();
    pixel_auroc(&pairs, PIXEL_EVAL_SIDE).map(Some)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub bank: MemoryBank,
    pub stats: CalibrationStats,
    pub scores: Vec<ScoreRecord>,
    pub maps: Vec<AnomalyMap>,
    pub report: Report,
}

/// Runs every stage in memory. When `output_dir` is set, the bank,
/// calibration, score CSV, score records and report are written there.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let manifest = load_manifest(&config.manifest)?;
    let spec = config.rules.as_ref().map(load_rulespec).transpose()?;
    let text_bank = config.text_bank.as_ref().map(load_text_bank).transpose()?;
    validate_dataset(&manifest, spec.as_ref(), text_bank.as_ref())?;

    let ratio = config.effective_ratio();
    let (bank, references) = build_reference_bank(&manifest, config.k_shot, ratio, config.seed)?;
    let stats = match config.k_shot {
        Some(_) => calibrate_few_shot(&references, ratio, config.seed, config.sigma_floor)?,
        None => calibrate_on_validation(&manifest, &bank, &references, config.sigma_floor)?,
    };

    let empty_bank = TextBank::empty(0);
    let scorer = Scorer {
        bank: &bank,
        references: interest_sets(&references),
        stats: &stats,
        rules: spec.as_ref().map(|s| s.rules.as_slice()),
        text_bank: text_bank.as_ref().unwrap_or(&empty_bank),
        min_area: config.min_area,
    };
    let (scores, maps): (Vec<_>, Vec<_>) = scorer.score_test_split(&manifest)?.into_iter().unzip();
    let mut rep = report(&scores, &manifest)?;
    match pixel_metric(&manifest, &maps)? {
        Some(v) => rep.pixel_auroc = Some(v),
        None => rep
            .notes
            .push("pixel_auroc: no pixel ground truth in test split".into()),
    }

    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_bank(&bank, dir.join("bank"))?;
        save_stats(&stats, dir.join("calibration.json"))?;
        write_scores_csv(&scores, dir.join("scores.csv"))?;
        write_records(&scores, dir.join("records.json"))?;
        write_report_json(&rep, dir.join("report.json"))?;
        write_report_csv(&rep, dir.join("report.csv"))?;
    }
    Ok(PipelineOutput {
        bank,
        stats,
        scores,
        maps,
        report: rep,
    })
}

/// Full score records including verdicts and flags, as JSON.
pub fn write_records(records: &[ScoreRecord], destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    let text = serde_json::to_string_pretty(records).expect("records serialize");
    std::fs::write(destination, text).map_err(|e| Error::io(destination, e))
}
