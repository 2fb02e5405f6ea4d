//! Composition-granularity detector.
//!
//! Declarative rules are checked against per-image scene facts: the pooled
//! final-stage feature, centroid and area of every detected interest instance.
//! Attributes are assigned by zero-shot classification against a [`TextBank`].
//! The image scores 1 as soon as any rule fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::TextBank;
use crate::linalg::{cosine, norm};

pub const DEFAULT_MIN_AREA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Split along columns (left / right).
    X,
    /// Split along rows (top / bottom).
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    CountEq {
        class: String,
        k: usize,
    },
    ZsConsistency {
        class_a: String,
        vocab_a: Vec<String>,
        class_b: String,
        vocab_b: Vec<String>,
        allowed_pairs: Vec<(String, String)>,
    },
    AttrCountConsistency {
        attr_class: String,
        vocab: Vec<String>,
        count_class: String,
        map: BTreeMap<String, usize>,
    },
    HistogramMatch {
        class: String,
        vocab: Vec<String>,
        reference: BTreeMap<String, usize>,
    },
    RegionCountEq {
        class: String,
        axis: Axis,
        split_fraction: f64,
    },
}

impl RuleKind {
    pub const NAMES: [&'static str; 5] = [
        "count_eq",
        "zs_consistency",
        "attr_count_consistency",
        "histogram_match",
        "region_count_eq",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::CountEq { .. } => "count_eq",
            RuleKind::ZsConsistency { .. } => "zs_consistency",
            RuleKind::AttrCountConsistency { .. } => "attr_count_consistency",
            RuleKind::HistogramMatch { .. } => "histogram_match",
            RuleKind::RegionCountEq { .. } => "region_count_eq",
        }
    }

    pub fn classes(&self) -> Vec<&str> {
        match self {
            RuleKind::CountEq { class, .. }
            | RuleKind::HistogramMatch { class, .. }
            | RuleKind::RegionCountEq { class, .. } => vec![class],
            RuleKind::ZsConsistency {
                class_a, class_b, ..
            } => vec![class_a, class_b],
            RuleKind::AttrCountConsistency {
                attr_class,
                count_class,
                ..
            } => vec![attr_class, count_class],
        }
    }

    pub fn vocabulary(&self) -> Vec<&str> {
        match self {
            RuleKind::CountEq { .. } | RuleKind::RegionCountEq { .. } => Vec::new(),
            RuleKind::ZsConsistency {
                vocab_a, vocab_b, ..
            } => vocab_a.iter().chain(vocab_b).map(String::as_str).collect(),
            RuleKind::AttrCountConsistency { vocab, .. }
            | RuleKind::HistogramMatch { vocab, .. } => vocab.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub id: String,
    /// Instances smaller than this fraction of the grid are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_area: Option<f64>,
    #[serde(flatten)]
    pub kind: RuleKind,
}

impl Rule {
    pub fn new(id: impl Into<String>, kind: RuleKind) -> Self {
        Self {
            id: id.into(),
            min_area: None,
            kind,
        }
    }

    pub fn with_min_area(mut self, min_area: f64) -> Self {
        self.min_area = Some(min_area);
        self
    }

    /// Structural checks on the rule parameters, independent of any text bank.
    pub fn validate(&self, interests: &[String]) -> Result<()> {
        let invalid = |reason: String| Error::InvalidRule {
            rule: self.id.clone(),
            reason,
        };
        for class in self.kind.classes() {
            if !interests.iter().any(|i| i == class) {
                return Err(Error::UndeclaredInterest {
                    rule: self.id.clone(),
                    class: class.to_string(),
                });
            }
        }
        if let Some(a) = self.min_area {
            if !(0.0..1.0).contains(&a) {
                return Err(invalid(format!("min_area {a} outside [0, 1)")));
            }
        }
        match &self.kind {
            RuleKind::CountEq { .. } => {}
            RuleKind::ZsConsistency {
                vocab_a,
                vocab_b,
                allowed_pairs,
                ..
            } => {
                if vocab_a.is_empty() || vocab_b.is_empty() {
                    return Err(invalid("empty vocabulary".into()));
                }
                for (a, b) in allowed_pairs {
                    if !vocab_a.contains(a) || !vocab_b.contains(b) {
                        return Err(invalid(format!(
                            "allowed pair ({a},{b}) not within vocab_a x vocab_b"
                        )));
                    }
                }
            }
            RuleKind::AttrCountConsistency { vocab, map, .. } => {
                if vocab.is_empty() {
                    return Err(invalid("empty vocabulary".into()));
                }
                if let Some(label) = map.keys().find(|l| !vocab.contains(l)) {
                    return Err(invalid(format!("map label {label:?} not in vocab")));
                }
            }
            RuleKind::HistogramMatch {
                vocab, reference, ..
            } => {
                if vocab.is_empty() {
                    return Err(invalid("empty vocabulary".into()));
                }
                if let Some(label) = reference.keys().find(|l| !vocab.contains(l)) {
                    return Err(invalid(format!("reference label {label:?} not in vocab")));
                }
            }
            RuleKind::RegionCountEq { split_fraction, .. } => {
                if !(*split_fraction > 0.0 && *split_fraction < 1.0) {
                    return Err(invalid(format!(
                        "split_fraction {split_fraction} outside (0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that every vocabulary label has an embedding.
    pub fn check_against(&self, bank: &TextBank) -> Result<()> {
        for label in self.kind.vocabulary() {
            bank.get(label)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    /// Unit-normalized pooled final-stage feature.
    pub feature: Vec<f64>,
    /// (row, col) in grid cell units, cell centers at +0.5.
    pub centroid: (f64, f64),
    pub area_fraction: f64,
}

/// Per-image visual facts, grouped by interest class in detection order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneFacts {
    pub grid: (usize, usize),
    pub instances: BTreeMap<String, Vec<SceneInstance>>,
}

impl SceneFacts {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            grid: (height, width),
            instances: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, class: impl Into<String>, instance: SceneInstance) {
        self.instances
            .entry(class.into())
            .or_default()
            .push(instance);
    }

    fn of_class<'a>(
        &'a self,
        class: &str,
        min_area: f64,
    ) -> impl Iterator<Item = &'a SceneInstance> + 'a {
        self.instances
            .get(class)
            .into_iter()
            .flatten()
            .filter(move |i| i.area_fraction >= min_area)
    }

    /// Largest-area instance; earliest wins on ties.
    fn dominant(&self, class: &str, min_area: f64) -> Option<&SceneInstance> {
        self.of_class(class, min_area)
            .fold(None, |best, inst| match best {
                Some(b) if b.area_fraction >= inst.area_fraction => Some(b),
                _ => Some(inst),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub rule_id: String,
    pub passed: bool,
    pub explanation: String,
}

/// Argmax of cosine similarity over `vocab`; the first label wins ties.
pub fn zero_shot_classify<'v>(
    feature: &[f64],
    vocab: &'v [String],
    bank: &TextBank,
) -> Result<&'v str> {
    if vocab.is_empty() {
        return Err(Error::EmptyInput("zero-shot vocabulary"));
    }
    if feature.len() != bank.dim {
        return Err(Error::DimensionMismatch {
            context: "zero-shot feature vs text bank".into(),
            expected: bank.dim,
            actual: feature.len(),
        });
    }
    if norm(feature) == 0.0 {
        return Err(Error::ZeroVector("zero-shot feature"));
    }
    let mut best: Option<(&str, f64)> = None;
    for label in vocab {
        let text: Vec<f64> = bank.get(label)?.iter().map(|&x| f64::from(x)).collect();
        let sim = cosine(feature, &text).ok_or(Error::ZeroVector("text embedding"))?;
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((label, sim));
        }
    }
    Ok(best.expect("vocab is non-empty").0)
}

pub fn count_instances(facts: &SceneFacts, class: &str, min_area: f64) -> usize {
    facts.of_class(class, min_area).count()
}

fn format_histogram(h: &BTreeMap<&str, usize>) -> String {
    let mut s = String::from("{");
    for (i, (label, n)) in h.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{label}:{n}");
    }
    s.push('}');
    s
}

pub fn evaluate_rule(
    rule: &Rule,
    facts: &SceneFacts,
    bank: &TextBank,
    default_min_area: f64,
) -> Result<Verdict> {
    let min_area = rule.min_area.unwrap_or(default_min_area);
    let verdict = |passed: bool, explanation: String| Verdict {
        rule_id: rule.id.clone(),
        passed,
        explanation,
    };
    let missing = |class: &str| verdict(false, format!("missing interest: {class}"));

    match &rule.kind {
        RuleKind::CountEq { class, k } => {
            let n = count_instances(facts, class, min_area);
            Ok(verdict(
                n == *k,
                format!("count({class})={n}, expected {k}"),
            ))
        }
        RuleKind::ZsConsistency {
            class_a,
            vocab_a,
            class_b,
            vocab_b,
            allowed_pairs,
        } => {
            let Some(a) = facts.dominant(class_a, min_area) else {
                return Ok(missing(class_a));
            };
            let Some(b) = facts.dominant(class_b, min_area) else {
                return Ok(missing(class_b));
            };
            let la = zero_shot_classify(&a.feature, vocab_a, bank)?;
            let lb = zero_shot_classify(&b.feature, vocab_b, bank)?;
            let ok = allowed_pairs.iter().any(|(x, y)| x == la && y == lb);
            let status = if ok { "allowed" } else { "not allowed" };
            Ok(verdict(ok, format!("pair ({la},{lb}) {status}")))
        }
        RuleKind::AttrCountConsistency {
            attr_class,
            vocab,
            count_class,
            map,
        } => {
            let Some(a) = facts.dominant(attr_class, min_area) else {
                return Ok(missing(attr_class));
            };
            let label = zero_shot_classify(&a.feature, vocab, bank)?;
            let n = count_instances(facts, count_class, min_area);
            match map.get(label) {
                None => Ok(verdict(
                    false,
                    format!("{attr_class}={label} has no expected count({count_class})"),
                )),
                Some(&expected) => Ok(verdict(
                    n == expected,
                    format!(
                        "count({count_class})={n}, expected {expected} for {attr_class}={label}"
                    ),
                )),
            }
        }
        RuleKind::HistogramMatch {
            class,
            vocab,
            reference,
        } => {
            let mut observed: BTreeMap<&str, usize> = BTreeMap::new();
            for inst in facts.of_class(class, min_area) {
                *observed
                    .entry(zero_shot_classify(&inst.feature, vocab, bank)?)
                    .or_default() += 1;
            }
            let expected: BTreeMap<&str, usize> = reference
                .iter()
                .filter(|(_, &n)| n > 0)
                .map(|(l, &n)| (l.as_str(), n))
                .collect();
            Ok(verdict(
                observed == expected,
                format!(
                    "histogram({class})={}, expected {}",
                    format_histogram(&observed),
                    format_histogram(&expected)
                ),
            ))
        }
        RuleKind::RegionCountEq {
            class,
            axis,
            split_fraction,
        } => {
            let (h, w) = facts.grid;
            let (mut first, mut second) = (0usize, 0usize);
            for inst in facts.of_class(class, min_area) {
                let pos = match axis {
                    Axis::X => inst.centroid.1 / w as f64,
                    Axis::Y => inst.centroid.0 / h as f64,
                };
                if pos < *split_fraction {
                    first += 1;
                } else {
                    second += 1;
                }
            }
            let (n1, n2) = match axis {
                Axis::X => ("left", "right"),
                Axis::Y => ("top", "bottom"),
            };
            Ok(verdict(
                first == second,
                format!(
                    "region counts({class}) split at split_fraction={split_fraction}: {n1}={first}, {n2}={second}"
                ),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionOutcome {
    /// 0 when every rule passes, 1 otherwise.
    pub score: u8,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
}

pub fn composition_score(
    rules: &[Rule],
    facts: &SceneFacts,
    bank: &TextBank,
    default_min_area: f64,
) -> Result<CompositionOutcome> {
    let verdicts = rules
        .iter()
        .map(|r| evaluate_rule(r, facts, bank, default_min_area))
        .collect::<Result<Vec<_>>>()?;
    let score = u8::from(verdicts.iter().any(|v| !v.passed));
    let warnings = if rules.is_empty() {
        vec!["no rules configured".to_string()]
    } else {
        Vec::new()
    };
    Ok(CompositionOutcome {
        score,
        verdicts,
        warnings,
    })
}
