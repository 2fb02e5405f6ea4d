//! Synthetic interchange datasets with planted structural and logical
//! anomalies.
//!
//! Every patch of a normal image is a per-stage prototype (background, class
//! or attribute) plus Gaussian noise, renormalized. Interest instances are
//! square blocks placed without overlap. Structural anomalies perturb a few
//! patches by `normalize(f + epsilon * r)` with `r` a random unit vector;
//! logical anomalies change an instance count or pick a disallowed attribute
//! pairing. Generation is sequential from one seeded generator, so the same
//! spec always yields identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::composition::{Rule, RuleKind};
use crate::error::{Error, Result};
use crate::interchange::{
    write_manifest, write_rulespec, write_tensor, write_text_bank, ImageDoc, InstanceDoc, Label,
    ManifestDoc, RuleSpec, Split, Tensor, TextBank,
};
use crate::linalg::dot;
use crate::NUM_STAGES;

/// Prototypes (and text embeddings) must stay below this pairwise cosine.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.9;
const PLACEMENT_ATTEMPTS: usize = 10_000;
const PROTOTYPE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Instances per normal image.
    pub count: usize,
    /// Side of each square instance, in grid cells.
    #[serde(default = "one")]
    pub block: usize,
    /// Attribute labels; each gets its own prototype and the final-stage
    /// prototype doubles as its text embedding.
    #[serde(default)]
    pub attributes: Vec<String>,
}

fn one() -> usize {
    1
}

/// Attribute pairing between two classes, checked by a consistency rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingSpec {
    pub class_a: String,
    pub class_b: String,
    pub allowed: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralSpec {
    pub epsilon: f64,
    pub patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LogicalSpec {
    CountDelta { class: String, delta: i64 },
    AttributeSwap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub category: String,
    #[serde(default = "default_grid_side")]
    pub grid_side: usize,
    pub stage_dims: [usize; NUM_STAGES],
    pub n_train: usize,
    pub n_validation: usize,
    /// Normal test images.
    pub n_normal: usize,
    pub n_structural: usize,
    pub n_logical: usize,
    /// Expected norm of the additive noise per patch.
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
    pub classes: Vec<ClassSpec>,
    #[serde(default)]
    pub pairing: Option<PairingSpec>,
    #[serde(default)]
    pub structural: Option<StructuralSpec>,
    #[serde(default)]
    pub logical: Option<LogicalSpec>,
}

fn default_grid_side() -> usize {
    16
}

fn default_noise() -> f64 {
    0.05
}

impl SynthSpec {
    /// Fifteen pushpins per image; logical anomalies miss one.
    pub fn pushpins_like(seed: u64) -> Self {
        Self {
            category: "pushpins_like".into(),
            grid_side: 16,
            stage_dims: [32; NUM_STAGES],
            n_train: 20,
            n_validation: 10,
            n_normal: 50,
            n_structural: 25,
            n_logical: 25,
            noise: default_noise(),
            seed,
            classes: vec![ClassSpec {
                name: "pushpin".into(),
                count: 15,
                block: 2,
                attributes: Vec::new(),
            }],
            pairing: None,
            structural: Some(StructuralSpec {
                epsilon: 0.5,
                patches: 4,
            }),
            logical: Some(LogicalSpec::CountDelta {
                class: "pushpin".into(),
                delta: -1,
            }),
        }
    }

    /// One liquid and one fruit whose attributes must pair up.
    pub fn juice_like(seed: u64) -> Self {
        let liquids = ["red liquid", "yellow liquid", "milky liquid"];
        let fruits = ["cherry", "orange", "banana"];
        Self {
            category: "juice_like".into(),
            grid_side: 16,
            stage_dims: [32; NUM_STAGES],
            n_train: 20,
            n_validation: 10,
            n_normal: 30,
            n_structural: 15,
            n_logical: 15,
            noise: default_noise(),
            seed,
            classes: vec![
                ClassSpec {
                    name: "liquid".into(),
                    count: 1,
                    block: 5,
                    attributes: liquids.iter().map(|s| s.to_string()).collect(),
                },
                ClassSpec {
                    name: "fruit".into(),
                    count: 1,
                    block: 3,
                    attributes: fruits.iter().map(|s| s.to_string()).collect(),
                },
            ],
            pairing: Some(PairingSpec {
                class_a: "liquid".into(),
                class_b: "fruit".into(),
                allowed: liquids
                    .iter()
                    .zip(fruits)
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .collect(),
            }),
            structural: Some(StructuralSpec {
                epsilon: 0.5,
                patches: 4,
            }),
            logical: Some(LogicalSpec::AttributeSwap),
        }
    }

    fn class(&self, name: &str) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| c.name == name)
    }

    fn disallowed_pairs(&self) -> Vec<(String, String)> {
        let Some(p) = &self.pairing else {
            return Vec::new();
        };
        let (Some(a), Some(b)) = (self.class(&p.class_a), self.class(&p.class_b)) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for la in &a.attributes {
            for lb in &b.attributes {
                let pair = (la.clone(), lb.clone());
                if !p.allowed.contains(&pair) {
                    out.push(pair);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let cells = self.grid_side * self.grid_side;
        if self.grid_side < 2 {
            errors.push(format!("grid_side {} must be at least 2", self.grid_side));
        }
        if let Some(d) = self.stage_dims.iter().find(|&&d| d < 2) {
            errors.push(format!("stage dimension {d} must be at least 2"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            errors.push(format!(
                "noise {} must be finite and non-negative",
                self.noise
            ));
        }
        if self.n_train == 0 {
            errors.push("n_train must be at least 1".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if !names.insert(c.name.as_str()) {
                errors.push(format!("duplicate class {:?}", c.name));
            }
            if c.block == 0 || c.block > self.grid_side {
                errors.push(format!(
                    "class {:?}: block {} does not fit",
                    c.name, c.block
                ));
            }
            if c.attributes.iter().collect::<BTreeSet<_>>().len() != c.attributes.len() {
                errors.push(format!("class {:?}: duplicate attributes", c.name));
            }
        }
        let mut labels = BTreeSet::new();
        for l in self.text_labels() {
            if !labels.insert(l.clone()) {
                errors.push(format!("label {l:?} is used twice"));
            }
        }
        if self.n_structural > 0 {
            match &self.structural {
                None => errors.push("n_structural > 0 needs a structural section".into()),
                Some(s) => {
                    if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
                        errors.push(format!("epsilon {} must be non-negative", s.epsilon));
                    }
                    if s.patches == 0 || s.patches > cells {
                        errors.push(format!(
                            "structural patches {} not in 1..={cells}",
                            s.patches
                        ));
                    }
                }
            }
        }
        if let Some(p) = &self.pairing {
            for (class, pick) in [(&p.class_a, 0), (&p.class_b, 1)] {
                match self.class(class) {
                    None => errors.push(format!("pairing class {class:?} is not declared")),
                    Some(c) if c.attributes.is_empty() => {
                        errors.push(format!("pairing class {class:?} has no attributes"))
                    }
                    Some(c) => {
                        for pair in &p.allowed {
                            let label = if pick == 0 { &pair.0 } else { &pair.1 };
                            if !c.attributes.contains(label) {
                                errors.push(format!(
                                    "allowed pair label {label:?} is not an attribute of {class:?}"
                                ));
                            }
                        }
                    }
                }
            }
            if p.allowed.is_empty() {
                errors.push("pairing lists no allowed pairs".into());
            }
        }
        if self.n_logical > 0 {
            match &self.logical {
                None => errors.push("n_logical > 0 needs a logical section".into()),
                Some(LogicalSpec::CountDelta { class, delta }) => match self.class(class) {
                    None => errors.push(format!("count_delta class {class:?} is not declared")),
                    Some(c) => {
                        if *delta == 0 || c.count as i64 + delta < 0 {
                            errors.push(format!(
                                "count_delta {delta} invalid for count {} of {class:?}",
                                c.count
                            ));
                        }
                    }
                },
                Some(LogicalSpec::AttributeSwap) => {
                    if self.pairing.is_none() {
                        errors.push("attribute_swap needs a pairing section".into());
                    } else if self.disallowed_pairs().is_empty() {
                        errors.push("attribute_swap needs at least one disallowed pair".into());
                    }
                }
            }
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }

        let extra = match &self.logical {
            Some(LogicalSpec::CountDelta { class, delta }) if self.n_logical > 0 && *delta > 0 => {
                self.class(class)
                    .map_or(0, |c| *delta as usize * c.block * c.block)
            }
            _ => 0,
        };
        let needed: usize = self
            .classes
            .iter()
            .map(|c| c.count * c.block * c.block)
            .sum::<usize>()
            + extra;
        if needed > cells {
            return Err(Error::InfeasibleSpec(format!(
                "instances need {needed} cells but the grid has {cells}"
            )));
        }
        Ok(())
    }

    fn text_labels(&self) -> Vec<String> {
        self.classes
            .iter()
            .flat_map(|c| std::iter::once(c.name.clone()).chain(c.attributes.iter().cloned()))
            .collect()
    }

    /// Compositional rules every normal image satisfies.
    pub fn rules(&self) -> RuleSpec {
        let mut rules: Vec<Rule> = self
            .classes
            .iter()
            .map(|c| {
                Rule::new(
                    format!("count_{}", c.name.replace(' ', "_")),
                    RuleKind::CountEq {
                        class: c.name.clone(),
                        k: c.count,
                    },
                )
            })
            .collect();
        if let Some(p) = &self.pairing {
            let vocab = |name: &str| {
                self.class(name)
                    .map(|c| c.attributes.clone())
                    .unwrap_or_default()
            };
            rules.push(Rule::new(
                format!("pair_{}_{}", p.class_a, p.class_b).replace(' ', "_"),
                RuleKind::ZsConsistency {
                    class_a: p.class_a.clone(),
                    vocab_a: vocab(&p.class_a),
                    class_b: p.class_b.clone(),
                    vocab_b: vocab(&p.class_b),
                    allowed_pairs: p.allowed.clone(),
                },
            ));
        }
        RuleSpec {
            category: self.category.clone(),
            interests: self.classes.iter().map(|c| c.name.clone()).collect(),
            rules,
        }
    }
}

/// Paths of the files written by [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub rules: PathBuf,
    pub text_bank: PathBuf,
}

struct Prototypes {
    /// `[stage]` background vector.
    background: Vec<Vec<f64>>,
    /// label -> `[stage]` vector; labels are class names and attributes.
    labels: BTreeMap<String, Vec<Vec<f64>>>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if crate::linalg::normalize(&mut v) {
            return v;
        }
    }
}

fn prototypes(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Prototypes> {
    let labels = spec.text_labels();
    let mut per_stage: Vec<Vec<Vec<f64>>> = Vec::with_capacity(NUM_STAGES);
    for &dim in &spec.stage_dims {
        let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(labels.len() + 1);
        let mut attempts = 0;
        while accepted.len() < labels.len() + 1 {
            attempts += 1;
            if attempts > PROTOTYPE_ATTEMPTS {
                return Err(Error::InfeasibleSpec(format!(
                    "cannot draw {} prototypes of dimension {dim} with pairwise cosine < {MAX_PROTOTYPE_COSINE}",
                    labels.len() + 1
                )));
            }
            let v = random_unit(rng, dim);
            if accepted.iter().all(|u| dot(u, &v) < MAX_PROTOTYPE_COSINE) {
                accepted.push(v);
            }
        }
        per_stage.push(accepted);
    }
    let background = per_stage.iter().map(|s| s[0].clone()).collect();
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, per_stage.iter().map(|s| s[i + 1].clone()).collect()))
        .collect();
    Ok(Prototypes { background, labels })
}

/// One placed instance: class, appearance label and covered cells.
struct Placed {
    class: String,
    label: String,
    cells: Vec<usize>,
}

struct Scene {
    placed: Vec<Placed>,
    /// Cells that differ from a normal scene, for pixel ground truth.
    anomalous_cells: BTreeSet<usize>,
}

fn place_blocks(
    side: usize,
    block: usize,
    count: usize,
    occupied: &mut [bool],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS {
                return Err(Error::InfeasibleSpec(format!(
                    "could not place a {block}x{block} instance on a {side}x{side} grid"
                )));
            }
            let r0 = rng.random_range(0..=side - block);
            let c0 = rng.random_range(0..=side - block);
            let cells: Vec<usize> = (r0..r0 + block)
                .flat_map(|r| (c0..c0 + block).map(move |c| r * side + c))
                .collect();
            if cells.iter().all(|&i| !occupied[i]) {
                for &i in &cells {
                    occupied[i] = true;
                }
                out.push(cells);
                break;
            }
        }
    }
    Ok(out)
}

fn plan_scene(spec: &SynthSpec, logical: bool, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let side = spec.grid_side;
    let mut labels_for: BTreeMap<&str, String> = BTreeMap::new();
    let mut swapped_class: Option<&str> = None;
    if let Some(p) = &spec.pairing {
        let pair = if logical && matches!(spec.logical, Some(LogicalSpec::AttributeSwap)) {
            let bad = spec.disallowed_pairs();
            let pair = bad[rng.random_range(0..bad.len())].clone();
            swapped_class = Some(p.class_b.as_str());
            pair
        } else {
            p.allowed[rng.random_range(0..p.allowed.len())].clone()
        };
        labels_for.insert(p.class_a.as_str(), pair.0);
        labels_for.insert(p.class_b.as_str(), pair.1);
    }

    let mut occupied = vec![false; side * side];
    let mut placed = Vec::new();
    let mut anomalous_cells = BTreeSet::new();
    for class in &spec.classes {
        let mut count = class.count;
        if logical {
            if let Some(LogicalSpec::CountDelta {
                class: target,
                delta,
            }) = &spec.logical
            {
                if *target == class.name {
                    count = (class.count as i64 + delta) as usize;
                }
            }
        }
        // Removed instances are planned too so their cells mark the defect.
        let planned = count.max(class.count);
        let blocks = place_blocks(side, class.block, planned, &mut occupied, rng)?;
        for (k, cells) in blocks.into_iter().enumerate() {
            let label = match labels_for.get(class.name.as_str()) {
                Some(l) => l.clone(),
                None if class.attributes.is_empty() => class.name.clone(),
                None => class.attributes[rng.random_range(0..class.attributes.len())].clone(),
            };
            let removed = k >= count;
            let added = k >= class.count;
            if removed || added || swapped_class == Some(class.name.as_str()) {
                anomalous_cells.extend(cells.iter().copied());
            }
            if !removed {
                placed.push(Placed {
                    class: class.name.clone(),
                    label,
                    cells,
                });
            }
        }
    }
    Ok(Scene {
        placed,
        anomalous_cells,
    })
}

fn noisy(proto: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = noise / (proto.len() as f64).sqrt();
    let mut v: Vec<f64> = proto
        .iter()
        .map(|&p| {
            let z: f64 = StandardNormal.sample(rng);
            p + scale * z
        })
        .collect();
    if !crate::linalg::normalize(&mut v) {
        v = proto.to_vec();
    }
    v
}

fn render_stages(
    spec: &SynthSpec,
    protos: &Prototypes,
    scene: &Scene,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Vec<f64>>> {
    let cells = spec.grid_side * spec.grid_side;
    let mut owner: Vec<Option<&str>> = vec![None; cells];
    for p in &scene.placed {
        for &c in &p.cells {
            owner[c] = Some(p.label.as_str());
        }
    }
    (0..NUM_STAGES)
        .map(|s| {
            (0..cells)
                .map(|c| {
                    let proto = match owner[c] {
                        Some(label) => &protos.labels[label][s],
                        None => &protos.background[s],
                    };
                    noisy(proto, spec.noise, rng)
                })
                .collect()
        })
        .collect()
}

fn perturb(
    stages: &mut [Vec<Vec<f64>>],
    structural: &StructuralSpec,
    cells: usize,
    rng: &mut ChaCha8Rng,
) -> BTreeSet<usize> {
    let chosen: BTreeSet<usize> = rand::seq::index::sample(rng, cells, structural.patches)
        .into_iter()
        .collect();
    for &c in &chosen {
        for stage in stages.iter_mut() {
            let f = &mut stage[c];
            let r = random_unit(rng, f.len());
            for (x, y) in f.iter_mut().zip(&r) {
                *x += structural.epsilon * y;
            }
            if !crate::linalg::normalize(f) {
                *f = r;
            }
        }
    }
    chosen
}

fn stage_tensor(side: usize, rows: &[Vec<f64>]) -> Tensor {
    let dim = rows[0].len();
    let data = rows.iter().flatten().map(|&x| x as f32).collect();
    Tensor::new(vec![side, side, dim], data).expect("stage shape is valid")
}

fn mask_tensor(side: usize, cells: impl IntoIterator<Item = usize>) -> Tensor {
    let mut data = vec![0.0f32; side * side];
    for c in cells {
        data[c] = 1.0;
    }
    Tensor::new(vec![side, side], data).expect("mask shape is valid")
}

fn rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the dataset under `out_dir`: `manifest.json`, `rules.json`,
/// `textbank.json`, and tensors under `features/`, `masks/` and `gt/`.
pub fn generate_dataset(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    spec.validate()?;
    let root = out_dir.as_ref();
    for sub in ["features", "masks", "gt"] {
        create_dir(&root.join(sub))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = prototypes(spec, &mut rng)?;
    let side = spec.grid_side;
    let cells = side * side;

    let plan: Vec<(String, Split, Label)> = [
        ("train", Split::Train, Label::Normal, spec.n_train),
        ("val", Split::Validation, Label::Normal, spec.n_validation),
        ("test_normal", Split::Test, Label::Normal, spec.n_normal),
        (
            "test_structural",
            Split::Test,
            Label::StructuralAnomaly,
            spec.n_structural,
        ),
        (
            "test_logical",
            Split::Test,
            Label::LogicalAnomaly,
            spec.n_logical,
        ),
    ]
    .into_iter()
    .flat_map(|(prefix, split, label, n)| {
        (0..n).map(move |i| (format!("{prefix}_{i:03}"), split, label))
    })
    .collect();

    let mut images = Vec::with_capacity(plan.len());
    for (image_id, split, label) in plan {
        let logical = label == Label::LogicalAnomaly;
        let scene = plan_scene(spec, logical, &mut rng)?;
        let mut stages = render_stages(spec, &protos, &scene, &mut rng);
        let mut gt_cells = scene.anomalous_cells.clone();
        if label == Label::StructuralAnomaly {
            let s = spec.structural.as_ref().expect("validated");
            gt_cells.extend(perturb(&mut stages, s, cells, &mut rng));
        }

        let mut stage_paths = Vec::with_capacity(NUM_STAGES);
        for (k, rows) in stages.iter().enumerate() {
            let path = root
                .join("features")
                .join(format!("{image_id}_s{}.lsad", k + 1));
            write_tensor(&stage_tensor(side, rows), &path)?;
            stage_paths.push(rel(&path, root));
        }
        let mut instances = Vec::with_capacity(scene.placed.len());
        for (k, p) in scene.placed.iter().enumerate() {
            let path = root.join("masks").join(format!("{image_id}_i{k:02}.lsad"));
            write_tensor(&mask_tensor(side, p.cells.iter().copied()), &path)?;
            instances.push(InstanceDoc {
                class_name: p.class.clone(),
                mask_path: rel(&path, root),
                area_fraction: p.cells.len() as f64 / cells as f64,
            });
        }
        let pixel_gt_path = if split == Split::Test {
            let path = root.join("gt").join(format!("{image_id}.lsad"));
            write_tensor(&mask_tensor(side, gt_cells.iter().copied()), &path)?;
            Some(rel(&path, root))
        } else {
            None
        };
        images.push(ImageDoc {
            image_id,
            split: split.as_str().into(),
            label: label.as_str().into(),
            stage_feature_paths: stage_paths,
            interest_instances: instances,
            pixel_gt_path,
        });
    }

    let manifest = root.join("manifest.json");
    write_manifest(
        &ManifestDoc {
            category: spec.category.clone(),
            images,
        },
        &manifest,
    )?;
    let rules = root.join("rules.json");
    write_rulespec(&spec.rules(), &rules)?;
    let text_bank = root.join("textbank.json");
    let embeddings = protos
        .labels
        .iter()
        .map(|(l, v)| {
            (
                l.clone(),
                v[NUM_STAGES - 1].iter().map(|&x| x as f32).collect(),
            )
        })
        .collect();
    write_text_bank(
        &TextBank::new(spec.stage_dims[NUM_STAGES - 1], embeddings)?,
        &text_bank,
    )?;
    Ok(SynthOutput {
        manifest,
        rules,
        text_bank,
    })
}

pub fn load_synth_spec(source: impl AsRef<Path>) -> Result<SynthSpec> {
    let source = source.as_ref();
    let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: source.to_path_buf(),
        source: e,
    })
}
