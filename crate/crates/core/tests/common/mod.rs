//! Brute-force oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use logsad::linalg::RowMatrix;
use logsad::patch::{BankStage, FeatureStack, MemoryBank, StageGrid};
use logsad::NUM_STAGES;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_f32(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

pub fn unit_f64(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..rows).map(|_| unit_f32(rng, dim)).collect()
}

/// Stack whose four stages each hold `h * w` random unit rows of `dim`.
pub fn random_stack(rng: &mut ChaCha8Rng, h: usize, w: usize, dim: usize) -> FeatureStack {
    let stages = (0..NUM_STAGES)
        .map(|_| StageGrid::new(h, w, RowMatrix::from_rows(&unit_rows(rng, h * w, dim))).unwrap())
        .collect();
    FeatureStack::new(stages).unwrap()
}

pub fn bank_from_rows(stages: &[Vec<Vec<f32>>]) -> MemoryBank {
    MemoryBank::from_stages(
        stages
            .iter()
            .map(|rows| BankStage::new(RowMatrix::from_rows(rows)))
            .collect(),
    )
    .unwrap()
}

/// Per-cell stage-averaged nearest cosine distance, computed pair by pair.
pub fn brute_patch_map(query: &FeatureStack, bank: &[Vec<Vec<f32>>]) -> Vec<f64> {
    let cells = query.height() * query.width();
    let mut map = vec![0.0; cells];
    for (k, rows) in bank.iter().enumerate() {
        let grid = query.stage(k);
        for (c, cell) in map.iter_mut().enumerate() {
            let u = grid.features().row(c);
            let mut best = f64::INFINITY;
            for v in rows {
                let (mut uv, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
                for (a, b) in u.iter().zip(v) {
                    let (a, b) = (f64::from(*a), f64::from(*b));
                    uv += a * b;
                    uu += a * a;
                    vv += b * b;
                }
                best = best.min(1.0 - uv / (uu.sqrt() * vv.sqrt()));
            }
            *cell += best.clamp(0.0, 2.0) / NUM_STAGES as f64;
        }
    }
    map
}

fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum()
}

/// Farthest-point-first selection recomputing every distance from scratch.
pub fn brute_greedy(points: &[Vec<f32>], budget: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let first = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
    let mut selected = vec![first];
    while selected.len() < budget {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if selected.contains(&i) {
                continue;
            }
            let d = selected
                .iter()
                .map(|&s| sq(&points[i], &points[s]))
                .fold(f64::INFINITY, f64::min);
            match best {
                Some((_, b)) if d <= b => {}
                _ => best = Some((i, d)),
            }
        }
        selected.push(best.unwrap().0);
    }
    selected
}

/// Largest Euclidean distance from a point to its nearest selected point.
pub fn brute_radius(points: &[Vec<f32>], selected: &[usize]) -> f64 {
    points
        .iter()
        .map(|p| {
            selected
                .iter()
                .map(|&s| sq(p, &points[s]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// Every injection of `0..k` into `0..m`, in lexicographic order.
pub fn injections(k: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, m: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for c in 0..m {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                rec(k, m, cur, used, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(k, m, &mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

/// Minimum total cost and the lexicographically first minimizing assignment,
/// indexed over the smaller side, by exhaustive enumeration.
pub fn brute_assignment(cost: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let rows = cost.len();
    let cols = cost[0].len();
    let (k, m) = (rows.min(cols), rows.max(cols));
    let at = |small: usize, large: usize| {
        if rows <= cols {
            cost[small][large]
        } else {
            cost[large][small]
        }
    };
    let mut best = (f64::INFINITY, Vec::new());
    for inj in injections(k, m) {
        let total: f64 = inj.iter().enumerate().map(|(s, &l)| at(s, l)).sum();
        if total < best.0 {
            best = (total, inj);
        }
    }
    let mut pairs: Vec<(usize, usize)> = best
        .1
        .iter()
        .enumerate()
        .map(|(s, &l)| if rows <= cols { (s, l) } else { (l, s) })
        .collect();
    pairs.sort_unstable();
    (best.0, pairs)
}

/// Mann-Whitney statistic over all anomalous/normal pairs.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &a) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &b) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Best F1 over every observed score as a `>=` threshold, lowest threshold on
/// ties.
pub fn brute_f1(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut best = (-1.0, f64::NAN);
    for &t in &thresholds {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= t, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    best
}

pub mod rules {
    //! Passing and failing scenes for every shipped rule.

    use std::collections::BTreeMap;
    use std::path::PathBuf;

    use logsad::composition::{Rule, SceneFacts, SceneInstance};
    use logsad::interchange::{load_rulespec, RuleSpec, TextBank};

    pub const LABELS: [&str; 11] = [
        "red liquid",
        "yellow liquid",
        "milky white liquid",
        "cherry",
        "orange",
        "banana",
        "long screw",
        "short screw",
        "yellow cable",
        "blue cable",
        "red cable",
    ];
    const DIM: usize = 12;
    pub const SIDE: usize = 16;

    pub fn configs_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
    }

    pub fn config(name: &str) -> RuleSpec {
        load_rulespec(configs_dir().join(format!("{name}.json"))).unwrap()
    }

    pub fn rule(config_name: &str, id: &str) -> Rule {
        config(config_name)
            .rules
            .into_iter()
            .find(|r| r.id == id)
            .unwrap_or_else(|| panic!("no rule {id} in {config_name}"))
    }

    /// One-hot text embeddings, one axis per label.
    pub fn text_bank() -> TextBank {
        let embeddings = LABELS
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut v = vec![0.0f32; DIM];
                v[i] = 1.0;
                (l.to_string(), v)
            })
            .collect::<BTreeMap<_, _>>();
        TextBank::new(DIM, embeddings).unwrap()
    }

    /// Feature close to `label`'s embedding but not identical.
    pub fn looks_like(label: &str) -> Vec<f64> {
        let i = LABELS.iter().position(|l| *l == label).unwrap();
        let mut v = [0.05; DIM];
        v[i] = 1.0;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn plain() -> Vec<f64> {
        let mut v = vec![0.0; DIM];
        v[DIM - 1] = 1.0;
        v
    }

    pub fn instance(feature: Vec<f64>, col: f64, area: f64) -> SceneInstance {
        SceneInstance {
            feature,
            centroid: (SIDE as f64 / 2.0, col),
            area_fraction: area,
        }
    }

    fn scene(items: Vec<(&str, SceneInstance)>) -> SceneFacts {
        let mut facts = SceneFacts::new(SIDE, SIDE);
        for (class, inst) in items {
            facts.push(class, inst);
        }
        facts
    }

    pub struct Fixture {
        pub config: &'static str,
        pub rule_id: &'static str,
        pub kind: &'static str,
        pub passing: SceneFacts,
        pub pass_explanation: &'static str,
        pub failing: SceneFacts,
        pub fail_explanation: &'static str,
    }

    fn pushpins(n: usize) -> SceneFacts {
        scene(
            (0..n)
                .map(|i| ("pushpin", instance(plain(), (i % SIDE) as f64 + 0.5, 0.01)))
                .collect(),
        )
    }

    fn juice(liquid: &str, fruit: &str) -> SceneFacts {
        scene(vec![
            (
                "liquid in the bottle",
                instance(looks_like(liquid), 8.0, 0.2),
            ),
            ("fruit", instance(looks_like(fruit), 8.0, 0.05)),
            // smaller stray region of another color is ignored
            (
                "liquid in the bottle",
                instance(looks_like("milky white liquid"), 2.0, 0.01),
            ),
        ])
    }

    fn connectors(cable: &str, left: usize, right: usize) -> SceneFacts {
        let mut items = vec![("cable", instance(looks_like(cable), 8.0, 0.1))];
        for i in 0..left {
            items.push(("clamp", instance(plain(), 2.5 + i as f64 * 0.1, 0.01)));
        }
        for i in 0..right {
            items.push(("clamp", instance(plain(), 12.5 + i as f64 * 0.1, 0.01)));
        }
        scene(items)
    }

    fn screws(labels: &[&str]) -> SceneFacts {
        scene(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| ("screw", instance(looks_like(l), 2.0 + i as f64, 0.02)))
                .collect(),
        )
    }

    /// Covers all five rule kinds across the shipped configs.
    pub fn fixtures() -> Vec<Fixture> {
        vec![
            Fixture {
                config: "pushpins",
                rule_id: "pushpin_count",
                kind: "count_eq",
                passing: pushpins(15),
                pass_explanation: "count(pushpin)=15, expected 15",
                failing: pushpins(14),
                fail_explanation: "count(pushpin)=14, expected 15",
            },
            Fixture {
                config: "splicing_connectors",
                rule_id: "single_cable",
                kind: "count_eq",
                passing: connectors("red cable", 5, 5),
                pass_explanation: "count(cable)=1, expected 1",
                failing: scene(vec![]),
                fail_explanation: "count(cable)=0, expected 1",
            },
            Fixture {
                config: "juice_bottle",
                rule_id: "fruit_tag_matches_liquid",
                kind: "zs_consistency",
                passing: juice("red liquid", "cherry"),
                pass_explanation: "pair (red liquid,cherry) allowed",
                failing: juice("red liquid", "orange"),
                fail_explanation: "pair (red liquid,orange) not allowed",
            },
            Fixture {
                config: "splicing_connectors",
                rule_id: "cable_color_vs_clamps",
                kind: "attr_count_consistency",
                passing: connectors("yellow cable", 2, 2),
                pass_explanation: "count(clamp)=4, expected 4 for cable=yellow cable",
                failing: connectors("blue cable", 2, 2),
                fail_explanation: "count(clamp)=4, expected 6 for cable=blue cable",
            },
            Fixture {
                config: "screw_bag",
                rule_id: "screw_histogram",
                kind: "histogram_match",
                passing: screws(&["short screw", "long screw"]),
                pass_explanation:
                    "histogram(screw)={long screw:1, short screw:1}, expected {long screw:1, short screw:1}",
                failing: screws(&["long screw", "long screw"]),
                fail_explanation:
                    "histogram(screw)={long screw:2}, expected {long screw:1, short screw:1}",
            },
            Fixture {
                config: "splicing_connectors",
                rule_id: "left_right_symmetry",
                kind: "region_count_eq",
                passing: connectors("blue cable", 3, 3),
                pass_explanation: "region counts(clamp) split at split_fraction=0.5: left=3, right=3",
                failing: connectors("blue cable", 3, 2),
                fail_explanation: "region counts(clamp) split at split_fraction=0.5: left=3, right=2",
            },
        ]
    }
}
