//! Experiment orchestration: attack grids over model rosters and norm
//! budgets, transferability matrices, sensitivity curves, the gamma
//! ablation, and result persistence as CSV and SVG line charts.
//!
//! Grids are resumable: each (victim, attack, epsilon) cell is persisted on
//! completion and skipped on rerun, and every cell derives its RNG seeds
//! from the global seed plus its own coordinates, so interrupted and
//! uninterrupted runs emit identical results.

mod plot;
mod records;

pub use plot::write_svg_curves;
pub use records::{load_records, save_records, ResultRecord, CSV_HEADER};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    evaluate_attack, pgd_attack, AttackConfig, AttackMode, AttackOutcome, Constraint,
};
use crate::dataset::LabeledDataset;
use crate::defenses::{ae_defense, sor_defense, srs_defense, DefenseConfig, DefenseKind};
use crate::error::{Error, Result};
use crate::nn::{forward_classifier, AEModel, ClassifierModel};
use crate::PointCloud;

/// Declarative experiment description, mirrored by the TOML config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// PCDS dataset file holding both splits.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Attacked test samples per (victim, attack, epsilon) cell.
    pub n_samples: usize,
    /// Norm budgets, non-negative and sorted ascending.
    pub epsilons: Vec<f32>,
    pub models: Vec<ModelEntry>,
    /// Checkpoint of the AE used inside attack objectives (gamma > 0).
    pub attack_ae: Option<PathBuf>,
    /// Checkpoint of the separately trained AE used as a defense.
    pub defense_ae: Option<PathBuf>,
    pub attacks: Vec<AttackEntry>,
    /// Defense names: `sor`, `srs`, `ae`, `dup_net` (reserved, unsupported).
    #[serde(default)]
    pub defenses: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub arch: String,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackEntry {
    pub name: String,
    /// `linf` or `l2` (hard constraints; the grid substitutes each epsilon).
    pub constraint: String,
    pub gamma: f32,
    #[serde(default = "default_kappa")]
    pub kappa: f32,
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_kappa() -> f32 {
    30.0
}
fn default_lr() -> f32 {
    0.01
}
fn default_iterations() -> usize {
    200
}
fn default_restarts() -> usize {
    2
}

/// Default hard l-infinity budget grid.
pub const EPS_LINF_GRID: [f32; 10] = [0.01, 0.04, 0.05, 0.1, 0.18, 0.28, 0.35, 0.45, 0.6, 0.75];
/// Default hard l2 budget grid.
pub const EPS_L2_GRID: [f32; 10] = [0.1, 0.22, 0.48, 0.72, 1.0, 1.5, 1.8, 2.8, 4.0, 7.0];

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("config lists no models".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !names.insert(&m.name) {
                return Err(Error::Config(format!("duplicate model name `{}`", m.name)));
            }
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("config lists no epsilon values".into()));
        }
        for w in self.epsilons.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Config("epsilon values must be sorted ascending".into()));
            }
        }
        if self.epsilons[0] < 0.0 {
            return Err(Error::Config("epsilon values must be non-negative".into()));
        }
        for a in &self.attacks {
            if a.constraint != "linf" && a.constraint != "l2" {
                return Err(Error::Config(format!(
                    "attack `{}` has unsupported grid constraint `{}`",
                    a.name, a.constraint
                )));
            }
        }
        for d in &self.defenses {
            defense_by_name(d, 0)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Resolves a defense name from a config file.
pub fn defense_by_name(name: &str, seed: u64) -> Result<DefenseConfig> {
    let kind = match name {
        "sor" => DefenseKind::Sor {
            k: crate::defenses::SOR_DEFAULT_K,
            alpha: crate::defenses::SOR_DEFAULT_ALPHA,
        },
        "srs" => DefenseKind::Srs {
            drop_rate: crate::defenses::SRS_DEFAULT_DROP,
        },
        "ae" => DefenseKind::AeReconstruct,
        "dup_net" => {
            return Err(Error::Config(
                "defense `dup_net` is reserved but unsupported".into(),
            ))
        }
        other => return Err(Error::Config(format!("unknown defense `{other}`"))),
    };
    Ok(DefenseConfig { kind, seed })
}

/// In-memory inputs of a grid run: trained models and the evaluation split.
pub struct GridContext {
    /// (name, model) roster; attacks are optimized against each in turn and
    /// evaluated against all.
    pub models: Vec<(String, ClassifierModel)>,
    /// AE used inside attack objectives when gamma > 0.
    pub attack_ae: Option<AEModel>,
    /// Separately trained AE backing the reconstruction defense.
    pub defense_ae: Option<AEModel>,
    /// (name, config) defenses applied at evaluation time.
    pub defenses: Vec<(String, DefenseConfig)>,
    pub test_set: LabeledDataset,
}

/// Grid coordinates: named attack presets crossed with norm budgets.
pub struct AttackGrid {
    pub attacks: Vec<(String, AttackConfig)>,
    pub epsilons: Vec<f32>,
    pub n_samples: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic per-sample seed from the global seed and cell coordinates.
pub fn cell_seed(global: u64, victim: &str, attack: &str, eps: f32, sample: usize) -> u64 {
    let mut h = splitmix(global);
    h = splitmix(h ^ fnv1a(victim.as_bytes()));
    h = splitmix(h ^ fnv1a(attack.as_bytes()));
    h = splitmix(h ^ eps.to_bits() as u64);
    splitmix(h ^ sample as u64)
}

/// Caps the rayon worker count from the `PCADV_THREADS` environment
/// variable. Call once at startup; later calls are no-ops.
pub fn configure_threads() {
    if let Ok(v) = std::env::var("PCADV_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn constraint_with_eps(c: Constraint, eps: f32) -> Result<Constraint> {
    match c {
        Constraint::HardLinf(_) => Ok(Constraint::HardLinf(eps)),
        Constraint::HardL2(_) => Ok(Constraint::HardL2(eps)),
        Constraint::Soft { .. } => Err(Error::Config(
            "attack grids sweep hard norm budgets; soft attacks take a fixed lambda".into(),
        )),
    }
}

fn norm_type_of(c: Constraint) -> &'static str {
    match c {
        Constraint::HardLinf(_) => "linf",
        Constraint::HardL2(_) => "l2",
        Constraint::Soft { distance, .. } => distance.name(),
    }
}

/// First `n_samples` test samples the victim classifies correctly.
fn victim_samples(
    victim: &ClassifierModel,
    test: &LabeledDataset,
    n_samples: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(n_samples);
    for (i, (x, label)) in test.samples.iter().enumerate() {
        if out.len() == n_samples {
            break;
        }
        if forward_classifier(victim, x)?.argmax() == *label {
            out.push(i);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid_input(
            "victim classifies no test sample correctly; nothing to attack",
        ));
    }
    Ok(out)
}

fn apply_defense(
    cfg: &DefenseConfig,
    defense_ae: Option<&AEModel>,
    x: &PointCloud,
) -> Result<PointCloud> {
    match cfg.kind {
        DefenseKind::Sor { k, alpha } => sor_defense(x, k, alpha),
        DefenseKind::Srs { drop_rate } => srs_defense(x, drop_rate, cfg.seed),
        DefenseKind::AeReconstruct => {
            let g = defense_ae.ok_or_else(|| {
                Error::Config("ae defense listed but no defense AE provided".into())
            })?;
            ae_defense(g, x)
        }
        DefenseKind::AdversarialTraining { .. } => Err(Error::Config(
            "adversarial training is a training-time defense, not an input transform".into(),
        )),
        DefenseKind::DupNet => Err(Error::Config(
            "defense `dup_net` is reserved but unsupported".into(),
        )),
    }
}

fn cell_file(out_dir: &Path, attack: &str, victim: &str, eps: f32) -> PathBuf {
    // Float bits keep distinct budgets from colliding in file names.
    out_dir
        .join("cells")
        .join(format!("{attack}__{victim}__eps{:08x}.csv", eps.to_bits()))
}

struct CellOutput {
    outcomes: Vec<(usize, AttackOutcome)>, // (test-set index, outcome)
}

fn run_cell(
    ctx: &GridContext,
    attack_name: &str,
    base: &AttackConfig,
    victim_name: &str,
    victim: &ClassifierModel,
    eps: f32,
    sample_ids: &[usize],
    grid_seed: u64,
) -> Result<CellOutput> {
    let g = if base.use_ae { ctx.attack_ae.as_ref() } else { None };
    if base.use_ae && g.is_none() {
        return Err(Error::Config(format!(
            "attack `{attack_name}` needs an attack AE but none is loaded"
        )));
    }
    let outcomes: Vec<Result<(usize, AttackOutcome)>> = sample_ids
        .par_iter()
        .map(|&i| {
            let (x, label) = &ctx.test_set.samples[i];
            let cfg = AttackConfig {
                constraint: constraint_with_eps(base.constraint, eps)?,
                seed: cell_seed(grid_seed, victim_name, attack_name, eps, i),
                ..base.clone()
            };
            let out = pgd_attack(victim, g, x, *label, &cfg)?;
            Ok((i, out))
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CellOutput { outcomes })
}

fn records_for_cell(
    ctx: &GridContext,
    attack_name: &str,
    base: &AttackConfig,
    victim_name: &str,
    eps: f32,
    grid_seed: u64,
    cell: &CellOutput,
) -> Result<Vec<ResultRecord>> {
    let n = cell.outcomes.len();
    let mean = |f: &dyn Fn(&AttackOutcome) -> f64| -> f64 {
        cell.outcomes.iter().map(|(_, o)| f(o)).sum::<f64>() / n as f64
    };
    let mean_linf = mean(&|o| o.norms.linf as f64);
    let mean_l2 = mean(&|o| o.norms.l2 as f64);
    let mean_chamfer = mean(&|o| o.norms.chamfer_symmetric as f64);
    let norm_type = norm_type_of(base.constraint).to_string();

    let mut records = Vec::new();
    for (transfer_name, transfer) in &ctx.models {
        let mut defenses: Vec<(String, Option<&DefenseConfig>)> = vec![("none".into(), None)];
        for (dn, dc) in &ctx.defenses {
            defenses.push((dn.clone(), Some(dc)));
        }
        for (defense_name, defense) in defenses {
            let mut successes = 0usize;
            for (i, outcome) in &cell.outcomes {
                let (x, label) = &ctx.test_set.samples[*i];
                let ok = match defense {
                    None => evaluate_attack(transfer, x, outcome, *label, base.mode)?,
                    Some(dc) => {
                        let xp = x.offset(&outcome.delta)?;
                        let seeded = DefenseConfig {
                            kind: dc.kind.clone(),
                            seed: cell_seed(grid_seed, victim_name, &defense_name, eps, *i),
                        };
                        let cleaned = apply_defense(&seeded, ctx.defense_ae.as_ref(), &xp)?;
                        let logits = forward_classifier(transfer, &cleaned)?;
                        match base.mode {
                            AttackMode::Untargeted => logits.argmax() != *label,
                            AttackMode::Targeted(t) => logits.argmax() == t,
                        }
                    }
                };
                if ok {
                    successes += 1;
                }
            }
            records.push(ResultRecord {
                attack: attack_name.to_string(),
                victim: victim_name.to_string(),
                transfer: transfer_name.clone(),
                defense: defense_name,
                norm_type: norm_type.clone(),
                epsilon: eps,
                gamma: base.gamma,
                kappa: base.kappa,
                n_samples: n,
                success_rate: successes as f64 / n as f64,
                mean_linf,
                mean_l2,
                mean_chamfer_sym: mean_chamfer,
                seed: grid_seed,
            });
        }
    }
    Ok(records)
}

/// Runs every (victim, attack, epsilon) cell of the grid, skipping cells
/// whose results already exist under the output directory, and returns all
/// records sorted. Also rewrites `results.csv`.
pub fn run_attack_grid(ctx: &GridContext, grid: &AttackGrid) -> Result<Vec<ResultRecord>> {
    if ctx.models.is_empty() {
        return Err(Error::Config("grid context holds no models".into()));
    }
    std::fs::create_dir_all(grid.out_dir.join("cells"))?;
    let mut all = Vec::new();
    for (attack_name, base) in &grid.attacks {
        for (victim_name, victim) in &ctx.models {
            let sample_ids = victim_samples(victim, &ctx.test_set, grid.n_samples)?;
            for &eps in &grid.epsilons {
                let path = cell_file(&grid.out_dir, attack_name, victim_name, eps);
                if path.exists() {
                    all.extend(load_records(&path)?);
                    continue;
                }
                let cell = run_cell(
                    ctx,
                    attack_name,
                    base,
                    victim_name,
                    victim,
                    eps,
                    &sample_ids,
                    grid.seed,
                )?;
                let records =
                    records_for_cell(ctx, attack_name, base, victim_name, eps, grid.seed, &cell)?;
                let tmp = path.with_extension("csv.tmp");
                save_records(&tmp, &records)?;
                std::fs::rename(&tmp, &path)?;
                all.extend(records);
            }
        }
    }
    sort_records(&mut all);
    save_records(&grid.out_dir.join("results.csv"), &all)?;
    Ok(all)
}

pub fn sort_records(records: &mut [ResultRecord]) {
    records.sort_by(|a, b| {
        (&a.attack, &a.victim, &a.transfer, &a.defense)
            .cmp(&(&b.attack, &b.victim, &b.transfer, &b.defense))
            .then(a.epsilon.total_cmp(&b.epsilon))
    });
}

/// Victim x transfer grid of budget-averaged success rates for one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub victims: Vec<String>,
    pub transfers: Vec<String>,
    /// cells[v][t] = mean over the budget grid of the success rate of
    /// attacks optimized on victim v, evaluated on transfer t, no defense.
    pub cells: Vec<Vec<f64>>,
    /// Mean of the off-diagonal cells; absent for a single-model roster.
    pub transferability_score: Option<f64>,
}

pub fn transfer_matrix(records: &[ResultRecord], attack_name: &str) -> Result<TransferMatrix> {
    let relevant: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| r.attack == attack_name && r.defense == "none")
        .collect();
    if relevant.is_empty() {
        return Err(Error::invalid_input(format!(
            "no records for attack `{attack_name}`"
        )));
    }
    let roster: Vec<String> = relevant
        .iter()
        .map(|r| r.victim.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let epsilons: Vec<f32> = {
        let mut v: Vec<f32> = relevant
            .iter()
            .map(|r| r.epsilon.to_bits())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(f32::from_bits)
            .collect();
        v.sort_by(f32::total_cmp);
        v
    };
    let mut missing = Vec::new();
    let mut cells = vec![vec![0.0f64; roster.len()]; roster.len()];
    for (vi, v) in roster.iter().enumerate() {
        for (ti, t) in roster.iter().enumerate() {
            let mut sum = 0.0;
            let mut count = 0;
            for &eps in &epsilons {
                match relevant.iter().find(|r| {
                    r.victim == *v && r.transfer == *t && r.epsilon.to_bits() == eps.to_bits()
                }) {
                    Some(r) => {
                        sum += r.success_rate;
                        count += 1;
                    }
                    None => missing.push(format!("({v}, {t}, eps={eps})")),
                }
            }
            if count > 0 {
                cells[vi][ti] = sum / count as f64;
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::invalid_input(format!(
            "transfer matrix for `{attack_name}` is missing cells: {}",
            missing.join(", ")
        )));
    }
    let score = if roster.len() > 1 {
        let mut sum = 0.0;
        let mut count = 0;
        for vi in 0..roster.len() {
            for ti in 0..roster.len() {
                if vi != ti {
                    sum += cells[vi][ti];
                    count += 1;
                }
            }
        }
        Some(sum / count as f64)
    } else {
        None
    };
    Ok(TransferMatrix {
        victims: roster.clone(),
        transfers: roster,
        cells,
        transferability_score: score,
    })
}

/// Accuracy-vs-budget curve of one model under one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCurve {
    pub model: String,
    pub attack: String,
    /// (epsilon, accuracy = 1 - success rate), ascending in epsilon.
    pub points: Vec<(f32, f64)>,
    /// Largest increase between consecutive points (0 for a perfectly
    /// non-increasing curve); the monotonicity diagnostic.
    pub max_increase: f64,
}

pub fn sensitivity_curves(records: &[ResultRecord]) -> Vec<SensitivityCurve> {
    let keys: BTreeSet<(String, String)> = records
        .iter()
        .filter(|r| r.victim == r.transfer && r.defense == "none")
        .map(|r| (r.victim.clone(), r.attack.clone()))
        .collect();
    let mut out = Vec::new();
    for (model, attack) in keys {
        let mut points: Vec<(f32, f64)> = records
            .iter()
            .filter(|r| {
                r.victim == model && r.transfer == model && r.attack == attack
                    && r.defense == "none"
            })
            .map(|r| (r.epsilon, 1.0 - r.success_rate))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let max_increase = points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).max(0.0))
            .fold(0.0f64, f64::max);
        out.push(SensitivityCurve {
            model,
            attack,
            points,
            max_increase,
        });
    }
    out
}

/// One row of the gamma ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRow {
    pub gamma: f32,
    /// Budget-averaged success on the victims themselves.
    pub victim_success: f64,
    /// Budget-averaged off-diagonal transfer score.
    pub transfer_score: Option<f64>,
}

/// Repeats the grid with the base attack at each gamma and tabulates victim
/// success against transfer score.
pub fn gamma_ablation(
    ctx: &GridContext,
    base: &AttackConfig,
    gammas: &[f32],
    epsilons: &[f32],
    n_samples: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<GammaRow>> {
    if ctx.models.len() < 2 {
        return Err(Error::Config(
            "the gamma ablation needs at least 2 models in the roster".into(),
        ));
    }
    let mut rows = Vec::new();
    for &gamma in gammas {
        let name = format!("ablate_gamma_{gamma}");
        let cfg = AttackConfig {
            gamma,
            use_ae: gamma > 0.0,
            ..base.clone()
        };
        let grid = AttackGrid {
            attacks: vec![(name.clone(), cfg)],
            epsilons: epsilons.to_vec(),
            n_samples,
            seed,
            out_dir: out_dir.join(&name),
        };
        let records = run_attack_grid(ctx, &grid)?;
        let matrix = transfer_matrix(&records, &name)?;
        let k = matrix.victims.len();
        let victim_success =
            (0..k).map(|i| matrix.cells[i][i]).sum::<f64>() / k as f64;
        rows.push(GammaRow {
            gamma,
            victim_success,
            transfer_score: matrix.transferability_score,
        });
    }
    Ok(rows)
}

/// Mean symmetric Chamfer distance between AE reconstructions and their
/// test inputs.
pub fn ae_reconstruction_chamfer(g: &AEModel, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid_input("empty test set"));
    }
    let mut sum = 0.0;
    for (x, _) in &test.samples {
        let recon = ae_defense(g, x)?;
        sum += crate::geometry::chamfer(x, &recon, crate::geometry::ChamferMode::Symmetric) as f64;
    }
    Ok(sum / test.len() as f64)
}

/// Mean symmetric Chamfer distance over random test pairs with different
/// labels: the scale reference that AE reconstructions are compared to.
pub fn inter_class_chamfer_baseline(
    test: &LabeledDataset,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng as _;
    use rand::SeedableRng as _;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = test.len();
    if n < 2 || n_pairs == 0 {
        return Err(Error::invalid_input(
            "need at least 2 samples and 1 pair for the inter-class baseline",
        ));
    }
    let mut sum = 0.0;
    let mut drawn = 0;
    let mut guard = 0;
    while drawn < n_pairs {
        guard += 1;
        if guard > 1000 * n_pairs {
            return Err(Error::invalid_input(
                "could not draw inter-class pairs; are all labels equal?",
            ));
        }
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if test.samples[i].1 == test.samples[j].1 {
            continue;
        }
        sum += crate::geometry::chamfer(
            &test.samples[i].0,
            &test.samples[j].0,
            crate::geometry::ChamferMode::Symmetric,
        ) as f64;
        drawn += 1;
    }
    Ok(sum / n_pairs as f64)
}

/// Writes `results.csv` plus one success-vs-epsilon SVG per
/// (victim, transfer) pair with a line per attack (no defense).
pub fn emit_results(records: &[ResultRecord], out_dir: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid_input("no records to emit"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    save_records(&out_dir.join("results.csv"), &sorted)?;

    let pairs: BTreeSet<(String, String)> = sorted
        .iter()
        .filter(|r| r.defense == "none")
        .map(|r| (r.victim.clone(), r.transfer.clone()))
        .collect();
    for (victim, transfer) in pairs {
        let attacks: BTreeSet<String> = sorted
            .iter()
            .filter(|r| r.victim == victim && r.transfer == transfer && r.defense == "none")
            .map(|r| r.attack.clone())
            .collect();
        let mut series = Vec::new();
        for attack in attacks {
            let mut pts: Vec<(f32, f64)> = sorted
                .iter()
                .filter(|r| {
                    r.victim == victim && r.transfer == transfer && r.attack == attack
                        && r.defense == "none"
                })
                .map(|r| (r.epsilon, r.success_rate))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            series.push((attack, pts));
        }
        let title = format!("{victim} to {transfer}: success vs budget");
        let path = out_dir.join(format!("success_{victim}_to_{transfer}.svg"));
        write_svg_curves(&path, &title, "epsilon", "success rate", &series)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(attack: &str, victim: &str, transfer: &str, eps: f32, rate: f64) -> ResultRecord {
        ResultRecord {
            attack: attack.into(),
            victim: victim.into(),
            transfer: transfer.into(),
            defense: "none".into(),
            norm_type: "linf".into(),
            epsilon: eps,
            gamma: 0.25,
            kappa: 30.0,
            n_samples: 10,
            success_rate: rate,
            mean_linf: eps as f64,
            mean_l2: 0.5,
            mean_chamfer_sym: 0.01,
            seed: 1,
        }
    }

    /// Classifier with zero weights and a bias favoring `class`: constant
    /// logits, so it classifies exactly the samples of that class correctly
    /// and no gradient attack can ever flip it.
    fn constant_model(class: usize) -> crate::nn::ClassifierModel {
        use rand::SeedableRng as _;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut m =
            crate::nn::ClassifierModel::init(crate::nn::Arch::PointnetTiny, 8, &mut rng).unwrap();
        let names: Vec<String> = m.params.iter().map(|(k, _)| k.clone()).collect();
        for name in names {
            m.params.get_mut(&name).data_mut().fill(0.0);
        }
        m.params.get_mut("fc2.b").data_mut()[class] = 1.0;
        m
    }

    #[test]
    fn grid_emits_expected_record_counts_and_resumes() {
        let test_set =
            crate::dataset::generate_split(10, 16, 0.0, 3, crate::dataset::Split::Test).unwrap();
        let attack = AttackConfig {
            iterations: 2,
            n_restarts: 1,
            ..AttackConfig::baseline_hard_linf(0.0, 0)
        };

        // One model, one epsilon, 10 samples: one record, rate = successes/10.
        let ctx = GridContext {
            models: vec![("const0".into(), constant_model(0))],
            attack_ae: None,
            defense_ae: None,
            defenses: vec![],
            test_set: test_set.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        let grid = AttackGrid {
            attacks: vec![("base".into(), attack.clone())],
            epsilons: vec![0.1],
            n_samples: 10,
            seed: 5,
            out_dir: dir.path().to_path_buf(),
        };
        let records = run_attack_grid(&ctx, &grid).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].n_samples, 10);
        assert_eq!(records[0].success_rate, 0.0); // constant logits never flip

        // Rerun resumes from the stored cell and reproduces the records.
        let again = run_attack_grid(&ctx, &grid).unwrap();
        assert_eq!(again, records);

        // Two models x three epsilons: 2 victims x 2 transfers x 3 eps cells.
        let ctx2 = GridContext {
            models: vec![
                ("const0".into(), constant_model(0)),
                ("const1".into(), constant_model(1)),
            ],
            attack_ae: None,
            defense_ae: None,
            defenses: vec![],
            test_set,
        };
        let dir2 = tempfile::tempdir().unwrap();
        let grid2 = AttackGrid {
            attacks: vec![("base".into(), attack)],
            epsilons: vec![0.1, 0.2, 0.3],
            n_samples: 4,
            seed: 5,
            out_dir: dir2.path().to_path_buf(),
        };
        let records2 = run_attack_grid(&ctx2, &grid2).unwrap();
        assert_eq!(records2.len(), 2 * 2 * 3);
        assert!(records2.iter().all(|r| (0.0..=1.0).contains(&r.success_rate)));
    }

    #[test]
    fn cell_seed_is_stable_and_sensitive() {
        let a = cell_seed(1, "m1", "adv", 0.18, 3);
        assert_eq!(a, cell_seed(1, "m1", "adv", 0.18, 3));
        assert_ne!(a, cell_seed(2, "m1", "adv", 0.18, 3));
        assert_ne!(a, cell_seed(1, "m2", "adv", 0.18, 3));
        assert_ne!(a, cell_seed(1, "m1", "base", 0.18, 3));
        assert_ne!(a, cell_seed(1, "m1", "adv", 0.45, 3));
        assert_ne!(a, cell_seed(1, "m1", "adv", 0.18, 4));
    }

    #[test]
    fn transfer_matrix_score_and_coverage() {
        let records = vec![
            rec("adv", "a", "a", 0.1, 1.0),
            rec("adv", "a", "b", 0.1, 0.0),
            rec("adv", "b", "a", 0.1, 0.0),
            rec("adv", "b", "b", 0.1, 1.0),
        ];
        let m = transfer_matrix(&records, "adv").unwrap();
        assert_eq!(m.victims, vec!["a", "b"]);
        assert_eq!(m.transferability_score, Some(0.0));
        assert_eq!(m.cells[0][0], 1.0);

        let single = transfer_matrix(&records[..1], "adv").unwrap();
        assert_eq!(single.transferability_score, None);

        // Cells average over the epsilon grid.
        let mut two_eps = records.clone();
        for r in &records {
            let mut x = r.clone();
            x.epsilon = 0.2;
            x.success_rate = 0.5;
            two_eps.push(x);
        }
        let m2 = transfer_matrix(&two_eps, "adv").unwrap();
        assert!((m2.cells[0][0] - 0.75).abs() < 1e-12);
        assert!((m2.cells[0][1] - 0.25).abs() < 1e-12);

        // Missing coverage is reported.
        let partial = vec![
            rec("adv", "a", "a", 0.1, 1.0),
            rec("adv", "a", "b", 0.1, 0.0),
            rec("adv", "b", "b", 0.1, 1.0),
        ];
        let err = transfer_matrix(&partial, "adv").unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn transfer_score_is_off_diagonal_mean() {
        let records = vec![
            rec("adv", "a", "a", 0.1, 0.9),
            rec("adv", "a", "b", 0.1, 0.3),
            rec("adv", "b", "a", 0.1, 0.5),
            rec("adv", "b", "b", 0.1, 0.8),
        ];
        let m = transfer_matrix(&records, "adv").unwrap();
        let expected = (0.3 + 0.5) / 2.0;
        assert!((m.transferability_score.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_curves_accuracy_and_monotonicity() {
        let records = vec![
            rec("adv", "a", "a", 0.0, 0.0),
            rec("adv", "a", "a", 0.1, 0.6),
            rec("adv", "a", "a", 0.2, 0.5), // slight non-monotonicity
            rec("adv", "a", "b", 0.1, 0.2), // ignored: transfer cell
        ];
        let curves = sensitivity_curves(&records);
        assert_eq!(curves.len(), 1);
        let c = &curves[0];
        assert_eq!(c.points[0], (0.0, 1.0));
        assert_eq!(c.points[1], (0.1, 0.4));
        assert!((c.max_increase - 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation_catches_mistakes() {
        let mut cfg = ExperimentConfig {
            dataset: "d.pcds".into(),
            out_dir: "out".into(),
            seed: 0,
            n_samples: 10,
            epsilons: vec![0.1, 0.2],
            models: vec![ModelEntry {
                name: "a".into(),
                arch: "pointnet_tiny".into(),
                checkpoint: "a.pckp".into(),
            }],
            attack_ae: None,
            defense_ae: None,
            attacks: vec![],
            defenses: vec![],
        };
        assert!(cfg.validate().is_ok());
        cfg.epsilons = vec![0.2, 0.1];
        assert!(cfg.validate().is_err());
        cfg.epsilons = vec![0.1];
        cfg.models.push(cfg.models[0].clone());
        assert!(cfg.validate().is_err());
        cfg.models.pop();
        cfg.defenses = vec!["dup_net".into()];
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("unsupported"));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig {
            dataset: "data/shapes.pcds".into(),
            out_dir: "out".into(),
            seed: 7,
            n_samples: 20,
            epsilons: vec![0.18, 0.45],
            models: vec![ModelEntry {
                name: "tiny".into(),
                arch: "pointnet_tiny".into(),
                checkpoint: "tiny.pckp".into(),
            }],
            attack_ae: Some("ae.pckp".into()),
            defense_ae: None,
            attacks: vec![AttackEntry {
                name: "advpc".into(),
                constraint: "linf".into(),
                gamma: 0.25,
                kappa: 30.0,
                lr: 0.01,
                iterations: 200,
                restarts: 2,
            }],
            defenses: vec!["srs".into()],
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.attacks[0].gamma, 0.25);
        assert_eq!(back.epsilons, vec![0.18, 0.45]);
    }
}
