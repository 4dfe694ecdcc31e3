//! Input-transformation and training-time defenses: statistical outlier
//! removal, simple random sampling, auto-encoder reconstruction, and
//! adversarial training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::{pgd_attack, AttackConfig, Constraint};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{
    forward_ae, train_classifier_with_hook, AEModel, Arch, ClassifierModel, TrainConfig,
};
use crate::PointCloud;

/// Default neighborhood size for statistical outlier removal.
pub const SOR_DEFAULT_K: usize = 2;
/// Default standard-deviation multiplier for statistical outlier removal.
pub const SOR_DEFAULT_ALPHA: f32 = 1.1;
/// Default drop rate for simple random sampling.
pub const SRS_DEFAULT_DROP: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum DefenseKind {
    Sor { k: usize, alpha: f32 },
    Srs { drop_rate: f32 },
    AeReconstruct,
    AdversarialTraining { mix_fraction: f32 },
    /// Reserved name; applying it reports an unsupported-configuration error.
    DupNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// Used by simple random sampling only.
    pub seed: u64,
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DefenseKind::Sor { k, alpha } => {
                if k == 0 {
                    return Err(Error::invalid_argument("sor k must be at least 1"));
                }
                if !(alpha >= 0.0) {
                    return Err(Error::invalid_argument("sor alpha must be non-negative"));
                }
            }
            DefenseKind::Srs { drop_rate } => {
                if !(0.0..1.0).contains(&drop_rate) {
                    return Err(Error::invalid_argument("srs drop_rate must lie in [0, 1)"));
                }
            }
            DefenseKind::AdversarialTraining { mix_fraction } => {
                if !(mix_fraction > 0.0 && mix_fraction <= 1.0) {
                    return Err(Error::invalid_argument("mix_fraction must lie in (0, 1]"));
                }
            }
            DefenseKind::AeReconstruct | DefenseKind::DupNet => {}
        }
        Ok(())
    }
}

/// Statistical outlier removal: drops points whose mean distance to their k
/// nearest neighbors exceeds mu + alpha * sigma over the per-point means.
/// At least one point (the lowest-mean one) is always retained.
pub fn sor_defense(x: &PointCloud, k: usize, alpha: f32) -> Result<PointCloud> {
    let n = x.len();
    if k >= n {
        return Err(Error::invalid_argument(format!(
            "sor requires k < N, got k={k}, N={n}"
        )));
    }
    if k == 0 {
        return Err(Error::invalid_argument("sor k must be at least 1"));
    }
    let neighbors = crate::geometry::knn_indices(x, k)?;
    let pts = x.points();
    let means: Vec<f64> = neighbors
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            nbrs.iter()
                .map(|&j| {
                    (0..3)
                        .map(|c| {
                            let d = (pts[i][c] - pts[j][c]) as f64;
                            d * d
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / k as f64
        })
        .collect();
    let mu = means.iter().sum::<f64>() / n as f64;
    let var = means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / n as f64;
    let cutoff = mu + alpha as f64 * var.sqrt();
    let mut kept: Vec<[f32; 3]> = pts
        .iter()
        .zip(&means)
        .filter(|(_, &m)| m <= cutoff)
        .map(|(p, _)| *p)
        .collect();
    if kept.is_empty() {
        let best = means
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        kept.push(pts[best]);
    }
    PointCloud::new(kept)
}

/// Simple random sampling: retains exactly ceil(N * (1 - drop_rate)) points
/// chosen uniformly without replacement, in their original order.
pub fn srs_defense(x: &PointCloud, drop_rate: f32, seed: u64) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::invalid_argument("srs drop_rate must lie in [0, 1)"));
    }
    let n = x.len();
    let keep = ((n as f64) * (1.0 - drop_rate as f64)).ceil() as usize;
    if keep >= n {
        return Ok(x.clone());
    }
    // Fisher-Yates selection of `keep` indices, then restore input order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..keep {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx[..keep].to_vec();
    chosen.sort_unstable();
    PointCloud::new(chosen.iter().map(|&i| x.points()[i]).collect())
}

/// Auto-encoder reconstruction defense. The defending AE must be a
/// separately trained instance (different seed) from any AE used inside the
/// attack objective.
pub fn ae_defense(g: &AEModel, x: &PointCloud) -> Result<PointCloud> {
    forward_ae(g, x)
}

/// Trains a hardened classifier: each epoch, a `mix_fraction` of every
/// batch's samples is replaced by attacks generated against the current
/// model snapshot with the supplied hard-constraint preset.
pub fn adversarial_training(
    arch: Arch,
    data: &LabeledDataset,
    attack_preset: &AttackConfig,
    mix_fraction: f32,
    hyper: &TrainConfig,
    seed: u64,
) -> Result<ClassifierModel> {
    if !(0.0..=1.0).contains(&mix_fraction) {
        return Err(Error::invalid_argument("mix_fraction must lie in [0, 1]"));
    }
    match attack_preset.constraint {
        Constraint::HardLinf(_) | Constraint::HardL2(_) => {}
        Constraint::Soft { .. } => {
            return Err(Error::Config(
                "adversarial training requires a hard-constraint attack preset".into(),
            ))
        }
    }
    if mix_fraction == 0.0 {
        return crate::nn::train_classifier(arch, data, hyper, seed);
    }
    let hook = move |model: &ClassifierModel,
                     mut batch: Vec<(PointCloud, usize)>,
                     batch_id: u64|
          -> Result<Vec<(PointCloud, usize)>> {
        let n_attack = ((batch.len() as f64) * mix_fraction as f64).ceil() as usize;
        for (i, sample) in batch.iter_mut().enumerate().take(n_attack) {
            let mut cfg = attack_preset.clone();
            cfg.seed = attack_preset
                .seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(batch_id)
                .wrapping_add(i as u64);
            let out = pgd_attack(model, None, &sample.0, sample.1, &cfg)?;
            sample.0 = sample.0.offset(&out.delta)?;
        }
        Ok(batch)
    };
    train_classifier_with_hook(arch, data, hyper, seed, Some(&hook))
}

/// Cheap baseline attack preset used during adversarial training
/// (50 iterations, single restart, gamma = 0).
pub fn adversarial_training_preset(eps: f32, seed: u64) -> AttackConfig {
    AttackConfig {
        iterations: 50,
        n_restarts: 1,
        ..AttackConfig::baseline_hard_linf(eps, seed)
    }
}
