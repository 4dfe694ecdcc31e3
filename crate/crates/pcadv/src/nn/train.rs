//! Training loops for the classifiers (softmax cross-entropy) and the
//! auto-encoder (symmetric Chamfer reconstruction loss).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::PointCloud;

use super::adam::BundleAdam;
use super::ae::{ae_grad, AEModel};
use super::classifier::{classifier_grad, Arch, ClassifierModel};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop once the epoch training accuracy reaches this level (classifier).
    pub early_stop_accuracy: Option<f32>,
    /// Stop once the epoch mean reconstruction loss drops below this (AE).
    pub early_stop_loss: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 60,
            early_stop_accuracy: None,
            early_stop_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn ae_default() -> Self {
        Self {
            epochs: 120,
            ..Self::default()
        }
    }
}

/// Softmax cross-entropy: returns (loss, dLoss/dlogits).
pub(crate) fn cross_entropy_grad(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(exps[label] / sum).ln() as f32;
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let p = e / sum;
            (p - if i == label { 1.0 } else { 0.0 }) as f32
        })
        .collect();
    (loss, grad)
}

/// Symmetric Chamfer loss between `target` and `y`, with the gradient with
/// respect to `y`. Nearest-neighbor assignments are constants of the
/// subgradient.
pub(crate) fn chamfer_sym_grad(target: &PointCloud, y: &PointCloud) -> (f32, Vec<[f32; 3]>) {
    let tp = target.points();
    let yp = y.points();
    let nt = tp.len();
    let ny = yp.len();
    let mut grad = vec![[0.0f32; 3]; ny];
    let mut loss = 0.0f64;
    // Term 1: average over y of squared distance to nearest target point.
    for (j, q) in yp.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut bi = 0;
        for (i, p) in tp.iter().enumerate() {
            let d = sq(p, q);
            if d < best {
                best = d;
                bi = i;
            }
        }
        loss += best / ny as f64;
        let w = 2.0 / ny as f32;
        for a in 0..3 {
            grad[j][a] += w * (q[a] - tp[bi][a]);
        }
    }
    // Term 2: average over target of squared distance to nearest y point.
    for p in tp {
        let mut best = f64::INFINITY;
        let mut bj = 0;
        for (j, q) in yp.iter().enumerate() {
            let d = sq(p, q);
            if d < best {
                best = d;
                bj = j;
            }
        }
        loss += best / nt as f64;
        let w = 2.0 / nt as f32;
        for a in 0..3 {
            grad[bj][a] += w * (yp[bj][a] - p[a]);
        }
    }
    (loss as f32, grad)
}

fn sq(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let d = (a[i] - b[i]) as f64;
            d * d
        })
        .sum()
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Per-batch sample substitution used by adversarial training: receives the
/// current model and the batch, returns the (possibly modified) batch.
pub type BatchHook<'a> =
    &'a (dyn Fn(&ClassifierModel, Vec<(PointCloud, usize)>, u64) -> Result<Vec<(PointCloud, usize)>>
         + Sync);

/// Trains a classifier with softmax cross-entropy and Adam. Fully
/// deterministic given the seed.
pub fn train_classifier(
    arch: Arch,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ClassifierModel> {
    train_classifier_with_hook(arch, data, cfg, seed, None)
}

pub fn train_classifier_with_hook(
    arch: Arch,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<BatchHook<'_>>,
) -> Result<ClassifierModel> {
    if data.is_empty() {
        return Err(Error::invalid_input("training dataset is empty"));
    }
    if data.samples.iter().any(|(_, l)| *l >= data.n_classes) {
        return Err(Error::invalid_input("label out of range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ClassifierModel::init(arch, data.n_classes, &mut rng)?;
    let mut opt = BundleAdam::new(&model.params);

    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), &mut rng);
        let mut correct = 0usize;
        let mut batch_counter = 0u64;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch: Vec<(PointCloud, usize)> = chunk
                .iter()
                .map(|&i| data.samples[i].clone())
                .collect();
            if let Some(h) = hook {
                batch = h(&model, batch, (epoch as u64) << 32 | batch_counter)?;
            }
            batch_counter += 1;
            let per_sample: Vec<_> = batch
                .par_iter()
                .map(|(x, label)| -> Result<_> {
                    let mut loss = 0.0f32;
                    let (logits, _, grads) = classifier_grad(&model, x, |l| {
                        let (lv, dl) = cross_entropy_grad(l.values(), *label);
                        loss = lv;
                        dl
                    })?;
                    Ok((loss, logits.argmax() == *label, grads))
                })
                .collect::<Vec<_>>();
            let mut total = model.params.zeros_like();
            let scale = 1.0 / batch.len() as f32;
            for r in per_sample {
                let (_, hit, grads) = r?;
                if hit {
                    correct += 1;
                }
                total.add_scaled(&grads, scale);
            }
            opt.update(&mut model.params, &total, cfg.lr)?;
        }
        if let Some(thr) = cfg.early_stop_accuracy {
            let acc = correct as f32 / data.len() as f32;
            if acc >= thr {
                break;
            }
        }
    }
    Ok(model)
}

/// Trains the auto-encoder with the symmetric Chamfer loss.
pub fn train_ae(data: &LabeledDataset, latent_dim: usize, cfg: &TrainConfig, seed: u64) -> Result<AEModel> {
    if data.is_empty() {
        return Err(Error::invalid_input("training dataset is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = AEModel::init(latent_dim, data.n_points, &mut rng)?;
    let mut opt = BundleAdam::new(&model.params);

    for _epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), &mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let per_sample: Vec<_> = chunk
                .par_iter()
                .map(|&i| -> Result<_> {
                    let x = &data.samples[i].0;
                    let mut loss = 0.0f32;
                    let (_, _, grads) = ae_grad(&model, x, |recon| {
                        let (lv, drecon) = chamfer_sym_grad(x, recon);
                        loss = lv;
                        drecon
                    })?;
                    Ok((loss, grads))
                })
                .collect::<Vec<_>>();
            let mut total = model.params.zeros_like();
            let scale = 1.0 / chunk.len() as f32;
            for r in per_sample {
                let (loss, grads) = r?;
                loss_sum += loss as f64;
                total.add_scaled(&grads, scale);
            }
            opt.update(&mut model.params, &total, cfg.lr)?;
        }
        if let Some(thr) = cfg.early_stop_loss {
            if loss_sum / data.len() as f64 <= thr as f64 {
                break;
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;

    fn two_cluster_dataset(n: usize) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut samples = Vec::new();
        for label in 0..2usize {
            let center = if label == 0 { -0.5f32 } else { 0.5 };
            for _ in 0..n {
                let pts: Vec<[f32; 3]> = (0..16)
                    .map(|_| {
                        [
                            center + rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.1..0.1),
                        ]
                    })
                    .collect();
                samples.push((PointCloud::new(pts).unwrap(), label));
            }
        }
        LabeledDataset {
            samples,
            n_classes: 2,
            n_points: 16,
            split: Split::Train,
        }
    }

    #[test]
    fn separable_clusters_reach_full_train_accuracy() {
        let data = two_cluster_dataset(20);
        let cfg = TrainConfig {
            epochs: 20,
            early_stop_accuracy: Some(1.0),
            ..TrainConfig::default()
        };
        let m = train_classifier(Arch::PointnetTiny, &data, &cfg, 3).unwrap();
        let correct = data
            .samples
            .iter()
            .filter(|(x, l)| {
                super::super::classifier::forward_classifier(&m, x).unwrap().argmax() == *l
            })
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn training_is_deterministic() {
        let data = two_cluster_dataset(6);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train_classifier(Arch::PointnetTiny, &data, &cfg, 7).unwrap();
        let b = train_classifier(Arch::PointnetTiny, &data, &cfg, 7).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = LabeledDataset {
            samples: vec![],
            n_classes: 2,
            n_points: 8,
            split: Split::Train,
        };
        assert!(train_classifier(Arch::PointnetTiny, &data, &TrainConfig::default(), 0).is_err());
        assert!(train_ae(&data, 8, &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn ae_overfits_single_cloud() {
        let data = LabeledDataset {
            samples: vec![(crate::dataset::generate_shape(0, 32, 5, 0.0).unwrap(), 0)],
            n_classes: 1,
            n_points: 32,
            split: Split::Train,
        };
        let cfg = TrainConfig {
            epochs: 400,
            lr: 1e-3,
            batch_size: 1,
            early_stop_loss: Some(0.01),
            ..TrainConfig::default()
        };
        let ae = train_ae(&data, 16, &cfg, 9).unwrap();
        let recon = super::super::ae::forward_ae(&ae, &data.samples[0].0).unwrap();
        let (loss, _) = chamfer_sym_grad(&data.samples[0].0, &recon);
        assert!(loss < 0.05, "reconstruction chamfer {loss}");
    }

    #[test]
    fn ae_training_is_deterministic() {
        let data = two_cluster_dataset(4);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let a = train_ae(&data, 8, &cfg, 11).unwrap();
        let b = train_ae(&data, 8, &cfg, 11).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = vec![0.3f32, -1.2, 2.0, 0.1];
        let (_, g) = cross_entropy_grad(&logits, 2);
        let h = 1e-3f32;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp[i] += h;
            let mut lm = logits.clone();
            lm[i] -= h;
            let fd = (cross_entropy_grad(&lp, 2).0 - cross_entropy_grad(&lm, 2).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-3);
        }
    }
}
