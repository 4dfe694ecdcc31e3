//! Margin-loss adversarial attacks on point-cloud classifiers: the hard
//! norm-budget PGD attack, the soft penalty attack with a binary search over
//! the penalty weight, and the combined objective that also fools the
//! classifier on the auto-encoder reconstruction of the perturbed cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    chamfer, emd, emd_matching, norm_l2, norm_linf, project_l2, project_linf, ChamferMode,
    EMD_EXACT_CAP,
};
use crate::geometry::{PerturbationOf, PointCloudOf};
use crate::nn::{
    ae_grad, classifier_grad, forward_ae, forward_classifier, AEModel, AEModelOf, AdamState,
    ClassifierModel, ClassifierModelOf, LogitsOf,
};
use crate::scalar::Real;
use crate::{PointCloud, Perturbation};

/// Binary-search rounds over the soft penalty weight.
pub const SOFT_SEARCH_ROUNDS: usize = 5;
const LAMBDA_MIN: f64 = 1e-2;
const LAMBDA_MAX: f64 = 1e6;
/// Iterations between recomputations of the exact EMD matching in soft mode.
const EMD_MATCH_REFRESH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    /// Force the prediction to the given label.
    Targeted(usize),
    /// Force any prediction other than the true label.
    Untargeted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftDistance {
    L2,
    Chamfer,
    Emd,
}

impl SoftDistance {
    pub fn name(self) -> &'static str {
        match self {
            SoftDistance::L2 => "l2",
            SoftDistance::Chamfer => "chamfer",
            SoftDistance::Emd => "emd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// Hard cap on the largest absolute coordinate of the perturbation.
    HardLinf(f32),
    /// Hard cap on the Frobenius norm of the perturbation.
    HardL2(f32),
    /// Penalty `lambda * D(x, x')` added to the adversarial loss; `lambda`
    /// is the starting point of the binary search.
    Soft { lambda: f32, distance: SoftDistance },
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub constraint: Constraint,
    /// Weight of the reconstruction branch: 0 is the plain baseline attack,
    /// 1 attacks only the classification of the reconstruction.
    pub gamma: f32,
    /// Margin of the hinge loss.
    pub kappa: f32,
    pub lr: f32,
    pub iterations: usize,
    pub n_restarts: usize,
    pub seed: u64,
    /// Whether an auto-encoder participates; required when gamma > 0.
    pub use_ae: bool,
}

impl AttackConfig {
    /// Hard l-infinity attack with the reconstruction branch enabled
    /// (gamma = 0.25, kappa = 30, lr = 0.01, 200 iterations, 2 restarts).
    pub fn advpc_hard_linf(eps: f32, seed: u64) -> Self {
        Self {
            mode: AttackMode::Untargeted,
            constraint: Constraint::HardLinf(eps),
            gamma: 0.25,
            kappa: 30.0,
            lr: 0.01,
            iterations: 200,
            n_restarts: 2,
            seed,
            use_ae: true,
        }
    }

    /// Hard l-infinity baseline: same loop with the reconstruction branch
    /// disabled (gamma = 0).
    pub fn baseline_hard_linf(eps: f32, seed: u64) -> Self {
        Self {
            gamma: 0.0,
            use_ae: false,
            ..Self::advpc_hard_linf(eps, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.constraint {
            Constraint::HardLinf(e) | Constraint::HardL2(e) => {
                if !(e >= 0.0) {
                    return Err(Error::invalid_argument("attack budget must be non-negative"));
                }
            }
            Constraint::Soft { lambda, .. } => {
                if !(lambda >= 0.0) {
                    return Err(Error::invalid_argument("penalty weight must be non-negative"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid_argument("gamma must lie in [0, 1]"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid_argument("kappa must be non-negative"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid_argument("learning rate must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid_argument("iterations must be at least 1"));
        }
        if self.n_restarts == 0 {
            return Err(Error::invalid_argument("n_restarts must be at least 1"));
        }
        if self.gamma > 0.0 && !self.use_ae {
            return Err(Error::Config(
                "gamma > 0 requires the auto-encoder branch (use_ae)".into(),
            ));
        }
        Ok(())
    }
}

/// Perturbation norms recomputed from the final offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackNorms {
    pub linf: f32,
    pub l2: f32,
    pub chamfer_directed: f32,
    pub chamfer_symmetric: f32,
    /// Exact EMD; absent above the exact-solver size cap.
    pub emd: Option<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub delta: Perturbation,
    /// The classifier misclassifies x + delta per the attack mode.
    pub success_victim: bool,
    /// The classifier misclassifies the reconstruction of x + delta.
    pub success_ae: bool,
    pub predicted_label: usize,
    /// Total optimizer iterations elapsed (across restarts) when success was
    /// first observed; 0 means the starting point already succeeded.
    pub iterations_to_first_success: Option<usize>,
    pub norms: AttackNorms,
}

/// Hinge on the gap between the target logit and the best other logit:
/// `max(max_{i != t} z_i - z_t + kappa, 0)`.
pub fn margin_loss<R: Real>(z: &LogitsOf<R>, t_prime: usize, kappa: R) -> Result<R> {
    if t_prime >= z.len() {
        return Err(Error::invalid_argument(format!(
            "target label {t_prime} out of range for {} classes",
            z.len()
        )));
    }
    if !(kappa >= R::zero()) {
        return Err(Error::invalid_argument("kappa must be non-negative"));
    }
    Ok(margin_grad(z.values(), t_prime, kappa).0)
}

/// Loss value and its gradient with respect to the logits. The subgradient
/// at the hinge point is zero.
fn margin_grad<R: Real>(z: &[R], t: usize, kappa: R) -> (R, Vec<R>) {
    let mut best = usize::MAX;
    for (i, &v) in z.iter().enumerate() {
        if i != t && (best == usize::MAX || v > z[best]) {
            best = i;
        }
    }
    let mut grad = vec![R::zero(); z.len()];
    if best == usize::MAX {
        return (kappa.max(R::zero()), grad); // single-class edge case
    }
    let raw = z[best] - z[t] + kappa;
    if raw > R::zero() {
        grad[best] = R::one();
        grad[t] = -R::one();
        (raw, grad)
    } else {
        (R::zero(), grad)
    }
}

/// Most confident wrong label: argmax over all labels except the true one,
/// ties toward the lowest index.
pub fn select_untargeted_target<R: Real>(z: &LogitsOf<R>, true_label: usize) -> Result<usize> {
    if z.len() < 2 {
        return Err(Error::invalid_argument(
            "untargeted target selection needs at least 2 classes",
        ));
    }
    if true_label >= z.len() {
        return Err(Error::invalid_argument(format!(
            "true label {true_label} out of range for {} classes",
            z.len()
        )));
    }
    let mut best = usize::MAX;
    for (i, &v) in z.values().iter().enumerate() {
        if i != true_label && (best == usize::MAX || v > z.values()[best]) {
            best = i;
        }
    }
    Ok(best)
}

fn target_for<R: Real>(mode: AttackMode, z: &LogitsOf<R>, true_label: usize) -> usize {
    match mode {
        AttackMode::Targeted(t) => t,
        // Callers validate K >= 2 and the label range up front.
        AttackMode::Untargeted => select_untargeted_target(z, true_label).unwrap_or(0),
    }
}

fn check_labels<R: Real>(f: &ClassifierModelOf<R>, true_label: usize, mode: AttackMode) -> Result<()> {
    if f.k_classes < 2 {
        return Err(Error::invalid_argument("attack needs at least 2 classes"));
    }
    if true_label >= f.k_classes {
        return Err(Error::invalid_argument(format!(
            "true label {true_label} out of range for {} classes",
            f.k_classes
        )));
    }
    if let AttackMode::Targeted(t) = mode {
        if t >= f.k_classes {
            return Err(Error::invalid_argument(format!(
                "target label {t} out of range for {} classes",
                f.k_classes
            )));
        }
    }
    Ok(())
}

fn mode_success<R: Real>(z: &LogitsOf<R>, true_label: usize, mode: AttackMode) -> bool {
    match mode {
        AttackMode::Untargeted => z.argmax() != true_label,
        AttackMode::Targeted(t) => z.argmax() == t,
    }
}

/// Scalar-generic core of [`advpc_loss`]; the f64 instantiation backs
/// high-precision gradient oracles.
pub fn advpc_loss_of<R: Real>(
    f: &ClassifierModelOf<R>,
    g: Option<&AEModelOf<R>>,
    x: &PointCloudOf<R>,
    d: &PerturbationOf<R>,
    mode: AttackMode,
    gamma: R,
    kappa: R,
    true_label: usize,
) -> Result<(R, PerturbationOf<R>)> {
    check_labels(f, true_label, mode)?;
    if gamma > R::zero() && g.is_none() {
        return Err(Error::Config(
            "gamma > 0 requires an auto-encoder model".into(),
        ));
    }
    let xp = x.offset(d)?;
    let n = x.len();
    let mut total = R::zero();
    let mut grad = vec![[R::zero(); 3]; n];

    if gamma < R::one() {
        let mut branch = R::zero();
        let (_, din, _) = classifier_grad(f, &xp, |l| {
            let t = target_for(mode, l, true_label);
            let (lv, mut dz) = margin_grad(l.values(), t, kappa);
            branch = lv;
            for v in &mut dz {
                *v *= R::one() - gamma;
            }
            dz
        })?;
        total += (R::one() - gamma) * branch;
        for (a, b) in grad.iter_mut().zip(din.deltas()) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
    }

    if gamma > R::zero() {
        let ae = g.unwrap();
        let mut branch = R::zero();
        let mut inner_err: Option<Error> = None;
        let (_, din, _) = ae_grad(ae, &xp, |recon| {
            match classifier_grad(f, recon, |l| {
                let t = target_for(mode, l, true_label);
                let (lv, mut dz) = margin_grad(l.values(), t, kappa);
                branch = lv;
                for v in &mut dz {
                    *v *= gamma;
                }
                dz
            }) {
                Ok((_, drecon, _)) => drecon.deltas().to_vec(),
                Err(e) => {
                    inner_err = Some(e);
                    vec![[R::zero(); 3]; recon.len()]
                }
            }
        })?;
        if let Some(e) = inner_err {
            return Err(e);
        }
        total += gamma * branch;
        for (a, b) in grad.iter_mut().zip(din.deltas()) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
    }

    Ok((total, PerturbationOf::new(grad)?))
}

/// The combined adversarial loss
/// `(1 - gamma) f_{t'}(F(x + d)) + gamma f_{t''}(F(G(x + d)))`
/// and its gradient with respect to the perturbation. In untargeted mode the
/// targets `t'` and `t''` are re-selected from the respective current logits
/// on every call; in targeted mode `t'' = t'`. With gamma = 0 the
/// auto-encoder is never evaluated.
pub fn advpc_loss(
    f: &ClassifierModel,
    g: Option<&AEModel>,
    x: &PointCloud,
    d: &Perturbation,
    cfg: &AttackConfig,
    true_label: usize,
) -> Result<(f32, Perturbation)> {
    cfg.validate()?;
    advpc_loss_of(f, g, x, d, cfg.mode, cfg.gamma, cfg.kappa, true_label)
}

fn flat_of(d: &Perturbation) -> Vec<f32> {
    let mut out = Vec::with_capacity(d.len() * 3);
    for p in d.deltas() {
        out.extend_from_slice(p);
    }
    out
}

fn pert_of(flat: &[f32]) -> Result<Perturbation> {
    Perturbation::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn project_hard(flat: &[f32], constraint: Constraint) -> Result<Vec<f32>> {
    let d = pert_of(flat)?;
    let projected = match constraint {
        Constraint::HardLinf(e) => project_linf(&d, e)?,
        Constraint::HardL2(e) => project_l2(&d, e)?,
        Constraint::Soft { .. } => {
            return Err(Error::invalid_argument("soft constraint has no projection"))
        }
    };
    Ok(flat_of(&projected))
}

fn constraint_norm(d: &Perturbation, constraint: Constraint) -> f32 {
    match constraint {
        Constraint::HardLinf(_) => norm_linf(d),
        Constraint::HardL2(_) => norm_l2(d),
        Constraint::Soft { .. } => norm_l2(d),
    }
}

fn finalize(
    f: &ClassifierModel,
    g: Option<&AEModel>,
    x: &PointCloud,
    delta: Perturbation,
    true_label: usize,
    cfg: &AttackConfig,
    iterations_to_first_success: Option<usize>,
) -> Result<AttackOutcome> {
    let xp = x.offset(&delta)?;
    let logits = forward_classifier(f, &xp)?;
    let success_victim = mode_success(&logits, true_label, cfg.mode);
    let success_ae = match (cfg.use_ae, g) {
        (true, Some(ae)) => {
            let recon = forward_ae(ae, &xp)?;
            mode_success(&forward_classifier(f, &recon)?, true_label, cfg.mode)
        }
        _ => false,
    };
    let emd_value = if x.len() <= EMD_EXACT_CAP {
        Some(emd(x, &xp)?)
    } else {
        None
    };
    Ok(AttackOutcome {
        predicted_label: logits.argmax(),
        success_victim,
        success_ae,
        iterations_to_first_success,
        norms: AttackNorms {
            linf: norm_linf(&delta),
            l2: norm_l2(&delta),
            chamfer_directed: chamfer(x, &xp, ChamferMode::Directed),
            chamfer_symmetric: chamfer(x, &xp, ChamferMode::Symmetric),
            emd: emd_value,
        },
        delta,
    })
}

/// Projected-gradient attack under a hard norm budget. Each restart starts
/// from its own initial perturbation with fresh optimizer state and runs
/// `iterations` steps of {gradient, Adam update, projection}; every iterate
/// is scored, and the best success (smallest constraint norm) wins.
pub fn pgd_attack(
    f: &ClassifierModel,
    g: Option<&AEModel>,
    x: &PointCloud,
    true_label: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    check_labels(f, true_label, cfg.mode)?;
    let eps = match cfg.constraint {
        Constraint::HardLinf(e) | Constraint::HardL2(e) => e,
        Constraint::Soft { .. } => {
            return Err(Error::invalid_argument(
                "pgd_attack requires a hard constraint; use soft_attack",
            ))
        }
    };
    if cfg.gamma > 0.0 && g.is_none() {
        return Err(Error::Config(
            "gamma > 0 requires an auto-encoder model".into(),
        ));
    }
    let n = x.len();
    if eps == 0.0 {
        let logits = forward_classifier(f, x)?;
        let already = mode_success(&logits, true_label, cfg.mode);
        return finalize(
            f,
            g,
            x,
            Perturbation::zeros(n),
            true_label,
            cfg,
            if already { Some(0) } else { None },
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<f32>, f32)> = None; // (delta, constraint norm), successes only
    let mut last = vec![0.0f32; n * 3];
    let mut first_success: Option<usize> = None;

    for r in 0..cfg.n_restarts {
        let mut delta = vec![0.0f32; n * 3];
        if r > 0 {
            let a = eps.min(0.05) / 2.0;
            for v in &mut delta {
                *v = rng.gen_range(-a..=a);
            }
            delta = project_hard(&delta, cfg.constraint)?;
        }
        let mut consider =
            |delta: &[f32], iters_done: usize, best: &mut Option<(Vec<f32>, f32)>| -> Result<()> {
                let d = pert_of(delta)?;
                let logits = forward_classifier(f, &x.offset(&d)?)?;
                if mode_success(&logits, true_label, cfg.mode) {
                    if first_success.is_none() {
                        first_success = Some(iters_done);
                    }
                    let norm = constraint_norm(&d, cfg.constraint);
                    if best.as_ref().map_or(true, |(_, bn)| norm < *bn) {
                        *best = Some((delta.to_vec(), norm));
                    }
                }
                Ok(())
            };
        consider(&delta, r * cfg.iterations, &mut best)?;
        let mut adam = AdamState::new(n * 3);
        for t in 1..=cfg.iterations {
            let d = pert_of(&delta)?;
            let (_, grad) = advpc_loss(f, g, x, &d, cfg, true_label)
                .map_err(|e| e.with_attack_context(r, t))?;
            adam.update(&mut delta, &flat_of(&grad), cfg.lr)?;
            delta = project_hard(&delta, cfg.constraint)?;
            consider(&delta, r * cfg.iterations + t, &mut best)?;
        }
        last = delta;
    }

    let chosen = best.map(|(d, _)| d).unwrap_or(last);
    finalize(f, g, x, pert_of(&chosen)?, true_label, cfg, first_success)
}

/// Value and gradient (with respect to the perturbed points) of the soft
/// distance penalty.
fn soft_distance_grad(
    dist: SoftDistance,
    x: &PointCloud,
    xp: &PointCloud,
    matching: Option<&[usize]>,
) -> (f64, Vec<[f32; 3]>) {
    let n = x.len();
    let mut grad = vec![[0.0f32; 3]; n];
    match dist {
        SoftDistance::L2 => {
            let mut s = 0.0f64;
            for (p, q) in x.points().iter().zip(xp.points()) {
                for c in 0..3 {
                    let d = (q[c] - p[c]) as f64;
                    s += d * d;
                }
            }
            let norm = s.sqrt();
            if norm > 0.0 {
                for (gr, (p, q)) in grad.iter_mut().zip(x.points().iter().zip(xp.points())) {
                    for c in 0..3 {
                        gr[c] = (((q[c] - p[c]) as f64) / norm) as f32;
                    }
                }
            }
            (norm, grad)
        }
        SoftDistance::Chamfer => {
            // Directed form: average over perturbed points of the squared
            // distance to the nearest clean point.
            let mut total = 0.0f64;
            let w = 2.0 / n as f64;
            for (j, q) in xp.points().iter().enumerate() {
                let mut best = f64::INFINITY;
                let mut bi = 0;
                for (i, p) in x.points().iter().enumerate() {
                    let mut d = 0.0f64;
                    for c in 0..3 {
                        let v = (q[c] - p[c]) as f64;
                        d += v * v;
                    }
                    if d < best {
                        best = d;
                        bi = i;
                    }
                }
                total += best;
                let p = x.points()[bi];
                for c in 0..3 {
                    grad[j][c] = (w * ((q[c] - p[c]) as f64)) as f32;
                }
            }
            (total / n as f64, grad)
        }
        SoftDistance::Emd => {
            // Un-squared euclidean cost through the supplied fixed matching.
            let m = matching.expect("emd distance requires a matching");
            let mut total = 0.0f64;
            for (i, p) in x.points().iter().enumerate() {
                let q = xp.points()[m[i]];
                let mut d = 0.0f64;
                for c in 0..3 {
                    let v = (q[c] - p[c]) as f64;
                    d += v * v;
                }
                let dist = d.sqrt();
                total += dist;
                if dist > 1e-12 {
                    for c in 0..3 {
                        grad[m[i]][c] = (((q[c] - p[c]) as f64) / dist) as f32;
                    }
                }
            }
            (total, grad)
        }
    }
}

/// Soft-penalty attack: minimizes `advpc_loss + lambda * D(x, x')` without a
/// norm projection, binary-searching `lambda` over [`SOFT_SEARCH_ROUNDS`]
/// rounds — raised after a successful round (seeking smaller distortion),
/// lowered after a failed one, bisected geometrically once bracketed.
/// Returns the successful perturbation with the smallest recorded distance,
/// or the best-effort final perturbation with the success flags false.
pub fn soft_attack(
    f: &ClassifierModel,
    g: Option<&AEModel>,
    x: &PointCloud,
    true_label: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    check_labels(f, true_label, cfg.mode)?;
    let (lambda0, dist) = match cfg.constraint {
        Constraint::Soft { lambda, distance } => (lambda as f64, distance),
        _ => {
            return Err(Error::invalid_argument(
                "soft_attack requires a soft constraint; use pgd_attack",
            ))
        }
    };
    if cfg.gamma > 0.0 && g.is_none() {
        return Err(Error::Config(
            "gamma > 0 requires an auto-encoder model".into(),
        ));
    }

    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lambda = lambda0;
    let mut lambda_success: Option<f64> = None; // largest lambda that succeeded
    let mut lambda_fail: Option<f64> = None; // smallest lambda that failed
    let mut best: Option<(Vec<f32>, f64)> = None; // (delta, distance), successes only
    let mut last = vec![0.0f32; n * 3];
    let mut first_success: Option<usize> = None;
    let mut iters_done = 0usize;

    for round in 0..SOFT_SEARCH_ROUNDS {
        let mut round_success = false;
        for r in 0..cfg.n_restarts {
            let mut delta = vec![0.0f32; n * 3];
            if r > 0 || round > 0 {
                for v in &mut delta {
                    *v = rng.gen_range(-0.01..=0.01);
                }
            }
            let mut matching: Option<Vec<usize>> = None;
            let mut consider = |delta: &[f32],
                                iters_done: usize,
                                best: &mut Option<(Vec<f32>, f64)>,
                                round_success: &mut bool|
             -> Result<()> {
                let d = pert_of(delta)?;
                let xp = x.offset(&d)?;
                let logits = forward_classifier(f, &xp)?;
                if mode_success(&logits, true_label, cfg.mode) {
                    *round_success = true;
                    if first_success.is_none() {
                        first_success = Some(iters_done);
                    }
                    let value = match dist {
                        SoftDistance::L2 => norm_l2(&d) as f64,
                        SoftDistance::Chamfer => {
                            chamfer(x, &xp, ChamferMode::Directed) as f64
                        }
                        SoftDistance::Emd => {
                            let m = emd_matching(x, &xp)?;
                            soft_distance_grad(dist, x, &xp, Some(&m)).0
                        }
                    };
                    if best.as_ref().map_or(true, |(_, bv)| value < *bv) {
                        *best = Some((delta.to_vec(), value));
                    }
                }
                Ok(())
            };
            consider(&delta, iters_done, &mut best, &mut round_success)?;
            let mut adam = AdamState::new(n * 3);
            for t in 1..=cfg.iterations {
                let d = pert_of(&delta)?;
                let xp = x.offset(&d)?;
                if dist == SoftDistance::Emd && (t - 1) % EMD_MATCH_REFRESH == 0 {
                    matching = Some(emd_matching(x, &xp)?);
                }
                let (_, adv_grad) = advpc_loss(f, g, x, &d, cfg, true_label)
                    .map_err(|e| e.with_attack_context(r, t))?;
                let (_, dist_grad) = soft_distance_grad(dist, x, &xp, matching.as_deref());
                let mut grad = flat_of(&adv_grad);
                for (i, dg) in dist_grad.iter().enumerate() {
                    for c in 0..3 {
                        grad[i * 3 + c] += (lambda * dg[c] as f64) as f32;
                    }
                }
                adam.update(&mut delta, &grad, cfg.lr)?;
                iters_done += 1;
                consider(&delta, iters_done, &mut best, &mut round_success)?;
            }
            last = delta;
        }

        if round + 1 == SOFT_SEARCH_ROUNDS {
            break;
        }
        if round_success {
            lambda_success = Some(lambda_success.map_or(lambda, |v| v.max(lambda)));
        } else {
            lambda_fail = Some(lambda_fail.map_or(lambda, |v| v.min(lambda)));
        }
        lambda = match (lambda_success, lambda_fail) {
            (Some(ls), Some(lf)) if ls < lf => (ls * lf).sqrt(),
            _ if round_success => (lambda * 10.0).clamp(LAMBDA_MIN, LAMBDA_MAX),
            _ => (lambda / 10.0).clamp(LAMBDA_MIN, LAMBDA_MAX),
        };
        if lambda0 == 0.0 && lambda_fail.is_none() {
            lambda = 0.0; // an explicit zero penalty stays zero while it keeps working
        }
    }

    let chosen = best.map(|(d, _)| d).unwrap_or(last);
    finalize(f, g, x, pert_of(&chosen)?, true_label, cfg, first_success)
}

/// Re-applies the stored perturbation and re-evaluates the success predicate
/// against an arbitrary classifier — the victim itself or a transfer model.
pub fn evaluate_attack(
    f_eval: &ClassifierModel,
    x: &PointCloud,
    outcome: &AttackOutcome,
    true_label: usize,
    mode: AttackMode,
) -> Result<bool> {
    let xp = x.offset(&outcome.delta)?;
    let logits = forward_classifier(f_eval, &xp)?;
    Ok(mode_success(&logits, true_label, mode))
}
