//! Classifier families: per-point shared MLPs with a feature max pooling
//! layer, and an edge-convolution variant whose neighborhoods are recomputed
//! from the current coordinates on every forward pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{knn_indices, PerturbationOf, PointCloudOf};
use crate::scalar::Real;
use crate::tensor::{TensorBundleOf, TensorOf};

use super::{
    check_finite, glorot_bound, linear_backward, linear_forward, maxpool_rows,
    maxpool_rows_backward, relu_backward, relu_inplace,
};

/// Default neighborhood size of the edge-convolution family.
pub const EDGECONV_KNN_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    PointnetTiny,
    PointnetWide,
    EdgeconvLite,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::PointnetTiny => "pointnet_tiny",
            Arch::PointnetWide => "pointnet_wide",
            Arch::EdgeconvLite => "edgeconv_lite",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pointnet_tiny" => Ok(Arch::PointnetTiny),
            "pointnet_wide" => Ok(Arch::PointnetWide),
            "edgeconv_lite" => Ok(Arch::EdgeconvLite),
            other => Err(Error::invalid_argument(format!("unknown architecture `{other}`"))),
        }
    }

    /// (conv widths, head hidden width). Edgeconv's first width is the edge
    /// layer output.
    fn widths(self) -> (Vec<usize>, usize) {
        match self {
            Arch::PointnetTiny => (vec![32, 64, 128], 64),
            Arch::PointnetWide => (vec![64, 128, 256], 128),
            Arch::EdgeconvLite => (vec![64, 128], 64),
        }
    }
}

/// Classifier scores before softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsOf<R: Real> {
    values: Vec<R>,
}

/// Working-precision logits.
pub type Logits = LogitsOf<f32>;

impl<R: Real> LogitsOf<R> {
    pub fn new(values: Vec<R>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest score; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierModelOf<R: Real> {
    pub arch: Arch,
    pub k_classes: usize,
    /// Neighborhood size; only meaningful for the edgeconv family.
    pub knn_k: usize,
    pub params: TensorBundleOf<R>,
}

/// Working-precision classifier.
pub type ClassifierModel = ClassifierModelOf<f32>;

impl<R: Real> ClassifierModelOf<R> {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn init(arch: Arch, k_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if k_classes < 2 {
            return Err(Error::invalid_argument("k_classes must be at least 2"));
        }
        let (convs, head) = arch.widths();
        let mut params = TensorBundleOf::new();
        let mut add_layer = |name: &str, din: usize, dout: usize, rng: &mut dyn rand::RngCore| {
            let bound = glorot_bound(din, dout);
            let data = (0..din * dout)
                .map(|_| R::of_f64(rng.gen_range(-bound..bound)))
                .collect();
            params.insert(format!("{name}.w"), TensorOf::from_vec(&[din, dout], data).unwrap());
            params.insert(format!("{name}.b"), TensorOf::zeros(&[dout]));
        };
        match arch {
            Arch::PointnetTiny | Arch::PointnetWide => {
                let mut din = 3;
                for (i, &w) in convs.iter().enumerate() {
                    add_layer(&format!("conv{}", i + 1), din, w, rng);
                    din = w;
                }
            }
            Arch::EdgeconvLite => {
                add_layer("edge", 6, convs[0], rng);
                add_layer("conv2", convs[0], convs[1], rng);
            }
        }
        let feat = *convs.last().unwrap();
        add_layer("fc1", feat, head, rng);
        add_layer("fc2", head, k_classes, rng);
        Ok(Self {
            arch,
            k_classes,
            knn_k: EDGECONV_KNN_K,
            params,
        })
    }

    pub fn cast<S: Real>(&self) -> ClassifierModelOf<S> {
        ClassifierModelOf {
            arch: self.arch,
            k_classes: self.k_classes,
            knn_k: self.knn_k,
            params: self.params.cast(),
        }
    }
}

fn flatten<R: Real>(x: &PointCloudOf<R>) -> Vec<R> {
    let mut out = Vec::with_capacity(x.len() * 3);
    for p in x.points() {
        out.extend_from_slice(p);
    }
    out
}

struct PointnetCache<R: Real> {
    x: Vec<R>,
    convs: Vec<Vec<R>>, // post-relu activations per conv layer
    pool_arg: Vec<usize>,
    pooled: Vec<R>,
    f1: Vec<R>,
}

struct EdgeconvCache<R: Real> {
    neighbors: Vec<Vec<usize>>,
    edge_in: Vec<R>,      // (n*k, 6)
    edge_post: Vec<R>,    // (n*k, c1), post-relu
    edge_arg: Vec<usize>, // (n, c1): winning neighbor slot per channel
    h1: Vec<R>,           // (n, c1)
    h2: Vec<R>,           // (n, c2), post-relu
    pool_arg: Vec<usize>,
    pooled: Vec<R>,
    f1: Vec<R>,
}

enum Cache<R: Real> {
    Pointnet(PointnetCache<R>),
    Edgeconv(EdgeconvCache<R>),
}

fn forward_with_cache<R: Real>(
    m: &ClassifierModelOf<R>,
    x: &PointCloudOf<R>,
) -> Result<(LogitsOf<R>, Cache<R>)> {
    let n = x.len();
    match m.arch {
        Arch::PointnetTiny | Arch::PointnetWide => {
            let xf = flatten(x);
            let (conv_widths, _) = m.arch.widths();
            let mut convs = Vec::with_capacity(conv_widths.len());
            let mut cur = xf.clone();
            for i in 0..conv_widths.len() {
                let name = format!("conv{}", i + 1);
                let mut y = linear_forward(
                    &cur,
                    n,
                    m.params.get(&format!("{name}.w")),
                    m.params.get(&format!("{name}.b")),
                );
                relu_inplace(&mut y);
                check_finite(&name, &y)?;
                convs.push(y);
                cur = convs.last().unwrap().clone();
            }
            let feat = *conv_widths.last().unwrap();
            let (pooled, pool_arg) = maxpool_rows(&cur, n, feat);
            let mut f1 = linear_forward(&pooled, 1, m.params.get("fc1.w"), m.params.get("fc1.b"));
            relu_inplace(&mut f1);
            check_finite("fc1", &f1)?;
            let logits = linear_forward(&f1, 1, m.params.get("fc2.w"), m.params.get("fc2.b"));
            check_finite("fc2", &logits)?;
            Ok((
                LogitsOf::new(logits),
                Cache::Pointnet(PointnetCache {
                    x: xf,
                    convs,
                    pool_arg,
                    pooled,
                    f1,
                }),
            ))
        }
        Arch::EdgeconvLite => {
            let k = m.knn_k;
            if n <= k {
                return Err(Error::invalid_input(format!(
                    "edgeconv requires N > knn_k, got N={n}, k={k}"
                )));
            }
            let neighbors = knn_indices(x, k)?;
            let pts = x.points();
            let mut edge_in = Vec::with_capacity(n * k * 6);
            for (i, nbrs) in neighbors.iter().enumerate() {
                let pi = pts[i];
                for &j in nbrs {
                    let pj = pts[j];
                    edge_in.extend_from_slice(&pi);
                    edge_in.push(pj[0] - pi[0]);
                    edge_in.push(pj[1] - pi[1]);
                    edge_in.push(pj[2] - pi[2]);
                }
            }
            let c1 = m.params.get("edge.w").shape()[1];
            let mut edge_post =
                linear_forward(&edge_in, n * k, m.params.get("edge.w"), m.params.get("edge.b"));
            relu_inplace(&mut edge_post);
            check_finite("edge", &edge_post)?;
            // Max over each point's k neighbor slots.
            let mut h1 = vec![R::zero(); n * c1];
            let mut edge_arg = vec![0usize; n * c1];
            for i in 0..n {
                let base = i * k * c1;
                let (mx, arg) = maxpool_rows(&edge_post[base..base + k * c1], k, c1);
                h1[i * c1..(i + 1) * c1].copy_from_slice(&mx);
                edge_arg[i * c1..(i + 1) * c1].copy_from_slice(&arg);
            }
            let mut h2 = linear_forward(&h1, n, m.params.get("conv2.w"), m.params.get("conv2.b"));
            relu_inplace(&mut h2);
            check_finite("conv2", &h2)?;
            let c2 = m.params.get("conv2.w").shape()[1];
            let (pooled, pool_arg) = maxpool_rows(&h2, n, c2);
            let mut f1 = linear_forward(&pooled, 1, m.params.get("fc1.w"), m.params.get("fc1.b"));
            relu_inplace(&mut f1);
            check_finite("fc1", &f1)?;
            let logits = linear_forward(&f1, 1, m.params.get("fc2.w"), m.params.get("fc2.b"));
            check_finite("fc2", &logits)?;
            Ok((
                LogitsOf::new(logits),
                Cache::Edgeconv(EdgeconvCache {
                    neighbors,
                    edge_in,
                    edge_post,
                    edge_arg,
                    h1,
                    h2,
                    pool_arg,
                    pooled,
                    f1,
                }),
            ))
        }
    }
}

/// Deterministic logits for a point cloud. Pointnet architectures accept any
/// N >= 1; edgeconv requires N > knn_k.
pub fn forward_classifier<R: Real>(
    m: &ClassifierModelOf<R>,
    x: &PointCloudOf<R>,
) -> Result<LogitsOf<R>> {
    forward_with_cache(m, x).map(|(l, _)| l)
}

/// Forward plus reverse-mode accumulation down to the input and every
/// parameter. The cotangent of the logits is produced by `dloss`, which sees
/// the freshly computed logits (so losses that pick targets from the current
/// scores need only one forward pass). Max pooling backpropagates to the
/// first maximizing element; edgeconv neighbor indices are constants of the
/// forward pass.
pub fn classifier_grad<R: Real>(
    m: &ClassifierModelOf<R>,
    x: &PointCloudOf<R>,
    dloss: impl FnOnce(&LogitsOf<R>) -> Vec<R>,
) -> Result<(LogitsOf<R>, PerturbationOf<R>, TensorBundleOf<R>)> {
    let (logits, cache) = forward_with_cache(m, x)?;
    let dlogits = dloss(&logits);
    let dlogits = &dlogits[..];
    if dlogits.len() != m.k_classes {
        return Err(Error::invalid_argument("dlogits length != k_classes"));
    }
    let n = x.len();
    let mut grads = m.params.zeros_like();
    let set =
        |grads: &mut TensorBundleOf<R>, name: &str, dw: TensorOf<R>, db: TensorOf<R>| {
            *grads.get_mut(&format!("{name}.w")) = dw;
            *grads.get_mut(&format!("{name}.b")) = db;
        };

    let dinput = match cache {
        Cache::Pointnet(c) => {
            let (df1, dw2, db2) = linear_backward(&c.f1, 1, m.params.get("fc2.w"), dlogits);
            set(&mut grads, "fc2", dw2, db2);
            let mut df1 = df1;
            relu_backward(&c.f1, &mut df1);
            let (dpool, dw1, db1) = linear_backward(&c.pooled, 1, m.params.get("fc1.w"), &df1);
            set(&mut grads, "fc1", dw1, db1);
            let mut dcur = maxpool_rows_backward(&dpool, &c.pool_arg, n);
            let n_convs = c.convs.len();
            for i in (0..n_convs).rev() {
                let name = format!("conv{}", i + 1);
                relu_backward(&c.convs[i], &mut dcur);
                let below: &[R] = if i == 0 { &c.x } else { &c.convs[i - 1] };
                let (dx, dw, db) =
                    linear_backward(below, n, m.params.get(&format!("{name}.w")), &dcur);
                set(&mut grads, &name, dw, db);
                dcur = dx;
            }
            dcur
        }
        Cache::Edgeconv(c) => {
            let k = m.knn_k;
            let c1 = m.params.get("edge.w").shape()[1];
            let (df1, dw2, db2) = linear_backward(&c.f1, 1, m.params.get("fc2.w"), dlogits);
            set(&mut grads, "fc2", dw2, db2);
            let mut df1 = df1;
            relu_backward(&c.f1, &mut df1);
            let (dpool, dwf1, dbf1) = linear_backward(&c.pooled, 1, m.params.get("fc1.w"), &df1);
            set(&mut grads, "fc1", dwf1, dbf1);
            let mut dh2 = maxpool_rows_backward(&dpool, &c.pool_arg, n);
            relu_backward(&c.h2, &mut dh2);
            let (dh1, dwc2, dbc2) = linear_backward(&c.h1, n, m.params.get("conv2.w"), &dh2);
            set(&mut grads, "conv2", dwc2, dbc2);
            // Route per-point channel gradients back to the winning neighbor slot.
            let mut dedge = vec![R::zero(); n * k * c1];
            for i in 0..n {
                for ch in 0..c1 {
                    let s = c.edge_arg[i * c1 + ch];
                    dedge[(i * k + s) * c1 + ch] = dh1[i * c1 + ch];
                }
            }
            relu_backward(&c.edge_post, &mut dedge);
            let (dein, dwe, dbe) =
                linear_backward(&c.edge_in, n * k, m.params.get("edge.w"), &dedge);
            set(&mut grads, "edge", dwe, dbe);
            let mut dx = vec![R::zero(); n * 3];
            for (i, nbrs) in c.neighbors.iter().enumerate() {
                for (s, &j) in nbrs.iter().enumerate() {
                    let row = &dein[(i * k + s) * 6..(i * k + s + 1) * 6];
                    for a in 0..3 {
                        dx[i * 3 + a] += row[a] - row[3 + a];
                        dx[j * 3 + a] += row[3 + a];
                    }
                }
            }
            dx
        }
    };

    check_finite("input_grad", &dinput)?;
    let deltas = dinput.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok((logits, PerturbationOf::new(deltas)?, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::PointCloud;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| rng.gen::<[f32; 3]>()).collect()).unwrap()
    }

    #[test]
    fn zero_weight_pointnet_gives_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ClassifierModel::init(Arch::PointnetTiny, 4, &mut rng).unwrap();
        let names: Vec<String> = m.params.iter().map(|(k, _)| k.clone()).collect();
        for name in names {
            m.params.get_mut(&name).data_mut().fill(0.0);
        }
        let x = random_cloud(16, 1);
        let l = forward_classifier(&m, &x).unwrap();
        assert!(l.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointnet_is_permutation_invariant_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for arch in [Arch::PointnetTiny, Arch::PointnetWide] {
            let m = ClassifierModel::init(arch, 5, &mut rng).unwrap();
            let x = random_cloud(32, 2);
            let mut pts = x.points().to_vec();
            pts.reverse();
            pts.swap(0, 7);
            let shuffled = PointCloud::new(pts).unwrap();
            let a = forward_classifier(&m, &x).unwrap();
            let b = forward_classifier(&m, &shuffled).unwrap();
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn edgeconv_rejects_small_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = ClassifierModel::init(Arch::EdgeconvLite, 3, &mut rng).unwrap();
        let x = random_cloud(8, 3); // N == knn_k
        assert!(forward_classifier(&m, &x).is_err());
        let x2 = random_cloud(9, 3);
        assert!(forward_classifier(&m, &x2).is_ok());
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = ClassifierModel::init(Arch::PointnetTiny, 4, &mut rng).unwrap();
        let x = random_cloud(12, 4);
        let (_, g, pg) = classifier_grad(&m, &x, |_| vec![0.0; 4]).unwrap();
        assert!(g.deltas().iter().all(|d| d.iter().all(|&v| v == 0.0)));
        for (_, t) in pg.iter() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    /// Central finite differences in f64 on the sum-of-logits loss, all
    /// three architectures. Double precision keeps rounding noise far below
    /// the tolerance; only genuine max-pool/kNN kinks can disagree, hence
    /// the small failure allowance.
    #[test]
    fn input_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for arch in [Arch::PointnetTiny, Arch::PointnetWide, Arch::EdgeconvLite] {
            let k_classes = 4;
            let m = ClassifierModelOf::<f64>::init(arch, k_classes, &mut rng).unwrap();
            let mut crng = ChaCha8Rng::seed_from_u64(9);
            let x = crate::geometry::PointCloudOf::<f64>::new(
                (0..16).map(|_| crng.gen::<[f64; 3]>()).collect(),
            )
            .unwrap();
            let (_, g, _) = classifier_grad(&m, &x, |_| vec![1.0f64; k_classes]).unwrap();
            let h = 1e-5f64;
            let mut checked = 0;
            let mut ok = 0;
            for i in 0..x.len() {
                for a in 0..3 {
                    let mut pp = x.points().to_vec();
                    pp[i][a] += h;
                    let mut pm = x.points().to_vec();
                    pm[i][a] -= h;
                    let fp: f64 = forward_classifier(
                        &m,
                        &crate::geometry::PointCloudOf::new(pp).unwrap(),
                    )
                    .unwrap()
                    .values()
                    .iter()
                    .sum();
                    let fm: f64 = forward_classifier(
                        &m,
                        &crate::geometry::PointCloudOf::new(pm).unwrap(),
                    )
                    .unwrap()
                    .values()
                    .iter()
                    .sum();
                    let fd = (fp - fm) / (2.0 * h);
                    let an = g.deltas()[i][a];
                    checked += 1;
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    if (fd - an).abs() / denom < 1e-4 {
                        ok += 1;
                    }
                }
            }
            assert!(
                ok as f32 >= checked as f32 * 0.98,
                "{}: {ok}/{checked} coords matched",
                arch.name()
            );
        }
    }
}
