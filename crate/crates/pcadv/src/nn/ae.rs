//! Point-cloud auto-encoder: per-point encoder with max pooling into a
//! latent code, dense MLP decoder back to a fixed-size cloud.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{PerturbationOf, PointCloudOf};
use crate::scalar::Real;
use crate::tensor::{TensorBundleOf, TensorOf};

use super::{
    check_finite, glorot_bound, linear_backward, linear_forward, maxpool_rows,
    maxpool_rows_backward, relu_backward, relu_inplace,
};

const ENC1: usize = 64;
const ENC2: usize = 128;
const DEC1: usize = 128;

#[derive(Debug, Clone)]
pub struct AEModelOf<R: Real> {
    pub latent_dim: usize,
    pub n_points: usize,
    pub params: TensorBundleOf<R>,
}

/// Working-precision auto-encoder.
pub type AEModel = AEModelOf<f32>;

impl<R: Real> AEModelOf<R> {
    pub fn init(latent_dim: usize, n_points: usize, rng: &mut impl Rng) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::invalid_argument("latent_dim must be at least 1"));
        }
        if n_points == 0 {
            return Err(Error::invalid_argument("n_points must be at least 1"));
        }
        let mut params = TensorBundleOf::new();
        let mut add = |name: &str, din: usize, dout: usize, rng: &mut dyn rand::RngCore| {
            let bound = glorot_bound(din, dout);
            let data = (0..din * dout)
                .map(|_| R::of_f64(rng.gen_range(-bound..bound)))
                .collect();
            params.insert(format!("{name}.w"), TensorOf::from_vec(&[din, dout], data).unwrap());
            params.insert(format!("{name}.b"), TensorOf::zeros(&[dout]));
        };
        add("enc1", 3, ENC1, rng);
        add("enc2", ENC1, ENC2, rng);
        add("enc3", ENC2, latent_dim, rng);
        add("dec1", latent_dim, DEC1, rng);
        add("dec2", DEC1, n_points * 3, rng);
        Ok(Self {
            latent_dim,
            n_points,
            params,
        })
    }

    pub fn cast<S: Real>(&self) -> AEModelOf<S> {
        AEModelOf {
            latent_dim: self.latent_dim,
            n_points: self.n_points,
            params: self.params.cast(),
        }
    }
}

struct AECache<R: Real> {
    x: Vec<R>,
    e1: Vec<R>,
    e2: Vec<R>,
    pool_arg: Vec<usize>,
    latent: Vec<R>,
    d1: Vec<R>,
}

fn forward_with_cache<R: Real>(
    g: &AEModelOf<R>,
    x: &PointCloudOf<R>,
) -> Result<(Vec<R>, AECache<R>)> {
    let n = x.len();
    if n != g.n_points {
        return Err(Error::invalid_input(format!(
            "auto-encoder was built for {} points, got {n}",
            g.n_points
        )));
    }
    let mut xf = Vec::with_capacity(n * 3);
    for p in x.points() {
        xf.extend_from_slice(p);
    }
    let mut e1 = linear_forward(&xf, n, g.params.get("enc1.w"), g.params.get("enc1.b"));
    relu_inplace(&mut e1);
    check_finite("enc1", &e1)?;
    let mut e2 = linear_forward(&e1, n, g.params.get("enc2.w"), g.params.get("enc2.b"));
    relu_inplace(&mut e2);
    check_finite("enc2", &e2)?;
    let e3 = linear_forward(&e2, n, g.params.get("enc3.w"), g.params.get("enc3.b"));
    check_finite("enc3", &e3)?;
    let (latent, pool_arg) = maxpool_rows(&e3, n, g.latent_dim);
    let mut d1 = linear_forward(&latent, 1, g.params.get("dec1.w"), g.params.get("dec1.b"));
    relu_inplace(&mut d1);
    check_finite("dec1", &d1)?;
    let out = linear_forward(&d1, 1, g.params.get("dec2.w"), g.params.get("dec2.b"));
    check_finite("dec2", &out)?;
    Ok((
        out,
        AECache {
            x: xf,
            e1,
            e2,
            pool_arg,
            latent,
            d1,
        },
    ))
}

/// Reconstruction with exactly `n_points` points.
pub fn forward_ae<R: Real>(g: &AEModelOf<R>, x: &PointCloudOf<R>) -> Result<PointCloudOf<R>> {
    let (out, _) = forward_with_cache(g, x)?;
    PointCloudOf::new(out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Forward plus reverse-mode gradients to the AE input and parameters. The
/// cotangent of the reconstruction is produced by `dloss`, which sees the
/// freshly reconstructed cloud.
pub fn ae_grad<R: Real>(
    g: &AEModelOf<R>,
    x: &PointCloudOf<R>,
    dloss: impl FnOnce(&PointCloudOf<R>) -> Vec<[R; 3]>,
) -> Result<(PointCloudOf<R>, PerturbationOf<R>, TensorBundleOf<R>)> {
    let (out, c) = forward_with_cache(g, x)?;
    let recon = PointCloudOf::new(out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?;
    let drecon = dloss(&recon);
    if drecon.len() != g.n_points {
        return Err(Error::invalid_argument("drecon size != n_points"));
    }
    let n = x.len();
    let mut grads = g.params.zeros_like();
    let set = |grads: &mut TensorBundleOf<R>, name: &str, dw: TensorOf<R>, db: TensorOf<R>| {
        *grads.get_mut(&format!("{name}.w")) = dw;
        *grads.get_mut(&format!("{name}.b")) = db;
    };
    let mut dout = Vec::with_capacity(n * 3);
    for d in &drecon {
        dout.extend_from_slice(d);
    }
    let (dd1, dw, db) = linear_backward(&c.d1, 1, g.params.get("dec2.w"), &dout);
    set(&mut grads, "dec2", dw, db);
    let mut dd1 = dd1;
    relu_backward(&c.d1, &mut dd1);
    let (dlatent, dw, db) = linear_backward(&c.latent, 1, g.params.get("dec1.w"), &dd1);
    set(&mut grads, "dec1", dw, db);
    let de3 = maxpool_rows_backward(&dlatent, &c.pool_arg, n);
    let (de2, dw, db) = linear_backward(&c.e2, n, g.params.get("enc3.w"), &de3);
    set(&mut grads, "enc3", dw, db);
    let mut de2 = de2;
    relu_backward(&c.e2, &mut de2);
    let (de1, dw, db) = linear_backward(&c.e1, n, g.params.get("enc2.w"), &de2);
    set(&mut grads, "enc2", dw, db);
    let mut de1 = de1;
    relu_backward(&c.e1, &mut de1);
    let (dx, dw, db) = linear_backward(&c.x, n, g.params.get("enc1.w"), &de1);
    set(&mut grads, "enc1", dw, db);
    check_finite("ae_input_grad", &dx)?;

    let dinput = PerturbationOf::new(dx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?;
    Ok((recon, dinput, grads))
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
    fn output_has_n_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = AEModel::init(16, 24, &mut rng).unwrap();
        let y = forward_ae(&g, &random_cloud(24, 1)).unwrap();
        assert_eq!(y.len(), 24);
        assert!(forward_ae(&g, &random_cloud(23, 1)).is_err());
    }

    #[test]
    fn zero_weight_ae_outputs_decoder_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = AEModel::init(8, 10, &mut rng).unwrap();
        let names: Vec<String> = g.params.iter().map(|(k, _)| k.clone()).collect();
        for name in names {
            g.params.get_mut(&name).data_mut().fill(0.0);
        }
        g.params.get_mut("dec2.b").data_mut()[0] = 0.7; // first output coordinate
        let y = forward_ae(&g, &random_cloud(10, 3)).unwrap();
        assert_eq!(y.points()[0], [0.7, 0.0, 0.0]);
        assert!(y.points()[1..].iter().all(|p| *p == [0.0; 3]));
    }

    /// Central finite differences in f64 on the sum-of-coordinates loss.
    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = AEModelOf::<f64>::init(12, 16, &mut rng).unwrap();
        let mut crng = ChaCha8Rng::seed_from_u64(5);
        let x = PointCloudOf::<f64>::new((0..16).map(|_| crng.gen::<[f64; 3]>()).collect())
            .unwrap();
        let (_, din, _) = ae_grad(&g, &x, |_| vec![[1.0f64; 3]; 16]).unwrap();
        let h = 1e-5f64;
        let mut ok = 0;
        let mut total = 0;
        for i in 0..x.len() {
            for a in 0..3 {
                let mut pp = x.points().to_vec();
                pp[i][a] += h;
                let mut pm = x.points().to_vec();
                pm[i][a] -= h;
                let s = |pts: Vec<[f64; 3]>| -> f64 {
                    forward_ae(&g, &PointCloudOf::new(pts).unwrap())
                        .unwrap()
                        .points()
                        .iter()
                        .flatten()
                        .sum()
                };
                let fd = (s(pp) - s(pm)) / (2.0 * h);
                let an = din.deltas()[i][a];
                total += 1;
                let denom = fd.abs().max(an.abs()).max(1e-6);
                if (fd - an).abs() / denom < 1e-4 {
                    ok += 1;
                }
            }
        }
        assert!(ok as f32 >= total as f32 * 0.98, "{ok}/{total}");
    }
}
