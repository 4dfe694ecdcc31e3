//! Differentiable point-cloud networks: two classifier families and the
//! auto-encoder, with explicit forward passes and reverse-mode gradients
//! with respect to both parameters and inputs. All layers are generic over
//! the scalar type; training runs in f32, while the f64 instantiation backs
//! high-precision gradient oracles.

mod ae;
mod adam;
mod checkpoint;
mod classifier;
mod train;

pub use adam::{adam_update, AdamState, BundleAdam};
pub use ae::{ae_grad, forward_ae, AEModel, AEModelOf};
pub use checkpoint::{load_ae, load_classifier, save_ae, save_classifier};
pub use classifier::{
    classifier_grad, forward_classifier, Arch, ClassifierModel, ClassifierModelOf, Logits,
    LogitsOf, EDGECONV_KNN_K,
};
pub use train::{train_ae, train_classifier, train_classifier_with_hook, BatchHook, TrainConfig};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::TensorOf;

/// Glorot-uniform bound for a (fan_in, fan_out) layer.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn check_finite<R: Real>(layer: &str, data: &[R]) -> Result<()> {
    let sum: f64 = data.iter().map(|v| v.as_f64()).sum();
    if sum.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(layer))
    }
}

/// y = x W + b for row-major x (rows x din) and W stored as (din, dout).
pub(crate) fn linear_forward<R: Real>(x: &[R], rows: usize, w: &TensorOf<R>, b: &TensorOf<R>) -> Vec<R> {
    let din = w.shape()[0];
    let dout = w.shape()[1];
    debug_assert_eq!(x.len(), rows * din);
    let wd = w.data();
    let bd = b.data();
    let mut y = Vec::with_capacity(rows * dout);
    for r in 0..rows {
        let start = y.len();
        y.extend_from_slice(bd);
        let yr = &mut y[start..];
        let xr = &x[r * din..(r + 1) * din];
        for (k, &xv) in xr.iter().enumerate() {
            if xv != R::zero() {
                let wr = &wd[k * dout..(k + 1) * dout];
                for (yo, &wv) in yr.iter_mut().zip(wr) {
                    *yo += xv * wv;
                }
            }
        }
    }
    y
}

/// Backward pass of `linear_forward`: returns (dx, dw, db).
pub(crate) fn linear_backward<R: Real>(
    x: &[R],
    rows: usize,
    w: &TensorOf<R>,
    dy: &[R],
) -> (Vec<R>, TensorOf<R>, TensorOf<R>) {
    let din = w.shape()[0];
    let dout = w.shape()[1];
    let wd = w.data();
    let mut dx = vec![R::zero(); rows * din];
    let mut dw = TensorOf::zeros(&[din, dout]);
    let mut db = TensorOf::zeros(&[dout]);
    {
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for r in 0..rows {
            let dyr = &dy[r * dout..(r + 1) * dout];
            let xr = &x[r * din..(r + 1) * din];
            let dxr = &mut dx[r * din..(r + 1) * din];
            for k in 0..din {
                let wr = &wd[k * dout..(k + 1) * dout];
                let mut acc = R::zero();
                for (a, b) in dyr.iter().zip(wr) {
                    acc += *a * *b;
                }
                dxr[k] = acc;
                let xv = xr[k];
                if xv != R::zero() {
                    let dwr = &mut dwd[k * dout..(k + 1) * dout];
                    for (d, &g) in dwr.iter_mut().zip(dyr) {
                        *d += xv * g;
                    }
                }
            }
            for (d, &g) in dbd.iter_mut().zip(dyr) {
                *d += g;
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn relu_inplace<R: Real>(y: &mut [R]) {
    for v in y {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
}

/// dL/dx for y = relu(x), given the post-activation values. The gradient at
/// exactly zero is zero.
pub(crate) fn relu_backward<R: Real>(post: &[R], dy: &mut [R]) {
    for (d, &p) in dy.iter_mut().zip(post) {
        if p <= R::zero() {
            *d = R::zero();
        }
    }
}

/// Column-wise max over rows; argmax keeps the first (lowest-index) maximum.
pub(crate) fn maxpool_rows<R: Real>(x: &[R], rows: usize, d: usize) -> (Vec<R>, Vec<usize>) {
    let mut out = x[..d].to_vec();
    let mut arg = vec![0usize; d];
    for r in 1..rows {
        let xr = &x[r * d..(r + 1) * d];
        for c in 0..d {
            if xr[c] > out[c] {
                out[c] = xr[c];
                arg[c] = r;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_rows_backward<R: Real>(dy: &[R], arg: &[usize], rows: usize) -> Vec<R> {
    let d = dy.len();
    let mut dx = vec![R::zero(); rows * d];
    for c in 0..d {
        dx[arg[c] * d + c] += dy[c];
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_matches_manual_product() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, -0.5, 0.0]).unwrap();
        let x = vec![1.0, -1.0];
        let y = linear_forward(&x, 1, &w, &b);
        assert_eq!(y, vec![1.0 - 4.0 + 0.5, 2.0 - 5.0 - 0.5, 3.0 - 6.0]);
    }

    #[test]
    fn maxpool_first_max_wins() {
        let x = vec![1.0, 5.0, /* row1 */ 1.0, 5.0];
        let (out, arg) = maxpool_rows(&x, 2, 2);
        assert_eq!(out, vec![1.0, 5.0]);
        assert_eq!(arg, vec![0, 0]);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let din = 4;
        let dout = 3;
        let rows = 5;
        let w = Tensor::from_vec(
            &[din, dout],
            (0..din * dout).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = Tensor::from_vec(&[dout], (0..dout).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let x: Vec<f32> = (0..rows * din).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Loss = sum of outputs; dy = ones.
        let dy = vec![1.0f32; rows * dout];
        let (dx, dw, db) = linear_backward(&x, rows, &w, &dy);
        let h = 1e-3f32;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fp: f32 = linear_forward(&xp, rows, &w, &b).iter().sum();
            let fm: f32 = linear_forward(&xm, rows, &w, &b).iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-2, "dx[{i}]: {fd} vs {}", dx[i]);
        }
        for i in 0..dw.len() {
            let mut wp = w.clone();
            wp.data_mut()[i] += h;
            let mut wm = w.clone();
            wm.data_mut()[i] -= h;
            let fp: f32 = linear_forward(&x, rows, &wp, &b).iter().sum();
            let fm: f32 = linear_forward(&x, rows, &wm, &b).iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - dw.data()[i]).abs() < 1e-2);
        }
        assert!(db.data().iter().all(|&v| (v - rows as f32).abs() < 1e-6));
    }
}
