//! Point-set distance metrics, norms, projections onto norm balls, and
//! k-nearest-neighbor queries.
//!
//! Conventions, applied everywhere:
//! * Chamfer and Hausdorff use squared euclidean distances; EMD uses
//!   un-squared euclidean distances.
//! * Nearest-neighbor ties break toward the lowest point index.
//! * Reductions accumulate in f64 even when the element type is f32.

mod assignment;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use assignment::solve_assignment;

/// Largest cloud size for which exact EMD is computed; larger inputs must
/// opt into the greedy approximation.
pub const EMD_EXACT_CAP: usize = 128;

/// A set of N 3D points in normalized scene units.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudOf<R: Real> {
    points: Vec<[R; 3]>,
}

impl<R: Real> PointCloudOf<R> {
    pub fn new(points: Vec<[R; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid_input("point cloud must contain at least one point"));
        }
        if !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid_input("point cloud contains non-finite coordinates"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    pub fn points(&self) -> &[[R; 3]] {
        &self.points
    }

    pub fn into_points(self) -> Vec<[R; 3]> {
        self.points
    }

    /// Applies an offset to every point. Errors if the sizes differ or the
    /// result is non-finite.
    pub fn offset(&self, d: &PerturbationOf<R>) -> Result<Self> {
        if d.len() != self.len() {
            return Err(Error::invalid_input(format!(
                "perturbation has {} points, cloud has {}",
                d.len(),
                self.len()
            )));
        }
        let points = self
            .points
            .iter()
            .zip(d.deltas())
            .map(|(p, q)| [p[0] + q[0], p[1] + q[1], p[2] + q[2]])
            .collect();
        Self::new(points)
    }
}

/// An additive N x 3 offset applied to a point cloud of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationOf<R: Real> {
    deltas: Vec<[R; 3]>,
}

impl<R: Real> PerturbationOf<R> {
    pub fn new(deltas: Vec<[R; 3]>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::invalid_input("perturbation must contain at least one point"));
        }
        if !deltas.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid_input("perturbation contains non-finite entries"));
        }
        Ok(Self { deltas })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            deltas: vec![[R::zero(); 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn deltas(&self) -> &[[R; 3]] {
        &self.deltas
    }

    pub fn deltas_mut(&mut self) -> &mut Vec<[R; 3]> {
        &mut self.deltas
    }
}

fn sq_dist<R: Real>(a: &[R; 3], b: &[R; 3]) -> f64 {
    let dx = (a[0] - b[0]).as_f64();
    let dy = (a[1] - b[1]).as_f64();
    let dz = (a[2] - b[2]).as_f64();
    dx * dx + dy * dy + dz * dz
}

/// Max over points of the per-point l-infinity norm (the largest absolute
/// coordinate anywhere in the perturbation).
pub fn norm_linf<R: Real>(d: &PerturbationOf<R>) -> R {
    let mut m = 0.0f64;
    for p in d.deltas() {
        for c in p {
            let a = c.as_f64().abs();
            if a > m {
                m = a;
            }
        }
    }
    R::of_f64(m)
}

/// Frobenius norm of the perturbation: sqrt of the sum of squared entries.
pub fn norm_l2<R: Real>(d: &PerturbationOf<R>) -> R {
    let mut s = 0.0f64;
    for p in d.deltas() {
        for c in p {
            let v = c.as_f64();
            s += v * v;
        }
    }
    R::of_f64(s.sqrt())
}

/// Direction handling for the Chamfer distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChamferMode {
    /// Average over the second cloud of squared distances to the first.
    Directed,
    /// directed(a, b) + directed(b, a).
    Symmetric,
}

fn chamfer_directed<R: Real>(a: &PointCloudOf<R>, b: &PointCloudOf<R>) -> f64 {
    let mut total = 0.0f64;
    for q in b.points() {
        let mut best = f64::INFINITY;
        for p in a.points() {
            let d = sq_dist(p, q);
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / b.len() as f64
}

/// Chamfer distance between two nonempty clouds (squared distances).
pub fn chamfer<R: Real>(a: &PointCloudOf<R>, b: &PointCloudOf<R>, mode: ChamferMode) -> R {
    match mode {
        ChamferMode::Directed => R::of_f64(chamfer_directed(a, b)),
        ChamferMode::Symmetric => R::of_f64(chamfer_directed(a, b) + chamfer_directed(b, a)),
    }
}

/// One-directional Hausdorff distance: the worst squared distance from a
/// point of `b` to its nearest point in `a`.
pub fn hausdorff<R: Real>(a: &PointCloudOf<R>, b: &PointCloudOf<R>) -> R {
    let mut worst = 0.0f64;
    for q in b.points() {
        let mut best = f64::INFINITY;
        for p in a.points() {
            let d = sq_dist(p, q);
            if d < best {
                best = d;
            }
        }
        if best > worst {
            worst = best;
        }
    }
    R::of_f64(worst)
}

/// Exact earth mover's distance: the minimum over bijections of the sum of
/// un-squared euclidean distances, solved by optimal assignment.
pub fn emd<R: Real>(a: &PointCloudOf<R>, b: &PointCloudOf<R>) -> Result<R> {
    if a.len() != b.len() {
        return Err(Error::invalid_input(format!(
            "emd requires equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n > EMD_EXACT_CAP {
        return Err(Error::invalid_argument(format!(
            "emd size {n} exceeds exact-solver cap {EMD_EXACT_CAP}; use emd_greedy for larger clouds"
        )));
    }
    let mut cost = vec![0.0f64; n * n];
    for (i, p) in a.points().iter().enumerate() {
        for (j, q) in b.points().iter().enumerate() {
            cost[i * n + j] = sq_dist(p, q).sqrt();
        }
    }
    let assign = solve_assignment(&cost, n);
    let total: f64 = (0..n).map(|i| cost[i * n + assign[i]]).sum();
    Ok(R::of_f64(total))
}

/// Greedy nearest-unmatched approximation to EMD for clouds above the exact
/// cap. Each point of `a` (in index order) is matched to its nearest still
/// unmatched point of `b`.
pub fn emd_greedy<R: Real>(a: &PointCloudOf<R>, b: &PointCloudOf<R>) -> Result<R> {
    if a.len() != b.len() {
        return Err(Error::invalid_input(format!(
            "emd requires equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut taken = vec![false; n];
    let mut total = 0.0f64;
    for p in a.points() {
        let mut best = f64::INFINITY;
        let mut best_j = usize::MAX;
        for (j, q) in b.points().iter().enumerate() {
            if taken[j] {
                continue;
            }
            let d = sq_dist(p, q);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        taken[best_j] = true;
        total += best.sqrt();
    }
    Ok(R::of_f64(total))
}

/// Optimal bijection between equally sized clouds (row index of `a` to
/// column index of `b`), under un-squared euclidean cost. Used by the soft
/// EMD attack to differentiate through a fixed matching.
pub fn emd_matching<R: Real>(a: &PointCloudOf<R>, b: &PointCloudOf<R>) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::invalid_input("emd matching requires equal sizes"));
    }
    let n = a.len();
    let mut cost = vec![0.0f64; n * n];
    for (i, p) in a.points().iter().enumerate() {
        for (j, q) in b.points().iter().enumerate() {
            cost[i * n + j] = sq_dist(p, q).sqrt();
        }
    }
    Ok(solve_assignment(&cost, n))
}

/// For each point, the indices of its k nearest other points by euclidean
/// distance, excluding itself; ties break toward the lowest index.
pub fn knn_indices<R: Real>(x: &PointCloudOf<R>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x.len();
    if k == 0 || k >= n {
        return Err(Error::invalid_argument(format!(
            "knn requires 1 <= k < N, got k={k}, N={n}"
        )));
    }
    let pts = x.points();
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        for (j, q) in pts.iter().enumerate() {
            if j != i {
                cand.push((sq_dist(&pts[i], q), j));
            }
        }
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.push(cand[..k].iter().map(|&(_, j)| j).collect());
    }
    Ok(out)
}

/// Clamps every coordinate to [-eps, +eps].
pub fn project_linf<R: Real>(d: &PerturbationOf<R>, eps: R) -> Result<PerturbationOf<R>> {
    if eps < R::zero() {
        return Err(Error::invalid_argument("projection radius must be non-negative"));
    }
    let deltas = d
        .deltas()
        .iter()
        .map(|p| {
            let mut q = *p;
            for c in &mut q {
                if *c > eps {
                    *c = eps;
                } else if *c < -eps {
                    *c = -eps;
                }
            }
            q
        })
        .collect();
    PerturbationOf::new(deltas)
}

/// Scales the perturbation onto the l2 ball of radius eps:
/// `d * eps / max(||d||_F, eps)`.
pub fn project_l2<R: Real>(d: &PerturbationOf<R>, eps: R) -> Result<PerturbationOf<R>> {
    if eps < R::zero() {
        return Err(Error::invalid_argument("projection radius must be non-negative"));
    }
    let norm = norm_l2(d);
    if norm <= eps {
        return Ok(d.clone());
    }
    if eps == R::zero() {
        return Ok(PerturbationOf::zeros(d.len()));
    }
    let scale = eps / norm;
    let deltas = d
        .deltas()
        .iter()
        .map(|p| [p[0] * scale, p[1] * scale, p[2] * scale])
        .collect();
    PerturbationOf::new(deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    type Cloud = PointCloudOf<f64>;
    type Pert = PerturbationOf<f64>;

    fn cloud(pts: &[[f64; 3]]) -> Cloud {
        Cloud::new(pts.to_vec()).unwrap()
    }

    fn pert(pts: &[[f64; 3]]) -> Pert {
        Pert::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn norm_linf_examples() {
        assert_eq!(norm_linf(&Pert::zeros(3)), 0.0);
        assert_eq!(norm_linf(&pert(&[[0.5, -0.3, 0.05]])), 0.5);
        assert_eq!(norm_linf(&pert(&[[0.1, 0.0, 0.0], [0.0, -0.2, 0.0]])), 0.2);
    }

    #[test]
    fn norm_l2_examples() {
        assert_eq!(norm_l2(&Pert::zeros(4)), 0.0);
        assert_relative_eq!(norm_l2(&pert(&[[3.0, 4.0, 0.0]])), 5.0);
        assert_relative_eq!(
            norm_l2(&pert(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])),
            2.0f64.sqrt()
        );
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0; 3], [2.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &a, ChamferMode::Directed), 0.0);
        assert_eq!(chamfer(&a, &a, ChamferMode::Symmetric), 0.0);

        let p = cloud(&[[0.0; 3]]);
        let q = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&p, &q, ChamferMode::Directed), 1.0);

        let b = cloud(&[[0.0; 3]]);
        assert_eq!(chamfer(&a, &b, ChamferMode::Directed), 0.0);
        assert_eq!(chamfer(&b, &a, ChamferMode::Directed), 2.0);
        assert_eq!(chamfer(&a, &b, ChamferMode::Symmetric), 2.0);
    }

    #[test]
    fn hausdorff_examples() {
        let a = cloud(&[[0.0; 3]]);
        assert_eq!(hausdorff(&a, &a), 0.0);
        let b = cloud(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(hausdorff(&a, &b), 1.0);
        let a2 = cloud(&[[0.0; 3], [2.0, 0.0, 0.0]]);
        let b2 = cloud(&[[0.5, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        assert_eq!(hausdorff(&a2, &b2), 9.0);
    }

    #[test]
    fn emd_examples() {
        let a = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [0.0; 3]]);
        assert_relative_eq!(emd(&a, &b).unwrap(), 0.0);
        let p = cloud(&[[0.0; 3]]);
        let q = cloud(&[[3.0, 4.0, 0.0]]);
        assert_relative_eq!(emd(&p, &q).unwrap(), 5.0);
    }

    #[test]
    fn emd_errors() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(emd(&a, &b).is_err());
        let big: Vec<[f64; 3]> = (0..EMD_EXACT_CAP + 1).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = Cloud::new(big).unwrap();
        assert!(matches!(emd(&c, &c), Err(crate::error::Error::InvalidArgument(_))));
        assert_relative_eq!(emd_greedy(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn knn_examples() {
        let x = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let nn = knn_indices(&x, 1).unwrap();
        assert_eq!(nn, vec![vec![1], vec![0], vec![1]]);
        let nn2 = knn_indices(&x, 2).unwrap();
        for (i, row) in nn2.iter().enumerate() {
            let mut expect: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let mut got = row.clone();
            got.sort_unstable();
            expect.sort_unstable();
            assert_eq!(got, expect);
        }
        assert!(knn_indices(&x, 3).is_err());
    }

    #[test]
    fn project_linf_examples() {
        let d = pert(&[[0.5, -0.3, 0.05]]);
        let p = project_linf(&d, 0.1).unwrap();
        assert_eq!(p.deltas()[0], [0.1, -0.1, 0.05]);
        let small = pert(&[[0.05, -0.02, 0.0]]);
        assert_eq!(project_linf(&small, 0.1).unwrap(), small);
        assert_eq!(project_linf(&d, 0.0).unwrap(), Pert::zeros(1));
        assert!(project_linf(&d, -1.0).is_err());
    }

    #[test]
    fn project_l2_examples() {
        let d = pert(&[[3.0, 4.0, 0.0]]);
        let p = project_l2(&d, 2.5).unwrap();
        assert_relative_eq!(p.deltas()[0][0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(p.deltas()[0][1], 2.0, epsilon = 1e-12);
        assert_eq!(project_l2(&d, 10.0).unwrap(), d);
        assert_eq!(project_l2(&d, 0.0).unwrap(), Pert::zeros(1));
        assert!(project_l2(&d, -0.5).is_err());
    }

    #[test]
    fn directed_chamfer_bounded_by_hausdorff() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(1..10);
            let m = rng.gen_range(1..10);
            let a = Cloud::new((0..n).map(|_| rng.gen::<[f64; 3]>()).collect()).unwrap();
            let b = Cloud::new((0..m).map(|_| rng.gen::<[f64; 3]>()).collect()).unwrap();
            assert!(chamfer(&a, &b, ChamferMode::Directed) <= hausdorff(&a, &b) + 1e-15);
        }
    }
}
