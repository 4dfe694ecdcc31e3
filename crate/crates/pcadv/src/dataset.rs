//! Synthetic parametric-shape dataset generation, normalization, and the
//! PCDS binary dataset format.
//!
//! Eight surface families stand in for scanned objects: sphere, cube,
//! cylinder, cone, torus, disk, pyramid, helix tube. Centrally symmetric
//! surfaces are sampled in antithetic pairs (p, -p) so their empirical
//! centroid is exactly zero, which keeps the analytic surface equations
//! valid after normalization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::PointCloud;

pub const N_SHAPE_CLASSES: usize = 8;

/// Torus major/minor radii used by class 4 (R = 2r).
pub const TORUS_MAJOR: f64 = 2.0 / 3.0;
pub const TORUS_MINOR: f64 = 1.0 / 3.0;

const PCDS_MAGIC: &[u8; 4] = b"PCDS";
const PCDS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Uniformly sized, normalized point clouds with class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub samples: Vec<(PointCloud, usize)>,
    pub n_classes: usize,
    pub n_points: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn class_name(class_id: usize) -> &'static str {
    match class_id {
        0 => "sphere",
        1 => "cube",
        2 => "cylinder",
        3 => "cone",
        4 => "torus",
        5 => "disk",
        6 => "pyramid",
        7 => "helix",
        _ => "unknown",
    }
}

fn unit_sphere_point(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Raw surface samples for a class, centered at the origin, before rotation
/// / jitter / normalization. Exposed so geometric oracles can check the
/// analytic surface equations directly.
pub fn sample_surface(class_id: usize, n_points: usize, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 3]>> {
    let symmetric = matches!(class_id, 0 | 1 | 2 | 4 | 5);
    let draw: &mut dyn FnMut(&mut ChaCha8Rng) -> [f64; 3] = &mut |rng| match class_id {
        // Sphere of radius 1.
        0 => unit_sphere_point(rng),
        // Cube surface, side 1.
        1 => {
            let face = rng.gen_range(0..6u8);
            let u = rng.gen_range(-0.5..0.5);
            let v = rng.gen_range(-0.5..0.5);
            match face {
                0 => [0.5, u, v],
                1 => [-0.5, u, v],
                2 => [u, 0.5, v],
                3 => [u, -0.5, v],
                4 => [u, v, 0.5],
                _ => [u, v, -0.5],
            }
        }
        // Cylinder lateral surface, radius 0.5, height 1.5.
        2 => {
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let z = rng.gen_range(-0.75..0.75);
            [0.5 * t.cos(), 0.5 * t.sin(), z]
        }
        // Cone lateral surface, apex (0,0,0.6), base radius 0.6 at z=-0.4.
        3 => {
            // Area element grows linearly toward the base.
            let s = rng.gen_range(0.0..1.0f64).sqrt();
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = 0.6 * s;
            [r * t.cos(), r * t.sin(), 0.6 - s]
        }
        // Torus, R = 2r, in the xy-plane.
        4 => {
            let u = rng.gen_range(0.0..std::f64::consts::TAU);
            // Rejection sampling for uniform area density along the tube angle.
            let v = loop {
                let v = rng.gen_range(0.0..std::f64::consts::TAU);
                let accept = (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR);
                if rng.gen_range(0.0..1.0) < accept {
                    break v;
                }
            };
            let rho = TORUS_MAJOR + TORUS_MINOR * v.cos();
            [rho * u.cos(), rho * u.sin(), TORUS_MINOR * v.sin()]
        }
        // Flat disk of radius 1 in the z=0 plane.
        5 => {
            let r = rng.gen_range(0.0..1.0f64).sqrt();
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            [r * t.cos(), r * t.sin(), 0.0]
        }
        // Square pyramid: base side 1.2 at z=-0.4, apex (0,0,0.6).
        6 => {
            let half = 0.6;
            let slant = (1.0f64 + half * half).sqrt(); // apex height 1 above base
            let base_area = (2.0 * half) * (2.0 * half);
            let face_area = half * slant; // per triangular face, times 4 below
            let total = base_area + 4.0 * face_area;
            let pick = rng.gen_range(0.0..total);
            if pick < base_area {
                [rng.gen_range(-half..half), rng.gen_range(-half..half), -0.4]
            } else {
                let face = ((pick - base_area) / face_area) as usize % 4;
                // Uniform point on a triangle (apex, corner a, corner b).
                let (mut r1, r2) = (rng.gen_range(0.0..1.0f64), rng.gen_range(0.0..1.0f64));
                r1 = r1.sqrt();
                let (w_apex, w_a, w_b) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
                let corners = [
                    [half, half],
                    [half, -half],
                    [-half, -half],
                    [-half, half],
                ];
                let a = corners[face];
                let b = corners[(face + 1) % 4];
                [
                    w_a * a[0] + w_b * b[0],
                    w_a * a[1] + w_b * b[1],
                    w_apex * 0.6 + (w_a + w_b) * -0.4,
                ]
            }
        }
        // Helix tube: two turns, path radius 0.7, tube radius 0.08.
        7 => {
            let t = rng.gen_range(0.0..2.0 * std::f64::consts::TAU);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let (cx, cy) = (0.7 * t.cos(), 0.7 * t.sin());
            let cz = -0.7 + 0.7 * t / std::f64::consts::TAU;
            // Tube offset in the plane spanned by the radial direction and z.
            let (rx, ry) = (t.cos(), t.sin());
            let tube = 0.08;
            [
                cx + tube * phi.cos() * rx,
                cy + tube * phi.cos() * ry,
                cz + tube * phi.sin(),
            ]
        }
        _ => unreachable!(),
    };
    if class_id >= N_SHAPE_CLASSES {
        return Err(Error::invalid_argument(format!(
            "unknown shape class {class_id} (expected 0..{N_SHAPE_CLASSES})"
        )));
    }
    let mut pts = Vec::with_capacity(n_points);
    if symmetric && n_points % 2 == 0 {
        while pts.len() < n_points {
            let p = draw(rng);
            pts.push(p);
            pts.push([-p[0], -p[1], -p[2]]);
        }
    } else {
        while pts.len() < n_points {
            pts.push(draw(rng));
        }
    }
    Ok(pts)
}

/// Centers the cloud at the origin and scales the farthest point to radius 1.
pub fn normalize(x: &PointCloud) -> Result<PointCloud> {
    let n = x.len() as f64;
    let mut c = [0.0f64; 3];
    for p in x.points() {
        for (a, &v) in c.iter_mut().zip(p) {
            *a += v as f64;
        }
    }
    for a in &mut c {
        *a /= n;
    }
    let mut max_d2 = 0.0f64;
    for p in x.points() {
        let d2 = (0..3).map(|i| (p[i] as f64 - c[i]).powi(2)).sum::<f64>();
        if d2 > max_d2 {
            max_d2 = d2;
        }
    }
    if max_d2 <= 1e-24 {
        return Err(Error::invalid_input("degenerate cloud: all points identical"));
    }
    let s = 1.0 / max_d2.sqrt();
    let pts = x
        .points()
        .iter()
        .map(|p| {
            [
                ((p[0] as f64 - c[0]) * s) as f32,
                ((p[1] as f64 - c[1]) * s) as f32,
                ((p[2] as f64 - c[2]) * s) as f32,
            ]
        })
        .collect();
    PointCloud::new(pts)
}

/// Samples the class surface, rotates about the z-axis, adds Gaussian
/// jitter, and normalizes. Deterministic given the seed.
pub fn generate_shape(class_id: usize, n_points: usize, seed: u64, noise_sigma: f32) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = sample_surface(class_id, n_points, &mut rng)?;
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let mut pts: Vec<[f32; 3]> = raw
        .iter()
        .map(|p| {
            [
                (ct * p[0] - st * p[1]) as f32,
                (st * p[0] + ct * p[1]) as f32,
                p[2] as f32,
            ]
        })
        .collect();
    if noise_sigma > 0.0 {
        // Box-Muller pairs; one draw pair per coordinate.
        for p in &mut pts {
            for c in p.iter_mut() {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let z = (-2.0 * u1.ln()).sqrt() * u2.cos();
                *c += (z * noise_sigma as f64) as f32;
            }
        }
    }
    normalize(&PointCloud::new(pts)?)
}

fn sample_seed(base: u64, class: usize, index: usize, split: Split) -> u64 {
    let split_offset = match split {
        Split::Train => 0u64,
        Split::Test => 1 << 32,
    };
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((class as u64) << 40)
        .wrapping_add(split_offset)
        .wrapping_add(index as u64)
}

/// Generates `per_class` samples for each of the 8 classes. Train and test
/// splits draw from disjoint seed ranges.
pub fn generate_split(
    per_class: usize,
    n_points: usize,
    noise_sigma: f32,
    base_seed: u64,
    split: Split,
) -> Result<LabeledDataset> {
    let mut samples = Vec::with_capacity(per_class * N_SHAPE_CLASSES);
    for class in 0..N_SHAPE_CLASSES {
        for i in 0..per_class {
            let seed = sample_seed(base_seed, class, i, split);
            samples.push((generate_shape(class, n_points, seed, noise_sigma)?, class));
        }
    }
    Ok(LabeledDataset {
        samples,
        n_classes: N_SHAPE_CLASSES,
        n_points,
        split,
    })
}

pub fn save_dataset(d: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PCDS_MAGIC)?;
    w.write_all(&PCDS_VERSION.to_le_bytes())?;
    w.write_all(&(d.samples.len() as u32).to_le_bytes())?;
    w.write_all(&(d.n_points as u32).to_le_bytes())?;
    w.write_all(&(d.n_classes as u32).to_le_bytes())?;
    for (cloud, label) in &d.samples {
        w.write_all(&(*label as u32).to_le_bytes())?;
        for p in cloud.points() {
            for c in p {
                w.write_all(&c.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(Error::parse(self.offset, format!("file truncated while reading {what}")))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

pub fn load_dataset(path: &Path, split: Split) -> Result<LabeledDataset> {
    let mut r = CountingReader {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != PCDS_MAGIC {
        return Err(Error::parse(0, format!("bad magic {magic:?}, expected `PCDS`")));
    }
    let version = r.u32("version")?;
    if version != PCDS_VERSION {
        return Err(Error::parse(4, format!("unsupported PCDS version {version}")));
    }
    let n_samples = r.u32("sample count")? as usize;
    let n_points = r.u32("point count")? as usize;
    let n_classes = r.u32("class count")? as usize;
    if n_points == 0 || n_classes == 0 {
        return Err(Error::parse(8, "zero point or class count"));
    }
    let mut samples = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let label = r.u32(&format!("label of sample {s}"))? as usize;
        if label >= n_classes {
            return Err(Error::parse(
                r.offset - 4,
                format!("sample {s} label {label} >= n_classes {n_classes}"),
            ));
        }
        let mut buf = vec![0u8; n_points * 12];
        r.read_exact_at(&mut buf, &format!("points of sample {s}"))?;
        let pts: Vec<[f32; 3]> = buf
            .chunks_exact(12)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    f32::from_le_bytes(c[8..12].try_into().unwrap()),
                ]
            })
            .collect();
        let cloud = PointCloud::new(pts)
            .map_err(|e| Error::parse(r.offset, format!("sample {s}: {e}")))?;
        samples.push((cloud, label));
    }
    Ok(LabeledDataset {
        samples,
        n_classes,
        n_points,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_are_equidistant_from_centroid() {
        let x = generate_shape(0, 128, 7, 0.0).unwrap();
        let d: Vec<f64> = x
            .points()
            .iter()
            .map(|p| (p.iter().map(|&c| (c as f64).powi(2)).sum::<f64>()).sqrt())
            .collect();
        let r = d[0];
        assert!(d.iter().all(|&v| (v - r).abs() < 1e-5));
    }

    #[test]
    fn disk_is_flat() {
        // Rotation about z keeps the disk in a constant-z plane.
        let x = generate_shape(5, 64, 3, 0.0).unwrap();
        let z0 = x.points()[0][2];
        assert!(x.points().iter().all(|p| (p[2] - z0).abs() < 1e-5));
    }

    #[test]
    fn torus_satisfies_implicit_equation_after_normalization() {
        let x = generate_shape(4, 256, 11, 0.0).unwrap();
        // The normalized torus still satisfies (sqrt(x^2+y^2) - 2r)^2 + z^2 = r^2
        // for the scaled minor radius r. Recover r by linear regression:
        // rho^2 + z^2 = 4 r rho - 3 r^2 is linear in (4r, -3r^2).
        let mut sx = 0.0f64;
        let mut sy = 0.0f64;
        let mut sxx = 0.0f64;
        let mut sxy = 0.0f64;
        let n = x.len() as f64;
        let rows: Vec<(f64, f64)> = x
            .points()
            .iter()
            .map(|p| {
                let rho = ((p[0] as f64).powi(2) + (p[1] as f64).powi(2)).sqrt();
                let u = rho * rho + (p[2] as f64).powi(2);
                (rho, u)
            })
            .collect();
        for &(rho, u) in &rows {
            sx += rho;
            sy += u;
            sxx += rho * rho;
            sxy += rho * u;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let r = slope / 4.0;
        for p in x.points() {
            let rho = ((p[0] as f64).powi(2) + (p[1] as f64).powi(2)).sqrt();
            let resid = ((rho - 2.0 * r).powi(2) + (p[2] as f64).powi(2) - r * r).abs();
            assert!(resid < 1e-4, "residual {resid} at r={r}");
        }
    }

    #[test]
    fn normalize_contracts() {
        let x = generate_shape(2, 64, 5, 0.02).unwrap();
        // Idempotence.
        let y = normalize(&x).unwrap();
        for (p, q) in x.points().iter().zip(y.points()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-6);
            }
        }
        // Similarity invariance.
        let scaled = PointCloud::new(
            x.points()
                .iter()
                .map(|p| [p[0] * 7.0 + 5.0, p[1] * 7.0 + 5.0, p[2] * 7.0 + 5.0])
                .collect(),
        )
        .unwrap();
        let z = normalize(&scaled).unwrap();
        for (p, q) in x.points().iter().zip(z.points()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-4);
            }
        }
        // Max norm exactly 1.
        let max = y
            .points()
            .iter()
            .map(|p| p.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        assert!((max - 1.0).abs() < 1e-6);
        // Degenerate cloud rejected.
        let degen = PointCloud::new(vec![[1.0, 2.0, 3.0]; 4]).unwrap();
        assert!(normalize(&degen).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_split_disjoint() {
        let a = generate_shape(3, 64, 42, 0.02).unwrap();
        let b = generate_shape(3, 64, 42, 0.02).unwrap();
        assert_eq!(a.points(), b.points());
        assert_ne!(
            sample_seed(1, 0, 0, Split::Train),
            sample_seed(1, 0, 0, Split::Test)
        );
    }

    #[test]
    fn unknown_class_is_rejected() {
        assert!(generate_shape(8, 16, 0, 0.0).is_err());
    }

    #[test]
    fn pcds_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.pcds");
        let d = generate_split(2, 32, 0.02, 9, Split::Train).unwrap();
        save_dataset(&d, &path).unwrap();
        let loaded = load_dataset(&path, Split::Train).unwrap();
        assert_eq!(loaded.len(), d.len());
        for ((a, la), (b, lb)) in d.samples.iter().zip(&loaded.samples) {
            assert_eq!(la, lb);
            assert_eq!(a.points(), b.points());
        }

        // Corrupt the magic.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_dataset(&path, Split::Train).unwrap_err();
        assert!(err.to_string().contains("PCDS"), "{err}");

        // Truncate inside sample 1: header (20) + sample 0 (4 + 32*12) + a bit.
        save_dataset(&d, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = 20 + 4 + 32 * 12 + 10;
        std::fs::write(&path, &bytes[..cut]).unwrap();
        let err = load_dataset(&path, Split::Train).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sample 1") && msg.contains("truncated"), "{msg}");
    }
}
