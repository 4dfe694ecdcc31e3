//! PCKP checkpoint format.
//!
//! Layout: magic `PCKP`, u32 version=1, u32 tensor count; per tensor a u16
//! name length, the UTF-8 name, u8 ndim, ndim x u32 dims, and little-endian
//! f32 data. The architecture descriptor and scalar hyperparameters are
//! stored as named metadata tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorBundle};

use super::ae::AEModel;
use super::classifier::{Arch, ClassifierModel};

const MAGIC: &[u8; 4] = b"PCKP";
const VERSION: u32 = 1;

fn write_bundle(path: &Path, bundle: &TensorBundle) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(bundle.len() as u32).to_le_bytes())?;
    for (name, t) in bundle.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_bundle(path: &Path) -> Result<TensorBundle> {
    let mut r = BufReader::new(File::open(path)?);
    let mut offset = 0u64;
    let mut read = |buf: &mut [u8], what: &str, offset: &mut u64| -> Result<()> {
        r.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::parse(*offset, format!("checkpoint truncated while reading {what}"))
            } else {
                e.into()
            }
        })?;
        *offset += buf.len() as u64;
        Ok(())
    };
    let mut magic = [0u8; 4];
    read(&mut magic, "magic", &mut offset)?;
    if &magic != MAGIC {
        return Err(Error::parse(0, format!("bad magic {magic:?}, expected `PCKP`")));
    }
    let mut b4 = [0u8; 4];
    read(&mut b4, "version", &mut offset)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported PCKP version {version}")));
    }
    read(&mut b4, "tensor count", &mut offset)?;
    let count = u32::from_le_bytes(b4);
    let mut bundle = TensorBundle::new();
    for i in 0..count {
        let mut b2 = [0u8; 2];
        read(&mut b2, "name length", &mut offset)?;
        let name_len = u16::from_le_bytes(b2) as usize;
        let mut name_buf = vec![0u8; name_len];
        read(&mut name_buf, "tensor name", &mut offset)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::parse(offset, format!("tensor {i} name is not UTF-8")))?;
        let mut b1 = [0u8; 1];
        read(&mut b1, "ndim", &mut offset)?;
        let ndim = b1[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            read(&mut b4, "dim", &mut offset)?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data_buf = vec![0u8; len * 4];
        read(&mut data_buf, &format!("data of `{name}`"), &mut offset)?;
        let data = data_buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        bundle.insert(name, Tensor::from_vec(&shape, data)?);
    }
    Ok(bundle)
}

fn meta_scalar(bundle: &mut TensorBundle, name: &str, value: f32) {
    bundle.insert(name, Tensor::from_vec(&[1], vec![value]).unwrap());
}

fn get_meta(bundle: &TensorBundle, name: &str) -> Result<f32> {
    bundle
        .try_get(name)
        .and_then(|t| t.data().first().copied())
        .ok_or_else(|| Error::invalid_input(format!("checkpoint missing metadata `{name}`")))
}

pub fn save_classifier(m: &ClassifierModel, path: &Path) -> Result<()> {
    let mut bundle = m.params.clone();
    let arch_code = match m.arch {
        Arch::PointnetTiny => 0.0,
        Arch::PointnetWide => 1.0,
        Arch::EdgeconvLite => 2.0,
    };
    meta_scalar(&mut bundle, "__meta.arch", arch_code);
    meta_scalar(&mut bundle, "__meta.k_classes", m.k_classes as f32);
    meta_scalar(&mut bundle, "__meta.knn_k", m.knn_k as f32);
    write_bundle(path, &bundle)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierModel> {
    let bundle = read_bundle(path)?;
    let arch = match get_meta(&bundle, "__meta.arch")? as i64 {
        0 => Arch::PointnetTiny,
        1 => Arch::PointnetWide,
        2 => Arch::EdgeconvLite,
        c => return Err(Error::invalid_input(format!("unknown arch code {c}"))),
    };
    let k_classes = get_meta(&bundle, "__meta.k_classes")? as usize;
    let knn_k = get_meta(&bundle, "__meta.knn_k")? as usize;
    let mut params = TensorBundle::new();
    for (name, t) in bundle.iter() {
        if !name.starts_with("__meta.") {
            params.insert(name.clone(), t.clone());
        }
    }
    Ok(ClassifierModel {
        arch,
        k_classes,
        knn_k,
        params,
    })
}

pub fn save_ae(m: &AEModel, path: &Path) -> Result<()> {
    let mut bundle = m.params.clone();
    meta_scalar(&mut bundle, "__meta.latent_dim", m.latent_dim as f32);
    meta_scalar(&mut bundle, "__meta.n_points", m.n_points as f32);
    write_bundle(path, &bundle)
}

pub fn load_ae(path: &Path) -> Result<AEModel> {
    let bundle = read_bundle(path)?;
    let latent_dim = get_meta(&bundle, "__meta.latent_dim")? as usize;
    let n_points = get_meta(&bundle, "__meta.n_points")? as usize;
    let mut params = TensorBundle::new();
    for (name, t) in bundle.iter() {
        if !name.starts_with("__meta.") {
            params.insert(name.clone(), t.clone());
        }
    }
    Ok(AEModel {
        latent_dim,
        n_points,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classifier_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pckp");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = ClassifierModel::init(Arch::EdgeconvLite, 6, &mut rng).unwrap();
        save_classifier(&m, &path).unwrap();
        let back = load_classifier(&path).unwrap();
        assert_eq!(back.arch, m.arch);
        assert_eq!(back.k_classes, 6);
        assert_eq!(back.knn_k, m.knn_k);
        assert_eq!(back.params, m.params);
    }

    #[test]
    fn ae_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pckp");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = AEModel::init(16, 32, &mut rng).unwrap();
        save_ae(&g, &path).unwrap();
        let back = load_ae(&path).unwrap();
        assert_eq!(back.latent_dim, 16);
        assert_eq!(back.n_points, 32);
        assert_eq!(back.params, g.params);
    }

    #[test]
    fn corrupt_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pckp");
        std::fs::write(&path, b"XCKPxxxxxxxx").unwrap();
        let err = load_classifier(&path).unwrap_err();
        assert!(err.to_string().contains("PCKP"));
    }
}
