//! Dataset ingestion: IDX image files, synthetic sparse signals, raw-dump
//! caching, and train/test splitting. Pixels are normalized to [0, 1].

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    IdxFile,
    SyntheticSparse,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// `n * h * w` values in [0, 1], row-major per image.
    images: Vec<f64>,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub source: Source,
}

impl Dataset {
    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.h * self.w;
        &self.images[i * p..(i + 1) * p]
    }

    pub fn signal_len(&self) -> usize {
        self.h * self.w
    }

    /// Disjoint seeded train/test split.
    pub fn split(&mut self, train_size: usize, test_size: usize, seed: u64) -> Result<()> {
        if train_size + test_size > self.n {
            return Err(Error::invalid(format!(
                "split needs {} images, dataset has {}",
                train_size + test_size,
                self.n
            )));
        }
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut seeding::rng(seed, 0));
        self.train_idx = idx[..train_size].to_vec();
        self.test_idx = idx[train_size..train_size + test_size].to_vec();
        Ok(())
    }
}

fn read_u32_be(data: &[u8], off: usize, path: &str) -> Result<u32> {
    data.get(off..off + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            detail: format!("truncated header at offset {off}"),
        })
}

/// Load an IDX image file (optionally sanity-checking a label file), with
/// big-endian magic `0x00000803`, dimension header, and u8 pixels scaled by
/// 1/255.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>, limit: Option<usize>) -> Result<Dataset> {
    let path_str = images_path.display().to_string();
    let data = fs::read(images_path).map_err(|e| Error::io(path_str.clone(), e))?;
    let magic = read_u32_be(&data, 0, &path_str)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: path_str,
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let n_total = read_u32_be(&data, 4, &path_str)? as usize;
    let h = read_u32_be(&data, 8, &path_str)? as usize;
    let w = read_u32_be(&data, 12, &path_str)? as usize;
    let n = limit.map_or(n_total, |l| l.min(n_total));
    let need = 16 + n * h * w;
    if data.len() < need {
        return Err(Error::Parse {
            path: path_str,
            detail: format!("need {need} bytes for {n} images, file has {}", data.len()),
        });
    }
    if let Some(lp) = labels_path {
        let lp_str = lp.display().to_string();
        let ldata = fs::read(lp).map_err(|e| Error::io(lp_str.clone(), e))?;
        let lmagic = read_u32_be(&ldata, 0, &lp_str)?;
        if lmagic != IDX_LABELS_MAGIC {
            return Err(Error::BadMagic {
                path: lp_str,
                expected: IDX_LABELS_MAGIC,
                got: lmagic,
            });
        }
        let ln = read_u32_be(&ldata, 4, &lp_str)? as usize;
        if ln < n {
            return Err(Error::Parse {
                path: lp_str,
                detail: format!("{ln} labels for {n} images"),
            });
        }
    }
    let images = data[16..need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Dataset {
        images,
        n,
        h,
        w,
        train_idx: Vec::new(),
        test_idx: Vec::new(),
        source: Source::IdxFile,
    })
}

/// Write images as an IDX file (u8 pixels), for fixtures and round-trips.
pub fn write_idx(path: &Path, n: usize, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != n * h * w {
        return Err(Error::ShapeMismatch {
            context: "write_idx",
            expected: format!("{}", n * h * w),
            got: format!("{}", pixels.len()),
        });
    }
    let mut data = Vec::with_capacity(16 + pixels.len());
    data.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    data.extend((n as u32).to_be_bytes());
    data.extend((h as u32).to_be_bytes());
    data.extend((w as u32).to_be_bytes());
    data.extend(pixels);
    fs::write(path, data).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Synthetic sparse signals: exactly `k` nonzeros per signal at uniform
/// positions with magnitudes uniform in (0.2, 1.0), clipped to [0, 1].
/// Signals are shaped `sqrt(p) x sqrt(p)` when `p` is a perfect square,
/// `1 x p` otherwise.
pub fn synthetic_sparse(n: usize, p: usize, k: usize, seed: u64) -> Result<Dataset> {
    if k > p {
        return Err(Error::invalid(format!("sparsity k={k} exceeds length p={p}")));
    }
    let root = (p as f64).sqrt().round() as usize;
    let (h, w) = if root * root == p { (root, root) } else { (1, p) };
    let mut images = vec![0.0; n * p];
    for i in 0..n {
        let mut rng = seeding::rng(seed, i as u64);
        let mut pos: Vec<usize> = (0..p).collect();
        pos.shuffle(&mut rng);
        for &j in pos.iter().take(k) {
            let m: f64 = 0.2 + 0.8 * rng.random::<f64>();
            images[i * p + j] = m.clamp(0.0, 1.0);
        }
    }
    Ok(Dataset {
        images,
        n,
        h,
        w,
        train_idx: Vec::new(),
        test_idx: Vec::new(),
        source: Source::SyntheticSparse,
    })
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    n: usize,
    h: usize,
    w: usize,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    source: Source,
}

/// Cache a dataset as a raw little-endian f64 dump plus a JSON sidecar
/// describing shape and split.
pub fn save_cache(ds: &Dataset, data_path: &Path) -> Result<()> {
    let mut raw = Vec::with_capacity(ds.images.len() * 8);
    for v in &ds.images {
        raw.extend(v.to_le_bytes());
    }
    fs::write(data_path, raw).map_err(|e| Error::io(data_path.display().to_string(), e))?;
    let sidecar = CacheSidecar {
        n: ds.n,
        h: ds.h,
        w: ds.w,
        train_idx: ds.train_idx.clone(),
        test_idx: ds.test_idx.clone(),
        source: ds.source,
    };
    let json_path = data_path.with_extension("json");
    fs::write(&json_path, serde_json::to_vec_pretty(&sidecar)?)
        .map_err(|e| Error::io(json_path.display().to_string(), e))
}

pub fn load_cache(data_path: &Path) -> Result<Dataset> {
    let json_path = data_path.with_extension("json");
    let sidecar: CacheSidecar = serde_json::from_slice(
        &fs::read(&json_path).map_err(|e| Error::io(json_path.display().to_string(), e))?,
    )?;
    let raw = fs::read(data_path).map_err(|e| Error::io(data_path.display().to_string(), e))?;
    let expect = sidecar.n * sidecar.h * sidecar.w * 8;
    if raw.len() != expect {
        return Err(Error::Parse {
            path: data_path.display().to_string(),
            detail: format!("expected {expect} bytes, got {}", raw.len()),
        });
    }
    let images = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect();
    Ok(Dataset {
        images,
        n: sidecar.n,
        h: sidecar.h,
        w: sidecar.w,
        train_idx: sidecar.train_idx,
        test_idx: sidecar.test_idx,
        source: sidecar.source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_fixture_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs.idx");
        // Two 2x2 images with hand-picked bytes.
        let pixels = [0u8, 255, 128, 64, 1, 2, 3, 4];
        write_idx(&path, 2, 2, 2, &pixels).unwrap();
        let ds = load_idx(&path, None, None).unwrap();
        assert_eq!(ds.n, 2);
        assert_eq!((ds.h, ds.w), (2, 2));
        let expect: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
        assert_eq!(ds.image(0), &expect[..4]);
        assert_eq!(ds.image(1), &expect[4..]);
        // Round-trip: write what we read, compare bytes.
        let path2 = dir.path().join("imgs2.idx");
        let back: Vec<u8> = ds
            .image(0)
            .iter()
            .chain(ds.image(1))
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        write_idx(&path2, 2, 2, 2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels_as_images.idx");
        let mut data = Vec::new();
        data.extend(IDX_LABELS_MAGIC.to_be_bytes());
        data.extend(2u32.to_be_bytes());
        data.extend([7u8, 3]);
        fs::write(&path, data).unwrap();
        assert!(matches!(
            load_idx(&path, None, None),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn limit_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("many.idx");
        write_idx(&path, 50, 2, 2, &vec![9u8; 200]).unwrap();
        let ds = load_idx(&path, None, Some(10)).unwrap();
        assert_eq!(ds.n, 10);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.idx");
        let mut data = Vec::new();
        data.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        data.extend(10u32.to_be_bytes());
        data.extend(2u32.to_be_bytes());
        data.extend(2u32.to_be_bytes());
        data.extend([0u8; 5]); // far fewer than 40 pixels
        fs::write(&path, data).unwrap();
        assert!(matches!(load_idx(&path, None, None), Err(Error::Parse { .. })));
    }

    #[test]
    fn synthetic_sparsity_is_exact() {
        let ds = synthetic_sparse(100, 64, 5, 3).unwrap();
        assert_eq!((ds.h, ds.w), (8, 8));
        for i in 0..100 {
            let nz = ds.image(i).iter().filter(|&&v| v != 0.0).count();
            assert_eq!(nz, 5, "image {i}");
            assert!(ds.image(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let zeros = synthetic_sparse(3, 16, 0, 4).unwrap();
        assert!(zeros.image(0).iter().all(|&v| v == 0.0));
        let dense = synthetic_sparse(3, 16, 16, 5).unwrap();
        assert!(dense.image(1).iter().all(|&v| v != 0.0));
        assert!(synthetic_sparse(1, 4, 5, 0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let mut ds = synthetic_sparse(30, 16, 3, 6).unwrap();
        ds.split(20, 10, 7).unwrap();
        assert_eq!(ds.train_idx.len(), 20);
        assert_eq!(ds.test_idx.len(), 10);
        for t in &ds.test_idx {
            assert!(!ds.train_idx.contains(t));
        }
        let mut ds2 = synthetic_sparse(30, 16, 3, 6).unwrap();
        ds2.split(20, 10, 7).unwrap();
        assert_eq!(ds.train_idx, ds2.train_idx);
        assert!(ds2.split(25, 10, 7).is_err());
    }

    #[test]
    fn cache_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = synthetic_sparse(12, 64, 4, 8).unwrap();
        ds.split(8, 4, 9).unwrap();
        let path = dir.path().join("cache.f64");
        save_cache(&ds, &path).unwrap();
        let back = load_cache(&path).unwrap();
        assert_eq!(ds.images, back.images);
        assert_eq!(ds.train_idx, back.train_idx);
        assert_eq!(ds.test_idx, back.test_idx);
        assert_eq!(ds.source, back.source);
    }
}
