//! Sample loading (IDX), synthetic logistic data and IID partitioning.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::{dot, ModelParams, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// The samples held by one benign device (ids start at 1).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDataset {
    pub device_id: usize,
    pub samples: Vec<Sample>,
}

impl LocalDataset {
    pub fn new(device_id: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("local dataset"));
        }
        Ok(Self { device_id, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].x.len()
    }
}

/// Reads a whole file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(format!("inflating {}", path.display()), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::IdxFormat {
            path: self.path.to_path_buf(),
            offset: self.pos,
            expected: format!("4-byte {what}"),
            found: format!("{} bytes left", self.bytes.len().saturating_sub(self.pos)),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let offset = self.pos;
        let found = self.u32_be("magic number")?;
        if found != expected {
            return Err(Error::IdxFormat {
                path: self.path.to_path_buf(),
                offset,
                expected: format!("magic {expected:#010x}"),
                found: format!("{found:#010x}"),
            });
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        self.bytes
            .get(self.pos..self.pos + len)
            .ok_or_else(|| Error::IdxFormat {
                path: self.path.to_path_buf(),
                offset: self.bytes.len(),
                expected: format!("{len} payload bytes from offset {}", self.pos),
                found: format!("{} bytes", self.bytes.len().saturating_sub(self.pos)),
            })
    }
}

/// Loads an IDX image/label file pair (raw or gzip-compressed).
///
/// Pixels are scaled by `1/255`; labels keep their integer value.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = read_maybe_gz(images_path)?;
    let label_bytes = read_maybe_gz(labels_path)?;

    let mut img = IdxReader {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    img.magic(IDX_IMAGES_MAGIC)?;
    let count = img.u32_be("image count")? as usize;
    let rows = img.u32_be("row count")? as usize;
    let cols = img.u32_be("column count")? as usize;
    let pixels = rows * cols;
    let image_data = img.payload(count * pixels)?;

    let mut lab = IdxReader {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    lab.magic(IDX_LABELS_MAGIC)?;
    let label_count = lab.u32_be("label count")? as usize;
    if label_count != count {
        return Err(Error::IdxFormat {
            path: labels_path.to_path_buf(),
            offset: 4,
            expected: format!("label count {count} (from image header)"),
            found: label_count.to_string(),
        });
    }
    let labels = lab.payload(count)?;

    Ok(image_data
        .chunks_exact(pixels.max(1))
        .take(count)
        .zip(labels)
        .map(|(px, &label)| Sample {
            x: px.iter().map(|&b| f64::from(b) / 255.0).collect(),
            y: f64::from(label),
        })
        .collect())
}

/// Serializes images (`count x rows x cols` bytes) in IDX format.
pub fn encode_idx_images(images: &[Vec<u8>], rows: u32, cols: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Keeps two classes and relabels them `class_a -> 0.0`, `class_b -> 1.0`.
pub fn binarize(samples: &[Sample], class_a: u8, class_b: u8) -> Result<Vec<Sample>> {
    if class_a == class_b {
        return Err(Error::InvalidArgument(format!(
            "binarize needs two distinct classes, got {class_a} twice"
        )));
    }
    let (a, b) = (f64::from(class_a), f64::from(class_b));
    let out: Vec<Sample> = samples
        .iter()
        .filter_map(|s| {
            if s.y == a {
                Some(Sample::new(s.x.clone(), 0.0))
            } else if s.y == b {
                Some(Sample::new(s.x.clone(), 1.0))
            } else {
                None
            }
        })
        .collect();
    if out.is_empty() {
        return Err(Error::Empty("no samples of the selected classes"));
    }
    Ok(out)
}

/// `n` samples with standard-normal features and Bernoulli(σ(w_true·x)) labels.
pub fn synth_logistic(n: usize, w_true: &ModelParams, rng: &mut RngStream) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Empty("synthetic sample count"));
    }
    let d = w_true.dim();
    Ok((0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            let p = crate::training::sigmoid(dot(w_true.as_slice(), &x));
            let y = if rng.unit() < p { 1.0 } else { 0.0 };
            Sample::new(x, y)
        })
        .collect())
}

/// Shuffles once, then deals `sizes[n]` contiguous samples to device `n + 1`.
pub fn partition_iid(samples: &[Sample], sizes: &[usize], rng: &mut RngStream) -> Result<Vec<LocalDataset>> {
    if sizes.is_empty() {
        return Err(Error::Empty("device list"));
    }
    let needed: usize = sizes.iter().sum();
    if needed > samples.len() {
        return Err(Error::InsufficientSamples {
            needed,
            available: samples.len(),
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);

    let mut cursor = 0;
    sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            let chunk = order[cursor..cursor + size]
                .iter()
                .map(|&k| samples[k].clone())
                .collect();
            cursor += size;
            LocalDataset::new(i + 1, chunk)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn loads_header_count_and_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![vec![0u8; 784], vec![255u8; 784], vec![7u8; 784]];
        let ip = write(dir.path(), "img", &encode_idx_images(&images, 28, 28));
        let lp = write(dir.path(), "lab", &encode_idx_labels(&[3, 1, 4]));
        let s = load_idx(&ip, &lp).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].x, vec![0.0; 784]);
        assert_eq!(s[1].x[0], 1.0);
        assert_eq!(s.iter().map(|s| s.y).collect::<Vec<_>>(), vec![3.0, 1.0, 4.0]);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let images = encode_idx_images(&[vec![1u8; 4], vec![2u8; 4]], 2, 2);
        let labels = encode_idx_labels(&[0, 1]);

        let ip = write(dir.path(), "img", &images);
        let bad = write(dir.path(), "bad", &labels);
        let err = load_idx(&bad, &bad).unwrap_err().to_string();
        assert!(err.contains("offset 0") && err.contains("0x00000803"), "{err}");

        let trunc = write(dir.path(), "trunc", &images[..images.len() - 1]);
        let lp = write(dir.path(), "lab", &labels);
        let err = load_idx(&trunc, &lp).unwrap_err().to_string();
        assert!(err.contains("payload bytes"), "{err}");

        let lp3 = write(dir.path(), "lab3", &encode_idx_labels(&[0, 1, 2]));
        let err = load_idx(&ip, &lp3).unwrap_err().to_string();
        assert!(err.contains("label count 2"), "{err}");
    }

    #[test]
    fn reads_gzip_transparently() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&encode_idx_images(&[vec![51u8; 4]], 2, 2)).unwrap();
        let ip = write(dir.path(), "img.gz", &enc.finish().unwrap());
        let lp = write(dir.path(), "lab", &encode_idx_labels(&[9]));
        let s = load_idx(&ip, &lp).unwrap();
        assert_eq!(s[0].x, vec![0.2; 4]);
        assert_eq!(s[0].y, 9.0);
    }

    #[test]
    fn binarize_relabels_and_guards_empty() {
        let s = vec![
            Sample::new(vec![0.0], 2.0),
            Sample::new(vec![1.0], 5.0),
            Sample::new(vec![2.0], 2.0),
        ];
        let only_a = binarize(&s, 2, 7).unwrap();
        assert_eq!(only_a.iter().map(|s| s.y).collect::<Vec<_>>(), vec![0.0, 0.0]);
        let both = binarize(&s, 5, 2).unwrap();
        assert_eq!(both.iter().map(|s| s.y).collect::<Vec<_>>(), vec![1.0, 0.0, 1.0]);
        assert!(binarize(&s, 3, 4).is_err());
        assert!(binarize(&s, 2, 2).is_err());
    }

    #[test]
    fn synthetic_zero_weights_give_balanced_labels() {
        let mut rng = RngStream::new(1, "synth");
        let s = synth_logistic(10_000, &ModelParams::zeros(4), &mut rng).unwrap();
        let mean = s.iter().map(|s| s.y).sum::<f64>() / s.len() as f64;
        assert!((mean - 0.5).abs() <= 0.02, "{mean}");
    }

    #[test]
    fn synthetic_large_weights_follow_sign() {
        let mut w = vec![0.0; 5];
        w[2] = 100.0;
        let w = ModelParams::new(w).unwrap();
        let s = synth_logistic(2000, &w, &mut RngStream::new(2, "synth")).unwrap();
        let agree = s
            .iter()
            .filter(|s| (dot(w.as_slice(), &s.x) > 0.0) == (s.y == 1.0))
            .count();
        assert!(agree as f64 / s.len() as f64 > 0.99);
    }

    #[test]
    fn synthetic_is_deterministic_and_rejects_zero_n() {
        let w = ModelParams::new(vec![1.0, -1.0]).unwrap();
        let a = synth_logistic(50, &w, &mut RngStream::new(9, "s")).unwrap();
        let b = synth_logistic(50, &w, &mut RngStream::new(9, "s")).unwrap();
        assert_eq!(a, b);
        assert!(synth_logistic(0, &w, &mut RngStream::new(9, "s")).is_err());
    }

    fn tagged(n: usize) -> Vec<Sample> {
        (0..n).map(|i| Sample::new(vec![i as f64], 0.0)).collect()
    }

    #[test]
    fn partition_examples() {
        let mut rng = RngStream::new(4, "part");
        let one = partition_iid(&tagged(6), &[6], &mut rng).unwrap();
        let mut ids: Vec<f64> = one[0].samples.iter().map(|s| s.x[0]).collect();
        ids.sort_by(f64::total_cmp);
        assert_eq!(ids, (0..6).map(|i| i as f64).collect::<Vec<_>>());

        let two = partition_iid(&tagged(2), &[1, 1], &mut rng).unwrap();
        assert_ne!(two[0].samples[0].x, two[1].samples[0].x);
        assert_eq!((two[0].device_id, two[1].device_id), (1, 2));

        let err = partition_iid(&tagged(3), &[2, 2], &mut rng).unwrap_err();
        assert_eq!(err.to_string(), "insufficient samples: need 4, have 3");
    }

    #[test]
    fn partition_union_is_original_multiset() {
        let mut rng = RngStream::new(8, "part");
        let parts = partition_iid(&tagged(1000), &[200; 5], &mut rng).unwrap();
        let mut seen = vec![0usize; 1000];
        for p in &parts {
            assert_eq!(p.len(), 200);
            for s in &p.samples {
                seen[s.x[0] as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_and_size_exact(
            seed in any::<u64>(),
            sizes in proptest::collection::vec(1usize..30, 1..8),
            extra in 0usize..20,
        ) {
            let total: usize = sizes.iter().sum::<usize>() + extra;
            let parts = partition_iid(&tagged(total), &sizes, &mut RngStream::new(seed, "p")).unwrap();
            let mut seen = vec![false; total];
            for (p, &size) in parts.iter().zip(&sizes) {
                prop_assert_eq!(p.len(), size);
                for s in &p.samples {
                    let k = s.x[0] as usize;
                    prop_assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }

        #[test]
        fn idx_round_trip_reproduces_bytes(
            images in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 6), 1..10),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let labels: Vec<u8> = (0..images.len() as u8).collect();
            let ip = write(dir.path(), "i", &encode_idx_images(&images, 2, 3));
            let lp = write(dir.path(), "l", &encode_idx_labels(&labels));
            let s = load_idx(&ip, &lp).unwrap();
            for (sample, img) in s.iter().zip(&images) {
                let back: Vec<u8> = sample.x.iter().map(|v| (v * 255.0).round() as u8).collect();
                prop_assert_eq!(&back, img);
            }
        }
    }
}
