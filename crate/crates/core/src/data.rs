//! Dataset generation, ingestion, and batch sampling.
//!
//! Synthetic datasets are Gaussian class prototypes plus pixel noise, stored
//! on disk as a `meta.json` plus flat binary splits (one label byte then the
//! example's f64 little-endian values per record). The CIFAR-10 reader
//! consumes the published binary batch layout bit-exactly: 10,000 records
//! per file, each 1 label byte followed by 3,072 pixel bytes.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netbuild::Batch;
use crate::seed::subseed;
use crate::tensor::Tensor;

/// One labelled split held in memory.
#[derive(Debug, Clone)]
pub struct Split {
    pub examples: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub shape: Vec<usize>,
    pub classes: usize,
    pub train: Split,
    pub val: Split,
}

/// Parameters of the synthetic prototype dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub shape: Vec<usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            shape: vec![3, 8, 8],
            n_train: 256,
            n_val: 128,
            noise: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    schema_version: u32,
    kind: String,
    classes: usize,
    shape: Vec<usize>,
    n_train: usize,
    n_val: usize,
    noise: f64,
    seed: u64,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Builds the synthetic dataset in memory. Labels cycle through the classes;
/// example `i` is its class prototype plus `noise`-scaled Gaussian pixels.
pub fn synthetic_in_memory(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::contract("need at least two classes"));
    }
    if spec.classes > 255 {
        return Err(Error::contract("labels are stored as one byte; classes must fit in 0..=255"));
    }
    if spec.n_train == 0 || spec.n_val == 0 {
        return Err(Error::contract("both splits must be non-empty"));
    }
    let numel: usize = spec.shape.iter().product();
    if numel == 0 {
        return Err(Error::contract("example shape must be non-empty"));
    }

    let mut proto_rng = ChaCha8Rng::seed_from_u64(subseed(spec.seed, 10, 0));
    // Prototypes are channel-centered Gaussian patterns: classes differ in
    // spatial structure, not in channel means, so a plain pooled-linear path
    // cannot shortcut the task.
    let channel_len = match spec.shape.as_slice() {
        [c, rest @ ..] if !rest.is_empty() => {
            let px: usize = rest.iter().product();
            let _ = c;
            px
        }
        _ => numel,
    };
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let mut proto: Vec<f64> = (0..numel).map(|_| gauss(&mut proto_rng)).collect();
            for chunk in proto.chunks_mut(channel_len) {
                let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
                chunk.iter_mut().for_each(|v| *v -= mean);
            }
            proto
        })
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(subseed(spec.seed, 11, 0));
    let mut make_split = |n: usize| -> Result<Split> {
        let mut examples = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % spec.classes;
            let data: Vec<f64> = prototypes[label]
                .iter()
                .map(|p| p + spec.noise * gauss(&mut noise_rng))
                .collect();
            examples.push(Tensor::new(spec.shape.clone(), data)?);
            labels.push(label);
        }
        Ok(Split { examples, labels })
    };

    let train = make_split(spec.n_train)?;
    let val = make_split(spec.n_val)?;
    Ok(Dataset {
        shape: spec.shape.clone(),
        classes: spec.classes,
        train,
        val,
    })
}

fn write_split(path: &Path, split: &Split) -> Result<()> {
    let numel = split.examples.first().map(|e| e.numel()).unwrap_or(0);
    let mut bytes = Vec::with_capacity(split.len() * (1 + numel * 8));
    for (ex, &label) in split.examples.iter().zip(&split.labels) {
        bytes.push(label as u8);
        for v in ex.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_split(path: &Path, shape: &[usize], expected: usize) -> Result<Split> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let numel: usize = shape.iter().product();
    let record = 1 + numel * 8;
    if bytes.len() != expected * record {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!(
                "expected {} records of {} bytes ({} total), file has {} bytes",
                expected,
                record,
                expected * record,
                bytes.len()
            ),
        });
    }
    let mut examples = Vec::with_capacity(expected);
    let mut labels = Vec::with_capacity(expected);
    for r in 0..expected {
        let base = r * record;
        labels.push(bytes[base] as usize);
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let off = base + 1 + i * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[off..off + 8]);
            data.push(f64::from_le_bytes(buf));
        }
        examples.push(Tensor::new(shape.to_vec(), data)?);
    }
    Ok(Split { examples, labels })
}

/// Writes a dataset as `meta.json`, `train.bin`, and `val.bin` under `dir`,
/// creating it if needed. Byte-identical for identical inputs.
pub fn save_dataset(
    dir: &Path,
    dataset: &Dataset,
    kind: &str,
    noise: f64,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        schema_version: 1,
        kind: kind.to_string(),
        classes: dataset.classes,
        shape: dataset.shape.clone(),
        n_train: dataset.train.len(),
        n_val: dataset.val.len(),
        noise,
        seed,
    };
    let mut meta_json = serde_json::to_string_pretty(&meta)?;
    meta_json.push('\n');
    fs::write(dir.join("meta.json"), meta_json).map_err(|e| Error::io(dir.join("meta.json"), e))?;
    write_split(&dir.join("train.bin"), &dataset.train)?;
    write_split(&dir.join("val.bin"), &dataset.val)?;
    Ok(())
}

/// Generates and persists the synthetic dataset, returning it.
pub fn gen_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<Dataset> {
    let dataset = synthetic_in_memory(spec)?;
    save_dataset(dir, &dataset, "synthetic", spec.noise, spec.seed)?;
    Ok(dataset)
}

/// Seeded batch of uniform random inputs with Gaussian scalar targets, for
/// regression-head experiments.
pub fn random_regression_batch(shape: &[usize], n: usize, seed: u64) -> Result<Batch> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel: usize = shape.iter().product();
    let examples: Vec<Tensor> = (0..n)
        .map(|_| {
            Tensor::new(
                shape.to_vec(),
                (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
        })
        .collect::<Result<_>>()?;
    let targets: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
    Batch::from_examples(&examples, &targets)
}

/// Loads a dataset previously written by [`gen_synthetic`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text)?;
    if meta.schema_version != 1 {
        return Err(Error::Format {
            path: meta_path,
            msg: format!("unsupported schema_version {}", meta.schema_version),
        });
    }
    let train = read_split(&dir.join("train.bin"), &meta.shape, meta.n_train)?;
    let val = read_split(&dir.join("val.bin"), &meta.shape, meta.n_val)?;
    Ok(Dataset {
        shape: meta.shape,
        classes: meta.classes,
        train,
        val,
    })
}

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;

/// Reads one CIFAR-10 binary batch file: pixels scaled to [0, 1], labels
/// checked against 0..=9. No mean subtraction here.
pub fn read_cifar_batch(path: &Path) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD_BYTES;
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!(
                "file length {} is not a multiple of the {}-byte record; trailing fragment starts at offset {}",
                bytes.len(),
                CIFAR_RECORD_BYTES,
                offset
            ),
        });
    }
    let count = bytes.len() / CIFAR_RECORD_BYTES;
    let mut examples = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for r in 0..count {
        let base = r * CIFAR_RECORD_BYTES;
        let label = bytes[base] as usize;
        if label > 9 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("label {label} outside 0..=9 at offset {base}"),
            });
        }
        let data: Vec<f64> = bytes[base + 1..base + CIFAR_RECORD_BYTES]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        examples.push(Tensor::new(vec![3, 32, 32], data)?);
        labels.push(label);
    }
    Ok((examples, labels))
}

/// Ingests the standard CIFAR-10 binary directory: `data_batch_*.bin` feed
/// the train split and `test_batch.bin` the validation split, truncated to
/// `take_train` / `take_val` records for desk scale. Channel means are
/// computed over the selected train subset and subtracted from both splits.
pub fn ingest_cifar10(dir: &Path, take_train: usize, take_val: usize) -> Result<Dataset> {
    let mut train_examples = Vec::new();
    let mut train_labels = Vec::new();
    for i in 1..=5 {
        let path = dir.join(format!("data_batch_{i}.bin"));
        if !path.exists() {
            if i == 1 {
                return Err(Error::Format {
                    path,
                    msg: "no data_batch_1.bin in directory".into(),
                });
            }
            continue;
        }
        let (ex, lb) = read_cifar_batch(&path)?;
        train_examples.extend(ex);
        train_labels.extend(lb);
        if train_examples.len() >= take_train {
            break;
        }
    }
    train_examples.truncate(take_train);
    train_labels.truncate(take_train);
    if train_examples.is_empty() {
        return Err(Error::contract("take_train must be positive"));
    }

    let (mut val_examples, mut val_labels) = read_cifar_batch(&dir.join("test_batch.bin"))?;
    val_examples.truncate(take_val);
    val_labels.truncate(take_val);
    if val_examples.is_empty() {
        return Err(Error::contract("take_val must be positive"));
    }

    // Per-channel means over the train subset.
    let px = 32 * 32;
    let mut means = [0.0f64; 3];
    for ex in &train_examples {
        for c in 0..3 {
            means[c] += ex.data()[c * px..(c + 1) * px].iter().sum::<f64>();
        }
    }
    for m in &mut means {
        *m /= (train_examples.len() * px) as f64;
    }
    let subtract = |examples: &mut Vec<Tensor>| {
        for ex in examples.iter_mut() {
            let data = ex.data_mut();
            for c in 0..3 {
                for v in &mut data[c * px..(c + 1) * px] {
                    *v -= means[c];
                }
            }
        }
    };
    subtract(&mut train_examples);
    subtract(&mut val_examples);

    Ok(Dataset {
        shape: vec![3, 32, 32],
        classes: 10,
        train: Split {
            examples: train_examples,
            labels: train_labels,
        },
        val: Split {
            examples: val_examples,
            labels: val_labels,
        },
    })
}

/// Draws `n` examples without replacement from a split as a scoring batch.
pub fn sample_batch(split: &Split, n: usize, seed: u64) -> Result<Batch> {
    if n > split.len() {
        return Err(Error::contract(format!(
            "cannot draw {n} examples from a split of {}",
            split.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, split.len(), n);
    let examples: Vec<Tensor> = picks.iter().map(|i| split.examples[i].clone()).collect();
    let targets: Vec<f64> = picks.iter().map(|i| split.labels[i] as f64).collect();
    Batch::from_examples(&examples, &targets)
}

/// Convenience accessor used by summaries.
pub fn describe(dataset: &Dataset) -> String {
    format!(
        "{} classes, shape {:?}, {} train / {} val examples",
        dataset.classes,
        dataset.shape,
        dataset.train.len(),
        dataset.val.len()
    )
}

pub fn dataset_paths(dir: &Path) -> Vec<PathBuf> {
    ["meta.json", "train.bin", "val.bin"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn zero_noise_reproduces_prototypes() {
        let spec = SyntheticSpec {
            noise: 0.0,
            classes: 3,
            shape: vec![4],
            n_train: 9,
            n_val: 3,
            ..Default::default()
        };
        let ds = synthetic_in_memory(&spec).unwrap();
        // Examples of the same class are identical copies of the prototype.
        for i in 0..3 {
            assert_eq!(
                ds.train.examples[i].data(),
                ds.train.examples[i + 3].data()
            );
            assert_eq!(ds.train.examples[i].data(), ds.val.examples[i].data());
        }
    }

    #[test]
    fn generation_is_byte_identical_per_seed() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let spec = SyntheticSpec {
            n_train: 16,
            n_val: 8,
            shape: vec![2, 3, 3],
            ..Default::default()
        };
        gen_synthetic(&spec, &a).unwrap();
        gen_synthetic(&spec, &b).unwrap();
        for f in ["meta.json", "train.bin", "val.bin"] {
            let fa = fs::read(a.join(f)).unwrap();
            let fb = fs::read(b.join(f)).unwrap();
            assert_eq!(fa, fb, "{f} differs");
        }
    }

    #[test]
    fn nearest_class_mean_hits_99_percent_at_low_noise() {
        let spec = SyntheticSpec {
            classes: 4,
            shape: vec![3, 8, 8],
            n_train: 200,
            n_val: 200,
            noise: 0.1,
            seed: 7,
        };
        let ds = synthetic_in_memory(&spec).unwrap();
        let numel: usize = ds.shape.iter().product();
        let mut means = vec![vec![0.0; numel]; ds.classes];
        let mut counts = vec![0usize; ds.classes];
        for (ex, &label) in ds.train.examples.iter().zip(&ds.train.labels) {
            counts[label] += 1;
            for (m, v) in means[label].iter_mut().zip(ex.data()) {
                *m += v;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        let mut correct = 0;
        for (ex, &label) in ds.val.examples.iter().zip(&ds.val.labels) {
            let best = (0..ds.classes)
                .min_by(|&a, &b| {
                    let da: f64 = means[a]
                        .iter()
                        .zip(ex.data())
                        .map(|(m, v)| (m - v) * (m - v))
                        .sum();
                    let db: f64 = means[b]
                        .iter()
                        .zip(ex.data())
                        .map(|(m, v)| (m - v) * (m - v))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best == label {
                correct += 1;
            }
        }
        let acc = correct as f64 / ds.val.len() as f64;
        assert!(acc >= 0.99, "nearest-mean accuracy {acc}");
    }

    #[test]
    fn disk_roundtrip_preserves_everything() {
        let dir = tempdir().unwrap();
        let spec = SyntheticSpec {
            n_train: 12,
            n_val: 6,
            shape: vec![5],
            noise: 0.5,
            ..Default::default()
        };
        let written = gen_synthetic(&spec, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(written.classes, loaded.classes);
        assert_eq!(written.shape, loaded.shape);
        for (a, b) in written.train.examples.iter().zip(&loaded.train.examples) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(written.val.labels, loaded.val.labels);
    }

    fn write_cifar_file(path: &Path, records: usize, fill: u8) {
        let mut bytes = Vec::with_capacity(records * CIFAR_RECORD_BYTES);
        for r in 0..records {
            bytes.push((r % 10) as u8);
            bytes.extend(std::iter::repeat(fill).take(CIFAR_RECORD_BYTES - 1));
        }
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn cifar_batch_file_holds_ten_thousand_records() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        write_cifar_file(&path, CIFAR_RECORDS_PER_FILE, 128);
        let (examples, labels) = read_cifar_batch(&path).unwrap();
        assert_eq!(examples.len(), CIFAR_RECORDS_PER_FILE);
        assert!(labels.iter().all(|&l| l <= 9));
    }

    #[test]
    fn cifar_pixel_255_scales_to_one() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        write_cifar_file(&path, 4, 255);
        let (examples, _) = read_cifar_batch(&path).unwrap();
        assert!(examples[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cifar_truncated_record_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = vec![0u8; CIFAR_RECORD_BYTES * 2];
        bytes.truncate(CIFAR_RECORD_BYTES + 17);
        fs::write(&path, bytes).unwrap();
        match read_cifar_batch(&path) {
            Err(Error::Format { msg, .. }) => {
                assert!(msg.contains("offset"), "{msg}")
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn cifar_ingestion_subtracts_channel_means() {
        let dir = tempdir().unwrap();
        write_cifar_file(&dir.path().join("data_batch_1.bin"), 20, 100);
        write_cifar_file(&dir.path().join("test_batch.bin"), 10, 100);
        let ds = ingest_cifar10(dir.path(), 20, 10).unwrap();
        assert_eq!(ds.train.len(), 20);
        assert_eq!(ds.val.len(), 10);
        // Uniform pixels: every channel mean equals the pixel value, so the
        // centered data is exactly zero.
        for ex in ds.train.examples.iter().chain(&ds.val.examples) {
            assert!(ex.data().iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn batch_sampling_is_seeded_and_distinct() {
        let ds = synthetic_in_memory(&SyntheticSpec {
            n_train: 40,
            n_val: 8,
            shape: vec![4],
            ..Default::default()
        })
        .unwrap();
        let a = sample_batch(&ds.train, 10, 3).unwrap();
        let b = sample_batch(&ds.train, 10, 3).unwrap();
        for i in 0..10 {
            assert_eq!(a.example(i).data(), b.example(i).data());
            assert_eq!(a.target(i), b.target(i));
        }
        assert!(sample_batch(&ds.val, 9, 0).is_err());
    }
}
