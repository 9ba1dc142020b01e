//! Datasets, IDX ingestion, synthetic generators and client partitioning.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Per-row supervision.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major feature matrix with aligned targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    dims: usize,
    features: Vec<f64>,
    targets: Targets,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dims: usize, features: Vec<f64>, targets: Targets) -> Result<Self> {
        if dims == 0 || features.len() % dims != 0 {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: features.len(),
            });
        }
        let rows = features.len() / dims;
        if targets.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: targets.len(),
            });
        }
        if let Targets::Classes { labels, classes } = &targets {
            if let Some(&label) = labels.iter().find(|&&l| l >= *classes) {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: *classes,
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            dims,
            features,
            targets,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.len() / self.dims
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { classes, .. } => Some(*classes),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            Targets::Classes { .. } => None,
        }
    }

    /// Copy of the selected rows.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.dims);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let targets = match &self.targets {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                classes: *classes,
            },
            Targets::Values(v) => Targets::Values(rows.iter().map(|&r| v[r]).collect()),
        };
        Dataset {
            name: self.name.clone(),
            dims: self.dims,
            features,
            targets,
        }
    }

    /// Features rescaled to [0, 1] by the global min and max.
    pub fn min_max_scaled(&self) -> Dataset {
        let lo = self.features.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.features.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        Dataset {
            features: self.features.iter().map(|v| (v - lo) / span).collect(),
            ..self.clone()
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Truncated(format!(
                "{} file: wanted {} bytes at offset {}, have {}",
                self.what,
                n,
                self.pos,
                self.bytes.len()
            ))
        })?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse IDX image bytes: magic `0x00000803`, then `rows`, `height`,
/// `width` as big-endian u32, then `rows × height × width` u8 pixels.
/// Returns `(rows, height * width, pixels scaled to [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "images",
    };
    let magic = r.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let rows = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let pixels = r.take(rows * h * w)?;
    Ok((rows, h * w, pixels.iter().map(|&p| p as f64 / 255.0).collect()))
}

/// Parse IDX label bytes: magic `0x00000801`, count, then u8 labels.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "labels",
    };
    let magic = r.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = r.u32()? as usize;
    Ok(r.take(count)?.iter().map(|&l| l as usize).collect())
}

/// Load an MNIST-style IDX image/label pair. Classes = max label + 1
/// (at least 10 for digit data).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (rows, dims, features) = parse_idx_images(&fs::read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&fs::read(labels_path.as_ref())?)?;
    if labels.len() != rows {
        return Err(Error::CountMismatch {
            images: rows,
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(
        images_path.as_ref().display().to_string(),
        dims,
        features,
        Targets::Classes { labels, classes },
    )
}

/// Encode a classification dataset as IDX bytes `(images, labels)`.
/// Features must lie in [0, 1]; `height * width` must equal `dims`.
pub fn encode_idx(ds: &Dataset, height: usize, width: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if height * width != ds.dims() {
        return Err(Error::DimensionMismatch {
            expected: ds.dims(),
            got: height * width,
        });
    }
    let labels = ds.labels().ok_or(Error::NotAClassifier)?;
    if let Some(&l) = labels.iter().find(|&&l| l > u8::MAX as usize) {
        return Err(Error::LabelOutOfRange {
            label: l,
            classes: 256,
        });
    }
    if ds.features().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(
            "IDX export needs features in [0, 1]; rescale first".into(),
        ));
    }
    let mut images = Vec::with_capacity(16 + ds.features().len());
    for word in [IDX_IMAGES_MAGIC, ds.rows() as u32, height as u32, width as u32] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    images.extend(ds.features().iter().map(|v| (v * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend(labels.iter().map(|&l| l as u8));
    Ok((images, lab))
}

pub fn write_idx(
    ds: &Dataset,
    height: usize,
    width: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images, labels) = encode_idx(ds, height, width)?;
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

/// Gaussian clusters with unit variance, one per class, labels balanced
/// (`row % classes`). Class centers are pairwise `cluster_sep` apart when
/// `dims >= classes` (scaled simplex vertices) or `classes == 2`; otherwise
/// they sit at radius `cluster_sep / 2` in random directions.
pub fn synthetic_classification(
    n_samples: usize,
    dims: usize,
    classes: usize,
    cluster_sep: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if dims == 0 {
        return Err(Error::InvalidArgument("dims must be positive".into()));
    }
    let centers = class_centers(dims, classes, cluster_sep, seed);
    let mut rng = rng_from(seed, &[1]);
    let mut features = Vec::with_capacity(n_samples * dims);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let c = i % classes;
        labels.push(c);
        for d in 0..dims {
            let z: f64 = rng.sample(StandardNormal);
            features.push(centers[c][d] + z);
        }
    }
    Dataset::new(
        format!("synthetic-classification(seed={seed})"),
        dims,
        features,
        Targets::Classes { labels, classes },
    )
}

/// Fixed class centers for a `(dims, classes, sep, seed)` family, so train
/// and test sets drawn with different sample seeds share a distribution.
fn class_centers(dims: usize, classes: usize, sep: f64, seed: u64) -> Vec<Vec<f64>> {
    if dims >= classes {
        let scale = sep / std::f64::consts::SQRT_2;
        return (0..classes)
            .map(|c| (0..dims).map(|d| if d == c { scale } else { 0.0 }).collect())
            .collect();
    }
    let mut rng = rng_from(seed, &[0]);
    let random_unit = |rng: &mut crate::rng::Rng| {
        let v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    if classes == 2 {
        let u = random_unit(&mut rng);
        return vec![
            u.iter().map(|x| x * sep / 2.0).collect(),
            u.iter().map(|x| -x * sep / 2.0).collect(),
        ];
    }
    (0..classes)
        .map(|_| random_unit(&mut rng).into_iter().map(|x| x * sep / 2.0).collect())
        .collect()
}

/// Train/test pair from the same cluster geometry. `centers_seed` fixes the
/// distribution; the two sample streams are independent.
pub fn synthetic_classification_split(
    train_samples: usize,
    test_samples: usize,
    dims: usize,
    classes: usize,
    cluster_sep: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let train = synthetic_classification(train_samples, dims, classes, cluster_sep, seed)?;
    let mut test = synthetic_classification(test_samples, dims, classes, cluster_sep, seed)?;
    // re-draw test noise from an independent stream with identical centers
    let centers = class_centers(dims, classes, cluster_sep, seed);
    let mut rng = rng_from(seed, &[2]);
    let mut features = Vec::with_capacity(test_samples * dims);
    for i in 0..test_samples {
        let c = i % classes;
        for d in 0..dims {
            let z: f64 = rng.sample(StandardNormal);
            features.push(centers[c][d] + z);
        }
    }
    test.features = features;
    test.name = format!("synthetic-classification-test(seed={seed})");
    Ok((train, test))
}

/// Heterogeneous linear regression data. Rows are split into `groups`
/// equal blocks; group `g` has its own feature mean (each coordinate shifted
/// by `shift · N(0, 1)`) and its own true weight vector (a shared base plus
/// `spread · N(0, 1)` per coordinate), so group-wise shards are non-IID. The last feature is a constant
/// 1 (intercept). Returns the dataset and each row's group id.
pub fn synthetic_regression(
    n_samples: usize,
    dims: usize,
    groups: usize,
    shift: f64,
    spread: f64,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    if dims < 2 || groups == 0 {
        return Err(Error::InvalidArgument(
            "regression needs dims >= 2 and groups >= 1".into(),
        ));
    }
    let mut rng = rng_from(seed, &[3]);
    let base: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
    let group_params: Vec<(Vec<f64>, Vec<f64>)> = (0..groups)
        .map(|_| {
            let mean: Vec<f64> = (0..dims - 1)
                .map(|_| shift * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let w: Vec<f64> = base
                .iter()
                .map(|b| b + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (mean, w)
        })
        .collect();
    let mut features = Vec::with_capacity(n_samples * dims);
    let mut values = Vec::with_capacity(n_samples);
    let mut group_of = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let g = i * groups / n_samples.max(1);
        let (mean, w) = &group_params[g];
        let mut y = 0.0;
        for d in 0..dims {
            let x = if d + 1 == dims {
                1.0
            } else {
                mean[d] + rng.sample::<f64, _>(StandardNormal)
            };
            y += w[d] * x;
            features.push(x);
        }
        y += noise * rng.sample::<f64, _>(StandardNormal);
        values.push(y);
        group_of.push(g);
    }
    let ds = Dataset::new(
        format!("synthetic-regression(seed={seed})"),
        dims,
        features,
        Targets::Values(values),
    )?;
    Ok((ds, group_of))
}

/// `N` pairwise-disjoint, non-empty shards of row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(shards: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (i, s) in shards.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidArgument(format!("shard {i} is empty")));
            }
            for &r in s {
                if !seen.insert(r) {
                    return Err(Error::InvalidArgument(format!(
                        "row {r} appears in more than one shard"
                    )));
                }
            }
        }
        Ok(Partition { shards })
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn shard(&self, i: usize) -> &[usize] {
        &self.shards[i]
    }

    /// All covered rows, sorted.
    pub fn covered_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.shards.iter().flatten().copied().collect();
        rows.sort_unstable();
        rows
    }
}

/// Random permutation split into `n` shards whose sizes differ by at most 1.
pub fn partition_iid(ds: &Dataset, n: usize, seed: u64) -> Result<Partition> {
    let rows = ds.rows();
    if n == 0 || n > rows {
        return Err(Error::InvalidArgument(format!(
            "cannot split {rows} rows into {n} shards"
        )));
    }
    let mut perm: Vec<usize> = (0..rows).collect();
    perm.shuffle(&mut rng_from(seed, &[4]));
    let shards = (0..n)
        .map(|i| perm[i * rows / n..(i + 1) * rows / n].to_vec())
        .collect();
    Partition::new(shards)
}

/// Shards by key: key `k` goes to node `k mod n`. Every key value in
/// `0..key_count` must occur.
pub fn partition_by_key(keys: &[usize], key_count: usize, n: usize) -> Result<Partition> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one shard".into()));
    }
    let mut by_key = vec![Vec::new(); key_count];
    for (row, &k) in keys.iter().enumerate() {
        if k >= key_count {
            return Err(Error::LabelOutOfRange {
                label: k,
                classes: key_count,
            });
        }
        by_key[k].push(row);
    }
    if let Some(empty) = by_key.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(empty));
    }
    let mut shards = vec![Vec::new(); n];
    for (k, rows) in by_key.into_iter().enumerate() {
        shards[k % n].extend(rows);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Partition::new(shards)
}

/// Label-sharded non-IID split: class `c` goes to node `c mod n`. With
/// `n == classes` every node holds exactly one class.
pub fn partition_by_label(ds: &Dataset, n: usize) -> Result<Partition> {
    let labels = ds.labels().ok_or(Error::NotAClassifier)?;
    let classes = ds.classes().unwrap_or(0);
    if n > classes {
        return Err(Error::InvalidArgument(format!(
            "label partition needs at most {classes} nodes, got {n}"
        )));
    }
    partition_by_key(labels, classes, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Dataset {
        let features: Vec<f64> = (0..4 * 784).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        Dataset::new(
            "fixture",
            784,
            features,
            Targets::Classes {
                labels: vec![3, 1, 4, 1],
                classes: 10,
            },
        )
        .unwrap()
    }

    #[test]
    fn idx_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
        let ds = fixture();
        write_idx(&ds, 28, 28, &img, &lab).unwrap();
        let back = load_idx(&img, &lab).unwrap();
        assert_eq!(back.rows(), 4);
        assert_eq!(back.dims(), 784);
        assert!(back.features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(back.labels().unwrap(), &[3, 1, 4, 1]);
        let requantized: Vec<u8> = back.features().iter().map(|v| (v * 255.0).round() as u8).collect();
        let (bytes, _) = encode_idx(&ds, 28, 28).unwrap();
        assert_eq!(&bytes[16..], requantized.as_slice());
    }

    #[test]
    fn idx_errors() {
        let (images, labels) = encode_idx(&fixture(), 28, 28).unwrap();
        assert!(matches!(
            parse_idx_labels(&images),
            Err(Error::BadMagic { found: IDX_IMAGES_MAGIC, .. })
        ));
        assert!(matches!(parse_idx_images(&[]), Err(Error::Truncated(_))));
        assert!(matches!(
            parse_idx_images(&images[..images.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(parse_idx_labels(&labels).is_ok());

        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&img, &images).unwrap();
        let mut short = labels.clone();
        short[7] = 3;
        short.truncate(8 + 3);
        fs::write(&lab, &short).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_classification(50, 3, 4, 2.0, 11).unwrap();
        let b = synthetic_classification(50, 3, 4, 2.0, 11).unwrap();
        assert_eq!(a, b);
        assert!(synthetic_classification(10, 3, 1, 2.0, 0).is_err());
    }

    #[test]
    fn simplex_centers_are_equidistant() {
        let c = class_centers(5, 4, 3.0, 0);
        for i in 0..4 {
            for j in 0..i {
                let d: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!((d - 3.0).abs() < 1e-12);
            }
        }
        let c = class_centers(2, 2, 10.0, 5);
        let d: f64 = c[0].iter().zip(&c[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((d - 10.0).abs() < 1e-9);
    }

    #[test]
    fn iid_partition_shapes() {
        let ds = synthetic_classification(1000, 2, 10, 1.0, 0).unwrap();
        let p = partition_iid(&ds, 1, 0).unwrap();
        assert_eq!(p.shard(0).len(), 1000);
        let p = partition_iid(&ds, 10, 0).unwrap();
        assert!(p.shards().iter().all(|s| s.len() == 100));
        assert_eq!(p.covered_rows(), (0..1000).collect::<Vec<_>>());
        assert!(partition_iid(&ds, 1001, 0).is_err());
    }

    #[test]
    fn iid_label_histograms_within_three_sigma() {
        let ds = synthetic_classification(2000, 2, 10, 1.0, 1).unwrap();
        let labels = ds.labels().unwrap();
        for seed in 0..5 {
            let p = partition_iid(&ds, 10, seed).unwrap();
            for shard in p.shards() {
                let m = shard.len() as f64;
                let q = 0.1;
                let sigma = (m * q * (1.0 - q)).sqrt();
                for c in 0..10 {
                    let count = shard.iter().filter(|&&r| labels[r] == c).count() as f64;
                    assert!((count - m * q).abs() <= 3.0 * sigma + 1.0, "class {c}: {count}");
                }
            }
        }
    }

    #[test]
    fn label_partition_one_class_per_node() {
        let ds = synthetic_classification(200, 2, 10, 1.0, 0).unwrap();
        let p = partition_by_label(&ds, 10).unwrap();
        let labels = ds.labels().unwrap();
        for (i, shard) in p.shards().iter().enumerate() {
            assert!(shard.iter().all(|&r| labels[r] == i));
        }
        assert_eq!(p.covered_rows(), (0..200).collect::<Vec<_>>());

        let p = partition_by_label(&ds, 4).unwrap();
        assert!(p.shard(0).iter().all(|&r| [0, 4, 8].contains(&labels[r])));
    }

    #[test]
    fn label_partition_rejects_missing_class() {
        let ds = Dataset::new(
            "gap",
            1,
            vec![0.0, 1.0],
            Targets::Classes {
                labels: vec![0, 2],
                classes: 3,
            },
        )
        .unwrap();
        assert!(matches!(partition_by_label(&ds, 3), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn dataset_validates_labels() {
        assert!(matches!(
            Dataset::new("x", 1, vec![0.0], Targets::Classes { labels: vec![5], classes: 2 }),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn regression_groups_are_contiguous() {
        let (ds, groups) = synthetic_regression(40, 3, 4, 1.0, 0.5, 0.1, 0).unwrap();
        assert_eq!(ds.rows(), 40);
        assert_eq!(groups[0], 0);
        assert_eq!(groups[39], 3);
        assert!((0..40).all(|r| ds.row(r)[2] == 1.0));
        let p = partition_by_key(&groups, 4, 4).unwrap();
        assert!(p.shards().iter().all(|s| s.len() == 10));
    }
}
