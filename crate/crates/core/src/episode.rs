//! Episodes, the synthetic Gaussian-mixture task sampler, feature banks and
//! class splits.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::RngState;

/// One N-way K-shot task.
///
/// Support rows are grouped by class (`shot` rows of class 0, then class 1, ...)
/// when produced by the samplers in this module, but nothing downstream relies
/// on that ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub support_x: Matrix,
    pub support_y: Vec<usize>,
    pub query_x: Matrix,
    pub query_y: Option<Vec<usize>>,
}

impl Episode {
    pub fn new(
        way: usize,
        shot: usize,
        query_per_class: usize,
        support_x: Matrix,
        support_y: Vec<usize>,
        query_x: Matrix,
        query_y: Option<Vec<usize>>,
    ) -> Result<Self> {
        let ep = Self { way, shot, query_per_class, support_x, support_y, query_x, query_y };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.way < 1 || self.shot < 1 {
            return Err(Error::InvalidArgument("episode needs way >= 1 and shot >= 1".into()));
        }
        if self.support_x.rows() != self.way * self.shot || self.support_y.len() != self.support_x.rows() {
            return Err(Error::ShapeMismatch(format!(
                "support has {} rows and {} labels, expected {}",
                self.support_x.rows(),
                self.support_y.len(),
                self.way * self.shot
            )));
        }
        if self.query_x.rows() > 0 && self.query_x.cols() != self.support_x.cols() {
            return Err(Error::ShapeMismatch(format!(
                "support dim {} vs query dim {}",
                self.support_x.cols(),
                self.query_x.cols()
            )));
        }
        check_class_counts(&self.support_y, self.way, self.shot)?;
        if let Some(qy) = &self.query_y {
            if qy.len() != self.query_x.rows() || qy.len() != self.way * self.query_per_class {
                return Err(Error::ShapeMismatch(format!(
                    "query has {} rows and {} labels, expected {}",
                    self.query_x.rows(),
                    qy.len(),
                    self.way * self.query_per_class
                )));
            }
            check_class_counts(qy, self.way, self.query_per_class)?;
        }
        if !self.support_x.is_finite() || !self.query_x.is_finite() {
            return Err(Error::NonFinite("episode features"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.support_x.cols()
    }

    pub fn support(&self) -> Support<'_> {
        Support { x: &self.support_x, y: &self.support_y, classes: self.way }
    }
}

fn check_class_counts(labels: &[usize], way: usize, per_class: usize) -> Result<()> {
    let mut counts = vec![0usize; way];
    for &l in labels {
        if l >= way {
            return Err(Error::LabelOutOfRange { label: l, classes: way });
        }
        counts[l] += 1;
    }
    if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n != per_class) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has {n} samples, expected exactly {per_class}"
        )));
    }
    Ok(())
}

/// A labeled training set for a base learner: features, episode-local labels
/// and the class count. Unlike [`Episode`] it may be unbalanced, which is what
/// pseudo-support augmentation produces.
#[derive(Debug, Clone, Copy)]
pub struct Support<'a> {
    pub x: &'a Matrix,
    pub y: &'a [usize],
    pub classes: usize,
}

impl<'a> Support<'a> {
    pub fn new(x: &'a Matrix, y: &'a [usize], classes: usize) -> Result<Self> {
        let s = Self { x, y, classes };
        s.validate()?;
        Ok(s)
    }

    /// Every class in `0..classes` present, labels in range, one label per row.
    pub fn validate(&self) -> Result<()> {
        if self.x.rows() != self.y.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} support rows but {} labels",
                self.x.rows(),
                self.y.len()
            )));
        }
        let mut seen = vec![false; self.classes];
        for &l in self.y {
            if l >= self.classes {
                return Err(Error::LabelOutOfRange { label: l, classes: self.classes });
            }
            seen[l] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("class {c} has no support samples")));
        }
        Ok(())
    }
}

/// Parameters of the synthetic Gaussian-mixture task distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    /// Class centers are drawn from `Normal(0, scale² I)`.
    pub class_center_scale: f64,
    pub within_class_std: f64,
    /// Multiplies `within_class_std` for support draws only.
    pub support_noise_factor: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            class_center_scale: 1.0,
            within_class_std: 0.35,
            support_noise_factor: 1.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("synthetic dim must be >= 1".into()));
        }
        if !(self.class_center_scale > 0.0) {
            return Err(Error::InvalidArgument("class_center_scale must be > 0".into()));
        }
        // zero std is allowed: it is the noiseless sanity regime
        if !(self.within_class_std >= 0.0) || !self.within_class_std.is_finite() {
            return Err(Error::InvalidArgument("within_class_std must be >= 0".into()));
        }
        if !(self.support_noise_factor >= 1.0) || !self.support_noise_factor.is_finite() {
            return Err(Error::InvalidArgument("support_noise_factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draws a fresh synthetic task: `way` new class centers, then `shot`
/// support and `query_per_class` query points per class.
pub fn sample_synthetic_episode(
    spec: &SynthSpec,
    way: usize,
    shot: usize,
    query_per_class: usize,
    rng: &mut RngState,
) -> Result<Episode> {
    spec.validate()?;
    if way < 2 || shot < 1 || query_per_class < 1 {
        return Err(Error::InvalidArgument(format!(
            "synthetic episode needs way >= 2, shot >= 1, query >= 1 (got {way}/{shot}/{query_per_class})"
        )));
    }
    let centers = Matrix::from_parts(
        way,
        spec.dim,
        (0..way * spec.dim).map(|_| spec.class_center_scale * rng.normal()).collect(),
    );
    sample_around_centers(
        &centers,
        shot,
        query_per_class,
        spec.within_class_std,
        spec.support_noise_factor,
        rng,
    )
}

/// Draws support/query points around fixed class centers (one center per row).
pub fn sample_around_centers(
    centers: &Matrix,
    shot: usize,
    query_per_class: usize,
    std: f64,
    support_noise_factor: f64,
    rng: &mut RngState,
) -> Result<Episode> {
    let (way, dim) = centers.shape();
    let support_std = std * support_noise_factor;
    let draw = |n: usize, sd: f64, rng: &mut RngState| {
        let mut data = Vec::with_capacity(way * n * dim);
        let mut labels = Vec::with_capacity(way * n);
        for c in 0..way {
            for _ in 0..n {
                for &mu in centers.row(c) {
                    data.push(mu + sd * rng.normal());
                }
                labels.push(c);
            }
        }
        (Matrix::from_parts(way * n, dim, data), labels)
    };
    let (support_x, support_y) = draw(shot, support_std, rng);
    let (query_x, query_y) = draw(query_per_class, std, rng);
    Episode::new(way, shot, query_per_class, support_x, support_y, query_x, Some(query_y))
}

/// Per-class feature vectors standing in for backbone outputs over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    classes: Vec<u32>,
    /// One matrix per class, rows are samples.
    samples: Vec<Matrix>,
}

impl FeatureBank {
    pub fn new(dim: usize, classes: Vec<u32>, samples: Vec<Matrix>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InconsistentDim("feature dim must be >= 1".into()));
        }
        if classes.is_empty() || classes.len() != samples.len() {
            return Err(Error::InconsistentDim(format!(
                "{} class ids for {} sample groups",
                classes.len(),
                samples.len()
            )));
        }
        let mut seen = HashSet::new();
        for (&c, m) in classes.iter().zip(&samples) {
            if !seen.insert(c) {
                return Err(Error::InvalidArgument(format!("duplicate class id {c}")));
            }
            if m.rows() == 0 {
                return Err(Error::InconsistentDim(format!("class {c} has no samples")));
            }
            if m.cols() != dim {
                return Err(Error::InconsistentDim(format!(
                    "class {c} has dim {}, bank dim {dim}",
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("feature bank"));
            }
        }
        Ok(Self { dim, classes, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn num_samples(&self) -> usize {
        self.samples.iter().map(Matrix::rows).sum()
    }

    pub fn class_samples(&self, class: u32) -> Option<&Matrix> {
        self.classes.iter().position(|&c| c == class).map(|i| &self.samples[i])
    }

    /// A bank of `classes` Gaussian clusters with centers `~ Normal(0, center_scale² I)`.
    ///
    /// Values are rounded to `f32` so that the binary format stores them exactly.
    pub fn synthetic(
        classes: usize,
        dim: usize,
        per_class: usize,
        std: f64,
        center_scale: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        if classes == 0 || dim == 0 || per_class == 0 {
            return Err(Error::InvalidArgument(
                "synthetic bank needs classes, dim and per_class >= 1".into(),
            ));
        }
        let mut samples = Vec::with_capacity(classes);
        for _ in 0..classes {
            let center: Vec<f64> = (0..dim).map(|_| center_scale * rng.normal()).collect();
            let data = (0..per_class * dim)
                .map(|i| (center[i % dim] + std * rng.normal()) as f32 as f64)
                .collect();
            samples.push(Matrix::new(per_class, dim, data)?);
        }
        Self::new(dim, (0..classes as u32).collect(), samples)
    }
}

/// Disjoint train/validation/test class lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_classes: Vec<u32>,
    pub val_classes: Vec<u32>,
    pub test_classes: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
    Test,
}

impl SplitSpec {
    pub fn new(train: Vec<u32>, val: Vec<u32>, test: Vec<u32>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &c in train.iter().chain(&val).chain(&test) {
            if !seen.insert(c) {
                return Err(Error::InvalidArgument(format!("class {c} appears in more than one split")));
            }
        }
        Ok(Self { train_classes: train, val_classes: val, test_classes: test })
    }

    /// Splits `classes` in order: the first `n_train` to train, the next `n_val` to val, the rest to test.
    pub fn partition(classes: &[u32], n_train: usize, n_val: usize) -> Result<Self> {
        if n_train + n_val > classes.len() {
            return Err(Error::InsufficientClasses { needed: n_train + n_val, available: classes.len() });
        }
        Self::new(
            classes[..n_train].to_vec(),
            classes[n_train..n_train + n_val].to_vec(),
            classes[n_train + n_val..].to_vec(),
        )
    }

    pub fn classes(&self, phase: Phase) -> &[u32] {
        match phase {
            Phase::Train => &self.train_classes,
            Phase::Val => &self.val_classes,
            Phase::Test => &self.test_classes,
        }
    }
}

/// An episode drawn from a bank, with the `(class id, sample index)` of every row.
#[derive(Debug, Clone)]
pub struct BankDraw {
    pub episode: Episode,
    pub support_ids: Vec<(u32, usize)>,
    pub query_ids: Vec<(u32, usize)>,
}

pub fn draw_episode_from_bank(
    bank: &FeatureBank,
    split: &[u32],
    way: usize,
    shot: usize,
    query_per_class: usize,
    rng: &mut RngState,
) -> Result<Episode> {
    draw_episode_with_ids(bank, split, way, shot, query_per_class, rng).map(|d| d.episode)
}

/// Samples classes without replacement, then instances without replacement,
/// relabeling classes `0..way` in draw order.
pub fn draw_episode_with_ids(
    bank: &FeatureBank,
    split: &[u32],
    way: usize,
    shot: usize,
    query_per_class: usize,
    rng: &mut RngState,
) -> Result<BankDraw> {
    if way < 1 || shot < 1 {
        return Err(Error::InvalidArgument("way and shot must be >= 1".into()));
    }
    if split.len() < way {
        return Err(Error::InsufficientClasses { needed: way, available: split.len() });
    }
    let needed = shot + query_per_class;
    let picked = rng.sample_indices(split.len(), way);
    let dim = bank.dim();
    let mut sx = Vec::with_capacity(way * shot * dim);
    let mut qx = Vec::with_capacity(way * query_per_class * dim);
    let (mut sy, mut qy) = (Vec::new(), Vec::new());
    let (mut support_ids, mut query_ids) = (Vec::new(), Vec::new());
    for (local, &pi) in picked.iter().enumerate() {
        let class = split[pi];
        let samples = bank.class_samples(class).ok_or(Error::UnknownClass(class))?;
        if samples.rows() < needed {
            return Err(Error::InsufficientSamples { class, needed, available: samples.rows() });
        }
        let idx = rng.sample_indices(samples.rows(), needed);
        for (j, &i) in idx.iter().enumerate() {
            if j < shot {
                sx.extend_from_slice(samples.row(i));
                sy.push(local);
                support_ids.push((class, i));
            } else {
                qx.extend_from_slice(samples.row(i));
                qy.push(local);
                query_ids.push((class, i));
            }
        }
    }
    let episode = Episode::new(
        way,
        shot,
        query_per_class,
        Matrix::from_parts(way * shot, dim, sx),
        sy,
        Matrix::from_parts(way * query_per_class, dim, qx),
        Some(qy),
    )?;
    Ok(BankDraw { episode, support_ids, query_ids })
}

const FBK_MAGIC: &[u8; 4] = b"FBK1";
const FBK_VERSION: u32 = 1;

/// Serializes a bank in the FBK1 little-endian layout. Classes are written in
/// bank order, samples within a class in row order.
pub fn encode_feature_bank(bank: &FeatureBank) -> Vec<u8> {
    let n = bank.num_samples();
    let mut out = Vec::with_capacity(16 + n * (4 + 4 * bank.dim));
    out.extend_from_slice(FBK_MAGIC);
    out.extend_from_slice(&FBK_VERSION.to_le_bytes());
    out.extend_from_slice(&(bank.dim as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for (&class, m) in bank.classes.iter().zip(&bank.samples) {
        for row in m.row_iter() {
            out.extend_from_slice(&class.to_le_bytes());
            for &v in row {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Parses FBK1 bytes. Classes are ordered by first appearance.
pub fn decode_feature_bank(bytes: &[u8], origin: &Path) -> Result<FeatureBank> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile("missing magic".into()));
    }
    if &bytes[..4] != FBK_MAGIC {
        return Err(Error::BadMagic(origin.to_path_buf()));
    }
    if bytes.len() < 16 {
        return Err(Error::TruncatedFile("header shorter than 16 bytes".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FBK_VERSION {
        return Err(Error::BadHeader(format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let n = u32_at(12) as usize;
    if dim == 0 {
        return Err(Error::InconsistentDim("header declares dim 0".into()));
    }
    if n == 0 {
        return Err(Error::BadHeader("header declares zero samples".into()));
    }
    let record = 4 + 4 * dim;
    let expected = 16 + n * record;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile(format!(
            "{} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::BadHeader(format!(
            "{} trailing bytes after {n} samples",
            bytes.len() - expected
        )));
    }
    let mut classes: Vec<u32> = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    for s in 0..n {
        let off = 16 + s * record;
        let class = u32_at(off);
        let slot = match classes.iter().position(|&c| c == class) {
            Some(i) => i,
            None => {
                classes.push(class);
                data.push(Vec::new());
                classes.len() - 1
            }
        };
        for k in 0..dim {
            let p = off + 4 + 4 * k;
            let v = f32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature(s));
            }
            data[slot].push(v as f64);
        }
    }
    let samples = data
        .into_iter()
        .map(|d| Matrix::from_parts(d.len() / dim, dim, d))
        .collect();
    FeatureBank::new(dim, classes, samples)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a bank from FBK1 or, for a `.csv` extension, from CSV.
pub fn load_feature_bank(path: &Path) -> Result<FeatureBank> {
    if is_csv(path) {
        return load_feature_bank_csv(path);
    }
    let bytes = fs::read(path)?;
    decode_feature_bank(&bytes, path)
}

/// Writes a bank as FBK1 or, for a `.csv` extension, as CSV.
pub fn write_feature_bank(bank: &FeatureBank, path: &Path) -> Result<()> {
    if is_csv(path) {
        return write_feature_bank_csv(bank, path);
    }
    fs::write(path, encode_feature_bank(bank))?;
    Ok(())
}

fn load_feature_bank_csv(path: &Path) -> Result<FeatureBank> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 2 || &header[0] != "label" {
        return Err(Error::BadHeader("csv header must be `label,f0,...`".into()));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::BadHeader(format!("column {} is `{name}`, expected `f{i}`", i + 1)));
        }
    }
    let dim = header.len() - 1;
    let mut classes: Vec<u32> = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (s, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != dim + 1 {
            return Err(Error::InconsistentDim(format!(
                "row {s} has {} features, header has {dim}",
                record.len().saturating_sub(1)
            )));
        }
        let class: u32 = record[0]
            .parse()
            .map_err(|_| Error::BadHeader(format!("row {s}: label `{}` is not a nonnegative integer", &record[0])))?;
        let slot = match classes.iter().position(|&c| c == class) {
            Some(i) => i,
            None => {
                classes.push(class);
                data.push(Vec::new());
                classes.len() - 1
            }
        };
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::BadHeader(format!("row {s}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature(s));
            }
            data[slot].push(v);
        }
    }
    if classes.is_empty() {
        return Err(Error::InconsistentDim("csv has no samples".into()));
    }
    let samples = data
        .into_iter()
        .map(|d| Matrix::from_parts(d.len() / dim, dim, d))
        .collect();
    FeatureBank::new(dim, classes, samples)
}

fn write_feature_bank_csv(bank: &FeatureBank, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..bank.dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (&class, m) in bank.classes.iter().zip(&bank.samples) {
        for row in m.row_iter() {
            let mut rec = vec![class.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
