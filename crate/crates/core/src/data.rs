//! Feature datasets: synthetic Gaussian clusters, CSV/BFV ingestion and
//! mini-batching.
//!
//! In-distribution rows carry labels in `0..K`; out-of-distribution rows
//! carry the sentinel label `-1` and `is_ood = true`.
//!
//! BFV layout (all little-endian): magic `BFV1`, `u32` N, `u32` F, then
//! `N·F` `f32` features row-major, then `N` `i32` labels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const OOD_LABEL: i32 = -1;
pub const BFV_MAGIC: &[u8; 4] = b"BFV1";
const MAX_OOD_TRIES: usize = 100_000;
const SPLIT_SALT: u64 = 0x5eed_0000_5b17_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    features: Vec<f64>,
    num_features: usize,
    labels: Vec<i32>,
    is_ood: Vec<bool>,
    pub class_names: Option<Vec<String>>,
}

impl LabeledFeatureSet {
    /// Builds a set from row-major features; `is_ood` is derived from the
    /// sentinel label.
    pub fn new(features: Vec<f64>, num_features: usize, labels: Vec<i32>) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::Data("feature width must be positive".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::Data(format!(
                "{} feature values do not fill {} rows of width {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l < OOD_LABEL) {
            return Err(Error::Data(format!("invalid label {bad}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        let is_ood = labels.iter().map(|&l| l == OOD_LABEL).collect();
        Ok(LabeledFeatureSet {
            features,
            num_features,
            labels,
            is_ood,
            class_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn is_ood(&self) -> &[bool] {
        &self.is_ood
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    /// One past the largest in-distribution label (0 if there is none).
    pub fn num_classes(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l >= 0)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Count of rows per in-distribution label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            if l >= 0 {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    pub fn feature_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.len(), self.num_features], self.features.clone())
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledFeatureSet {
        let mut features = Vec::with_capacity(idx.len() * self.num_features);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledFeatureSet {
            features,
            num_features: self.num_features,
            is_ood: labels.iter().map(|&l| l == OOD_LABEL).collect(),
            labels,
            class_names: self.class_names.clone(),
        }
    }

    /// Concatenates rows of two sets with the same width.
    pub fn concat(&self, other: &LabeledFeatureSet) -> Result<LabeledFeatureSet> {
        if self.num_features != other.num_features {
            return Err(Error::Data(format!(
                "cannot concatenate widths {} and {}",
                self.num_features, other.num_features
            )));
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out.is_ood.extend_from_slice(&other.is_ood);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// In-distribution classes.
    pub k_in: usize,
    /// Out-of-distribution clusters.
    pub k_out: usize,
    pub features: usize,
    /// Samples per class, before the train/val split.
    pub per_class: usize,
    /// Centers are drawn uniformly in `[-center_scale, center_scale]^F`.
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub within_std: f64,
    pub center_seed: u64,
    pub noise_seed: u64,
    /// Minimum distance from any OOD center to any in-distribution center.
    pub ood_distance: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            k_in: 8,
            k_out: 8,
            features: 64,
            per_class: 250,
            center_scale: 5.0,
            within_std: 1.5,
            center_seed: 1,
            noise_seed: 2,
            ood_distance: 12.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_in < 2 {
            return Err(Error::Config(format!("k_in must be at least 2, got {}", self.k_in)));
        }
        if self.k_out == 0 || self.features == 0 || self.per_class == 0 {
            return Err(Error::Config(
                "k_out, features and per_class must be positive".into(),
            ));
        }
        if !(self.within_std > 0.0 && self.within_std.is_finite()) {
            return Err(Error::Config(format!(
                "within_std must be positive, got {}",
                self.within_std
            )));
        }
        if !(self.center_scale > 0.0 && self.center_scale.is_finite()) {
            return Err(Error::Config("center_scale must be positive".into()));
        }
        if !(self.ood_distance >= 0.0 && self.ood_distance.is_finite()) {
            return Err(Error::Config("ood_distance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generated splits plus the cluster centers they were drawn around.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: LabeledFeatureSet,
    pub val: LabeledFeatureSet,
    pub ood: LabeledFeatureSet,
    pub in_centers: Vec<Vec<f64>>,
    pub ood_centers: Vec<Vec<f64>>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn uniform_point<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Places one OOD center at distance ≥ `d` from every in-distribution
/// center: a uniform candidate too close to its nearest center is pushed
/// radially out to distance `d`, and rejected if that lands it too close
/// to another center.
fn place_ood_center<R: Rng>(
    rng: &mut R,
    in_centers: &[Vec<f64>],
    spec: &SynthSpec,
) -> Result<Vec<f64>> {
    let d = spec.ood_distance;
    for _ in 0..MAX_OOD_TRIES {
        let mut cand = uniform_point(rng, spec.features, spec.center_scale);
        let (nearest, dist) = in_centers
            .iter()
            .map(|c| (c, distance(c, &cand)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one center");
        if dist < d {
            if dist == 0.0 {
                continue;
            }
            // overshoot by a hair so the post-hoc check survives rounding
            let stretch = d * (1.0 + 1e-9) / dist;
            for (x, c) in cand.iter_mut().zip(nearest) {
                *x = c + (*x - c) * stretch;
            }
        }
        if in_centers.iter().all(|c| distance(c, &cand) >= d) {
            return Ok(cand);
        }
    }
    Err(Error::Generation(format!(
        "could not place an OOD center at distance {d} within {MAX_OOD_TRIES} tries; \
         use a smaller ood_distance or a larger center_scale"
    )))
}

/// Draws the synthetic in-distribution train/val split and the OOD set.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let f = spec.features;
    let mut center_rng = ChaCha8Rng::seed_from_u64(spec.center_seed);
    let in_centers: Vec<Vec<f64>> = (0..spec.k_in)
        .map(|_| uniform_point(&mut center_rng, f, spec.center_scale))
        .collect();
    let ood_centers = (0..spec.k_out)
        .map(|_| place_ood_center(&mut center_rng, &in_centers, spec))
        .collect::<Result<Vec<_>>>()?;

    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let mut draw = |center: &[f64], out: &mut Vec<f64>| {
        for &c in center {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            out.push(c + spec.within_std * z);
        }
    };

    let n = spec.per_class;
    let n_train = ((n as f64) * 0.8).round() as usize;
    let (mut tr_x, mut tr_y, mut va_x, mut va_y) = (vec![], vec![], vec![], vec![]);
    let mut class_rows = Vec::with_capacity(n * f);
    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(spec.noise_seed ^ SPLIT_SALT);
    for (k, center) in in_centers.iter().enumerate() {
        class_rows.clear();
        for _ in 0..n {
            draw(center, &mut class_rows);
        }
        order.sort_unstable();
        order.shuffle(&mut split_rng);
        for (pos, &i) in order.iter().enumerate() {
            let row = &class_rows[i * f..(i + 1) * f];
            if pos < n_train {
                tr_x.extend_from_slice(row);
                tr_y.push(k as i32);
            } else {
                va_x.extend_from_slice(row);
                va_y.push(k as i32);
            }
        }
    }
    let mut ood_x = Vec::with_capacity(spec.k_out * n * f);
    for center in &ood_centers {
        for _ in 0..n {
            draw(center, &mut ood_x);
        }
    }
    let ood_y = vec![OOD_LABEL; spec.k_out * n];

    Ok(SynthData {
        train: LabeledFeatureSet::new(tr_x, f, tr_y)?,
        val: LabeledFeatureSet::new(va_x, f, va_y)?,
        ood: LabeledFeatureSet::new(ood_x, f, ood_y)?,
        in_centers,
        ood_centers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Csv,
    Bfv,
}

impl FeatureFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FeatureFormat::Csv => "csv",
            FeatureFormat::Bfv => "bfv",
        }
    }
}

impl std::str::FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FeatureFormat::Csv),
            "bfv" => Ok(FeatureFormat::Bfv),
            _ => Err(Error::Config(format!("unknown format {s:?}; expected csv or bfv"))),
        }
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<LabeledFeatureSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        FeatureFormat::Bfv => decode_bfv(&bytes, path),
        FeatureFormat::Csv => decode_csv(&bytes, path),
    }
}

pub fn write_features(set: &LabeledFeatureSet, path: &Path, format: FeatureFormat) -> Result<()> {
    let bytes = match format {
        FeatureFormat::Bfv => encode_bfv(set)?,
        FeatureFormat::Csv => encode_csv(set)?,
    };
    crate::io::write_atomic(path, &bytes)
}

pub fn encode_bfv(set: &LabeledFeatureSet) -> Result<Vec<u8>> {
    let n = u32::try_from(set.len()).map_err(|_| Error::Data("too many rows for BFV".into()))?;
    let f = u32::try_from(set.num_features)
        .map_err(|_| Error::Data("too many features for BFV".into()))?;
    let mut out = Vec::with_capacity(12 + set.features.len() * 4 + set.len() * 4);
    out.extend_from_slice(BFV_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&f.to_le_bytes());
    for &v in &set.features {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &l in &set.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_bfv(bytes: &[u8], path: &Path) -> Result<LabeledFeatureSet> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        position: format!("byte {offset}"),
        message,
    };
    if bytes.len() < 12 {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != BFV_MAGIC {
        return Err(err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |at: usize| [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]];
    let n = u32::from_le_bytes(word(4)) as usize;
    let f = u32::from_le_bytes(word(8)) as usize;
    if f == 0 {
        return Err(err(8, "feature width is zero".into()));
    }
    let expected = n
        .checked_mul(f)
        .and_then(|nf| nf.checked_add(n))
        .and_then(|c| c.checked_mul(4))
        .and_then(|b| b.checked_add(12))
        .ok_or_else(|| err(4, "header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!("expected {expected} bytes for N={n}, F={f}, found {}", bytes.len()),
        ));
    }
    let mut features = Vec::with_capacity(n * f);
    for i in 0..n * f {
        let at = 12 + 4 * i;
        let v = f32::from_le_bytes(word(at));
        if !v.is_finite() {
            return Err(err(at, "non-finite feature".into()));
        }
        features.push(v as f64);
    }
    let mut labels = Vec::with_capacity(n);
    let base = 12 + 4 * n * f;
    for i in 0..n {
        let at = base + 4 * i;
        let l = i32::from_le_bytes(word(at));
        if l < OOD_LABEL {
            return Err(err(at, format!("invalid label {l}")));
        }
        labels.push(l);
    }
    LabeledFeatureSet::new(features, f, labels)
}

pub fn encode_csv(set: &LabeledFeatureSet) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..set.num_features).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    header.push("is_ood".into());
    let csv_err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..set.len() {
        let mut rec: Vec<String> = set.row(i).iter().map(|&v| format!("{:?}", v as f32)).collect();
        rec.push(set.labels[i].to_string());
        rec.push(u8::from(set.is_ood[i]).to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

pub fn decode_csv(bytes: &[u8], path: &Path) -> Result<LabeledFeatureSet> {
    let err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        position: format!("line {line}"),
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let headers = r.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(err(1, "missing header row".into()));
    }
    let width = headers.len();
    if width < 3 {
        return Err(err(1, "need at least one feature column plus label,is_ood".into()));
    }
    let f = width - 2;
    for (j, h) in headers.iter().take(f).enumerate() {
        if h.trim() != format!("f{j}") {
            return Err(err(1, format!("column {j} should be f{j}, found {h:?}")));
        }
    }
    if headers[f].trim() != "label" || headers[f + 1].trim() != "is_ood" {
        return Err(err(1, "last two columns must be label,is_ood".into()));
    }
    let (mut features, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        for j in 0..f {
            let v: f32 = rec[j]
                .trim()
                .parse()
                .map_err(|_| err(line, format!("bad feature value {:?}", &rec[j])))?;
            if !v.is_finite() {
                return Err(err(line, "non-finite feature".into()));
            }
            features.push(v as f64);
        }
        let label: i32 = rec[f]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("non-integer label {:?}", &rec[f])))?;
        let ood = match rec[f + 1].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(err(line, format!("bad is_ood value {other:?}"))),
        };
        if label < OOD_LABEL || ood != (label == OOD_LABEL) {
            return Err(err(line, format!("label {label} inconsistent with is_ood={ood}")));
        }
        labels.push(label);
    }
    LabeledFeatureSet::new(features, f, labels)
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Tensor,
    pub labels: Vec<i32>,
}

/// Index batches over `0..n`: a seeded permutation when `shuffle`, else
/// the identity order. The last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batches(set: &LabeledFeatureSet, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Batch>> {
    batch_indices(set.len(), batch_size, seed, shuffle)?
        .into_iter()
        .map(|indices| {
            let sub = set.subset(&indices);
            Ok(Batch {
                features: sub.feature_tensor()?,
                labels: sub.labels,
                indices,
            })
        })
        .collect()
}
