//! Toy datasets, deterministic splits, standardization and CSV ingestion.
//!
//! All generators are pure functions of their parameters and seed.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{self, Domain};

/// Labelled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
    pub seed: u64,
    pub out_of_distribution: bool,
}

/// Dataset sidecar `{name, n, d, C, seed}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, name: impl Into<String>, seed: u64) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("dataset needs at least one class"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            name: name.into(),
            seed,
            out_of_distribution: false,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
            seed: self.seed,
            out_of_distribution: self.out_of_distribution,
        }
    }

    pub fn metadata(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            n: self.len(),
            d: self.dim(),
            num_classes: self.num_classes,
            seed: self.seed,
        }
    }

    /// Same samples with features passed through `s`.
    pub fn standardized(&self, s: &Standardizer) -> Result<Dataset> {
        Ok(Dataset {
            features: s.apply(&self.features)?,
            ..self.clone()
        })
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Two interleaving half circles: class 0 on `(cos t, sin t)`, class 1 on
/// `(1 − cos t, 0.5 − sin t)`, `t` evenly spaced over `[0, π]`, plus
/// isotropic Gaussian noise.
pub fn gen_moons(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("moons need at least 2 samples"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise must be finite and >= 0"));
    }
    let n_outer = n - n / 2;
    let n_inner = n / 2;
    let angle = |i: usize, count: usize| if count > 1 { PI * i as f64 / (count - 1) as f64 } else { 0.0 };
    let mut rng = rng::stream(seed, Domain::Data, 0, 0);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = angle(i, n_outer);
        data.push(t.cos() + noise_sigma * normal(&mut rng));
        data.push(t.sin() + noise_sigma * normal(&mut rng));
        labels.push(0);
    }
    for i in 0..n_inner {
        let t = angle(i, n_inner);
        data.push(1.0 - t.cos() + noise_sigma * normal(&mut rng));
        data.push(0.5 - t.sin() + noise_sigma * normal(&mut rng));
        labels.push(1);
    }
    Dataset::new(Matrix::new(n, 2, data)?, labels, 2, "moons", seed)
}

/// Isotropic Gaussian clusters, class `i` around `centers[i]`. Each class
/// gets `n / k` samples; the first `n % k` classes get one more.
pub fn gen_blobs(n: usize, centers: &[Vec<f64>], sigma: f64, seed: u64) -> Result<Dataset> {
    if centers.len() < 2 {
        return Err(Error::invalid("blobs need at least 2 centers"));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::shape("all centers must share a non-zero dimension"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and >= 0"));
    }
    let k = centers.len();
    let mut rng = rng::stream(seed, Domain::Data, 1, 0);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        let count = n / k + usize::from(class < n % k);
        for _ in 0..count {
            for &c in center {
                data.push(c + sigma * normal(&mut rng));
            }
            labels.push(class);
        }
    }
    Dataset::new(Matrix::new(n, d, data)?, labels, k, "blobs", seed)
}

/// Out-of-distribution companion `x·scale + shift`, labels kept.
pub fn gen_ood(base: &Dataset, shift: &[f64], scale: f64, seed: u64) -> Result<Dataset> {
    if shift.len() != base.dim() {
        return Err(Error::shape(format!(
            "shift has {} components, data has {} features",
            shift.len(),
            base.dim()
        )));
    }
    if !scale.is_finite() || shift.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("shift and scale must be finite"));
    }
    let mut features = base.features.clone();
    for r in 0..features.rows() {
        for (v, s) in features.row_mut(r).iter_mut().zip(shift) {
            *v = *v * scale + s;
        }
    }
    Ok(Dataset {
        features,
        labels: base.labels.clone(),
        num_classes: base.num_classes,
        name: format!("{}-ood", base.name),
        seed,
        out_of_distribution: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(Error::invalid("split fractions must be >= 0"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Seeded shuffle, then `round(val_frac·N)` validation and
/// `round(test_frac·N)` test samples; the remainder goes to training.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = ds.len();
    let mut perm = permutation(n, spec.seed, Domain::Split, 0);
    let n_val = ((spec.val_frac * n as f64).round() as usize).min(n);
    let n_test = ((spec.test_frac * n as f64).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    let test_indices = perm.split_off(n_train + n_val);
    let val_indices = perm.split_off(n_train);
    let train_indices = perm;
    Ok(Split {
        train: ds.subset(&train_indices),
        val: ds.subset(&val_indices),
        test: ds.subset(&test_indices),
        train_indices,
        val_indices,
        test_indices,
    })
}

/// Fisher–Yates permutation of `0..n` from stream `(seed, domain, major)`.
pub(crate) fn permutation(n: usize, seed: u64, domain: Domain, major: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, domain, major, 0);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Per-feature `(x − mean) / std` with statistics from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; features with zero spread get `std = 1`.
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::invalid("cannot fit a standardizer on no samples"));
        }
        let n = x.rows() as f64;
        let mean: Vec<f64> = x.col_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((v, xi), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape(format!(
                "standardizer has {} features, data has {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

fn csv_header(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("f{i}")).chain(["label".to_string()]).collect()
}

/// Writes `f0,...,f{d-1},label` rows; floats in shortest round-trip form.
pub fn write_csv<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let to_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    out.write_record(csv_header(ds.dim())).map_err(to_err)?;
    for (row, label) in ds.features.iter_rows().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        out.write_record(&rec).map_err(to_err)?;
    }
    out.flush().map_err(|e| Error::invalid(format!("csv write failed: {e}")))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file))
}

/// Reads a dataset, inferring `C = max label + 1` unless `num_classes` is
/// given (then larger labels are errors).
pub fn read_csv<R: Read>(r: R, num_classes: Option<usize>, name: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(r);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = header.len();
    if cols < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header must be f0,...,f{d-1},label".into(),
        });
    }
    let d = cols - 1;
    let expected = csv_header(d);
    if header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be {}", expected.join(",")),
        });
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != cols {
            return Err(Error::Parse {
                line,
                message: format!("expected {cols} fields, found {}", rec.len()),
            });
        }
        for (i, cell) in rec.iter().take(d).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column f{i}: {cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column f{i}: non-finite value"),
                });
            }
            data.push(v);
        }
        let cell = rec[d].trim();
        let label: usize = cell.parse().map_err(|_| Error::Parse {
            line,
            message: format!("label {cell:?} is not a non-negative integer"),
        })?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(Error::Parse {
                    line,
                    message: format!("label {label} out of range for {c} classes"),
                });
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    Dataset::new(Matrix::new(labels.len(), d, data)?, labels, c, name, 0)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    load_csv_with_classes(path, None)
}

pub fn load_csv_with_classes(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv");
    read_csv(std::io::BufReader::new(file), num_classes, name)
}

/// `data.csv` → `data.meta.json`.
pub fn metadata_path(csv_path: impl AsRef<Path>) -> PathBuf {
    csv_path.as_ref().with_extension("meta.json")
}

pub fn save_metadata(ds: &Dataset, csv_path: impl AsRef<Path>) -> Result<()> {
    let path = metadata_path(csv_path);
    let json = serde_json::to_string_pretty(&ds.metadata())? + "\n";
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Synthetic identities for verification experiments.
///
/// Identities come in mirror pairs: pair `k` has prototypes
/// `c_k ± (separation/2)·u_k` for a random center `c_k` and unit direction
/// `u_k`, so the midpoint blend of a pair is equidistant from both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityWorld {
    pub prototypes: Matrix,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentitySpec {
    /// Even number of identities.
    pub identities: usize,
    pub dim: usize,
    /// Standard deviation of the pair centers.
    pub spread: f64,
    /// Distance between the two prototypes of a pair.
    pub separation: f64,
    /// Within-identity noise.
    pub sigma: f64,
}

impl Default for IdentitySpec {
    fn default() -> Self {
        IdentitySpec {
            identities: 16,
            dim: 8,
            spread: 3.0,
            separation: 4.0,
            sigma: 1.0,
        }
    }
}

impl IdentityWorld {
    pub fn new(spec: &IdentitySpec, seed: u64) -> Result<Self> {
        if spec.identities < 2 || !spec.identities.is_multiple_of(2) {
            return Err(Error::invalid("identities must be an even number >= 2"));
        }
        if spec.dim == 0 {
            return Err(Error::invalid("identity dimension must be >= 1"));
        }
        for (name, v) in [("spread", spec.spread), ("separation", spec.separation), ("sigma", spec.sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        let d = spec.dim;
        let mut rng = rng::stream(seed, Domain::Data, 2, 0);
        let mut protos = Vec::with_capacity(spec.identities * d);
        for _ in 0..spec.identities / 2 {
            let center: Vec<f64> = (0..d).map(|_| spec.spread * normal(&mut rng)).collect();
            let mut dir: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|v| *v /= norm);
            for sign in [1.0, -1.0] {
                protos.extend(center.iter().zip(&dir).map(|(c, u)| c + sign * 0.5 * spec.separation * u));
            }
        }
        Ok(IdentityWorld {
            prototypes: Matrix::new(spec.identities, d, protos)?,
            sigma: spec.sigma,
            seed,
        })
    }

    pub fn identities(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    fn draw<R: Rng>(&self, identity: usize, rng: &mut R) -> Vec<f64> {
        self.prototypes
            .row(identity)
            .iter()
            .map(|p| p + self.sigma * normal(rng))
            .collect()
    }

    /// `per_identity` noisy samples of each identity, labelled by identity.
    pub fn sample(&self, per_identity: usize, seed: u64) -> Result<Dataset> {
        let mut rng = rng::stream(seed, Domain::Data, 3, self.seed);
        let k = self.identities();
        let mut data = Vec::with_capacity(k * per_identity * self.dim());
        let mut labels = Vec::with_capacity(k * per_identity);
        for id in 0..k {
            for _ in 0..per_identity {
                data.extend(self.draw(id, &mut rng));
                labels.push(id);
            }
        }
        Dataset::new(Matrix::new(labels.len(), self.dim(), data)?, labels, k, "identities", seed)
    }

    /// `(accomplice, impostor)` rows; row `i` draws from the mirror pair
    /// `i mod (K/2)`.
    pub fn mirror_pairs(&self, n: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng::stream(seed, Domain::Data, 4, self.seed);
        let pairs = self.identities() / 2;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..n {
            let k = i % pairs;
            a.extend(self.draw(2 * k, &mut rng));
            b.extend(self.draw(2 * k + 1, &mut rng));
        }
        (Matrix::from_raw(n, self.dim(), a), Matrix::from_raw(n, self.dim(), b))
    }

    /// Pairs of samples from two distinct random identities.
    pub fn impostor_pairs(&self, n: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng::stream(seed, Domain::Data, 5, self.seed);
        let k = self.identities();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let i = rng.random_range(0..k);
            let j = (i + rng.random_range(1..k)) % k;
            a.extend(self.draw(i, &mut rng));
            b.extend(self.draw(j, &mut rng));
        }
        (Matrix::from_raw(n, self.dim(), a), Matrix::from_raw(n, self.dim(), b))
    }

    /// Pairs of samples from the same random identity.
    pub fn genuine_pairs(&self, n: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng::stream(seed, Domain::Data, 6, self.seed);
        let k = self.identities();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let i = rng.random_range(0..k);
            a.extend(self.draw(i, &mut rng));
            b.extend(self.draw(i, &mut rng));
        }
        (Matrix::from_raw(n, self.dim(), a), Matrix::from_raw(n, self.dim(), b))
    }
}
