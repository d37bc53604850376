//! Datasets in block ordering, IDX ingestion and empirical statistics.
//!
//! Rows of a [`LabelledSplit`] are ordered as: labelled samples of class 1,
//! labelled samples of class 2, ..., then unlabelled samples of class 1,
//! class 2, .... Every block boundary is derivable from the [`ClassLayout`].

use std::fs::File;
use std::io::{BufReader, Read};
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::linalg::trace_product;
use crate::scalar::{count, Real};

/// Per-class counts of labelled and unlabelled samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLayout {
    labelled: Vec<usize>,
    unlabelled: Vec<usize>,
}

impl ClassLayout {
    pub fn new(labelled: Vec<usize>, unlabelled: Vec<usize>) -> Result<Self> {
        if labelled.is_empty() || labelled.len() != unlabelled.len() {
            return arg(format!(
                "layout needs matching non-empty class lists, got {} labelled and {} unlabelled",
                labelled.len(),
                unlabelled.len()
            ));
        }
        if let Some(k) = labelled.iter().position(|&c| c == 0) {
            return arg(format!("class {} has no labelled sample", k + 1));
        }
        if let Some(k) = unlabelled.iter().position(|&c| c == 0) {
            return arg(format!("class {} has no unlabelled sample", k + 1));
        }
        Ok(Self { labelled, unlabelled })
    }

    /// Two classes with `n_labelled_first` labelled samples of class 1,
    /// the rest of the `n_labelled` for class 2, and the `n - n_labelled`
    /// unlabelled samples split evenly (class 2 takes any odd remainder).
    pub fn two_class(n: usize, n_labelled: usize, n_labelled_first: usize) -> Result<Self> {
        if n_labelled > n || n_labelled_first > n_labelled {
            return arg(format!("inconsistent two-class counts n={n}, n_l={n_labelled}, n_l1={n_labelled_first}"));
        }
        let nu = n - n_labelled;
        Self::new(vec![n_labelled_first, n_labelled - n_labelled_first], vec![nu / 2, nu - nu / 2])
    }

    /// `k` classes with equal labelled and unlabelled counts.
    pub fn balanced(k: usize, labelled_per_class: usize, unlabelled_per_class: usize) -> Result<Self> {
        Self::new(vec![labelled_per_class; k], vec![unlabelled_per_class; k])
    }

    pub fn k(&self) -> usize {
        self.labelled.len()
    }

    pub fn labelled_counts(&self) -> &[usize] {
        &self.labelled
    }

    pub fn unlabelled_counts(&self) -> &[usize] {
        &self.unlabelled
    }

    pub fn n_labelled(&self) -> usize {
        self.labelled.iter().sum()
    }

    pub fn n_unlabelled(&self) -> usize {
        self.unlabelled.iter().sum()
    }

    pub fn n(&self) -> usize {
        self.n_labelled() + self.n_unlabelled()
    }

    /// Total count `n_k` of class `k`.
    pub fn class_count(&self, k: usize) -> usize {
        self.labelled[k] + self.unlabelled[k]
    }

    /// Global rows of the labelled block of class `k`.
    pub fn labelled_rows(&self, k: usize) -> Range<usize> {
        let start: usize = self.labelled[..k].iter().sum();
        start..start + self.labelled[k]
    }

    /// Global rows of the unlabelled block of class `k`.
    pub fn unlabelled_rows(&self, k: usize) -> Range<usize> {
        let start = self.n_labelled() + self.unlabelled[..k].iter().sum::<usize>();
        start..start + self.unlabelled[k]
    }

    /// True class of every row, in row order.
    pub fn row_classes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n());
        for (k, &c) in self.labelled.iter().enumerate() {
            out.extend(std::iter::repeat_n(k, c));
        }
        for (k, &c) in self.unlabelled.iter().enumerate() {
            out.extend(std::iter::repeat_n(k, c));
        }
        out
    }

    /// True classes of the unlabelled rows, in row order.
    pub fn unlabelled_truth(&self) -> Vec<usize> {
        self.row_classes().split_off(self.n_labelled())
    }

    /// Layout with the class order reversed.
    pub fn reversed(&self) -> Self {
        let mut l = self.labelled.clone();
        let mut u = self.unlabelled.clone();
        l.reverse();
        u.reverse();
        Self { labelled: l, unlabelled: u }
    }

    /// `p / n`.
    pub fn c0<T: Real>(&self, p: usize) -> T {
        count::<T>(p) / count::<T>(self.n())
    }

    /// `n_[l] / n`.
    pub fn c_labelled<T: Real>(&self) -> T {
        count::<T>(self.n_labelled()) / count::<T>(self.n())
    }

    /// `n_[l]k / n`.
    pub fn c_labelled_class<T: Real>(&self, k: usize) -> T {
        count::<T>(self.labelled[k]) / count::<T>(self.n())
    }

    /// `n_[u]k / n`.
    pub fn c_unlabelled_class<T: Real>(&self, k: usize) -> T {
        count::<T>(self.unlabelled[k]) / count::<T>(self.n())
    }

    /// Class weights `n_k / n`.
    pub fn class_weights<T: Real>(&self) -> Vec<T> {
        (0..self.k()).map(|k| count::<T>(self.class_count(k)) / count::<T>(self.n())).collect()
    }

    /// Labelled class weights `n_[l]k / n_[l]`.
    pub fn labelled_weights<T: Real>(&self) -> Vec<T> {
        let nl = count::<T>(self.n_labelled());
        self.labelled.iter().map(|&c| count::<T>(c) / nl).collect()
    }
}

/// Data matrix in block ordering together with its layout.
#[derive(Debug, Clone)]
pub struct LabelledSplit<T> {
    x: Array2<T>,
    layout: ClassLayout,
    source_rows: Option<Vec<usize>>,
}

impl<T: Real> LabelledSplit<T> {
    pub fn new(x: Array2<T>, layout: ClassLayout) -> Result<Self> {
        if x.nrows() != layout.n() {
            return arg(format!("data has {} rows but layout totals {}", x.nrows(), layout.n()));
        }
        if x.ncols() == 0 {
            return arg("data has zero columns");
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return arg(format!("non-finite entry at row {}", pos / x.ncols()));
        }
        Ok(Self { x, layout, source_rows: None })
    }

    /// Attaches the source-file row of every sample, for manifests.
    pub fn with_source_rows(mut self, rows: Vec<usize>) -> Self {
        self.source_rows = Some(rows);
        self
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn layout(&self) -> &ClassLayout {
        &self.layout
    }

    pub fn source_rows(&self) -> Option<&[usize]> {
        self.source_rows.as_deref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows of the labelled block of class `k`.
    pub fn labelled_block(&self, k: usize) -> ArrayView2<'_, T> {
        let r = self.layout.labelled_rows(k);
        self.x.slice(s![r, ..])
    }

    /// The same samples with the class order reversed (blocks reordered).
    pub fn class_reversed(&self) -> Self {
        let k = self.layout.k();
        let mut rows = Vec::with_capacity(self.n());
        for c in (0..k).rev() {
            rows.extend(self.layout.labelled_rows(c));
        }
        for c in (0..k).rev() {
            rows.extend(self.layout.unlabelled_rows(c));
        }
        Self {
            x: self.x.select(Axis(0), &rows),
            layout: self.layout.reversed(),
            source_rows: self.source_rows.as_ref().map(|s| rows.iter().map(|&r| s[r]).collect()),
        }
    }
}

/// `τ̂`: mean of `‖x_i − x_j‖²/p` over ordered pairs `i ≠ j`.
///
/// Evaluated through `Σ_{i,j}‖x_i−x_j‖² = 2n Σ_i ‖x_i − x̄‖²`.
pub fn estimate_tau<T: Real>(split: &LabelledSplit<T>) -> Result<T> {
    mean_pair_distance(split.x()).map(|v| v / count::<T>(split.p()))
}

// Mean squared distance over ordered distinct pairs.
fn mean_pair_distance<T: Real>(x: ArrayView2<'_, T>) -> Result<T> {
    let n = x.nrows();
    if n < 2 {
        return arg(format!("need at least two samples, got {n}"));
    }
    let spread = centered_sum_of_squares(x);
    Ok(T::lit(2.0) * spread / count::<T>(n - 1))
}

fn centered_sum_of_squares<T: Real>(x: ArrayView2<'_, T>) -> T {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let mut acc = T::zero();
    for row in x.rows() {
        for (&v, &m) in row.iter().zip(mean.iter()) {
            acc += (v - m) * (v - m);
        }
    }
    acc
}

/// `Δt̂`: half the difference of within-class mean pairwise distances of the
/// two labelled classes, scaled by `1/√p`.
pub fn estimate_delta_t<T: Real>(split: &LabelledSplit<T>) -> Result<T> {
    let layout = split.layout();
    if layout.k() != 2 {
        return Err(Error::Unsupported(format!("Δt̂ needs two classes, got {}", layout.k())));
    }
    for k in 0..2 {
        if layout.labelled_counts()[k] < 2 {
            return arg(format!("labelled class {} has fewer than two samples", k + 1));
        }
    }
    let d1 = mean_pair_distance(split.labelled_block(0))?;
    let d2 = mean_pair_distance(split.labelled_block(1))?;
    Ok((d1 - d2) / (T::lit(2.0) * count::<T>(split.p()).sqrt()))
}

/// Reference weights used to center covariance traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Centering {
    /// Labelled proportions `n_[l]k / n_[l]` (the tilde statistics).
    Labelled,
    /// Class proportions `n_k / n` from the layout.
    Population,
}

/// Moments estimated from the labelled samples of every class.
#[derive(Debug, Clone)]
pub struct ClassStats<T> {
    pub means: Vec<Array1<T>>,
    /// Unbiased sample covariances.
    pub covariances: Vec<Array2<T>>,
    /// `t̂_a = tr(Ĉ_a − Σ_k w_k Ĉ_k)/√p`.
    pub t: Array1<T>,
    /// `T̂_ab = tr(Ĉ_a Ĉ_b)/p`.
    pub t_matrix: Array2<T>,
    pub centering: Centering,
}

pub fn class_empirical_stats<T: Real>(split: &LabelledSplit<T>, centering: Centering) -> Result<ClassStats<T>> {
    let layout = split.layout();
    let k = layout.k();
    let p = split.p();
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for c in 0..k {
        let block = split.labelled_block(c);
        let m = block.nrows();
        if m < 2 {
            return arg(format!("labelled class {} has fewer than two samples", c + 1));
        }
        let mean = block.mean_axis(Axis(0)).expect("non-empty");
        let centered = &block - &mean.view().insert_axis(Axis(0));
        let cov = centered.t().dot(&centered) / count::<T>(m - 1);
        means.push(mean);
        covariances.push(cov);
    }
    let weights = match centering {
        Centering::Labelled => layout.labelled_weights::<T>(),
        Centering::Population => layout.class_weights::<T>(),
    };
    let traces: Vec<T> = covariances.iter().map(|c| c.diag().sum()).collect();
    let reference: T = traces.iter().zip(&weights).map(|(&t, &w)| t * w).sum();
    let sqrt_p = count::<T>(p).sqrt();
    let t = traces.iter().map(|&tr| (tr - reference) / sqrt_p).collect();
    let mut t_matrix = Array2::zeros((k, k));
    for a in 0..k {
        for b in a..k {
            let v = trace_product(covariances[a].view(), covariances[b].view()) / count::<T>(p);
            t_matrix[[a, b]] = v;
            t_matrix[[b, a]] = v;
        }
    }
    Ok(ClassStats { means, covariances, t, t_matrix, centering })
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Debug, Clone)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }
}

fn read_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    reader.read_exact(&mut b).map_err(|_| Error::Truncated { path: path.to_path_buf(), reason: "header ends early".into() })?;
    Ok(u32::from_be_bytes(b))
}

fn check_magic(reader: &mut impl Read, path: &Path, expected: u32) -> Result<()> {
    let found = read_u32(reader, path)?;
    if found != expected {
        return Err(Error::Format { path: path.to_path_buf(), found, expected });
    }
    Ok(())
}

fn read_body(reader: &mut impl Read, path: &Path, len: usize) -> Result<Vec<u8>> {
    let mut data = vec![0u8; len];
    reader
        .read_exact(&mut data)
        .map_err(|_| Error::Truncated { path: path.to_path_buf(), reason: format!("expected {len} data bytes") })?;
    Ok(data)
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let mut reader = BufReader::new(File::open(path)?);
    check_magic(&mut reader, path, IMAGE_MAGIC)?;
    let count = read_u32(&mut reader, path)? as usize;
    let rows = read_u32(&mut reader, path)? as usize;
    let cols = read_u32(&mut reader, path)? as usize;
    let pixels = read_body(&mut reader, path, count * rows * cols)?;
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = BufReader::new(File::open(path)?);
    check_magic(&mut reader, path, LABEL_MAGIC)?;
    let count = read_u32(&mut reader, path)? as usize;
    read_body(&mut reader, path, count)
}

/// Record of an IDX sampling run, written next to experiment outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdxSelection {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub seed: u64,
    pub classes: Vec<u8>,
    pub layout: ClassLayout,
    /// Source-file index of every row of the split, in row order.
    pub rows: Vec<usize>,
}

/// A pair of IDX files held in memory.
#[derive(Debug, Clone)]
pub struct IdxSource {
    pub images_path: PathBuf,
    pub labels_path: PathBuf,
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl IdxSource {
    pub fn open(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = read_idx_images(images_path)?;
        let labels = read_idx_labels(labels_path)?;
        if images.count != labels.len() {
            return Err(Error::Consistency { images: images.count, labels: labels.len() });
        }
        Ok(Self { images_path: images_path.to_path_buf(), labels_path: labels_path.to_path_buf(), images, labels })
    }

    /// Source indices of every image carrying label `class`.
    pub fn pool(&self, class: u8) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect()
    }

    /// Image `i` as reals in `[0, 1]`.
    pub fn scaled<T: Real>(&self, i: usize) -> impl Iterator<Item = T> + '_ {
        let scale = T::lit(255.0);
        self.images.image(i).iter().map(move |&px| T::lit(f64::from(px)) / scale)
    }

    /// Samples a split.
    ///
    /// For class `k` (label value `classes[k]`), `n_[l]k + n_[u]k` images are
    /// drawn uniformly without replacement; the first `n_[l]k` drawn become
    /// labelled.
    pub fn sample<T: Real>(&self, classes: &[u8], layout: &ClassLayout, seed: u64) -> Result<(LabelledSplit<T>, IdxSelection)> {
        if classes.len() != layout.k() {
            return arg(format!("{} class labels for a {}-class layout", classes.len(), layout.k()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labelled_rows = Vec::new();
        let mut unlabelled_rows = Vec::new();
        for (k, &class) in classes.iter().enumerate() {
            let pool = self.pool(class);
            let need = layout.class_count(k);
            if pool.len() < need {
                return Err(Error::Capacity { class, requested: need, available: pool.len() });
            }
            let picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), need).iter().map(|i| pool[i]).collect();
            let (l, u) = picked.split_at(layout.labelled_counts()[k]);
            labelled_rows.extend_from_slice(l);
            unlabelled_rows.push(u.to_vec());
        }
        let mut rows = labelled_rows;
        for u in unlabelled_rows {
            rows.extend(u);
        }
        let mut x = Array2::<T>::zeros((rows.len(), self.images.dim()));
        for (r, &src) in rows.iter().enumerate() {
            for (dst, v) in x.row_mut(r).iter_mut().zip(self.scaled(src)) {
                *dst = v;
            }
        }
        let split = LabelledSplit::new(x, layout.clone())?.with_source_rows(rows.clone());
        let selection = IdxSelection {
            images: self.images_path.clone(),
            labels: self.labels_path.clone(),
            seed,
            classes: classes.to_vec(),
            layout: layout.clone(),
            rows,
        };
        Ok((split, selection))
    }

    /// Mean and (biased) covariance of every image with label `class`.
    pub fn class_moments<T: Real>(&self, class: u8) -> Result<(Array1<T>, Array2<T>)> {
        let pool = self.pool(class);
        if pool.len() < 2 {
            return Err(Error::Capacity { class, requested: 2, available: pool.len() });
        }
        let p = self.images.dim();
        let mut x = Array2::<T>::zeros((pool.len(), p));
        for (r, &src) in pool.iter().enumerate() {
            for (dst, v) in x.row_mut(r).iter_mut().zip(self.scaled(src)) {
                *dst = v;
            }
        }
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(p));
        x -= &mean.view().insert_axis(Axis(0));
        let cov = x.t().dot(&x) / count::<T>(pool.len());
        Ok((mean, cov))
    }
}

/// Samples a split from IDX files; see [`IdxSource::sample`].
pub fn ingest_idx<T: Real>(
    images_path: &Path,
    labels_path: &Path,
    classes: &[u8],
    layout: &ClassLayout,
    seed: u64,
) -> Result<(LabelledSplit<T>, IdxSelection)> {
    IdxSource::open(images_path, labels_path)?.sample(classes, layout, seed)
}

/// Writes IDX files; used to build fixtures and by `mnist-prepare` tests.
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let count = pixels.len() / (rows * cols).max(1);
    let mut buf = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    buf.extend_from_slice(pixels);
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    std::fs::write(path, buf)?;
    Ok(())
}
