//! The α-parametrized label propagation solution, its fixed-point
//! iteration, score normalization, decisions and metrics.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::dataset::{ClassLayout, LabelledSplit};
use crate::error::{arg, Error, Result};
use crate::kernel::{degree_vector, weight_matrix, Kernel};
use crate::linalg::SymmetricFactor;
use crate::scalar::{count, Real};

/// Scores of every node; labelled rows are one-hot.
#[derive(Debug, Clone)]
pub struct ScoreMatrix<T> {
    f: Array2<T>,
    layout: ClassLayout,
    alpha: T,
}

impl<T: Real> ScoreMatrix<T> {
    fn from_unlabelled(layout: &ClassLayout, alpha: T, fu: Array2<T>) -> Self {
        let nl = layout.n_labelled();
        let mut f = Array2::zeros((layout.n(), layout.k()));
        for k in 0..layout.k() {
            f.slice_mut(s![layout.labelled_rows(k), k]).fill(T::one());
        }
        f.slice_mut(s![nl.., ..]).assign(&fu);
        Self { f, layout: layout.clone(), alpha }
    }

    pub fn all(&self) -> ArrayView2<'_, T> {
        self.f.view()
    }

    pub fn unlabelled(&self) -> ArrayView2<'_, T> {
        self.f.slice(s![self.layout.n_labelled().., ..])
    }

    pub fn layout(&self) -> &ClassLayout {
        &self.layout
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Writes `node_index,class_1,...,class_K` rows for every node
    /// (0-based node indices in block order).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.layout.k()).map(|k| format!("class_{k}")).collect();
        writeln!(out, "node_index,{}", header.join(","))?;
        for (i, row) in self.f.rows().into_iter().enumerate() {
            write!(out, "{i}")?;
            for v in row {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn check_inputs<T: Real>(w: &Array2<T>, d: &Array1<T>, layout: &ClassLayout) -> Result<()> {
    let n = layout.n();
    if w.dim() != (n, n) || d.len() != n {
        return arg(format!("weights {:?} and degrees {} do not match n = {n}", w.dim(), d.len()));
    }
    if let Some(node) = d.iter().position(|&v| !(v > T::zero())) {
        return Err(Error::Degenerate { node, degree: d[node].as_f64() });
    }
    Ok(())
}

/// Factored propagation problem on a fixed graph, reusable across `α`.
///
/// Uses `F_u = D_u^{−α} (D_u − W_uu)^{−1} W_ul D_l^{α} F_l`, algebraically
/// identical to the closed form; `D_u − W_uu` is symmetric and positive
/// definite whenever the off-diagonal weights are positive.
#[derive(Debug, Clone)]
pub struct PropagationSystem<T> {
    layout: ClassLayout,
    factor: SymmetricFactor<T>,
    /// `W_ul` (unlabelled rows, labelled columns).
    coupling: Array2<T>,
    ln_du: Array1<T>,
    ln_dl: Array1<T>,
}

impl<T: Real> PropagationSystem<T> {
    pub fn new(w: &Array2<T>, d: &Array1<T>, layout: &ClassLayout) -> Result<Self> {
        check_inputs(w, d, layout)?;
        let nl = layout.n_labelled();
        let n = layout.n();
        let mut system = w.slice(s![nl.., nl..]).mapv(|v| -v);
        for (r, i) in (nl..n).enumerate() {
            // Off-diagonal row sum, plus whatever separates `d` from the
            // plain row sum (zero when `d` comes from `degree_vector`).
            let row = w.row(i);
            let total: T = row.iter().copied().sum();
            let off: T = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).sum();
            system[[r, r]] = off + (d[i] - total);
        }
        let factor = SymmetricFactor::factor(system).map_err(|c| Error::Singular { condition: c.as_f64() })?;
        Ok(Self {
            layout: layout.clone(),
            factor,
            coupling: w.slice(s![nl.., ..nl]).to_owned(),
            ln_du: d.slice(s![nl..]).mapv(|v| v.ln()),
            ln_dl: d.slice(s![..nl]).mapv(|v| v.ln()),
        })
    }

    pub fn layout(&self) -> &ClassLayout {
        &self.layout
    }

    pub fn scores(&self, alpha: T) -> Result<ScoreMatrix<T>> {
        let k = self.layout.k();
        let nl = self.layout.n_labelled();
        // D_l^α F_l: column k holds d_j^α on the labelled rows of class k.
        let mut labels = Array2::<T>::zeros((nl, k));
        for c in 0..k {
            for j in self.layout.labelled_rows(c) {
                labels[[j, c]] = (alpha * self.ln_dl[j]).exp();
            }
        }
        let rhs = self.coupling.dot(&labels);
        let mut fu = self.factor.solve(&rhs);
        for (mut row, &ld) in fu.rows_mut().into_iter().zip(self.ln_du.iter()) {
            row *= (-alpha * ld).exp();
        }
        if fu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite scores at α = {alpha}")));
        }
        Ok(ScoreMatrix::from_unlabelled(&self.layout, alpha, fu))
    }
}

/// Builds the weight matrix and degrees of `split` and factors the system.
pub fn build_system<T: Real>(split: &LabelledSplit<T>, kernel: &Kernel<T>) -> Result<PropagationSystem<T>> {
    let w = weight_matrix(split, kernel)?;
    let d = degree_vector(&w)?;
    PropagationSystem::new(&w, &d, split.layout())
}

/// Closed-form scores through a direct factored solve.
pub fn solve_closed_form<T: Real>(w: &Array2<T>, d: &Array1<T>, layout: &ClassLayout, alpha: T) -> Result<ScoreMatrix<T>> {
    PropagationSystem::new(w, d, layout)?.scores(alpha)
}

/// Iterates `F_u ← D_u^{−1−α} W_uu D_u^{α} F_u + D_u^{−1−α} W_ul D_l^{α} F_l`
/// from `F_u = 0` until the max-abs change is at most `tol`.
pub fn solve_fixed_point<T: Real>(
    w: &Array2<T>,
    d: &Array1<T>,
    layout: &ClassLayout,
    alpha: T,
    tol: T,
    max_iter: usize,
) -> Result<ScoreMatrix<T>> {
    check_inputs(w, d, layout)?;
    let nl = layout.n_labelled();
    let k = layout.k();
    let left = d.slice(s![nl..]).mapv(|v| (-(T::one() + alpha) * v.ln()).exp());
    let right_u = d.slice(s![nl..]).mapv(|v| (alpha * v.ln()).exp());
    let mut step = w.slice(s![nl.., nl..]).to_owned();
    for ((i, j), v) in step.indexed_iter_mut() {
        *v *= left[i] * right_u[j];
    }
    let mut labels = Array2::<T>::zeros((nl, k));
    for c in 0..k {
        for j in layout.labelled_rows(c) {
            labels[[j, c]] = (alpha * d[j].ln()).exp();
        }
    }
    let mut offset = w.slice(s![nl.., ..nl]).dot(&labels);
    offset *= &left.view().insert_axis(Axis(1));

    let mut fu = Array2::<T>::zeros(offset.dim());
    let mut change = T::infinity();
    for _ in 0..max_iter {
        let next = step.dot(&fu) + &offset;
        change = next.iter().zip(fu.iter()).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        fu = next;
        if !change.is_finite() {
            break;
        }
        if change <= tol {
            return Ok(ScoreMatrix::from_unlabelled(layout, alpha, fu));
        }
    }
    Err(Error::NotConverged { iterations: max_iter, residual: change.as_f64() })
}

/// `F̂_ik = (n / n_[l]k) F_ik` on the unlabelled rows.
pub fn normalize<T: Real>(scores: &ScoreMatrix<T>) -> Array2<T> {
    let layout = scores.layout();
    let n = count::<T>(layout.n());
    let factors: Array1<T> = layout.labelled_counts().iter().map(|&c| n / count::<T>(c)).collect();
    &scores.unlabelled() * &factors.insert_axis(Axis(0))
}

/// Subtracts from each entry the mean of its row.
pub fn center<T: Real>(f: ArrayView2<'_, T>) -> Array2<T> {
    let k = count::<T>(f.ncols().max(1));
    let means = f.sum_axis(Axis(1)) / k;
    &f - &means.insert_axis(Axis(1))
}

/// Row-wise argmax; ties go to the smallest class index.
pub fn classify<T: Real>(f: ArrayView2<'_, T>) -> Vec<usize> {
    f.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Classification metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Unweighted mean of the per-class precisions.
    pub average_precision: f64,
}

impl Metrics {
    /// Accuracy restricted to samples of true class `k`.
    pub fn class_accuracy(&self, k: usize) -> f64 {
        self.recall[k]
    }
}

/// Metrics over `k` classes. A class never predicted has precision 0; a
/// class absent from `truth` has recall 0.
pub fn metrics(predicted: &[usize], truth: &[usize], k: usize) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return arg(format!("{} predictions for {} labels", predicted.len(), truth.len()));
    }
    if let Some(&bad) = predicted.iter().chain(truth).find(|&&c| c >= k) {
        return arg(format!("class index {bad} out of range for {k} classes"));
    }
    let mut hits = vec![0usize; k];
    let mut predicted_count = vec![0usize; k];
    let mut true_count = vec![0usize; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        predicted_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            hits[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision: Vec<f64> = (0..k).map(|c| ratio(hits[c], predicted_count[c])).collect();
    let recall = (0..k).map(|c| ratio(hits[c], true_count[c])).collect();
    Ok(Metrics {
        accuracy: ratio(hits.iter().sum(), truth.len()),
        average_precision: precision.iter().sum::<f64>() / k as f64,
        precision,
        recall,
    })
}
