//! Taylor expansion of the kernel matrix around `f(τ)` and empirical checks
//! of its operator-norm hierarchy.
//!
//! Needs the true model: `ω_i = (x_i − μ_k)/√p` and `ψ_i = ‖ω_i‖² − tr C_k/p`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::dataset::{ClassLayout, LabelledSplit};
use crate::error::{arg, Result};
use crate::gmm::{builtin_model, population_stats, BuiltinModel, MixtureModel, PopulationStats};
use crate::kernel::{degree_vector, weight_matrix, Kernel, KernelConfig};
use crate::linalg::{ls_slope, spectral_norm};
use crate::scalar::{count, Real};
use crate::seeds::derive_seed;

/// Tolerance and iteration cap of the operator-norm estimates.
pub const NORM_TOL: f64 = 1e-6;
pub const NORM_MAX_ITER: usize = 5000;

/// Which order of the expansion a summand belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    SqrtN,
    One,
}

/// One named matrix of the expansion, coefficient included.
#[derive(Debug, Clone)]
pub struct Summand<T> {
    pub name: &'static str,
    pub order: Order,
    pub matrix: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct ExpansionTerms<T> {
    /// `f(τ) 1 1ᵀ`.
    pub w_n: Array2<T>,
    pub summands: Vec<Summand<T>>,
    /// `W` minus every term above.
    pub residual: Array2<T>,
    pub psi: Array1<T>,
    pub omega: Array2<T>,
    /// True class of every row.
    pub classes: Vec<usize>,
    pub kernel_at_tau: T,
}

impl<T: Real> ExpansionTerms<T> {
    fn total(&self, order: Order) -> Array2<T> {
        let n = self.w_n.nrows();
        let mut acc = Array2::zeros((n, n));
        for s in self.summands.iter().filter(|s| s.order == order) {
            acc += &s.matrix;
        }
        acc
    }

    /// Sum of the `O(√n)` summands.
    pub fn w_sqrt(&self) -> Array2<T> {
        self.total(Order::SqrtN)
    }

    /// Sum of the `O(1)` summands.
    pub fn w_one(&self) -> Array2<T> {
        self.total(Order::One)
    }

    pub fn summand(&self, name: &str) -> Option<&Summand<T>> {
        self.summands.iter().find(|s| s.name == name)
    }

    /// Largest entrywise gap between `W` and the sum of all parts.
    pub fn reconstruction_error(&self, w: &Array2<T>) -> T {
        let total = &self.w_n + &self.w_sqrt() + &self.w_one() + &self.residual;
        max_abs_diff(total.view(), w.view())
    }
}

fn max_abs_diff<T: Real>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> T {
    Zip::from(a).and(b).fold(T::zero(), |m, &x, &y| m.max((x - y).abs()))
}

fn outer<T: Real>(u: &Array1<T>, v: &Array1<T>, scale: T) -> Array2<T> {
    Array2::from_shape_fn((u.len(), v.len()), |(i, j)| scale * u[i] * v[j])
}

fn check_model<T: Real>(split: &LabelledSplit<T>, model: &MixtureModel<T>) -> Result<()> {
    if model.k() != split.layout().k() || model.p() != split.p() {
        return arg(format!(
            "split has {} classes in dimension {}, model has {} in dimension {}",
            split.layout().k(),
            split.p(),
            model.k(),
            model.p()
        ));
    }
    Ok(())
}

/// `Ω` and `ψ` from the true class means and traces.
pub fn fluctuations<T: Real>(split: &LabelledSplit<T>, model: &MixtureModel<T>) -> Result<(Array2<T>, Array1<T>)> {
    check_model(split, model)?;
    let classes = split.layout().row_classes();
    let sqrt_p = count::<T>(split.p()).sqrt();
    let mut omega = split.x().to_owned();
    for (mut row, &k) in omega.rows_mut().into_iter().zip(&classes) {
        row -= &model.means()[k];
        row /= sqrt_p;
    }
    let ratio: Vec<T> = model.covariances().iter().map(|c| c.diag().sum() / count::<T>(split.p())).collect();
    let psi = omega.rows().into_iter().zip(&classes).map(|(r, &k)| r.dot(&r) - ratio[k]).collect();
    Ok((omega, psi))
}

/// Builds every summand of the expansion of `W` for a split drawn from
/// `model`, with `τ` and `t_k` taken from the population.
pub fn expansion_terms<T: Real>(
    split: &LabelledSplit<T>,
    model: &MixtureModel<T>,
    kernel: &Kernel<T>,
) -> Result<ExpansionTerms<T>> {
    let (omega, psi) = fluctuations(split, model)?;
    let stats = population_stats(model, split.layout())?;
    let w = weight_matrix(split, kernel)?;
    Ok(assemble(w, omega, psi, split.layout(), &stats, kernel))
}

fn assemble<T: Real>(
    w: Array2<T>,
    omega: Array2<T>,
    psi: Array1<T>,
    layout: &ClassLayout,
    stats: &PopulationStats<T>,
    kernel: &Kernel<T>,
) -> ExpansionTerms<T> {
    let n = layout.n();
    let p = omega.ncols();
    let pt = count::<T>(p);
    let sqrt_p = pt.sqrt();
    let classes = layout.row_classes();
    let tau = stats.tau;
    let kv = kernel.at(tau);
    let (f1, half_f2) = (kv.d1, kv.d2 / T::lit(2.0));
    let two = T::lit(2.0);
    let ones = Array1::<T>::ones(n);

    // Σ_b (t_b/√p) j_b and Σ_b (t_b²/p) j_b.
    let g: Array1<T> = classes.iter().map(|&k| stats.t[k] / sqrt_p).collect();
    let g2: Array1<T> = g.mapv(|v| v * v);
    let psi2 = psi.mapv(|v| v * v);
    let g_psi = &g * &psi;
    // proj[[i, a]] = ω_iᵀ μ°_a
    let mut mu = Array2::<T>::zeros((p, stats.k()));
    for (mut col, m) in mu.axis_iter_mut(Axis(1)).zip(&stats.mu_circ) {
        col.assign(m);
    }
    let proj = omega.dot(&mu);
    let c = two / sqrt_p;

    let mut summands = Vec::with_capacity(22);
    let mut push = |name, order, matrix| summands.push(Summand { name, order, matrix });

    push("psi_ones", Order::SqrtN, outer(&psi, &ones, f1));
    push("ones_psi", Order::SqrtN, outer(&ones, &psi, f1));
    push("t_ones", Order::SqrtN, outer(&g, &ones, f1));
    push("ones_t", Order::SqrtN, outer(&ones, &g, f1));

    let by_class = |v: &dyn Fn(usize, usize) -> T| Array2::from_shape_fn((n, n), |(i, j)| v(i, j));
    push("mean_dist", Order::One, by_class(&|i, j| f1 * stats.circ_dist(classes[i], classes[j]) / pt));
    push("omega_mu", Order::One, by_class(&|i, j| -f1 * c * proj[[i, classes[j]]]));
    push("diag_omega_mu", Order::One, by_class(&|i, _| f1 * c * proj[[i, classes[i]]]));
    push("mu_omega", Order::One, by_class(&|i, j| -f1 * c * proj[[j, classes[i]]]));
    push("omega_mu_diag", Order::One, by_class(&|_, j| f1 * c * proj[[j, classes[j]]]));
    push("gram", Order::One, omega.dot(&omega.t()) * (-two * f1));

    push("psi2_ones", Order::One, outer(&psi2, &ones, half_f2));
    push("ones_psi2", Order::One, outer(&ones, &psi2, half_f2));
    push("t2_ones", Order::One, outer(&g2, &ones, half_f2));
    push("ones_t2", Order::One, outer(&ones, &g2, half_f2));
    push("t_t", Order::One, outer(&g, &g, two * half_f2));
    push("t_psi_ones", Order::One, outer(&g_psi, &ones, two * half_f2));
    push("t_psi", Order::One, outer(&g, &psi, two * half_f2));
    push("ones_psi_t", Order::One, outer(&ones, &g_psi, two * half_f2));
    push("psi_t", Order::One, outer(&psi, &g, two * half_f2));
    push("cov", Order::One, by_class(&|i, j| T::lit(4.0) * half_f2 * stats.t_matrix[[classes[i], classes[j]]] / pt));
    push("psi_psi", Order::One, outer(&psi, &psi, two * half_f2));
    let shift = kernel.value(T::zero()) - kv.f + tau * f1;
    push("diagonal", Order::One, Array2::from_diag_elem(n, shift));

    let w_n = Array2::from_elem((n, n), kv.f);
    let mut residual = &w - &w_n;
    for s in &summands {
        residual -= &s.matrix;
    }
    ExpansionTerms { w_n, summands, residual, psi, omega, classes, kernel_at_tau: kv.f }
}

/// Operator norms at one size, medians over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub n: usize,
    pub p: usize,
    pub norm_w_n: f64,
    pub norm_w_sqrt: f64,
    pub norm_w_one: f64,
    pub norm_residual: f64,
    /// Worst entrywise reconstruction error over seeds.
    pub reconstruction: f64,
}

#[derive(Debug, Clone)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `log ‖residual‖` against `log n`.
    pub residual_slope: f64,
}

/// Layout used by the decay study: `n/K` samples per class, a sixteenth of
/// them labelled.
pub fn decay_layout(k: usize, n: usize) -> Result<ClassLayout> {
    let per = n / k;
    let labelled = (per / 16).max(1);
    if per <= labelled {
        return arg(format!("n = {n} too small for {k} classes"));
    }
    ClassLayout::balanced(k, labelled, per - labelled)
}

/// Norms of the expansion parts for every `n` in `sizes`, with
/// `p = round(c0 · n)`. Each `(size, seed)` pair samples fresh data.
pub fn residual_decay<T: Real>(
    model: BuiltinModel,
    c0: f64,
    kernel: &KernelConfig,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<DecayTable> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return arg("sizes must be strictly increasing");
    }
    if seeds.is_empty() || !(c0 > 0.0) {
        return arg("need at least one seed and c0 > 0");
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for (si, &n) in sizes.iter().enumerate() {
        let p = ((c0 * n as f64).round() as usize).max(1);
        let m = builtin_model::<T>(model, p)?;
        let layout = decay_layout(m.k(), n)?;
        let stats = population_stats(&m, &layout)?;
        let k = kernel.resolve(stats.tau)?;
        let mut norms = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        let mut worst = 0.0f64;
        for &seed in seeds {
            let job = derive_seed(seed, &[si as u64]);
            let split = m.sample(&layout, job)?;
            let w = weight_matrix(&split, &k)?;
            let (omega, psi) = fluctuations(&split, &m)?;
            let terms = assemble(w.clone(), omega, psi, &layout, &stats, &k);
            worst = worst.max(terms.reconstruction_error(&w).as_f64());
            let parts = [terms.w_n.clone(), terms.w_sqrt(), terms.w_one(), terms.residual.clone()];
            for (acc, part) in norms.iter_mut().zip(&parts) {
                acc.push(spectral_norm(part.view(), NORM_TOL, NORM_MAX_ITER, job).as_f64());
            }
        }
        let [a, b, c, d] = norms.map(median);
        rows.push(DecayRow {
            n: layout.n(),
            p,
            norm_w_n: a,
            norm_w_sqrt: b,
            norm_w_one: c,
            norm_residual: d,
            reconstruction: worst,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.norm_residual.ln()).collect();
    let residual_slope = if rows.len() >= 2 { ls_slope(&x, &y) } else { f64::NAN };
    Ok(DecayTable { rows, residual_slope })
}

/// Median, averaging the middle pair for even lengths.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Accuracy of the degree expansions.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeCheck {
    /// Max-abs gap between `(D/n)^σ` and its second-order expansion.
    pub power_deviation: f64,
    /// `‖D_u^{−1−σ} W_uu D_u^σ − (1/n) 1 1ᵀ‖ / √n`.
    pub transition_deviation: f64,
}

/// Compares `(D/n)^σ` with
/// `f^σ [I + σ/(n f) diag((W_√n + W_1) 1) + σ(σ−1)/(2 n² f²) diag²(W_√n 1)]`,
/// and the unlabelled transition block at `α = σ` with `(1/n) 1 1ᵀ`.
pub fn degree_expansion_check<T: Real>(
    split: &LabelledSplit<T>,
    model: &MixtureModel<T>,
    kernel: &Kernel<T>,
    sigma: T,
) -> Result<DegreeCheck> {
    let terms = expansion_terms(split, model, kernel)?;
    let w = &terms.w_n + &terms.w_sqrt() + &terms.w_one() + &terms.residual;
    let d = degree_vector(&w)?;
    let n = count::<T>(split.n());
    let f = terms.kernel_at_tau;
    let sqrt_sum = terms.w_sqrt().sum_axis(Axis(1));
    let first = &sqrt_sum + &terms.w_one().sum_axis(Axis(1));
    let two = T::lit(2.0);
    let mut power_deviation = T::zero();
    for i in 0..d.len() {
        let exact = (d[i] / n).powf(sigma);
        let approx = f.powf(sigma)
            * (T::one()
                + sigma / (n * f) * first[i]
                + sigma * (sigma - T::one()) / (two * n * n * f * f) * sqrt_sum[i] * sqrt_sum[i]);
        power_deviation = power_deviation.max((exact - approx).abs());
    }

    let layout = split.layout();
    let nl = layout.n_labelled();
    let du = d.slice(ndarray::s![nl..]);
    let wuu = w.slice(ndarray::s![nl.., nl..]);
    let inv_n = T::one() / n;
    let diff = Array2::from_shape_fn(wuu.dim(), |(i, j)| du[i].powf(-T::one() - sigma) * wuu[[i, j]] * du[j].powf(sigma) - inv_n);
    let transition = spectral_norm(diff.view(), NORM_TOL, NORM_MAX_ITER, 0) / n.sqrt();
    Ok(DegreeCheck { power_deviation: power_deviation.as_f64(), transition_deviation: transition.as_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::builtin_model;

    fn setup(model: BuiltinModel, n: usize, p: usize, seed: u64) -> (MixtureModel<f64>, LabelledSplit<f64>) {
        let m = builtin_model::<f64>(model, p).unwrap();
        let l = decay_layout(m.k(), n).unwrap();
        let s = m.sample(&l, seed).unwrap();
        (m, s)
    }

    #[test]
    fn parts_sum_to_w_and_are_symmetric() {
        for model in [BuiltinModel::TwoMeans, BuiltinModel::Concentric, BuiltinModel::ThreeClass] {
            let (m, s) = setup(model, 96, 72, 3);
            let st = population_stats(&m, s.layout()).unwrap();
            let k = Kernel::quadratic(st.tau, 1.0, -0.5, 0.8).unwrap();
            let t = expansion_terms(&s, &m, &k).unwrap();
            let w = weight_matrix(&s, &k).unwrap();
            assert!(t.reconstruction_error(&w) <= 1e-12);
            for part in [t.w_sqrt(), t.w_one()] {
                assert!(max_abs_diff(part.view(), part.t()) <= 1e-12);
            }
            let wn = spectral_norm(t.w_n.view(), 1e-10, 1000, 0);
            assert!((wn - 96.0 * k.value(st.tau)).abs() <= 1e-8 * wn);
        }
    }

    #[test]
    fn zero_fluctuation_leaves_only_trace_terms() {
        let (m, s) = setup(BuiltinModel::Concentric, 64, 48, 1);
        let st = population_stats(&m, s.layout()).unwrap();
        let k = Kernel::gaussian(1.0).unwrap();
        let w = weight_matrix(&s, &k).unwrap();
        let omega = Array2::zeros((64, 48));
        let psi = Array1::zeros(64);
        let t = assemble(w, omega, psi, s.layout(), &st, &k);
        for name in ["psi_ones", "ones_psi", "omega_mu", "gram", "psi_psi", "t_psi"] {
            assert!(t.summand(name).unwrap().matrix.iter().all(|&v| v == 0.0), "{name}");
        }
        let classes = s.layout().row_classes();
        let f1 = k.d1(st.tau);
        let ws = t.w_sqrt();
        let sp = 48f64.sqrt();
        for i in [0, 10, 40, 63] {
            for j in [0, 33, 63] {
                let want = f1 * (st.t[classes[i]] + st.t[classes[j]]) / sp;
                assert!((ws[[i, j]] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hierarchy_on_sampled_data() {
        let (m, s) = setup(BuiltinModel::TwoMeans, 512, 384, 7);
        let k = Kernel::gaussian(1.0).unwrap();
        let t = expansion_terms(&s, &m, &k).unwrap();
        let norm = |a: &Array2<f64>| spectral_norm(a.view(), NORM_TOL, NORM_MAX_ITER, 1);
        let (a, b, c, d) = (norm(&t.w_n), norm(&t.w_sqrt()), norm(&t.w_one()), norm(&t.residual));
        assert!(a > b && b > c && c > d, "{a} {b} {c} {d}");
    }

    #[test]
    fn degree_expansion_at_zero_and_one() {
        let (m, s) = setup(BuiltinModel::TwoMeans, 128, 96, 2);
        let k = Kernel::gaussian(1.0).unwrap();
        let zero = degree_expansion_check(&s, &m, &k, 0.0).unwrap();
        assert_eq!(zero.power_deviation, 0.0);
        // At σ = 1 the expansion is exact up to the residual row sums.
        let one = degree_expansion_check(&s, &m, &k, 1.0).unwrap();
        let t = expansion_terms(&s, &m, &k).unwrap();
        let tail = t.residual.sum_axis(Axis(1)).iter().fold(0.0f64, |a, v| a.max(v.abs())) / 128.0;
        assert!((one.power_deviation - tail).abs() <= 1e-12, "{} vs {tail}", one.power_deviation);
    }

    #[test]
    fn model_mismatch_is_rejected() {
        let (_, s) = setup(BuiltinModel::TwoMeans, 64, 48, 1);
        let other = builtin_model::<f64>(BuiltinModel::TwoMeans, 40).unwrap();
        assert!(expansion_terms(&s, &other, &Kernel::gaussian(1.0).unwrap()).is_err());
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
