//! Gaussian mixture models, sampling, and population statistics.

use std::fmt;
use std::str::FromStr;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLayout, LabelledSplit};
use crate::error::{arg, Error, Result};
use crate::linalg::{cholesky_in_place, trace_product};
use crate::scalar::{count, Real};

/// Square-root factor of a class covariance.
#[derive(Debug, Clone)]
enum CovFactor<T> {
    /// `C = s² I`.
    Isotropic(T),
    /// Lower Cholesky factor `L` with `LLᵀ = C`.
    Dense(Array2<T>),
}

/// Mixture of `K` Gaussians `N(μ_k, C_k)` in dimension `p`.
#[derive(Debug, Clone)]
pub struct MixtureModel<T> {
    means: Vec<Array1<T>>,
    covariances: Vec<Array2<T>>,
    factors: Vec<CovFactor<T>>,
}

fn isotropic_scale<T: Real>(c: &Array2<T>) -> Option<T> {
    let v = c[[0, 0]];
    let ok = c.indexed_iter().all(|((i, j), &x)| if i == j { x == v } else { x == T::zero() });
    ok.then_some(v)
}

impl<T: Real> MixtureModel<T> {
    /// Builds a model, factoring each covariance. Covariances that are not
    /// symmetric positive definite are rejected.
    pub fn new(means: Vec<Array1<T>>, covariances: Vec<Array2<T>>) -> Result<Self> {
        if means.is_empty() || means.len() != covariances.len() {
            return arg(format!("{} means for {} covariances", means.len(), covariances.len()));
        }
        let p = means[0].len();
        if p == 0 {
            return arg("dimension must be positive");
        }
        let mut factors = Vec::with_capacity(means.len());
        for (k, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != p || c.dim() != (p, p) {
                return arg(format!("class {} has inconsistent dimensions", k + 1));
            }
            if m.iter().chain(c.iter()).any(|v| !v.is_finite()) {
                return arg(format!("class {} has non-finite parameters", k + 1));
            }
            if c.indexed_iter().any(|((i, j), &v)| v != c[[j, i]]) {
                return arg(format!("covariance of class {} is not symmetric", k + 1));
            }
            let factor = match isotropic_scale(c) {
                Some(v) if v > T::zero() => CovFactor::Isotropic(v.sqrt()),
                Some(_) => return arg(format!("covariance of class {} is not positive definite", k + 1)),
                None => {
                    let mut l = c.clone();
                    cholesky_in_place(&mut l)
                        .map_err(|_| Error::Argument(format!("covariance of class {} is not positive definite", k + 1)))?;
                    CovFactor::Dense(l)
                }
            };
            factors.push(factor);
        }
        Ok(Self { means, covariances, factors })
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn p(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Array1<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Array2<T>] {
        &self.covariances
    }

    /// Draws a dataset in block ordering. Standard normals are drawn row by
    /// row from a ChaCha8 stream seeded with `seed`; row `i` of class `k` is
    /// `μ_k + L_k g_i`.
    pub fn sample(&self, layout: &ClassLayout, seed: u64) -> Result<LabelledSplit<T>> {
        if layout.k() != self.k() {
            return arg(format!("layout has {} classes, model has {}", layout.k(), self.k()));
        }
        let n = layout.n();
        let p = self.p();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Array2::from_shape_simple_fn((n, p), || T::lit(rng.sample::<f64, _>(StandardNormal)));
        let mut x = Array2::<T>::zeros((n, p));
        for k in 0..self.k() {
            for rows in [layout.labelled_rows(k), layout.unlabelled_rows(k)] {
                let src = g.slice(s![rows.clone(), ..]);
                let mut dst = x.slice_mut(s![rows, ..]);
                match &self.factors[k] {
                    CovFactor::Isotropic(sd) => dst.assign(&(&src * *sd)),
                    CovFactor::Dense(l) => general_mat_mul(T::one(), &src, &l.t(), T::zero(), &mut dst),
                }
                dst += &self.means[k].view().insert_axis(Axis(0));
            }
        }
        LabelledSplit::new(x, layout.clone())
    }

    /// Same model with classes in reverse order.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.means.reverse();
        out.covariances.reverse();
        out.factors.reverse();
        out
    }
}

/// Population statistics of a mixture under a given layout.
#[derive(Debug, Clone)]
pub struct PopulationStats<T> {
    /// `(2/p) tr C°`.
    pub tau: T,
    /// `tr C_k° / √p`.
    pub t: Array1<T>,
    /// `tr C_k C_k' / p`.
    pub t_matrix: Array2<T>,
    /// `μ_k − Σ (n_k/n) μ_k`.
    pub mu_circ: Vec<Array1<T>>,
    /// `μ_k − Σ (n_[l]k/n_[l]) μ_k`.
    pub mu_tilde: Vec<Array1<T>>,
    /// `tr C̃_k / √p`.
    pub t_tilde: Array1<T>,
    /// `tr C̃_k C̃_k' / p`.
    pub t_tilde_matrix: Array2<T>,
    /// `tr C_k / p`, the expected squared norm of `(x − μ_k)/√p`.
    pub trace_ratio: Array1<T>,
    /// `cross[b][[a1, a2]] = μ°_a1ᵀ C_b μ°_a2`.
    pub cross: Vec<Array2<T>>,
}

impl<T: Real> PopulationStats<T> {
    pub fn k(&self) -> usize {
        self.t.len()
    }

    /// `μ̃_aᵀ μ̃_b`.
    pub fn tilde_inner(&self, a: usize, b: usize) -> T {
        self.mu_tilde[a].dot(&self.mu_tilde[b])
    }

    /// `‖μ°_a − μ°_b‖²`.
    pub fn circ_dist(&self, a: usize, b: usize) -> T {
        let d = &self.mu_circ[a] - &self.mu_circ[b];
        d.dot(&d)
    }
}

pub fn population_stats<T: Real>(model: &MixtureModel<T>, layout: &ClassLayout) -> Result<PopulationStats<T>> {
    let k = model.k();
    if layout.k() != k {
        return arg(format!("layout has {} classes, model has {}", layout.k(), k));
    }
    let p = model.p();
    let pt = count::<T>(p);
    let sqrt_p = pt.sqrt();
    let w = layout.class_weights::<T>();
    let wl = layout.labelled_weights::<T>();

    let traces: Vec<T> = model.covariances.iter().map(|c| c.diag().sum()).collect();
    let trace_circ: T = traces.iter().zip(&w).map(|(&t, &w)| t * w).sum();
    let trace_tilde_ref: T = traces.iter().zip(&wl).map(|(&t, &w)| t * w).sum();

    let mut t_matrix = Array2::zeros((k, k));
    for a in 0..k {
        for b in a..k {
            let v = cov_trace_product(model, a, b) / pt;
            t_matrix[[a, b]] = v;
            t_matrix[[b, a]] = v;
        }
    }
    // tr C̃_a C̃_b expanded through T.
    let row_ref: Vec<T> = (0..k).map(|a| (0..k).map(|c| wl[c] * t_matrix[[a, c]]).sum()).collect();
    let both_ref: T = (0..k).map(|c| wl[c] * row_ref[c]).sum();
    let t_tilde_matrix = Array2::from_shape_fn((k, k), |(a, b)| t_matrix[[a, b]] - row_ref[a] - row_ref[b] + both_ref);

    let center = |weights: &[T]| {
        let mut c = Array1::<T>::zeros(p);
        for (m, &wk) in model.means.iter().zip(weights) {
            c.scaled_add(wk, m);
        }
        c
    };
    let circ_center = center(&w);
    let tilde_center = center(&wl);
    let mu_circ: Vec<Array1<T>> = model.means.iter().map(|m| m - &circ_center).collect();
    let mu_tilde = model.means.iter().map(|m| m - &tilde_center).collect();

    let cross = model
        .covariances
        .iter()
        .map(|c| {
            let cm: Vec<Array1<T>> = mu_circ.iter().map(|m| c.dot(m)).collect();
            Array2::from_shape_fn((k, k), |(a1, a2)| mu_circ[a1].dot(&cm[a2]))
        })
        .collect();

    Ok(PopulationStats {
        tau: T::lit(2.0) * trace_circ / pt,
        t: traces.iter().map(|&t| (t - trace_circ) / sqrt_p).collect(),
        t_matrix,
        mu_circ,
        mu_tilde,
        t_tilde: traces.iter().map(|&t| (t - trace_tilde_ref) / sqrt_p).collect(),
        t_tilde_matrix,
        trace_ratio: traces.iter().map(|&t| t / pt).collect(),
        cross,
    })
}

fn cov_trace_product<T: Real>(model: &MixtureModel<T>, a: usize, b: usize) -> T {
    match (&model.factors[a], &model.factors[b]) {
        (CovFactor::Isotropic(sa), CovFactor::Isotropic(sb)) => count::<T>(model.p()) * (*sa * *sa) * (*sb * *sb),
        (CovFactor::Isotropic(s), _) => s.powi(2) * model.covariances[b].diag().sum(),
        (_, CovFactor::Isotropic(s)) => s.powi(2) * model.covariances[a].diag().sum(),
        _ => trace_product(model.covariances[a].view(), model.covariances[b].view()),
    }
}

/// Built-in mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    /// `μ₁ = 4e₁`, `μ₂ = 4e₂`, `C₁ = I`, `(C₂)_ij = 0.4^|i−j| (1 + 3/√p)`.
    TwoMeans,
    /// `μ₁ = μ₂ = 0`, `C₁ = I`, `C₂ = (1 + 3/√p) I`.
    Concentric,
    /// `μ_k = (1, 2, 6)_k e₁`, `C_k = I`.
    ThreeClass,
}

impl BuiltinModel {
    pub fn name(self) -> &'static str {
        match self {
            Self::TwoMeans => "two_means",
            Self::Concentric => "concentric",
            Self::ThreeClass => "three_class",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Self::ThreeClass => 3,
            _ => 2,
        }
    }

    pub fn build<T: Real>(self, p: usize) -> Result<MixtureModel<T>> {
        builtin_model(self, p)
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "two_means" => Ok(Self::TwoMeans),
            "concentric" => Ok(Self::Concentric),
            "three_class" => Ok(Self::ThreeClass),
            other => arg(format!("unknown model `{other}` (expected two_means, concentric or three_class)")),
        }
    }
}

pub fn builtin_model<T: Real>(name: BuiltinModel, p: usize) -> Result<MixtureModel<T>> {
    if p < 2 {
        return arg(format!("built-in models need p ≥ 2, got {p}"));
    }
    let unit = |i: usize, scale: f64| {
        let mut v = Array1::<T>::zeros(p);
        v[i] = T::lit(scale);
        v
    };
    let bump = T::one() + T::lit(3.0) / count::<T>(p).sqrt();
    let eye = Array2::<T>::eye(p);
    match name {
        BuiltinModel::TwoMeans => {
            let rho = T::lit(0.4);
            let c2 = Array2::from_shape_fn((p, p), |(i, j)| rho.powi(i.abs_diff(j) as i32) * bump);
            MixtureModel::new(vec![unit(0, 4.0), unit(1, 4.0)], vec![eye, c2])
        }
        BuiltinModel::Concentric => {
            let zero = Array1::zeros(p);
            MixtureModel::new(vec![zero.clone(), zero], vec![eye.clone(), eye * bump])
        }
        BuiltinModel::ThreeClass => {
            MixtureModel::new(vec![unit(0, 1.0), unit(0, 2.0), unit(0, 6.0)], vec![eye.clone(), eye.clone(), eye])
        }
    }
}

/// Built-in model plus dimension, written `name{p}` in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub model: BuiltinModel,
    pub p: usize,
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{{{}}}", self.model, self.p)
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) =
            s.split_once('{').ok_or_else(|| Error::Argument(format!("model spec `{s}` is not of the form name{{p}}")))?;
        let p = rest
            .strip_suffix('}')
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Argument(format!("bad dimension in model spec `{s}`")))?;
        Ok(Self { model: name.parse()?, p })
    }
}

/// Advisory magnitudes of the growth-rate regime.
#[derive(Debug, Clone)]
pub struct GrowthReport {
    /// `‖μ_k°‖`.
    pub mean_norms: Vec<f64>,
    /// `tr C_k° / √p`.
    pub trace_offsets: Vec<f64>,
    /// `(2/p) tr C°`.
    pub tau: f64,
    /// `p / n`.
    pub aspect: f64,
    pub threshold: f64,
    /// Human-readable description of each breached magnitude.
    pub flags: Vec<String>,
}

pub const DEFAULT_GROWTH_THRESHOLD: f64 = 5.0;

pub fn growth_rate_report<T: Real>(model: &MixtureModel<T>, layout: &ClassLayout, threshold: f64) -> Result<GrowthReport> {
    let stats = population_stats(model, layout)?;
    let mean_norms: Vec<f64> = stats.mu_circ.iter().map(|m| m.dot(m).sqrt().as_f64()).collect();
    let trace_offsets: Vec<f64> = stats.t.iter().map(|v| v.as_f64()).collect();
    let tau = stats.tau.as_f64();
    let aspect = model.p() as f64 / layout.n() as f64;
    let mut flags = Vec::new();
    for (k, &v) in mean_norms.iter().enumerate() {
        if v > threshold {
            flags.push(format!("‖μ°_{}‖ = {v:.3} exceeds {threshold}", k + 1));
        }
    }
    for (k, &v) in trace_offsets.iter().enumerate() {
        if v.abs() > threshold {
            flags.push(format!("tr C°_{}/√p = {v:.3} exceeds {threshold} in magnitude", k + 1));
        }
    }
    let outside = |v: f64| v > threshold || v < 1.0 / threshold;
    if outside(tau) {
        flags.push(format!("τ = {tau:.3} outside [1/{threshold}, {threshold}]"));
    }
    if outside(aspect) {
        flags.push(format!("p/n = {aspect:.3} outside [1/{threshold}, {threshold}]"));
    }
    Ok(GrowthReport { mean_norms, trace_offsets, tau, aspect, threshold, flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::estimate_tau;
    use crate::linalg::symmetric_eigen;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn layout(n_half: usize) -> ClassLayout {
        ClassLayout::two_class(2 * n_half, n_half / 8, n_half / 16).unwrap()
    }

    #[test]
    fn two_means_statistics() {
        let p = 784;
        let m = builtin_model::<f64>(BuiltinModel::TwoMeans, p).unwrap();
        let d = &m.means()[0] - &m.means()[1];
        assert_eq!(d.dot(&d), 32.0);
        let st = population_stats(&m, &layout(512)).unwrap();
        assert_abs_diff_eq!(st.t[0], -1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(st.t[1], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(st.tau, 2.0 + 3.0 / 28.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.t_matrix[[0, 0]], 1.0, epsilon = 1e-12);
        // Toeplitz trace: Σ_ij 0.4^{2|i−j|} (1+3/28)² / p.
        let r2: f64 = 0.16;
        let mut acc = p as f64;
        for k in 1..p {
            acc += 2.0 * (p - k) as f64 * r2.powi(k as i32);
        }
        assert_abs_diff_eq!(st.t_matrix[[1, 1]], acc * (1.0 + 3.0 / 28.0f64).powi(2) / p as f64, epsilon = 1e-10);
        assert_abs_diff_eq!(st.t_matrix[[0, 1]], 1.0 + 3.0 / 28.0, epsilon = 1e-12);
    }

    #[test]
    fn concentric_statistics() {
        let m = builtin_model::<f64>(BuiltinModel::Concentric, 784).unwrap();
        let st = population_stats(&m, &layout(512)).unwrap();
        let bump = 1.0 + 3.0 / 28.0;
        assert_abs_diff_eq!(st.t_matrix[[1, 1]], bump * bump, epsilon = 1e-12);
        assert_abs_diff_eq!(st.tau, 1.0 + bump, epsilon = 1e-12);
        assert!(st.mu_circ.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert!(st.cross.iter().all(|c| c.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn three_class_collinear() {
        let m = builtin_model::<f64>(BuiltinModel::ThreeClass, 10).unwrap();
        let d = &m.means()[2] - &m.means()[0];
        assert_eq!(d, &m.means()[0] * 5.0);
        assert_eq!(&m.means()[2], &(&m.means()[1] * 3.0));
    }

    #[test]
    fn equal_covariances_give_zero_offsets() {
        let p = 6;
        let c = Array2::from_shape_fn((p, p), |(i, j)| if i == j { 2.0 } else { 0.3 });
        let m = MixtureModel::new(vec![Array1::zeros(p), Array1::ones(p)], vec![c.clone(), c]).unwrap();
        let st = population_stats(&m, &ClassLayout::new(vec![2, 5], vec![3, 3]).unwrap()).unwrap();
        assert!(st.t.iter().all(|v: &f64| v.abs() < 1e-14));
        assert!(st.t_tilde.iter().all(|v: &f64| v.abs() < 1e-14));
    }

    #[test]
    fn degenerate_covariance_rejected() {
        let p = 4;
        let r = MixtureModel::<f64>::new(vec![Array1::zeros(p)], vec![Array2::zeros((p, p))]);
        assert!(matches!(r, Err(Error::Argument(_))));
        let mut c = Array2::<f64>::eye(p);
        c[[3, 3]] = 0.0;
        assert!(MixtureModel::new(vec![Array1::zeros(p)], vec![c]).is_err());
    }

    #[test]
    fn sample_is_deterministic_and_checks_layout() {
        let m = builtin_model::<f64>(BuiltinModel::TwoMeans, 20).unwrap();
        let l = ClassLayout::two_class(40, 8, 4).unwrap();
        let a = m.sample(&l, 3).unwrap();
        let b = m.sample(&l, 3).unwrap();
        assert_eq!(a.x(), b.x());
        assert_ne!(a.x(), m.sample(&l, 4).unwrap().x());
        let l3 = ClassLayout::balanced(3, 2, 2).unwrap();
        assert!(m.sample(&l3, 0).is_err());
    }

    #[test]
    fn sample_moments_match_model() {
        let p = 8;
        let m = builtin_model::<f64>(BuiltinModel::TwoMeans, p).unwrap();
        let nu = 20_000;
        let l = ClassLayout::new(vec![10, 10], vec![nu, nu]).unwrap();
        let s = m.sample(&l, 11).unwrap();
        let block = s.x().slice(s![l.unlabelled_rows(1), ..]).to_owned();
        let mean = block.mean_axis(Axis(0)).unwrap();
        let centered = &block - &mean.view().insert_axis(Axis(0));
        let cov = centered.t().dot(&centered) / (block.nrows() - 1) as f64;
        let c = &m.covariances()[1];
        for ((i, j), &v) in cov.indexed_iter() {
            // Five standard errors of a Gaussian sample covariance entry.
            let se = ((c[[i, i]] * c[[j, j]] + c[[i, j]] * c[[i, j]]) / nu as f64).sqrt();
            assert!((v - c[[i, j]]).abs() < 5.0 * se, "cov[{i},{j}] = {v}");
        }
        assert!((mean[1] - 4.0).abs() < 5.0 * (c[[1, 1]] / nu as f64).sqrt());
    }

    // Expected value of τ̂ for a given layout, including the between-mean
    // contribution that vanishes only as p grows.
    fn expected_tau_hat(m: &MixtureModel<f64>, l: &ClassLayout) -> f64 {
        let p = m.p() as f64;
        let n = l.n() as f64;
        let tr: Vec<f64> = m.covariances().iter().map(|c| c.diag().sum()).collect();
        let mut acc = 0.0;
        for a in 0..m.k() {
            for b in 0..m.k() {
                let (na, nb) = (l.class_count(a) as f64, l.class_count(b) as f64);
                let d = &m.means()[a] - &m.means()[b];
                let pairs = if a == b { na * (na - 1.0) } else { na * nb };
                acc += pairs * (tr[a] + tr[b] + d.dot(&d)) / p;
            }
        }
        acc / (n * (n - 1.0))
    }

    #[test]
    fn sampled_tau_concentrates() {
        let p = 784;
        let m = builtin_model::<f64>(BuiltinModel::TwoMeans, p).unwrap();
        let l = layout(512);
        let tau = population_stats(&m, &l).unwrap().tau;
        assert_abs_diff_eq!(tau, 2.0 + 3.0 / 28.0, epsilon = 1e-12);
        let expected = expected_tau_hat(&m, &l);
        for seed in 0..3 {
            let hat = estimate_tau(&m.sample(&l, seed).unwrap()).unwrap();
            assert!((hat - expected).abs() < 5e-3, "τ̂ = {hat}, expected {expected}");
            assert!((hat - tau).abs() < 0.03, "τ̂ = {hat}, τ = {tau}");
        }
    }

    #[test]
    fn tau_deviation_shrinks_with_size() {
        // Aspect ratio p/n held at 3/4.
        let median_dev = |n: usize| {
            let p = 3 * n / 4;
            let m = builtin_model::<f64>(BuiltinModel::TwoMeans, p).unwrap();
            let l = ClassLayout::two_class(n, n / 16, n / 32).unwrap();
            let tau = population_stats(&m, &l).unwrap().tau;
            let mut d: Vec<f64> = (0..5).map(|seed| (estimate_tau(&m.sample(&l, seed).unwrap()).unwrap() - tau).abs()).collect();
            d.sort_by(f64::total_cmp);
            d[2]
        };
        let (small, large) = (median_dev(256), median_dev(1024));
        assert!(large < small, "median deviation {small} at n=256, {large} at n=1024");
    }

    #[test]
    fn model_spec_roundtrip() {
        let s: ModelSpec = "two_means{784}".parse().unwrap();
        assert_eq!(s, ModelSpec { model: BuiltinModel::TwoMeans, p: 784 });
        assert_eq!(s.to_string(), "two_means{784}");
        assert!("spheres{10}".parse::<ModelSpec>().is_err());
        assert!("two_means".parse::<ModelSpec>().is_err());
        assert!("unknown".parse::<BuiltinModel>().is_err());
    }

    #[test]
    fn growth_report_flags() {
        let l = layout(512);
        let conc = builtin_model::<f64>(BuiltinModel::Concentric, 784).unwrap();
        let r = growth_rate_report(&conc, &l, DEFAULT_GROWTH_THRESHOLD).unwrap();
        assert!(r.mean_norms.iter().all(|&v| v == 0.0));
        assert!(r.flags.is_empty());

        let two = builtin_model::<f64>(BuiltinModel::TwoMeans, 784).unwrap();
        let r = growth_rate_report(&two, &l, DEFAULT_GROWTH_THRESHOLD).unwrap();
        assert_abs_diff_eq!(r.trace_offsets[0], -1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.trace_offsets[1], 1.5, epsilon = 1e-12);

        let p = 784;
        let wide = MixtureModel::<f64>::new(vec![Array1::zeros(p), Array1::zeros(p)], vec![Array2::eye(p), Array2::eye(p) * 2.0])
            .unwrap();
        let r = growth_rate_report(&wide, &l, DEFAULT_GROWTH_THRESHOLD).unwrap();
        assert!(r.flags.iter().any(|f| f.contains("C°_2")), "{:?}", r.flags);
    }

    fn random_orthogonal(p: usize, vals: &[f64]) -> Array2<f64> {
        let a = Array2::from_shape_fn((p, p), |(i, j)| vals[i * p + j] + vals[j * p + i]);
        symmetric_eigen(a.view()).1
    }

    proptest! {
        #[test]
        fn centered_means_sum_to_zero(
            vals in proptest::collection::vec(-2.0f64..2.0, 12),
            nl in proptest::collection::vec(1usize..9, 3),
            nu in proptest::collection::vec(1usize..9, 3),
        ) {
            let p = 4;
            let means: Vec<Array1<f64>> = vals.chunks(p).map(|c| Array1::from(c.to_vec())).collect();
            let covs = vec![Array2::eye(p); 3];
            let m = MixtureModel::new(means, covs).unwrap();
            let l = ClassLayout::new(nl, nu).unwrap();
            let st = population_stats(&m, &l).unwrap();
            let w = l.class_weights::<f64>();
            let wl = l.labelled_weights::<f64>();
            for i in 0..p {
                let circ: f64 = (0..3).map(|k| w[k] * st.mu_circ[k][i]).sum();
                let tilde: f64 = (0..3).map(|k| wl[k] * st.mu_tilde[k][i]).sum();
                prop_assert!(circ.abs() < 1e-14);
                prop_assert!(tilde.abs() < 1e-14);
            }
            let tw: f64 = (0..3).map(|k| w[k] * st.t[k]).sum();
            let ttw: f64 = (0..3).map(|k| wl[k] * st.t_tilde[k]).sum();
            prop_assert!(tw.abs() < 1e-14 && ttw.abs() < 1e-14);
            for a in 0..3 {
                prop_assert!(st.t_matrix[[a, a]] >= 0.0);
                for b in 0..3 {
                    prop_assert_eq!(st.t_matrix[[a, b]], st.t_matrix[[b, a]]);
                    prop_assert_eq!(st.t_tilde_matrix[[a, b]], st.t_tilde_matrix[[b, a]]);
                }
            }
        }

        #[test]
        fn stats_invariant_under_rotation(
            vals in proptest::collection::vec(-1.0f64..1.0, 25),
            mvals in proptest::collection::vec(-2.0f64..2.0, 10),
            dvals in proptest::collection::vec(0.5f64..2.0, 10),
        ) {
            let p = 5;
            let q = random_orthogonal(p, &vals);
            let covs: Vec<Array2<f64>> = dvals.chunks(p).map(|d| {
                let b = Array2::from_shape_fn((p, p), |(i, j)| if i == j { d[i] } else { 0.1 * (i + j) as f64 / p as f64 });
                b.dot(&b.t())
            }).collect();
            let means: Vec<Array1<f64>> = mvals.chunks(p).map(|c| Array1::from(c.to_vec())).collect();
            let l = ClassLayout::new(vec![2, 3], vec![4, 5]).unwrap();
            let base = population_stats(&MixtureModel::new(means.clone(), covs.clone()).unwrap(), &l).unwrap();
            let rot_covs = covs.iter().map(|c| {
                let r = q.dot(c).dot(&q.t());
                (&r + &r.t()) * 0.5
            }).collect();
            let rot_means = means.iter().map(|m| q.dot(m)).collect();
            let rot = population_stats(&MixtureModel::new(rot_means, rot_covs).unwrap(), &l).unwrap();
            prop_assert!((base.tau - rot.tau).abs() < 1e-10);
            for (a, b) in base.t.iter().zip(rot.t.iter()) { prop_assert!((a - b).abs() < 1e-10); }
            for (a, b) in base.t_matrix.iter().zip(rot.t_matrix.iter()) { prop_assert!((a - b).abs() < 1e-10); }
            for (a, b) in base.t_tilde_matrix.iter().zip(rot.t_tilde_matrix.iter()) { prop_assert!((a - b).abs() < 1e-10); }
            for (x, y) in base.cross.iter().zip(&rot.cross) {
                for (a, b) in x.iter().zip(y.iter()) { prop_assert!((a - b).abs() < 1e-9); }
            }
            for a in 0..2 {
                for b in 0..2 {
                    prop_assert!((base.tilde_inner(a, b) - rot.tilde_inner(a, b)).abs() < 1e-10);
                }
            }
        }
    }
}
