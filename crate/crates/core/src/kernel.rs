//! Radial kernels with closed-form derivatives, weight and degree
//! construction, and the discrimination conditions at `τ`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::LabelledSplit;
use crate::error::{arg, Error, Result};
use crate::linalg::pairwise_sq_dists;
use crate::scalar::{count, Real};

/// A radial kernel `f` of the scaled squared distance `‖x_i − x_j‖²/p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel<T> {
    /// `f(t) = exp(−t / (2σ²))`.
    Gaussian { sigma2: T },
    /// `f(t) = f0 + f1 (t − c) + (f2/2) (t − c)²`.
    Quadratic { center: T, f0: T, f1: T, f2: T },
}

impl<T: Real> Kernel<T> {
    pub fn gaussian(sigma2: T) -> Result<Self> {
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return arg(format!("Gaussian kernel needs σ² > 0, got {sigma2}"));
        }
        Ok(Self::Gaussian { sigma2 })
    }

    /// Quadratic kernel with prescribed value and derivatives at `center`.
    pub fn quadratic(center: T, f0: T, f1: T, f2: T) -> Result<Self> {
        if [center, f0, f1, f2].iter().any(|v| !v.is_finite()) {
            return arg("quadratic kernel parameters must be finite");
        }
        Ok(Self::Quadratic { center, f0, f1, f2 })
    }

    pub fn value(&self, t: T) -> T {
        match *self {
            Self::Gaussian { sigma2 } => (-t / (T::lit(2.0) * sigma2)).exp(),
            Self::Quadratic { center, f0, f1, f2 } => {
                let h = t - center;
                f0 + f1 * h + f2 * h * h / T::lit(2.0)
            }
        }
    }

    pub fn d1(&self, t: T) -> T {
        match *self {
            Self::Gaussian { sigma2 } => -self.value(t) / (T::lit(2.0) * sigma2),
            Self::Quadratic { center, f1, f2, .. } => f1 + f2 * (t - center),
        }
    }

    pub fn d2(&self, t: T) -> T {
        match *self {
            Self::Gaussian { sigma2 } => self.value(t) / (T::lit(4.0) * sigma2 * sigma2),
            Self::Quadratic { f2, .. } => f2,
        }
    }

    /// `(f(t), f'(t), f''(t))`.
    pub fn at(&self, t: T) -> KernelValues<T> {
        KernelValues { f: self.value(t), d1: self.d1(t), d2: self.d2(t) }
    }
}

/// Kernel value and first two derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValues<T> {
    pub f: T,
    pub d1: T,
    pub d2: T,
}

impl<T: Real> KernelValues<T> {
    /// `f'/f`.
    pub fn slope(&self) -> T {
        self.d1 / self.f
    }

    /// `f''/f`.
    pub fn curvature(&self) -> T {
        self.d2 / self.f
    }

    /// `f''/f − (f'/f)²`.
    pub fn excess(&self) -> T {
        self.curvature() - self.slope() * self.slope()
    }
}

/// Kernel as written in configs: `gaussian{σ²}` or `quad{f0,f1,f2}`, the
/// latter centered at `τ̂` once data are available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KernelConfig {
    Gaussian { sigma2: f64 },
    Quadratic { f0: f64, f1: f64, f2: f64 },
}

impl KernelConfig {
    pub fn resolve<T: Real>(&self, tau_hat: T) -> Result<Kernel<T>> {
        match *self {
            Self::Gaussian { sigma2 } => Kernel::gaussian(T::lit(sigma2)),
            Self::Quadratic { f0, f1, f2 } => Kernel::quadratic(tau_hat, T::lit(f0), T::lit(f1), T::lit(f2)),
        }
    }
}

impl fmt::Display for KernelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { sigma2 } => write!(f, "gaussian{{{sigma2}}}"),
            Self::Quadratic { f0, f1, f2 } => write!(f, "quad{{{f0},{f1},{f2}}}"),
        }
    }
}

impl FromStr for KernelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Argument(format!("kernel `{s}` is not gaussian{{σ²}} or quad{{f0,f1,f2}}"));
        let (name, rest) = s.split_once('{').ok_or_else(bad)?;
        let body = rest.strip_suffix('}').ok_or_else(bad)?;
        let params: Vec<f64> =
            body.split(',').map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        match (name.trim(), params.as_slice()) {
            ("gaussian", &[sigma2]) => {
                if sigma2 <= 0.0 {
                    return arg(format!("Gaussian kernel needs σ² > 0, got {sigma2}"));
                }
                Ok(Self::Gaussian { sigma2 })
            }
            ("quad", &[f0, f1, f2]) => Ok(Self::Quadratic { f0, f1, f2 }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for KernelConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KernelConfig> for String {
    fn from(k: KernelConfig) -> Self {
        k.to_string()
    }
}

/// `W_ij = f(‖x_i − x_j‖²/p)`, diagonal `f(0)`, exactly symmetric.
pub fn weight_matrix<T: Real>(split: &LabelledSplit<T>, kernel: &Kernel<T>) -> Result<Array2<T>> {
    weight_matrix_of(split.x(), kernel)
}

/// [`weight_matrix`] on a bare data matrix.
pub fn weight_matrix_of<T: Real>(x: ArrayView2<'_, T>, kernel: &Kernel<T>) -> Result<Array2<T>> {
    let n = x.nrows();
    let p = count::<T>(x.ncols());
    let mut w = pairwise_sq_dists(x);
    let diag = kernel.value(T::zero());
    if !diag.is_finite() {
        return Err(Error::NonFiniteKernel { i: 0, j: 0, value: diag.as_f64() });
    }
    for i in 0..n {
        w[[i, i]] = diag;
        for j in (i + 1)..n {
            let v = kernel.value(w[[i, j]] / p);
            if !v.is_finite() {
                return Err(Error::NonFiniteKernel { i, j, value: v.as_f64() });
            }
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    Ok(w)
}

/// Row sums `d_i = Σ_j W_ij`, all required positive.
pub fn degree_vector<T: Real>(w: &Array2<T>) -> Result<Array1<T>> {
    if w.nrows() != w.ncols() {
        return arg(format!("weight matrix is {}x{}", w.nrows(), w.ncols()));
    }
    let d: Array1<T> = w.rows().into_iter().map(|r| r.iter().copied().sum()).collect();
    if let Some(node) = d.iter().position(|&v| !(v > T::zero())) {
        return Err(Error::Degenerate { node, degree: d[node].as_f64() });
    }
    Ok(d)
}

/// Outcome of the three discrimination conditions at `τ̂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConditions<T> {
    pub values: KernelValues<T>,
    /// `f'(τ) < 0`.
    pub f1_negative: bool,
    /// `f''(τ) > 0`.
    pub f2_positive: bool,
    /// `f''(τ) f(τ) > f'(τ)²`, strict.
    pub product: bool,
    /// `f''(τ) f(τ) − f'(τ)²`; exactly zero for the Gaussian kernel.
    pub product_margin: T,
}

pub fn check_conditions<T: Real>(kernel: &Kernel<T>, tau_hat: T) -> KernelConditions<T> {
    let values = kernel.at(tau_hat);
    let product_margin = match kernel {
        // f'' f = f'² holds identically; evaluating both sides in floating
        // point could leave a rounding-level sign either way.
        Kernel::Gaussian { .. } => T::zero(),
        Kernel::Quadratic { .. } => values.d2 * values.f - values.d1 * values.d1,
    };
    KernelConditions {
        values,
        f1_negative: values.d1 < T::zero(),
        f2_positive: values.d2 > T::zero(),
        product: product_margin > T::zero(),
        product_margin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassLayout;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::{array, Axis};
    use proptest::prelude::*;

    fn split(x: Array2<f64>) -> LabelledSplit<f64> {
        let n = x.nrows();
        LabelledSplit::new(x, ClassLayout::new(vec![1], vec![n - 1]).unwrap()).unwrap()
    }

    #[test]
    fn gaussian_values() {
        let k = Kernel::gaussian(1.0).unwrap();
        assert_eq!(k.value(0.0), 1.0);
        let e = (-1.0f64).exp();
        assert_relative_eq!(k.value(2.0), e, max_relative = 1e-15);
        assert_relative_eq!(k.d1(2.0), -e / 2.0, max_relative = 1e-15);
        for t in [0.0, 0.7, 2.1, 5.0] {
            let v = k.at(t);
            assert_abs_diff_eq!(v.d2 * v.f - v.d1 * v.d1, 0.0, epsilon = 1e-15);
        }
        assert!(Kernel::gaussian(0.0).is_err());
        assert!(Kernel::gaussian(-1.0).is_err());
    }

    #[test]
    fn quadratic_is_its_own_expansion() {
        let tau = 2.107;
        let k = Kernel::quadratic(tau, 1.0, -1.5, 1.0).unwrap();
        assert_eq!(k.at(tau), KernelValues { f: 1.0, d1: -1.5, d2: 1.0 });
        for h in [-1.0, -0.25, 0.0, 0.5, 3.0] {
            let taylor = 1.0 - 1.5 * h + 0.5 * h * h;
            assert_abs_diff_eq!(k.value(tau + h), taylor, epsilon = 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kernels =
            [Kernel::gaussian(0.5).unwrap(), Kernel::gaussian(8.0).unwrap(), Kernel::quadratic(2.0, 1.0, -0.5, 1.0).unwrap()];
        for k in kernels {
            for t in [0.5, 2.1, 3.0] {
                let h = 1e-4;
                let fd1 = (k.value(t + h) - k.value(t - h)) / (2.0 * h);
                let fd2 = (k.value(t + h) - 2.0 * k.value(t) + k.value(t - h)) / (h * h);
                assert_relative_eq!(fd1, k.d1(t), max_relative = 1e-5);
                assert_relative_eq!(fd2, k.d2(t), max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn conditions() {
        let g = check_conditions(&Kernel::gaussian(1.0).unwrap(), 2.1);
        assert!(g.f1_negative && g.f2_positive && !g.product);
        let tau = 2.0;
        let q = check_conditions(&Kernel::quadratic(tau, 1.0, -0.5, 1.0).unwrap(), tau);
        assert!(q.f1_negative && q.f2_positive && q.product);
        let q = check_conditions(&Kernel::quadratic(tau, 1.0, 0.5, 1.0).unwrap(), tau);
        assert!(!q.f1_negative);
        let q = check_conditions(&Kernel::quadratic(tau, 1.0, -1.5, 1.0).unwrap(), tau);
        assert!(!q.product && q.product_margin < 0.0);
        let q = check_conditions(&Kernel::quadratic(tau, 1.0, 0.0, 1.0).unwrap(), tau);
        assert_eq!(q.product_margin, 1.0);
    }

    #[test]
    fn config_parsing() {
        assert_eq!("gaussian{1}".parse::<KernelConfig>().unwrap(), KernelConfig::Gaussian { sigma2: 1.0 });
        assert_eq!(" quad{1, -1.5, 1} ".parse::<KernelConfig>().unwrap(), KernelConfig::Quadratic { f0: 1.0, f1: -1.5, f2: 1.0 });
        for bad in ["gaussian{0}", "gaussian{1,2}", "quad{1,2}", "heat{1}", "gaussian", "quad{a,b,c}"] {
            assert!(bad.parse::<KernelConfig>().is_err(), "{bad}");
        }
        let k = KernelConfig::Quadratic { f0: 1.0, f1: 0.0, f2: 1.0 }.resolve(2.5f64).unwrap();
        assert_eq!(k.at(2.5), KernelValues { f: 1.0, d1: 0.0, d2: 1.0 });
        let cfg = KernelConfig::Gaussian { sigma2: 0.03125 };
        assert_eq!(cfg.to_string().parse::<KernelConfig>().unwrap(), cfg);
    }

    #[test]
    fn weight_matrix_hand_points() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 2.0]];
        let k = Kernel::gaussian(1.0).unwrap();
        let w = weight_matrix(&split(x.clone()), &k).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum() / 2.0;
                assert_relative_eq!(w[[i, j]], (-d / 2.0).exp(), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn weight_matrix_identical_rows_and_constant_kernel() {
        let x = array![[0.3, -1.2, 4.0], [0.3, -1.2, 4.0], [1.0, 0.0, 0.0]];
        let k = Kernel::gaussian(0.7).unwrap();
        let w = weight_matrix(&split(x.clone()), &k).unwrap();
        assert_eq!(w[[0, 1]], k.value(0.0));
        let c = Kernel::quadratic(1.0, 2.5, 0.0, 0.0).unwrap();
        let w = weight_matrix(&split(x), &c).unwrap();
        assert!(w.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn non_finite_kernel_reports_pair() {
        let x = array![[0.0], [1e200], [1.0]];
        let k = Kernel::quadratic(0.0, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(weight_matrix(&split(x), &k), Err(Error::NonFiniteKernel { i: 0, j: 1, .. })));
    }

    #[test]
    fn degrees() {
        assert_eq!(degree_vector(&Array2::<f64>::eye(4)).unwrap(), Array1::ones(4));
        assert_eq!(degree_vector(&Array2::<f64>::ones((5, 5))).unwrap(), Array1::from_elem(5, 5.0));
        let w = array![[1.0, 0.5, 0.25, 2.0], [0.5, 3.0, 1.0, 1.0], [0.25, 1.0, 1.0, 0.5], [2.0, 1.0, 0.5, 0.1]];
        let d = degree_vector(&w).unwrap();
        for (a, b) in d.iter().zip([3.75, 5.5, 2.75, 3.6]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        let bad = array![[1.0, -2.0], [-2.0, 3.0]];
        assert!(matches!(degree_vector(&bad), Err(Error::Degenerate { node: 0, .. })));
    }

    proptest! {
        #[test]
        fn weight_matrix_symmetric_and_permutation_equivariant(
            vals in proptest::collection::vec(-2.0f64..2.0, 18),
            shift in -10.0f64..10.0,
            rot in 1usize..6,
        ) {
            let x = Array2::from_shape_vec((6, 3), vals).unwrap();
            let k = Kernel::gaussian(1.3).unwrap();
            let w = weight_matrix(&split(x.clone()), &k).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(w[[i, j]], w[[j, i]]);
                }
            }
            let order: Vec<usize> = (0..6).map(|i| (i + rot) % 6).collect();
            let wp = weight_matrix(&split(x.select(Axis(0), &order)), &k).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert!((wp[[i, j]] - w[[order[i], order[j]]]).abs() < 1e-12);
                }
            }
            let d = degree_vector(&w).unwrap();
            let ds = degree_vector(&weight_matrix(&split(x.mapv(|v| v + shift)), &k).unwrap()).unwrap();
            for (a, b) in d.iter().zip(ds.iter()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
