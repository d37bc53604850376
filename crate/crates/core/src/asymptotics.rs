//! Asymptotic Gaussian laws of the normalized scores, the resulting
//! standardized gaps `θ`, and predicted accuracies.
//!
//! For an unlabelled sample of true class `b`, `p F̂_i` is a common offset
//! plus `G_i ~ N(m_b, Σ_b)`. Only class differences of `G_i` matter.

use std::io::Write;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{ClassLayout, LabelledSplit};
use crate::error::{arg, Error, Result};
use crate::gmm::{MixtureModel, PopulationStats};
use crate::kernel::KernelValues;
use crate::linalg::symmetric_eigen;
use crate::scalar::{count, Real};

/// Mean and covariance of the score fluctuation of true class `b`.
#[derive(Debug, Clone)]
pub struct GaussianScoreLaw<T> {
    pub class: usize,
    pub mean: Array1<T>,
    pub cov: Array2<T>,
}

/// Everything the laws depend on.
#[derive(Debug, Clone)]
pub struct TheoryInputs<T> {
    pub stats: PopulationStats<T>,
    pub layout: ClassLayout,
    pub p: usize,
    /// Kernel value and derivatives at `τ`.
    pub kernel: KernelValues<T>,
    /// Realized `Σ_{i labelled in a} (‖x_i − μ_a‖²/p − tr C_a/p)` per class,
    /// needed only by the conditional law.
    pub spread: Option<Array1<T>>,
}

/// Conditioning of the general law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// Given the labelled samples (uses the realized spread).
    Conditional,
    /// Averaged over the labelled samples too.
    Unconditional,
}

impl<T: Real> TheoryInputs<T> {
    pub fn new(stats: PopulationStats<T>, layout: ClassLayout, p: usize, kernel: KernelValues<T>) -> Result<Self> {
        if stats.k() != layout.k() {
            return arg(format!("statistics for {} classes, layout for {}", stats.k(), layout.k()));
        }
        if !(kernel.f.is_finite() && kernel.d1.is_finite() && kernel.d2.is_finite()) {
            return arg("kernel values at τ must be finite");
        }
        if kernel.f == T::zero() {
            return arg("f(τ) = 0");
        }
        Ok(Self { stats, layout, p, kernel, spread: None })
    }

    pub fn with_spread(mut self, spread: Array1<T>) -> Self {
        self.spread = Some(spread);
        self
    }

    fn k(&self) -> usize {
        self.layout.k()
    }
}

/// Realized labelled spread `s_a = Σ_{i labelled in a} ψ_i` with
/// `ψ_i = ‖x_i − μ_a‖²/p − tr C_a/p`.
pub fn labelled_spread<T: Real>(split: &LabelledSplit<T>, model: &MixtureModel<T>) -> Result<Array1<T>> {
    let layout = split.layout();
    if layout.k() != model.k() || split.p() != model.p() {
        return arg("split and model disagree on classes or dimension");
    }
    let p = count::<T>(split.p());
    Ok((0..layout.k())
        .map(|a| {
            let expected = model.covariances()[a].diag().sum() / p;
            let block = split.labelled_block(a);
            let mu = &model.means()[a];
            block
                .rows()
                .into_iter()
                .map(|row| {
                    let sq: T = row.iter().zip(mu.iter()).map(|(&x, &m)| (x - m) * (x - m)).sum();
                    sq / p - expected
                })
                .sum()
        })
        .collect())
}

/// Law for `α = −1 + β/√p`, in the form stated with tilde statistics.
pub fn law_theorem_main<T: Real>(inputs: &TheoryInputs<T>, beta: T, b: usize) -> Result<GaussianScoreLaw<T>> {
    let k = inputs.k();
    if b >= k {
        return arg(format!("class {b} out of range"));
    }
    let st = &inputs.stats;
    let kv = inputs.kernel;
    let (slope, curv, excess) = (kv.slope(), kv.curvature(), kv.excess());
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let layout = &inputs.layout;
    let c_l: T = layout.c_labelled();
    let c0: T = layout.c0(inputs.p);

    let mean = (0..k)
        .map(|a| {
            -two * slope * st.tilde_inner(a, b)
                + excess * st.t_tilde[a] * st.t_tilde[b]
                + two * curv * st.t_tilde_matrix[[a, b]]
                + beta / c_l * slope * st.t[a]
        })
        .collect();
    let cov = Array2::from_shape_fn((k, k), |(a1, a2)| {
        let mut v =
            two * excess * excess * st.t_matrix[[b, b]] * st.t[a1] * st.t[a2] + four * slope * slope * st.cross[b][[a1, a2]];
        if a1 == a2 {
            v += four * slope * slope * c0 * st.t_matrix[[b, a1]] / (c_l * layout.c_labelled_class::<T>(a1));
        }
        v
    });
    Ok(GaussianScoreLaw { class: b, mean, cov })
}

/// `H_ab` of the general law.
fn h_term<T: Real>(inputs: &TheoryInputs<T>, a: usize, b: usize) -> T {
    let st = &inputs.stats;
    let kv = inputs.kernel;
    kv.slope() * st.circ_dist(a, b) + kv.excess() * st.t[a] * st.t[b] + T::lit(2.0) * kv.curvature() * st.t_matrix[[a, b]]
}

/// `Δ_a` of the general law.
fn delta_term<T: Real>(inputs: &TheoryInputs<T>, alpha: T, a: usize) -> T {
    let st = &inputs.stats;
    let kv = inputs.kernel;
    let layout = &inputs.layout;
    let sqrt_p = count::<T>(inputs.p).sqrt();
    let nl = count::<T>(layout.n_labelled());
    let unl_trace: T = (0..layout.k()).map(|d| count::<T>(layout.unlabelled_counts()[d]) * st.t[d]).sum();
    sqrt_p * kv.slope() * st.t[a]
        + (alpha * kv.d1 * kv.d1 + kv.f * kv.d2) / (T::lit(2.0) * kv.f * kv.f)
            * (T::lit(2.0) * st.t_matrix[[a, a]] + st.t[a] * st.t[a])
        + kv.slope() * kv.slope() * unl_trace * st.t[a] / nl
}

/// Law for general `α`, conditional on the labelled data or not.
pub fn law_general<T: Real>(
    inputs: &TheoryInputs<T>,
    alpha: T,
    b: usize,
    conditioning: Conditioning,
) -> Result<GaussianScoreLaw<T>> {
    let k = inputs.k();
    if b >= k {
        return arg(format!("class {b} out of range"));
    }
    let spread = match (conditioning, &inputs.spread) {
        (Conditioning::Conditional, None) => return arg("conditional law needs the labelled spread"),
        (Conditioning::Conditional, Some(s)) => Some(s),
        (Conditioning::Unconditional, _) => None,
    };
    let st = &inputs.stats;
    let kv = inputs.kernel;
    let slope = kv.slope();
    let layout = &inputs.layout;
    let one = T::one();
    let n = count::<T>(layout.n());
    let nl = count::<T>(layout.n_labelled());
    let p = count::<T>(inputs.p);
    let c_l: T = layout.c_labelled();
    let c0: T = layout.c0(inputs.p);
    let lift = one + alpha;

    let mean = (0..k)
        .map(|a| {
            let coupling: T = (0..k)
                .map(|d| {
                    let weight = alpha * count::<T>(layout.class_count(d)) + count::<T>(layout.unlabelled_counts()[d]);
                    weight * h_term(inputs, a, d)
                })
                .sum();
            let mut bracket = delta_term(inputs, alpha, a) - alpha * slope * slope * st.t[a] * st.t[b];
            if let Some(s) = spread {
                bracket += p / count::<T>(layout.labelled_counts()[a]) * slope * s[a];
            }
            h_term(inputs, a, b) + coupling / nl + lift * n / nl * bracket
        })
        .collect();

    let coef = (-(alpha * alpha) - alpha) * n / nl * slope * slope - slope * slope + kv.curvature();
    let cov = Array2::from_shape_fn((k, k), |(a1, a2)| {
        let mut v = coef * coef * st.t_matrix[[b, b]] * st.t[a1] * st.t[a2] + T::lit(4.0) * slope * slope * st.cross[b][[a1, a2]];
        if a1 == a2 {
            let cla = layout.c_labelled_class::<T>(a1);
            v += slope * slope * T::lit(4.0) * c0 * st.t_matrix[[b, a1]] / cla;
            if conditioning == Conditioning::Unconditional {
                v += slope * slope * lift * lift / (c_l * c_l) * T::lit(2.0) * c0 * st.t_matrix[[a1, a1]] / cla;
            }
        }
        v
    });
    Ok(GaussianScoreLaw { class: b, mean, cov })
}

/// Standardized gap `θ_b^a` of law `b` against class `a`.
///
/// A zero variance combination gives `±∞` (or 0 for a zero gap).
pub fn theta<T: Real>(law: &GaussianScoreLaw<T>, a: usize) -> Result<T> {
    let b = law.class;
    let gap = law.mean[b] - law.mean[a];
    let var = law.cov[[b, b]] + law.cov[[a, a]] - T::lit(2.0) * law.cov[[a, b]];
    if !var.is_finite() || !gap.is_finite() {
        return Err(Error::Numeric(format!("non-finite law for class {}", b + 1)));
    }
    if var < T::lit(-1e-10) {
        return Err(Error::Numeric(format!("negative variance combination {var} for class {}", b + 1)));
    }
    if var <= T::zero() {
        return Ok(if gap > T::zero() {
            T::infinity()
        } else if gap < T::zero() {
            T::neg_infinity()
        } else {
            T::zero()
        });
    }
    Ok(gap / var.sqrt())
}

/// Standard normal distribution function.
pub fn std_normal_cdf<T: Real>(u: T) -> T {
    if u.is_nan() {
        return u;
    }
    T::lit(0.5) * (-u / T::lit(std::f64::consts::SQRT_2)).erfc()
}

/// Predicted two-class accuracies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoClassAccuracy {
    pub per_class: [f64; 2],
    pub theta: [f64; 2],
    /// Average weighted by the unlabelled class proportions.
    pub mean: f64,
}

pub fn accuracy_two_class<T: Real>(laws: &[GaussianScoreLaw<T>], layout: &ClassLayout) -> Result<TwoClassAccuracy> {
    if laws.len() != 2 || layout.k() != 2 {
        return Err(Error::Unsupported("two-class accuracy needs K = 2".into()));
    }
    let mut per_class = [0.0; 2];
    let mut thetas = [0.0; 2];
    for law in laws {
        let b = law.class;
        let th = theta(law, 1 - b)?;
        thetas[b] = th.as_f64();
        per_class[b] = std_normal_cdf(th).as_f64();
    }
    let wu = layout.unlabelled_counts();
    let mean = (per_class[0] * wu[0] as f64 + per_class[1] * wu[1] as f64) / (wu[0] + wu[1]) as f64;
    Ok(TwoClassAccuracy { per_class, theta: thetas, mean })
}

/// Monte Carlo estimate of `P([G]_b is the largest entry)` per class.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassAccuracy {
    pub per_class: Vec<f64>,
    pub stderr: Vec<f64>,
}

pub fn accuracy_multiclass<T: Real>(laws: &[GaussianScoreLaw<T>], trials: usize, seed: u64) -> Result<MultiClassAccuracy> {
    if trials == 0 {
        return arg("need at least one Monte Carlo trial");
    }
    let mut per_class = Vec::with_capacity(laws.len());
    let mut stderr = Vec::with_capacity(laws.len());
    for law in laws {
        let k = law.mean.len();
        let root = psd_root(&law.cov)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(law.class as u64);
        let mut hits = 0usize;
        let mut z = Array1::<f64>::zeros(k);
        let mean: Array1<f64> = law.mean.mapv(|v| v.as_f64());
        for _ in 0..trials {
            z.mapv_inplace(|_| rng.sample(StandardNormal));
            let g = &mean + &root.dot(&z);
            let mut best = 0;
            for c in 1..k {
                if g[c] > g[best] {
                    best = c;
                }
            }
            hits += usize::from(best == law.class);
        }
        let q = hits as f64 / trials as f64;
        per_class.push(q);
        stderr.push((q * (1.0 - q) / trials as f64).sqrt());
    }
    Ok(MultiClassAccuracy { per_class, stderr })
}

// Symmetric square root with eigenvalues clipped at zero after a
// rounding-level negativity check.
fn psd_root<T: Real>(cov: &Array2<T>) -> Result<Array2<f64>> {
    let c = cov.mapv(|v| v.as_f64());
    let sym = (&c + &c.t()) * 0.5;
    let (vals, vecs) = symmetric_eigen(sym.view());
    let largest = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if vals.iter().any(|&v| v < -1e-10 * largest.max(f64::MIN_POSITIVE)) {
        return Err(Error::Numeric("score covariance is not positive semidefinite".into()));
    }
    let roots = vals.mapv(|v| v.max(0.0).sqrt());
    Ok(&vecs * &roots.insert_axis(Axis(0)))
}

/// Writes `class,mean_1..K,cov_11..cov_KK,theta,predicted_accuracy`.
///
/// `theta` is the smallest `θ_b^a` over `a ≠ b`; `accuracy` holds one
/// predicted accuracy per law.
pub fn write_laws_csv<T: Real, W: Write>(laws: &[GaussianScoreLaw<T>], accuracy: &[f64], mut out: W) -> Result<()> {
    let k = laws.first().map_or(0, |l| l.mean.len());
    let mut header = vec!["class".to_string()];
    header.extend((1..=k).map(|a| format!("mean_{a}")));
    for a1 in 1..=k {
        header.extend((1..=k).map(|a2| format!("cov_{a1}{a2}")));
    }
    header.push("theta".into());
    header.push("predicted_accuracy".into());
    writeln!(out, "{}", header.join(","))?;
    for (law, acc) in laws.iter().zip(accuracy) {
        let th = (0..k)
            .filter(|&a| a != law.class)
            .map(|a| theta(law, a).map(|v| v.as_f64()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let mut fields = vec![(law.class + 1).to_string()];
        fields.extend(law.mean.iter().map(|v| format!("{v:e}")));
        fields.extend(law.cov.iter().map(|v| format!("{v:e}")));
        fields.push(format!("{th:e}"));
        fields.push(format!("{acc:e}"));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Class-difference view used by the two-class diagnostics: mean and
/// variance of `G_b − G_a` under `law`.
pub fn gap_moments<T: Real>(law: &GaussianScoreLaw<T>, a: usize) -> (T, T) {
    let b = law.class;
    let c = law.cov.slice(s![.., ..]);
    (law.mean[b] - law.mean[a], c[[b, b]] + c[[a, a]] - T::lit(2.0) * c[[a, b]])
}
