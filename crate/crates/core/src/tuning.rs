//! Choice of `α = −1 + β/√p`: the exact balance point, its data-driven
//! estimate, and an oracle grid search.

use ndarray::{Array2, Axis};

use crate::asymptotics::{law_theorem_main, TheoryInputs};
use crate::dataset::{estimate_delta_t, estimate_tau, ClassLayout, LabelledSplit};
use crate::error::{arg, Error, Result};
use crate::gmm::PopulationStats;
use crate::kernel::{degree_vector, weight_matrix, Kernel, KernelConfig, KernelValues};
use crate::propagation::{classify, metrics, normalize, PropagationSystem};
use crate::scalar::{count, Real};
use crate::seeds::derive_seed;

/// Selected `β` and the matching `α`.
#[derive(Debug, Clone)]
pub struct TuningResult<T> {
    pub beta: T,
    pub alpha: T,
    pub diagnostics: Option<TuningDiagnostics<T>>,
}

impl<T: Real> TuningResult<T> {
    pub fn from_beta(beta: T, p: usize) -> Self {
        Self { beta, alpha: alpha_from_beta(beta, p), diagnostics: None }
    }
}

/// `α = −1 + β/√p`.
pub fn alpha_from_beta<T: Real>(beta: T, p: usize) -> T {
    -T::one() + beta / count::<T>(p).sqrt()
}

/// Intermediate quantities of the estimate.
#[derive(Debug, Clone)]
pub struct TuningDiagnostics<T> {
    pub tau_hat: T,
    pub delta_t_hat: T,
    /// `p Σ (F̂_i1 − F̂_i2)` on the full labelled set.
    pub j: T,
    /// The same sum after truncating the labelled set.
    pub j_prime: T,
    /// Labelled samples kept per class in the second solve.
    pub kept_per_class: usize,
}

/// The mean-gap term shared by both classes at `β = 0`.
pub fn delta_m<T: Real>(stats: &PopulationStats<T>, kernel: KernelValues<T>) -> T {
    let two = T::lit(2.0);
    let diff = &stats.mu_tilde[0] - &stats.mu_tilde[1];
    let dt = stats.t[0] - stats.t[1];
    let tm = &stats.t_matrix;
    -two * kernel.slope() * diff.dot(&diff)
        + kernel.excess() * dt * dt
        + two * kernel.curvature() * (tm[[0, 0]] + tm[[1, 1]] - two * tm[[0, 1]])
}

/// Balance point `β₀` at which both classes have the same mean score gap.
///
/// `β₀ = (c_[l]1 − c_[l]2) Δm f(τ) / (2 f'(τ) (t₁ − t₂))`, checked against
/// the mean law before returning.
pub fn beta0_exact<T: Real>(stats: &PopulationStats<T>, layout: &ClassLayout, p: usize, kernel: KernelValues<T>) -> Result<T> {
    if layout.k() != 2 {
        return Err(Error::Unsupported(format!("β₀ needs two classes, got {}", layout.k())));
    }
    let dt = stats.t[0] - stats.t[1];
    if dt == T::zero() {
        return Err(Error::UndefinedBalance("t₁ = t₂".into()));
    }
    if kernel.d1 == T::zero() {
        return arg("f'(τ) = 0 leaves β without effect on the score gaps");
    }
    let dcl = layout.c_labelled_class::<T>(0) - layout.c_labelled_class::<T>(1);
    let beta = dcl * delta_m(stats, kernel) * kernel.f / (T::lit(2.0) * kernel.d1 * dt);

    let inputs = TheoryInputs::new(stats.clone(), layout.clone(), p, kernel)?;
    let m1 = law_theorem_main(&inputs, beta, 0)?.mean;
    let m2 = law_theorem_main(&inputs, beta, 1)?.mean;
    let imbalance = (m1[0] - m1[1]) - (m2[1] - m2[0]);
    if imbalance.abs() > T::lit(1e-8) {
        return Err(Error::Numeric(format!("balance check failed: gaps differ by {imbalance}")));
    }
    Ok(beta)
}

/// Unlabelled set over which the truncated sum `J'` is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TruncatedSum {
    /// The unlabelled samples of the original problem (dropped labelled
    /// samples leave the graph).
    #[default]
    SameSet,
    /// Dropped labelled samples stay in the graph as unlabelled and join
    /// the sum.
    Enlarged,
}

/// Data-driven estimate of `β₀` from two propagation runs at `α = −1`.
pub fn estimate_beta0<T: Real>(split: &LabelledSplit<T>, kernel: &Kernel<T>, sum: TruncatedSum) -> Result<TuningResult<T>> {
    let layout = split.layout();
    if layout.k() != 2 {
        return Err(Error::Unsupported(format!("β̂₀ needs two classes, got {}", layout.k())));
    }
    let p = split.p();
    let tau_hat = estimate_tau(split)?;
    let delta_t_hat = estimate_delta_t(split)?;
    if delta_t_hat.abs() < T::lit(1e-6) * tau_hat {
        return Err(Error::IllConditioned(format!("|Δt̂| = {} is below 1e-6·τ̂", delta_t_hat.abs())));
    }
    let kv = kernel.at(tau_hat);
    if kv.d1 == T::zero() {
        return arg("f'(τ̂) = 0");
    }
    let w = weight_matrix(split, kernel)?;
    let d = degree_vector(&w)?;
    let minus_one = -T::one();
    let j = gap_sum(&PropagationSystem::new(&w, &d, layout)?, minus_one, p, 0)?;

    let counts = layout.labelled_counts();
    let kept = counts[0].min(counts[1]);
    let j_prime = if counts[0] == counts[1] {
        j
    } else {
        let (rows, sub_layout, skip) = truncation(layout, kept, sum)?;
        let ws: Array2<T> = w.select(Axis(0), &rows).select(Axis(1), &rows);
        let ds = degree_vector(&ws)?;
        gap_sum(&PropagationSystem::new(&ws, &ds, &sub_layout)?, minus_one, p, skip)?
    };
    let c_l: T = layout.c_labelled();
    let nu = count::<T>(layout.n_unlabelled());
    let beta = c_l * kv.f / (kv.d1 * delta_t_hat) * (j_prime - j) / nu;
    Ok(TuningResult {
        beta,
        alpha: alpha_from_beta(beta, p),
        diagnostics: Some(TuningDiagnostics { tau_hat, delta_t_hat, j, j_prime, kept_per_class: kept }),
    })
}

// `p Σ_i (F̂_i1 − F̂_i2)` over unlabelled rows, skipping the first `skip`
// unlabelled rows of every class.
fn gap_sum<T: Real>(system: &PropagationSystem<T>, alpha: T, p: usize, skip: usize) -> Result<T> {
    let layout = system.layout().clone();
    let f = normalize(&system.scores(alpha)?);
    let nl = layout.n_labelled();
    let mut acc = T::zero();
    for k in 0..layout.k() {
        for i in layout.unlabelled_rows(k).skip(skip) {
            acc += f[[i - nl, 0]] - f[[i - nl, 1]];
        }
    }
    Ok(acc * count::<T>(p))
}

// Rows of the truncated problem, its layout, and how many leading
// unlabelled rows of each class to leave out of the sum.
fn truncation(layout: &ClassLayout, kept: usize, sum: TruncatedSum) -> Result<(Vec<usize>, ClassLayout, usize)> {
    let mut rows: Vec<usize> = (0..2).flat_map(|k| layout.labelled_rows(k).take(kept)).collect();
    let unl = layout.unlabelled_counts();
    match sum {
        TruncatedSum::SameSet => {
            for k in 0..2 {
                rows.extend(layout.unlabelled_rows(k));
            }
            Ok((rows, ClassLayout::new(vec![kept; 2], unl.to_vec())?, 0))
        }
        TruncatedSum::Enlarged => {
            // Dropped labelled rows precede the original unlabelled rows of
            // their class, and all are summed.
            let mut u = Vec::with_capacity(2);
            for (k, &count) in unl.iter().enumerate() {
                rows.extend(layout.labelled_rows(k).skip(kept));
                rows.extend(layout.unlabelled_rows(k));
                u.push(count + layout.labelled_counts()[k] - kept);
            }
            Ok((rows, ClassLayout::new(vec![kept; 2], u)?, 0))
        }
    }
}

/// One point of a precision curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub alpha: f64,
    pub mean_average_precision: f64,
    pub stderr: f64,
    /// Trials that completed.
    pub trials: usize,
    /// Trials whose solve failed at this point.
    pub failures: usize,
}

/// Grid-search outcome; points with any failure are excluded from the
/// argmax.
#[derive(Debug, Clone)]
pub struct GridSearch {
    pub alpha_star: f64,
    pub curve: Vec<CurvePoint>,
    pub failures: Vec<(f64, String)>,
}

/// Average precision of every grid point on one dataset, sharing the
/// factored system across the grid.
pub fn precision_on_grid<T: Real>(split: &LabelledSplit<T>, kernel: &KernelConfig, grid: &[f64]) -> Vec<Result<f64>> {
    let prepared = estimate_tau(split).and_then(|tau| {
        let k = kernel.resolve(tau)?;
        crate::propagation::build_system(split, &k)
    });
    let system = match prepared {
        Ok(s) => s,
        Err(e) => {
            let msg = e.to_string();
            return grid.iter().map(|_| Err(Error::Numeric(msg.clone()))).collect();
        }
    };
    let truth = split.layout().unlabelled_truth();
    let k = split.layout().k();
    grid.iter()
        .map(|&alpha| {
            let s = system.scores(T::lit(alpha))?;
            let pred = classify(normalize(&s).view());
            Ok(metrics(&pred, &truth, k)?.average_precision)
        })
        .collect()
}

/// Oracle `α*`: for each trial `t` a dataset is drawn with seed
/// `derive_seed(seed, [t])` and evaluated at every grid point.
pub fn alpha_star_grid<T, S>(sampler: S, kernel: &KernelConfig, grid: &[f64], trials: usize, seed: u64) -> Result<GridSearch>
where
    T: Real,
    S: Fn(u64) -> Result<LabelledSplit<T>>,
{
    if grid.is_empty() {
        return arg("α grid is empty");
    }
    if trials == 0 {
        return arg("need at least one trial");
    }
    let results = (0..trials)
        .map(|t| match sampler(derive_seed(seed, &[t as u64])) {
            Ok(split) => precision_on_grid(&split, kernel, grid),
            Err(e) => {
                let msg = e.to_string();
                grid.iter().map(|_| Err(Error::Numeric(msg.clone()))).collect()
            }
        })
        .collect();
    GridSearch::from_trials(grid, results)
}

impl GridSearch {
    /// Aggregates `results[t][i]`, the outcome of trial `t` at `grid[i]`.
    pub fn from_trials(grid: &[f64], results: Vec<Vec<Result<f64>>>) -> Result<Self> {
        let trials = results.len();
        let mut values = vec![Vec::new(); grid.len()];
        let mut failures = Vec::new();
        for row in results {
            if row.len() != grid.len() {
                return arg(format!("{} results for a grid of {}", row.len(), grid.len()));
            }
            for (i, r) in row.into_iter().enumerate() {
                match r {
                    Ok(v) => values[i].push(v),
                    Err(e) => failures.push((grid[i], e.to_string())),
                }
            }
        }
        let curve: Vec<CurvePoint> = grid
            .iter()
            .zip(&values)
            .map(|(&alpha, v)| {
                let (mean, stderr) = mean_stderr(v);
                CurvePoint { alpha, mean_average_precision: mean, stderr, trials: v.len(), failures: trials - v.len() }
            })
            .collect();
        let best = curve
            .iter()
            .filter(|c| c.failures == 0 && c.trials > 0)
            .fold(None::<&CurvePoint>, |best, c| match best {
                Some(b) if b.mean_average_precision > c.mean_average_precision => Some(b),
                Some(b) if b.mean_average_precision == c.mean_average_precision && b.alpha <= c.alpha => Some(b),
                _ => Some(c),
            })
            .ok_or_else(|| Error::Numeric("every grid point failed".into()))?;
        Ok(Self { alpha_star: best.alpha, curve, failures })
    }

    /// The curve point at `alpha_star`.
    pub fn best(&self) -> &CurvePoint {
        self.curve.iter().find(|c| c.alpha == self.alpha_star).expect("alpha_star lies on the grid")
    }
}

/// Sample mean and standard error.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Uniform grid of `points` values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}
