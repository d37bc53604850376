//! The subcommands. Trials run on the rayon pool and are merged in trial
//! order; trial `t` of imbalance level `l` samples with
//! `derive_seed(seed, [t])` or `derive_seed(seed, [l, t])`.

use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;
use rmtssl::asymptotics::{accuracy_multiclass, accuracy_two_class, law_general, Conditioning, TheoryInputs};
use rmtssl::dataset::{estimate_tau, ClassLayout, IdxSource};
use rmtssl::gmm::{builtin_model, population_stats, MixtureModel};
use rmtssl::propagation::{build_system, center, classify, metrics, normalize, Metrics};
use rmtssl::rmt_expansion::residual_decay;
use rmtssl::seeds::derive_seed;
use rmtssl::tuning::{alpha_from_beta, beta0_exact, estimate_beta0, mean_stderr, precision_on_grid, GridSearch};
use rmtssl::{Mixture, Split};

use crate::config::{AlphaSpec, DatasetSpec, ExperimentConfig};
use crate::error::{config, CliError, CliResult, Context};
use crate::output::{cols, header_line, num, numbered, CsvOut};

/// Monte Carlo draws behind each multi-class theoretical accuracy.
pub const THEORY_DRAWS: usize = 20_000;

/// Ridge added to empirical class covariances so they factor.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

enum Source {
    Builtin(Mixture),
    Idx { data: IdxSource, classes: Vec<u8> },
}

/// A validated configuration with its data source opened.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub layout: ClassLayout,
    source: Source,
    hash: String,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> CliResult<Self> {
        let layout = cfg.validate()?;
        let source = match &cfg.dataset {
            DatasetSpec::Builtin { model, p } => Source::Builtin(builtin_model(*model, *p).invalid("dataset")?),
            DatasetSpec::Idx { images, labels, classes } => {
                let data = IdxSource::open(images, labels).invalid("dataset")?;
                for (k, &c) in classes.iter().enumerate() {
                    let have = data.pool(c).len();
                    if have < layout.class_count(k) {
                        return config(format!("label {c}: {have} images, layout needs {}", layout.class_count(k)));
                    }
                }
                Source::Idx { data, classes: classes.clone() }
            }
        };
        let hash = cfg.hash();
        Ok(Self { cfg, layout, source, hash })
    }

    pub fn p(&self) -> usize {
        match &self.source {
            Source::Builtin(m) => m.p(),
            Source::Idx { data, .. } => data.images.dim(),
        }
    }

    pub fn header(&self, command: &str) -> String {
        header_line(command, &self.hash, self.cfg.seed)
    }

    fn out(&self) -> PathBuf {
        self.cfg.out.clone()
    }

    pub fn sample(&self, layout: &ClassLayout, seed: u64) -> rmtssl::Result<Split> {
        match &self.source {
            Source::Builtin(m) => m.sample(layout, seed),
            Source::Idx { data, classes } => data.sample(classes, layout, seed).map(|(s, _)| s),
        }
    }

    /// The mixture used for predictions: the built-in model, or Gaussian
    /// classes matching the moments of every image of each label.
    pub fn theory_model(&self) -> CliResult<Mixture> {
        match &self.source {
            Source::Builtin(m) => Ok(m.clone()),
            Source::Idx { data, classes } => {
                let mut means = Vec::new();
                let mut covs = Vec::new();
                for &c in classes {
                    let (m, mut cov) = data.class_moments::<f64>(c).context(|| format!("moments of label {c}"))?;
                    cov.diag_mut().mapv_inplace(|v| v + COVARIANCE_RIDGE);
                    means.push(m);
                    covs.push(cov);
                }
                MixtureModel::new(means, covs).context(|| "fitting the class mixture".into())
            }
        }
    }

    fn alphas(&self, split: &Split) -> rmtssl::Result<Vec<f64>> {
        Ok(match &self.cfg.alpha {
            AlphaSpec::Fixed { value } => vec![*value],
            AlphaSpec::Beta { value } => vec![alpha_from_beta(*value, split.p())],
            AlphaSpec::Algorithm1 => {
                let kernel = self.cfg.kernel.resolve(estimate_tau(split)?)?;
                vec![estimate_beta0(split, &kernel, self.cfg.tune.truncated_sum.into())?.alpha]
            }
            AlphaSpec::Grid(g) => g.resolve().map_err(|e| rmtssl::Error::Argument(e.to_string()))?,
        })
    }
}

/// First error in trial order, so failures read the same at any thread
/// count.
fn in_order<T>(results: Vec<CliResult<T>>) -> CliResult<Vec<T>> {
    results.into_iter().collect()
}

/// One simulated trial.
pub struct SimTrial {
    pub alphas: Vec<f64>,
    pub metrics: Vec<Metrics>,
    /// Share of unlabelled samples each class receives from the raw scores.
    pub raw_share: Vec<Vec<f64>>,
    /// Raw unlabelled scores minus their row mean, per `α` (trial 0 only).
    pub centered: Option<Vec<Array2<f64>>>,
}

/// Runs one trial at every configured `α`.
pub fn simulate_trial(exp: &Experiment, t: usize) -> CliResult<SimTrial> {
    let ctx = || format!("trial {t}");
    let split = exp.sample(&exp.layout, derive_seed(exp.cfg.seed, &[t as u64])).context(ctx)?;
    let alphas = exp.alphas(&split).context(ctx)?;
    let kernel = exp.cfg.kernel.resolve(estimate_tau(&split).context(ctx)?).context(ctx)?;
    let system = build_system(&split, &kernel).context(ctx)?;
    let truth = exp.layout.unlabelled_truth();
    let k = exp.layout.k();
    let mut out = SimTrial { alphas: alphas.clone(), metrics: Vec::new(), raw_share: Vec::new(), centered: None };
    let mut centered = Vec::new();
    for &alpha in &alphas {
        let ctx = || format!("trial {t}, α = {alpha}");
        let scores = system.scores(alpha).context(ctx)?;
        let raw = classify(scores.unlabelled());
        let mut share = vec![0.0; k];
        for &c in &raw {
            share[c] += 1.0;
        }
        share.iter_mut().for_each(|v| *v /= raw.len() as f64);
        let f = normalize(&scores);
        out.metrics.push(metrics(&classify(f.view()), &truth, k).context(ctx)?);
        out.raw_share.push(share);
        if t == 0 {
            centered.push(center(scores.unlabelled()));
        }
    }
    if t == 0 {
        out.centered = Some(centered);
    }
    Ok(out)
}

pub fn cmd_simulate(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    let trials: Vec<SimTrial> = in_order((0..exp.cfg.trials).into_par_iter().map(|t| simulate_trial(exp, t)).collect())?;
    let k = exp.layout.k();
    let header = exp.header("simulate");
    let dir = exp.out();
    let mut written = Vec::new();

    let mut columns = cols(&["alpha", "node_index", "class"]);
    columns.extend(numbered("score", k));
    let mut scores = CsvOut::create(&dir, "scores.csv", &header, &columns)?;
    let first = &trials[0];
    let nl = exp.layout.n_labelled();
    let truth = exp.layout.unlabelled_truth();
    for (alpha, f) in first.alphas.iter().zip(first.centered.iter().flatten()) {
        for (i, row) in f.rows().into_iter().enumerate() {
            let mut rec = vec![num(*alpha), (nl + i).to_string(), (truth[i] + 1).to_string()];
            rec.extend(row.iter().map(|&v| num(v)));
            scores.row(rec)?;
        }
    }
    written.push(scores.finish()?);

    let mut columns = cols(&["trial", "alpha", "accuracy", "average_precision"]);
    columns.extend(numbered("recall", k));
    columns.extend(numbered("precision", k));
    columns.extend(numbered("raw_share", k));
    let mut per_trial = CsvOut::create(&dir, "metrics.csv", &header, &columns)?;
    for (t, trial) in trials.iter().enumerate() {
        for ((alpha, m), share) in trial.alphas.iter().zip(&trial.metrics).zip(&trial.raw_share) {
            let mut rec = vec![t.to_string(), num(*alpha), num(m.accuracy), num(m.average_precision)];
            rec.extend(m.recall.iter().chain(&m.precision).chain(share).map(|&v| num(v)));
            per_trial.row(rec)?;
        }
    }
    written.push(per_trial.finish()?);

    let columns = cols(&["alpha", "accuracy", "accuracy_stderr", "average_precision", "average_precision_stderr", "trials"]);
    let mut summary = CsvOut::create(&dir, "summary.csv", &header, &columns)?;
    for i in 0..first.alphas.len() {
        let alpha = trials.iter().map(|t| t.alphas[i]).sum::<f64>() / trials.len() as f64;
        let (acc, acc_se) = mean_stderr(&trials.iter().map(|t| t.metrics[i].accuracy).collect::<Vec<_>>());
        let (ap, ap_se) = mean_stderr(&trials.iter().map(|t| t.metrics[i].average_precision).collect::<Vec<_>>());
        summary.row([num(alpha), num(acc), num(acc_se), num(ap), num(ap_se), trials.len().to_string()])?;
    }
    written.push(summary.finish()?);
    Ok(written)
}

/// Predicted accuracy at `alpha`, averaged over unlabelled samples.
pub fn predicted_accuracy(inputs: &TheoryInputs<f64>, alpha: f64, seed: u64) -> rmtssl::Result<f64> {
    let k = inputs.layout.k();
    let laws = (0..k).map(|b| law_general(inputs, alpha, b, Conditioning::Unconditional)).collect::<rmtssl::Result<Vec<_>>>()?;
    if k == 2 {
        return Ok(accuracy_two_class(&laws, &inputs.layout)?.mean);
    }
    let acc = accuracy_multiclass(&laws, THEORY_DRAWS, seed)?;
    let u = inputs.layout.unlabelled_counts();
    let total: usize = u.iter().sum();
    Ok(acc.per_class.iter().zip(u).map(|(a, &n)| a * n as f64).sum::<f64>() / total as f64)
}

/// `(α, empirical mean, stderr, predicted, successful trials)` per grid point.
pub type SweepRow = (f64, f64, f64, f64, usize);

pub fn sweep(exp: &Experiment) -> CliResult<Vec<SweepRow>> {
    let grid = match &exp.cfg.alpha {
        AlphaSpec::Grid(g) => g.resolve()?,
        AlphaSpec::Fixed { value } => vec![*value],
        AlphaSpec::Beta { value } => vec![alpha_from_beta(*value, exp.p())],
        AlphaSpec::Algorithm1 => return config("sweep-alpha needs a fixed α, β or a grid"),
    };
    let per_trial: Vec<Vec<Option<f64>>> = in_order(
        (0..exp.cfg.trials)
            .into_par_iter()
            .map(|t| {
                let ctx = || format!("trial {t}");
                let split = exp.sample(&exp.layout, derive_seed(exp.cfg.seed, &[t as u64])).context(ctx)?;
                let kernel = exp.cfg.kernel.resolve(estimate_tau(&split).context(ctx)?).context(ctx)?;
                let system = build_system(&split, &kernel).context(ctx)?;
                let truth = exp.layout.unlabelled_truth();
                Ok(grid
                    .iter()
                    .map(|&a| {
                        let s = system.scores(a).ok()?;
                        let m = metrics(&classify(normalize(&s).view()), &truth, exp.layout.k()).ok()?;
                        Some(m.accuracy)
                    })
                    .collect())
            })
            .collect(),
    )?;

    let model = exp.theory_model()?;
    let stats = population_stats(&model, &exp.layout).context(|| "population statistics".into())?;
    let kernel = exp.cfg.kernel.resolve(stats.tau).context(|| "kernel".into())?;
    let inputs = TheoryInputs::new(stats.clone(), exp.layout.clone(), model.p(), kernel.at(stats.tau))
        .context(|| "prediction inputs".into())?;

    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let values: Vec<f64> = per_trial.iter().filter_map(|t| t[i]).collect();
            let (mean, se) = mean_stderr(&values);
            let predicted =
                predicted_accuracy(&inputs, alpha, derive_seed(exp.cfg.seed, &[u64::MAX, i as u64])).unwrap_or(f64::NAN);
            (alpha, mean, se, predicted, values.len())
        })
        .collect())
}

pub fn cmd_sweep_alpha(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    let rows = sweep(exp)?;
    let columns = cols(&["alpha", "empirical_accuracy", "empirical_stderr", "theoretical_accuracy", "trials"]);
    let mut out = CsvOut::create(&exp.out(), "sweep.csv", &exp.header("sweep-alpha"), &columns)?;
    for (alpha, mean, se, predicted, n) in rows {
        out.row([num(alpha), num(mean), num(se), num(predicted), n.to_string()])?;
    }
    Ok(vec![out.finish()?])
}

/// One trial of the tuning comparison.
#[derive(Debug)]
pub struct TuneTrial {
    pub beta_hat: f64,
    pub alpha_hat: f64,
    pub j: f64,
    pub j_prime: f64,
    pub delta_t_hat: f64,
    pub tau_hat: f64,
    pub ap_pagerank: f64,
    pub ap_alpha_hat: f64,
    /// Average precision at every oracle grid point.
    pub grid: Vec<rmtssl::Result<f64>>,
}

/// Results for one labelled-imbalance level.
pub struct TuneLevel {
    pub fraction_first: f64,
    pub beta0: Option<f64>,
    pub trials: Vec<TuneTrial>,
    pub search: GridSearch,
}

pub fn tune(exp: &Experiment) -> CliResult<Vec<TuneLevel>> {
    if exp.layout.k() != 2 {
        return config("tune needs two classes");
    }
    let grid = exp.cfg.tune.grid.resolve()?;
    let layouts: Vec<ClassLayout> = if exp.cfg.tune.imbalance.is_empty() {
        vec![exp.layout.clone()]
    } else {
        exp.cfg.tune.imbalance.iter().map(|&f| exp.cfg.layout.with_first_fraction(&exp.layout, f)).collect::<CliResult<_>>()?
    };
    let truncated = exp.cfg.tune.truncated_sum.into();
    let model = match &exp.source {
        Source::Builtin(m) => Some(m),
        Source::Idx { .. } => None,
    };
    let mut levels = Vec::with_capacity(layouts.len());
    for (li, layout) in layouts.iter().enumerate() {
        let fraction_first = layout.labelled_counts()[0] as f64 / layout.n_labelled() as f64;
        let beta0 = model.and_then(|m| {
            let st = population_stats(m, layout).ok()?;
            let kernel = exp.cfg.kernel.resolve(st.tau).ok()?;
            beta0_exact(&st, layout, m.p(), kernel.at(st.tau)).ok()
        });
        let trials = in_order(
            (0..exp.cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let ctx = || format!("level {fraction_first}, trial {t}");
                    let split = exp.sample(layout, derive_seed(exp.cfg.seed, &[li as u64, t as u64])).context(ctx)?;
                    let kernel = exp.cfg.kernel.resolve(estimate_tau(&split).context(ctx)?).context(ctx)?;
                    let r = estimate_beta0(&split, &kernel, truncated).context(ctx)?;
                    let d = r.diagnostics.clone().expect("estimate carries diagnostics");
                    let mut alphas = grid.clone();
                    alphas.extend([-1.0, r.alpha]);
                    let mut values = precision_on_grid(&split, &exp.cfg.kernel, &alphas);
                    let ap_alpha_hat = values.pop().expect("two extra points").context(ctx)?;
                    let ap_pagerank = values.pop().expect("two extra points").context(ctx)?;
                    Ok(TuneTrial {
                        beta_hat: r.beta,
                        alpha_hat: r.alpha,
                        j: d.j,
                        j_prime: d.j_prime,
                        delta_t_hat: d.delta_t_hat,
                        tau_hat: d.tau_hat,
                        ap_pagerank,
                        ap_alpha_hat,
                        grid: values,
                    })
                })
                .collect(),
        )?;
        let search = GridSearch::from_trials(&grid, trials.iter().map(|t| t.grid.iter().map(clone_result).collect()).collect())
            .context(|| format!("oracle search at level {fraction_first}"))?;
        levels.push(TuneLevel { fraction_first, beta0, trials, search });
    }
    Ok(levels)
}

fn clone_result(r: &rmtssl::Result<f64>) -> rmtssl::Result<f64> {
    match r {
        Ok(v) => Ok(*v),
        Err(e) => Err(rmtssl::Error::Numeric(e.to_string())),
    }
}

pub fn cmd_tune(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    let levels = tune(exp)?;
    let header = exp.header("tune");
    let dir = exp.out();
    let p = exp.p();

    let columns =
        cols(&["labelled_fraction_1", "trial", "beta_hat", "alpha_hat", "beta0", "j", "j_prime", "delta_t_hat", "tau_hat"]);
    let mut tuning = CsvOut::create(&dir, "tuning.csv", &header, &columns)?;
    for level in &levels {
        for (t, r) in level.trials.iter().enumerate() {
            tuning.row([
                num(level.fraction_first),
                t.to_string(),
                num(r.beta_hat),
                num(r.alpha_hat),
                num(level.beta0.unwrap_or(f64::NAN)),
                num(r.j),
                num(r.j_prime),
                num(r.delta_t_hat),
                num(r.tau_hat),
            ])?;
        }
    }

    let columns = cols(&["labelled_fraction_1", "alpha", "mean_avg_precision", "stderr", "trials"]);
    let mut curve = CsvOut::create(&dir, "curve.csv", &header, &columns)?;
    for level in &levels {
        for c in &level.search.curve {
            curve.row([
                num(level.fraction_first),
                num(c.alpha),
                num(c.mean_average_precision),
                num(c.stderr),
                c.trials.to_string(),
            ])?;
        }
    }

    let columns = cols(&[
        "labelled_fraction_1",
        "alpha0",
        "alpha_hat_mean",
        "ap_pagerank",
        "ap_pagerank_stderr",
        "ap_alpha_hat",
        "ap_alpha_hat_stderr",
        "alpha_star",
        "ap_alpha_star",
        "ap_alpha_star_stderr",
        "trials",
    ]);
    let mut comparison = CsvOut::create(&dir, "comparison.csv", &header, &columns)?;
    for level in &levels {
        let pick = |f: fn(&TuneTrial) -> f64| mean_stderr(&level.trials.iter().map(f).collect::<Vec<_>>());
        let (alpha_hat, _) = pick(|t| t.alpha_hat);
        let (pr, pr_se) = pick(|t| t.ap_pagerank);
        let (ah, ah_se) = pick(|t| t.ap_alpha_hat);
        let best = level.search.best();
        comparison.row([
            num(level.fraction_first),
            num(level.beta0.map_or(f64::NAN, |b| alpha_from_beta(b, p))),
            num(alpha_hat),
            num(pr),
            num(pr_se),
            num(ah),
            num(ah_se),
            num(best.alpha),
            num(best.mean_average_precision),
            num(best.stderr),
            level.trials.len().to_string(),
        ])?;
    }
    Ok(vec![tuning.finish()?, curve.finish()?, comparison.finish()?])
}

pub fn cmd_expansion_check(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    let DatasetSpec::Builtin { model, p } = &exp.cfg.dataset else {
        return config("expansion-check needs a built-in model");
    };
    let spec = &exp.cfg.expansion;
    let c0 = spec.c0.unwrap_or(*p as f64 / exp.layout.n() as f64);
    if spec.replications == 0 {
        return config("expansion replications must be at least 1");
    }
    let seeds: Vec<u64> = (0..spec.replications).map(|r| derive_seed(exp.cfg.seed, &[r as u64])).collect();
    let table = residual_decay::<f64>(*model, c0, &exp.cfg.kernel, &spec.sizes, &seeds).context(|| "expansion decay".into())?;
    let columns = cols(&["n", "norm_Wn", "norm_Wsqrt", "norm_Wone", "norm_residual", "p", "max_reconstruction_error"]);
    let mut out = CsvOut::create(&exp.out(), "decay.csv", &exp.header("expansion-check"), &columns)?;
    for r in &table.rows {
        out.row([
            r.n.to_string(),
            num(r.norm_w_n),
            num(r.norm_w_sqrt),
            num(r.norm_w_one),
            num(r.norm_residual),
            r.p.to_string(),
            num(r.reconstruction),
        ])?;
    }
    out.row([
        "slope".to_string(),
        String::new(),
        String::new(),
        String::new(),
        num(table.residual_slope),
        String::new(),
        String::new(),
    ])?;
    Ok(vec![out.finish()?])
}

pub fn cmd_mnist_prepare(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    let Source::Idx { data, classes } = &exp.source else {
        return config("mnist-prepare needs an idx dataset");
    };
    let (_, selection) =
        data.sample::<f64>(classes, &exp.layout, derive_seed(exp.cfg.seed, &[0])).context(|| "sampling".into())?;
    let dir = exp.out();
    let header = exp.header("mnist-prepare");
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let manifest = dir.join("manifest.toml");
    #[derive(serde::Serialize)]
    struct Manifest<'a> {
        master_seed: u64,
        trial: u64,
        selection: &'a rmtssl::dataset::IdxSelection,
    }
    let record = Manifest { master_seed: exp.cfg.seed, trial: 0, selection: &selection };
    let body = toml::to_string(&record).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(&manifest, format!("{header}\n{body}")).map_err(|source| CliError::Io { path: manifest.clone(), source })?;

    let columns = cols(&["node_index", "source_index", "label", "class", "labelled"]);
    let mut rows = CsvOut::create(&dir, "rows.csv", &header, &columns)?;
    let classes_of_rows = exp.layout.row_classes();
    let nl = exp.layout.n_labelled();
    for (i, (&src, &k)) in selection.rows.iter().zip(&classes_of_rows).enumerate() {
        rows.row([i.to_string(), src.to_string(), classes[k].to_string(), (k + 1).to_string(), u8::from(i < nl).to_string()])?;
    }
    Ok(vec![manifest, rows.finish()?])
}
