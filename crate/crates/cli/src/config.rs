//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! trials = 50
//! out = "runs/imbalanced"
//! kernel = "gaussian{1}"
//!
//! [dataset]
//! kind = "builtin"
//! model = "two_means"
//! p = 784
//!
//! [layout]
//! n = 1024
//! labelled = 64
//! labelled_first = 48
//!
//! [alpha]
//! mode = "grid"
//! from = -1.5
//! to = -0.5
//! points = 11
//! ```

use std::path::{Path, PathBuf};

use rmtssl::dataset::ClassLayout;
use rmtssl::gmm::BuiltinModel;
use rmtssl::kernel::KernelConfig;
use rmtssl::tuning::{linear_grid, TruncatedSum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, CliError, CliResult, Context};

pub const DEFAULT_TRIALS: usize = 50;

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub kernel: KernelConfig,
    pub dataset: DatasetSpec,
    pub layout: LayoutSpec,
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default)]
    pub tune: TuneSpec,
    #[serde(default)]
    pub expansion: ExpansionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Builtin { model: BuiltinModel, p: usize },
    Idx { images: PathBuf, labels: PathBuf, classes: Vec<u8> },
}

impl DatasetSpec {
    pub fn classes(&self) -> usize {
        match self {
            Self::Builtin { model, .. } => model.classes(),
            Self::Idx { classes, .. } => classes.len(),
        }
    }
}

/// Either explicit per-class counts, or `n` and `labelled` with an optional
/// two-class split `labelled_first`. Unlabelled samples are spread evenly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labelled: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labelled_first: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labelled_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabelled_counts: Option<Vec<usize>>,
}

impl LayoutSpec {
    pub fn resolve(&self, k: usize) -> CliResult<ClassLayout> {
        if let (Some(l), Some(u)) = (&self.labelled_counts, &self.unlabelled_counts) {
            if l.len() != k || u.len() != k {
                return config(format!("layout counts must have {k} entries"));
            }
            return ClassLayout::new(l.clone(), u.clone()).invalid("layout");
        }
        if self.labelled_counts.is_some() || self.unlabelled_counts.is_some() {
            return config("layout needs both labelled_counts and unlabelled_counts");
        }
        let (Some(n), Some(nl)) = (self.n, self.labelled) else {
            return config("layout needs n and labelled, or explicit counts");
        };
        if nl >= n {
            return config(format!("{nl} labelled samples out of {n}"));
        }
        if let Some(first) = self.labelled_first {
            if k != 2 {
                return config("labelled_first only applies to two classes");
            }
            return ClassLayout::two_class(n, nl, first).invalid("layout");
        }
        let spread = |total: usize| -> Vec<usize> { (0..k).map(|c| total / k + usize::from(c < total % k)).collect() };
        ClassLayout::new(spread(nl), spread(n - nl)).invalid("layout")
    }

    /// Same totals with `fraction` of the labelled samples in class 1.
    pub fn with_first_fraction(&self, layout: &ClassLayout, fraction: f64) -> CliResult<ClassLayout> {
        if layout.k() != 2 {
            return config("imbalance levels need two classes");
        }
        if !(fraction > 0.0 && fraction < 1.0) {
            return config(format!("imbalance level {fraction} is not in (0, 1)"));
        }
        let nl = layout.n_labelled();
        let first = (fraction * nl as f64).round() as usize;
        ClassLayout::new(vec![first, nl - first], layout.unlabelled_counts().to_vec())
            .invalid(&format!("imbalance level {fraction}"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl GridSpec {
    pub fn range(from: f64, to: f64, points: usize) -> Self {
        Self { values: Vec::new(), from: Some(from), to: Some(to), points: Some(points) }
    }

    pub fn resolve(&self) -> CliResult<Vec<f64>> {
        let grid = match (self.values.is_empty(), self.from, self.to, self.points) {
            (false, None, None, None) => self.values.clone(),
            (true, Some(a), Some(b), Some(n)) if n > 0 => linear_grid(a, b, n),
            _ => return config("grid needs either `values` or all of `from`, `to`, `points`"),
        };
        if grid.iter().any(|a| !a.is_finite()) {
            return config("grid values must be finite");
        }
        Ok(grid)
    }
}

/// How `α` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaSpec {
    Fixed {
        value: f64,
    },
    /// `α = −1 + β/√p`.
    Beta {
        value: f64,
    },
    /// Estimated balance point, per trial.
    Algorithm1,
    Grid(GridSpec),
}

impl Default for AlphaSpec {
    fn default() -> Self {
        Self::Fixed { value: -1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncatedSumSpec {
    #[default]
    SameSet,
    Enlarged,
}

impl From<TruncatedSumSpec> for TruncatedSum {
    fn from(s: TruncatedSumSpec) -> Self {
        match s {
            TruncatedSumSpec::SameSet => Self::SameSet,
            TruncatedSumSpec::Enlarged => Self::Enlarged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSpec {
    /// Fractions of the labelled set given to class 1; empty keeps the
    /// layout as configured.
    #[serde(default)]
    pub imbalance: Vec<f64>,
    /// Oracle search grid over `α`.
    #[serde(default = "TuneSpec::default_grid")]
    pub grid: GridSpec,
    #[serde(default)]
    pub truncated_sum: TruncatedSumSpec,
}

impl TuneSpec {
    fn default_grid() -> GridSpec {
        GridSpec::range(-1.15, -0.85, 31)
    }
}

impl Default for TuneSpec {
    fn default() -> Self {
        Self { imbalance: Vec::new(), grid: Self::default_grid(), truncated_sum: TruncatedSumSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSpec {
    #[serde(default = "ExpansionSpec::default_sizes")]
    pub sizes: Vec<usize>,
    /// `p/n`; defaults to the dataset dimension over the layout size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(default = "ExpansionSpec::default_replications")]
    pub replications: usize,
}

impl ExpansionSpec {
    fn default_sizes() -> Vec<usize> {
        vec![256, 512, 1024]
    }

    fn default_replications() -> usize {
        3
    }
}

impl Default for ExpansionSpec {
    fn default() -> Self {
        Self { sizes: Self::default_sizes(), c0: None, replications: Self::default_replications() }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSpec::Idx { images, labels, .. } = &mut cfg.dataset {
            rebase(images);
            rebase(labels);
        }
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(t) = o.trials {
            self.trials = t;
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> CliResult<ClassLayout> {
        if self.trials == 0 {
            return config("trials must be at least 1");
        }
        match &self.dataset {
            DatasetSpec::Builtin { p, .. } if *p == 0 => return config("p must be positive"),
            DatasetSpec::Idx { images, labels, classes } => {
                for f in [images, labels] {
                    if !f.is_file() {
                        return config(format!("{} does not exist", f.display()));
                    }
                }
                if classes.len() < 2 {
                    return config("need at least two classes");
                }
                let mut sorted = classes.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != classes.len() {
                    return config("classes must be distinct");
                }
            }
            _ => {}
        }
        match &self.alpha {
            AlphaSpec::Fixed { value } | AlphaSpec::Beta { value } if !value.is_finite() => {
                return config("alpha value must be finite")
            }
            AlphaSpec::Grid(g) => {
                g.resolve()?;
            }
            _ => {}
        }
        self.tune.grid.resolve()?;
        if self.expansion.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return config("expansion sizes must be strictly increasing");
        }
        self.layout.resolve(self.dataset.classes())
    }

    /// SHA-256 of the canonical TOML form, without the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let text = toml::to_string(&canonical).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        kernel = "gaussian{1}"
        [dataset]
        kind = "builtin"
        model = "two_means"
        p = 784
        [layout]
        n = 1024
        labelled = 64
        labelled_first = 48
    "#;

    #[test]
    fn defaults_and_layout() {
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(cfg.trials, DEFAULT_TRIALS);
        assert_eq!(cfg.alpha, AlphaSpec::Fixed { value: -1.0 });
        let l = cfg.validate().unwrap();
        assert_eq!(l.labelled_counts(), &[48, 16]);
        assert_eq!(l.unlabelled_counts(), &[480, 480]);
    }

    #[test]
    fn hash_ignores_out_but_not_seed() {
        let a = ExperimentConfig::parse(BASE).unwrap();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn alpha_modes_parse() {
        for (text, want) in [
            ("mode = \"fixed\"\nvalue = -0.5", AlphaSpec::Fixed { value: -0.5 }),
            ("mode = \"beta\"\nvalue = 2.0", AlphaSpec::Beta { value: 2.0 }),
            ("mode = \"algorithm1\"", AlphaSpec::Algorithm1),
            ("mode = \"grid\"\nvalues = [-1.0]", AlphaSpec::Grid(GridSpec { values: vec![-1.0], ..Default::default() })),
        ] {
            let cfg = ExperimentConfig::parse(&format!("{BASE}\n[alpha]\n{text}")).unwrap();
            assert_eq!(cfg.alpha, want);
        }
    }

    #[test]
    fn validation_errors() {
        let missing_class = BASE.replace("labelled_first = 48", "labelled_first = 64");
        assert!(matches!(ExperimentConfig::parse(&missing_class).unwrap().validate(), Err(CliError::Config(_))));
        assert!(ExperimentConfig::parse(&BASE.replace("two_means", "four_means")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}\nbogus = 1")).is_err());
        let idx = r#"
            kernel = "gaussian{1}"
            [dataset]
            kind = "idx"
            images = "/nonexistent/images"
            labels = "/nonexistent/labels"
            classes = [8, 9]
            [layout]
            n = 100
            labelled = 10
        "#;
        assert!(matches!(ExperimentConfig::parse(idx).unwrap().validate(), Err(CliError::Config(_))));
        let grid = format!("{BASE}\n[alpha]\nmode = \"grid\"\nfrom = -1.0");
        assert!(ExperimentConfig::parse(&grid).unwrap().validate().is_err());
    }

    #[test]
    fn balanced_spread_and_imbalance() {
        let spec = LayoutSpec { n: Some(100), labelled: Some(10), ..Default::default() };
        let l = spec.resolve(3).unwrap();
        assert_eq!(l.labelled_counts(), &[4, 3, 3]);
        assert_eq!(l.n(), 100);
        let two = spec.resolve(2).unwrap();
        let tilted = spec.with_first_fraction(&two, 0.2).unwrap();
        assert_eq!(tilted.labelled_counts(), &[2, 8]);
        assert!(spec.with_first_fraction(&two, 1.0).is_err());
    }
}
