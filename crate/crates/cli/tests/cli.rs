use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rmtssl::dataset::{write_idx_images, write_idx_labels};
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmtssl")).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn write_config(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

const SMALL: &str = r#"
seed = 11
trials = 2
kernel = "gaussian{1}"

[dataset]
kind = "builtin"
model = "two_means"
p = 100

[layout]
n = 200
labelled = 24
labelled_first = 16
"#;

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn simulate_is_reproducible_and_labelled() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", SMALL);
    for out in ["a", "b"] {
        let o = run(tmp.path(), &["simulate", "--config", "c.toml", "--trials", "1", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["scores.csv", "metrics.csv", "summary.csv"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("# rmtssl simulate config_sha256="), "{file}");
        assert!(text.lines().next().unwrap().ends_with("seed=11"));
    }
    let scores = data_lines(&tmp.path().join("a/scores.csv"));
    assert_eq!(scores[0], "alpha,node_index,class,score_1,score_2");
    assert_eq!(scores.len(), 1 + 176);
    assert!(scores[1].starts_with("-1,24,1,"));

    // A different seed changes the data.
    let o = run(tmp.path(), &["simulate", "--config", "c.toml", "--trials", "1", "--out", "c", "--seed", "12"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(tmp.path().join("a/scores.csv")).unwrap(), fs::read(tmp.path().join("c/scores.csv")).unwrap());
}

#[test]
fn sweep_single_point() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", &format!("{SMALL}\n[alpha]\nmode = \"grid\"\nvalues = [-1.0]\n"));
    let o = run(tmp.path(), &["sweep-alpha", "--config", "c.toml"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_lines(&tmp.path().join("out/sweep.csv"));
    assert_eq!(rows[0], "alpha,empirical_accuracy,empirical_stderr,theoretical_accuracy,trials");
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("-1,") && rows[1].ends_with(",2"));
}

#[test]
fn tune_balanced_stays_at_pagerank() {
    let tmp = TempDir::new().unwrap();
    let body = SMALL.replace("labelled_first = 16", "labelled_first = 12");
    write_config(tmp.path(), "c.toml", &format!("{body}\n[tune]\ngrid = {{ values = [-1.05, -1.0, -0.95] }}\n"));
    let o = run(tmp.path(), &["tune", "--config", "c.toml"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_lines(&tmp.path().join("out/comparison.csv"));
    let fields: Vec<&str> = rows[1].split(',').collect();
    // alpha0, alpha_hat_mean, and the two precisions coincide.
    assert_eq!(fields[1], "-1");
    assert_eq!(fields[2], "-1");
    assert_eq!(fields[3], fields[5]);
    assert_eq!(data_lines(&tmp.path().join("out/curve.csv")).len(), 4);
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "missing.toml", &SMALL.replace("labelled_first = 16", "labelled_first = 24"));
    write_config(tmp.path(), "model.toml", &SMALL.replace("two_means", "two_blobs"));
    for (cmd, file) in [("tune", "missing.toml"), ("expansion-check", "model.toml"), ("simulate", "absent.toml")] {
        let o = run(tmp.path(), &[cmd, "--config", file]);
        assert_eq!(code(&o), 2, "{cmd} {file}: {}", String::from_utf8_lossy(&o.stderr));
    }
    write_config(tmp.path(), "idx.toml", SMALL);
    assert_eq!(code(&run(tmp.path(), &["mnist-prepare", "--config", "idx.toml"])), 2);
}

#[test]
fn solver_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    // A kernel that is zero everywhere leaves every degree at zero.
    write_config(tmp.path(), "c.toml", &SMALL.replace("gaussian{1}", "quad{0,0,0}"));
    let o = run(tmp.path(), &["simulate", "--config", "c.toml"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trial 0"));
}

#[test]
fn expansion_table_has_footer() {
    let tmp = TempDir::new().unwrap();
    let body = format!("{SMALL}\n[expansion]\nsizes = [64, 128]\nreplications = 1\n");
    write_config(tmp.path(), "c.toml", &body);
    let o = run(tmp.path(), &["expansion-check", "--config", "c.toml"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_lines(&tmp.path().join("out/decay.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("n,norm_Wn,norm_Wsqrt,norm_Wone,norm_residual"));
    assert!(rows[1].starts_with("64,") && rows[2].starts_with("128,"));
    let slope: f64 = rows[3].split(',').nth(4).unwrap().parse().unwrap();
    assert!(slope.is_finite());
}

/// Three labels of 8×8 noise; label 5 is brighter.
fn fake_idx(dir: &Path) {
    let (count, side) = (300usize, 8usize);
    let mut pixels = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    let mut state = 12345u32;
    for i in 0..count {
        let label = [3u8, 5, 7][i % 3];
        labels.push(label);
        for _ in 0..side * side {
            state = state.wrapping_mul(1_103_515_245).wrapping_add(12345);
            let noise = (state >> 24) as u8 / 4;
            pixels.push(noise + if label == 5 { 120 } else { 60 });
        }
    }
    write_idx_images(&dir.join("images.idx"), side, side, &pixels).unwrap();
    write_idx_labels(&dir.join("labels.idx"), &labels).unwrap();
}

const IDX: &str = r#"
seed = 5
trials = 2
kernel = "gaussian{1}"

[dataset]
kind = "idx"
images = "images.idx"
labels = "labels.idx"
classes = [3, 5]

[layout]
n = 120
labelled = 16
labelled_first = 12
"#;

#[test]
fn idx_pipeline() {
    let tmp = TempDir::new().unwrap();
    fake_idx(tmp.path());
    write_config(tmp.path(), "c.toml", IDX);
    let o = run(tmp.path(), &["mnist-prepare", "--config", "c.toml"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(tmp.path().join("out/manifest.toml")).unwrap();
    assert!(manifest.starts_with("# rmtssl mnist-prepare"));
    assert!(manifest.contains("master_seed = 5"));
    assert!(manifest.contains("[selection]"));
    let rows = data_lines(&tmp.path().join("out/rows.csv"));
    assert_eq!(rows.len(), 121);
    assert!(rows[1].ends_with(",3,1,1"));
    assert!(rows[120].ends_with(",5,2,0"));

    let o = run(tmp.path(), &["sweep-alpha", "--config", "c.toml"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    write_config(tmp.path(), "big.toml", &IDX.replace("n = 120", "n = 240"));
    assert_eq!(code(&run(tmp.path(), &["simulate", "--config", "big.toml"])), 2);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = rmtssl_cli::ExperimentConfig::load(&path).unwrap();
        // The IDX files are not shipped, so only built-in datasets validate.
        if matches!(cfg.dataset, rmtssl_cli::config::DatasetSpec::Builtin { .. }) {
            cfg.validate().unwrap();
        }
        seen += 1;
    }
    assert!(seen >= 5);
}
