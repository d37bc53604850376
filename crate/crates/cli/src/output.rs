//! CSV files with a provenance comment line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// First line of every output file.
pub fn header_line(command: &str, config_hash: &str, seed: u64) -> String {
    format!("# rmtssl {command} config_sha256={config_hash} seed={seed}")
}

/// A CSV file being written; the comment line precedes the column header.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(dir: &Path, name: &str, header: &str, columns: &[String]) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        let path = dir.join(name);
        let io = |source| CliError::Io { path: path.clone(), source };
        let mut file = BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(file, "{header}").map_err(io)?;
        let mut out = Self { writer: csv::Writer::from_writer(file), path };
        out.row(columns)?;
        Ok(out)
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, fields: impl IntoIterator<Item = S>) -> CliResult<()> {
        self.writer.write_record(fields).map_err(|source| CliError::Csv { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.writer.flush().map_err(|source| CliError::Io { path: self.path.clone(), source })?;
        Ok(self.path)
    }
}

/// Shortest round-trip text of a float, in exponent form outside
/// `[1e-4, 1e15)`; empty for NaN so spreadsheets read it as missing.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v.is_nan() {
        String::new()
    } else if a == 0.0 || (1e-4..1e15).contains(&a) || a.is_infinite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `prefix_1..prefix_k`.
pub fn numbered(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|c| format!("{prefix}_{c}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_text() {
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(-1.0), "-1");
        assert_eq!(num(4.440892098500626e-16), "4.440892098500626e-16");
        assert_eq!(num(f64::NAN), "");
        assert_eq!(num("1e-300".parse().unwrap()), "1e-300");
    }
}
