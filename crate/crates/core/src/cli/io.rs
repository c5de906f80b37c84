//! Plain-text file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::CliError;
use crate::spectral_core::{SpectralSamples, StateSpacePair};

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.display().to_string(), e))
}

/// Lines with `#` comments and blank lines removed.
fn content_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
}

fn parse_number(token: &str, path: &Path) -> Result<f64, CliError> {
    token
        .parse::<f64>()
        .map_err(|_| CliError::Input(format!("{}: not a number: {token:?}", path.display())))
}

/// Whitespace- or comma-separated numbers, e.g. a time series or a
/// covariance list.
pub fn read_numbers(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for line in content_lines(&text) {
        for tok in line.split(|c: char| c.is_whitespace() || c == ',') {
            if !tok.is_empty() {
                out.push(parse_number(tok, path)?);
            }
        }
    }
    Ok(out)
}

/// Consecutive row-major blocks, each preceded by a `rows cols` header.
pub fn read_matrix_blocks(path: &Path) -> Result<Vec<DMatrix<f64>>, CliError> {
    let text = read_text(path)?;
    let tokens: Vec<&str> = content_lines(&text)
        .flat_map(|l| l.split_whitespace())
        .collect();
    let mut blocks = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        if pos + 2 > tokens.len() {
            return Err(CliError::Input(format!("{}: truncated header", path.display())));
        }
        let dims: Vec<usize> = tokens[pos..pos + 2]
            .iter()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Input(format!("{}: bad header", path.display())))?;
        let (rows, cols) = (dims[0], dims[1]);
        pos += 2;
        let count = rows * cols;
        if rows == 0 || cols == 0 || pos + count > tokens.len() {
            return Err(CliError::Input(format!(
                "{}: expected {rows}x{cols} entries",
                path.display()
            )));
        }
        let values = tokens[pos..pos + count]
            .iter()
            .map(|t| parse_number(t, path))
            .collect::<Result<Vec<_>, _>>()?;
        blocks.push(DMatrix::from_row_slice(rows, cols, &values));
        pos += count;
    }
    Ok(blocks)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let mut blocks = read_matrix_blocks(path)?;
    if blocks.len() != 1 {
        return Err(CliError::Input(format!(
            "{}: expected one matrix, found {}",
            path.display(),
            blocks.len()
        )));
    }
    Ok(blocks.remove(0))
}

/// `A` block followed by a single-column `B` block.
pub fn read_system(path: &Path) -> Result<StateSpacePair, CliError> {
    let blocks = read_matrix_blocks(path)?;
    if blocks.len() != 2 || blocks[1].ncols() != 1 {
        return Err(CliError::Input(format!(
            "{}: expected an A block and a one-column B block",
            path.display()
        )));
    }
    let b = DVector::from_column_slice(blocks[1].as_slice());
    Ok(StateSpacePair::new(blocks[0].clone(), b)?)
}

/// `theta,phi,psi,q`, one row per grid node.
pub fn spectrum_csv(phi: &SpectralSamples, psi: &SpectralSamples, q: &SpectralSamples) -> String {
    let mut out = String::from("theta,phi,psi,q\n");
    let angles = phi.grid().angles();
    for j in 0..angles.len() {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            angles[j],
            phi.values()[j],
            psi.values()[j],
            q.values()[j]
        );
    }
    out
}

pub fn series_text(samples: &[f64]) -> String {
    let mut out = String::with_capacity(samples.len() * 24);
    for v in samples {
        let _ = writeln!(out, "{v:.16e}");
    }
    out
}

/// `key = value` report.
#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.set(key, format!("{value:.16e}"));
    }

    pub fn vector(&mut self, key: &str, values: &[f64]) {
        let body: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
        self.set(key, format!("[{}]", body.join(", ")));
    }

    pub fn matrix(&mut self, key: &str, m: &DMatrix<f64>) {
        let rows: Vec<String> = m
            .row_iter()
            .map(|r| {
                r.iter()
                    .map(|v| format!("{v:.16e}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        self.set(key, format!("[{}]", rows.join("; ")));
    }

    pub fn comment(&mut self, text: &str) {
        self.lines.push(format!("# {text}"));
    }

    pub fn render(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_blocks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sys.txt");
        fs::write(&path, "# system\n2 2\n0.5 0.1\n0 0.2\n2 1\n1\n0.5\n").unwrap();
        let blocks = read_matrix_blocks(&path).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0][(0, 1)], 0.1);
        assert_eq!(blocks[1][(1, 0)], 0.5);
        let sys = read_system(&path).unwrap();
        assert_eq!(sys.dim(), 2);
    }

    #[test]
    fn numbers_skip_comments_and_commas() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        fs::write(&path, "1.0\n# lag one\n0.5, 0.25\n\n").unwrap();
        assert_eq!(read_numbers(&path).unwrap(), vec![1.0, 0.5, 0.25]);
        fs::write(&path, "1.0\nabc\n").unwrap();
        assert!(read_numbers(&path).is_err());
    }

    #[test]
    fn truncated_matrix_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        fs::write(&path, "2 2\n1 0 0\n").unwrap();
        assert!(read_matrix(&path).is_err());
    }
}
