//! Plain-text sign-flip matrices.
//!
//! One row per randomization, one whitespace-separated `+1`/`-1` entry per
//! subject. The first row must be the identity (all `+1`). Blank lines and
//! lines starting with `#` are ignored; row numbers in errors count data rows
//! from 1.

use std::path::Path;

use tfce_core::prelude::RandomizationPlan;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PermutationFileError {
    #[error("cannot read permutation matrix: {0}")]
    Io(String),
    #[error("permutation matrix is empty")]
    Empty,
    #[error("row {row}, column {column}: entry {entry:?} is not +1 or -1")]
    Entry { row: usize, column: usize, entry: String },
    #[error("row {row} has {found} entries, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("row 1 must be the identity (all +1)")]
    MissingIdentity,
}

fn parse_sign(token: &str) -> Option<i8> {
    match token {
        "1" | "+1" | "1.0" | "+1.0" => Some(1),
        // U+2212 MINUS SIGN turns up when matrices are pasted from documents.
        "-1" | "-1.0" | "\u{2212}1" => Some(-1),
        _ => None,
    }
}

pub fn parse_permutation_matrix(text: &str) -> Result<Vec<Vec<i8>>, PermutationFileError> {
    let mut rows: Vec<Vec<i8>> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let row = rows.len() + 1;
        let signs = line
            .split_whitespace()
            .enumerate()
            .map(|(c, tok)| {
                parse_sign(tok).ok_or_else(|| PermutationFileError::Entry { row, column: c + 1, entry: tok.to_string() })
            })
            .collect::<Result<Vec<i8>, _>>()?;
        if let Some(first) = rows.first() {
            if signs.len() != first.len() {
                return Err(PermutationFileError::Ragged { row, found: signs.len(), expected: first.len() });
            }
        }
        rows.push(signs);
    }
    match rows.first() {
        None => Err(PermutationFileError::Empty),
        Some(first) if first.iter().any(|&s| s != 1) => Err(PermutationFileError::MissingIdentity),
        Some(_) => Ok(rows),
    }
}

pub fn read_permutation_matrix(path: impl AsRef<Path>) -> Result<RandomizationPlan, PermutationFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PermutationFileError::Io(format!("{}: {e}", path.display())))?;
    let rows = parse_permutation_matrix(&text)?;
    Ok(RandomizationPlan::from_sign_patterns(rows).expect("rows validated above"))
}

/// Text form accepted by [`parse_permutation_matrix`].
pub fn format_permutation_matrix(rows: &[Vec<i8>]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<&str> = row.iter().map(|&s| if s > 0 { "+1" } else { "-1" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
