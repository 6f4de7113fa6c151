//! Newline-delimited example files.

use std::fs;
use std::path::Path;

use hcb_core::{Error, Result, TokenId};

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Parses one record of space-separated token ids.
pub fn parse_ids(line: &str) -> Result<Vec<TokenId>> {
    line.split_whitespace()
        .map(|w| {
            w.parse::<TokenId>()
                .map_err(|_| Error::InvalidInput(format!("not a token id: {w:?}")))
        })
        .collect()
}

/// Reads a file of space-separated token-id records, skipping blank lines.
pub fn load_ids(path: &Path) -> Result<Vec<Vec<TokenId>>> {
    read_lines(path)?.iter().map(|l| parse_ids(l)).collect()
}

/// Reads a raw-text file and tokenizes each nonblank line.
pub fn load_text(path: &Path, tokenize: impl Fn(&str) -> Result<Vec<TokenId>>) -> Result<Vec<Vec<TokenId>>> {
    read_lines(path)?.iter().map(|l| tokenize(l)).collect()
}

/// Writes records as space-separated ids, one per line.
pub fn write_ids(path: &Path, corpus: &[Vec<TokenId>]) -> Result<()> {
    let mut out = String::new();
    for seq in corpus {
        let words: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}
