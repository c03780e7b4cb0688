//! Shared JSON Lines plumbing: every file format in this crate is a header
//! line followed by one record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

/// A parsed line together with its 1-based line number.
pub struct Numbered<T> {
    pub line: usize,
    pub value: T,
}

pub(crate) fn source_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Non-blank lines of a file with their line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

pub fn parse_line<T: DeserializeOwned>(source: &str, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::format(source, line, e.to_string()))
}

/// Reads a file made of one header line followed by records.
pub fn read_with_header<H, R>(path: &Path) -> Result<(Numbered<H>, Vec<Numbered<R>>)>
where
    H: DeserializeOwned,
    R: DeserializeOwned,
{
    let source = source_name(path);
    let lines = read_lines(path)?;
    let mut iter = lines.into_iter();
    let (hline, htext) = iter
        .next()
        .ok_or_else(|| Error::format(&source, 0, "empty file: missing header line"))?;
    let header = Numbered {
        line: hline,
        value: parse_line(&source, hline, &htext)?,
    };
    let mut records = Vec::new();
    for (line, text) in iter {
        records.push(Numbered {
            line,
            value: parse_line(&source, line, &text)?,
        });
    }
    Ok((header, records))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_line<W: Write, T: Serialize + ?Sized>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}
