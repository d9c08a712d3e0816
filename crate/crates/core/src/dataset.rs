//! JSON-lines persistence for window datasets, one [`WindowSample`] per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensorize::WindowSample;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample {index} has {frames} frames and {labels} labels, expected {expected}")]
    ShapeMismatch { index: usize, frames: usize, labels: usize, expected: usize },
    #[error("malformed line {line}: {source}")]
    MalformedLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_shapes(samples: &[WindowSample]) -> Result<(), DatasetError> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let expected = first.frames.len();
    for (index, s) in samples.iter().enumerate() {
        if s.frames.len() != expected || s.labels.len() != expected || expected == 0 {
            return Err(DatasetError::ShapeMismatch { index, frames: s.frames.len(), labels: s.labels.len(), expected });
        }
    }
    Ok(())
}

pub fn write_dataset_to<W: Write>(mut writer: W, samples: &[WindowSample]) -> Result<(), DatasetError> {
    check_shapes(samples)?;
    for s in samples {
        serde_json::to_writer(&mut writer, s).map_err(io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset_from<R: BufRead>(reader: R) -> Result<Vec<WindowSample>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|source| DatasetError::MalformedLine { line: i + 1, source })?;
        out.push(sample);
    }
    check_shapes(&out)?;
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[WindowSample]) -> Result<(), DatasetError> {
    check_shapes(samples)?;
    write_dataset_to(BufWriter::new(File::create(path)?), samples)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<WindowSample>, DatasetError> {
    read_dataset_from(BufReader::new(File::open(path)?))
}
