//! Grid and sample serialization: headerless CSV and a JSON envelope.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::density::SamplePoints;
use crate::error::{Error, Result};
use crate::grid::CountGrid;

/// `{n1, n2, data}` with `data` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEnvelope<T> {
    pub n1: usize,
    pub n2: usize,
    pub data: Vec<T>,
}

impl<T: Clone> GridEnvelope<T> {
    pub fn from_array(grid: &Array2<T>) -> Self {
        let (n1, n2) = grid.dim();
        GridEnvelope {
            n1,
            n2,
            data: grid.iter().cloned().collect(),
        }
    }

    pub fn into_array(self) -> Result<Array2<T>> {
        if self.n1 == 0 || self.n2 == 0 || self.data.len() != self.n1 * self.n2 {
            return Err(Error::InvalidGrid(format!(
                "envelope declares {}x{} but holds {} values",
                self.n1,
                self.n2,
                self.data.len()
            )));
        }
        Ok(Array2::from_shape_vec((self.n1, self.n2), self.data).expect("length checked"))
    }
}

fn parse_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Parses a headerless CSV grid; every row must have the same length.
pub fn read_grid_csv<T: FromStr, R: Read>(reader: R) -> Result<Array2<T>>
where
    T::Err: Display,
{
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(parse_err)?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::DimensionMismatch {
                    expected: (rows + 1, c),
                    found: (rows + 1, record.len()),
                })
            }
            _ => {}
        }
        for field in record.iter() {
            data.push(field.parse::<T>().map_err(|e| {
                Error::Parse(format!("row {}: cannot parse {field:?}: {e}", line + 1))
            })?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::InvalidGrid("empty grid".into()))?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("rectangular by construction"))
}

pub fn write_grid_csv<T: Display, W: Write>(grid: &Array2<T>, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let write = |w: &mut BufWriter<W>| -> std::io::Result<()> {
        for row in grid.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::Parse(format!("write failed: {e}")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Reads a grid from `.json` (envelope) or any other extension (CSV).
pub fn load_grid<T>(path: &Path) -> Result<Array2<T>>
where
    T: FromStr + Clone + for<'de> Deserialize<'de>,
    T::Err: Display,
{
    let reader = open(path)?;
    if is_json(path) {
        let env: GridEnvelope<T> =
            serde_json::from_reader(reader).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        env.into_array()
    } else {
        read_grid_csv(reader)
    }
}

/// Writes a grid as JSON envelope or CSV depending on the extension.
pub fn save_grid<T: Display + Clone + Serialize>(grid: &Array2<T>, path: &Path) -> Result<()> {
    let file = create(path)?;
    if is_json(path) {
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &GridEnvelope::from_array(grid))
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        w.flush().map_err(|e| Error::io(path, e))
    } else {
        write_grid_csv(grid, file)
    }
}

pub fn load_counts(path: &Path) -> Result<CountGrid> {
    CountGrid::new(load_grid::<u64>(path)?)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Two-column `x,y` CSV without header.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<SamplePoints> {
    let grid = read_grid_csv::<f64, _>(reader)?;
    if grid.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: (grid.nrows(), 2),
            found: grid.dim(),
        });
    }
    SamplePoints::new(grid.rows().into_iter().map(|r| (r[0], r[1])).collect())
}

pub fn write_samples_csv<W: Write>(samples: &SamplePoints, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let mut write = || -> std::io::Result<()> {
        for (x, y) in samples.points() {
            writeln!(w, "{x},{y}")?;
        }
        w.flush()
    };
    write().map_err(|e| Error::Parse(format!("write failed: {e}")))
}

pub fn load_samples(path: &Path) -> Result<SamplePoints> {
    match read_samples_csv(open(path)?) {
        // an empty file is an empty sample
        Err(Error::InvalidGrid(_)) => Ok(SamplePoints::default()),
        other => other,
    }
}

pub fn save_samples(samples: &SamplePoints, path: &Path) -> Result<()> {
    write_samples_csv(samples, create(path)?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
