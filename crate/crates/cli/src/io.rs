//! Profile ingestion (CSV or NDJSON) and output sinks.

use std::cell::RefCell;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::rc::Rc;

use eigencc::profile_model::ResponseVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// NDJSON when the first non-blank byte is `{`, CSV otherwise.
    #[default]
    Auto,
    Csv,
    Ndjson,
}

pub fn open_source(src: &str) -> CliResult<Box<dyn BufRead>> {
    if src == "-" {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        let f = File::open(src).map_err(|e| CliError::io(src, e))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

/// Skips leading whitespace and reports whether the next byte opens a JSON
/// object.
fn sniff_ndjson(reader: &mut dyn BufRead, name: &str) -> CliResult<bool> {
    loop {
        let buf = reader.fill_buf().map_err(|e| CliError::io(name, e))?;
        if buf.is_empty() {
            return Ok(false);
        }
        let skip = buf.iter().take_while(|b| b.is_ascii_whitespace()).count();
        if skip < buf.len() {
            let first = buf[skip];
            reader.consume(skip);
            return Ok(first == b'{');
        }
        let len = buf.len();
        reader.consume(len);
    }
}

#[derive(Deserialize)]
struct NdjsonRow {
    t: i64,
    y: Vec<f64>,
}

enum Rows {
    Csv {
        records: csv::StringRecordsIntoIter<Box<dyn BufRead>>,
        first: bool,
        next_t: i64,
    },
    Ndjson {
        lines: io::Lines<Box<dyn BufRead>>,
        line: usize,
    },
}

/// Lazily parses profiles; each item is one time step.
pub struct ProfileReader {
    name: String,
    rows: Rows,
    expected_n: Option<usize>,
}

impl ProfileReader {
    /// CSV rows without a `t` column are numbered from `first_t`.
    pub fn new(src: &str, format: InputFormat, first_t: i64, expected_n: Option<usize>) -> CliResult<Self> {
        let mut reader = open_source(src)?;
        let ndjson = match format {
            InputFormat::Auto => sniff_ndjson(reader.as_mut(), src)?,
            InputFormat::Csv => false,
            InputFormat::Ndjson => true,
        };
        let rows = if ndjson {
            Rows::Ndjson { lines: reader.lines(), line: 0 }
        } else {
            let records = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(reader)
                .into_records();
            Rows::Csv { records, first: true, next_t: first_t }
        };
        Ok(ProfileReader { name: src.to_string(), rows, expected_n })
    }

    fn check(&mut self, row: usize, y: &[f64]) -> CliResult<()> {
        if y.is_empty() {
            return Err(CliError::Row { row, message: "no values".into() });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(CliError::Row { row, message: format!("value {} is not finite", i + 1) });
        }
        match self.expected_n {
            Some(n) if n != y.len() => Err(CliError::Row {
                row,
                message: format!("expected {n} values, got {}", y.len()),
            }),
            Some(_) => Ok(()),
            None => {
                self.expected_n = Some(y.len());
                Ok(())
            }
        }
    }

    fn next_row(&mut self) -> Option<CliResult<ResponseVector>> {
        match &mut self.rows {
            Rows::Csv { records, first, next_t } => loop {
                let rec = match records.next()? {
                    Ok(r) => r,
                    Err(e) => {
                        let row = e.position().map_or(0, |p| p.line() as usize);
                        return Some(Err(CliError::Row { row, message: e.to_string() }));
                    }
                };
                let row = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(str::is_empty) {
                    continue;
                }
                let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
                let was_first = std::mem::replace(first, false);
                match parsed {
                    Ok(y) => {
                        let t = *next_t;
                        *next_t += 1;
                        return Some(Ok(ResponseVector::new(t, y)).and_then(|r| self.finish(row, r)));
                    }
                    // A non-numeric first row is a header.
                    Err(_) if was_first => continue,
                    Err(e) => return Some(Err(CliError::Row { row, message: format!("non-numeric value: {e}") })),
                }
            },
            Rows::Ndjson { lines, line } => loop {
                *line += 1;
                let row = *line;
                let text = match lines.next()? {
                    Ok(s) => s,
                    Err(e) => return Some(Err(CliError::io(&self.name, e))),
                };
                if text.trim().is_empty() {
                    continue;
                }
                return Some(match serde_json::from_str::<NdjsonRow>(&text) {
                    Ok(r) => self.finish(row, ResponseVector::new(r.t, r.y)),
                    Err(e) => Err(CliError::Row { row, message: e.to_string() }),
                });
            },
        }
    }

    fn finish(&mut self, row: usize, r: ResponseVector) -> CliResult<ResponseVector> {
        self.check(row, &r.y)?;
        Ok(r)
    }
}

impl Iterator for ProfileReader {
    type Item = CliResult<ResponseVector>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_row()
    }
}

/// Reads historical profiles. CSV rows are numbered `1 − m, …, 0`.
pub fn read_historical(src: &str, format: InputFormat) -> CliResult<Vec<ResponseVector>> {
    let mut rows: Vec<ResponseVector> = ProfileReader::new(src, format, 0, None)?.collect::<CliResult<_>>()?;
    let csv_numbered = rows.iter().enumerate().all(|(i, r)| r.t == i as i64);
    if csv_numbered {
        let m = rows.len() as i64;
        for (i, r) in rows.iter_mut().enumerate() {
            r.t = i as i64 + 1 - m;
        }
    }
    Ok(rows)
}

/// SHA-256 over the bit patterns of every `t` and `y`.
pub fn profiles_digest(rows: &[ResponseVector]) -> String {
    let mut h = Sha256::new();
    for r in rows {
        h.update(r.t.to_le_bytes());
        h.update((r.y.len() as u64).to_le_bytes());
        for v in &r.y {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn read_to_string(path: &str) -> CliResult<String> {
    let mut s = String::new();
    if path == "-" {
        io::stdin().read_to_string(&mut s).map_err(|e| CliError::io(path, e))?;
    } else {
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut s))
            .map_err(|e| CliError::io(path, e))?;
    }
    Ok(s)
}

pub fn parse_json<T: serde::de::DeserializeOwned>(path: &str) -> CliResult<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| CliError::schema(path, e))
}

/// Path of the manifest echo written next to an output file.
pub fn echo_path(output: &str) -> String {
    format!("{output}.manifest.json")
}

#[derive(Clone, Default)]
struct Captured(Rc<RefCell<Vec<u8>>>);

impl Write for Captured {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.borrow_mut().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Opens outputs either on disk or, for replay checks, in memory.
#[derive(Default)]
pub struct Sinks {
    capture: bool,
    captured: Vec<(String, Captured)>,
}

impl Sinks {
    pub fn capturing() -> Self {
        Sinks { capture: true, captured: Vec::new() }
    }

    /// `-` is standard output.
    pub fn open(&mut self, path: &str) -> CliResult<Box<dyn Write>> {
        if self.capture {
            let c = Captured::default();
            self.captured.push((path.to_string(), c.clone()));
            return Ok(Box::new(c));
        }
        if path == "-" {
            return Ok(Box::new(io::stdout()));
        }
        if let Some(dir) = std::path::Path::new(path).parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
        }
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Box::new(io::BufWriter::new(f)))
    }

    pub fn write_all(&mut self, path: &str, bytes: &[u8]) -> CliResult<()> {
        let mut w = self.open(path)?;
        w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
    }

    /// Compares captured outputs against the files on disk. Standard output
    /// cannot be compared and is skipped.
    pub fn verify(&self) -> CliResult<Vec<String>> {
        let mut checked = Vec::new();
        for (path, c) in &self.captured {
            if path == "-" {
                log::warn!("replay check skips output written to stdout");
                continue;
            }
            let on_disk = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            if on_disk != *c.0.borrow() {
                return Err(CliError::Mismatch(format!("{path} differs from the replayed output")));
            }
            checked.push(path.clone());
        }
        Ok(checked)
    }
}

pub fn io_err(path: &str) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}
