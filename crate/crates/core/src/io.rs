//! Bank files and run records.
//!
//! Two bank formats are supported. CSV holds one vector per line, with an
//! optional leading id column that is recognized when the first field of the
//! first record is not a number. `kitebin` is the binary layout
//!
//! ```text
//! "KITE" | rows: u32 LE | cols: u32 LE | rows·cols f64 LE, row-major
//! ```
//!
//! Run records are JSON objects, written one per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::GammaReport;
use crate::bank::EmbeddingBank;
use crate::error::{Error, Result};
use crate::selector::SelectionResult;
use crate::synth::SynthReport;

pub const KITEBIN_MAGIC: [u8; 4] = *b"KITE";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankFormat {
    Csv,
    Kitebin,
}

impl BankFormat {
    /// Guesses the format from a file extension; anything but `.kitebin`
    /// or `.kb` is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("kitebin" | "kb") => BankFormat::Kitebin,
            _ => BankFormat::Csv,
        }
    }
}

impl FromStr for BankFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(BankFormat::Csv),
            "kitebin" => Ok(BankFormat::Kitebin),
            o => Err(Error::invalid(format!("unknown bank format `{o}`"))),
        }
    }
}

pub fn load_bank(path: &Path, format: BankFormat) -> Result<EmbeddingBank> {
    let file = File::open(path)?;
    let bank = match format {
        BankFormat::Csv => read_csv(BufReader::new(file))?,
        BankFormat::Kitebin => read_kitebin(BufReader::new(file))?,
    };
    Ok(bank.with_source_path(path))
}

pub fn read_csv<R: Read>(reader: R) -> Result<EmbeddingBank> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut ids = Vec::new();
    let mut with_ids: Option<bool> = None;
    let mut cols = 0;
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse_line(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let has_id = *with_ids.get_or_insert_with(|| record[0].parse::<f64>().is_err());
        let fields = if has_id { record.iter().skip(1) } else { record.iter().skip(0) };
        let width = record.len() - usize::from(has_id);
        if ids.is_empty() && data.is_empty() {
            if width == 0 {
                return Err(Error::parse_line(line, "record has no values"));
            }
            cols = width;
        } else if width != cols {
            return Err(Error::parse_line(
                line,
                format!("ragged row: {width} values, expected {cols}"),
            ));
        }
        for (j, field) in fields.enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::parse_line(line, format!("column {}: `{field}` is not a number", j + 1 + usize::from(has_id)))
            })?;
            if !v.is_finite() {
                return Err(Error::parse_line(line, format!("non-finite value `{field}`")));
            }
            data.push(v);
        }
        if has_id {
            ids.push(record[0].to_string());
        } else {
            ids.push(String::new());
        }
    }
    if data.is_empty() {
        return Err(Error::parse_line(1, "no vectors found"));
    }
    let rows = ids.len();
    let bank = EmbeddingBank::from_flat(rows, cols, data)?;
    if with_ids == Some(true) {
        bank.with_ids(ids)
    } else {
        Ok(bank)
    }
}

/// Writes one vector per line. Values use the shortest representation that
/// reads back bit-identically. Ids are written when `include_ids` is set; they
/// must not parse as numbers, or the file would read back without them.
pub fn write_csv<W: Write>(bank: &EmbeddingBank, include_ids: bool, writer: W) -> Result<()> {
    if include_ids {
        if let Some(id) = bank.ids().iter().find(|id| id.trim().parse::<f64>().is_ok() || id.trim().is_empty()) {
            return Err(Error::invalid(format!("id `{id}` would be read back as a value")));
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for (row, id) in bank.rows().zip(bank.ids()) {
        let mut fields: Vec<String> = Vec::with_capacity(row.len() + 1);
        if include_ids {
            fields.push(id.clone());
        }
        fields.extend(row.iter().map(f64::to_string));
        w.write_record(&fields).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kitebin<R: Read>(mut reader: R) -> Result<EmbeddingBank> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(&mut reader, &mut header)?;
    if got < 4 || header[..4] != KITEBIN_MAGIC {
        return Err(Error::parse_offset(0, "bad magic, expected \"KITE\""));
    }
    if got < HEADER_LEN {
        return Err(Error::parse_offset(got, "truncated header"));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    if rows == 0 {
        return Err(Error::parse_offset(4, "row count is zero"));
    }
    if cols == 0 {
        return Err(Error::parse_offset(8, "column count is zero"));
    }
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::parse_offset(4, "rows·cols overflows"))?;
    let mut data = Vec::with_capacity(count.min(1 << 24));
    let mut buf = [0u8; 8];
    for i in 0..count {
        let offset = HEADER_LEN + 8 * i;
        let n = read_up_to(&mut reader, &mut buf)?;
        if n < 8 {
            return Err(Error::parse_offset(
                offset + n,
                format!("truncated payload: expected {count} values, found {i}"),
            ));
        }
        let v = f64::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(Error::parse_offset(offset, format!("non-finite value at row {}, column {}", i / cols, i % cols)));
        }
        data.push(v);
    }
    let end = HEADER_LEN + 8 * count;
    if read_up_to(&mut reader, &mut [0u8; 1])? != 0 {
        return Err(Error::parse_offset(end, "trailing bytes after payload"));
    }
    EmbeddingBank::from_flat(rows, cols, data)
}

pub fn write_kitebin<W: Write>(bank: &EmbeddingBank, writer: W) -> Result<()> {
    let rows = u32::try_from(bank.len()).map_err(|_| Error::invalid("too many rows for kitebin"))?;
    let cols = u32::try_from(bank.dim()).map_err(|_| Error::invalid("too many columns for kitebin"))?;
    let mut w = BufWriter::new(writer);
    w.write_all(&KITEBIN_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in bank.as_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_bank(bank: &EmbeddingBank, path: &Path, format: BankFormat) -> Result<()> {
    let file = File::create(path)?;
    match format {
        BankFormat::Csv => {
            let has_ids = bank.ids().iter().any(|id| id.parse::<f64>().is_err());
            write_csv(bank, has_ids, file)
        }
        BankFormat::Kitebin => write_kitebin(bank, file),
    }
}

// like read_exact, but reports how many bytes arrived before EOF
fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "result", rename_all = "snake_case")]
pub enum Payload {
    Selection(SelectionResult),
    Gamma(GammaReport),
    Synth(SynthReport),
}

/// One line of CLI output: what ran, with which settings, and what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    /// Full effective configuration, defaults included.
    pub config: serde_json::Value,
    pub payload: Payload,
    pub versions: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn new(command: &str, config: serde_json::Value, payload: Payload, seed: Option<u64>, wall_time_secs: f64) -> Self {
        Self {
            command: command.to_string(),
            config,
            payload,
            versions: versions(),
            seed,
            wall_time_secs,
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize record: {e}")))
    }
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("kite".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("record_schema".to_string(), "1".to_string()),
    ])
}

pub fn write_records<W: Write>(records: &[RunRecord], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        writeln!(w, "{}", r.to_json_line()?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse_line(i + 1, e.to_string()))?);
    }
    Ok(out)
}
