//! File writers. Numbers are written as `{:.9e}`; missing values as empty
//! cells.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use llc_inverter::sim::{Channels, Leg, SwitchEvent, CHANNEL_NAMES};
use serde::Serialize;

use crate::CliError;

/// First bytes of a binary waveform file.
pub const BINARY_MAGIC: &[u8; 8] = b"LLCWAVE1";

pub fn num(x: f64) -> String {
    format!("{x:.9e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), source: e.into() }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io(dir))
}

/// Writes a header row then `rows`.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<PathBuf, CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Io { path: path.into(), source: e.into() })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))?;
    Ok(path.to_path_buf())
}

/// Every channel, `t` first.
pub fn write_waveforms_csv(path: &Path, ch: &Channels) -> Result<PathBuf, CliError> {
    let cols = ch.columns();
    write_csv(path, &CHANNEL_NAMES, (0..ch.len()).map(|i| cols.iter().map(move |c| num(c[i]))))
}

/// Binary columnar layout: magic, `u32` column count, `u64` row count,
/// then per column a `u32` name length, the UTF-8 name and the values as
/// little-endian `f64`.
pub fn write_waveforms_binary(path: &Path, ch: &Channels) -> Result<PathBuf, CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io(path))?);
    let cols = ch.columns();
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io(path));
    write(BINARY_MAGIC)?;
    write(&(cols.len() as u32).to_le_bytes())?;
    write(&(ch.len() as u64).to_le_bytes())?;
    for (name, col) in CHANNEL_NAMES.iter().zip(cols) {
        write(&(name.len() as u32).to_le_bytes())?;
        write(name.as_bytes())?;
        for v in col {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(io(path))?;
    Ok(path.to_path_buf())
}

/// Reads a file written by [`write_waveforms_binary`] into named columns.
pub fn read_waveforms_binary(bytes: &[u8]) -> Option<Vec<(String, Vec<f64>)>> {
    let mut rest = bytes.strip_prefix(BINARY_MAGIC.as_slice())?;
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at_checked(n)?;
        rest = tail;
        Some(head)
    };
    let ncols = u32::from_le_bytes(take(4)?.try_into().ok()?) as usize;
    let nrows = u64::from_le_bytes(take(8)?.try_into().ok()?) as usize;
    let mut out = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        let len = u32::from_le_bytes(take(4)?.try_into().ok()?) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).ok()?;
        let values =
            take(nrows.checked_mul(8)?)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, values));
    }
    Some(out)
}

pub const EVENT_COLUMNS: [&str; 8] = ["t", "i_lr", "leg", "rising", "required_sign", "fs", "phi", "zvs"];

pub fn write_events_csv(path: &Path, events: &[SwitchEvent]) -> Result<PathBuf, CliError> {
    let rows = events.iter().map(|e| {
        [
            num(e.t),
            num(e.i_lr),
            match e.leg {
                Leg::A => "A".into(),
                Leg::B => "B".into(),
            },
            u8::from(e.rising).to_string(),
            e.required_sign.to_string(),
            num(e.fs),
            num(e.phi),
            u8::from(e.zvs).to_string(),
        ]
    });
    write_csv(path, &EVENT_COLUMNS, rows)
}
