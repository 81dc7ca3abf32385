//! Files: CSV tables, binary payloads behind a TOML text header, SHA-256
//! checksums and resumable chain checkpoints.
//!
//! Binary layout: UTF-8 TOML header, a line containing exactly `---`, then
//! little-endian `f64` values. The header records `kind`, `count` and any
//! shape information needed to interpret the payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use qtps::dynamics::ClassicalState;
use qtps::fock::QuantumState;
use qtps::rng::StreamRng;
use qtps::C64;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

const SEPARATOR: &str = "---";

pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<P: AsRef<Path>>(path: P) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

/// Formats a float so that it parses back to the same value.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_binary<P: AsRef<Path>>(path: P, header: &toml::Table, payload: &[f64]) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let text = toml::to_string(header).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        w.write_all(b"\n")?;
    }
    w.write_all(SEPARATOR.as_bytes())?;
    w.write_all(b"\n")?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<P: AsRef<Path>>(path: P) -> CliResult<(toml::Table, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(CliError::Io("binary file has no header separator".into()));
        }
        if line.trim_end_matches(['\n', '\r']) == SEPARATOR {
            break;
        }
        header.push_str(&line);
    }
    let table: toml::Table = header.parse().map_err(|e: toml::de::Error| CliError::Io(e.to_string()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::Io("binary payload is not a whole number of f64 values".into()));
    }
    let payload = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((table, payload))
}

pub fn sha256_file<P: AsRef<Path>>(path: P) -> CliResult<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_str(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Flattens quantum slices to `[re, im, re, im, ...]` per slice.
pub fn flatten_states(states: &[QuantumState]) -> Vec<f64> {
    states.iter().flat_map(|s| s.amplitudes().iter().flat_map(|c| [c.re, c.im]).collect::<Vec<_>>()).collect()
}

pub fn unflatten_states(payload: &[f64], dim: usize) -> CliResult<Vec<QuantumState>> {
    if dim == 0 || payload.len() % (2 * dim) != 0 {
        return Err(CliError::Io("payload does not hold whole states".into()));
    }
    Ok(payload
        .chunks_exact(2 * dim)
        .map(|c| QuantumState::from_vector(nalgebra::DVector::from_iterator(dim, c.chunks_exact(2).map(|p| C64::new(p[0], p[1])))))
        .collect())
}

pub fn flatten_classical(states: &[ClassicalState]) -> Vec<f64> {
    states.iter().flat_map(|s| [s.x, s.p]).collect()
}

pub fn unflatten_classical(payload: &[f64]) -> CliResult<Vec<ClassicalState>> {
    if payload.len() % 2 != 0 {
        return Err(CliError::Io("payload does not hold whole classical states".into()));
    }
    Ok(payload.chunks_exact(2).map(|c| ClassicalState::new(c[0], c[1])).collect())
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (it exceeds 64 bits).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &StreamRng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> CliResult<StreamRng> {
        let bytes = hex::decode(&self.seed).map_err(|e| CliError::Io(e.to_string()))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| CliError::Io("RNG seed must be 32 bytes".into()))?;
        let mut rng = StreamRng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| CliError::Io("bad RNG word position".into()))?);
        Ok(rng)
    }
}

/// Header of a chain checkpoint; the payload is the current path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config_hash: String,
    pub moves_done: u64,
    pub accepted: u64,
    pub slices: u64,
    pub dim: u64,
    pub rng: RngState,
}

pub fn write_checkpoint<P: AsRef<Path>>(path: P, header: &CheckpointHeader, payload: &[f64]) -> CliResult<()> {
    let table = toml::Table::try_from(header).map_err(|e| CliError::Io(e.to_string()))?;
    let tmp = path.as_ref().with_extension("tmp");
    write_binary(&tmp, &table, payload)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_checkpoint<P: AsRef<Path>>(path: P) -> CliResult<(CheckpointHeader, Vec<f64>)> {
    let (table, payload) = read_binary(path)?;
    let header: CheckpointHeader = table.try_into().map_err(|e: toml::de::Error| CliError::Io(e.to_string()))?;
    Ok((header, payload))
}
