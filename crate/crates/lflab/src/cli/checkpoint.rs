//! Binary state checkpoints.
//!
//! Wire format: one ASCII header line
//!
//! ```text
//! LFLAB1 dim s0 s1 [s2] L0 L1 [L2] t
//! ```
//!
//! followed by raw little-endian 64-bit floats in row-major node order,
//! components fastest-varying: all metric components, then u. Everything
//! round-trips bit-exactly.

use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::grid::{PeriodicGrid, ScalarField, SymTensorField};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &str = "LFLAB1";

pub fn write_checkpoint(state: &FlowState, path: &Path) -> Result<()> {
    let grid = state.h.grid();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = format!("{MAGIC} {}", grid.dim());
    for s in grid.sizes() {
        header.push_str(&format!(" {s}"));
    }
    for p in grid.periods() {
        header.push_str(&format!(" {p}"));
    }
    header.push_str(&format!(" {}", state.t));
    writeln!(f, "{header}")?;
    for v in state.h.values() {
        f.write_all(&v.to_le_bytes())?;
    }
    for v in state.u.values() {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::CheckpointFormat(msg.into())
}

pub fn read_checkpoint(path: &Path) -> Result<FlowState> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = f.read(&mut byte)?;
        if n == 0 {
            return Err(fmt_err("unterminated header"));
        }
        if byte[0] == b'\n' {
            break;
        }
        if header.len() > 4096 {
            return Err(fmt_err("header too long"));
        }
        header.push(byte[0]);
    }
    let header = String::from_utf8(header).map_err(|_| fmt_err("header is not UTF-8"))?;
    let tokens: Vec<&str> = header.split_ascii_whitespace().collect();
    if tokens.first().copied() != Some(MAGIC) {
        return Err(fmt_err(format!(
            "bad magic: expected `{MAGIC}`, got `{}`",
            tokens.first().copied().unwrap_or("")
        )));
    }
    let dim: usize = tokens
        .get(1)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| fmt_err("missing dimension"))?;
    if !(2..=3).contains(&dim) {
        return Err(fmt_err(format!("dimension {dim} out of range")));
    }
    let want_tokens = 2 + 2 * dim + 1;
    if tokens.len() != want_tokens {
        return Err(fmt_err(format!(
            "expected {want_tokens} header fields for dimension {dim}, got {}",
            tokens.len()
        )));
    }
    let mut sizes = Vec::with_capacity(dim);
    for k in 0..dim {
        sizes.push(
            tokens[2 + k]
                .parse::<usize>()
                .map_err(|_| fmt_err(format!("bad size `{}`", tokens[2 + k])))?,
        );
    }
    let mut periods = Vec::with_capacity(dim);
    for k in 0..dim {
        periods.push(
            tokens[2 + dim + k]
                .parse::<f64>()
                .map_err(|_| fmt_err(format!("bad period `{}`", tokens[2 + dim + k])))?,
        );
    }
    let t = tokens[want_tokens - 1]
        .parse::<f64>()
        .map_err(|_| fmt_err(format!("bad time `{}`", tokens[want_tokens - 1])))?;

    let grid = PeriodicGrid::new(&sizes, &periods)?;
    let nsym = dim * (dim + 1) / 2;
    let h_len = grid.node_count() * nsym;
    let u_len = grid.node_count();
    let mut payload = vec![0u8; (h_len + u_len) * 8];
    f.read_exact(&mut payload)
        .map_err(|_| fmt_err("truncated payload"))?;
    if f.read(&mut byte)? != 0 {
        return Err(fmt_err("trailing data after payload"));
    }
    let mut floats = Vec::with_capacity(h_len + u_len);
    for chunk in payload.chunks_exact(8) {
        floats.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let h = SymTensorField::from_values(&grid, floats[..h_len].to_vec())?;
    let u = ScalarField::from_values(&grid, floats[h_len..].to_vec())?;
    FlowState::new(t, h, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{instantiate, Scenario};

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("lflab-ckpt-{}-{}", std::process::id(), name));
        p
    }

    #[test]
    fn round_trip_bit_exact() {
        let g = PeriodicGrid::new(&[16, 8], &[1.0, 2.5]).unwrap();
        let s = instantiate(Scenario::Coupled, &g, 0.30000000000000004).unwrap();
        let path = tmp("rt");
        write_checkpoint(&s, &path).unwrap();
        let r = read_checkpoint(&path).unwrap();
        assert_eq!(r.t.to_bits(), s.t.to_bits());
        assert_eq!(r.h.values(), s.h.values());
        assert_eq!(r.u.values(), s.u.values());
        assert_eq!(r.h.grid(), s.h.grid());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn three_dimensional_round_trip() {
        let g = PeriodicGrid::new(&[8, 8, 8], &[1.0, 1.0, 3.0]).unwrap();
        let s = instantiate(Scenario::Product3d, &g, 0.125).unwrap();
        let path = tmp("rt3");
        write_checkpoint(&s, &path).unwrap();
        let r = read_checkpoint(&path).unwrap();
        assert_eq!(r.h.values(), s.h.values());
        assert_eq!(r.u.values(), s.u.values());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupt_magic_is_reported() {
        let g = PeriodicGrid::new(&[8, 8], &[1.0, 1.0]).unwrap();
        let s = instantiate(Scenario::FixedPoint, &g, 0.0).unwrap();
        let path = tmp("magic");
        write_checkpoint(&s, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match read_checkpoint(&path) {
            Err(Error::CheckpointFormat(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected format error, got {:?}", other.err()),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncated_payload_is_reported() {
        let g = PeriodicGrid::new(&[8, 8], &[1.0, 1.0]).unwrap();
        let s = instantiate(Scenario::FixedPoint, &g, 0.0).unwrap();
        let path = tmp("trunc");
        write_checkpoint(&s, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        match read_checkpoint(&path) {
            Err(Error::CheckpointFormat(msg)) => assert!(msg.contains("truncated"), "{msg}"),
            other => panic!("expected format error, got {:?}", other.err()),
        }
        // trailing garbage is also rejected
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 17]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_checkpoint(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
