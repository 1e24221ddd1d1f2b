//! JSONL access traces: one `{sm, cta, warp, addr, cycle}` object per line,
//! with the address as a `0x`-prefixed hex string.

use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::engine::workload::CtaStreams;
use crate::grid::CtaGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub sm: u32,
    pub cta: u64,
    pub warp: u32,
    #[serde(serialize_with = "ser_hex", deserialize_with = "de_hex")]
    pub addr: u64,
    pub cycle: u64,
}

fn ser_hex<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("0x{v:x}"))
}

fn de_hex<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    let s = String::deserialize(d)?;
    parse_hex(&s).map_err(serde::de::Error::custom)
}

/// Parses `0x`-prefixed hex or plain decimal.
pub fn parse_hex(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let r = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16),
        None => t.parse(),
    };
    r.map_err(|e| format!("bad address {s:?}: {e}"))
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub fn write_jsonl<W: Write>(events: &[AccessEvent], mut w: W) -> Result<(), TraceError> {
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<AccessEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// Rebuilds per-warp streams from a trace; order within a warp follows the
/// issue cycle, then file order.
pub fn streams_from_trace(events: &[AccessEvent], grid: &CtaGrid) -> Result<CtaStreams, TraceError> {
    let mut sorted: Vec<(usize, &AccessEvent)> = events.iter().enumerate().collect();
    sorted.sort_by_key(|(i, e)| (e.cycle, *i));
    let warps = grid.warps_per_cta as usize;
    let mut streams = vec![vec![Vec::new(); warps]; grid.cta_count() as usize];
    for (i, e) in sorted {
        if e.cta >= grid.cta_count() || e.warp as usize >= warps {
            return Err(TraceError::Parse {
                line: i + 1,
                msg: format!("CTA {} warp {} outside the grid", e.cta, e.warp),
            });
        }
        streams[e.cta as usize][e.warp as usize].push(e.addr);
    }
    Ok(CtaStreams { streams })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dim3;

    #[test]
    fn jsonl_format() {
        let e = AccessEvent {
            sm: 1,
            cta: 2,
            warp: 3,
            addr: 0x1f80,
            cycle: 7,
        };
        let mut buf = Vec::new();
        write_jsonl(&[e], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"sm\":1,\"cta\":2,\"warp\":3,\"addr\":\"0x1f80\",\"cycle\":7}\n"
        );
        assert_eq!(read_jsonl(&buf[..]).unwrap(), vec![e]);
    }

    #[test]
    fn bad_line_reported() {
        let err = read_jsonl(&b"{\"sm\":0}\n"[..]).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
    }

    #[test]
    fn hex_parsing() {
        assert_eq!(parse_hex("0x10000"), Ok(65536));
        assert_eq!(parse_hex("42"), Ok(42));
        assert!(parse_hex("0xzz").is_err());
    }

    #[test]
    fn rebuilds_streams() {
        let g = CtaGrid::new(Dim3::new(2, 1, 1), 2);
        let ev = |cta, warp, addr, cycle| AccessEvent {
            sm: 0,
            cta,
            warp,
            addr,
            cycle,
        };
        let s = streams_from_trace(&[ev(1, 1, 256, 5), ev(1, 1, 128, 2), ev(0, 0, 0, 3)], &g).unwrap();
        assert_eq!(s.streams[1][1], vec![128, 256]);
        assert_eq!(s.streams[0][0], vec![0]);
        assert!(s.streams[0][1].is_empty());
        assert!(streams_from_trace(&[ev(2, 0, 0, 0)], &g).is_err());
    }
}
