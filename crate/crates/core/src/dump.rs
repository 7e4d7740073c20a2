//! Descriptor dump files.
//!
//! Text: one record per line, `u v a b c kind dim v1 .. vdim`, with the kind
//! suffixed `:degenerate` for flagged descriptors.
//!
//! Binary (little-endian): magic `DSPD`, `u32` record count, then per record
//! `u32` kind code, `u32` flags (bit 0 = degenerate), `u32` dim, five `f64`
//! region fields and `dim` `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::descriptor::{Descriptor, DescriptorKind};
use crate::detector::EllipseRegion;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"DSPD";
const DEGENERATE_FLAG: u32 = 1;
const DEGENERATE_SUFFIX: &str = ":degenerate";

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub region: EllipseRegion,
    pub descriptor: Descriptor,
}

pub fn format_text(records: &[DescriptorRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let g = &r.region;
        let d = &r.descriptor;
        let kind = if d.degenerate {
            format!("{}{DEGENERATE_SUFFIX}", d.kind)
        } else {
            d.kind.to_string()
        };
        s.push_str(&format!("{} {} {} {} {} {} {}", g.cx, g.cy, g.a, g.b, g.c, kind, d.dim()));
        for v in &d.values {
            s.push(' ');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn parse_text(text: &str, path: &Path) -> Result<Vec<DescriptorRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let at = n + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(path, at, msg);
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 7 {
            return Err(bad(format!("expected at least 7 fields, found {}", tok.len())));
        }
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad(format!("invalid number '{t}'")));
        let (kind_str, degenerate) = match tok[5].strip_suffix(DEGENERATE_SUFFIX) {
            Some(k) => (k, true),
            None => (tok[5], false),
        };
        let kind: DescriptorKind = kind_str.parse().map_err(|_| bad(format!("unknown kind '{}'", tok[5])))?;
        let dim: usize = tok[6].parse().map_err(|_| bad(format!("invalid dimension '{}'", tok[6])))?;
        if tok.len() != 7 + dim {
            return Err(bad(format!("dimension {dim} but {} values", tok.len() - 7)));
        }
        let region = EllipseRegion::new(num(tok[0])?, num(tok[1])?, num(tok[2])?, num(tok[3])?, num(tok[4])?)
            .map_err(|e| bad(e.to_string()))?;
        let values = tok[7..].iter().map(|t| num(t)).collect::<Result<Vec<_>>>()?;
        out.push(DescriptorRecord { region, descriptor: Descriptor { kind, values, degenerate } });
    }
    Ok(out)
}

pub fn write_text(path: impl AsRef<Path>, records: &[DescriptorRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_text(records)).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<Vec<DescriptorRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text(&text, path)
}

/// Binary encoding; descriptor values are narrowed to `f32`.
pub fn encode_binary(records: &[DescriptorRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let d = &r.descriptor;
        let flags = if d.degenerate { DEGENERATE_FLAG } else { 0 };
        for v in [d.kind.code(), flags, d.dim() as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let g = &r.region;
        for v in [g.cx, g.cy, g.a, g.b, g.c] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &d.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, self.pos, "truncated descriptor dump"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_binary(buf: &[u8], path: &Path) -> Result<Vec<DescriptorRecord>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4).ok() != Some(BINARY_MAGIC.as_slice()) {
        return Err(Error::format(path, 0, "missing DSPD magic"));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let at = r.pos;
        let code = r.u32()?;
        let kind = DescriptorKind::from_code(code)
            .ok_or_else(|| Error::format(path, at, format!("unknown kind code {code}")))?;
        let flags = r.u32()?;
        let dim = r.u32()? as usize;
        let (cx, cy, a, b, c) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let region = EllipseRegion::new(cx, cy, a, b, c).map_err(|e| Error::format(path, at, e.to_string()))?;
        let values = (0..dim).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        out.push(DescriptorRecord {
            region,
            descriptor: Descriptor { kind, values, degenerate: flags & DEGENERATE_FLAG != 0 },
        });
    }
    if r.pos != buf.len() {
        return Err(Error::format(path, r.pos, "trailing bytes after last record"));
    }
    Ok(out)
}

pub fn write_binary(path: impl AsRef<Path>, records: &[DescriptorRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_binary(records)).map_err(|e| Error::io(path, e))
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<Vec<DescriptorRecord>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_binary(&buf, path)
}
