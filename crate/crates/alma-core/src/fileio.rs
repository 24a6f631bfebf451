//! Shared plumbing for the binary file formats.
//!
//! Model and dataset files use the same layout: a newline-terminated text
//! header ending in an `end` line, followed by length-prefixed binary
//! blocks (little-endian `u64` byte count, then raw little-endian values).
//! The readers here track line numbers and byte offsets so format errors
//! can point at the failure.

use std::io::{Read, Write};

use crate::{Error, Result};

/// Splits `key=value`, returning the value when the key matches.
pub(crate) fn parse_kv<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key)?.strip_prefix('=')
}

/// Renders dimensions as `a,b,c`.
pub(crate) fn join_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses `a,b,c` into dimensions.
pub(crate) fn parse_dims(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad dimension {d:?}"))
        })
        .collect()
}

/// Writes one length-prefixed block of `f64` values.
pub(crate) fn write_f64_block(out: &mut impl Write, data: &[f64]) -> Result<()> {
    let bytes = (data.len() * 8) as u64;
    out.write_all(&bytes.to_le_bytes())?;
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads newline-terminated header lines one byte at a time so the binary
/// body stays untouched in the underlying reader.
pub(crate) struct HeaderReader<'r, R: Read> {
    inner: &'r mut R,
    line_no: usize,
    pub(crate) consumed: u64,
}

impl<'r, R: Read> HeaderReader<'r, R> {
    pub(crate) fn new(inner: &'r mut R) -> Self {
        HeaderReader {
            inner,
            line_no: 0,
            consumed: 0,
        }
    }

    pub(crate) fn line(&mut self) -> Result<String> {
        self.line_no += 1;
        let mut buf = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            if self.inner.read(&mut byte)? == 0 {
                return Err(self.error("unexpected end of file in header".into()));
            }
            self.consumed += 1;
            if byte[0] == b'\n' {
                break;
            }
            buf.push(byte[0]);
            if buf.len() > 4096 {
                return Err(self.error("header line too long".into()));
            }
        }
        String::from_utf8(buf).map_err(|_| self.error("header line is not UTF-8".into()))
    }

    /// Reads a line and parses it as `key=value`.
    pub(crate) fn kv(&mut self, key: &str) -> Result<String> {
        let line = self.line()?;
        parse_kv(&line, key)
            .map(str::to_owned)
            .ok_or_else(|| self.error(format!("expected {key}=..., got {line:?}")))
    }

    /// Reads a line and requires the literal `end` marker.
    pub(crate) fn expect_end(&mut self) -> Result<()> {
        let line = self.line()?;
        if line == "end" {
            Ok(())
        } else {
            Err(self.error(format!("expected end marker, got {line:?}")))
        }
    }

    pub(crate) fn error(&self, msg: String) -> Error {
        Error::FileFormat {
            path: String::new(),
            location: format!("line {}", self.line_no),
            msg,
        }
    }
}

/// Reads length-prefixed binary blocks, tracking the byte offset for error
/// messages.
pub(crate) struct BodyReader<'r, R: Read> {
    pub(crate) inner: &'r mut R,
    pub(crate) offset: u64,
}

impl<'r, R: Read> BodyReader<'r, R> {
    pub(crate) fn new(inner: &'r mut R, offset: u64) -> Self {
        BodyReader { inner, offset }
    }

    fn fail(&self, at: u64, context: &str, msg: String) -> Error {
        Error::FileFormat {
            path: String::new(),
            location: format!("byte {at}"),
            msg: format!("{context}: {msg}"),
        }
    }

    /// Reads one block expected to hold exactly `expected` f64 values.
    pub(crate) fn f64_block(&mut self, expected: usize, context: &str) -> Result<Vec<f64>> {
        let start = self.offset;
        let mut len_bytes = [0u8; 8];
        self.read_exact(&mut len_bytes)
            .map_err(|_| self.fail(start, context, "truncated block length".into()))?;
        let byte_len = u64::from_le_bytes(len_bytes);
        if byte_len != (expected * 8) as u64 {
            return Err(self.fail(
                start,
                context,
                format!("block holds {byte_len} bytes, expected {}", expected * 8),
            ));
        }
        let mut raw = vec![0u8; byte_len as usize];
        self.read_exact(&mut raw).map_err(|_| {
            self.fail(
                start,
                context,
                format!("truncated block body ({byte_len} bytes declared)"),
            )
        })?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    /// Reads `count` little-endian u32 values.
    pub(crate) fn u32s(&mut self, count: usize, context: &str) -> Result<Vec<u32>> {
        let start = self.offset;
        let mut raw = vec![0u8; count * 4];
        self.read_exact(&mut raw)
            .map_err(|_| self.fail(start, context, format!("truncated ({count} u32s declared)")))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect())
    }

    /// Errors if any bytes remain.
    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut trailing = [0u8; 1];
        if self.inner.read(&mut trailing)? != 0 {
            return Err(Error::FileFormat {
                path: String::new(),
                location: format!("byte {}", self.offset),
                msg: "trailing bytes after the final block".into(),
            });
        }
        Ok(())
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> std::io::Result<()> {
        self.inner.read_exact(buf)?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

/// Rewrites a format error to carry the file path (errors are produced
/// path-less by the readers).
pub(crate) fn attach_path(err: Error, path: &std::path::Path) -> Error {
    match err {
        Error::FileFormat { location, msg, .. } => Error::FileFormat {
            path: path.display().to_string(),
            location,
            msg,
        },
        other => other,
    }
}
