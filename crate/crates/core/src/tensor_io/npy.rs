//! Minimal NPY v1.0 codec for 2-D, C-order, little-endian float32/float64.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_io::FeatureMatrix;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Header {
    dtype: Dtype,
    rows: usize,
    cols: usize,
}

/// Decodes an NPY byte buffer, widening float32 payloads to `f64`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<FeatureMatrix<f64>> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < PREAMBLE || &bytes[..6] != MAGIC {
        return Err(bad("missing NPY magic".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(bad(format!(
            "unsupported NPY version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = PREAMBLE + header_len;
    if bytes.len() < payload_start {
        return Err(bad("truncated NPY header".into()));
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE..payload_start])
        .map_err(|_| bad("NPY header is not ASCII".into()))?;
    let header = parse_header(text).map_err(bad)?;

    let payload = &bytes[payload_start..];
    let count = header
        .rows
        .checked_mul(header.cols)
        .ok_or_else(|| bad("shape overflows".into()))?;
    let expected = count * header.dtype.size();
    if payload.len() != expected {
        return Err(bad(format!(
            "shape ({}, {}) needs {} payload bytes, found {}",
            header.rows,
            header.cols,
            expected,
            payload.len()
        )));
    }

    let data: Vec<f64> = match header.dtype {
        Dtype::F4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F8 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    FeatureMatrix::new(data, header.rows, header.cols).map_err(|e| match e {
        Error::InvalidInput(m) => bad(m),
        other => other,
    })
}

/// Encodes a matrix as NPY v1.0 using the scalar's native width.
pub fn encode<T: Scalar>(matrix: &FeatureMatrix<T>) -> Vec<u8> {
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        T::NPY_DESCR,
        matrix.n_rows(),
        matrix.n_cols()
    );
    // pad so that the payload starts on a 64-byte boundary, newline last
    let unpadded = PREAMBLE + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', padding));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE + dict.len() + matrix.as_slice().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    for &v in matrix.as_slice() {
        v.extend_le_bytes(&mut out);
    }
    out
}

fn parse_header(text: &str) -> std::result::Result<Header, String> {
    let body = text.trim_end_matches(['\n', ' ']).trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or("header is not a dict")?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim();
    while !rest.is_empty() {
        let (key, after) = parse_quoted(rest).ok_or("expected quoted key")?;
        let after = after.trim_start().strip_prefix(':').ok_or("expected ':'")?;
        let after = after.trim_start();
        let tail = match key {
            "descr" => {
                let (v, t) = parse_quoted(after).ok_or("descr must be a string")?;
                descr = Some(v.to_string());
                t
            }
            "fortran_order" => {
                if let Some(t) = after.strip_prefix("False") {
                    fortran = Some(false);
                    t
                } else if let Some(t) = after.strip_prefix("True") {
                    fortran = Some(true);
                    t
                } else {
                    return Err("fortran_order must be True or False".into());
                }
            }
            "shape" => {
                let inner = after.strip_prefix('(').ok_or("shape must be a tuple")?;
                let close = inner.find(')').ok_or("unterminated shape tuple")?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<usize>()
                            .map_err(|_| format!("bad dimension {s:?}"))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(format!("unexpected header key {other:?}")),
        };
        let tail = tail.trim_start();
        rest = tail.strip_prefix(',').unwrap_or(tail).trim_start();
    }

    let dtype = match descr.as_deref() {
        Some("<f4") => Dtype::F4,
        Some("<f8") => Dtype::F8,
        Some(d) => return Err(format!("unsupported dtype {d:?}")),
        None => return Err("missing descr".into()),
    };
    match fortran {
        Some(false) => {}
        Some(true) => return Err("fortran_order arrays are not supported".into()),
        None => return Err("missing fortran_order".into()),
    }
    match shape.as_deref() {
        Some(&[rows, cols]) => Ok(Header { dtype, rows, cols }),
        Some(dims) => Err(format!("expected a 2-D shape, got {} dims", dims.len())),
        None => Err("missing shape".into()),
    }
}

fn parse_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}
