//! Reader and writer for the NumPy `.npy` format (versions 1.0 and 2.0),
//! restricted to little-endian C-order arrays of one or two dimensions.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
    Int { bytes: usize, signed: bool },
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        let (endian, kind) = descr.split_at(1.min(descr.len()));
        let single_byte = matches!(kind, "i1" | "u1" | "b1");
        if !(endian == "<" || (endian == "|" && single_byte)) {
            return Err(Error::Unsupported(format!("dtype '{descr}'")));
        }
        Ok(match kind {
            "f4" => Dtype::F4,
            "f8" => Dtype::F8,
            "i1" | "i2" | "i4" | "i8" => Dtype::Int {
                bytes: kind[1..].parse().expect("literal digit"),
                signed: true,
            },
            "u1" | "b1" | "u2" | "u4" | "u8" => Dtype::Int {
                bytes: kind[1..].parse().expect("literal digit"),
                signed: false,
            },
            _ => return Err(Error::Unsupported(format!("dtype '{descr}'"))),
        })
    }

    fn size(&self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
            Dtype::Int { bytes, .. } => *bytes,
        }
    }

    fn decode(&self, b: &[u8]) -> f64 {
        match *self {
            Dtype::F4 => f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))),
            Dtype::F8 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
            Dtype::Int { signed, .. } => {
                let mut buf = [0u8; 8];
                buf[..b.len()].copy_from_slice(b);
                if signed && b[b.len() - 1] & 0x80 != 0 {
                    buf[b.len()..].fill(0xff);
                }
                if signed {
                    i64::from_le_bytes(buf) as f64
                } else {
                    u64::from_le_bytes(buf) as f64
                }
            }
        }
    }
}

struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
    data_offset: usize,
}

/// Extracts the value following `'key':` in a Python dict literal.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = dict
        .find(&pat)
        .ok_or_else(|| Error::Corrupt(format!("NPY header lacks '{key}'")))?
        + pat.len();
    let rest = dict[start..].trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else if let Some(q) = rest.strip_prefix('\'') {
        q.find('\'').map(|i| i + 2)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(|| Error::Corrupt(format!("NPY header value for '{key}' is unterminated")))?;
    Ok(rest[..end].trim())
}

fn parse_header(bytes: &[u8], what: &str) -> Result<Header> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::NotNpy(what.to_string()));
    }
    let major = bytes[6];
    let (len, start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Corrupt(format!("{what}: truncated header")));
            }
            (
                u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize,
                12,
            )
        }
        v => return Err(Error::Unsupported(format!("{what}: NPY version {v}"))),
    };
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::Corrupt(format!("{what}: truncated header")));
    }
    let dict = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| Error::Corrupt(format!("{what}: header is not text")))?;

    let descr = dict_value(dict, "descr")?.trim_matches('\'');
    let dtype = Dtype::parse(descr)?;
    match dict_value(dict, "fortran_order")? {
        "False" => {}
        "True" => {
            return Err(Error::Unsupported(format!("{what}: Fortran-ordered array")));
        }
        other => return Err(Error::Corrupt(format!("{what}: fortran_order = {other}"))),
    }
    let shape_str = dict_value(dict, "shape")?;
    let inner = shape_str
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Corrupt(format!("{what}: shape {shape_str}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Corrupt(format!("{what}: shape {shape_str}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::Unsupported(format!(
            "{what}: {}-dimensional array",
            shape.len()
        )));
    }
    Ok(Header {
        dtype,
        shape,
        data_offset: end,
    })
}

fn decode(bytes: &[u8], what: &str, floats_only: bool) -> Result<Matrix> {
    let header = parse_header(bytes, what)?;
    if floats_only && matches!(header.dtype, Dtype::Int { .. }) {
        return Err(Error::Unsupported(format!(
            "{what}: integer dtype where floating point is required"
        )));
    }
    let (rows, cols) = match header.shape[..] {
        [n] => (1, n),
        [r, c] => (r, c),
        _ => unreachable!("shape rank checked in parse_header"),
    };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Corrupt(format!("{what}: shape overflows")))?;
    let size = header.dtype.size();
    let payload = &bytes[header.data_offset..];
    if payload.len() < count * size {
        return Err(Error::Corrupt(format!(
            "{what}: payload has {} bytes, expected {}",
            payload.len(),
            count * size
        )));
    }
    let data: Vec<f64> = payload[..count * size]
        .chunks_exact(size)
        .map(|b| header.dtype.decode(b))
        .collect();
    Matrix::new(rows, cols, data).map_err(|e| Error::Corrupt(format!("{what}: {e}")))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an `<f4` or `<f8` array; `f4` is widened and a 1-D array of
/// length `D` becomes a `1 x D` matrix.
pub fn read_npy(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    decode(&read_bytes(path)?, &path.display().to_string(), true)
}

/// Parses NPY bytes already in memory.
pub fn parse_npy(bytes: &[u8]) -> Result<Matrix> {
    decode(bytes, "<memory>", true)
}

/// Reads a 1-D (or single row/column) array of non-negative integral
/// class ids; integer dtypes are accepted alongside floats.
pub fn read_npy_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let m = decode(&read_bytes(path)?, &what, false)?;
    if m.rows() != 1 && m.cols() != 1 {
        return Err(Error::invalid(format!(
            "{what}: labels must be one-dimensional, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    m.as_slice()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!(
                    "{what}: label {v} is not a class id"
                )))
            }
        })
        .collect()
}

/// Serializes a matrix as NPY 1.0, `<f8`, C order.
pub fn encode_npy(m: &Matrix) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        m.rows(),
        m.cols()
    );
    // magic(6) + version(2) + length(2) + dict + padding + '\n' is a
    // multiple of 64
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + pad + 1;
    let mut out = Vec::with_capacity(10 + header_len + 8 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_npy(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_npy(m)).map_err(|e| Error::io(path, e))
}
