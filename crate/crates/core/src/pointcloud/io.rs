//! Single-cloud files.
//!
//! Text: a header line `MVP1 <n> <c> <has_labels>` followed by `n` rows of
//! `x y z f1 .. fc [label]`.
//!
//! Binary: magic `MVPB`, three little-endian u32 (`n`, `c`, `has_labels`),
//! `n·(3+c)` little-endian f32 in row order, then `n` little-endian u32
//! labels when present.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::tensor::{Real, Tensor};

const TEXT_MAGIC: &str = "MVP1";
const BINARY_MAGIC: &[u8; 4] = b"MVPB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Text,
    Binary,
}

impl Encoding {
    pub fn extension(self) -> &'static str {
        match self {
            Encoding::Text => "mvp",
            Encoding::Binary => "mvpb",
        }
    }
}

/// Writes a batch-one cloud. Values are stored as f32.
pub fn write_cloud<T: Real>(cloud: &PointCloud<T>, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    let bytes = match encoding {
        Encoding::Text => encode_text(cloud)?.into_bytes(),
        Encoding::Binary => encode_binary(cloud)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cloud in either encoding, detected from the leading magic.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format {
            line: 1,
            detail: format!("neither binary magic nor UTF-8 text: {e}"),
        })?;
        decode_text(text)
    }
}

fn rows<T: Real>(cloud: &PointCloud<T>) -> Result<(usize, usize)> {
    if cloud.batch() != 1 {
        return Err(Error::contract(
            "write_cloud",
            format!("files hold one cloud, got batch {}", cloud.batch()),
        ));
    }
    Ok((cloud.points(), cloud.channels()))
}

fn encode_text<T: Real>(cloud: &PointCloud<T>) -> Result<String> {
    use std::fmt::Write;
    let (n, c) = rows(cloud)?;
    let (pos, feat) = (cloud.positions().data(), cloud.features().data());
    let mut out = String::new();
    let _ = writeln!(out, "{TEXT_MAGIC} {n} {c} {}", u8::from(cloud.labels().is_some()));
    for i in 0..n {
        for a in 0..3 {
            let _ = write!(out, "{} ", pos[i * 3 + a].as_f64() as f32);
        }
        for ch in 0..c {
            let _ = write!(out, "{} ", feat[ch * n + i].as_f64() as f32);
        }
        if let Some(labels) = cloud.labels() {
            let _ = write!(out, "{}", labels[i]);
        }
        let trimmed = out.trim_end_matches(' ').len();
        out.truncate(trimmed);
        out.push('\n');
    }
    Ok(out)
}

fn decode_text(text: &str) -> Result<PointCloud<f32>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(Error::Format {
        line: 1,
        detail: "empty file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = |detail: &str| Error::Format {
        line: 1,
        detail: format!("{detail}: {header:?}"),
    };
    if fields.len() != 4 || fields[0] != TEXT_MAGIC {
        return Err(bad_header("expected `MVP1 <n> <c> <has_labels>`"));
    }
    let n: usize = fields[1].parse().map_err(|_| bad_header("bad point count"))?;
    let c: usize = fields[2].parse().map_err(|_| bad_header("bad channel count"))?;
    let has_labels = match fields[3] {
        "0" => false,
        "1" => true,
        _ => return Err(bad_header("has_labels must be 0 or 1")),
    };
    if n == 0 || c == 0 {
        return Err(bad_header("point and channel counts must be positive"));
    }

    let width = 3 + c + usize::from(has_labels);
    let mut pos = Vec::with_capacity(n * 3);
    let mut feat = vec![0.0f32; n * c];
    let mut labels = Vec::with_capacity(if has_labels { n } else { 0 });
    let mut seen = 0;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if seen == n {
            return Err(Error::Format {
                line: line_no,
                detail: format!("more than {n} rows"),
            });
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != width {
            return Err(Error::Format {
                line: line_no,
                detail: format!("expected {width} columns, found {}", cols.len()),
            });
        }
        let real = |s: &str| {
            s.parse::<f32>().map_err(|_| Error::Format {
                line: line_no,
                detail: format!("not a real number: {s:?}"),
            })
        };
        for col in &cols[..3] {
            pos.push(real(col)?);
        }
        for (ch, col) in cols[3..3 + c].iter().enumerate() {
            feat[ch * n + seen] = real(col)?;
        }
        if has_labels {
            labels.push(cols[3 + c].parse::<usize>().map_err(|_| Error::Format {
                line: line_no,
                detail: format!("not a label: {:?}", cols[3 + c]),
            })?);
        }
        seen += 1;
    }
    if seen < n {
        return Err(Error::Truncated {
            what: "rows",
            expected: n,
            found: seen,
        });
    }
    PointCloud::new(
        Tensor::new([1, n, 3], pos)?,
        Tensor::new([1, c, n], feat)?,
        has_labels.then_some(labels),
    )
}

fn encode_binary<T: Real>(cloud: &PointCloud<T>) -> Result<Vec<u8>> {
    let (n, c) = rows(cloud)?;
    let (pos, feat) = (cloud.positions().data(), cloud.features().data());
    let mut out = Vec::with_capacity(16 + n * (3 + c + 1) * 4);
    out.extend_from_slice(BINARY_MAGIC);
    for v in [n, c, usize::from(cloud.labels().is_some())] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for i in 0..n {
        for a in 0..3 {
            (pos[i * 3 + a].as_f64() as f32).write_le(&mut out);
        }
        for ch in 0..c {
            (feat[ch * n + i].as_f64() as f32).write_le(&mut out);
        }
    }
    if let Some(labels) = cloud.labels() {
        for &l in labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_binary(bytes: &[u8]) -> Result<PointCloud<f32>> {
    let truncated = |expected: usize| Error::Truncated {
        what: "bytes",
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 16 {
        return Err(truncated(16));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, c, has_labels) = (word(4), word(8), word(12));
    if n == 0 || c == 0 || has_labels > 1 {
        return Err(Error::Format {
            line: 1,
            detail: format!("bad binary header n={n} c={c} has_labels={has_labels}"),
        });
    }
    let expected = 16 + n * (3 + c) * 4 + has_labels * n * 4;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            line: 1,
            detail: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let mut pos = Vec::with_capacity(n * 3);
    let mut feat = vec![0.0f32; n * c];
    let mut at = 16;
    for i in 0..n {
        for _ in 0..3 {
            pos.push(f32::read_le(&bytes[at..]));
            at += 4;
        }
        for ch in 0..c {
            feat[ch * n + i] = f32::read_le(&bytes[at..]);
            at += 4;
        }
    }
    let labels = (has_labels == 1).then(|| (0..n).map(|i| word(at + i * 4)).collect());
    PointCloud::new(Tensor::new([1, n, 3], pos)?, Tensor::new([1, c, n], feat)?, labels)
}
