//! Point-cloud files: the `FSK1` binary layout and CSV.
//!
//! `FSK1` layout, all little-endian:
//!
//! | offset | size    | field                                  |
//! |--------|---------|----------------------------------------|
//! | 0      | 4       | magic `FSK1`                           |
//! | 4      | 2       | version (`u16`, currently 1)           |
//! | 6      | 8       | `n` (`u64`)                            |
//! | 14     | 8       | `d` (`u64`)                            |
//! | 22     | 1       | dtype: 0 = `f32`, 1 = `f64`            |
//! | 23     | 1       | has_labels: 0 or 1                     |
//! | 24     | n·d·w   | coordinates, row-major                 |
//! |        | 4n      | labels (`u32`), present iff has_labels |
//!
//! Neither format stores weights; measures read from disk are uniform.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measure::DiscreteMeasure;

pub const MAGIC: &[u8; 4] = b"FSK1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 24;

/// Element type of the coordinates in a binary file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Serialises points (and labels) to the binary layout.
pub fn encode(m: &DiscreteMeasure, dtype: Dtype) -> Vec<u8> {
    let (n, d) = (m.len(), m.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + n * d * dtype.width() + 4 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.push(match dtype {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    });
    out.push(m.labels().is_some() as u8);
    for &v in m.points().as_slice() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    if let Some(labels) = m.labels() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

/// Parses the binary layout into a uniform measure.
pub fn decode(bytes: &[u8]) -> Result<DiscreteMeasure> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: expected {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"FSK1\"", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let d = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes"));
    let dtype = match bytes[22] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(Error::Format(format!("unknown dtype byte {other}"))),
    };
    let labeled = match bytes[23] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("has_labels byte must be 0 or 1, got {other}"))),
    };
    let payload = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(dtype.width() as u64))
        .and_then(|p| p.checked_add(if labeled { 4 * n } else { 0 }))
        .and_then(|p| p.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if bytes.len() as u64 != payload {
        return Err(Error::Format(format!(
            "payload size mismatch: expected {payload} bytes, got {}",
            bytes.len()
        )));
    }
    let (n, d) = (n as usize, d as usize);
    let body = &bytes[HEADER_LEN..];
    let w = dtype.width();
    let coords: Vec<f64> = body[..n * d * w]
        .chunks_exact(w)
        .map(|c| match dtype {
            Dtype::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    let labels = labeled.then(|| {
        body[n * d * w..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect::<Vec<u32>>()
    });
    let points = Matrix::from_vec(n, d, coords)?;
    match labels {
        Some(l) => DiscreteMeasure::uniform_labeled(points, l),
        None => DiscreteMeasure::uniform(points),
    }
}

/// Writes a CSV with header `x0,...,x{d-1}[,label]`. Values use the shortest
/// representation that reads back to the same `f64`.
pub fn write_csv<W: std::io::Write>(m: &DiscreteMeasure, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..m.dim()).map(|t| format!("x{t}")).collect();
    if m.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..m.len() {
        let mut rec: Vec<String> = m.points().row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = m.labels() {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV layout written by [`write_csv`].
pub fn read_csv<R: std::io::Read>(input: R) -> Result<DiscreteMeasure> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    let labeled = header.iter().next_back() == Some("label");
    let d = header.len() - labeled as usize;
    for (t, name) in header.iter().take(d).enumerate() {
        if name != format!("x{t}") {
            return Err(Error::Format(format!("CSV column {t} is named {name:?}, expected \"x{t}\"")));
        }
    }
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Format(format!("CSV row {} has {} fields, expected {}", row + 1, rec.len(), header.len())));
        }
        for t in 0..d {
            let v: f64 = rec[t]
                .parse()
                .map_err(|_| Error::Format(format!("CSV row {} column x{t}: {:?} is not a number", row + 1, &rec[t])))?;
            coords.push(v);
        }
        if labeled {
            labels.push(
                rec[d]
                    .parse::<u32>()
                    .map_err(|_| Error::Format(format!("CSV row {}: bad label {:?}", row + 1, &rec[d])))?,
            );
        }
        n += 1;
    }
    let points = Matrix::from_vec(n, d, coords)?;
    if labeled {
        DiscreteMeasure::uniform_labeled(points, labels)
    } else {
        DiscreteMeasure::uniform(points)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a `.csv` file as CSV and anything else as `FSK1`.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    let path = path.as_ref();
    if is_csv(path) {
        read_csv(fs::File::open(path)?)
    } else {
        decode(&fs::read(path)?)
    }
}

/// Writes CSV for a `.csv` path and `FSK1` with the given dtype otherwise.
pub fn write_point_cloud(m: &DiscreteMeasure, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        write_csv(m, fs::File::create(path)?)
    } else {
        fs::write(path, encode(m, dtype))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn cloud(labeled: bool) -> DiscreteMeasure {
        let mut rng = Rng::new(5);
        let pts = rng.normal_matrix(13, 3, 2.0);
        if labeled {
            DiscreteMeasure::uniform_labeled(pts, (0..13).map(|i| i % 4).collect()).unwrap()
        } else {
            DiscreteMeasure::uniform(pts).unwrap()
        }
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        for labeled in [false, true] {
            let m = cloud(labeled);
            let bytes = encode(&m, Dtype::F64);
            let back = decode(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back, Dtype::F64), bytes);
        }
    }

    #[test]
    fn f32_files_round_trip_bytewise() {
        let m = cloud(true);
        let bytes = encode(&m, Dtype::F32);
        assert_eq!(encode(&decode(&bytes).unwrap(), Dtype::F32), bytes);
    }

    #[test]
    fn truncated_payload_names_both_sizes() {
        let bytes = encode(&cloud(false), Dtype::F64);
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains(&format!("expected {} bytes", bytes.len())), "{err}");
        assert!(err.contains(&format!("got {}", bytes.len() - 3)), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&cloud(false), Dtype::F64);
        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = encode(&cloud(false), Dtype::F64);
        bytes[4] = 9;
        assert!(decode(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn csv_with_labels_through_binary_and_back() {
        let m = cloud(true);
        let mut csv_bytes = Vec::new();
        write_csv(&m, &mut csv_bytes).unwrap();
        let from_csv = read_csv(csv_bytes.as_slice()).unwrap();
        assert_eq!(from_csv, m);
        let via_bin = decode(&encode(&from_csv, Dtype::F64)).unwrap();
        let mut again = Vec::new();
        write_csv(&via_bin, &mut again).unwrap();
        assert_eq!(again, csv_bytes);
    }

    #[test]
    fn csv_header_is_checked() {
        let text = "a,b\n1,2\n";
        assert!(read_csv(text.as_bytes()).is_err());
        let ok = "x0,x1,label\n1,2,0\n3,4,1\n";
        let m = read_csv(ok.as_bytes()).unwrap();
        assert_eq!(m.labels(), Some(&[0u32, 1][..]));
        assert_eq!(m.weights(), &[0.5, 0.5]);
    }
}
