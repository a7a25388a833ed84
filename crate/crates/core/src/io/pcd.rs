//! PCD v0.7 reader and writer.
//!
//! Supported header keys: VERSION, FIELDS, SIZE, TYPE, COUNT, WIDTH, HEIGHT,
//! VIEWPOINT, POINTS, DATA. Encodings: `ascii` and `binary` (uncompressed).
//! The reader accepts any field layout that contains float `x y z` (4- or
//! 8-byte), reads `intensity` when present, and skips other fields. The
//! writer emits 8-byte coordinates so a binary round trip is bit-exact.

use super::IoError;
use crate::geometry::{Point3, PointCloud};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdEncoding {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, Copy)]
struct FieldSpec {
    size: usize,
    type_char: char,
    count: usize,
}

#[derive(Debug, Default)]
struct Header {
    fields: Vec<String>,
    specs: Vec<FieldSpec>,
    width: Option<u64>,
    height: Option<u64>,
    points: Option<u64>,
    data: Option<String>,
    data_line: usize,
}

fn header_u64(path: &Path, line_no: usize, value: &str, key: &str) -> Result<u64, IoError> {
    value
        .trim()
        .parse::<u64>()
        .map_err(|_| IoError::parse(path, line_no, format!("invalid {key} value {value:?}")))
}

/// Read a PCD v0.7 file. Non-finite points are dropped and counted in the
/// log; the remaining cloud keeps file order.
pub fn read_pcd(path: &Path) -> Result<PointCloud, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut header = Header::default();
    let mut line_no = 0usize;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| IoError::io(path, e))?;
        if n == 0 {
            return Err(IoError::parse(path, line_no, "missing DATA line in header"));
        }
        line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        match key {
            "VERSION" => {
                if rest.trim() != "0.7" && rest.trim() != ".7" {
                    return Err(IoError::parse(path, line_no, format!("unsupported VERSION {rest:?}")));
                }
            }
            "FIELDS" => header.fields = rest.split_whitespace().map(str::to_string).collect(),
            "SIZE" => {
                let sizes: Result<Vec<usize>, _> = rest.split_whitespace().map(str::parse).collect();
                let sizes = sizes.map_err(|_| IoError::parse(path, line_no, "invalid SIZE entry"))?;
                for (i, s) in sizes.iter().enumerate() {
                    if header.specs.len() <= i {
                        header.specs.push(FieldSpec { size: *s, type_char: 'F', count: 1 });
                    } else {
                        header.specs[i].size = *s;
                    }
                }
            }
            "TYPE" => {
                for (i, t) in rest.split_whitespace().enumerate() {
                    let c = t.chars().next().unwrap_or('?');
                    if header.specs.len() <= i {
                        header.specs.push(FieldSpec { size: 4, type_char: c, count: 1 });
                    } else {
                        header.specs[i].type_char = c;
                    }
                }
            }
            "COUNT" => {
                for (i, t) in rest.split_whitespace().enumerate() {
                    let c: usize = t
                        .parse()
                        .map_err(|_| IoError::parse(path, line_no, "invalid COUNT entry"))?;
                    if header.specs.len() <= i {
                        header.specs.push(FieldSpec { size: 4, type_char: 'F', count: c });
                    } else {
                        header.specs[i].count = c;
                    }
                }
            }
            "WIDTH" => header.width = Some(header_u64(path, line_no, rest, "WIDTH")?),
            "HEIGHT" => header.height = Some(header_u64(path, line_no, rest, "HEIGHT")?),
            "VIEWPOINT" => {}
            "POINTS" => header.points = Some(header_u64(path, line_no, rest, "POINTS")?),
            "DATA" => {
                header.data = Some(rest.trim().to_string());
                header.data_line = line_no;
                break;
            }
            other => {
                return Err(IoError::parse(path, line_no, format!("unknown header key {other:?}")));
            }
        }
    }

    let points = header
        .points
        .or(match (header.width, header.height) {
            (Some(w), Some(h)) => Some(w * h),
            _ => None,
        })
        .ok_or_else(|| IoError::parse(path, header.data_line, "header lacks POINTS"))?;
    if let (Some(w), Some(h)) = (header.width, header.height) {
        if w * h != points {
            return Err(IoError::parse(
                path,
                header.data_line,
                format!("WIDTH*HEIGHT = {} does not match POINTS {points}", w * h),
            ));
        }
    }
    if header.fields.is_empty() || header.specs.len() != header.fields.len() {
        return Err(IoError::parse(
            path,
            header.data_line,
            "FIELDS/SIZE/TYPE/COUNT lists are missing or of different lengths",
        ));
    }

    let field_index = |name: &str| header.fields.iter().position(|f| f == name);
    let (xi, yi, zi) = match (field_index("x"), field_index("y"), field_index("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(IoError::parse(path, header.data_line, "FIELDS must contain x, y and z"));
        }
    };
    for &i in &[xi, yi, zi] {
        let s = header.specs[i];
        if s.type_char != 'F' || (s.size != 4 && s.size != 8) || s.count != 1 {
            return Err(IoError::parse(
                path,
                header.data_line,
                format!("field {:?} must be a scalar float", header.fields[i]),
            ));
        }
    }
    let intensity_idx = field_index("intensity");

    let encoding = match header.data.as_deref() {
        Some("ascii") => PcdEncoding::Ascii,
        Some("binary") => PcdEncoding::Binary,
        Some(other) => {
            return Err(IoError::Unsupported {
                path: path.display().to_string(),
                message: format!("DATA encoding {other:?} (only ascii and binary are supported)"),
            });
        }
        None => unreachable!(),
    };

    let mut cloud_points = Vec::with_capacity(points as usize);
    let mut intensities = intensity_idx.map(|_| Vec::with_capacity(points as usize));
    let mut dropped = 0usize;

    match encoding {
        PcdEncoding::Ascii => {
            // Token offsets per field, honoring COUNT.
            let mut offsets = Vec::with_capacity(header.specs.len());
            let mut off = 0usize;
            for s in &header.specs {
                offsets.push(off);
                off += s.count;
            }
            let tokens_per_point = off;

            let mut body_line = header.data_line;
            let mut parsed = 0u64;
            for line in reader.lines() {
                let line = line.map_err(|e| IoError::io(path, e))?;
                body_line += 1;
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                if parsed == points {
                    return Err(IoError::parse(
                        path,
                        body_line,
                        format!("more data rows than the declared POINTS {points}"),
                    ));
                }
                let tokens: Vec<&str> = trimmed.split_whitespace().collect();
                if tokens.len() != tokens_per_point {
                    return Err(IoError::parse(
                        path,
                        body_line,
                        format!("expected {tokens_per_point} values, found {}", tokens.len()),
                    ));
                }
                let num = |idx: usize| -> Result<f64, IoError> {
                    tokens[offsets[idx]].parse::<f64>().map_err(|_| {
                        IoError::parse(
                            path,
                            body_line,
                            format!("non-numeric token {:?}", tokens[offsets[idx]]),
                        )
                    })
                };
                let (x, y, z) = (num(xi)?, num(yi)?, num(zi)?);
                parsed += 1;
                match Point3::try_new(x, y, z) {
                    Some(p) => {
                        cloud_points.push(p);
                        if let (Some(list), Some(ii)) = (intensities.as_mut(), intensity_idx) {
                            list.push(num(ii)? as f32);
                        }
                    }
                    None => dropped += 1,
                }
            }
            if parsed < points {
                return Err(IoError::parse(
                    path,
                    body_line,
                    format!("header declares POINTS {points} but body has {parsed}"),
                ));
            }
        }
        PcdEncoding::Binary => {
            let mut byte_offsets = Vec::with_capacity(header.specs.len());
            let mut off = 0usize;
            for s in &header.specs {
                byte_offsets.push(off);
                off += s.size * s.count;
            }
            let stride = off;
            let mut body = Vec::new();
            reader.read_to_end(&mut body).map_err(|e| IoError::io(path, e))?;
            if body.len() < stride * points as usize {
                return Err(IoError::parse(
                    path,
                    header.data_line,
                    format!(
                        "binary body holds {} points but header declares POINTS {points}",
                        body.len() / stride.max(1)
                    ),
                ));
            }
            let read_float = |rec: &[u8], idx: usize| -> f64 {
                let at = byte_offsets[idx];
                match header.specs[idx].size {
                    4 => f32::from_le_bytes(rec[at..at + 4].try_into().unwrap()) as f64,
                    _ => f64::from_le_bytes(rec[at..at + 8].try_into().unwrap()),
                }
            };
            for rec in body.chunks_exact(stride).take(points as usize) {
                let (x, y, z) = (read_float(rec, xi), read_float(rec, yi), read_float(rec, zi));
                match Point3::try_new(x, y, z) {
                    Some(p) => {
                        cloud_points.push(p);
                        if let (Some(list), Some(ii)) = (intensities.as_mut(), intensity_idx) {
                            list.push(read_float(rec, ii) as f32);
                        }
                    }
                    None => dropped += 1,
                }
            }
        }
    }

    if dropped > 0 {
        log::warn!("{}: dropped {dropped} non-finite points", path.display());
    }
    Ok(PointCloud { points: cloud_points, intensity: intensities })
}

/// Write a PCD v0.7 file. Coordinates are stored as 8-byte floats; ASCII
/// output uses six decimal places.
pub fn write_pcd(cloud: &PointCloud, path: &Path, encoding: PcdEncoding) -> Result<(), IoError> {
    if cloud.is_empty() {
        return Err(IoError::EmptyCloud);
    }
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let with_intensity = cloud.intensity.is_some();

    let (fields, size, ftype, count) = if with_intensity {
        ("x y z intensity", "8 8 8 4", "F F F F", "1 1 1 1")
    } else {
        ("x y z", "8 8 8", "F F F", "1 1 1")
    };
    let n = cloud.len();
    let data = match encoding {
        PcdEncoding::Ascii => "ascii",
        PcdEncoding::Binary => "binary",
    };
    write!(
        out,
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS {fields}\nSIZE {size}\nTYPE {ftype}\nCOUNT {count}\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA {data}\n"
    )
    .map_err(|e| IoError::io(path, e))?;

    match encoding {
        PcdEncoding::Ascii => {
            for (i, p) in cloud.points.iter().enumerate() {
                write!(out, "{:.6} {:.6} {:.6}", p.x, p.y, p.z).map_err(|e| IoError::io(path, e))?;
                if let Some(intensity) = &cloud.intensity {
                    write!(out, " {:.6}", intensity[i]).map_err(|e| IoError::io(path, e))?;
                }
                writeln!(out).map_err(|e| IoError::io(path, e))?;
            }
        }
        PcdEncoding::Binary => {
            for (i, p) in cloud.points.iter().enumerate() {
                out.write_all(&p.x.to_le_bytes()).map_err(|e| IoError::io(path, e))?;
                out.write_all(&p.y.to_le_bytes()).map_err(|e| IoError::io(path, e))?;
                out.write_all(&p.z.to_le_bytes()).map_err(|e| IoError::io(path, e))?;
                if let Some(intensity) = &cloud.intensity {
                    out.write_all(&intensity[i].to_le_bytes()).map_err(|e| IoError::io(path, e))?;
                }
            }
        }
    }
    out.flush().map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    #[test]
    fn ascii_three_points() {
        let dir = tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "a.pcd",
            "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 3\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 3\nDATA ascii\n1 2 3\n4.5 -1 0\n0 0 9\n",
        );
        let cloud = read_pcd(&p).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.points[1], Point3::new(4.5, -1.0, 0.0));
    }

    #[test]
    fn declared_point_count_mismatch() {
        let dir = tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "short.pcd",
            "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 5\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 5\nDATA ascii\n1 2 3\n4 5 6\n7 8 9\n1 1 1\n",
        );
        let err = read_pcd(&p).unwrap_err();
        assert!(err.to_string().contains("POINTS 5"), "{err}");
    }

    #[test]
    fn malformed_header_names_line() {
        let dir = tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "bad.pcd",
            "VERSION 0.7\nGARBAGE x\nDATA ascii\n",
        );
        let err = read_pcd(&p).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn compressed_encoding_unsupported() {
        let dir = tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "c.pcd",
            "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 1\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 1\nDATA binary_compressed\nxxxx",
        );
        assert!(matches!(read_pcd(&p), Err(IoError::Unsupported { .. })));
    }

    #[test]
    fn non_numeric_token_names_line() {
        let dir = tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "nn.pcd",
            "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 2\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 2\nDATA ascii\n1 2 3\n1 oops 3\n",
        );
        let err = read_pcd(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":12:") && msg.contains("oops"), "{msg}");
    }

    #[test]
    fn non_finite_points_dropped() {
        let dir = tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "nan.pcd",
            "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 2\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 2\nDATA ascii\n1 2 3\nnan 0 0\n",
        );
        let cloud = read_pcd(&p).unwrap();
        assert_eq!(cloud.len(), 1);
    }

    #[test]
    fn empty_cloud_write_rejected() {
        let dir = tempdir().unwrap();
        let cloud = PointCloud::default();
        assert!(matches!(
            write_pcd(&cloud, &dir.path().join("e.pcd"), PcdEncoding::Binary),
            Err(IoError::EmptyCloud)
        ));
    }

    #[test]
    fn single_point_header() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("one.pcd");
        let cloud = PointCloud::from_points(vec![Point3::new(1.0, 2.0, 3.0)]);
        write_pcd(&cloud, &p, PcdEncoding::Ascii).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("POINTS 1"));
    }

    #[test]
    fn binary_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<Point3> = (0..10_000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-500.0..500.0),
                    rng.gen_range(-500.0..500.0),
                    rng.gen_range(-50.0..50.0),
                )
            })
            .collect();
        let cloud = PointCloud::from_points(points);
        let p = dir.path().join("rt.pcd");
        write_pcd(&cloud, &p, PcdEncoding::Binary).unwrap();
        let back = read_pcd(&p).unwrap();
        assert_eq!(back.points, cloud.points);
    }

    #[test]
    fn ascii_round_trip_within_printf_precision() {
        let dir = tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points: Vec<Point3> = (0..2000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-10.0..10.0),
                )
            })
            .collect();
        let cloud = PointCloud::from_points(points);
        let p = dir.path().join("rt_ascii.pcd");
        write_pcd(&cloud, &p, PcdEncoding::Ascii).unwrap();
        let back = read_pcd(&p).unwrap();
        for (a, b) in back.points.iter().zip(&cloud.points) {
            assert!((a.x - b.x).abs() <= 1e-6);
            assert!((a.y - b.y).abs() <= 1e-6);
            assert!((a.z - b.z).abs() <= 1e-6);
        }
    }

    #[test]
    fn intensity_preserved() {
        let dir = tempdir().unwrap();
        let cloud = PointCloud {
            points: vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            intensity: Some(vec![0.25, 0.5]),
        };
        let p = dir.path().join("int.pcd");
        write_pcd(&cloud, &p, PcdEncoding::Binary).unwrap();
        let back = read_pcd(&p).unwrap();
        assert_eq!(back.intensity, Some(vec![0.25, 0.5]));
    }
}
