//! Scanpath file formats.
//!
//! * `planar-lines`: one JSON record per line,
//!   `{"image_id": "...", "observer": "...", "fixations": [[x, y, t], ...]}`
//!   with normalized positions.
//! * `spherical-csv`: header `image,observer,index,lon_deg,lat_deg,t`, one
//!   fixation per row; degrees are mapped to the equirectangular frame.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scanpath::{validate_scanpath, Fixation, Scanpath, ScanpathError};

pub const SPHERICAL_CSV_HEADER: [&str; 6] = ["image", "observer", "index", "lon_deg", "lat_deg", "t"];

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {record} (image `{image_id}`) is invalid: {source}")]
    ValidationError {
        record: usize,
        image_id: String,
        source: ScanpathError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanpathFormat {
    PlanarLines,
    SphericalCsv,
}

impl std::str::FromStr for ScanpathFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planar-lines" => Ok(Self::PlanarLines),
            "spherical-csv" => Ok(Self::SphericalCsv),
            other => Err(format!("unknown scanpath format `{other}`")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    image_id: String,
    #[serde(default)]
    observer: Option<String>,
    fixations: Vec<[f64; 3]>,
}

fn checked(record: usize, sp: Scanpath) -> Result<Scanpath, LoadError> {
    validate_scanpath(&sp).map_err(|source| LoadError::ValidationError {
        record,
        image_id: sp.image_id.clone(),
        source,
    })?;
    Ok(sp)
}

pub fn load_scanpaths(path: impl AsRef<Path>, format: ScanpathFormat) -> Result<Vec<Scanpath>, LoadError> {
    let file = std::fs::File::open(path)?;
    match format {
        ScanpathFormat::PlanarLines => read_planar_lines(BufReader::new(file)),
        ScanpathFormat::SphericalCsv => read_spherical_csv(file),
    }
}

pub fn read_planar_lines(reader: impl BufRead) -> Result<Vec<Scanpath>, LoadError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| LoadError::ParseError {
            line: lineno + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        let sp = Scanpath {
            image_id: rec.image_id,
            observer_id: rec.observer,
            fixations: rec
                .fixations
                .into_iter()
                .map(|[x, y, t]| Fixation::new(x, y, t))
                .collect(),
        };
        out.push(checked(out.len(), sp)?);
    }
    Ok(out)
}

pub fn write_planar_lines(mut w: impl Write, scanpaths: &[Scanpath]) -> std::io::Result<()> {
    for sp in scanpaths {
        let rec = Record {
            image_id: sp.image_id.clone(),
            observer: sp.observer_id.clone(),
            fixations: sp.fixations.iter().map(|f| [f.x, f.y, f.t]).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_planar_lines(path: impl AsRef<Path>, scanpaths: &[Scanpath]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_planar_lines(&mut w, scanpaths)?;
    w.flush()
}

/// Longitude/latitude in degrees to normalized equirectangular coordinates.
pub fn degrees_to_normalized(lon_deg: f64, lat_deg: f64) -> (f64, f64) {
    (lon_deg / 360.0 + 0.5, 0.5 - lat_deg / 180.0)
}

pub fn read_spherical_csv(reader: impl std::io::Read) -> Result<Vec<Scanpath>, LoadError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        LoadError::ParseError {
            line,
            column: 0,
            message: e.to_string(),
        }
    };
    let headers = rdr.headers().map_err(parse_err)?.clone();
    if headers.iter().ne(SPHERICAL_CSV_HEADER.iter().copied()) {
        return Err(LoadError::ParseError {
            line: 1,
            column: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                SPHERICAL_CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    // Groups in order of first appearance, fixations sorted by index.
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<(u64, Fixation)>> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(parse_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize| -> Result<f64, LoadError> {
            row[col].parse::<f64>().map_err(|e| LoadError::ParseError {
                line,
                column: col + 1,
                message: format!("`{}`: {e}", &row[col]),
            })
        };
        let index = row[2].parse::<u64>().map_err(|e| LoadError::ParseError {
            line,
            column: 3,
            message: format!("`{}`: {e}", &row[2]),
        })?;
        let (x, y) = degrees_to_normalized(field(3)?, field(4)?);
        let t = field(5)?;
        let key = (row[0].to_string(), row[1].to_string());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push((index, Fixation::new(x, y, t)));
    }

    order
        .into_iter()
        .enumerate()
        .map(|(record, key)| {
            let mut fix = groups.remove(&key).unwrap_or_default();
            fix.sort_by_key(|(i, _)| *i);
            let (image_id, observer) = key;
            let sp = Scanpath {
                image_id,
                observer_id: (!observer.is_empty()).then_some(observer),
                fixations: fix.into_iter().map(|(_, f)| f).collect(),
            };
            checked(record, sp)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let text = r#"{"image_id":"img1","observer":"o1","fixations":[[0.5,0.5,0.0]]}"#;
        let sps = read_planar_lines(text.as_bytes()).unwrap();
        assert_eq!(sps.len(), 1);
        assert_eq!(sps[0].fixations, vec![Fixation::new(0.5, 0.5, 0.0)]);
        assert_eq!(sps[0].observer_id.as_deref(), Some("o1"));
    }

    #[test]
    fn out_of_range_names_record() {
        let text = "{\"image_id\":\"a\",\"fixations\":[[0.5,0.5,0.0]]}\n\n{\"image_id\":\"b\",\"fixations\":[[1.5,0.5,0.0]]}\n";
        match read_planar_lines(text.as_bytes()) {
            Err(LoadError::ValidationError { record, image_id, .. }) => {
                assert_eq!(record, 1);
                assert_eq!(image_id, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_has_position() {
        let text = "{\"image_id\":\"a\",\"fixations\":[[0.5,0.5,0.0]]}\n{\"image_id\": 3}\n";
        match read_planar_lines(text.as_bytes()) {
            Err(LoadError::ParseError { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spherical_rows_convert_degrees() {
        let text = "image,observer,index,lon_deg,lat_deg,t\n\
                    p1,u1,1,0,45,0.4\n\
                    p1,u1,0,90,0,0.0\n\
                    p1,u2,0,-180,-90,0.0\n";
        let sps = read_spherical_csv(text.as_bytes()).unwrap();
        assert_eq!(sps.len(), 2);
        assert_eq!(sps[0].fixations[0], Fixation::new(0.75, 0.5, 0.0));
        assert_eq!(sps[0].fixations[1], Fixation::new(0.5, 0.25, 0.4));
        assert_eq!(sps[1].fixations[0], Fixation::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn spherical_bad_header_and_field() {
        let err = read_spherical_csv("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LoadError::ParseError { line: 1, .. }));
        let err = read_spherical_csv("image,observer,index,lon_deg,lat_deg,t\np,u,0,abc,0,0\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, LoadError::ParseError { line: 2, column: 4, .. }));
    }

    #[test]
    fn round_trip_is_exact() {
        let sp = Scanpath::new(
            "x",
            None,
            vec![
                Fixation::new(0.1 + 0.2, 1.0 / 3.0, 0.0),
                Fixation::new(std::f64::consts::FRAC_1_SQRT_2, 1e-17, 0.123456789012345678),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_planar_lines(&mut buf, std::slice::from_ref(&sp)).unwrap();
        let back = read_planar_lines(&buf[..]).unwrap();
        assert_eq!(back, vec![sp]);
    }
}
