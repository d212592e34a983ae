//! Writing scalar fields as SF1, CSV or 16-bit PGM heatmaps.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::FieldFormat;
use crate::error::{Error, Result};
use crate::linop::ScalarField;

/// Hyperplane selection `axis = index` applied before export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub axis: usize,
    pub index: usize,
}

impl std::str::FromStr for Slice {
    type Err = Error;

    /// Parses `AXIS:INDEX`, e.g. `2:8`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("slice", format!("expected AXIS:INDEX, got `{s}`"));
        let (a, i) = s.split_once(':').ok_or_else(bad)?;
        Ok(Slice {
            axis: a.trim().parse().map_err(|_| bad())?,
            index: i.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Companion file holding the value range of a PGM image.
pub fn pgm_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Encode a 1-D or 2-D field as binary 16-bit PGM: axis 0 runs down the
/// image, the last axis across. Values map linearly from `[min, max]` to
/// `[0, 65535]`; a constant field maps to 0.
pub fn pgm_bytes(field: &ScalarField, digest: Option<&str>) -> Result<(Vec<u8>, f64, f64)> {
    let shape = field.grid().shape();
    let (height, width) = match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        d => {
            return Err(Error::Construction(format!(
                "PGM export needs a 1-D or 2-D field (select a slice for {d}-D)"
            )))
        }
    };
    let values = field.values();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cannot export non-finite values to PGM".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let mut out = b"P5\n".to_vec();
    if let Some(d) = digest {
        out.extend_from_slice(format!("# digest={d}\n").as_bytes());
    }
    out.extend_from_slice(format!("{width} {height}\n65535\n").as_bytes());
    for &v in values {
        let level = if range > 0.0 {
            ((v - min) / range * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    Ok((out, min, max))
}

/// Write `field` to `path`, optionally slicing first. The digest, when
/// given, goes into PGM comments and the CSV header; SF1 files carry none.
pub fn export_field(
    field: &ScalarField,
    path: &Path,
    format: FieldFormat,
    slice: Option<Slice>,
    digest: Option<&str>,
) -> Result<()> {
    let sliced;
    let field = match slice {
        Some(s) => {
            sliced = field.slice(s.axis, s.index)?;
            &sliced
        }
        None => field,
    };
    match format {
        FieldFormat::Sf1 => field.write_sf1(path),
        FieldFormat::Csv => {
            let mut text = field.to_csv_string();
            if let Some(d) = digest {
                let nl = text.find('\n').expect("CSV header line");
                text.insert_str(nl, &format!(" digest={d}"));
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        FieldFormat::Pgm => {
            if field.grid().ndim() > 2 {
                return Err(Error::config(
                    "slice",
                    "PGM export of a 3-D field requires a slice",
                ));
            }
            let (bytes, min, max) = pgm_bytes(field, digest)?;
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
            let sidecar = pgm_sidecar_path(path);
            let mut text = format!("min={min:?}\nmax={max:?}\n");
            if let Some(d) = digest {
                text.push_str(&format!("digest={d}\n"));
            }
            fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
        }
    }
}

pub fn file_extension(format: FieldFormat) -> &'static str {
    match format {
        FieldFormat::Sf1 => "sf1",
        FieldFormat::Csv => "csv",
        FieldFormat::Pgm => "pgm",
    }
}

/// Read a field from SF1 or CSV, chosen by file extension.
pub fn read_field(path: &Path) -> Result<ScalarField> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => ScalarField::read_csv(path),
        _ => ScalarField::read_sf1(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::Grid;

    #[test]
    fn constant_field_is_flat_image() {
        let f = ScalarField::new(Grid::new(vec![2, 3], vec![1.0, 1.0]).unwrap(), vec![4.0; 6]).unwrap();
        let (bytes, min, max) = pgm_bytes(&f, None).unwrap();
        assert_eq!((min, max), (4.0, 4.0));
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), header.len() + 12);
    }

    #[test]
    fn linear_grey_map() {
        let f = ScalarField::new(Grid::new(vec![3], vec![1.0]).unwrap(), vec![-1.0, 0.0, 1.0]).unwrap();
        let (bytes, _, _) = pgm_bytes(&f, Some("abc")).unwrap();
        let text = String::from_utf8_lossy(&bytes[..30]).to_string();
        assert!(text.starts_with("P5\n# digest=abc\n3 1\n65535\n"));
        let px = &bytes[bytes.len() - 6..];
        assert_eq!(px, &[0, 0, 0x80, 0x00, 0xff, 0xff]);
    }

    #[test]
    fn slice_parsing() {
        assert_eq!("2:5".parse::<Slice>().unwrap(), Slice { axis: 2, index: 5 });
        assert!("2".parse::<Slice>().is_err());
        assert!("a:b".parse::<Slice>().is_err());
    }
}
