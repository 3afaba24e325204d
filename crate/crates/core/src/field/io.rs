//! Plain-text grid and mask files, plus PGM previews.
//!
//! ```text
//! grid nx=<int> ny=<int>
//! v00 v10 ... v(nx-1)0
//! ...
//! ```
//! Values are row-major with `y` outer, written with 17 significant digits so
//! that reading a written file reproduces every bit. Mask files use the header
//! keyword `mask` and the values `0`/`1`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GridField, Mask};
use crate::error::{Error, Result};

pub fn write_grid(f: &GridField, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("grid nx={} ny={}\n", f.nx(), f.ny());
    for row in f.values().chunks(f.nx()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_file(path.as_ref(), out.as_bytes())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridField> {
    let path = path.as_ref();
    let (nx, ny, values) = parse(path, "grid", |tok| {
        tok.parse::<f64>().ok().filter(|v| v.is_finite())
    })?;
    GridField::new(nx, ny, values).map_err(|e| format_err(path, 1, e.to_string()))
}

pub fn write_mask(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("mask nx={} ny={}\n", m.nx(), m.ny());
    for row in m.flags().chunks(m.nx()) {
        let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_file(path.as_ref(), out.as_bytes())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let (nx, ny, flags) = parse(path, "mask", |tok| match tok {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    })?;
    Mask::new(nx, ny, flags).map_err(|e| format_err(path, 1, e.to_string()))
}

/// Writes an 8-bit binary PGM with min–max normalization.
pub fn write_pgm(f: &GridField, path: impl AsRef<Path>) -> Result<()> {
    let (lo, hi) = (f.min(), f.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", f.nx(), f.ny()).into_bytes();
    // Image rows run top to bottom, so emit y descending.
    for j in (0..f.ny()).rev() {
        for i in 0..f.nx() {
            let t = (f.at(i, j) - lo) / span;
            out.push((t * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    write_file(path.as_ref(), &out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse<T>(
    path: &Path,
    keyword: &str,
    token: impl Fn(&str) -> Option<T>,
) -> Result<(usize, usize, Vec<T>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty file"))?;
    let (nx, ny) = parse_header(header, keyword).ok_or_else(|| {
        format_err(
            path,
            1,
            format!("malformed header {header:?}, expected `{keyword} nx=<int> ny=<int>`"),
        )
    })?;
    let expected = nx
        .checked_mul(ny)
        .ok_or_else(|| format_err(path, 1, "grid size overflows"))?;
    let mut values = Vec::with_capacity(expected);
    let mut last_line = 1;
    for (idx, line) in lines {
        let lineno = idx + 1;
        last_line = lineno;
        for tok in line.split_whitespace() {
            let v = token(tok).ok_or_else(|| {
                format_err(path, lineno, format!("invalid or non-finite value {tok:?}"))
            })?;
            values.push(v);
            if values.len() > expected {
                return Err(format_err(
                    path,
                    lineno,
                    format!("expected {expected} values, found more"),
                ));
            }
        }
    }
    if values.len() != expected {
        return Err(format_err(
            path,
            last_line,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok((nx, ny, values))
}

fn parse_header(line: &str, keyword: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_whitespace();
    if parts.next()? != keyword {
        return None;
    }
    let nx = parts.next()?.strip_prefix("nx=")?.parse().ok()?;
    let ny = parts.next()?.strip_prefix("ny=")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((nx, ny))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn count_mismatch_reports_expected() {
        let dir = tmp();
        let p = dir.path().join("short.grid");
        fs::write(&p, "grid nx=3 ny=3\n1 2 3\n4 5 6\n7 8\n").unwrap();
        let err = read_grid(&p).unwrap_err().to_string();
        assert!(err.contains("expected 9 values"), "{err}");
    }

    #[test]
    fn nan_names_line() {
        let dir = tmp();
        let p = dir.path().join("nan.grid");
        fs::write(&p, "grid nx=2 ny=2\n1 2\nNaN 4\n").unwrap();
        match read_grid(&p).unwrap_err() {
            Error::Format { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("NaN"));
            }
            other => panic!("unexpected {other}"),
        }
        fs::write(&p, "grid nx=2 ny=2\n1 inf 2 3\n").unwrap();
        assert!(matches!(read_grid(&p), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn malformed_header() {
        let dir = tmp();
        let p = dir.path().join("bad.grid");
        for header in ["grid nx=3", "grd nx=2 ny=2", "grid ny=2 nx=2", "grid nx=a ny=2"] {
            fs::write(&p, format!("{header}\n1 2 3 4\n")).unwrap();
            assert!(matches!(read_grid(&p), Err(Error::Format { line: 1, .. })), "{header}");
        }
    }

    #[test]
    fn mask_round_trip() {
        let dir = tmp();
        let p = dir.path().join("m.mask");
        let m = Mask::new(3, 2, vec![true, false, true, false, false, true]).unwrap();
        write_mask(&m, &p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("mask nx=3 ny=2\n1 0 1\n"));
        assert_eq!(read_mask(&p).unwrap(), m);
        fs::write(&p, "mask nx=2 ny=2\n1 0 2 1\n").unwrap();
        assert!(read_mask(&p).is_err());
    }

    #[test]
    fn pgm_header_and_size() {
        let dir = tmp();
        let p = dir.path().join("f.pgm");
        let f = GridField::from_fn(4, 3, |x, y| x + y).unwrap();
        write_pgm(&f, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P5\n4 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 12);
        // Top-right pixel holds the maximum.
        assert_eq!(bytes[header.len() + 3], 255);
        // Bottom-left pixel holds the minimum.
        assert_eq!(bytes[header.len() + 8], 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_read_is_bitwise_identity(
            nx in 2usize..6, ny in 2usize..6,
            seed in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 36),
        ) {
            let dir = tmp();
            let p = dir.path().join("f.grid");
            let f = GridField::new(nx, ny, seed[..nx * ny].to_vec()).unwrap();
            write_grid(&f, &p).unwrap();
            let g = read_grid(&p).unwrap();
            prop_assert_eq!(f.nx(), g.nx());
            for (a, b) in f.values().iter().zip(g.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
