//! ASCII `.xyz` files: three whitespace-separated reals per line, `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

pub fn parse_xyz(text: &str, origin: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 coordinates, found {}",
                fields.len()
            )));
        }
        let mut c = [0.0; 3];
        for (slot, f) in c.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|e| parse_err(format!("'{f}': {e}")))?;
            if !slot.is_finite() {
                return Err(parse_err(format!("'{f}' is not finite")));
            }
        }
        points.push(Point3::from(c));
    }
    if points.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 0,
            message: "file contains no points".into(),
        });
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, &path.display().to_string())
}

/// Shortest round-trip decimal formatting, so output is byte-stable per input.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    out
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}
