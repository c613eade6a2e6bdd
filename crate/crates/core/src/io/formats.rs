//! ASCII PLY and whitespace-separated xyz point files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Point, PointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointFormat {
    PlyAscii,
    Xyz,
}

impl PointFormat {
    /// Picks the format from the file extension; anything but `.ply` is xyz.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => Self::PlyAscii,
            _ => Self::Xyz,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::PlyAscii => "ply",
            Self::Xyz => "xyz",
        }
    }
}

impl FromStr for PointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply" | "ply-ascii" => Ok(Self::PlyAscii),
            "xyz" => Ok(Self::Xyz),
            other => Err(Error::Config(format!("unknown point format `{other}`"))),
        }
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn coordinate(token: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_error(path, line, format!("`{token}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("non-finite coordinate `{token}`")));
    }
    Ok(v)
}

/// Whitespace-separated triples; blank lines and `#` comments are skipped,
/// extra columns ignored.
pub fn parse_xyz(text: &str, path: &Path) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(parse_error(path, i + 1, format!("expected 3 coordinates, found {}", tokens.len())));
        }
        points.push(Point::new(
            coordinate(tokens[0], path, i + 1)?,
            coordinate(tokens[1], path, i + 1)?,
            coordinate(tokens[2], path, i + 1)?,
        ));
    }
    Ok(points)
}

/// ASCII PLY: reads the `vertex` element's x, y and z properties and skips
/// everything else.
pub fn parse_ply(text: &str, path: &Path) -> Result<Vec<Point>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_error(path, 1, "missing `ply` magic")),
    }

    // Elements in declaration order with their property names.
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut format_seen = false;
    let mut body_start = None;
    for (i, raw) in lines.by_ref() {
        let n = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => format_seen = true,
            ["format", kind, ..] => {
                return Err(parse_error(path, n, format!("`{kind}` PLY is not supported, only ascii")))
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_error(path, n, format!("bad element count `{count}`")))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => match elements.last_mut() {
                Some((name, _, props)) if name != "vertex" => props.push("list".into()),
                Some(_) => return Err(parse_error(path, n, "list properties on vertices are not supported")),
                None => return Err(parse_error(path, n, "property before any element")),
            },
            ["property", _ty, name] => match elements.last_mut() {
                Some((_, _, props)) => props.push(name.to_string()),
                None => return Err(parse_error(path, n, "property before any element")),
            },
            ["end_header"] => {
                body_start = Some(n);
                break;
            }
            _ => return Err(parse_error(path, n, format!("malformed header line `{}`", raw.trim()))),
        }
    }
    let Some(header_end) = body_start else {
        return Err(parse_error(path, text.lines().count().max(1), "header has no `end_header`"));
    };
    if !format_seen {
        return Err(parse_error(path, header_end, "header has no `format` line"));
    }

    let mut points = Vec::new();
    let mut last_line = header_end;
    for (name, count, props) in &elements {
        let axis = |a: &str| props.iter().position(|p| p == a);
        let is_vertex = name == "vertex";
        let (ix, iy, iz) = if is_vertex {
            match (axis("x"), axis("y"), axis("z")) {
                (Some(x), Some(y), Some(z)) => (x, y, z),
                _ => return Err(parse_error(path, header_end, "vertex element lacks x, y or z")),
            }
        } else {
            (0, 0, 0)
        };
        for _ in 0..*count {
            let Some((i, raw)) = lines.next() else {
                return Err(parse_error(
                    path,
                    last_line + 1,
                    format!("file ends before all {count} `{name}` entries were read"),
                ));
            };
            last_line = i + 1;
            if !is_vertex {
                continue;
            }
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            if tokens.len() < props.len() {
                return Err(parse_error(
                    path,
                    last_line,
                    format!("expected {} values, found {}", props.len(), tokens.len()),
                ));
            }
            points.push(Point::new(
                coordinate(tokens[ix], path, last_line)?,
                coordinate(tokens[iy], path, last_line)?,
                coordinate(tokens[iz], path, last_line)?,
            ));
        }
    }
    if !elements.iter().any(|(name, _, _)| name == "vertex") {
        return Err(parse_error(path, header_end, "no vertex element"));
    }
    Ok(points)
}

/// Canonical ASCII PLY. `f64` debug formatting is the shortest string that
/// parses back to the same value and switches to exponents for extreme
/// magnitudes, so a write-parse cycle is lossless.
pub fn write_ply(points: &[Point]) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    );
    for p in points {
        let _ = writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    out
}

pub fn write_xyz(points: &[Point]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_points(text: &str, path: &Path, format: PointFormat) -> Result<Vec<Point>> {
    match format {
        PointFormat::PlyAscii => parse_ply(text, path),
        PointFormat::Xyz => parse_xyz(text, path),
    }
}

/// Reads a point file; the result may be empty.
pub fn read_points(path: &Path, format: PointFormat) -> Result<Vec<Point>> {
    parse_points(&read_text(path)?, path, format)
}

/// Reads a nonempty point set.
pub fn parse_point_file(path: &Path, format: PointFormat, id: usize) -> Result<PointSet> {
    let points = read_points(path, format)?;
    if points.is_empty() {
        return Err(Error::InvalidPointSet(format!("{} contains no points", path.display())));
    }
    PointSet::new(id, points)
}

pub fn write_point_file(points: &[Point], path: &Path, format: PointFormat) -> Result<()> {
    let text = match format {
        PointFormat::PlyAscii => write_ply(points),
        PointFormat::Xyz => write_xyz(points),
    };
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: PathBuf::from(path),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.ply")
    }

    #[test]
    fn ply_with_extra_properties_and_faces() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty float confidence\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 1\n1 0 0 0.5\n0 1.5 -2 0.2\n3 0 1 2\n";
        let pts = parse_ply(text, p()).unwrap();
        assert_eq!(pts, vec![Point::zeros(), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.5, -2.0)]);
    }

    #[test]
    fn property_order_is_respected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float z\nproperty float x\nproperty float y\nend_header\n3 1 2\n";
        assert_eq!(parse_ply(text, p()).unwrap(), vec![Point::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn truncated_ply_reports_the_missing_line() {
        let text = "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 1 1\n2 2 2\n3 3 3\n";
        match parse_ply(text, p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_ply_is_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
        match parse_ply(text, p()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("binary_little_endian"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_and_values() {
        assert!(matches!(parse_ply("plx\n", p()), Err(Error::Parse { line: 1, .. })));
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nwhat\nend_header\n1 2 3\n";
        assert!(matches!(parse_ply(bad, p()), Err(Error::Parse { line: 7, .. })));
        let nan = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 nan 3\n";
        assert!(matches!(parse_ply(nan, p()), Err(Error::Parse { line: 8, .. })));
    }

    #[test]
    fn xyz_skips_comments_and_blank_lines() {
        let text = "# header\n\n1 2 3\n  4 5 6 # trailing\n7 8 9 0.5\n";
        let pts = parse_xyz(text, Path::new("a.xyz")).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1], Point::new(4.0, 5.0, 6.0));
        assert!(matches!(parse_xyz("1 2\n", Path::new("a.xyz")), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_xyz("1 2 inf\n", Path::new("a.xyz")), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_set_writes_a_valid_file() {
        let text = write_ply(&[]);
        assert!(parse_ply(&text, p()).unwrap().is_empty());
        assert!(parse_xyz(&write_xyz(&[]), p()).unwrap().is_empty());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(PointFormat::from_path(Path::new("a/b.PLY")), PointFormat::PlyAscii);
        assert_eq!(PointFormat::from_path(Path::new("a/b.xyz")), PointFormat::Xyz);
        assert_eq!("ply-ascii".parse::<PointFormat>().unwrap(), PointFormat::PlyAscii);
    }
}
