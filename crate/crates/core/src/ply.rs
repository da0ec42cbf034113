//! ASCII PLY export of point clouds (`x y z` plus optional `red green blue`).

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn write_ply<W: Write>(mut out: W, cloud: &PointCloud, colors: Option<&[[u8; 3]]>) -> std::io::Result<()> {
    if let Some(c) = colors {
        assert_eq!(c.len(), cloud.len(), "one colour per point");
    }
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}")?;
    }
    if colors.is_some() {
        for ch in ["red", "green", "blue"] {
            writeln!(out, "property uchar {ch}")?;
        }
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        write!(out, "{:.6} {:.6} {:.6}", p[0], p[1], p[2])?;
        if let Some(c) = colors {
            write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn save_ply(path: &Path, cloud: &PointCloud, colors: Option<&[[u8; 3]]>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(std::io::BufWriter::new(file), cloud, colors).map_err(|e| Error::io(path, e))
}

/// Parsed vertices and, when present, their colours.
pub type PlyContents = (PointCloud, Option<Vec<[u8; 3]>>);

/// Reads the ASCII subset written by [`write_ply`].
pub fn read_ply<R: BufRead>(input: R, origin: &Path) -> Result<PlyContents> {
    let bad = |m: String| Error::ingestion(origin, m);
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::io(origin, e)),
            None => Err(bad("unexpected end of file".into())),
        }
    };
    if next()?.trim() != "ply" {
        return Err(bad("missing ply magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let line = next()?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                if words.next() != Some("ascii") {
                    return Err(bad("only ascii PLY is supported".into()));
                }
            }
            Some("element") => {
                if words.next() == Some("vertex") {
                    let n = words.next().and_then(|w| w.parse::<usize>().ok());
                    count = Some(n.ok_or_else(|| bad("bad vertex count".into()))?);
                }
            }
            Some("property") => {
                props.push(words.last().unwrap_or_default().to_string());
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let pos = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (pos("x"), pos("y"), pos("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex lacks x/y/z".into())),
    };
    let rgb = match (pos("red"), pos("green"), pos("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };
    let mut points = Vec::with_capacity(count);
    let mut colors = rgb.map(|_| Vec::with_capacity(count));
    for row in 0..count {
        let line = next()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != props.len() {
            return Err(bad(format!("vertex {row} has {} fields", vals.len())));
        }
        let f = |i: usize| {
            vals[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("vertex {row}: bad number {}", vals[i])))
        };
        points.push([f(xi)?, f(yi)?, f(zi)?]);
        if let (Some((r, g, b)), Some(c)) = (rgb, colors.as_mut()) {
            let byte = |i: usize| {
                vals[i]
                    .parse::<u8>()
                    .map_err(|_| bad(format!("vertex {row}: bad colour {}", vals[i])))
            };
            c.push([byte(r)?, byte(g)?, byte(b)?]);
        }
    }
    Ok((PointCloud::new(points), colors))
}

pub fn load_ply(path: &Path) -> Result<PlyContents> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_print_precision() {
        let cloud = PointCloud::new(vec![[0.1234567, -2.5, 3.0], [1e-7, 0.0, 4.25]]);
        let colors = vec![[1, 2, 3], [255, 0, 128]];
        let mut buf = Vec::new();
        write_ply(&mut buf, &cloud, Some(&colors)).unwrap();
        let (back, c) = read_ply(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(c.unwrap(), colors);
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn header_lists_properties() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &PointCloud::new(vec![[0.0; 3]]), None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 1\n"));
        assert!(!text.contains("red"));
    }

    #[test]
    fn truncated_body_rejected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 1\n";
        assert!(read_ply(text.as_bytes(), Path::new("t.ply")).is_err());
    }
}
