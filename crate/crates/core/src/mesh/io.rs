//! OFF and OBJ reading and writing (triangles only).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Vec3;
use crate::error::{Error, Result};

/// Raw vertex and face arrays as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| parse_err(line, format!("expected a number, found {tok:?}")))
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| parse_err(line, format!("expected an index, found {tok:?}")))
}

/// Reads an OFF or OBJ file, dispatching on the extension.
pub fn read_mesh(path: &Path) -> Result<RawMesh> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "obj" => parse_obj(&text),
        Some(ext) if ext == "off" => parse_off(&text),
        _ => Err(Error::Domain(format!("{}: unknown mesh format (expected .off or .obj)", path.display()))),
    }
}

pub fn parse_off(text: &str) -> Result<RawMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut toks: Vec<&str> = header.split_whitespace().collect();
    if toks[0] != "OFF" {
        return Err(parse_err(ln, format!("expected OFF header, found {:?}", toks[0])));
    }
    toks.remove(0);
    let (ln, counts) = if toks.is_empty() {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(ln, "missing counts"))?;
        (ln, l.split_whitespace().collect::<Vec<_>>())
    } else {
        (ln, toks)
    };
    if counts.len() < 2 {
        return Err(parse_err(ln, "expected vertex and face counts"));
    }
    let nv = parse_usize(counts[0], ln)?;
    let nf = parse_usize(counts[1], ln)?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(ln, "unexpected end of vertex list"))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 3 {
            return Err(parse_err(ln, "vertex needs three coordinates"));
        }
        vertices.push(Vec3::new(parse_f64(t[0], ln)?, parse_f64(t[1], ln)?, parse_f64(t[2], ln)?));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(ln, "unexpected end of face list"))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let n = parse_usize(t[0], ln)?;
        if n != 3 {
            return Err(parse_err(ln, format!("only triangles are supported, found a {n}-gon")));
        }
        if t.len() < 4 {
            return Err(parse_err(ln, "face needs three indices"));
        }
        faces.push([parse_usize(t[1], ln)?, parse_usize(t[2], ln)?, parse_usize(t[3], ln)?]);
    }
    Ok(RawMesh { vertices, faces })
}

pub fn parse_obj(text: &str) -> Result<RawMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        let mut t = l.split_whitespace();
        match t.next() {
            Some("v") => {
                let c: Vec<&str> = t.collect();
                if c.len() < 3 {
                    return Err(parse_err(ln, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(parse_f64(c[0], ln)?, parse_f64(c[1], ln)?, parse_f64(c[2], ln)?));
            }
            Some("f") => {
                let idx: Vec<&str> = t.collect();
                if idx.len() != 3 {
                    return Err(parse_err(ln, format!("only triangles are supported, found a {}-gon", idx.len())));
                }
                let mut face = [0usize; 3];
                for (k, s) in idx.iter().enumerate() {
                    let head = s.split('/').next().unwrap_or("");
                    let v: i64 = head.parse().map_err(|_| parse_err(ln, format!("bad face index {s:?}")))?;
                    let n = vertices.len() as i64;
                    let resolved = if v > 0 { v - 1 } else if v < 0 { n + v } else { -1 };
                    if resolved < 0 {
                        return Err(parse_err(ln, format!("face index {v} out of range")));
                    }
                    face[k] = resolved as usize;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Ok(RawMesh { vertices, faces })
}

/// Writes an OFF file with round-trip exact coordinates.
pub fn write_off(path: &Path, vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write_off_to(&mut out, vertices, faces)?;
    out.flush()?;
    Ok(())
}

pub fn write_off_to<W: Write>(out: &mut W, vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<()> {
    writeln!(out, "OFF")?;
    writeln!(out, "{} {} 0", vertices.len(), faces.len())?;
    for v in vertices {
        writeln!(out, "{:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for f in faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}
