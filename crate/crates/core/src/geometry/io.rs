//! Cloud file formats: XYZ text, ASCII PLY and the native binary format.
//!
//! Native binary layout (little-endian): magic `PNPC`, `u32` version (1),
//! `u32` point count `M`, `u8` flags (bit 0: class label present, bit 1:
//! part labels present), `3·M` `f32` coordinates row-major, then the class
//! label as one `u16` and the part labels as `M` `u16`s, each when flagged.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NATIVE_MAGIC: &[u8; 4] = b"PNPC";
pub const NATIVE_VERSION: u32 = 1;
const FLAG_CLASS: u8 = 1;
const FLAG_PARTS: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
    Native,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ply") => CloudFormat::Ply,
            Some("xyz") | Some("txt") => CloudFormat::Xyz,
            _ => CloudFormat::Native,
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), location, message: message.into() }
}

/// Loads a cloud, sniffing the native and PLY magics before falling back
/// to the extension.
pub fn load_cloud<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let cloud = if bytes.starts_with(NATIVE_MAGIC) {
        decode_native(&bytes, path)?
    } else if bytes.starts_with(b"ply") {
        parse_ply(&String::from_utf8_lossy(&bytes), path)?
    } else {
        match CloudFormat::from_path(path) {
            CloudFormat::Native => {
                return Err(Error::Format(format!("{}: missing PNPC magic", path.display())));
            }
            CloudFormat::Ply => return Err(Error::Format(format!("{}: missing ply magic", path.display()))),
            CloudFormat::Xyz => parse_xyz(&String::from_utf8_lossy(&bytes), path)?,
        }
    };
    Ok(cloud.with_id(stem(path)))
}

/// Writes a cloud in the format implied by the extension (`.xyz`/`.txt`,
/// `.ply`, anything else native).
pub fn save_cloud<T: Scalar>(cloud: &PointCloud<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match CloudFormat::from_path(path) {
        CloudFormat::Native => encode_native(cloud)?,
        CloudFormat::Xyz => write_xyz(cloud).into_bytes(),
        CloudFormat::Ply => write_ply(cloud).into_bytes(),
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn encode_native<T: Scalar>(cloud: &PointCloud<T>) -> Result<Vec<u8>> {
    let m = u32::try_from(cloud.len()).map_err(|_| Error::Format("too many points".into()))?;
    let mut flags = 0u8;
    if cloud.class_label.is_some() {
        flags |= FLAG_CLASS;
    }
    if cloud.part_labels.is_some() {
        flags |= FLAG_PARTS;
    }
    let mut out = Vec::with_capacity(13 + cloud.len() * 14);
    out.extend_from_slice(NATIVE_MAGIC);
    out.extend_from_slice(&NATIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&m.to_le_bytes());
    out.push(flags);
    for v in cloud.points.iter().flatten() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    let label = |v: usize| u16::try_from(v).map_err(|_| Error::Format(format!("label {v} exceeds u16")));
    if let Some(c) = cloud.class_label {
        out.extend_from_slice(&label(c)?.to_le_bytes());
    }
    if let Some(parts) = &cloud.part_labels {
        for &p in parts {
            out.extend_from_slice(&label(p)?.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_native<T: Scalar>(bytes: &[u8], path: &Path) -> Result<PointCloud<T>> {
    if !bytes.starts_with(NATIVE_MAGIC) {
        return Err(Error::Format(format!("{}: missing PNPC magic", path.display())));
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| parse_err(path, format!("byte {pos}"), "unexpected end of file"))?;
        pos += n;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != NATIVE_VERSION {
        return Err(Error::Version { found: version, expected: NATIVE_VERSION });
    }
    let m = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let flags = take(1)?[0];
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        let mut p = [T::zero(); 3];
        for v in &mut p {
            *v = T::of(f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64);
        }
        points.push(p);
    }
    let mut read_u16 = || -> Result<usize> { Ok(u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize) };
    let class_label = if flags & FLAG_CLASS != 0 { Some(read_u16()?) } else { None };
    let part_labels = if flags & FLAG_PARTS != 0 {
        Some((0..m).map(|_| read_u16()).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    if pos != bytes.len() {
        return Err(parse_err(path, format!("byte {pos}"), "trailing bytes after payload"));
    }
    let cloud = PointCloud { points, class_label, part_labels, id: String::new() };
    cloud.validate()?;
    Ok(cloud)
}

fn parse_real<T: Scalar>(tok: &str, path: &Path, line: usize) -> Result<T> {
    tok.parse::<f64>()
        .map(T::of)
        .map_err(|_| parse_err(path, format!("line {line}"), format!("invalid number '{tok}'")))
}

pub fn parse_xyz<T: Scalar>(text: &str, path: &Path) -> Result<PointCloud<T>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, format!("line {}", i + 1), format!("expected 3 values, got {}", toks.len())));
        }
        let mut p = [T::zero(); 3];
        for (v, t) in p.iter_mut().zip(&toks) {
            *v = parse_real(t, path, i + 1)?;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(parse_err(path, "line 1".into(), "no points"));
    }
    PointCloud::new(points)
}

pub fn write_xyz<T: Scalar>(cloud: &PointCloud<T>) -> String {
    let mut s = String::new();
    for p in &cloud.points {
        s.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    s
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
}

/// ASCII PLY reader: takes `x`, `y`, `z` (and an optional integer `part`)
/// from the `vertex` element; other elements are skipped line by line.
pub fn parse_ply<T: Scalar>(text: &str, path: &Path) -> Result<PointCloud<T>> {
    let mut lines = text.lines().enumerate();
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::Format(format!("{}: missing ply magic", path.display()))),
    }
    loop {
        let Some((i, raw)) = lines.next() else {
            return Err(parse_err(path, "header".into(), "missing end_header"));
        };
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(Error::Format(format!("{}: unsupported PLY format '{other}'", path.display())))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, format!("line {}", i + 1), "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", .., name] | ["property", _, name] => match elements.last_mut() {
                Some(e) => e.props.push(name.to_string()),
                None => return Err(parse_err(path, format!("line {}", i + 1), "property before element")),
            },
            _ => return Err(parse_err(path, format!("line {}", i + 1), format!("unexpected header line '{raw}'"))),
        }
    }
    if !saw_format {
        return Err(parse_err(path, "header".into(), "missing format line"));
    }
    let mut points = Vec::new();
    let mut parts = Vec::new();
    let mut has_parts = false;
    for el in &elements {
        let find = |n: &str| el.props.iter().position(|p| p == n);
        let axes = if el.name == "vertex" {
            match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return Err(parse_err(path, "header".into(), "vertex element lacks x/y/z")),
            }
        } else {
            None
        };
        let part_idx = if el.name == "vertex" { find("part") } else { None };
        has_parts |= part_idx.is_some();
        for _ in 0..el.count {
            let Some((i, raw)) = lines.next() else {
                return Err(parse_err(path, "body".into(), format!("element '{}' truncated", el.name)));
            };
            let Some(axes) = axes else { continue };
            let toks: Vec<&str> = raw.split_whitespace().collect();
            if toks.len() < el.props.len() {
                return Err(parse_err(path, format!("line {}", i + 1), "too few vertex values"));
            }
            let mut p = [T::zero(); 3];
            for (v, &a) in p.iter_mut().zip(&axes) {
                *v = parse_real(toks[a], path, i + 1)?;
            }
            points.push(p);
            if let Some(pi) = part_idx {
                parts.push(
                    toks[pi]
                        .parse::<usize>()
                        .map_err(|_| parse_err(path, format!("line {}", i + 1), "bad part label"))?,
                );
            }
        }
    }
    let cloud = PointCloud::new(points)?;
    if has_parts {
        cloud.with_parts(parts)
    } else {
        Ok(cloud)
    }
}

pub fn write_ply<T: Scalar>(cloud: &PointCloud<T>) -> String {
    let mut s = String::from("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", cloud.len()));
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.part_labels.is_some() {
        s.push_str("property int part\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        s.push_str(&format!("{} {} {}", p[0], p[1], p[2]));
        if let Some(parts) = &cloud.part_labels {
            s.push_str(&format!(" {}", parts[i]));
        }
        s.push('\n');
    }
    s
}
