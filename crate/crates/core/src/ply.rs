//! Binary little-endian PLY export of depth frames.
//!
//! Vertices carry `float x, y, z` in millimeters; labeled exports add
//! `uchar label` (taxonomy id, 255 for unlabeled) and `uchar red, green, blue`.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::annotations::taxonomy::class_color;
use crate::error::{Error, Result};
use crate::geometry::DepthFrame;
use crate::image::Image;
use crate::io::write_atomic;

/// Label value written for points no annotation covers.
pub const UNLABELED: u8 = 255;

pub fn encode_ply(frame: &DepthFrame, labels: Option<&Image<u8>>) -> Result<Vec<u8>> {
    if let Some(l) = labels {
        frame.z.ensure_dims(l, "label map")?;
    }
    let count = frame.valid_count();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\ncomment units mm\n");
    header.push_str(&format!("element vertex {count}\n"));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if labels.is_some() {
        header.push_str("property uchar label\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");

    let stride = if labels.is_some() { 16 } else { 12 };
    let mut out = Vec::with_capacity(header.len() + count * stride);
    out.extend_from_slice(header.as_bytes());
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if !*frame.valid.get(x, y) {
                continue;
            }
            for c in frame.world_xyz.get(x, y) {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
            if let Some(l) = labels {
                let label = *l.get(x, y);
                out.push(label);
                out.extend_from_slice(&class_color(label));
            }
        }
    }
    Ok(out)
}

pub fn export_pointcloud(frame: &DepthFrame, labels: Option<&Image<u8>>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_ply(frame, labels)?)
}

/// A vertex read back from a PLY written by [`export_pointcloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlyVertex {
    pub xyz: [f32; 3],
    pub label: Option<u8>,
    pub color: Option<[u8; 3]>,
}

/// Reads the subset of PLY this module writes.
pub fn read_ply(path: &Path) -> Result<Vec<PlyVertex>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let src = path.display().to_string();
    let mut count = None;
    let mut props = Vec::new();
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        lineno += 1;
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::format(&src, Some(format!("line {lineno}")), "unexpected end of header"));
        }
        let t = line.trim_end();
        if lineno == 1 && t != "ply" {
            return Err(Error::format(&src, Some("line 1".into()), "missing ply magic"));
        }
        if t == "end_header" {
            break;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, _] if *fmt != "binary_little_endian" => {
                return Err(Error::format(&src, Some(format!("line {lineno}")), format!("unsupported format {fmt}")));
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| {
                    Error::format(&src, Some(format!("line {lineno}")), e.to_string())
                })?)
            }
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::format(&src, None, "no vertex element"))?;
    let labeled = props.iter().any(|(_, n)| n == "label");
    let stride = if labeled { 16 } else { 12 };
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != count * stride {
        return Err(Error::format(&src, None, format!("expected {} body bytes, found {}", count * stride, body.len())));
    }
    Ok(body
        .chunks_exact(stride)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]);
            PlyVertex {
                xyz: [f(0), f(4), f(8)],
                label: labeled.then(|| c[12]),
                color: labeled.then(|| [c[13], c[14], c[15]]),
            }
        })
        .collect())
}
