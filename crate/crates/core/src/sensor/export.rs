use std::path::{Path, PathBuf};

use super::{Frame, Modality, SensorError};

pub fn ppm_bytes(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn pgm_bytes(width: u32, height: u32, gray: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

pub fn dpt_bytes(width: u32, height: u32, depth: &[f32]) -> Vec<u8> {
    let mut out = format!("DPT {width} {height}\n").into_bytes();
    out.reserve(depth.len() * 4);
    for d in depth {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

/// Parse a DPT buffer back into (width, height, depths).
pub fn read_dpt(bytes: &[u8]) -> Result<(u32, u32, Vec<f32>), String> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing DPT header")?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| e.to_string())?;
    let mut parts = header.split(' ');
    if parts.next() != Some("DPT") {
        return Err("not a DPT file".into());
    }
    let mut dim = || -> Result<u32, String> {
        parts
            .next()
            .ok_or("short header")?
            .parse()
            .map_err(|e: std::num::ParseIntError| e.to_string())
    };
    let (w, h) = (dim()?, dim()?);
    let body = &bytes[nl + 1..];
    if body.len() != (w as usize) * (h as usize) * 4 {
        return Err(format!("expected {} payload bytes, found {}", w * h * 4, body.len()));
    }
    let depth = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((w, h, depth))
}

pub fn frame_file_name(camera_id: &str, tick: u64, modality: Modality) -> String {
    format!(
        "{camera_id}_{tick}_{}.{}",
        modality.file_stem(),
        modality.extension()
    )
}

/// Write every modality present in `frame` into `dir`. Returns the paths written.
pub fn export_frame(frame: &Frame, dir: &Path) -> Result<Vec<PathBuf>, SensorError> {
    std::fs::create_dir_all(dir).map_err(|e| SensorError::Io(e.to_string()))?;
    let mut written = Vec::new();
    let (w, h) = (frame.width, frame.height);
    let mut put = |m: Modality, bytes: Vec<u8>| -> Result<(), SensorError> {
        let path = dir.join(frame_file_name(&frame.camera_id, frame.tick, m));
        std::fs::write(&path, bytes).map_err(|e| SensorError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };
    if let Some(rgb) = &frame.rgb {
        put(Modality::Rgb, ppm_bytes(w, h, rgb))?;
    }
    if let Some(sem) = &frame.semantic {
        put(Modality::Semantic, pgm_bytes(w, h, sem))?;
    }
    if let Some(depth) = &frame.depth {
        put(Modality::Depth, dpt_bytes(w, h, depth))?;
    }
    Ok(written)
}
