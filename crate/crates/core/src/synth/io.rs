//! Sequence directories: `rgb_####.ppm`, `mask_####.pgm`, `events.evs`,
//! `scene.txt` and `timestamps.txt`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{LabeledSequence, RenderConfig, SceneSpec};
use crate::error::{Error, Result};
use crate::events::{check_stream, read_events, write_events_file};

pub const SPEC_FILE: &str = "scene.txt";
pub const EVENTS_FILE: &str = "events.evs";
pub const TIMESTAMPS_FILE: &str = "timestamps.txt";

fn format_err<T>(path: &Path, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Format(format!("{}: {msg}", path.display())))
}

/// Writes scene and render parameters as `key = value` lines.
pub fn write_spec(path: &Path, spec: &SceneSpec, cfg: &RenderConfig) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "num_objects = {}", spec.num_objects)?;
    writeln!(out, "light = {}", spec.light)?;
    writeln!(out, "trajectory = {}", spec.trajectory)?;
    writeln!(out, "speed = {}", spec.speed)?;
    writeln!(out, "distance = {}", spec.distance)?;
    writeln!(out, "seed = {}", spec.seed)?;
    writeln!(out, "height = {}", cfg.height)?;
    writeln!(out, "width = {}", cfg.width)?;
    writeln!(out, "window_us = {}", cfg.window_us)?;
    writeln!(out, "subframes = {}", cfg.subframes)?;
    writeln!(out, "threshold = {}", cfg.threshold)?;
    out.flush()?;
    Ok(())
}

pub fn read_spec(path: &Path) -> Result<(SceneSpec, RenderConfig)> {
    let text = fs::read_to_string(path)?;
    let mut spec = SceneSpec::default();
    let mut cfg = RenderConfig::default();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return format_err(path, format!("expected key = value, got '{line}'"));
        };
        let (k, v) = (k.trim(), v.trim());
        let applied = if spec.set(k, v).is_ok() {
            Ok(())
        } else {
            cfg.set(k, v)
        };
        if let Err(e) = applied {
            return format_err(path, e);
        }
    }
    if let Err(e) = spec.validate().and_then(|_| cfg.validate()) {
        return format_err(path, e);
    }
    Ok((spec, cfg))
}

fn write_ppm(path: &Path, planar: &[u8], height: usize, width: usize) -> Result<()> {
    let plane = height * width;
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P6\n{width} {height}\n255\n")?;
    let mut row = Vec::with_capacity(3 * width);
    for y in 0..height {
        row.clear();
        for x in 0..width {
            let i = y * width + x;
            row.extend([planar[i], planar[plane + i], planar[2 * plane + i]]);
        }
        out.write_all(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn write_pgm(path: &Path, data: &[u8], height: usize, width: usize) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(data)?;
    out.flush()?;
    Ok(())
}

/// Parses a binary netpbm file, returning `(width, height, raw samples)`.
fn read_netpbm(path: &Path, magic: &str) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("image header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    if fields[0] != magic {
        return Err(Error::BadMagic {
            expected: magic.to_string(),
            found: fields[0].clone(),
        });
    }
    let dims: Vec<usize> = fields[1..]
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .or_else(|_| format_err(path, "bad image header"))?;
    if dims[2] != 255 {
        return format_err(path, format!("only 8-bit images are supported, maxval {}", dims[2]));
    }
    Ok((dims[0], dims[1], bytes.get(pos..).unwrap_or_default().to_vec()))
}

/// Writes a sequence directory, creating it if needed.
pub fn write_sequence(dir: &Path, seq: &LabeledSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = RenderConfig {
        height: seq.height,
        width: seq.width,
        window_us: seq.window_us,
        ..RenderConfig::default()
    };
    write_spec(&dir.join(SPEC_FILE), &seq.spec, &cfg)?;
    for i in 0..seq.len() {
        write_ppm(&dir.join(format!("rgb_{i:04}.ppm")), seq.frame_rgb(i), seq.height, seq.width)?;
        write_pgm(&dir.join(format!("mask_{i:04}.pgm")), seq.frame_mask(i), seq.height, seq.width)?;
    }
    write_events_file(&dir.join(EVENTS_FILE), &seq.events)?;
    let stamps: String = seq.timestamps_us.iter().map(|t| format!("{t}\n")).collect();
    fs::write(dir.join(TIMESTAMPS_FILE), stamps)?;
    Ok(())
}

/// Loads and validates a sequence directory.
pub fn read_sequence(dir: &Path) -> Result<LabeledSequence> {
    let (spec, cfg) = read_spec(&dir.join(SPEC_FILE))?;
    let (h, w) = (cfg.height, cfg.width);
    let stamps_path = dir.join(TIMESTAMPS_FILE);
    let mut timestamps_us = Vec::new();
    for line in fs::read_to_string(&stamps_path)?.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match line.parse::<u64>() {
            Ok(t) => timestamps_us.push(t),
            Err(_) => return format_err(&stamps_path, format!("bad timestamp '{line}'")),
        }
    }
    let mut rgb = Vec::with_capacity(timestamps_us.len() * 3 * h * w);
    let mut masks = Vec::with_capacity(timestamps_us.len() * h * w);
    for i in 0..timestamps_us.len() {
        let path = dir.join(format!("rgb_{i:04}.ppm"));
        let (fw, fh, data) = read_netpbm(&path, "P6")?;
        if (fw, fh) != (w, h) || data.len() < 3 * h * w {
            return format_err(&path, format!("expected a {w}x{h} RGB image"));
        }
        for c in 0..3 {
            rgb.extend((0..h * w).map(|p| data[3 * p + c]));
        }
        let path = dir.join(format!("mask_{i:04}.pgm"));
        let (fw, fh, data) = read_netpbm(&path, "P5")?;
        if (fw, fh) != (w, h) || data.len() < h * w {
            return format_err(&path, format!("expected a {w}x{h} mask"));
        }
        if let Some(&id) = data[..h * w].iter().find(|&&id| id as usize > spec.num_objects) {
            return format_err(&path, format!("mask id {id} exceeds {} objects", spec.num_objects));
        }
        masks.extend_from_slice(&data[..h * w]);
    }
    let events = read_events(&dir.join(EVENTS_FILE))?;
    check_stream(&events, h, w)?;
    Ok(LabeledSequence {
        spec,
        height: h,
        width: w,
        rgb,
        masks,
        events,
        timestamps_us,
        window_us: cfg.window_us,
    })
}
