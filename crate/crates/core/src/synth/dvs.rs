use crate::error::{invalid, Result};
use crate::events::Event;

pub const DEFAULT_THRESHOLD: f64 = 0.2;
pub const DEFAULT_SUBFRAMES: usize = 8;

/// Luminance floor before taking logs.
const LOG_EPS: f64 = 1e-3;

fn log_luma(rgb: &[f32], plane: usize, i: usize) -> f64 {
    let y = 0.299 * rgb[i] as f64 + 0.587 * rgb[plane + i] as f64 + 0.114 * rgb[2 * plane + i] as f64;
    y.max(LOG_EPS).ln()
}

/// Threshold-crossing event simulator.
///
/// `frames` are linear RGB `[3, H, W]` renders taken at `times_us`. Each
/// pixel keeps a reference log-luminance; every time the signal, linearly
/// interpolated between consecutive renders, moves `threshold` away from
/// the reference an event is emitted and the reference steps by
/// `threshold`. Output is sorted by time, ties by row then column.
pub fn simulate_dvs(
    frames: &[Vec<f32>],
    times_us: &[u64],
    height: usize,
    width: usize,
    threshold: f64,
) -> Result<Vec<Event>> {
    if !(threshold > 0.0) {
        return invalid("contrast threshold must be positive");
    }
    if frames.len() != times_us.len() {
        return invalid("one timestamp per frame is required");
    }
    if times_us.windows(2).any(|w| w[1] < w[0]) {
        return invalid("frame timestamps must be non-decreasing");
    }
    let plane = height * width;
    if frames.iter().any(|f| f.len() != 3 * plane) {
        return invalid(format!("frames must hold 3x{height}x{width} values"));
    }
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let mut reference: Vec<f64> = (0..plane).map(|i| log_luma(first, plane, i)).collect();
    let mut prev = reference.clone();
    let mut events = Vec::new();
    for (k, frame) in frames.iter().enumerate().skip(1) {
        let (t0, t1) = (times_us[k - 1], times_us[k]);
        let start = events.len();
        for i in 0..plane {
            let cur = log_luma(frame, plane, i);
            let (from, to) = (prev[i], cur);
            let r = &mut reference[i];
            let (x, y) = ((i % width) as u16, (i / width) as u16);
            let at = |level: f64| {
                let frac = if to == from { 0.0 } else { ((level - from) / (to - from)).clamp(0.0, 1.0) };
                t0 + ((t1 - t0) as f64 * frac) as u64
            };
            while to - *r >= threshold {
                *r += threshold;
                events.push(Event::new(x, y, at(*r), 1));
            }
            while *r - to >= threshold {
                *r -= threshold;
                events.push(Event::new(x, y, at(*r), 0));
            }
            prev[i] = cur;
        }
        // Timestamps within one interval interleave across pixels.
        events[start..].sort_by_key(|e| (e.t, e.y, e.x));
    }
    Ok(events)
}
