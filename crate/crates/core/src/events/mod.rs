//! Event streams and their accumulation into per-polarity count frames.
//!
//! An event contributes to frame `floor((t - t_start) / T)`, so windows are
//! half-open: an event stamped exactly at `t_start + k*T` belongs to frame `k`.

mod io;

pub use io::{
    read_events, read_events_binary, read_events_csv, write_events_binary, write_events_csv,
    EVENT_MAGIC, EVENT_RECORD_BYTES,
};
pub(crate) use io::write_events_file;

use crate::error::{invalid, Error, Result};
use crate::tensor::{Element, Tensor};

/// Window length that matches a 40 Hz frame clock.
pub const DEFAULT_WINDOW_US: u64 = 25_000;

/// Default saturation count for [`normalize_event_frames`].
pub const DEFAULT_CLIP: u32 = 4;

/// One brightness change reported by the sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    /// 1 for a brightness increase, 0 for a decrease.
    pub p: u8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: u8) -> Self {
        Self { x, y, t, p }
    }
}

/// Event counts of one time window, laid out `[polarity, row, column]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventFrame {
    pub index: usize,
    pub window_us: u64,
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl EventFrame {
    pub fn empty(index: usize, window_us: u64, height: usize, width: usize) -> Self {
        Self {
            index,
            window_us,
            height,
            width,
            counts: vec![0; 2 * height * width],
        }
    }

    pub fn count(&self, p: usize, y: usize, x: usize) -> u32 {
        self.counts[(p * self.height + y) * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Returns the index of the first event whose timestamp precedes its
/// predecessor's.
pub fn first_inversion(stream: &[Event]) -> Option<usize> {
    stream.windows(2).position(|w| w[1].t < w[0].t).map(|i| i + 1)
}

pub fn check_stream(stream: &[Event], height: usize, width: usize) -> Result<()> {
    if let Some(i) = first_inversion(stream) {
        return Err(Error::UnsortedEvents {
            index: i,
            t: stream[i].t,
            prev: stream[i - 1].t,
        });
    }
    if let Some((index, e)) = stream
        .iter()
        .enumerate()
        .find(|(_, e)| e.x as usize >= width || e.y as usize >= height || e.p > 1)
    {
        return Err(Error::EventOutOfBounds {
            index,
            x: e.x as u32,
            y: e.y as u32,
            p: e.p,
            width,
            height,
        });
    }
    Ok(())
}

/// Accumulates a time-ordered stream into `n_frames` windows of `window_us`
/// starting at `t_start`. Events outside `[t_start, t_start + n_frames*T)`
/// are ignored.
pub fn accumulate_events(
    stream: &[Event],
    window_us: u64,
    height: usize,
    width: usize,
    t_start: u64,
    n_frames: usize,
) -> Result<Vec<EventFrame>> {
    if window_us == 0 {
        return invalid("event window must be positive");
    }
    check_stream(stream, height, width)?;
    let mut frames: Vec<EventFrame> = (0..n_frames)
        .map(|i| EventFrame::empty(i, window_us, height, width))
        .collect();
    // The stream is sorted, so skip straight to the first in-range event.
    let start = stream.partition_point(|e| e.t < t_start);
    for e in &stream[start..] {
        let idx = ((e.t - t_start) / window_us) as usize;
        if idx >= n_frames {
            break;
        }
        let f = &mut frames[idx];
        f.counts[(e.p as usize * height + e.y as usize) * width + e.x as usize] += 1;
    }
    Ok(frames)
}

/// Maps counts to `min(c, clip) / clip`, stacked as `[n, 2, H, W]`.
pub fn normalize_event_frames<T: Element>(frames: &[EventFrame], clip: u32) -> Result<Tensor<T>> {
    if clip == 0 {
        return invalid("normalization clip must be at least 1");
    }
    let Some(first) = frames.first() else {
        return Tensor::new(vec![0, 2, 0, 0], Vec::new());
    };
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(frames.len() * 2 * h * w);
    for f in frames {
        if (f.height, f.width) != (h, w) {
            return invalid("event frames of different sizes");
        }
        let inv = 1.0 / clip as f64;
        data.extend(f.counts.iter().map(|&c| T::lit(c.min(clip) as f64 * inv)));
    }
    Tensor::new(vec![frames.len(), 2, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_gives_blank_frames() {
        let frames = accumulate_events(&[], DEFAULT_WINDOW_US, 4, 6, 0, 3).unwrap();
        assert_eq!(frames.len(), 3);
        assert!(frames.iter().all(|f| f.total() == 0));
        assert_eq!(frames[2].index, 2);
    }

    #[test]
    fn single_event_lands_in_first_window() {
        let ev = [Event::new(5, 7, 10_000, 1)];
        let frames = accumulate_events(&ev, 25_000, 10, 10, 0, 2).unwrap();
        assert_eq!(frames[0].count(1, 7, 5), 1);
        assert_eq!(frames[0].total(), 1);
        assert_eq!(frames[1].total(), 0);
    }

    #[test]
    fn boundary_event_goes_to_next_window() {
        let ev = [Event::new(0, 0, 24_999, 0), Event::new(0, 0, 25_000, 0)];
        let frames = accumulate_events(&ev, 25_000, 1, 1, 0, 2).unwrap();
        assert_eq!(frames[0].total(), 1);
        assert_eq!(frames[1].total(), 1);
    }

    #[test]
    fn t_start_offsets_windows() {
        let ev = [Event::new(0, 0, 5, 0), Event::new(0, 0, 100, 1), Event::new(0, 0, 130, 1)];
        let frames = accumulate_events(&ev, 30, 1, 1, 100, 1).unwrap();
        assert_eq!(frames[0].count(1, 0, 0), 1);
    }

    #[test]
    fn unsorted_stream_reports_first_inversion() {
        let ev = [Event::new(0, 0, 10, 0), Event::new(0, 0, 20, 0), Event::new(0, 0, 15, 0)];
        match accumulate_events(&ev, 25_000, 1, 1, 0, 1) {
            Err(Error::UnsortedEvents { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let ev = [Event::new(4, 0, 0, 0)];
        assert!(matches!(
            accumulate_events(&ev, 10, 4, 4, 0, 1),
            Err(Error::EventOutOfBounds { index: 0, .. })
        ));
        let ev = [Event::new(0, 0, 0, 2)];
        assert!(accumulate_events(&ev, 10, 4, 4, 0, 1).is_err());
        assert!(accumulate_events(&[], 0, 4, 4, 0, 1).is_err());
    }

    #[test]
    fn normalization_clips() {
        let mut f = EventFrame::empty(0, 1, 1, 3);
        f.counts = vec![0, 2, 9, 1, 4, 5];
        let t = normalize_event_frames::<f64>(&[f], 4).unwrap();
        assert_eq!(t.shape(), &[1, 2, 1, 3]);
        assert_eq!(t.data(), &[0.0, 0.5, 1.0, 0.25, 1.0, 1.0]);
        assert!(normalize_event_frames::<f64>(&[], 0).is_err());
    }
}
