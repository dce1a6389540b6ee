use std::io::Cursor;

use bimodal_segnet::events::{
    accumulate_events, normalize_event_frames, read_events_binary, read_events_csv, write_events_binary,
    write_events_csv, Event,
};
use bimodal_segnet::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stream(rng: &mut ChaCha8Rng, h: usize, w: usize, span: u64) -> Vec<Event> {
    let n = rng.random_range(0..300);
    let mut ts: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
    ts.sort_unstable();
    ts.into_iter()
        .map(|t| {
            Event::new(
                rng.random_range(0..w) as u16,
                rng.random_range(0..h) as u16,
                t,
                rng.random_range(0..2),
            )
        })
        .collect()
}

#[test]
fn counts_are_conserved_on_a_thousand_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE0E1);
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(1..8), rng.random_range(1..8));
        let window = rng.random_range(1..50);
        let n_frames = rng.random_range(1..6);
        let t_start = rng.random_range(0..40);
        let stream = random_stream(&mut rng, h, w, t_start + window * (n_frames as u64 + 2));
        let frames = accumulate_events(&stream, window, h, w, t_start, n_frames).unwrap();
        let end = t_start + window * n_frames as u64;
        let in_range = stream.iter().filter(|e| e.t >= t_start && e.t < end).count() as u64;
        assert_eq!(frames.iter().map(|f| f.total()).sum::<u64>(), in_range);
        // Per-window: each event lands in floor((t - t0) / T).
        for (i, f) in frames.iter().enumerate() {
            let lo = t_start + i as u64 * window;
            let expect = stream.iter().filter(|e| e.t >= lo && e.t < lo + window).count() as u64;
            assert_eq!(f.total(), expect);
        }
    }
}

#[test]
fn window_edges_are_half_open() {
    let ev = [
        Event::new(0, 0, 99, 1),
        Event::new(0, 0, 100, 1),
        Event::new(0, 0, 199, 0),
        Event::new(0, 0, 200, 0),
    ];
    let frames = accumulate_events(&ev, 100, 1, 1, 100, 2).unwrap();
    // 99 precedes the first window; 200 opens the second.
    assert_eq!(frames[0].count(1, 0, 0), 1);
    assert_eq!(frames[0].count(0, 0, 0), 1);
    assert_eq!(frames[1].count(0, 0, 0), 1);
    assert_eq!(frames[0].total() + frames[1].total(), 3);
}

#[test]
fn polarity_channels_are_separate() {
    let ev = [Event::new(1, 2, 0, 0), Event::new(1, 2, 1, 1), Event::new(1, 2, 2, 1)];
    let f = &accumulate_events(&ev, 10, 3, 3, 0, 1).unwrap()[0];
    assert_eq!(f.count(0, 2, 1), 1);
    assert_eq!(f.count(1, 2, 1), 2);
    let t = normalize_event_frames::<f64>(std::slice::from_ref(f), 4).unwrap();
    assert_eq!(t.shape(), &[1, 2, 3, 3]);
    assert_eq!(t.data()[2 * 3 + 1], 0.25);
    assert_eq!(t.data()[9 + 2 * 3 + 1], 0.5);
}

#[test]
fn clip_saturates() {
    let ev: Vec<Event> = (0..9).map(|t| Event::new(0, 0, t, 1)).collect();
    let f = accumulate_events(&ev, 100, 1, 1, 0, 1).unwrap();
    let t = normalize_event_frames::<f32>(&f, 4).unwrap();
    assert_eq!(t.data(), &[0.0, 1.0]);
    assert!(normalize_event_frames::<f32>(&f, 0).is_err());
}

#[test]
fn malformed_streams_are_rejected() {
    let unsorted = [Event::new(0, 0, 5, 0), Event::new(0, 0, 4, 0)];
    assert!(matches!(
        accumulate_events(&unsorted, 10, 1, 1, 0, 1),
        Err(Error::UnsortedEvents { index: 1, .. })
    ));
    let outside = [Event::new(0, 3, 0, 0)];
    assert!(matches!(
        accumulate_events(&outside, 10, 3, 3, 0, 1),
        Err(Error::EventOutOfBounds { .. })
    ));
    assert!(accumulate_events(&[], 0, 1, 1, 0, 1).is_err());
}

#[test]
fn binary_format_rejects_corruption() {
    let ev = [Event::new(3, 4, 17, 1), Event::new(0, 1, 20, 0)];
    let mut buf = Vec::new();
    write_events_binary(&mut buf, &ev).unwrap();
    assert_eq!(read_events_binary(Cursor::new(&buf)).unwrap(), ev);
    assert!(read_events_binary(Cursor::new(&buf[..buf.len() - 3])).is_err());
    let mut bad = buf.clone();
    bad[0] = b'Z';
    assert!(read_events_binary(Cursor::new(&bad)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn formats_roundtrip(raw in prop::collection::vec((0u16..400, 0u16..300, 0u64..1_000_000, 0u8..2), 0..80)) {
        let mut ev: Vec<Event> = raw.into_iter().map(|(x, y, t, p)| Event::new(x, y, t, p)).collect();
        ev.sort_by_key(|e| e.t);
        let mut bin = Vec::new();
        write_events_binary(&mut bin, &ev).unwrap();
        prop_assert_eq!(&read_events_binary(Cursor::new(&bin)).unwrap(), &ev);
        let mut csv = Vec::new();
        write_events_csv(&mut csv, &ev).unwrap();
        prop_assert_eq!(&read_events_csv(Cursor::new(&csv)).unwrap(), &ev);
    }
}
