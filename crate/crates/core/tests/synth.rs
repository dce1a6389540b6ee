use bimodal_segnet::events::{accumulate_events, check_stream};
use bimodal_segnet::synth::{
    boundary_band, generate_sequence, patch_origins, patchify, unpatchify, render_scene, Light,
    RenderConfig, Scene, SceneSpec, Speed,
};
use proptest::prelude::*;

const SIZE: usize = 64;
const FRAMES: usize = 4;

fn cfg() -> RenderConfig {
    RenderConfig::with_size(SIZE, SIZE)
}

/// Events near a boundary of any mask touching their frame window, and
/// event densities inside vs outside that band.
fn boundary_stats(spec: &SceneSpec) -> (usize, usize, f64, f64) {
    let seq = generate_sequence(spec, &cfg(), FRAMES).unwrap();
    let frames = accumulate_events(&seq.events, seq.window_us, SIZE, SIZE, 0, FRAMES).unwrap();
    let (mut near, mut total) = (0usize, 0usize);
    let (mut in_events, mut in_pixels, mut out_events, mut out_pixels) = (0u64, 0u64, 0u64, 0u64);
    for (i, frame) in frames.iter().enumerate() {
        let band = boundary_band(seq.frame_mask(i), SIZE, SIZE, 2);
        for (p, &b) in band.iter().enumerate() {
            let n = (frame.counts[p] + frame.counts[SIZE * SIZE + p]) as u64;
            total += n as usize;
            if b {
                near += n as usize;
                in_events += n;
                in_pixels += 1;
            } else {
                out_events += n;
                out_pixels += 1;
            }
        }
    }
    let density_in = in_events as f64 / in_pixels.max(1) as f64;
    let density_out = out_events as f64 / out_pixels.max(1) as f64;
    (near, total, density_in, density_out)
}

#[test]
fn events_concentrate_on_boundaries() {
    let (mut near, mut total) = (0, 0);
    let (mut din, mut dout) = (0.0, 0.0);
    for seed in 0..10 {
        let spec = SceneSpec {
            seed,
            ..SceneSpec::default()
        };
        let (n, t, a, b) = boundary_stats(&spec);
        near += n;
        total += t;
        din += a;
        dout += b;
    }
    let frac = near as f64 / total as f64;
    println!("boundary fraction {frac:.3}, density in {din:.3} out {dout:.3}");
    assert!(total > 0);
    assert!(frac >= 0.7, "only {frac:.3} of events near boundaries");
    assert!(din >= 3.0 * dout, "density ratio {:.2}", din / dout.max(1e-12));
}

#[test]
fn occlusion_grows_with_object_count() {
    let mean = |n: usize| {
        (0..10)
            .map(|seed| {
                let spec = SceneSpec {
                    num_objects: n,
                    seed,
                    ..SceneSpec::default()
                };
                Scene::new(&spec, &cfg()).unwrap().occlusion_fraction(0.5)
            })
            .sum::<f64>()
            / 10.0
    };
    let (two, ten) = (mean(2), mean(10));
    println!("occluded fraction: 2 objects {two:.3}, 10 objects {ten:.3}");
    assert!(ten > two);
}

#[test]
fn mask_ids_are_contiguous() {
    for n in SceneSpec::OBJECT_COUNTS {
        let spec = SceneSpec {
            num_objects: n,
            seed: 21,
            ..SceneSpec::default()
        };
        let seq = render_scene(&spec, &cfg(), 2).unwrap();
        let mut ids = seq.frame_mask(0).to_vec();
        ids.sort_unstable();
        ids.dedup();
        let expected: Vec<u8> = (0..=n as u8).collect();
        assert_eq!(ids, expected, "{n} objects");
    }
}

#[test]
fn events_unaffected_by_light() {
    let normal = SceneSpec {
        num_objects: 4,
        seed: 5,
        ..SceneSpec::default()
    };
    let low = SceneSpec {
        light: Light::Low,
        ..normal.clone()
    };
    let a = generate_sequence(&normal, &cfg(), 3).unwrap();
    let b = generate_sequence(&low, &cfg(), 3).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.masks, b.masks);
    assert_ne!(a.rgb, b.rgb);
    check_stream(&a.events, SIZE, SIZE).unwrap();

    let luma = |rgb: &[u8]| rgb.iter().map(|&v| v as f64).sum::<f64>() / rgb.len() as f64;
    let ratio = luma(&b.rgb) / luma(&a.rgb);
    assert!((ratio - 0.25).abs() < 0.02, "luminance ratio {ratio}");
}

#[test]
fn static_scene_is_silent() {
    let spec = SceneSpec {
        speed: Speed::Custom(0.0),
        num_objects: 6,
        ..SceneSpec::default()
    };
    let seq = generate_sequence(&spec, &cfg(), 3).unwrap();
    assert!(seq.events.is_empty());
    assert_eq!(seq.frame_rgb(0), seq.frame_rgb(2));
}

#[test]
fn fast_motion_blurs_edges() {
    let energy = |speed: Speed| {
        let mut total = 0.0;
        for seed in 0..4 {
            let spec = SceneSpec {
                speed,
                num_objects: 4,
                seed,
                ..SceneSpec::default()
            };
            let seq = generate_sequence(&spec, &cfg(), 2).unwrap();
            let img = seq.frame_rgb(1);
            for c in 0..3 {
                for y in 0..SIZE - 1 {
                    for x in 0..SIZE - 1 {
                        let i = c * SIZE * SIZE + y * SIZE + x;
                        let gx = img[i + 1] as f64 - img[i] as f64;
                        let gy = img[i + SIZE] as f64 - img[i] as f64;
                        total += gx * gx + gy * gy;
                    }
                }
            }
        }
        total
    };
    let (slow, fast) = (energy(Speed::Slow), energy(Speed::Fast));
    assert!(fast < slow, "fast {fast} slow {slow}");
}

#[test]
fn generation_is_deterministic() {
    let spec = SceneSpec {
        num_objects: 8,
        light: Light::Low,
        seed: 77,
        ..SceneSpec::default()
    };
    let a = generate_sequence(&spec, &cfg(), 2).unwrap();
    let b = generate_sequence(&spec, &cfg(), 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn timestamps_follow_frame_clock() {
    let seq = generate_sequence(&SceneSpec::default(), &cfg(), 4).unwrap();
    assert_eq!(seq.timestamps_us, vec![0, 25_000, 50_000, 75_000]);
    assert!(seq.events.iter().all(|e| e.t <= 100_000));
}

#[test]
fn davis_sized_roundtrip() {
    let (h, w) = (260, 346);
    let image: Vec<f32> = (0..3 * h * w).map(|i| ((i * 2654435761) % 1000) as f32 / 7.0).collect();
    let patches = patchify(&image, 3, h, w, 256).unwrap();
    let origins: Vec<_> = patches.iter().map(|p| p.origin).collect();
    assert_eq!(origins, patch_origins(h, w, 256));
    assert_eq!(unpatchify(&patches, h, w).unwrap(), image);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn patch_roundtrip(h in 1usize..40, w in 1usize..40, size in 1usize..17, c in 1usize..3) {
        let image: Vec<u32> = (0..c * h * w).map(|i| i as u32).collect();
        let patches = patchify(&image, c, h, w, size).unwrap();
        let mut covered = vec![false; h * w];
        for p in &patches {
            for y in p.origin.0..(p.origin.0 + size).min(h) {
                for x in p.origin.1..(p.origin.1 + size).min(w) {
                    covered[y * w + x] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&v| v));
        prop_assert_eq!(unpatchify(&patches, h, w).unwrap(), image);
    }
}
