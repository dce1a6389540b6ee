//! Network-ready frames built from labeled sequences.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::DataPlan;
use crate::autodiff::derive_seed;
use crate::error::{Error, Result};
use crate::events::{accumulate_events, normalize_event_frames};
use crate::synth::{generate_sequence, patchify, read_sequence, LabeledSequence, SceneSpec};
use crate::tensor::{Element, Tensor};

/// One full-resolution frame: RGB scaled to `[0, 1]`, normalized event
/// counts of the matching window and the instance mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    /// `[3, H, W]`.
    pub rgb: Vec<f32>,
    /// `[2, H, W]`.
    pub event: Vec<f32>,
    /// `[H, W]` class ids.
    pub mask: Vec<u8>,
    /// Scene conditions; `None` for data without metadata.
    pub spec: Option<SceneSpec>,
    /// Index of the source scene, used for splitting.
    pub scene: usize,
}

impl Frame {
    pub fn max_label(&self) -> u8 {
        self.mask.iter().copied().max().unwrap_or(0)
    }
}

/// Frames of every sequence, in sequence order.
pub fn frames_from_sequences(seqs: &[LabeledSequence], clip: u32) -> Result<Vec<Frame>> {
    let mut out = Vec::new();
    for (scene, seq) in seqs.iter().enumerate() {
        let (h, w) = (seq.height, seq.width);
        let t0 = seq.timestamps_us.first().copied().unwrap_or(0);
        if let Some(i) = seq
            .timestamps_us
            .iter()
            .enumerate()
            .position(|(i, &t)| t != t0 + i as u64 * seq.window_us)
        {
            return Err(Error::Dataset(format!(
                "scene {scene}: frame {i} is not on the {} us frame clock",
                seq.window_us
            )));
        }
        let windows = accumulate_events(&seq.events, seq.window_us, h, w, t0, seq.len())?;
        let events: Tensor<f32> = normalize_event_frames(&windows, clip)?;
        let plane = h * w;
        for i in 0..seq.len() {
            out.push(Frame {
                height: h,
                width: w,
                rgb: seq.frame_rgb(i).iter().map(|&v| v as f32 / 255.0).collect(),
                event: events.data()[i * 2 * plane..(i + 1) * 2 * plane].to_vec(),
                mask: seq.frame_mask(i).to_vec(),
                spec: Some(seq.spec.clone()),
                scene,
            });
        }
    }
    Ok(out)
}

/// Renders every scene of the plan.
pub fn generate_plan(plan: &DataPlan) -> Result<Vec<LabeledSequence>> {
    plan.validate()?;
    plan.scenes()
        .iter()
        .map(|spec| generate_sequence(spec, &plan.render, plan.frames_per_scene))
        .collect()
}

/// Loads a sequence directory, or a directory of sequence directories
/// (sorted by name).
pub fn load_sequences(path: &Path) -> Result<Vec<LabeledSequence>> {
    if path.join(crate::synth::SPEC_FILE).is_file() {
        return Ok(vec![read_sequence(path)?]);
    }
    let mut dirs: Vec<_> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(crate::synth::SPEC_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_sequence(d)).collect()
}

/// Scene indices of the train / validation / test parts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded 80/10/10 split over scenes. With three or more scenes the
    /// validation and test parts get at least one scene each.
    pub fn by_scene(n_scenes: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n_scenes).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5917)));
        let mut tenth = n_scenes / 10;
        if n_scenes >= 3 {
            tenth = tenth.max(1);
        }
        let mut test = order.split_off(n_scenes - tenth);
        let mut val = order.split_off(n_scenes - 2 * tenth);
        let mut train = order;
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }

    /// Everything for training, nothing held out.
    pub fn all_train(n_scenes: usize) -> Self {
        Self {
            train: (0..n_scenes).collect(),
            ..Self::default()
        }
    }

    pub fn select<'a>(frames: &'a [Frame], scenes: &[usize]) -> Vec<&'a Frame> {
        frames.iter().filter(|f| scenes.contains(&f.scene)).collect()
    }
}

/// A model-sized tile of a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub rgb: Vec<f32>,
    pub event: Vec<f32>,
    pub mask: Vec<u8>,
}

/// Cuts frames into `size x size` tiles with the same edge-snapped grid
/// used at inference. Frames smaller than a tile are zero-padded, with
/// padding labelled background.
pub fn tiles(frames: &[&Frame], size: usize) -> Result<Vec<Tile>> {
    let mut out = Vec::new();
    for f in frames {
        let rgb = patchify(&f.rgb, 3, f.height, f.width, size)?;
        let ev = patchify(&f.event, 2, f.height, f.width, size)?;
        let mask = patchify(&f.mask, 1, f.height, f.width, size)?;
        for ((r, e), m) in rgb.into_iter().zip(ev).zip(mask) {
            out.push(Tile {
                rgb: r.data,
                event: e.data,
                mask: m.data,
            });
        }
    }
    Ok(out)
}

/// Stacked batch tensors and flattened targets.
pub struct Batch<T> {
    pub rgb: Tensor<T>,
    pub event: Tensor<T>,
    pub targets: Vec<usize>,
}

pub fn make_batch<T: Element>(tiles: &[&Tile], size: usize) -> Result<Batch<T>> {
    let b = tiles.len();
    let conv = |v: &[f32]| v.iter().map(|&x| T::lit(x as f64)).collect::<Vec<T>>();
    let rgb: Vec<T> = tiles.iter().flat_map(|t| conv(&t.rgb)).collect();
    let event: Vec<T> = tiles.iter().flat_map(|t| conv(&t.event)).collect();
    Ok(Batch {
        rgb: Tensor::new(vec![b, 3, size, size], rgb)?,
        event: Tensor::new(vec![b, 2, size, size], event)?,
        targets: tiles.iter().flat_map(|t| t.mask.iter().map(|&m| m as usize)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::RenderConfig;

    #[test]
    fn split_proportions() {
        let s = Split::by_scene(20, 1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (16, 2, 2));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(Split::by_scene(20, 1), s);
        assert_ne!(Split::by_scene(20, 2), s);
        let small = Split::by_scene(3, 0);
        assert_eq!((small.train.len(), small.val.len(), small.test.len()), (1, 1, 1));
        assert_eq!(Split::by_scene(2, 0).train.len(), 2);
    }

    #[test]
    fn frames_and_tiles() {
        let spec = SceneSpec::default();
        let seq = generate_sequence(&spec, &RenderConfig::with_size(16, 24), 2).unwrap();
        let frames = frames_from_sequences(&[seq.clone()], 4).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].rgb.len(), 3 * 16 * 24);
        assert_eq!(frames[1].rgb[0], seq.frame_rgb(1)[0] as f32 / 255.0);
        let refs: Vec<&Frame> = frames.iter().collect();
        let t = tiles(&refs, 16).unwrap();
        assert_eq!(t.len(), 4);
        let batch: Batch<f64> = make_batch(&t.iter().collect::<Vec<_>>(), 16).unwrap();
        assert_eq!(batch.rgb.shape(), &[4, 3, 16, 16]);
        assert_eq!(batch.targets.len(), 4 * 256);
    }

    #[test]
    fn off_clock_timestamps_rejected() {
        let mut seq = generate_sequence(&SceneSpec::default(), &RenderConfig::with_size(16, 16), 2).unwrap();
        seq.timestamps_us[1] += 1;
        assert!(matches!(frames_from_sequences(&[seq], 4), Err(Error::Dataset(_))));
    }
}
