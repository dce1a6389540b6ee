use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabeledSequence, RenderConfig, SceneSpec, Trajectory};
use crate::autodiff::derive_seed;
use crate::error::{invalid, Error, Result};

pub const MAX_OBJECTS: usize = 10;

/// Per-id colours, all well separated in luminance from the background.
const PALETTE: [[f64; 3]; MAX_OBJECTS] = [
    [0.70, 0.05, 0.05],
    [0.95, 0.90, 0.20],
    [0.10, 0.20, 0.80],
    [0.40, 0.95, 0.40],
    [0.40, 0.05, 0.50],
    [0.30, 0.90, 0.95],
    [1.00, 0.60, 0.10],
    [0.05, 0.35, 0.10],
    [0.98, 0.75, 0.85],
    [0.35, 0.20, 0.05],
];

/// Per-id aspect ratio (width over height).
const ASPECT: [f64; MAX_OBJECTS] = [1.0, 1.5, 0.8, 1.7, 1.2, 0.7, 1.3, 1.0, 1.6, 0.9];

const BACKGROUND: f64 = 0.45;
const BACKGROUND_TEXTURE: f64 = 0.04;
const OBJECT_TEXTURE: f64 = 0.07;
const BASE_RADIUS: f64 = 0.11;
/// Smallest object radius in pixels, so tiny renders keep visible objects.
const MIN_RADIUS: f64 = 2.0;
const MIN_SEPARATION: f64 = 0.6;
const PLACEMENT_MARGIN: f64 = 0.15;
const PLACEMENT_TRIES: usize = 200;
const PLACEMENT_RESTARTS: usize = 50;
const SUPERSAMPLE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Outline {
    Ellipse,
    Rectangle,
    Triangle,
}

/// Sum of three plane waves in [-1, 1].
#[derive(Clone, Debug)]
struct Texture {
    waves: [(f64, f64, f64); 3],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, wavelength: f64) -> Self {
        let mut wave = || {
            let dir = rng.random_range(0.0..2.0 * PI);
            let k = 2.0 * PI / (wavelength * rng.random_range(0.6..1.4));
            (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..2.0 * PI))
        };
        Self {
            waves: [wave(), wave(), wave()],
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.waves.iter().map(|&(kx, ky, ph)| (kx * x + ky * y + ph).sin()).sum::<f64>() / 3.0
    }
}

#[derive(Clone, Debug)]
struct Object {
    id: u8,
    outline: Outline,
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    cos: f64,
    sin: f64,
    texture: Texture,
}

impl Object {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        let (a, b) = (self.half_w, self.half_h);
        match self.outline {
            Outline::Ellipse => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            Outline::Rectangle => u.abs() <= a && v.abs() <= b,
            Outline::Triangle => v <= b && v >= -b && u.abs() <= a * (v + b) / (2.0 * b),
        }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let (u, v) = self.local(x, y);
        let gain = 1.0 + OBJECT_TEXTURE * self.texture.at(u, v);
        PALETTE[self.id as usize - 1].map(|c| c * gain)
    }
}

/// Camera pose relative to the scene at a given time.
#[derive(Clone, Copy, Debug)]
struct Pose {
    angle: f64,
    dx: f64,
    dy: f64,
}

/// Triangle wave with unit slope and peak `amp`, starting at 0.
fn triangle(s: f64, amp: f64) -> f64 {
    if amp <= 0.0 {
        return 0.0;
    }
    let p = s.rem_euclid(4.0 * amp);
    if p < amp {
        p
    } else if p < 3.0 * amp {
        2.0 * amp - p
    } else {
        p - 4.0 * amp
    }
}

/// A placed set of objects plus the camera motion model.
#[derive(Clone, Debug)]
pub struct Scene {
    height: usize,
    width: usize,
    objects: Vec<Object>,
    background: Texture,
    trajectory: Trajectory,
    speed: f64,
    direction: (f64, f64),
}

impl Scene {
    pub fn new(spec: &SceneSpec, cfg: &RenderConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x5CE4E));
        let size = cfg.height.min(cfg.width) as f64;
        let scale = spec.distance.scale();
        let mut shapes = Vec::with_capacity(spec.num_objects);
        for id in 1..=spec.num_objects {
            let r = (BASE_RADIUS * size * scale * rng.random_range(0.85..1.15)).max(MIN_RADIUS);
            let aspect = ASPECT[id - 1].sqrt();
            let angle = rng.random_range(0.0..PI);
            shapes.push((id as u8, r * aspect, r / aspect, angle));
        }
        let centers = place(&mut rng, &shapes, cfg)?;
        let objects = shapes
            .iter()
            .zip(centers)
            .map(|(&(id, half_w, half_h, angle), (cx, cy))| Object {
                id,
                outline: [Outline::Ellipse, Outline::Rectangle, Outline::Triangle][(id as usize - 1) % 3],
                cx,
                cy,
                half_w,
                half_h,
                cos: angle.cos(),
                sin: angle.sin(),
                texture: Texture::random(&mut rng, 0.8 * half_w.min(half_h).max(1.0)),
            })
            .collect();
        let background = Texture::random(&mut rng, 0.2 * size);
        let dir = rng.random_range(0.0..2.0 * PI);
        Ok(Self {
            height: cfg.height,
            width: cfg.width,
            objects,
            background,
            trajectory: spec.trajectory,
            speed: spec.speed.pixels_per_frame(),
            direction: (dir.cos(), dir.sin()),
        })
    }

    fn pose(&self, frame_time: f64) -> Pose {
        let size = self.height.min(self.width) as f64;
        let travel = self.speed * frame_time;
        match self.trajectory {
            Trajectory::Linear => {
                let s = triangle(travel, 0.08 * size);
                Pose {
                    angle: 0.0,
                    dx: s * self.direction.0,
                    dy: s * self.direction.1,
                }
            }
            Trajectory::Rotational => Pose {
                angle: travel / (0.35 * size),
                dx: 0.0,
                dy: 0.0,
            },
            Trajectory::PartialRotational => Pose {
                angle: triangle(travel / (0.35 * size), 0.35),
                dx: 0.0,
                dy: 0.0,
            },
        }
    }

    /// Maps an image point to scene coordinates for the given pose.
    fn to_scene(&self, pose: &Pose, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let (qx, qy) = (x - cx - pose.dx, y - cy - pose.dy);
        let (c, s) = (pose.angle.cos(), pose.angle.sin());
        (c * qx + s * qy + cx, -s * qx + c * qy + cy)
    }

    fn top_object(&self, x: f64, y: f64) -> Option<&Object> {
        self.objects.iter().rev().find(|o| o.contains(x, y))
    }

    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        match self.top_object(x, y) {
            Some(o) => o.color(x, y),
            None => [BACKGROUND * (1.0 + BACKGROUND_TEXTURE * self.background.at(x, y)); 3],
        }
    }

    /// Sharp linear RGB `[3, H, W]` at `frame_time` (in frame intervals).
    pub fn render_rgb(&self, frame_time: f64) -> Vec<f32> {
        let pose = self.pose(frame_time);
        let plane = self.height * self.width;
        let mut out = vec![0.0f32; 3 * plane];
        let n = SUPERSAMPLE as f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = [0.0f64; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / n;
                        let py = y as f64 + (sy as f64 + 0.5) / n;
                        let (u, v) = self.to_scene(&pose, px, py);
                        let c = self.sample(u, v);
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                    }
                }
                for ch in 0..3 {
                    out[ch * plane + y * self.width + x] = (acc[ch] / (n * n)) as f32;
                }
            }
        }
        out
    }

    /// Instance ids `[H, W]` sampled at pixel centres.
    pub fn render_mask(&self, frame_time: f64) -> Vec<u8> {
        let pose = self.pose(frame_time);
        let mut out = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let (u, v) = self.to_scene(&pose, x as f64 + 0.5, y as f64 + 0.5);
                out.push(self.top_object(u, v).map_or(0, |o| o.id));
            }
        }
        out
    }

    /// Fraction of object footprint pixels hidden by objects drawn later.
    pub fn occlusion_fraction(&self, frame_time: f64) -> f64 {
        let pose = self.pose(frame_time);
        let (mut footprint, mut hidden) = (0u64, 0u64);
        for y in 0..self.height {
            for x in 0..self.width {
                let (u, v) = self.to_scene(&pose, x as f64 + 0.5, y as f64 + 0.5);
                let inside: Vec<usize> = (0..self.objects.len())
                    .filter(|&i| self.objects[i].contains(u, v))
                    .collect();
                footprint += inside.len() as u64;
                hidden += inside.len().saturating_sub(1) as u64;
            }
        }
        if footprint == 0 {
            0.0
        } else {
            hidden as f64 / footprint as f64
        }
    }
}

fn place(
    rng: &mut ChaCha8Rng,
    shapes: &[(u8, f64, f64, f64)],
    cfg: &RenderConfig,
) -> Result<Vec<(f64, f64)>> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let margin = PLACEMENT_MARGIN * w.min(h);
    let radius = |i: usize| shapes[i].1.max(shapes[i].2);
    if shapes.iter().enumerate().any(|(i, _)| 2.0 * radius(i) > w.min(h)) {
        return invalid("object larger than the image");
    }
    let mut attempts = 0;
    for _ in 0..PLACEMENT_RESTARTS {
        let mut centers: Vec<(f64, f64)> = Vec::with_capacity(shapes.len());
        'object: for i in 0..shapes.len() {
            for _ in 0..PLACEMENT_TRIES {
                attempts += 1;
                let c = (rng.random_range(margin..w - margin), rng.random_range(margin..h - margin));
                let clear = centers.iter().enumerate().all(|(j, &(x, y))| {
                    let d = ((c.0 - x).powi(2) + (c.1 - y).powi(2)).sqrt();
                    d >= MIN_SEPARATION * (radius(i) + radius(j))
                });
                if clear {
                    centers.push(c);
                    continue 'object;
                }
            }
            break;
        }
        if centers.len() == shapes.len() {
            return Ok(centers);
        }
    }
    Err(Error::Placement {
        attempts,
        objects: shapes.len(),
        width: cfg.width,
        height: cfg.height,
    })
}

/// Sharp frames and masks at the middle of each frame window, without
/// events or degradation.
pub fn render_scene(spec: &SceneSpec, cfg: &RenderConfig, n_frames: usize) -> Result<LabeledSequence> {
    if n_frames < 2 {
        return invalid("render_scene needs at least two frames");
    }
    let scene = Scene::new(spec, cfg)?;
    let mut rgb = Vec::new();
    let mut masks = Vec::new();
    for i in 0..n_frames {
        let t = i as f64 + 0.5;
        rgb.extend(scene.render_rgb(t).into_iter().map(super::quantize));
        masks.extend(scene.render_mask(t));
    }
    Ok(LabeledSequence {
        spec: spec.clone(),
        height: cfg.height,
        width: cfg.width,
        rgb,
        masks,
        events: Vec::new(),
        timestamps_us: (0..n_frames as u64).map(|i| i * cfg.window_us).collect(),
        window_us: cfg.window_us,
    })
}

/// Pixels within `radius` (Chebyshev) of an instance boundary, where a
/// boundary pixel has a 4-neighbour with a different id.
pub fn boundary_band(mask: &[u8], height: usize, width: usize, radius: usize) -> Vec<bool> {
    let mut edge = vec![false; height * width];
    for y in 0..height {
        for x in 0..width {
            let id = mask[y * width + x];
            let differs = (x + 1 < width && mask[y * width + x + 1] != id)
                || (y + 1 < height && mask[(y + 1) * width + x] != id);
            if differs {
                edge[y * width + x] = true;
                if x + 1 < width && mask[y * width + x + 1] != id {
                    edge[y * width + x + 1] = true;
                }
                if y + 1 < height && mask[(y + 1) * width + x] != id {
                    edge[(y + 1) * width + x] = true;
                }
            }
        }
    }
    let mut band = vec![false; height * width];
    for y in 0..height {
        for x in 0..width {
            if !edge[y * width + x] {
                continue;
            }
            for by in y.saturating_sub(radius)..=(y + radius).min(height - 1) {
                for bx in x.saturating_sub(radius)..=(x + radius).min(width - 1) {
                    band[by * width + bx] = true;
                }
            }
        }
    }
    band
}
