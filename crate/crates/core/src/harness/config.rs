//! Plain-text configuration: `[section]` headers followed by `key = value`
//! lines. Any key can be overridden as `section.key=value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{invalid, Error, Result};
use crate::model::{parse_num, ArchKind, ModelConfig};
use crate::synth::{Distance, Light, RenderConfig, SceneSpec, Speed, Trajectory};

/// Parsed sections of a config file, keys kept in file order per section.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigDoc {
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return invalid(format!("line {}: expected 'key = value', got '{line}'", n + 1));
            };
            if section.is_empty() {
                return invalid(format!("line {}: key '{}' outside any [section]", n + 1, k.trim()));
            }
            doc.set(&section, k.trim(), v.trim());
        }
        Ok(doc)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        let entries = self.sections.entry(section.to_string()).or_default();
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => entries.push((key.to_string(), value.to_string())),
        }
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let Some((path, value)) = spec.split_once('=') else {
            return invalid(format!("override '{spec}' is not section.key=value"));
        };
        let Some((section, key)) = path.trim().split_once('.') else {
            return invalid(format!("override key '{path}' is not section.key"));
        };
        self.set(section.trim(), key.trim(), value.trim());
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self, section: &str) -> &[(String, String)] {
        self.sections.get(section).map_or(&[], |v| v.as_slice())
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// The set of scenes a dataset is generated from: the cross product of the
/// listed condition values, `scenes_per_cell` seeds each.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPlan {
    pub objects: Vec<usize>,
    pub light: Vec<Light>,
    pub trajectory: Vec<Trajectory>,
    pub speed: Vec<Speed>,
    pub distance: Vec<Distance>,
    pub scenes_per_cell: usize,
    pub frames_per_scene: usize,
    pub render: RenderConfig,
    /// Counts at or above this saturate in the normalized event frames.
    pub event_clip: u32,
    pub seed: u64,
}

impl Default for DataPlan {
    fn default() -> Self {
        Self {
            objects: vec![2],
            light: vec![Light::Normal],
            trajectory: vec![Trajectory::Rotational],
            speed: vec![Speed::Slow],
            distance: vec![Distance::Near],
            scenes_per_cell: 4,
            frames_per_scene: 4,
            render: RenderConfig::with_size(64, 64),
            event_clip: crate::events::DEFAULT_CLIP,
            seed: 0,
        }
    }
}

fn parse_enum_list<E: std::str::FromStr<Err = Error>>(value: &str) -> Result<Vec<E>> {
    let items: Vec<E> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return invalid("empty list");
    }
    Ok(items)
}

fn join<D: std::fmt::Display>(items: &[D]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl DataPlan {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "objects" => {
                self.objects = crate::model::parse_list(value)?;
                if self.objects.is_empty() {
                    return invalid("objects list is empty");
                }
            }
            "light" => self.light = parse_enum_list(value)?,
            "trajectory" => self.trajectory = parse_enum_list(value)?,
            "speed" => self.speed = parse_enum_list(value)?,
            "distance" => self.distance = parse_enum_list(value)?,
            "scenes_per_cell" => self.scenes_per_cell = parse_num(key, value)?,
            "frames" | "frames_per_scene" => self.frames_per_scene = parse_num(key, value)?,
            "event_clip" => self.event_clip = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => self.render.set(other, value)?,
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        if self.scenes_per_cell == 0 || self.frames_per_scene == 0 {
            return invalid("scenes_per_cell and frames must be positive");
        }
        if self.event_clip == 0 {
            return invalid("event_clip must be positive");
        }
        for spec in self.scenes() {
            spec.validate()?;
        }
        Ok(())
    }

    /// Every scene of the plan, in a fixed order; each gets its own seed.
    pub fn scenes(&self) -> Vec<SceneSpec> {
        let mut out = Vec::new();
        for &num_objects in &self.objects {
            for &light in &self.light {
                for &trajectory in &self.trajectory {
                    for &speed in &self.speed {
                        for &distance in &self.distance {
                            for _ in 0..self.scenes_per_cell {
                                let seed = crate::autodiff::derive_seed(self.seed, out.len() as u64);
                                out.push(SceneSpec {
                                    num_objects,
                                    light,
                                    trajectory,
                                    speed,
                                    distance,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn max_objects(&self) -> usize {
        self.objects.iter().copied().max().unwrap_or(0)
    }

    fn write_section(&self, out: &mut String) {
        let _ = writeln!(out, "objects = {}", join(&self.objects));
        let _ = writeln!(out, "light = {}", join(&self.light));
        let _ = writeln!(out, "trajectory = {}", join(&self.trajectory));
        let _ = writeln!(out, "speed = {}", join(&self.speed));
        let _ = writeln!(out, "distance = {}", join(&self.distance));
        let _ = writeln!(out, "scenes_per_cell = {}", self.scenes_per_cell);
        let _ = writeln!(out, "frames = {}", self.frames_per_scene);
        let _ = writeln!(out, "height = {}", self.render.height);
        let _ = writeln!(out, "width = {}", self.render.width);
        let _ = writeln!(out, "window_us = {}", self.render.window_us);
        let _ = writeln!(out, "subframes = {}", self.render.subframes);
        let _ = writeln!(out, "threshold = {}", self.render.threshold);
        let _ = writeln!(out, "event_clip = {}", self.event_clip);
        let _ = writeln!(out, "seed = {}", self.seed);
    }
}

/// Everything one training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub kind: ArchKind,
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_interval: usize,
    /// Record elapsed milliseconds in the metrics log. Off by default so
    /// that reruns produce identical files.
    pub log_wall_time: bool,
    /// Run validation every this many epochs; 0 disables it.
    pub val_interval: usize,
    /// Existing dataset directory; when unset the data plan is generated.
    pub data_path: Option<PathBuf>,
    pub data: DataPlan,
}

impl Default for TrainConfig {
    /// Default recipe hyperparameters on the desk-sized network.
    fn default() -> Self {
        Self {
            kind: ArchKind::Bimodal,
            model: ModelConfig::desk(),
            lr: 0.001,
            batch_size: 30,
            epochs: 100,
            max_steps: 0,
            seed: 0,
            precision: Precision::F32,
            checkpoint_interval: 10,
            log_wall_time: false,
            val_interval: 1,
            data_path: None,
            data: DataPlan::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_doc(doc: &ConfigDoc) -> Result<Self> {
        let mut cfg = Self::default();
        for name in doc.section_names() {
            for (k, v) in doc.entries(name) {
                cfg.set(name, k, v)
                    .map_err(|e| Error::InvalidArgument(format!("[{name}] {k}: {e}")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_doc(&ConfigDoc::parse(text)?)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            "model" => match key {
                "kind" => self.kind = value.parse()?,
                "preset" => {
                    self.model = match value {
                        "full" => ModelConfig::full_scale(),
                        "desk" => ModelConfig::desk(),
                        "reduced" => ModelConfig::reduced(),
                        _ => return invalid(format!("unknown preset '{value}'")),
                    }
                }
                _ => self.model.set(key, value)?,
            },
            "train" => match key {
                "lr" => self.lr = parse_num(key, value)?,
                "batch_size" => self.batch_size = parse_num(key, value)?,
                "epochs" => self.epochs = parse_num(key, value)?,
                "max_steps" => self.max_steps = parse_num(key, value)?,
                "seed" => self.seed = parse_num(key, value)?,
                "precision" => {
                    self.precision = match value {
                        "f32" | "single" => Precision::F32,
                        "f64" | "double" => Precision::F64,
                        _ => return invalid(format!("unknown precision '{value}'")),
                    }
                }
                "checkpoint_interval" => self.checkpoint_interval = parse_num(key, value)?,
                "log_wall_time" => self.log_wall_time = parse_num(key, value)?,
                "val_interval" => self.val_interval = parse_num(key, value)?,
                _ => return invalid(format!("unknown train key '{key}'")),
            },
            "data" => match key {
                "path" => self.data_path = (!value.is_empty()).then(|| PathBuf::from(value)),
                _ => self.data.set(key, value)?,
            },
            _ => return invalid(format!("unknown section '{section}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return invalid(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.data_path.is_none() {
            self.data.validate()?;
        }
        Ok(())
    }

    /// Renders the config back to the file syntax.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[model]\n");
        let _ = writeln!(out, "kind = {}", self.kind);
        out.push_str(&self.model.to_kv());
        out.push_str("\n[train]\n");
        let _ = writeln!(out, "lr = {}", self.lr);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "max_steps = {}", self.max_steps);
        let _ = writeln!(out, "seed = {}", self.seed);
        let precision = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        let _ = writeln!(out, "precision = {precision}");
        let _ = writeln!(out, "checkpoint_interval = {}", self.checkpoint_interval);
        let _ = writeln!(out, "log_wall_time = {}", self.log_wall_time);
        let _ = writeln!(out, "val_interval = {}", self.val_interval);
        out.push_str("\n[data]\n");
        if let Some(p) = &self.data_path {
            let _ = writeln!(out, "path = {}", p.display());
        }
        self.data.write_section(&mut out);
        out
    }
}
