use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Network variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchKind {
    /// Separate RGB and event encoders, per-level concatenated skips and an
    /// atrous pyramid over both deepest feature maps.
    Bimodal,
    /// RGB and events concatenated at the input of a single encoder; no
    /// skips, no pyramid.
    PreEncoder,
    /// Two encoders whose deepest outputs are concatenated before a single
    /// decoder; no skips, no pyramid.
    PreDecoder,
    /// Single RGB encoder with skip connections; no event stream.
    RgbOnly,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [
        ArchKind::Bimodal,
        ArchKind::PreEncoder,
        ArchKind::PreDecoder,
        ArchKind::RgbOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Bimodal => "bimodal",
            ArchKind::PreEncoder => "pre_encoder",
            ArchKind::PreDecoder => "pre_decoder",
            ArchKind::RgbOnly => "rgb_only",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ArchKind::Bimodal => 0,
            ArchKind::PreEncoder => 1,
            ArchKind::PreDecoder => 2,
            ArchKind::RgbOnly => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn uses_events(self) -> bool {
        self != ArchKind::RgbOnly
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.as_str().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture '{s}'")))
    }
}

/// Shape hyperparameters of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder filter count per level; its length is the number of levels.
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub rgb_aspp_rates: Vec<usize>,
    pub event_aspp_rates: Vec<usize>,
    pub dropout: f64,
    pub rgb_channels: usize,
    pub event_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl ModelConfig {
    /// 4 levels of 16/32/64/128 filters on 256x256 inputs, 11 classes.
    pub fn full_scale() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            num_classes: 11,
            input_height: 256,
            input_width: 256,
            rgb_aspp_rates: vec![6, 12, 18, 24],
            event_aspp_rates: vec![6],
            dropout: 0.2,
            rgb_channels: 3,
            event_channels: 2,
        }
    }

    /// Laptop-sized default for training runs.
    pub fn desk() -> Self {
        Self {
            widths: vec![8, 16, 32, 64],
            num_classes: 6,
            input_height: 128,
            input_width: 128,
            ..Self::full_scale()
        }
    }

    /// Tiny network used by the gradient checks.
    pub fn reduced() -> Self {
        Self {
            widths: vec![2, 4, 8, 16],
            num_classes: 3,
            input_height: 32,
            input_width: 32,
            ..Self::full_scale()
        }
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn deepest_width(&self) -> usize {
        *self.widths.last().expect("validated config has levels")
    }

    /// Spatial divisor imposed by the pooling stack.
    pub fn size_multiple(&self) -> usize {
        1 << self.levels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return invalid("at least one encoder level is required");
        }
        if self.widths.contains(&0) {
            return invalid("encoder widths must be positive");
        }
        if self.num_classes == 0 {
            return invalid("num_classes must be positive");
        }
        if self.rgb_channels == 0 || self.event_channels == 0 {
            return invalid("input channel counts must be positive");
        }
        let m = self.size_multiple();
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % m != 0
            || self.input_width % m != 0
        {
            return invalid(format!(
                "input {}x{} must be a positive multiple of 2^levels = {m}",
                self.input_height, self.input_width
            ));
        }
        if self.rgb_aspp_rates.is_empty() && self.event_aspp_rates.is_empty() {
            return invalid("the pyramid needs at least one atrous branch");
        }
        if self.rgb_aspp_rates.contains(&0) || self.event_aspp_rates.contains(&0) {
            return invalid("atrous rates must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// `key = value` lines, the same syntax config files use.
    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "widths = {}\nnum_classes = {}\ninput_height = {}\ninput_width = {}\n\
             rgb_aspp_rates = {}\nevent_aspp_rates = {}\ndropout = {}\n\
             rgb_channels = {}\nevent_channels = {}\n",
            list(&self.widths),
            self.num_classes,
            self.input_height,
            self.input_width,
            list(&self.rgb_aspp_rates),
            list(&self.event_aspp_rates),
            self.dropout,
            self.rgb_channels,
            self.event_channels
        )
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "widths" => self.widths = parse_list(value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "input_height" => self.input_height = parse_num(key, value)?,
            "input_width" => self.input_width = parse_num(key, value)?,
            "input_size" => {
                let n = parse_num(key, value)?;
                self.input_height = n;
                self.input_width = n;
            }
            "rgb_aspp_rates" => self.rgb_aspp_rates = parse_list(value)?,
            "event_aspp_rates" => self.event_aspp_rates = parse_list(value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "rgb_channels" => self.rgb_channels = parse_num(key, value)?,
            "event_channels" => self.event_channels = parse_num(key, value)?,
            _ => return invalid(format!("unknown model key '{key}'")),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::full_scale();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key = value, got '{line}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn parse_num<N: FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value '{value}' for '{key}'")))
}

pub(crate) fn parse_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num("list", s))
        .collect()
}
