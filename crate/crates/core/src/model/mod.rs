//! The two-encoder segmentation network and its ablation variants.
//!
//! Level `n` of the bimodal network keeps `X_n = [E_n, S_n]`, the
//! concatenation of event and RGB encoder features before pooling. The
//! decoder at level `n` upsamples the deeper decoder output `D_{n+1}` (the
//! pyramid output at the bottom) and concatenates it after `X_n`.

pub mod blocks;
mod config;

pub use config::{ArchKind, ModelConfig};
pub(crate) use config::{parse_list, parse_num};

use crate::autodiff::{derive_seed, init, BoundParams, Graph, ParamStore, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Element, Tensor};
use blocks::{aspp, decoder_block, encoder_block, Ctx};

/// Name, shape and fan-in of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn conv_specs(out: &mut Vec<ParamSpec>, name: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, k, k],
        fan_in: cin * k * k,
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![cout],
        fan_in: 0,
    });
}

fn up_specs(out: &mut Vec<ParamSpec>, name: &str, channels: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![channels, channels, 2, 2],
        fan_in: channels,
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![channels],
        fan_in: 0,
    });
}

fn encoder_specs(out: &mut Vec<ParamSpec>, stream: &str, cin: usize, widths: &[usize]) {
    let mut c = cin;
    for (n, &w) in widths.iter().enumerate() {
        conv_specs(out, &format!("{stream}.enc{n}.conv1"), c, w, 3);
        conv_specs(out, &format!("{stream}.enc{n}.conv2"), w, w, 3);
        c = w;
    }
}

/// Every parameter of an architecture, in binding order.
pub fn param_plan(kind: ArchKind, cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let widths = &cfg.widths;
    let deepest = cfg.deepest_width();
    let levels = cfg.levels();
    let (bottleneck, skip_width): (usize, Box<dyn Fn(usize) -> usize>) = match kind {
        ArchKind::Bimodal => {
            encoder_specs(&mut specs, "rgb", cfg.rgb_channels, widths);
            encoder_specs(&mut specs, "event", cfg.event_channels, widths);
            let rates = [("rgb", &cfg.rgb_aspp_rates), ("event", &cfg.event_aspp_rates)];
            for (stream, rates) in rates {
                for i in 0..rates.len() {
                    conv_specs(&mut specs, &format!("aspp.{stream}{i}"), deepest, deepest, 3);
                }
            }
            let branches = cfg.rgb_aspp_rates.len() + cfg.event_aspp_rates.len();
            conv_specs(&mut specs, "aspp.proj", branches * deepest, deepest, 1);
            (deepest, Box::new(|n| 2 * widths[n]))
        }
        ArchKind::PreEncoder => {
            encoder_specs(&mut specs, "fused", cfg.rgb_channels + cfg.event_channels, widths);
            (deepest, Box::new(|_| 0))
        }
        ArchKind::PreDecoder => {
            encoder_specs(&mut specs, "rgb", cfg.rgb_channels, widths);
            encoder_specs(&mut specs, "event", cfg.event_channels, widths);
            (2 * deepest, Box::new(|_| 0))
        }
        ArchKind::RgbOnly => {
            encoder_specs(&mut specs, "rgb", cfg.rgb_channels, widths);
            (deepest, Box::new(|n| widths[n]))
        }
    };
    let mut c = bottleneck;
    for n in (0..levels).rev() {
        up_specs(&mut specs, &format!("dec{n}.up"), c);
        conv_specs(&mut specs, &format!("dec{n}.conv1"), skip_width(n) + c, widths[n], 3);
        conv_specs(&mut specs, &format!("dec{n}.conv2"), widths[n], widths[n], 3);
        c = widths[n];
    }
    conv_specs(&mut specs, "head", widths[0], cfg.num_classes, 1);
    specs
}

/// Per-level intermediates of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LevelTap {
    pub level: usize,
    /// `E_n`, event encoder features before pooling.
    pub event_features: Option<Var>,
    /// `S_n`, RGB encoder features before pooling.
    pub rgb_features: Option<Var>,
    /// `X_n`, the skip tensor fed to the decoder at this level.
    pub skip: Option<Var>,
    /// Decoder input after upsampling and concatenation.
    pub decoder_input: Var,
    /// `D_n`, decoder output.
    pub decoder_output: Var,
}

pub struct ForwardOutput {
    pub logits: Var,
    pub params: BoundParams,
    /// Ordered from the shallowest level (0) to the deepest.
    pub taps: Vec<LevelTap>,
    /// Input to the first decoder stage (pyramid output or plain bottleneck).
    pub bottleneck: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub kind: ArchKind,
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Element> Model<T> {
    /// He-initialized weights and zero biases, reproducible from `seed`.
    pub fn new(kind: ArchKind, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (i, spec) in param_plan(kind, &config).into_iter().enumerate() {
            let value = if spec.fan_in == 0 {
                Tensor::zeros(&spec.shape)
            } else {
                init::he_normal(&spec.shape, spec.fan_in, derive_seed(seed, i as u64))
            };
            params.insert(spec.name, value)?;
        }
        Ok(Self {
            kind,
            config,
            params,
        })
    }

    /// Assembles a model from existing tensors, checking them against the
    /// plan for `kind`/`config`. The first divergent tensor is named.
    pub fn from_params(kind: ArchKind, config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let plan = param_plan(kind, &config);
        let mut model = Self {
            kind,
            config,
            params: ParamStore::new(),
        };
        for (i, spec) in plan.iter().enumerate() {
            let Some(found) = params.iter().nth(i) else {
                return Err(Error::ParamMismatch {
                    name: spec.name.clone(),
                    detail: "missing".into(),
                });
            };
            if found.name != spec.name || found.value.shape() != spec.shape.as_slice() {
                return Err(Error::ParamMismatch {
                    name: spec.name.clone(),
                    detail: format!(
                        "expected {:?}, found '{}' {:?}",
                        spec.shape,
                        found.name,
                        found.value.shape()
                    ),
                });
            }
            model.params.insert(found.name.clone(), found.value.clone())?;
        }
        if let Some(extra) = params.iter().nth(plan.len()) {
            return Err(Error::ParamMismatch {
                name: extra.name.clone(),
                detail: "not part of this architecture".into(),
            });
        }
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Same weights in another precision.
    pub fn cast<U: Element>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params
                .insert(p.name.clone(), p.value.cast())
                .expect("names already unique");
        }
        Model {
            kind: self.kind,
            config: self.config.clone(),
            params,
        }
    }

    fn check_input(&self, g: &Graph<T>, x: Var, channels: usize, what: &str) -> Result<[usize; 4]> {
        let dims = g.value(x).dims4()?;
        let m = self.config.size_multiple();
        if dims[1] != channels {
            return shape_err(format!("{what} input has {} channels, expected {channels}", dims[1]));
        }
        if dims[2] == 0 || dims[3] == 0 || dims[2] % m != 0 || dims[3] % m != 0 {
            return shape_err(format!(
                "{what} input {}x{} is not a positive multiple of {m}",
                dims[2], dims[3]
            ));
        }
        Ok(dims)
    }

    fn check_pair(&self, g: &Graph<T>, rgb: Var, event: Var) -> Result<()> {
        let a = self.check_input(g, rgb, self.config.rgb_channels, "rgb")?;
        let b = self.check_input(g, event, self.config.event_channels, "event")?;
        if (a[0], a[2], a[3]) != (b[0], b[2], b[3]) {
            return shape_err(format!("rgb {a:?} and event {b:?} inputs disagree"));
        }
        Ok(())
    }

    fn expect_kind(&self, kind: ArchKind) -> Result<()> {
        if self.kind != kind {
            return invalid(format!("model is {}, not {}", self.kind, kind));
        }
        Ok(())
    }

    /// Dispatches on the architecture. `event` may be `None` only for
    /// [`ArchKind::RgbOnly`].
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        rgb: Var,
        event: Option<Var>,
        training: bool,
        seed: u64,
    ) -> Result<ForwardOutput> {
        let need_event = || {
            event.ok_or_else(|| Error::InvalidArgument(format!("{} needs an event input", self.kind)))
        };
        match self.kind {
            ArchKind::Bimodal => self.forward_bimodal(g, rgb, need_event()?, training, seed),
            ArchKind::PreEncoder => self.forward_pre_encoder(g, rgb, need_event()?, training, seed),
            ArchKind::PreDecoder => self.forward_pre_decoder(g, rgb, need_event()?, training, seed),
            ArchKind::RgbOnly => self.forward_rgb_only(g, rgb, training, seed),
        }
    }

    pub fn forward_bimodal(
        &self,
        g: &mut Graph<T>,
        rgb: Var,
        event: Var,
        training: bool,
        seed: u64,
    ) -> Result<ForwardOutput> {
        self.expect_kind(ArchKind::Bimodal)?;
        self.check_pair(g, rgb, event)?;
        let bound = self.params.bind(g);
        let mut ctx = Ctx::new(g, &bound, training, self.config.dropout, seed);
        let levels = self.config.levels();
        let (mut s, mut e) = (rgb, event);
        let mut feats = Vec::with_capacity(levels);
        for n in 0..levels {
            let (sf, sp) = encoder_block(&mut ctx, s, &format!("rgb.enc{n}"))?;
            let (ef, ep) = encoder_block(&mut ctx, e, &format!("event.enc{n}"))?;
            let x = ctx.graph.concat_channels(ef, sf)?;
            feats.push((ef, sf, x));
            (s, e) = (sp, ep);
        }
        let bottleneck = aspp(
            &mut ctx,
            s,
            e,
            &self.config.rgb_aspp_rates,
            &self.config.event_aspp_rates,
        )?;
        let skips: Vec<_> = feats
            .iter()
            .map(|&(ef, sf, x)| (Some(ef), Some(sf), Some(x)))
            .collect();
        let (logits, taps) = self.decode(&mut ctx, bottleneck, &skips)?;
        drop(ctx);
        Ok(ForwardOutput {
            logits,
            params: bound,
            taps,
            bottleneck,
        })
    }

    pub fn forward_pre_encoder(
        &self,
        g: &mut Graph<T>,
        rgb: Var,
        event: Var,
        training: bool,
        seed: u64,
    ) -> Result<ForwardOutput> {
        self.expect_kind(ArchKind::PreEncoder)?;
        self.check_pair(g, rgb, event)?;
        let bound = self.params.bind(g);
        let mut ctx = Ctx::new(g, &bound, training, self.config.dropout, seed);
        let mut x = ctx.graph.concat_channels(rgb, event)?;
        for n in 0..self.config.levels() {
            x = encoder_block(&mut ctx, x, &format!("fused.enc{n}"))?.1;
        }
        let skips = vec![(None, None, None); self.config.levels()];
        let (logits, taps) = self.decode(&mut ctx, x, &skips)?;
        drop(ctx);
        Ok(ForwardOutput {
            logits,
            params: bound,
            taps,
            bottleneck: x,
        })
    }

    pub fn forward_pre_decoder(
        &self,
        g: &mut Graph<T>,
        rgb: Var,
        event: Var,
        training: bool,
        seed: u64,
    ) -> Result<ForwardOutput> {
        self.expect_kind(ArchKind::PreDecoder)?;
        self.check_pair(g, rgb, event)?;
        let bound = self.params.bind(g);
        let mut ctx = Ctx::new(g, &bound, training, self.config.dropout, seed);
        let (mut s, mut e) = (rgb, event);
        for n in 0..self.config.levels() {
            s = encoder_block(&mut ctx, s, &format!("rgb.enc{n}"))?.1;
            e = encoder_block(&mut ctx, e, &format!("event.enc{n}"))?.1;
        }
        let bottleneck = ctx.graph.concat_channels(e, s)?;
        let skips = vec![(None, None, None); self.config.levels()];
        let (logits, taps) = self.decode(&mut ctx, bottleneck, &skips)?;
        drop(ctx);
        Ok(ForwardOutput {
            logits,
            params: bound,
            taps,
            bottleneck,
        })
    }

    pub fn forward_rgb_only(
        &self,
        g: &mut Graph<T>,
        rgb: Var,
        training: bool,
        seed: u64,
    ) -> Result<ForwardOutput> {
        self.expect_kind(ArchKind::RgbOnly)?;
        self.check_input(g, rgb, self.config.rgb_channels, "rgb")?;
        let bound = self.params.bind(g);
        let mut ctx = Ctx::new(g, &bound, training, self.config.dropout, seed);
        let mut s = rgb;
        let mut skips = Vec::with_capacity(self.config.levels());
        for n in 0..self.config.levels() {
            let (sf, sp) = encoder_block(&mut ctx, s, &format!("rgb.enc{n}"))?;
            skips.push((None, Some(sf), Some(sf)));
            s = sp;
        }
        let (logits, taps) = self.decode(&mut ctx, s, &skips)?;
        drop(ctx);
        Ok(ForwardOutput {
            logits,
            params: bound,
            taps,
            bottleneck: s,
        })
    }

    /// Decoder stack from the deepest level up, then the 1x1 classifier.
    #[allow(clippy::type_complexity)]
    fn decode(
        &self,
        ctx: &mut Ctx<'_, T>,
        bottleneck: Var,
        skips: &[(Option<Var>, Option<Var>, Option<Var>)],
    ) -> Result<(Var, Vec<LevelTap>)> {
        let mut d = bottleneck;
        let mut taps = Vec::with_capacity(skips.len());
        for n in (0..skips.len()).rev() {
            let (ef, sf, x) = skips[n];
            let out = decoder_block(ctx, d, x, &format!("dec{n}"))?;
            taps.push(LevelTap {
                level: n,
                event_features: ef,
                rgb_features: sf,
                skip: x,
                decoder_input: out.fused,
                decoder_output: out.output,
            });
            d = out.output;
        }
        taps.reverse();
        let logits = ctx.conv(d, "head", 1)?;
        Ok((logits, taps))
    }

    /// Inference-mode logits (dropout off, no gradient bookkeeping).
    /// `event` is ignored by [`ArchKind::RgbOnly`].
    pub fn predict_logits(&self, rgb: &Tensor<T>, event: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let r = g.constant(rgb.clone());
        let e = match (self.kind.uses_events(), event) {
            (true, Some(ev)) => Some(g.constant(ev.clone())),
            (true, None) => return invalid(format!("{} needs an event input", self.kind)),
            (false, _) => None,
        };
        let out = self.forward(&mut g, r, e, false, 0)?;
        Ok(g.into_value(out.logits))
    }

    /// Mean cross-entropy of one batch, for evaluation and gradient checks.
    pub fn loss(
        &self,
        rgb: &Tensor<T>,
        event: Option<&Tensor<T>>,
        targets: &[usize],
        training: bool,
        seed: u64,
    ) -> Result<f64> {
        let mut g = Graph::inference();
        let r = g.constant(rgb.clone());
        let e = event.map(|ev| g.constant(ev.clone()));
        let out = self.forward(&mut g, r, e.filter(|_| self.kind.uses_events()), training, seed)?;
        let loss = g.cross_entropy(out.logits, targets)?;
        Ok(g.value(loss).data()[0].as_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(cfg: &ModelConfig, b: usize) -> (Tensor<f32>, Tensor<f32>) {
        let (h, w) = (cfg.input_height, cfg.input_width);
        (
            init::uniform(&[b, cfg.rgb_channels, h, w], 0.0, 1.0, 1),
            init::uniform(&[b, cfg.event_channels, h, w], 0.0, 1.0, 2),
        )
    }

    #[test]
    fn every_kind_preserves_spatial_shape() {
        let cfg = ModelConfig::reduced();
        let (rgb, ev) = inputs(&cfg, 2);
        for kind in ArchKind::ALL {
            let m = Model::<f32>::new(kind, cfg.clone(), 3).unwrap();
            let out = m.predict_logits(&rgb, Some(&ev)).unwrap();
            assert_eq!(out.shape(), &[2, cfg.num_classes, 32, 32], "{kind}");
        }
    }

    #[test]
    fn wrong_kind_rejected() {
        let cfg = ModelConfig::reduced();
        let m = Model::<f32>::new(ArchKind::RgbOnly, cfg.clone(), 0).unwrap();
        let (rgb, ev) = inputs(&cfg, 1);
        let mut g = Graph::new();
        let r = g.constant(rgb);
        let e = g.constant(ev);
        assert!(m.forward_bimodal(&mut g, r, e, false, 0).is_err());
        let b = Model::<f32>::new(ArchKind::Bimodal, cfg, 0).unwrap();
        assert!(b.forward(&mut g, r, None, false, 0).is_err());
    }

    #[test]
    fn bad_input_sizes_rejected() {
        let cfg = ModelConfig::reduced();
        let m = Model::<f32>::new(ArchKind::Bimodal, cfg, 0).unwrap();
        let rgb = Tensor::zeros(&[1, 3, 24, 24]);
        let ev = Tensor::zeros(&[1, 2, 24, 24]);
        assert!(m.predict_logits(&rgb, Some(&ev)).is_err());
        let rgb = Tensor::zeros(&[1, 2, 32, 32]);
        assert!(m.predict_logits(&rgb, Some(&ev)).is_err());
    }

    #[test]
    fn from_params_names_first_divergence() {
        let a = Model::<f32>::new(ArchKind::Bimodal, ModelConfig::reduced(), 0).unwrap();
        let mut other = ModelConfig::reduced();
        other.widths = vec![2, 4, 8, 12];
        match Model::from_params(ArchKind::Bimodal, other, a.params.clone()) {
            Err(Error::ParamMismatch { name, .. }) => assert_eq!(name, "rgb.enc3.conv1.weight"),
            other => panic!("unexpected {:?}", other.map(|m| m.kind)),
        }
        let b = Model::from_params(ArchKind::Bimodal, ModelConfig::reduced(), a.params.clone()).unwrap();
        assert_eq!(a, b);
    }
}
