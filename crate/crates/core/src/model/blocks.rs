//! Building blocks shared by every architecture.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::autodiff::{derive_seed, BoundParams, Graph, Padding, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Element;

/// State threaded through one forward pass.
pub struct Ctx<'a, T> {
    pub graph: &'a mut Graph<T>,
    pub params: &'a BoundParams,
    pub training: bool,
    pub dropout: f64,
    seed: u64,
    sites: u64,
}

impl<'a, T: Element> Ctx<'a, T> {
    pub fn new(
        graph: &'a mut Graph<T>,
        params: &'a BoundParams,
        training: bool,
        dropout: f64,
        seed: u64,
    ) -> Self {
        Self {
            graph,
            params,
            training,
            dropout,
            seed,
            sites: 0,
        }
    }

    pub fn conv(&mut self, x: Var, name: &str, dilation: usize) -> Result<Var> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let b = self.params.get(&format!("{name}.bias"))?;
        self.graph.conv2d(x, w, Some(b), 1, dilation, Padding::Same)
    }

    pub fn conv_relu(&mut self, x: Var, name: &str) -> Result<Var> {
        let y = self.conv(x, name, 1)?;
        Ok(self.graph.relu(y))
    }

    /// Dropout with a per-site seed, so every site draws an independent mask
    /// that still replays exactly for the same pass seed.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let seed = derive_seed(self.seed, self.sites);
        self.sites += 1;
        self.graph.dropout(x, self.dropout, self.training, seed)
    }

    pub fn spatial(&self, x: Var) -> Result<(usize, usize)> {
        let [_, _, h, w] = self.graph.value(x).dims4()?;
        Ok((h, w))
    }
}

/// conv3x3 -> ReLU -> dropout -> conv3x3 -> ReLU, then 2x2 max pooling.
/// Returns `(features before pooling, pooled features)`.
pub fn encoder_block<T: Element>(ctx: &mut Ctx<'_, T>, x: Var, prefix: &str) -> Result<(Var, Var)> {
    let (h, w) = ctx.spatial(x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("encoder block '{prefix}' needs even input, got {h}x{w}"));
    }
    let y = ctx.conv_relu(x, &format!("{prefix}.conv1"))?;
    let y = ctx.dropout(y)?;
    let features = ctx.conv_relu(y, &format!("{prefix}.conv2"))?;
    let pooled = ctx.graph.maxpool2d(features)?;
    Ok((features, pooled))
}

static RATE_WARNED: AtomicBool = AtomicBool::new(false);

/// Parallel dilated 3x3 branches over both streams, concatenated along
/// channels and projected by a 1x1 convolution.
pub fn aspp<T: Element>(
    ctx: &mut Ctx<'_, T>,
    rgb: Var,
    event: Var,
    rgb_rates: &[usize],
    event_rates: &[usize],
) -> Result<Var> {
    let (h, w) = ctx.spatial(rgb)?;
    if ctx.spatial(event)? != (h, w) {
        return shape_err(format!(
            "pyramid inputs differ in size: rgb {h}x{w}, event {:?}",
            ctx.spatial(event)?
        ));
    }
    let mut branches = Vec::with_capacity(rgb_rates.len() + event_rates.len());
    let streams = [("rgb", rgb, rgb_rates), ("event", event, event_rates)];
    for (stream, input, rates) in streams {
        for (i, &r) in rates.iter().enumerate() {
            if r >= h.max(w) && !RATE_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!(
                    "atrous rate {r} on a {h}x{w} map: every off-centre tap reads zero padding"
                );
            }
            let y = ctx.conv(input, &format!("aspp.{stream}{i}"), r)?;
            branches.push(ctx.graph.relu(y));
        }
    }
    let mut fused = branches[0];
    for &b in &branches[1..] {
        fused = ctx.graph.concat_channels(fused, b)?;
    }
    let y = ctx.conv(fused, "aspp.proj", 1)?;
    Ok(ctx.graph.relu(y))
}

/// Decoder stage output with the intermediate wiring exposed.
pub struct DecoderOut {
    /// Upsampled deeper features concatenated with the skip (when present).
    pub fused: Var,
    pub output: Var,
}

/// 2x transposed conv, optional skip concat (skip channels first), then
/// conv3x3 -> ReLU -> dropout -> conv3x3 -> ReLU.
pub fn decoder_block<T: Element>(
    ctx: &mut Ctx<'_, T>,
    deeper: Var,
    skip: Option<Var>,
    prefix: &str,
) -> Result<DecoderOut> {
    let up_w = ctx.params.get(&format!("{prefix}.up.weight"))?;
    let up_b = ctx.params.get(&format!("{prefix}.up.bias"))?;
    let up = ctx.graph.transposed_conv2d(deeper, up_w, Some(up_b))?;
    let fused = match skip {
        Some(s) => {
            let (sh, sw) = ctx.spatial(s)?;
            let (uh, uw) = ctx.spatial(up)?;
            if (sh, sw) != (uh, uw) {
                return shape_err(format!(
                    "decoder '{prefix}': skip is {sh}x{sw} but upsampled input is {uh}x{uw}"
                ));
            }
            ctx.graph.concat_channels(s, up)?
        }
        None => up,
    };
    let y = ctx.conv_relu(fused, &format!("{prefix}.conv1"))?;
    let y = ctx.dropout(y)?;
    let output = ctx.conv_relu(y, &format!("{prefix}.conv2"))?;
    Ok(DecoderOut { fused, output })
}
