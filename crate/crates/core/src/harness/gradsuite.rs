//! Finite-difference suites: every differentiable op on random instances,
//! then every architecture end to end in double precision.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{difference_noise, GradCheckReport};
use crate::autodiff::{derive_seed, init, Graph, Padding, ParamStore, Var};
use crate::error::Result;
use crate::model::{ArchKind, Model, ModelConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradSuiteConfig {
    /// Random instances per op and per architecture.
    pub instances: usize,
    /// Coordinates probed per architecture instance. Op instances are small
    /// enough to probe every coordinate.
    pub arch_coords: usize,
    pub step: f64,
    pub tol: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            arch_coords: 64,
            step: 1e-5,
            tol: 1e-4,
            seed: 0,
            model: ModelConfig::reduced(),
        }
    }
}

/// Loss value and the branch signature of the graph that produced it.
type Probe = (f64, u64);

/// Central differences on the chosen `(tensor, index)` coordinates, skipping
/// any probe whose two sides take different ReLU or max-pool branches.
fn probe_coords(
    report: &mut GradCheckReport,
    names: &[String],
    inputs: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    coords: &[(usize, usize)],
    cfg: &GradSuiteConfig,
    eval: &mut dyn FnMut(&[Tensor<f64>]) -> Result<Probe>,
) -> Result<()> {
    let (_, base) = eval(inputs)?;
    let h = cfg.step;
    for &(t, i) in coords {
        let orig = inputs[t].data()[i];
        inputs[t].data_mut()[i] = orig + h;
        let (up, sig_up) = eval(inputs)?;
        inputs[t].data_mut()[i] = orig - h;
        let (down, sig_down) = eval(inputs)?;
        inputs[t].data_mut()[i] = orig;
        if sig_up != base || sig_down != base {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let noise = difference_noise(up.abs().max(down.abs()), h);
        report.record(&names[t], i, analytic[t].data()[i], numeric, cfg.tol, noise);
    }
    Ok(())
}

/// One op instance: named inputs and a graph builder returning a scalar.
struct OpCase {
    names: Vec<String>,
    inputs: Vec<Tensor<f64>>,
    build: Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>,
}

impl OpCase {
    fn new(inputs: Vec<(&str, Tensor<f64>)>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> Self {
        Self {
            names: inputs.iter().map(|(n, _)| n.to_string()).collect(),
            inputs: inputs.into_iter().map(|(_, t)| t).collect(),
            build: Box::new(build),
        }
    }

    /// Ops with a tensor output are reduced by a fixed random projection.
    fn projected(
        inputs: Vec<(&str, Tensor<f64>)>,
        seed: u64,
        op: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self::new(inputs, move |g, v| {
            let y = op(g, v)?;
            let r = g.constant(init::uniform(g.shape(y), -1.0, 1.0, seed));
            let p = g.mul(y, r)?;
            Ok(g.sum(p))
        })
    }

    fn run(&self, g: &mut Graph<f64>, inputs: &[Tensor<f64>]) -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        Ok(((self.build)(g, &vars)?, vars))
    }

    fn check(mut self, report: &mut GradCheckReport, cfg: &GradSuiteConfig) -> Result<()> {
        let mut g = Graph::new();
        let (loss, vars) = self.run(&mut g, &self.inputs)?;
        g.backward(loss)?;
        let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_tensor(v)).collect();
        let coords: Vec<(usize, usize)> = self
            .inputs
            .iter()
            .enumerate()
            .flat_map(|(t, x)| (0..x.numel()).map(move |i| (t, i)))
            .collect();
        let mut inputs = std::mem::take(&mut self.inputs);
        let case = &self;
        let mut eval = |x: &[Tensor<f64>]| -> Result<Probe> {
            let mut g = Graph::new();
            let (loss, _) = case.run(&mut g, x)?;
            Ok((g.value(loss).data()[0], g.kink_signature()))
        };
        probe_coords(report, &self.names, &mut inputs, &analytic, &coords, cfg, &mut eval)
    }
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    init::standard_normal(shape, rng.random())
}

fn op_case(op: &str, rng: &mut ChaCha8Rng) -> OpCase {
    let b = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(2..=5) * 2;
    let w = rng.random_range(2..=5) * 2;
    let proj_seed: u64 = rng.random();
    match op {
        "conv2d" => {
            let cout = rng.random_range(1..=3);
            let k = *[1, 3].choose(rng).expect("non-empty");
            let dilation = rng.random_range(1..=3);
            let padding = if rng.random_bool(0.5) {
                Padding::Same
            } else {
                Padding::Explicit(dilation * (k - 1) / 2 + rng.random_range(0..=1))
            };
            let mut inputs = vec![("input", normal(&[b, c, h, w], rng)), ("weight", normal(&[cout, c, k, k], rng))];
            let with_bias = rng.random_bool(0.5);
            if with_bias {
                inputs.push(("bias", normal(&[cout], rng)));
            }
            OpCase::projected(inputs, proj_seed, move |g, v| {
                g.conv2d(v[0], v[1], with_bias.then(|| v[2]), 1, dilation, padding)
            })
        }
        "transposed_conv2d" => {
            let cout = rng.random_range(1..=3);
            let inputs = vec![
                ("input", normal(&[b, c, h / 2, w / 2], rng)),
                ("weight", normal(&[c, cout, 2, 2], rng)),
                ("bias", normal(&[cout], rng)),
            ];
            OpCase::projected(inputs, proj_seed, |g, v| g.transposed_conv2d(v[0], v[1], Some(v[2])))
        }
        "maxpool2d" => OpCase::projected(vec![("input", normal(&[b, c, h, w], rng))], proj_seed, |g, v| {
            g.maxpool2d(v[0])
        }),
        "concat_channels" => {
            let c2 = rng.random_range(1..=3);
            let inputs = vec![("a", normal(&[b, c, h, w], rng)), ("b", normal(&[b, c2, h, w], rng))];
            OpCase::projected(inputs, proj_seed, |g, v| g.concat_channels(v[0], v[1]))
        }
        "relu" => OpCase::projected(vec![("input", normal(&[b, c, h, w], rng))], proj_seed, |g, v| {
            Ok(g.relu(v[0]))
        }),
        "dropout" => {
            let rate = rng.random_range(0.1..0.6);
            let seed: u64 = rng.random();
            OpCase::projected(vec![("input", normal(&[b, c, h, w], rng))], proj_seed, move |g, v| {
                g.dropout(v[0], rate, true, seed)
            })
        }
        "softmax_channels" => OpCase::projected(vec![("input", normal(&[b, c + 1, h, w], rng))], proj_seed, |g, v| {
            g.softmax_channels(v[0])
        }),
        "cross_entropy" => {
            let classes = c + 1;
            let targets: Vec<usize> = (0..b * h * w).map(|_| rng.random_range(0..classes)).collect();
            OpCase::new(vec![("logits", normal(&[b, classes, h, w], rng))], move |g, v| {
                g.cross_entropy(v[0], &targets)
            })
        }
        "sum" => OpCase::new(vec![("input", normal(&[b, c, h, w], rng))], |g, v| Ok(g.sum(v[0]))),
        "mul" => {
            let inputs = vec![("a", normal(&[b, c, h, w], rng)), ("b", normal(&[b, c, h, w], rng))];
            OpCase::projected(inputs, proj_seed, |g, v| g.mul(v[0], v[1]))
        }
        "scale" => {
            let factor = rng.random_range(-3.0..3.0);
            OpCase::projected(vec![("input", normal(&[b, c, h, w], rng))], proj_seed, move |g, v| {
                Ok(g.scale(v[0], factor))
            })
        }
        other => unreachable!("no generator for {other}"),
    }
}

pub const CHECKED_OPS: [&str; 11] = [
    "conv2d",
    "transposed_conv2d",
    "maxpool2d",
    "concat_channels",
    "relu",
    "dropout",
    "softmax_channels",
    "cross_entropy",
    "sum",
    "mul",
    "scale",
];

pub fn op_suite(op: &str, cfg: &GradSuiteConfig) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(op);
    let index = CHECKED_OPS.iter().position(|&o| o == op).unwrap_or(CHECKED_OPS.len()) as u64;
    for inst in 0..cfg.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index << 32 | inst as u64));
        op_case(op, &mut rng).check(&mut report, cfg)?;
    }
    Ok(report)
}

fn arch_probe(
    kind: ArchKind,
    config: &ModelConfig,
    names: &[String],
    x: &[Tensor<f64>],
    targets: &[usize],
    seed: u64,
    with_grads: bool,
) -> Result<(Probe, Vec<Tensor<f64>>)> {
    let np = x.len() - 2;
    let mut store = ParamStore::new();
    for (n, t) in names.iter().zip(&x[..np]) {
        store.insert(n.clone(), t.clone())?;
    }
    let model = Model::from_params(kind, config.clone(), store)?;
    let mut g = Graph::new();
    let rgb = g.leaf(x[np].clone(), true);
    let event = g.leaf(x[np + 1].clone(), true);
    let out = model.forward(&mut g, rgb, kind.uses_events().then_some(event), true, seed)?;
    let loss = g.cross_entropy(out.logits, targets)?;
    let probe = (g.value(loss).data()[0], g.kink_signature());
    if !with_grads {
        return Ok((probe, Vec::new()));
    }
    g.backward(loss)?;
    let grads = out
        .params
        .vars()
        .iter()
        .chain([&rgb, &event])
        .map(|&v| g.grad_tensor(v))
        .collect();
    Ok((probe, grads))
}

/// End-to-end check of one architecture: random init, random inputs and
/// targets, dropout active with a fixed mask.
pub fn arch_suite(kind: ArchKind, cfg: &GradSuiteConfig) -> Result<GradCheckReport> {
    arch_suite_with(kind, cfg, |_| {})
}

/// `tamper` sees the analytic gradients before comparison; tests use it to
/// show that the suite notices wrong gradients.
fn arch_suite_with(
    kind: ArchKind,
    cfg: &GradSuiteConfig,
    tamper: impl Fn(&mut [Tensor<f64>]),
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(format!("arch {kind}"));
    let mc = &cfg.model;
    let (h, w) = (mc.input_height, mc.input_width);
    for inst in 0..cfg.instances {
        let base = derive_seed(cfg.seed ^ 0xA4C4, (kind.code() as u64) << 32 | inst as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(base);
        let model = Model::<f64>::new(kind, mc.clone(), rng.random())?;
        let mut names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
        let mut x: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
        x.push(init::uniform(&[1, mc.rgb_channels, h, w], 0.0, 1.0, rng.random()));
        x.push(init::uniform(&[1, mc.event_channels, h, w], 0.0, 1.0, rng.random()));
        let targets: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..mc.num_classes)).collect();
        let dropout_seed: u64 = rng.random();
        let (_, mut analytic) = arch_probe(kind, mc, &names, &x, &targets, dropout_seed, true)?;
        tamper(&mut analytic);

        // Cycle through tensors so every parameter is probed across instances.
        let n_tensors = x.len() - if kind.uses_events() { 0 } else { 1 };
        let coords: Vec<(usize, usize)> = (0..cfg.arch_coords)
            .map(|j| {
                let t = (inst * cfg.arch_coords + j) % n_tensors;
                (t, rng.random_range(0..x[t].numel()))
            })
            .collect();
        let param_names = names.clone();
        names.push("rgb".into());
        names.push("event".into());
        let mut eval = |xs: &[Tensor<f64>]| {
            arch_probe(kind, mc, &param_names, xs, &targets, dropout_seed, false).map(|(p, _)| p)
        };
        probe_coords(&mut report, &names, &mut x, &analytic, &coords, cfg, &mut eval)?;
    }
    Ok(report)
}

/// Every op suite followed by every architecture suite.
pub fn run_grad_suite(cfg: &GradSuiteConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for op in CHECKED_OPS {
        out.push(op_suite(op, cfg)?);
    }
    for kind in ArchKind::ALL {
        out.push(arch_suite(kind, cfg)?);
    }
    Ok(out)
}
