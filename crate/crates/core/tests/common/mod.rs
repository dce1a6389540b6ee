//! Oracles shared by several test files.
#![allow(dead_code)]

use bimodal_segnet::model::{ArchKind, ModelConfig};
use bimodal_segnet::Tensor;

type T64 = Tensor<f64>;

/// Direct six-loop convolution, the reference for the GEMM path.
pub fn naive_conv(
    x: &T64,
    w: &T64,
    bias: Option<&T64>,
    stride: usize,
    dilation: usize,
    pad: usize,
) -> T64 {
    let [b, cin, h, wd] = x.dims4().unwrap();
    let [cout, _, kh, kw] = w.dims4().unwrap();
    let ho = (h + 2 * pad - (kh - 1) * dilation - 1) / stride + 1;
    let wo = (wd + 2 * pad - (kw - 1) * dilation - 1) / stride + 1;
    let mut out = vec![0.0; b * cout * ho * wo];
    for n in 0..b {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bt| bt.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((n * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, cout, ho, wo], out).unwrap()
}

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn up(c: usize) -> usize {
    c * c * 4 + c
}

fn encoder(cin: usize, widths: &[usize]) -> usize {
    let mut c = cin;
    let mut total = 0;
    for &w in widths {
        total += conv(c, w, 3) + conv(w, w, 3);
        c = w;
    }
    total
}

/// Closed-form parameter count, written independently of the model code.
pub fn expected_params(kind: ArchKind, cfg: &ModelConfig) -> usize {
    let w = &cfg.widths;
    let d = *w.last().unwrap();
    let (rgb, ev) = (cfg.rgb_channels, cfg.event_channels);
    let (mut total, bottleneck, skip): (usize, usize, Vec<usize>) = match kind {
        ArchKind::Bimodal => {
            let branches = cfg.rgb_aspp_rates.len() + cfg.event_aspp_rates.len();
            let pyramid = branches * conv(d, d, 3) + conv(branches * d, d, 1);
            (encoder(rgb, w) + encoder(ev, w) + pyramid, d, w.iter().map(|x| 2 * x).collect())
        }
        ArchKind::PreEncoder => (encoder(rgb + ev, w), d, vec![0; w.len()]),
        ArchKind::PreDecoder => (encoder(rgb, w) + encoder(ev, w), 2 * d, vec![0; w.len()]),
        ArchKind::RgbOnly => (encoder(rgb, w), d, w.clone()),
    };
    let mut c = bottleneck;
    for n in (0..w.len()).rev() {
        total += up(c) + conv(skip[n] + c, w[n], 3) + conv(w[n], w[n], 3);
        c = w[n];
    }
    total + conv(w[0], cfg.num_classes, 1)
}
