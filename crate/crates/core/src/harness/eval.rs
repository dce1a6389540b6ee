//! Patch-wise inference and per-condition reports.

use std::fmt::Write as _;

use super::data::Frame;
use crate::error::{invalid, Result};
use crate::metrics::ConfusionCounts;
use crate::model::Model;
use crate::synth::{patchify, unpatchify, ConditionAxis, Patch};
use crate::tensor::{Element, Tensor};

/// Per-pixel argmax over channels of a `[C, H, W]` map; ties go to the
/// lowest class index.
pub fn argmax_channels<T: Element>(logits: &[T], channels: usize, plane: usize) -> Vec<usize> {
    (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..channels {
                if logits[c * plane + p] > logits[best * plane + p] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Logits `[C, H, W]` of a whole frame, computed tile by tile at the model
/// input size and reassembled.
pub fn frame_logits<T: Element>(model: &Model<T>, frame: &Frame) -> Result<Vec<T>> {
    let size = model.config.input_height;
    if model.config.input_width != size {
        return invalid("patch-wise inference needs a square model input");
    }
    let (h, w) = (frame.height, frame.width);
    let cast = |v: &[f32]| v.iter().map(|&x| T::lit(x as f64)).collect::<Vec<T>>();
    let rgb = patchify(&cast(&frame.rgb), 3, h, w, size)?;
    let ev = patchify(&cast(&frame.event), 2, h, w, size)?;
    let n = rgb.len();
    let stack = |ps: &[Patch<T>], c: usize| {
        Tensor::new(
            vec![n, c, size, size],
            ps.iter().flat_map(|p| p.data.iter().copied()).collect(),
        )
    };
    let rgb_t = stack(&rgb, 3)?;
    let ev_t = stack(&ev, 2)?;
    let logits = model.predict_logits(&rgb_t, Some(&ev_t))?;
    let c = model.config.num_classes;
    let per = c * size * size;
    let patches: Vec<Patch<T>> = rgb
        .iter()
        .enumerate()
        .map(|(i, p)| Patch {
            origin: p.origin,
            size,
            channels: c,
            data: logits.data()[i * per..(i + 1) * per].to_vec(),
        })
        .collect();
    unpatchify(&patches, h, w)
}

pub fn predict_frame<T: Element>(model: &Model<T>, frame: &Frame) -> Result<Vec<usize>> {
    let logits = frame_logits(model, frame)?;
    Ok(argmax_channels(&logits, model.config.num_classes, frame.height * frame.width))
}

/// One report line: a condition bucket and its summed confusion counts.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub label: String,
    pub samples: usize,
    pub counts: ConfusionCounts,
}

impl EvalRow {
    pub fn pixel_accuracy(&self) -> f64 {
        self.counts.pixel_accuracy()
    }

    pub fn miou(&self) -> f64 {
        self.counts.miou(true)
    }

    pub fn miou_objects(&self) -> f64 {
        self.counts.miou(false)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub axis: Option<ConditionAxis>,
    pub rows: Vec<EvalRow>,
    /// Pixel-weighted over every sample; absent for an empty dataset.
    pub aggregate: Option<EvalRow>,
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, label: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Aggregate rebuilt from the row counts.
    pub fn recompute_aggregate(&self) -> Option<EvalRow> {
        let first = self.rows.first()?;
        let mut counts = ConfusionCounts::new(first.counts.num_classes);
        for r in &self.rows {
            counts.merge(&r.counts);
        }
        Some(EvalRow {
            label: "all".into(),
            samples: self.rows.iter().map(|r| r.samples).sum(),
            counts,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,samples,pixels,pixel_acc,miou,miou_objects\n");
        for r in self.rows.iter().chain(&self.aggregate) {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.label,
                r.samples,
                r.counts.total,
                r.pixel_accuracy(),
                r.miou(),
                r.miou_objects()
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let header = [
            self.axis.map_or("condition", |a| a.as_str()).to_string(),
            "samples".into(),
            "pixel_acc".into(),
            "miou".into(),
            "miou_objects".into(),
        ];
        let mut lines = vec![header.to_vec()];
        for r in self.rows.iter().chain(&self.aggregate) {
            lines.push(vec![
                r.label.clone(),
                r.samples.to_string(),
                format!("{:.4}", r.pixel_accuracy()),
                format!("{:.4}", r.miou()),
                format!("{:.4}", r.miou_objects()),
            ]);
        }
        render_table(&lines)
    }
}

/// Left-aligned first column, right-aligned rest.
pub fn render_table(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().filter_map(|l| l.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn bucket(frame: &Frame, axis: Option<ConditionAxis>) -> String {
    match (axis, &frame.spec) {
        (None, _) => "all".into(),
        (Some(a), Some(spec)) => spec.axis_value(a),
        (Some(_), None) => "unknown".into(),
    }
}

/// Evaluates every frame, grouped by `axis` (one "all" row when `None`).
/// Rows are ordered by first appearance.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    frames: &[&Frame],
    axis: Option<ConditionAxis>,
) -> Result<EvalReport> {
    let c = model.config.num_classes;
    let mut rows: Vec<EvalRow> = Vec::new();
    for frame in frames {
        if frame.max_label() as usize >= c {
            return Err(crate::Error::Dataset(format!(
                "label {} outside the model's {c} classes",
                frame.max_label()
            )));
        }
        let pred = predict_frame(model, frame)?;
        let gt: Vec<usize> = frame.mask.iter().map(|&m| m as usize).collect();
        let label = bucket(frame, axis);
        let row = match rows.iter_mut().position(|r| r.label == label) {
            Some(i) => &mut rows[i],
            None => {
                rows.push(EvalRow {
                    label,
                    samples: 0,
                    counts: ConfusionCounts::new(c),
                });
                rows.last_mut().expect("just pushed")
            }
        };
        row.counts.add_grids(&pred, &gt)?;
        row.samples += 1;
    }
    let mut report = EvalReport {
        axis,
        rows,
        aggregate: None,
    };
    report.aggregate = report.recompute_aggregate();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_goes_low() {
        let logits = [1.0f32, 5.0, 3.0, 5.0, 3.0, 2.0];
        assert_eq!(argmax_channels(&logits, 3, 2), vec![1, 0]);
    }

    #[test]
    fn table_alignment() {
        let t = render_table(&[
            vec!["a".into(), "10".into()],
            vec!["long".into(), "7".into()],
        ]);
        assert_eq!(t, "a     10\nlong   7\n");
    }
}
