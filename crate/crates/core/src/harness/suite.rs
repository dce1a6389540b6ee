//! Architecture comparison: train every kind on one condition matrix over
//! several seeds, evaluate per condition and test the robustness claims.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{ConfigDoc, DataPlan, TrainConfig};
use super::data::{frames_from_sequences, generate_plan, Frame, Split};
use super::eval::{evaluate, render_table};
use super::train::train;
use crate::error::{invalid, Error, Result};
use crate::model::ArchKind;
use crate::synth::{ConditionAxis, Light};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub kinds: Vec<ArchKind>,
    pub seeds: Vec<u64>,
    /// Template for every run; `kind` and `seed` are overwritten and the
    /// data plan describes the training matrix.
    pub train: TrainConfig,
    /// Held-out scenes per condition cell, rendered from a separate seed.
    pub test_scenes_per_cell: usize,
}

impl SuiteConfig {
    /// Reads a training config whose optional `[suite]` section holds
    /// `kinds`, `seeds` and `test_scenes_per_cell`.
    pub fn from_doc(doc: &ConfigDoc) -> Result<Self> {
        let mut cfg = Self {
            kinds: ArchKind::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            train: TrainConfig::default(),
            test_scenes_per_cell: 4,
        };
        for name in doc.section_names() {
            for (k, v) in doc.entries(name) {
                let res = if name == "suite" { cfg.set(k, v) } else { cfg.train.set(name, k, v) };
                res.map_err(|e| Error::InvalidArgument(format!("[{name}] {k}: {e}")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "kinds" => {
                self.kinds = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "seeds" => self.seeds = crate::model::parse_list(value)?.into_iter().map(|s| s as u64).collect(),
            "test_scenes_per_cell" => self.test_scenes_per_cell = crate::model::parse_num(key, value)?,
            _ => return invalid(format!("unknown suite key '{key}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.seeds.is_empty() {
            return invalid("suite needs at least one architecture and one seed");
        }
        if self.test_scenes_per_cell == 0 {
            return invalid("test_scenes_per_cell must be positive");
        }
        if self.train.data_path.is_some() {
            return invalid("the suite generates its own matrices; unset data.path");
        }
        self.train.validate()
    }

    pub fn test_plan(&self) -> DataPlan {
        DataPlan {
            scenes_per_cell: self.test_scenes_per_cell,
            seed: crate::autodiff::derive_seed(self.train.data.seed, 0x7E57),
            ..self.train.data.clone()
        }
    }

    /// Axes along which the matrix has more than one value.
    pub fn axes(&self) -> Vec<ConditionAxis> {
        let d = &self.train.data;
        [
            (ConditionAxis::Objects, d.objects.len()),
            (ConditionAxis::Light, d.light.len()),
            (ConditionAxis::Trajectory, d.trajectory.len()),
            (ConditionAxis::Speed, d.speed.len()),
            (ConditionAxis::Distance, d.distance.len()),
        ]
        .into_iter()
        .filter(|&(_, n)| n > 1)
        .map(|(a, _)| a)
        .collect()
    }
}

/// mIoU and pixel accuracy of one trained model on one condition bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCell {
    pub kind: ArchKind,
    pub seed: u64,
    /// `None` when the matrix has a single cell.
    pub axis: Option<ConditionAxis>,
    pub condition: String,
    pub miou: f64,
    pub pixel_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerdictStatus {
    Pass,
    Fail,
    /// The matrix lacks the conditions the claim compares.
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub status: VerdictStatus,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub cells: Vec<SuiteCell>,
    pub verdicts: Vec<Verdict>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl SuiteReport {
    fn lookup(&self, kind: ArchKind, seed: u64, axis: ConditionAxis, condition: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.seed == seed && c.axis == Some(axis) && c.condition == condition)
            .map(|c| c.miou)
    }

    fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.cells.iter().map(|c| c.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn kinds(&self) -> Vec<ArchKind> {
        let mut k: Vec<ArchKind> = Vec::new();
        for c in &self.cells {
            if !k.contains(&c.kind) {
                k.push(c.kind);
            }
        }
        k
    }

    /// mIoU drop from `from` to `to` along `axis` for each seed, or `None`
    /// if any seed lacks either condition.
    pub fn drops(&self, kind: ArchKind, axis: ConditionAxis, from: &str, to: &str) -> Option<Vec<f64>> {
        self.seeds()
            .into_iter()
            .map(|s| Some(self.lookup(kind, s, axis, from)? - self.lookup(kind, s, axis, to)?))
            .collect()
    }

    /// One row per (architecture, axis, condition): mean and spread over seeds.
    pub fn summary(&self) -> Vec<(ArchKind, Option<ConditionAxis>, String, (f64, f64), (f64, f64))> {
        let mut keys: Vec<(ArchKind, Option<ConditionAxis>, String)> = Vec::new();
        for c in &self.cells {
            let k = (c.kind, c.axis, c.condition.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(kind, axis, cond)| {
                let sel: Vec<&SuiteCell> = self
                    .cells
                    .iter()
                    .filter(|c| c.kind == kind && c.axis == axis && c.condition == cond)
                    .collect();
                let miou: Vec<f64> = sel.iter().map(|c| c.miou).collect();
                let acc: Vec<f64> = sel.iter().map(|c| c.pixel_acc).collect();
                (kind, axis, cond, mean_std(&miou), mean_std(&acc))
            })
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut lines = vec![vec![
            "arch".to_string(),
            "axis".into(),
            "condition".into(),
            "miou".into(),
            "pixel_acc".into(),
        ]];
        for (kind, axis, cond, (m, ms), (a, as_)) in self.summary() {
            lines.push(vec![
                kind.to_string(),
                axis.map_or("-", |a| a.as_str()).to_string(),
                cond,
                format!("{m:.4} ± {ms:.4}"),
                format!("{a:.4} ± {as_:.4}"),
            ]);
        }
        let mut out = render_table(&lines);
        for v in &self.verdicts {
            let status = match v.status {
                VerdictStatus::Pass => "PASS",
                VerdictStatus::Fail => "FAIL",
                VerdictStatus::NotApplicable => "n/a",
            };
            let _ = writeln!(out, "{status:<4}  {}: {}", v.name, v.detail);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arch,seed,axis,condition,miou,pixel_acc\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6}",
                c.kind,
                c.seed,
                c.axis.map_or("-", |a| a.as_str()),
                c.condition,
                c.miou,
                c.pixel_acc
            );
        }
        out
    }

    pub fn verdict(&self, name_prefix: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name.starts_with(name_prefix))
    }

    /// Evaluates the two directional claims against the collected cells.
    pub fn compute_verdicts(&mut self) {
        self.verdicts = vec![self.low_light_verdict(), self.occlusion_verdict()];
    }

    fn low_light_verdict(&self) -> Verdict {
        let name = "low-light drop: bimodal < rgb_only".to_string();
        let (normal, low) = (Light::Normal.as_str(), Light::Low.as_str());
        let axis = ConditionAxis::Light;
        let (Some(bi), Some(rgb)) = (
            self.drops(ArchKind::Bimodal, axis, normal, low),
            self.drops(ArchKind::RgbOnly, axis, normal, low),
        ) else {
            return Verdict {
                name,
                status: VerdictStatus::NotApplicable,
                detail: "needs bimodal and rgb_only under normal and low light".into(),
            };
        };
        let wins = bi.iter().zip(&rgb).filter(|(b, r)| b < r).count();
        let needed = (2 * bi.len()).div_ceil(3);
        let (bm, _) = mean_std(&bi);
        let (rm, _) = mean_std(&rgb);
        let pass = !bi.is_empty() && wins >= needed && bm < rm;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        Verdict {
            name,
            status: if pass { VerdictStatus::Pass } else { VerdictStatus::Fail },
            detail: format!(
                "bimodal drops [{}] mean {bm:.4}; rgb_only drops [{}] mean {rm:.4}; bimodal smaller in {wins}/{} seeds (need {needed})",
                fmt(&bi),
                fmt(&rgb),
                bi.len()
            ),
        }
    }

    fn occlusion_verdict(&self) -> Verdict {
        let name = "occlusion: 10 objects < 2 objects, bimodal drop <= rgb_only drop".to_string();
        let axis = ConditionAxis::Objects;
        let mut parts = Vec::new();
        let mut pass = true;
        let mut means = Vec::new();
        for kind in self.kinds() {
            let Some(d) = self.drops(kind, axis, "2", "10") else {
                return Verdict {
                    name,
                    status: VerdictStatus::NotApplicable,
                    detail: "needs 2-object and 10-object scenes".into(),
                };
            };
            let (m, _) = mean_std(&d);
            pass &= m > 0.0;
            parts.push(format!("{kind} {m:.4}"));
            means.push((kind, m));
        }
        let get = |k: ArchKind| means.iter().find(|(x, _)| *x == k).map(|&(_, m)| m);
        match (get(ArchKind::Bimodal), get(ArchKind::RgbOnly)) {
            (Some(b), Some(r)) => pass &= b <= r,
            _ => {
                return Verdict {
                    name,
                    status: VerdictStatus::NotApplicable,
                    detail: "needs bimodal and rgb_only".into(),
                }
            }
        }
        Verdict {
            name,
            status: if pass { VerdictStatus::Pass } else { VerdictStatus::Fail },
            detail: format!("mean 2->10 drops: {}", parts.join(", ")),
        }
    }
}

/// Result of a suite run; on a training abort `error` is set and `report`
/// holds the runs that finished.
pub struct SuiteRun {
    pub report: SuiteReport,
    pub error: Option<Error>,
}

fn dataset(plan: &DataPlan) -> Result<Vec<Frame>> {
    frames_from_sequences(&generate_plan(plan)?, plan.event_clip)
}

/// Trains and evaluates every (kind, seed) pair in order. With `out_dir`,
/// each run's logs and checkpoint go to `<kind>-seed<seed>/` and the
/// cell CSV is rewritten after every run.
pub fn run_suite(cfg: &SuiteConfig, out_dir: Option<&Path>) -> Result<SuiteRun> {
    cfg.validate()?;
    let train_frames = dataset(&cfg.train.data)?;
    let test_frames = dataset(&cfg.test_plan())?;
    let test_refs: Vec<&Frame> = test_frames.iter().collect();
    let n_scenes = train_frames.last().map_or(0, |f| f.scene + 1);
    let split = Split::all_train(n_scenes);
    let axes = cfg.axes();
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let mut report = SuiteReport::default();
    for &kind in &cfg.kinds {
        for &seed in &cfg.seeds {
            let mut tc = cfg.train.clone();
            tc.kind = kind;
            tc.seed = seed;
            let run_dir = out_dir.map(|d| d.join(format!("{kind}-seed{seed}")));
            log::info!("suite: training {kind} seed {seed}");
            let run = match train::<f32>(&tc, &train_frames, &split, run_dir.as_deref()) {
                Ok(r) => r,
                Err(e) => {
                    report.compute_verdicts();
                    return Ok(SuiteRun { report, error: Some(e) });
                }
            };
            let groupings: Vec<Option<ConditionAxis>> =
                if axes.is_empty() { vec![None] } else { axes.iter().copied().map(Some).collect() };
            for axis in groupings {
                let eval = evaluate(&run.model, &test_refs, axis)?;
                for row in &eval.rows {
                    report.cells.push(SuiteCell {
                        kind,
                        seed,
                        axis,
                        condition: row.label.clone(),
                        miou: row.miou(),
                        pixel_acc: row.pixel_accuracy(),
                    });
                }
            }
            if let Some(d) = out_dir {
                fs::write(d.join("suite_cells.csv"), report.to_csv())?;
            }
        }
    }
    report.compute_verdicts();
    if let Some(d) = out_dir {
        fs::write(d.join("suite_report.txt"), report.to_table())?;
    }
    Ok(SuiteRun { report, error: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(kind: ArchKind, seed: u64, axis: ConditionAxis, condition: &str, miou: f64) -> SuiteCell {
        SuiteCell {
            kind,
            seed,
            axis: Some(axis),
            condition: condition.into(),
            miou,
            pixel_acc: 0.0,
        }
    }

    #[test]
    fn low_light_verdict_counts_seeds() {
        let mut r = SuiteReport::default();
        let data = [
            (ArchKind::Bimodal, [(0.80, 0.78), (0.80, 0.70), (0.80, 0.79)]),
            (ArchKind::RgbOnly, [(0.80, 0.60), (0.80, 0.75), (0.80, 0.70)]),
        ];
        for (kind, seeds) in data {
            for (s, (n, l)) in seeds.iter().enumerate() {
                r.cells.push(cell(kind, s as u64, ConditionAxis::Light, "normal", *n));
                r.cells.push(cell(kind, s as u64, ConditionAxis::Light, "low", *l));
            }
        }
        r.compute_verdicts();
        let v = r.verdict("low-light").unwrap();
        assert_eq!(v.status, VerdictStatus::Pass, "{}", v.detail);
        assert!(v.detail.contains("2/3"));
        assert_eq!(r.verdict("occlusion").unwrap().status, VerdictStatus::NotApplicable);
    }

    #[test]
    fn mean_std_of_constant() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]), (2.0, 0.0));
    }
}
