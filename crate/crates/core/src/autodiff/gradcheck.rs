//! Central finite differences, the reference that analytic gradients are
//! checked against.

use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `x` for every coordinate.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    h: f64,
) -> Tensor<f64> {
    let coords: Vec<usize> = (0..x.numel()).collect();
    let values = finite_diff_at(&mut f, x, h, &coords);
    Tensor::new(x.shape().to_vec(), values).expect("same shape as x")
}

/// Central-difference partial derivatives of `f` at `x` for the listed
/// flat coordinates only.
pub fn finite_diff_at(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    h: f64,
    coords: &[usize],
) -> Vec<f64> {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Gradients smaller than this in magnitude are compared absolutely, since a
/// relative error is meaningless at zero.
pub const ABS_FLOOR: f64 = 1e-8;

/// Relative discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < ABS_FLOOR {
        diff / ABS_FLOOR
    } else {
        diff / scale
    }
}

/// Round-off allowance of one loss evaluation, in units of
/// `f64::EPSILON * |f|`. A loss averaged over N terms carries error of
/// order sqrt(N) ulps; 32 covers a 32x32 output plane.
pub const ROUNDOFF_ULPS: f64 = 32.0;

/// Error bar of a central difference with step `h` of a function whose
/// value is about `f`, coming from round-off alone.
pub fn difference_noise(f: f64, h: f64) -> f64 {
    ROUNDOFF_ULPS * f64::EPSILON * f.abs() / h
}

/// Relative discrepancy left after discounting `noise`, the part the
/// numeric estimate cannot resolve.
pub fn relative_error_beyond(analytic: f64, numeric: f64, noise: f64) -> f64 {
    let excess = ((analytic - numeric).abs() - noise).max(0.0);
    relative_error(analytic, analytic + excess.copysign(numeric - analytic))
}

/// Outcome of comparing analytic against numeric gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub checked: usize,
    pub failures: usize,
    /// Coordinates left out because the probe straddled a ReLU or max-pool
    /// switch, where the function is not differentiable.
    pub skipped: usize,
    /// Worst error after the round-off allowance; this is what `tol` gates.
    pub max_rel_err: f64,
    /// Worst plain relative error, before any allowance.
    pub max_raw_err: f64,
    /// `(tensor name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            ..Self::default()
        }
    }

    /// Scores one coordinate; `noise` is the numeric estimate's round-off
    /// bar (0 for none).
    pub fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64, tol: f64, noise: f64) {
        let err = relative_error_beyond(analytic, numeric, noise);
        self.checked += 1;
        self.max_raw_err = self.max_raw_err.max(relative_error(analytic, numeric));
        if err > tol {
            self.failures += 1;
        }
        if err >= self.max_rel_err {
            self.max_rel_err = err;
            self.worst = Some((tensor.to_string(), index, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.skipped += other.skipped;
        self.max_raw_err = self.max_raw_err.max(other.max_raw_err);
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {:>6} coords {:>4} skipped  max rel err {:.3e} (raw {:.3e})  {}",
            self.label,
            self.checked,
            self.skipped,
            self.max_rel_err,
            self.max_raw_err,
            if self.passed() { "ok" } else { "FAIL" }
        )?;
        if !self.passed() {
            if let Some((name, i, a, n)) = &self.worst {
                write!(f, "  (worst {name}[{i}]: analytic {a:.6e}, numeric {n:.6e})")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 3.0, 0.0, 7.5]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().sum(), &x, 1e-5);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &x, 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 1.0 + 1e-6) < 1e-5);
        assert!(relative_error(0.0, 1e-12) < 1e-3);
        assert_eq!(relative_error_beyond(1e-7, 1.1e-7, 2e-8), 0.0);
        assert!((relative_error_beyond(1e-6, 1.2e-6, 1e-7) - 1e-7 / 1.1e-6).abs() < 1e-12);
    }
}
