//! Dense linear algebra and training primitives shared by the neural models.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::substream;

/// Row-major `rows × cols` matrix of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {rows}×{cols}", rows * cols),
                actual: values.len().to_string(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix entries must be finite".into()));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let values = (0..rows * cols).map(|_| rng.random_range(-scale..=scale)).collect();
        DenseMatrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self · x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.values.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · y`
    pub fn t_matvec_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yi, row) in y.iter().zip(self.values.chunks_exact(self.cols)) {
            if yi != 0.0 {
                axpy(yi, row, out);
            }
        }
    }

    /// `self += a · bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ai, row) in a.iter().zip(self.values.chunks_exact_mut(self.cols)) {
            if ai != 0.0 {
                axpy(ai, b, row);
            }
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.values.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const SIGMOID_CLAMP: f64 = 40.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)).exp())
}

pub fn sigmoid_forward(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid(x)).collect()
}

pub fn sigmoid_in_place(v: &mut [f64]) {
    for x in v {
        *x = sigmoid(*x);
    }
}

pub fn softmax_forward(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Max-subtracted softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Plain SGD settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Halve the learning rate once validation entropy stalls.
    pub lr_decay: bool,
    /// Elementwise gradient clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.1,
            l2: 1e-3,
            max_epochs: 10,
            seed: 1,
            lr_decay: false,
            clip: Some(15.0),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidArgument(format!("l2 coefficient must be non-negative, got {}", self.l2)));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be at least 1".into()));
        }
        if let Some(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidArgument(format!("gradient clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// `p ← p − lr · (g + l2 · p)` for each parameter/gradient pair.
pub fn sgd_step(params: &mut [&mut DenseMatrix], grads: &[&DenseMatrix], cfg: &SgdConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} gradients", params.len()),
            actual: grads.len().to_string(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", p.shape()),
                actual: format!("{:?}", g.shape()),
            });
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        sgd_update(p.values_mut(), g.values(), cfg.learning_rate, cfg.l2);
    }
    Ok(())
}

#[inline]
pub(crate) fn sgd_update(p: &mut [f64], g: &[f64], lr: f64, l2: f64) {
    for (pi, gi) in p.iter_mut().zip(g) {
        *pi -= lr * (gi + l2 * *pi);
    }
}

/// Clamps every entry to `[-limit, limit]`, returning how many were clipped.
pub fn clip_in_place(values: &mut [f64], limit: f64) -> usize {
    let mut clipped = 0;
    for v in values {
        if v.abs() > limit {
            *v = v.clamp(-limit, limit);
            clipped += 1;
        }
    }
    clipped
}

/// Matrix whose rows share a lazily applied multiplicative decay.
///
/// ℓ2 regularization shrinks every parameter on every step, but a sparse
/// update only touches a few rows. Keeping the shrink factor in `scale`
/// makes both O(touched rows) while staying exactly equivalent to the dense
/// update `p ← (1 − lr·l2)·p − lr·g`.
#[derive(Clone, Debug)]
pub struct ScaledRows {
    stored: DenseMatrix,
    scale: f64,
}

impl ScaledRows {
    pub fn new(m: DenseMatrix) -> Self {
        ScaledRows { stored: m, scale: 1.0 }
    }

    pub fn cols(&self) -> usize {
        self.stored.cols()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Stored (unscaled) row; multiply by [`Self::scale`] for the true value.
    #[inline]
    pub fn stored_row(&self, r: usize) -> &[f64] {
        self.stored.row(r)
    }

    pub fn decay(&mut self, factor: f64) {
        self.scale *= factor;
        if self.scale < 1e-3 {
            self.fold();
        }
    }

    /// True row `r` ← true row `r` − `lr · g`.
    pub fn update_row(&mut self, r: usize, g: &[f64], lr: f64) {
        axpy(-lr / self.scale, g, self.stored.row_mut(r));
    }

    fn fold(&mut self) {
        for v in self.stored.values_mut() {
            *v *= self.scale;
        }
        self.scale = 1.0;
    }

    pub fn into_matrix(mut self) -> DenseMatrix {
        self.fold();
        self.stored
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

/// Central finite-difference check of an analytic gradient.
#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub step: f64,
    /// Check a random subset of this many coordinates; `None` checks all.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Gradients below this magnitude are compared absolutely.
    pub floor: f64,
}

impl Default for GradientCheck {
    fn default() -> Self {
        GradientCheck {
            step: 1e-5,
            samples: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradientCheck {
    pub fn with_samples(samples: usize, seed: u64) -> Self {
        GradientCheck {
            samples: Some(samples),
            seed,
            ..Self::default()
        }
    }

    /// `loss` returns `None` at points where it is not differentiable (for
    /// instance close to a hinge); coordinates whose stencil touches such a
    /// point are skipped.
    pub fn run(
        &self,
        params: &[f64],
        analytic: &[f64],
        mut loss: impl FnMut(&[f64]) -> Option<f64>,
    ) -> GradientCheckReport {
        assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
        let coords: Vec<usize> = match self.samples {
            Some(n) if n < params.len() => {
                let mut rng = substream(self.seed, 0);
                let mut picked = sample(&mut rng, params.len(), n).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..params.len()).collect(),
        };
        let mut report = GradientCheckReport {
            max_rel_error: 0.0,
            worst_coordinate: None,
            checked: 0,
            skipped: 0,
        };
        let mut p = params.to_vec();
        for i in coords {
            let orig = p[i];
            p[i] = orig + self.step;
            let plus = loss(&p);
            p[i] = orig - self.step;
            let minus = loss(&p);
            p[i] = orig;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                report.skipped += 1;
                continue;
            };
            let numeric = (plus - minus) / (2.0 * self.step);
            let err = relative_error(analytic[i], numeric, self.floor);
            report.checked += 1;
            if report.worst_coordinate.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_coordinate = Some(i);
            }
        }
        report
    }
}

/// Maximum relative error of `analytic` against central differences of
/// `loss` over every coordinate.
pub fn gradient_check(loss: impl Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64], h: f64) -> f64 {
    GradientCheck {
        step: h,
        ..GradientCheck::default()
    }
    .run(params, analytic, |p| Some(loss(p)))
    .max_rel_error
}
