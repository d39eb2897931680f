//! Toy differentiable models, mini-batch gradients and the SGD step.
//!
//! Three loss models are provided, all with a scalar per-sample loss and a
//! hand-written gradient:
//!
//! * `QuadraticBowl`: `L(w, x) = ½‖w − x‖²`, optimum at the data mean.
//! * `LinearRegression`: `L(w, x) = ½(w·x − t)²`.
//! * `TinyMlp`: one tanh hidden layer with a scalar output and squared error.
//!
//! Mini-batch gradients are averaged, not summed, and always accumulate in
//! ascending sample index so that results are reproducible bit for bit.

use std::ops::Deref;

use rand::Rng as _;

use crate::data::{MiniBatch, Sample};
use crate::error::{check_len, Error, Result};
use crate::parallel;
use crate::seed;

/// Default input dimension for the MLP model.
pub const DEFAULT_INPUT_DIM: usize = 4;
/// Default hidden width for the MLP model.
pub const DEFAULT_HIDDEN_WIDTH: usize = 8;
/// Default step for the central-difference oracle.
pub const DEFAULT_FD_STEP: f64 = 1e-6;
/// Half-width of the uniform initialization interval.
pub const INIT_HALF_WIDTH: f64 = 0.5;

/// Weight vector held by every replica and by the parameter server.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting any non-finite component.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("weight {i} is {}", values[i])));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(m: usize) -> Self {
        ParamVector(vec![0.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `‖self − other‖∞`.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    QuadraticBowl,
    LinearRegression,
    TinyMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::QuadraticBowl,
        ModelKind::LinearRegression,
        ModelKind::TinyMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::QuadraticBowl => "quadratic_bowl",
            ModelKind::LinearRegression => "linear_regression",
            ModelKind::TinyMlp => "tiny_mlp",
        }
    }
}

/// A loss function together with its dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossModel {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Only meaningful for `TinyMlp`.
    pub hidden_width: usize,
}

impl LossModel {
    pub fn new(kind: ModelKind, input_dim: usize, hidden_width: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("model.input_dim", "must be at least 1"));
        }
        if kind == ModelKind::TinyMlp && hidden_width == 0 {
            return Err(Error::config("model.hidden_width", "must be at least 1"));
        }
        Ok(LossModel {
            kind,
            input_dim,
            hidden_width,
        })
    }

    pub fn quadratic_bowl(input_dim: usize) -> Self {
        LossModel {
            kind: ModelKind::QuadraticBowl,
            input_dim,
            hidden_width: 0,
        }
    }

    pub fn linear_regression(input_dim: usize) -> Self {
        LossModel {
            kind: ModelKind::LinearRegression,
            input_dim,
            hidden_width: 0,
        }
    }

    pub fn tiny_mlp(input_dim: usize, hidden_width: usize) -> Self {
        LossModel {
            kind: ModelKind::TinyMlp,
            input_dim,
            hidden_width,
        }
    }

    /// Number of weights `m`.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            ModelKind::QuadraticBowl | ModelKind::LinearRegression => self.input_dim,
            // W1 (h x d), b1 (h), w2 (h), b2 (1)
            ModelKind::TinyMlp => self.hidden_width * (self.input_dim + 2) + 1,
        }
    }

    /// Seeded uniform initialization in `[-0.5, 0.5]`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = seed::rng(seed);
        ParamVector(
            (0..self.param_dim())
                .map(|_| rng.random_range(-INIT_HALF_WIDTH..=INIT_HALF_WIDTH))
                .collect(),
        )
    }

    fn check(&self, w: &[f64], x: &Sample) -> Result<()> {
        check_len("weights", self.param_dim(), w.len())?;
        check_len("sample features", self.input_dim, x.features.len())
    }

    pub fn loss(&self, w: &ParamVector, x: &Sample) -> Result<f64> {
        self.check(w, x)?;
        Ok(self.loss_unchecked(w, x))
    }

    pub fn grad_sample(&self, w: &ParamVector, x: &Sample) -> Result<Vec<f64>> {
        self.check(w, x)?;
        let mut g = vec![0.0; w.len()];
        self.accumulate_grad(w, x, &mut g);
        Ok(g)
    }

    /// Averaged gradient `(1/n_b) Σ ∇L(w, x_j)` over the batch, summed in
    /// ascending sample index.
    pub fn minibatch_gradient(&self, w: &ParamVector, batch: &MiniBatch<'_>) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Usage("mini-batch is empty".into()));
        }
        check_len("weights", self.param_dim(), w.len())?;
        let mut sum = vec![0.0; w.len()];
        for x in batch.samples() {
            check_len("sample features", self.input_dim, x.features.len())?;
            self.accumulate_grad(w, x, &mut sum);
        }
        let n = batch.len() as f64;
        for s in &mut sum {
            *s /= n;
        }
        if sum.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite mini-batch gradient".into()));
        }
        Ok(sum)
    }

    /// Mean loss over `samples`, summed in the given order.
    pub fn mean_loss<'a, I>(&self, w: &ParamVector, samples: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let mut total = 0.0;
        let mut n = 0usize;
        for x in samples {
            self.check(w, x)?;
            total += self.loss_unchecked(w, x);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Usage("mean loss over zero samples".into()));
        }
        Ok(total / n as f64)
    }

    /// Central-difference estimate of the averaged batch gradient.
    ///
    /// Coordinates are independent and are evaluated through
    /// [`parallel::map_range`].
    pub fn finite_difference_gradient(
        &self,
        w: &ParamVector,
        batch: &MiniBatch<'_>,
        h: f64,
    ) -> Result<Vec<f64>> {
        if h.is_nan() || h <= 0.0 {
            return Err(Error::Usage(format!(
                "finite-difference step must be > 0, got {h}"
            )));
        }
        if batch.is_empty() {
            return Err(Error::Usage("mini-batch is empty".into()));
        }
        check_len("weights", self.param_dim(), w.len())?;
        for x in batch.samples() {
            check_len("sample features", self.input_dim, x.features.len())?;
        }
        let batch_loss = |v: &[f64]| {
            let total: f64 = batch.samples().map(|x| self.loss_unchecked(v, x)).sum();
            total / batch.len() as f64
        };
        Ok(parallel::map_range(w.len(), |i| {
            let mut plus = w.as_slice().to_vec();
            let mut minus = w.as_slice().to_vec();
            plus[i] += h;
            minus[i] -= h;
            (batch_loss(&plus) - batch_loss(&minus)) / (2.0 * h)
        }))
    }

    pub(crate) fn loss_unchecked(&self, w: &[f64], x: &Sample) -> f64 {
        match self.kind {
            ModelKind::QuadraticBowl => {
                0.5 * w
                    .iter()
                    .zip(&x.features)
                    .map(|(wi, xi)| (wi - xi) * (wi - xi))
                    .sum::<f64>()
            }
            ModelKind::LinearRegression => {
                let r = dot(w, &x.features) - x.target;
                0.5 * r * r
            }
            ModelKind::TinyMlp => {
                let r = self.mlp_forward(w, &x.features, None) - x.target;
                0.5 * r * r
            }
        }
    }

    /// Adds `∇L(w, x)` into `out`.
    fn accumulate_grad(&self, w: &[f64], x: &Sample, out: &mut [f64]) {
        match self.kind {
            ModelKind::QuadraticBowl => {
                for ((o, wi), xi) in out.iter_mut().zip(w).zip(&x.features) {
                    *o += wi - xi;
                }
            }
            ModelKind::LinearRegression => {
                let r = dot(w, &x.features) - x.target;
                for (o, xi) in out.iter_mut().zip(&x.features) {
                    *o += r * xi;
                }
            }
            ModelKind::TinyMlp => self.mlp_backward(w, x, out),
        }
    }

    /// Offsets of (W1, b1, w2, b2) inside the flat weight vector.
    fn mlp_layout(&self) -> (usize, usize, usize) {
        let h = self.hidden_width;
        let b1 = h * self.input_dim;
        let w2 = b1 + h;
        let b2 = w2 + h;
        (b1, w2, b2)
    }

    /// Forward pass; stores hidden activations in `hidden` when given.
    pub(crate) fn mlp_forward(&self, w: &[f64], x: &[f64], mut hidden: Option<&mut [f64]>) -> f64 {
        let d = self.input_dim;
        let (b1, w2, b2) = self.mlp_layout();
        let mut y = w[b2];
        for k in 0..self.hidden_width {
            let row = &w[k * d..(k + 1) * d];
            let a = (dot(row, x) + w[b1 + k]).tanh();
            if let Some(h) = hidden.as_deref_mut() {
                h[k] = a;
            }
            y += w[w2 + k] * a;
        }
        y
    }

    fn mlp_backward(&self, w: &[f64], x: &Sample, out: &mut [f64]) {
        let d = self.input_dim;
        let (b1, w2, b2) = self.mlp_layout();
        let mut hidden = vec![0.0; self.hidden_width];
        let r = self.mlp_forward(w, &x.features, Some(&mut hidden)) - x.target;
        out[b2] += r;
        for (k, &a) in hidden.iter().enumerate() {
            out[w2 + k] += r * a;
            let dz = r * w[w2 + k] * (1.0 - a * a);
            out[b1 + k] += dz;
            for (o, xi) in out[k * d..(k + 1) * d].iter_mut().zip(&x.features) {
                *o += dz * xi;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Learning rate, momentum coefficient and velocity buffer.
///
/// `mu == 0` is plain SGD. A per-coordinate learning-rate variant would add
/// its state here; the step functions take the whole struct for that reason.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub eta: f64,
    pub mu: f64,
    pub velocity: Vec<f64>,
}

impl OptimizerState {
    pub fn new(eta: f64, mu: f64, m: usize) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::config(
                "optimizer.eta",
                format!("must be finite and >= 0, got {eta}"),
            ));
        }
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::config(
                "optimizer.mu",
                format!("must be in [0, 1), got {mu}"),
            ));
        }
        Ok(OptimizerState {
            eta,
            mu,
            velocity: vec![0.0; m],
        })
    }
}

/// `w(t+1) = w(t) − η·grad`, or the momentum form
/// `v ← μ·v − η·grad; w ← w + v` when `μ > 0`.
pub fn sgd_step(w: &ParamVector, grad: &[f64], opt: &mut OptimizerState) -> Result<ParamVector> {
    check_len("gradient", w.len(), grad.len())?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    let increment: Vec<f64> = grad.iter().map(|g| -(opt.eta * g)).collect();
    apply_increment(w, &increment, opt)
}

/// Applies an already scaled additive change `inc` (the `−η·ΔL` form)
/// through the optimizer.
pub fn apply_increment(
    w: &ParamVector,
    inc: &[f64],
    opt: &mut OptimizerState,
) -> Result<ParamVector> {
    check_len("increment", w.len(), inc.len())?;
    if opt.mu == 0.0 {
        ParamVector::new(w.iter().zip(inc).map(|(wi, di)| wi + di).collect())
    } else {
        momentum_increment(w, inc, opt)
    }
}

fn momentum_increment(
    w: &ParamVector,
    inc: &[f64],
    opt: &mut OptimizerState,
) -> Result<ParamVector> {
    check_len("velocity", w.len(), opt.velocity.len())?;
    for (v, di) in opt.velocity.iter_mut().zip(inc) {
        *v = opt.mu * *v + di;
    }
    ParamVector::new(
        w.iter()
            .zip(&opt.velocity)
            .map(|(wi, vi)| wi + vi)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    fn sample(features: &[f64], target: f64) -> Sample {
        Sample {
            features: features.to_vec(),
            target,
        }
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn bowl_loss_values() {
        let m = LossModel::quadratic_bowl(2);
        assert_eq!(
            m.loss(&pv(&[0.0, 0.0]), &sample(&[0.0, 0.0], 0.0)).unwrap(),
            0.0
        );
        assert_eq!(
            m.loss(&pv(&[1.0, 1.0]), &sample(&[0.0, 0.0], 0.0)).unwrap(),
            1.0
        );
    }

    #[test]
    fn zero_mlp_has_zero_loss() {
        let m = LossModel::tiny_mlp(4, 8);
        assert_eq!(m.param_dim(), 49);
        let w = ParamVector::zeros(49);
        let x = sample(&[0.3, -1.0, 2.0, 0.5], 0.0);
        assert_eq!(m.loss(&w, &x).unwrap(), 0.0);
        assert!(m.grad_sample(&w, &x).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn sample_gradients() {
        let bowl = LossModel::quadratic_bowl(2);
        assert_eq!(
            bowl.grad_sample(&pv(&[1.0, 1.0]), &sample(&[0.0, 0.0], 0.0))
                .unwrap(),
            vec![1.0, 1.0]
        );
        let lin = LossModel::linear_regression(2);
        assert_eq!(
            lin.grad_sample(&pv(&[0.0, 0.0]), &sample(&[1.0, 2.0], 0.0))
                .unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let bowl = LossModel::quadratic_bowl(2);
        let err = bowl
            .loss(&pv(&[1.0]), &sample(&[0.0, 0.0], 0.0))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        let err = bowl
            .grad_sample(&pv(&[1.0, 1.0]), &sample(&[0.0], 0.0))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn symmetric_batch_cancels() {
        let ds = Dataset::from_samples(vec![sample(&[0.0, 0.0], 0.0), sample(&[2.0, 2.0], 0.0)])
            .unwrap();
        let batch = MiniBatch::contiguous(&ds, 0, 2).unwrap();
        let g = LossModel::quadratic_bowl(2)
            .minibatch_gradient(&pv(&[1.0, 1.0]), &batch)
            .unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn singleton_batch_matches_sample_gradient() {
        let m = LossModel::tiny_mlp(3, 5);
        let w = m.init_params(3);
        let ds = Dataset::from_samples(vec![sample(&[0.1, 0.2, -0.7], 0.4)]).unwrap();
        let batch = MiniBatch::contiguous(&ds, 0, 1).unwrap();
        assert_eq!(
            m.minibatch_gradient(&w, &batch).unwrap(),
            m.grad_sample(&w, &ds.samples()[0]).unwrap()
        );
    }

    #[test]
    fn empty_batch_is_usage_error() {
        let ds = Dataset::from_samples(vec![sample(&[0.0], 0.0)]).unwrap();
        let batch = MiniBatch::from_indices(&ds, vec![]).unwrap();
        let err = LossModel::quadratic_bowl(1)
            .minibatch_gradient(&pv(&[0.0]), &batch)
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn fd_on_bowl_is_exact() {
        let ds = Dataset::from_samples(vec![sample(&[0.0], 0.0)]).unwrap();
        let batch = MiniBatch::contiguous(&ds, 0, 1).unwrap();
        let g = LossModel::quadratic_bowl(1)
            .finite_difference_gradient(&pv(&[3.0]), &batch, DEFAULT_FD_STEP)
            .unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8, "{g:?}");
    }

    #[test]
    fn fd_rejects_bad_step() {
        let ds = Dataset::from_samples(vec![sample(&[0.0], 0.0)]).unwrap();
        let batch = MiniBatch::contiguous(&ds, 0, 1).unwrap();
        assert!(LossModel::quadratic_bowl(1)
            .finite_difference_gradient(&pv(&[3.0]), &batch, 0.0)
            .is_err());
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut opt = OptimizerState::new(0.1, 0.0, 2).unwrap();
        let w = sgd_step(&pv(&[1.0, -2.0]), &[0.5, 0.5], &mut opt).unwrap();
        assert_eq!(w.as_slice(), &[0.95, -2.05]);

        let mut frozen = OptimizerState::new(0.0, 0.0, 2).unwrap();
        let w0 = pv(&[1.0, -2.0]);
        assert_eq!(sgd_step(&w0, &[7.0, -3.0], &mut frozen).unwrap(), w0);
    }

    #[test]
    fn momentum_matches_scalar_loop() {
        let (eta, mu) = (0.1, 0.9);
        let delta = [0.5, -1.5, 2.0];
        let mut opt = OptimizerState::new(eta, mu, 3).unwrap();
        let mut w = pv(&[1.0, 2.0, 3.0]);
        for _ in 0..2 {
            w = sgd_step(&w, &delta, &mut opt).unwrap();
        }
        let mut expected = [1.0, 2.0, 3.0];
        for i in 0..3 {
            let mut v = 0.0;
            for _ in 0..2 {
                v = mu * v - eta * delta[i];
                expected[i] += v;
            }
        }
        assert_eq!(w.as_slice(), &expected);
    }

    #[test]
    fn zero_momentum_path_is_plain_sgd() {
        let m = LossModel::tiny_mlp(4, 8);
        let ds =
            crate::data::generate(crate::data::DatasetKind::MlpTeacher { hidden: 8 }, 32, 4, 5)
                .unwrap();
        let batch = MiniBatch::contiguous(&ds, 0, 32).unwrap();
        let mut plain = m.init_params(1);
        let mut viamomentum = plain.clone();
        let mut opt_plain = OptimizerState::new(0.05, 0.0, m.param_dim()).unwrap();
        let mut opt_mom = opt_plain.clone();
        for _ in 0..20 {
            let g = m.minibatch_gradient(&plain, &batch).unwrap();
            plain = sgd_step(&plain, &g, &mut opt_plain).unwrap();
            let g = m.minibatch_gradient(&viamomentum, &batch).unwrap();
            let inc: Vec<f64> = g.iter().map(|g| -(opt_mom.eta * g)).collect();
            viamomentum = momentum_increment(&viamomentum, &inc, &mut opt_mom).unwrap();
            assert_eq!(plain, viamomentum);
        }
    }

    #[test]
    fn non_finite_is_divergence() {
        let mut opt = OptimizerState::new(0.1, 0.0, 1).unwrap();
        let err = sgd_step(&pv(&[1.0]), &[f64::NAN], &mut opt).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn optimizer_validation() {
        assert!(OptimizerState::new(0.1, 1.0, 1).is_err());
        assert!(OptimizerState::new(-0.1, 0.0, 1).is_err());
        assert!(OptimizerState::new(0.1, 0.99, 1).is_ok());
    }
}
