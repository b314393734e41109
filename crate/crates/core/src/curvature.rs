//! Matrix-free symmetric PSD curvature operators.
//!
//! - [`GaussNewton`]: `G v = (1/N) Σ_t J_tᵀ H_t J_t v` with the per-frame
//!   lattice-posterior block `H_t = κ (diag γ_t − γ_t γ_tᵀ)`, `N` the number
//!   of frames in the batch.
//! - [`EmpiricalFisher`]: `Î v = (1/R) Σ_r g_r (g_rᵀ v)` over per-utterance
//!   MMI gradients `g_r`.
//!
//! Per-utterance contributions are computed in parallel and summed in batch
//! order, so results do not depend on thread scheduling.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{ForwardTrace, Matrix, NetworkSpec};
use crate::param::{dot, Layout, ParameterVector};
use crate::sequence::{forward_backward, mmi_activation_grad, SequenceExample};

/// Largest operator the eigenspectrum probe will materialize.
pub const EIGEN_DIM_LIMIT: usize = 200;

pub trait LinearOperator: Sync {
    fn layout(&self) -> Arc<Layout>;

    fn apply(&self, v: &ParameterVector) -> Result<ParameterVector>;

    fn dim(&self) -> usize {
        self.layout().len()
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn layout(&self) -> Arc<Layout> {
        (**self).layout()
    }

    fn apply(&self, v: &ParameterVector) -> Result<ParameterVector> {
        (**self).apply(v)
    }
}

fn sum_in_order(template: &ParameterVector, parts: Vec<ParameterVector>, scale: f64) -> Result<ParameterVector> {
    let mut acc = template.zeros_like();
    for p in &parts {
        acc.add_scaled(1.0, p)?;
    }
    Ok(acc.scaled(scale))
}

pub struct GaussNewton {
    layout: Arc<Layout>,
    kappa: f64,
    items: Vec<(ForwardTrace, Matrix)>,
    total_frames: usize,
}

impl GaussNewton {
    pub fn new(spec: &NetworkSpec, theta: &ParameterVector, batch: &[&SequenceExample], kappa: f64) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let items = batch
            .par_iter()
            .map(|ex| {
                let (outputs, trace) = spec.forward(theta, &ex.utterance.frames)?;
                let post = forward_backward(&ex.lattice, &outputs, kappa)?;
                Ok((trace, post.gamma))
            })
            .collect::<Result<Vec<_>>>()?;
        let total_frames = items.iter().map(|(t, _)| t.num_frames()).sum();
        Ok(Self { layout: theta.layout().clone(), kappa, items, total_frames })
    }

    /// `H_t u_t` for every frame: `κ (γ ⊙ u − γ (γ·u))`.
    fn activation_block(&self, gamma: &Matrix, u: &Matrix) -> Matrix {
        let mut out = gamma.component_mul(u);
        for t in 0..u.nrows() {
            let gu: f64 = out.row(t).sum();
            for s in 0..u.ncols() {
                out[(t, s)] = self.kappa * (out[(t, s)] - gamma[(t, s)] * gu);
            }
        }
        out
    }
}

impl LinearOperator for GaussNewton {
    fn layout(&self) -> Arc<Layout> {
        self.layout.clone()
    }

    fn apply(&self, v: &ParameterVector) -> Result<ParameterVector> {
        let parts = self
            .items
            .par_iter()
            .map(|(trace, gamma)| {
                let jv = trace.jvp(v)?;
                let h = self.activation_block(gamma, &jv);
                Ok(trace.backprop(&h)?.values)
            })
            .collect::<Result<Vec<_>>>()?;
        let out = sum_in_order(v, parts, 1.0 / self.total_frames as f64)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("Gauss-Newton product"));
        }
        Ok(out)
    }
}

pub struct EmpiricalFisher {
    layout: Arc<Layout>,
    gradients: Vec<ParameterVector>,
}

impl EmpiricalFisher {
    pub fn new(spec: &NetworkSpec, theta: &ParameterVector, batch: &[&SequenceExample], kappa: f64) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let gradients = batch
            .par_iter()
            .map(|ex| mmi_gradient(spec, theta, ex, kappa))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layout: theta.layout().clone(), gradients })
    }

    /// Builds the operator directly from per-utterance score vectors.
    pub fn from_gradients(gradients: Vec<ParameterVector>) -> Result<Self> {
        let layout = gradients.first().ok_or(Error::EmptyBatch)?.layout().clone();
        Ok(Self { layout, gradients })
    }

    pub fn gradients(&self) -> &[ParameterVector] {
        &self.gradients
    }
}

impl LinearOperator for EmpiricalFisher {
    fn layout(&self) -> Arc<Layout> {
        self.layout.clone()
    }

    fn apply(&self, v: &ParameterVector) -> Result<ParameterVector> {
        let mut acc = v.zeros_like();
        for g in &self.gradients {
            acc.add_scaled(dot(g, v)?, g)?;
        }
        let out = acc.scaled(1.0 / self.gradients.len() as f64);
        if !out.is_finite() {
            return Err(Error::NonFinite("Fisher product"));
        }
        Ok(out)
    }
}

/// Per-utterance MMI gradient w.r.t. θ: reference path minus lattice expectation.
pub fn mmi_gradient(spec: &NetworkSpec, theta: &ParameterVector, example: &SequenceExample, kappa: f64) -> Result<ParameterVector> {
    let (outputs, trace) = spec.forward(theta, &example.utterance.frames)?;
    let post = forward_backward(&example.lattice, &outputs, kappa)?;
    let g = mmi_activation_grad(&post, &example.utterance.labels, kappa)?;
    Ok(trace.backprop(&g)?.values)
}

pub fn gn_product(spec: &NetworkSpec, theta: &ParameterVector, batch: &[&SequenceExample], v: &ParameterVector, kappa: f64) -> Result<ParameterVector> {
    theta.check_same_layout(v)?;
    GaussNewton::new(spec, theta, batch, kappa)?.apply(v)
}

pub fn fisher_product(spec: &NetworkSpec, theta: &ParameterVector, batch: &[&SequenceExample], v: &ParameterVector, kappa: f64) -> Result<ParameterVector> {
    theta.check_same_layout(v)?;
    EmpiricalFisher::new(spec, theta, batch, kappa)?.apply(v)
}

/// `op(v) + λ v`.
pub fn damped_apply<O: LinearOperator + ?Sized>(op: &O, v: &ParameterVector, lambda: f64) -> Result<ParameterVector> {
    let mut out = op.apply(v)?;
    out.add_scaled(lambda, v)?;
    Ok(out)
}

/// Tikhonov-damped view of another operator.
pub struct Damped<O> {
    pub inner: O,
    pub lambda: f64,
}

impl<O: LinearOperator> LinearOperator for Damped<O> {
    fn layout(&self) -> Arc<Layout> {
        self.inner.layout()
    }

    fn apply(&self, v: &ParameterVector) -> Result<ParameterVector> {
        damped_apply(&self.inner, v, self.lambda)
    }
}

/// The zero map; damping it gives a scaled identity.
pub struct ZeroOperator {
    pub layout: Arc<Layout>,
}

impl LinearOperator for ZeroOperator {
    fn layout(&self) -> Arc<Layout> {
        self.layout.clone()
    }

    fn apply(&self, v: &ParameterVector) -> Result<ParameterVector> {
        Ok(v.zeros_like())
    }
}

/// Explicit matrix as an operator over a flat layout.
pub struct DenseOperator {
    matrix: DMatrix<f64>,
    layout: Arc<Layout>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Shape(format!("dense operator must be square and non-empty, got {:?}", matrix.shape())));
        }
        let layout = Arc::new(Layout::flat(matrix.nrows()));
        Ok(Self { matrix, layout })
    }

    pub fn with_layout(matrix: DMatrix<f64>, layout: Arc<Layout>) -> Result<Self> {
        if matrix.nrows() != layout.len() || !matrix.is_square() {
            return Err(Error::Shape("matrix does not match layout".into()));
        }
        Ok(Self { matrix, layout })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn layout(&self) -> Arc<Layout> {
        self.layout.clone()
    }

    fn apply(&self, v: &ParameterVector) -> Result<ParameterVector> {
        if v.len() != self.matrix.nrows() {
            return Err(Error::LayoutMismatch { expected: self.matrix.nrows(), actual: v.len() });
        }
        let x = nalgebra::DVectorView::from_slice(v.as_slice(), v.len());
        let y = &self.matrix * x;
        v.with_values(y.as_slice().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureKind {
    GaussNewton,
    EmpiricalFisher,
}

enum Inner {
    Gn(GaussNewton),
    Fisher(EmpiricalFisher),
}

/// A GN or Fisher operator over a batch of utterances, with damping `λ`
/// already folded into [`LinearOperator::apply`].
pub struct CurvatureOperator {
    pub kind: CurvatureKind,
    pub batch: Vec<usize>,
    pub damping: f64,
    pub kappa: f64,
    inner: Inner,
}

impl CurvatureOperator {
    pub fn build(
        kind: CurvatureKind,
        spec: &NetworkSpec,
        theta: &ParameterVector,
        examples: &[SequenceExample],
        batch: Vec<usize>,
        kappa: f64,
        damping: f64,
    ) -> Result<Self> {
        if damping < 0.0 {
            return Err(Error::Config(format!("damping must be ≥ 0, got {damping}")));
        }
        let refs = batch
            .iter()
            .map(|&i| examples.get(i).ok_or_else(|| Error::Shape(format!("batch index {i} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        let inner = match kind {
            CurvatureKind::GaussNewton => Inner::Gn(GaussNewton::new(spec, theta, &refs, kappa)?),
            CurvatureKind::EmpiricalFisher => Inner::Fisher(EmpiricalFisher::new(spec, theta, &refs, kappa)?),
        };
        Ok(Self { kind, batch, damping, kappa, inner })
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn apply_undamped(&self, v: &ParameterVector) -> Result<ParameterVector> {
        match &self.inner {
            Inner::Gn(g) => g.apply(v),
            Inner::Fisher(f) => f.apply(v),
        }
    }
}

impl LinearOperator for CurvatureOperator {
    fn layout(&self) -> Arc<Layout> {
        match &self.inner {
            Inner::Gn(g) => g.layout(),
            Inner::Fisher(f) => f.layout(),
        }
    }

    fn apply(&self, v: &ParameterVector) -> Result<ParameterVector> {
        let mut out = self.apply_undamped(v)?;
        out.add_scaled(self.damping, v)?;
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct EigenReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: DMatrix<f64>,
    /// `‖V Σ Vᵀ − M‖_F / ‖M‖_F` against the materialized operator.
    pub reconstruction_residual: f64,
    pub matrix: DMatrix<f64>,
}

/// Materializes `op` column by column from basis vectors.
pub fn materialize<O: LinearOperator + ?Sized>(op: &O) -> Result<DMatrix<f64>> {
    let layout = op.layout();
    let n = layout.len();
    let mut m = DMatrix::zeros(n, n);
    let mut e = ParameterVector::zeros(layout);
    for j in 0..n {
        e.as_mut_slice()[j] = 1.0;
        let col = op.apply(&e)?;
        e.as_mut_slice()[j] = 0.0;
        for (i, &x) in col.as_slice().iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(m)
}

pub fn eigenspectrum<O: LinearOperator + ?Sized>(op: &O) -> Result<EigenReport> {
    let n = op.dim();
    if n > EIGEN_DIM_LIMIT {
        return Err(Error::DimensionTooLarge { dim: n, limit: EIGEN_DIM_LIMIT });
    }
    let m = materialize(op)?;
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
    let recon = &eigenvectors * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigenvalues.clone())) * eigenvectors.transpose();
    let mnorm = m.norm();
    let reconstruction_residual = if mnorm == 0.0 { (recon - &m).norm() } else { (recon - &m).norm() / mnorm };
    Ok(EigenReport { eigenvalues, eigenvectors, reconstruction_residual, matrix: m })
}
