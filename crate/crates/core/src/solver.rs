//! Truncated conjugate gradient and the two-run NGHF composition.
//!
//! [`cg_solve`] minimizes `φ(x) = ½ xᵀ (A + λI) x − bᵀ x` from `x₀ = 0`. When an
//! initial direction is supplied it is used as the first search direction
//! with an exact line search, so the first iterate is the best multiple of
//! that direction. Every later direction is the residual made conjugate to
//! all previous directions, which keeps the directions conjugate even though
//! the first one is not the residual.

use serde::{Deserialize, Serialize};

use crate::curvature::LinearOperator;
use crate::error::{Error, Result};
use crate::param::{dot, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgConfig {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub damping: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { max_iterations: 8, relative_tolerance: 1e-4, damping: 0.0 }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("CG max_iterations must be ≥ 1".into()));
        }
        if !(self.damping >= 0.0) || !(self.relative_tolerance >= 0.0) {
            return Err(Error::Config("CG damping and tolerance must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgIteration {
    pub step: f64,
    /// `pᵀ (A + λI) p` for this iteration's direction.
    pub curvature: f64,
    pub residual_norm: f64,
    /// `φ(x_k)` after the step.
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgTrace {
    pub initial_residual_norm: f64,
    pub iterations: Vec<CgIteration>,
    pub directions: Vec<ParameterVector>,
    /// Whether the first direction was the caller-supplied one.
    pub forced_first_direction: bool,
    pub converged: bool,
}

impl CgTrace {
    pub fn num_iterations(&self) -> usize {
        self.iterations.len()
    }

    pub fn final_phi(&self) -> f64 {
        self.iterations.last().map_or(0.0, |it| it.phi)
    }

    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        self.iterations.iter().map(|it| it.step)
    }
}

pub fn cg_solve<O: LinearOperator + ?Sized>(
    op: &O,
    b: &ParameterVector,
    config: &CgConfig,
    init_direction: Option<&ParameterVector>,
) -> Result<(ParameterVector, CgTrace)> {
    config.validate()?;
    if !b.is_finite() {
        return Err(Error::NonFinite("CG right-hand side"));
    }
    if let Some(p0) = init_direction {
        b.check_same_layout(p0)?;
        if !p0.is_finite() {
            return Err(Error::NonFinite("CG initial direction"));
        }
    }
    let forced = init_direction.filter(|p| p.norm() > 0.0);

    let mut x = b.zeros_like();
    let mut r = b.clone();
    let b_norm = b.norm();
    let mut phi = 0.0;
    let mut directions: Vec<ParameterVector> = Vec::new();
    let mut products: Vec<ParameterVector> = Vec::new();
    let mut iterations = Vec::new();
    let mut converged = b_norm == 0.0;

    for k in 0..config.max_iterations {
        if converged {
            break;
        }
        let mut p = match (k, forced) {
            (0, Some(p0)) => p0.clone(),
            _ => r.clone(),
        };
        for (pj, qj) in directions.iter().zip(&products) {
            let c = dot(&p, qj)? / dot(pj, qj)?;
            p.add_scaled(-c, pj)?;
        }
        let mut q = op.apply(&p)?;
        q.add_scaled(config.damping, &p)?;
        let curvature = dot(&p, &q)?;
        if !curvature.is_finite() || !q.is_finite() {
            return Err(Error::NonFinite("curvature-vector product"));
        }
        if curvature <= 0.0 {
            return Err(Error::Indefinite { iteration: k, curvature });
        }
        let rp = dot(&r, &p)?;
        let step = rp / curvature;
        x.add_scaled(step, &p)?;
        r.add_scaled(-step, &q)?;
        phi -= rp * rp / (2.0 * curvature);
        let residual_norm = r.norm();
        iterations.push(CgIteration { step, curvature, residual_norm, phi });
        directions.push(p);
        products.push(q);
        converged = residual_norm <= config.relative_tolerance * b_norm;
    }

    let trace = CgTrace {
        initial_residual_norm: b_norm,
        iterations,
        directions,
        forced_first_direction: forced.is_some(),
        converged,
    };
    Ok((x, trace))
}

/// Truncated-CG approximation of `(Î + λI)⁻¹ ∇F`.
pub fn compute_ng_direction<O: LinearOperator + ?Sized>(fisher: &O, grad: &ParameterVector, config: &CgConfig) -> Result<(ParameterVector, CgTrace)> {
    cg_solve(fisher, grad, config, None)
}

/// Right-hand side of the second (Gauss-Newton) CG run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondRunRhs {
    /// `b = ∇F`; the first step is the line-search scaling of the NG direction.
    #[default]
    Gradient,
    /// `b = Δθ_NG`; approximates `G⁻¹ Ĩ⁻¹ ∇F` as a literal composition.
    NgDirection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateComponent {
    pub step: f64,
    pub direction: ParameterVector,
    pub direction_norm: f64,
}

/// `direction = w₁ Δθ_NG + Σ_i α_i p_i`, with the parts kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeUpdate {
    pub direction: ParameterVector,
    pub ng_direction: ParameterVector,
    pub w1: f64,
    pub components: Vec<ConjugateComponent>,
    /// `−φ` at the end of the second run.
    pub quadratic_model_decrease: f64,
    pub ng_trace: CgTrace,
    pub gn_trace: CgTrace,
}

impl CompositeUpdate {
    /// Rebuilds the update from its parts, accumulating in the same order the
    /// solver did, so the result is bit-identical to `direction`.
    pub fn reconstruct(&self) -> Result<ParameterVector> {
        let mut x = self.direction.zeros_like();
        if self.gn_trace.forced_first_direction {
            x.add_scaled(self.w1, &self.ng_direction)?;
        }
        for c in &self.components {
            x.add_scaled(c.step, &c.direction)?;
        }
        Ok(x)
    }

    /// The conjugate-direction part `w₂ Δθ_HF`.
    pub fn curvature_part(&self) -> Result<ParameterVector> {
        let mut x = self.direction.zeros_like();
        for c in &self.components {
            x.add_scaled(c.step, &c.direction)?;
        }
        Ok(x)
    }

    pub fn total_cg_iterations(&self) -> usize {
        self.ng_trace.num_iterations() + self.gn_trace.num_iterations()
    }
}

/// Run 1: NG direction from the damped Fisher. Run 2: CG on `G + λI` whose
/// first search direction is the NG direction.
pub fn compute_nghf_update<F, G>(fisher: &F, gn: &G, grad: &ParameterVector, ng_config: &CgConfig, gn_config: &CgConfig, rhs: SecondRunRhs) -> Result<CompositeUpdate>
where
    F: LinearOperator + ?Sized,
    G: LinearOperator + ?Sized,
{
    let (ng_direction, ng_trace) = compute_ng_direction(fisher, grad, ng_config)?;
    let b = match rhs {
        SecondRunRhs::Gradient => grad,
        SecondRunRhs::NgDirection => &ng_direction,
    };
    let (direction, gn_trace) = cg_solve(gn, b, gn_config, Some(&ng_direction))?;

    let mut parts = gn_trace.iterations.iter().zip(&gn_trace.directions);
    let w1 = if gn_trace.forced_first_direction { parts.next().map_or(0.0, |(it, _)| it.step) } else { 0.0 };
    let components = parts
        .map(|(it, p)| ConjugateComponent { step: it.step, direction: p.clone(), direction_norm: p.norm() })
        .collect();
    Ok(CompositeUpdate {
        quadratic_model_decrease: -gn_trace.final_phi(),
        direction,
        ng_direction,
        w1,
        components,
        ng_trace,
        gn_trace,
    })
}
