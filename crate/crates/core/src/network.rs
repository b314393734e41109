//! Fully connected feed-forward network over a flat parameter vector.
//!
//! Layer `l` owns one view `layer{l}` of shape `out × (in + 1)`; the last
//! column is the bias. Hidden layers use the configured activation, the
//! output layer is linear (pre-softmax).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{GradientVector, Layout, ParameterVector};

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a = f(z)`.
    /// ReLU at exactly zero has derivative 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, activation: Activation) -> Result<Self> {
        let spec = Self { input_dim, hidden_dims, output_dim, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Shape(format!("all network dimensions must be ≥ 1: {self:?}")));
        }
        Ok(())
    }

    /// `(in, out)` for each layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn layout(&self) -> Arc<Layout> {
        let shapes = self
            .layer_dims()
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| (format!("layer{l}"), o, i + 1));
        Arc::new(Layout::from_shapes(shapes).expect("validated dimensions"))
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| o * (i + 1)).sum()
    }

    fn unpack(&self, theta: &ParameterVector) -> Result<Vec<(Matrix, DVector<f64>)>> {
        if theta.len() != self.num_parameters() {
            return Err(Error::LayoutMismatch { expected: self.num_parameters(), actual: theta.len() });
        }
        let mut offset = 0;
        let s = theta.as_slice();
        Ok(self
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let block = &s[offset..offset + o * (i + 1)];
                offset += o * (i + 1);
                let w = Matrix::from_fn(o, i, |r, c| block[r * (i + 1) + c]);
                let b = DVector::from_fn(o, |r, _| block[r * (i + 1) + i]);
                (w, b)
            })
            .collect())
    }

    fn check_frames(&self, frames: &Matrix) -> Result<()> {
        if frames.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "frames have width {}, network expects {}",
                frames.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Linear output activations `[T × output_dim]` plus the trace needed for
    /// backprop and Jacobian-vector products.
    pub fn forward(&self, theta: &ParameterVector, frames: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        self.check_frames(frames)?;
        let layers = self.unpack(theta)?;
        let n = layers.len();
        let mut acts = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        acts.push(frames.clone());
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = &acts[l] * w.transpose();
            add_bias(&mut z, b);
            if l + 1 < n {
                acts.push(z.map(|x| self.activation.apply(x)));
            }
            pre.push(z);
        }
        let outputs = pre[n - 1].clone();
        let trace = ForwardTrace { activation: self.activation, layout: theta.layout().clone(), layers, pre, acts };
        Ok((outputs, trace))
    }

    pub fn jacobian_vector_product(&self, theta: &ParameterVector, frames: &Matrix, v: &ParameterVector) -> Result<Matrix> {
        theta.check_same_layout(v)?;
        let (_, trace) = self.forward(theta, frames)?;
        trace.jvp(v)
    }
}

fn add_bias(z: &mut Matrix, b: &DVector<f64>) {
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(b[j]);
    }
}

/// Per-layer pre-activations and activations of one forward pass, plus the
/// unpacked weights it was computed with.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    activation: Activation,
    layout: Arc<Layout>,
    layers: Vec<(Matrix, DVector<f64>)>,
    pre: Vec<Matrix>,
    acts: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn num_frames(&self) -> usize {
        self.acts[0].nrows()
    }

    pub fn outputs(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }

    pub fn output_dim(&self) -> usize {
        self.outputs().ncols()
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn activations(&self) -> &[Matrix] {
        &self.acts
    }

    fn act_derivative(&self, l: usize) -> Matrix {
        // derivative of acts[l + 1] w.r.t. pre[l]
        let z = &self.pre[l];
        let a = &self.acts[l + 1];
        z.zip_map(a, |z, a| self.activation.derivative(z, a))
    }

    /// Gradient w.r.t. θ of any scalar whose gradient w.r.t. the output
    /// activations is `output_grad`, summed over frames.
    pub fn backprop(&self, output_grad: &Matrix) -> Result<GradientVector> {
        if output_grad.shape() != self.outputs().shape() {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, outputs are {:?}",
                output_grad.shape(),
                self.outputs().shape()
            )));
        }
        let mut grad = vec![0.0; self.layout.len()];
        let views = self.layout.views();
        let mut dz = output_grad.clone();
        for l in (0..self.layers.len()).rev() {
            let a = &self.acts[l];
            let dw = dz.transpose() * a;
            let (o, i) = (dw.nrows(), dw.ncols());
            let block = &mut grad[views[l].range()];
            for r in 0..o {
                for c in 0..i {
                    block[r * (i + 1) + c] = dw[(r, c)];
                }
                block[r * (i + 1) + i] = dz.column(r).iter().sum();
            }
            if l > 0 {
                let da = &dz * &self.layers[l].0;
                dz = da.component_mul(&self.act_derivative(l - 1));
            }
        }
        let values = ParameterVector::from_values(self.layout.clone(), grad)?;
        Ok(GradientVector::new(values, 1))
    }

    /// Forward-mode directional derivative of the outputs along `v`.
    pub fn jvp(&self, v: &ParameterVector) -> Result<Matrix> {
        if v.len() != self.layout.len() {
            return Err(Error::LayoutMismatch { expected: self.layout.len(), actual: v.len() });
        }
        let views = self.layout.views();
        let n = self.layers.len();
        let t = self.num_frames();
        let mut r_act: Option<Matrix> = None;
        let mut r_out = Matrix::zeros(t, 0);
        for l in 0..n {
            let (w, _) = &self.layers[l];
            let (o, i) = (w.nrows(), w.ncols());
            let block = &v.as_slice()[views[l].range()];
            let vw = Matrix::from_fn(o, i, |r, c| block[r * (i + 1) + c]);
            let vb = DVector::from_fn(o, |r, _| block[r * (i + 1) + i]);
            let mut rz = &self.acts[l] * vw.transpose();
            add_bias(&mut rz, &vb);
            if let Some(ra) = &r_act {
                rz += ra * w.transpose();
            }
            if l + 1 < n {
                r_act = Some(rz.component_mul(&self.act_derivative(l)));
            } else {
                r_out = rz;
            }
        }
        Ok(r_out)
    }
}
