//! Dense feed-forward network with a hand-written reverse pass.
//!
//! Parameters live in one flat `Vec<f64>` so that optimizers, target copies,
//! checkpoints and finite-difference checks can treat every network alike.
//! Layer `l` stores its weights row-major with shape `(in, out)` followed by
//! its `out` biases. Hidden layers apply the activation; the output layer is
//! linear.

use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gelu" => Some(Activation::Gelu),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

// tanh approximation of GELU
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

/// Gradients of a scalar loss with respect to parameters and inputs.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Matrix,
}

impl Mlp {
    /// `widths` lists input, hidden and output sizes; two entries give a
    /// single linear layer. Weights are fan-in scaled uniform, biases zero.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths, activation)?;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (net.widths[l], net.widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let off = net.offsets[l];
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// All-zero network with the given layout.
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "network widths {widths:?} need at least two positive entries"
            )));
        }
        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut total = 0;
        for pair in widths.windows(2) {
            offsets.push(total);
            total += pair[0] * pair[1] + pair[1];
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            params: vec![0.0; total],
            offsets,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated at construction")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Weights of layer `l`, row-major `(in, out)`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let off = self.offsets[l];
        &self.params[off..off + self.widths[l] * self.widths[l + 1]]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.offsets[l];
        let n = self.widths[l] * self.widths[l + 1];
        &mut self.params[off..off + n]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let off = self.offsets[l] + self.widths[l] * self.widths[l + 1];
        &self.params[off..off + self.widths[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.offsets[l] + self.widths[l] * self.widths[l + 1];
        let n = self.widths[l + 1];
        &mut self.params[off..off + n]
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in 0..self.num_layers() {
            let mut z = linear(&h, self.weights(l), self.bias(l), self.widths[l + 1]);
            if l + 1 < self.num_layers() {
                let act = self.activation;
                z.map_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that keeps what the reverse pass needs.
    pub fn forward_tape(&self, x: &Matrix) -> Result<(Matrix, Tape)> {
        self.check_input(x)?;
        let n = self.num_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n.saturating_sub(1));
        let mut h = x.clone();
        for l in 0..n {
            let z = linear(&h, self.weights(l), self.bias(l), self.widths[l + 1]);
            inputs.push(h);
            if l + 1 < n {
                let mut a = z.clone();
                let act = self.activation;
                a.map_inplace(|v| act.apply(v));
                pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        Ok((h, Tape { inputs, pre }))
    }

    /// Reverse pass. `d_out` is the adjoint of the scalar loss with respect to
    /// the network output (already including any batch-mean factor).
    pub fn backward(&self, tape: &Tape, d_out: &Matrix) -> Result<Gradients> {
        let n = self.num_layers();
        let batch = tape.inputs[0].rows();
        if d_out.rows() != batch || d_out.cols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output adjoint is {}x{}, expected {}x{}",
                d_out.rows(),
                d_out.cols(),
                batch,
                self.output_dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = d_out.clone();
        for l in (0..n).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.offsets[l];
            let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let x = &tape.inputs[l];
            for r in 0..batch {
                let d = delta.row(r);
                for (b, dv) in gb.iter_mut().zip(d) {
                    *b += dv;
                }
                for (k, &xv) in x.row(r).iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let row = &mut gw[k * fan_out..(k + 1) * fan_out];
                    for (g, dv) in row.iter_mut().zip(d) {
                        *g += xv * dv;
                    }
                }
            }
            let w = self.weights(l);
            let mut d_in = Matrix::zeros(batch, fan_in);
            for r in 0..batch {
                let d = delta.row(r);
                let out = d_in.row_mut(r);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = dot(d, &w[k * fan_out..(k + 1) * fan_out]);
                }
            }
            if l > 0 {
                let z = &tape.pre[l - 1];
                let act = self.activation;
                for (dv, zv) in d_in.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *dv *= act.derivative(*zv);
                }
            }
            delta = d_in;
        }
        Ok(Gradients {
            params: grads,
            input: delta,
        })
    }
}

/// `y = x W + b`. Every output is accumulated as `b + x_0 w_0 + x_1 w_1 + ...`
/// in input order, whatever the blocking, so results do not depend on how
/// rows are batched.
fn linear(x: &Matrix, w: &[f64], b: &[f64], out: usize) -> Matrix {
    const RB: usize = 4;
    const CB: usize = 8;
    let (rows, inp) = (x.rows(), x.cols());
    let mut y = Matrix::zeros(rows, out);
    let xs = x.as_slice();
    let ys = y.as_mut_slice();
    let full = out - out % CB;
    let mut r = 0;
    while r < rows {
        let rb = RB.min(rows - r);
        if rb == RB {
            for c in (0..full).step_by(CB) {
                let mut acc = [[0.0f64; CB]; RB];
                for a in acc.iter_mut() {
                    a.copy_from_slice(&b[c..c + CB]);
                }
                let xr: [&[f64]; RB] = std::array::from_fn(|i| &xs[(r + i) * inp..(r + i + 1) * inp]);
                for (k, wrow) in w.chunks_exact(out).enumerate().take(inp) {
                    let wk: &[f64; CB] = wrow[c..c + CB].try_into().unwrap();
                    for i in 0..RB {
                        let xv = xr[i][k];
                        for j in 0..CB {
                            acc[i][j] += xv * wk[j];
                        }
                    }
                }
                for (i, a) in acc.iter().enumerate() {
                    ys[(r + i) * out + c..(r + i) * out + c + CB].copy_from_slice(a);
                }
            }
        }
        let first_col = if rb == RB { full } else { 0 };
        for i in r..r + rb {
            let yr = &mut ys[i * out + first_col..(i + 1) * out];
            yr.copy_from_slice(&b[first_col..]);
            for k in 0..inp {
                let xv = xs[i * inp + k];
                for (yv, wv) in yr.iter_mut().zip(&w[k * out + first_col..(k + 1) * out]) {
                    *yv += xv * wv;
                }
            }
        }
        r += rb;
    }
    y
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}
