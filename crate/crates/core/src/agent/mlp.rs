//! Fully connected network with tanh hidden layers and a linear output layer.
//!
//! Parameters live in one flat vector. Layer `l` holds a `rows × cols` block in
//! row-major order with `rows = outputs` and `cols = inputs + 1`; the last column
//! is the bias.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `(rows, cols)` per layer.
    shapes: Vec<(usize, usize)>,
    params: Vec<f64>,
}

/// Per-layer activations from a forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl Mlp {
    /// `sizes = [inputs, hidden…, outputs]`. Weights are uniform in `±gain/√fan_in`
    /// (`output_gain` for the last layer); biases start at zero.
    pub fn new(sizes: &[usize], output_gain: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "network needs positive layer sizes");
        let shapes: Vec<(usize, usize)> = sizes.windows(2).map(|w| (w[1], w[0] + 1)).collect();
        let mut params = Vec::with_capacity(shapes.iter().map(|(r, c)| r * c).sum());
        for (l, &(rows, cols)) in shapes.iter().enumerate() {
            let gain = if l + 1 == shapes.len() { output_gain } else { 1.0 };
            let bound = gain / ((cols - 1) as f64).sqrt();
            for _ in 0..rows {
                for c in 0..cols {
                    params.push(if c + 1 == cols || bound == 0.0 { 0.0 } else { rng.random_range(-bound..bound) });
                }
            }
        }
        Self { shapes, params }
    }

    pub fn from_parts(shapes: Vec<(usize, usize)>, params: Vec<f64>) -> Result<Self> {
        if shapes.is_empty() || shapes.iter().any(|&(r, c)| r == 0 || c < 2) {
            return Err(Error::Format("layer shapes must be non-empty with at least one input".into()));
        }
        for w in shapes.windows(2) {
            if w[1].1 != w[0].0 + 1 {
                return Err(Error::Format("consecutive layer shapes do not chain".into()));
            }
        }
        let n: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if params.len() != n {
            return Err(Error::Format(format!("expected {n} weights, got {}", params.len())));
        }
        Ok(Self { shapes, params })
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].1 - 1
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().expect("non-empty").0
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

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut offset = 0;
        for (l, &(rows, cols)) in self.shapes.iter().enumerate() {
            cur = affine(&self.params[offset..offset + rows * cols], rows, cols, &cur);
            if l + 1 < self.shapes.len() {
                cur.iter_mut().for_each(|v| *v = v.tanh());
            }
            offset += rows * cols;
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut acts = Vec::with_capacity(self.shapes.len() + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for (l, &(rows, cols)) in self.shapes.iter().enumerate() {
            let mut out = affine(&self.params[offset..offset + rows * cols], rows, cols, acts.last().unwrap());
            if l + 1 < self.shapes.len() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
            offset += rows * cols;
        }
        Trace { acts }
    }

    /// Accumulates `∂(grad_out · output)/∂params` into `grad`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = grad_out.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.shapes.len()).rev() {
            let (rows, cols) = self.shapes[l];
            offset -= rows * cols;
            let input = &trace.acts[l];
            let w = &self.params[offset..offset + rows * cols];
            let g = &mut grad[offset..offset + rows * cols];
            for r in 0..rows {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                let row = &mut g[r * cols..(r + 1) * cols];
                for (gc, &xi) in row[..cols - 1].iter_mut().zip(input) {
                    *gc += d * xi;
                }
                row[cols - 1] += d;
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; cols - 1];
            for r in 0..rows {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (p, &wv) in prev.iter_mut().zip(&w[r * cols..r * cols + cols - 1]) {
                    *p += d * wv;
                }
            }
            // through tanh: d/dz tanh = 1 − a²
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}

fn affine(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            row[..cols - 1].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[cols - 1]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn shapes_and_param_count() {
        let net = Mlp::new(&[25, 64, 64, 3], 0.01, &mut seeded_rng(0));
        assert_eq!(net.layer_shapes(), &[(64, 26), (64, 65), (3, 65)]);
        assert_eq!(net.num_params(), 64 * 26 + 64 * 65 + 3 * 65);
        assert_eq!(net.forward(&[0.0; 25]).len(), 3);
    }

    #[test]
    fn hand_computed_forward() {
        // 2 → 1 → 1: h = tanh(0.5·x0 − x1 + 0.1), y = 2h − 0.3
        let net = Mlp::from_parts(vec![(1, 3), (1, 2)], vec![0.5, -1.0, 0.1, 2.0, -0.3]).unwrap();
        let x = [0.4, 0.2];
        let h: f64 = (0.5 * 0.4 - 0.2 + 0.1f64).tanh();
        assert!((net.forward(&x)[0] - (2.0 * h - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded_rng(3);
        let net = Mlp::new(&[4, 5, 3, 2], 1.0, &mut rng);
        let x = [0.3, -0.7, 1.1, 0.05];
        let coef = [0.8, -1.3];
        let f = |n: &Mlp| n.forward(&x).iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&net.forward_trace(&x), &coef, &mut grad);
        let h = 1e-6;
        for i in 0..net.num_params() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let up = f(&p);
            p.params_mut()[i] -= 2.0 * h;
            let fd = (up - f(&p)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn trace_output_matches_forward() {
        let net = Mlp::new(&[3, 8, 2], 1.0, &mut seeded_rng(9));
        let x = [0.1, 0.2, -0.3];
        assert_eq!(net.forward_trace(&x).output(), net.forward(&x).as_slice());
    }

    #[test]
    fn mismatched_parts_rejected() {
        assert!(Mlp::from_parts(vec![(2, 3), (1, 4)], vec![0.0; 10]).is_err());
        assert!(Mlp::from_parts(vec![(2, 3)], vec![0.0; 5]).is_err());
    }
}
