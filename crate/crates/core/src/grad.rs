//! Backpropagation and Adam for dense networks.
//!
//! Hidden layers may be sigmoid or identity; the output layer is softmax with
//! categorical cross-entropy or independent sigmoids with summed binary
//! cross-entropy. Symbolic layers have no useful gradient and are rejected.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, softmax_in_place, Activation, Hyperplane, Layer, LayerRole, Network};

/// Weights of a network as dense matrices, one `(width, fan_in)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activations: Vec<Activation>,
}

impl DenseParams {
    pub fn from_network(net: &Network) -> Self {
        DenseParams {
            weights: net.layers().iter().map(Layer::weight_matrix).collect(),
            biases: net.layers().iter().map(Layer::biases).collect(),
            activations: net.layers().iter().map(|l| l.activation).collect(),
        }
    }

    pub fn to_network(&self, roles: Vec<Option<LayerRole>>, class_names: Vec<String>) -> Result<Network> {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .zip(&self.activations)
            .map(|((w, b), &act)| {
                let neurons = w
                    .axis_iter(Axis(0))
                    .zip(b.iter())
                    .map(|(row, &bias)| Hyperplane::new(row.to_vec(), bias))
                    .collect();
                Layer::new(neurons, act)
            })
            .collect();
        Network::new(layers, roles, class_names)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn check(&self) -> Result<()> {
        let last = self.activations.len().saturating_sub(1);
        for (k, &act) in self.activations.iter().enumerate() {
            let ok = if k == last {
                matches!(act, Activation::Softmax | Activation::Sigmoid)
            } else {
                matches!(act, Activation::Sigmoid | Activation::Identity)
            };
            if !ok {
                return Err(Error::invalid(format!("layer {k} activation {act:?} is not differentiable here")));
            }
        }
        Ok(())
    }

    /// Every layer's output for the rows of `x`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut outs: Vec<Array2<f64>> = Vec::with_capacity(self.weights.len());
        for (k, w) in self.weights.iter().enumerate() {
            let input = outs.last().map_or(x, |a| a.view());
            let mut z = input.dot(&w.t());
            z += &self.biases[k];
            activate_rows(&mut z, self.activations[k]);
            outs.push(z);
        }
        outs
    }
}

fn activate_rows(z: &mut Array2<f64>, act: Activation) {
    match act {
        Activation::Sigmoid => z.mapv_inplace(sigmoid),
        Activation::Softmax => {
            if !z.is_standard_layout() {
                *z = z.as_standard_layout().into_owned();
            }
            for mut row in z.axis_iter_mut(Axis(0)) {
                softmax_in_place(row.as_slice_mut().expect("standard layout"));
            }
        }
        Activation::Identity | Activation::Symbolic => {}
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean loss and its gradient with respect to every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Gradient with respect to the inputs, when requested.
    pub input: Option<Array2<f64>>,
}

/// Mean cross-entropy over the rows of `x` and its gradient.
pub fn loss_and_grad(p: &DenseParams, x: ArrayView2<f64>, labels: &[usize], want_input: bool) -> Result<LossGrad> {
    p.check()?;
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    let depth = p.weights.len();
    let n_out = p.weights[depth - 1].nrows();
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_out) {
        return Err(Error::invalid(format!("label {bad} out of range for {n_out} outputs")));
    }
    let n = x.nrows().max(1) as f64;

    // Hidden outputs; the last layer is handled from its logits.
    let mut outs: Vec<Array2<f64>> = Vec::with_capacity(depth);
    for k in 0..depth {
        let input = if k == 0 { x } else { outs[k - 1].view() };
        let mut z = input.dot(&p.weights[k].t());
        z += &p.biases[k];
        if k + 1 < depth {
            activate_rows(&mut z, p.activations[k]);
        }
        outs.push(z);
    }

    let mut loss = 0.0;
    let mut dz = outs.pop().expect("at least one layer");
    for (i, mut row) in dz.axis_iter_mut(Axis(0)).enumerate() {
        let y = labels[i];
        match p.activations[depth - 1] {
            Activation::Softmax => {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[y];
                row.mapv_inplace(|v| (v - lse).exp());
            }
            _ => {
                for (k, v) in row.iter_mut().enumerate() {
                    loss += if k == y { softplus(-*v) } else { softplus(*v) };
                    *v = sigmoid(*v);
                }
            }
        }
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }

    let mut gw = vec![Array2::zeros((0, 0)); depth];
    let mut gb = vec![Array1::zeros(0); depth];
    let mut input_grad = None;
    for k in (0..depth).rev() {
        let input = if k == 0 { x } else { outs[k - 1].view() };
        let w = dz.t().dot(&input);
        gw[k] = if w.is_standard_layout() { w } else { w.as_standard_layout().into_owned() };
        gb[k] = dz.sum_axis(Axis(0));
        if k == 0 {
            if want_input {
                input_grad = Some(dz.dot(&p.weights[0]));
            }
            break;
        }
        let mut da = dz.dot(&p.weights[k]);
        if p.activations[k - 1] == Activation::Sigmoid {
            da.zip_mut_with(&outs[k - 1], |d, &a| *d *= a * (1.0 - a));
        }
        dz = da;
    }
    Ok(LossGrad {
        loss: loss / n,
        weights: gw,
        biases: gb,
        input: input_grad,
    })
}

/// Loss of one input and its gradient with respect to that input.
pub fn input_gradient(net: &Network, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            actual: x.len(),
        });
    }
    let p = DenseParams::from_network(net);
    let xs = ArrayView2::from_shape((1, x.len()), x).expect("one row");
    let g = loss_and_grad(&p, xs, &[label], true)?;
    let grad = g.input.expect("requested").row(0).to_vec();
    Ok((g.loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update to a list of parameter slices. Call with the same
    /// slice shapes every time.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= c.alpha * mh / (vh.sqrt() + c.eps);
            }
        }
    }

    /// Update every weight and bias of `p` from `g`.
    pub fn step_dense(&mut self, p: &mut DenseParams, g: &LossGrad) {
        let mut params: Vec<&mut [f64]> = Vec::with_capacity(2 * p.weights.len());
        for (w, b) in p.weights.iter_mut().zip(p.biases.iter_mut()) {
            params.push(w.as_slice_mut().expect("standard layout"));
            params.push(b.as_slice_mut().expect("standard layout"));
        }
        let grads: Vec<&[f64]> = g
            .weights
            .iter()
            .zip(&g.biases)
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
            .collect();
        self.step(&mut params, &grads);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small(out: Activation) -> DenseParams {
        DenseParams {
            weights: vec![
                array![[0.3, -0.7, 0.2], [0.5, 0.1, -0.4]],
                array![[1.1, -0.6], [-0.2, 0.9]],
            ],
            biases: vec![array![0.05, -0.1], array![0.2, -0.3]],
            activations: vec![Activation::Sigmoid, out],
        }
    }

    fn fixture() -> (Array2<f64>, Vec<usize>) {
        let x = array![
            [0.1, 0.9, -0.3],
            [0.7, -0.2, 0.4],
            [-0.5, 0.3, 0.8],
            [0.2, 0.2, 0.2],
            [0.9, -0.8, 0.1]
        ];
        (x, vec![0, 1, 1, 0, 1])
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        for out in [Activation::Softmax, Activation::Sigmoid] {
            let p = small(out);
            let (x, y) = fixture();
            let g = loss_and_grad(&p, x.view(), &y, true).unwrap();
            let h = 1e-6;
            for k in 0..2 {
                for idx in 0..p.weights[k].len() {
                    let (r, c) = (idx / p.weights[k].ncols(), idx % p.weights[k].ncols());
                    let mut q = p.clone();
                    q.weights[k][[r, c]] += h;
                    let up = loss_and_grad(&q, x.view(), &y, false).unwrap().loss;
                    q.weights[k][[r, c]] -= 2.0 * h;
                    let down = loss_and_grad(&q, x.view(), &y, false).unwrap().loss;
                    let fd = (up - down) / (2.0 * h);
                    assert!(rel_err(fd, g.weights[k][[r, c]]) < 1e-4, "w{k}[{r},{c}]");
                }
                for j in 0..p.biases[k].len() {
                    let mut q = p.clone();
                    q.biases[k][j] += h;
                    let up = loss_and_grad(&q, x.view(), &y, false).unwrap().loss;
                    q.biases[k][j] -= 2.0 * h;
                    let down = loss_and_grad(&q, x.view(), &y, false).unwrap().loss;
                    assert!(rel_err((up - down) / (2.0 * h), g.biases[k][j]) < 1e-4, "b{k}[{j}]");
                }
            }
            let gi = g.input.unwrap();
            for i in 0..x.nrows() {
                for j in 0..x.ncols() {
                    let mut xp = x.clone();
                    xp[[i, j]] += h;
                    let up = loss_and_grad(&p, xp.view(), &y, false).unwrap().loss;
                    xp[[i, j]] -= 2.0 * h;
                    let down = loss_and_grad(&p, xp.view(), &y, false).unwrap().loss;
                    // The mean loss divides each sample's share by n.
                    assert!(rel_err((up - down) / (2.0 * h), gi[[i, j]]) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn forward_agrees_with_network() {
        let p = small(Activation::Softmax);
        let net = p.to_network(vec![None, None], vec!["a".into(), "b".into()]).unwrap();
        let (x, _) = fixture();
        let a = p.forward(x.view()).pop().unwrap();
        let b = net.predict_proba(x.view()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-14));
        assert_eq!(DenseParams::from_network(&net), p);
    }

    #[test]
    fn symbolic_layers_are_rejected() {
        let mut p = small(Activation::Softmax);
        p.activations[0] = Activation::Symbolic;
        let (x, y) = fixture();
        assert!(loss_and_grad(&p, x.view(), &y, false).is_err());
    }

    #[test]
    fn adam_matches_reference_updates() {
        // Scalar parameter, gradients 1, −2, 0.5, checked against the
        // bias-corrected formulas evaluated by hand.
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg);
        let mut theta = [1.0];
        let grads = [1.0, -2.0, 0.5];
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expect = 1.0f64;
        for (t, &g) in grads.iter().enumerate() {
            adam.step(&mut [&mut theta[..]], &[&[g][..]]);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            expect -= 0.001 * mh / (vh.sqrt() + 1e-8);
            assert_eq!(theta[0], expect);
        }
        // First step of Adam moves by alpha regardless of gradient scale.
        let mut fresh = Adam::new(cfg);
        let mut th = [0.0];
        fresh.step(&mut [&mut th[..]], &[&[123.0][..]]);
        assert!((th[0] + 0.001).abs() < 1e-10);
    }
}
