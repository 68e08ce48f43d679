//! Single-layer LSTM with a linear read-out on the last hidden state plus a
//! linear skip path from the whole input window, trained by backpropagation
//! through time and Adam. Sequences are processed in column batches.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::Rng;
use serde::{Deserialize, Serialize};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    /// Sequence length seen by the skip path.
    pub steps: usize,
    /// Gate weights `[i; f; g; o]`, column-major `4H × (D + H)`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Read-out, column-major `O × H`.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    /// Skip path, column-major `O × (steps · D)`.
    pub w_skip: Vec<f64>,
}

struct StepCache {
    xh: DMatrix<f64>,
    gates: DMatrix<f64>,
    c_prev: DMatrix<f64>,
    c: DMatrix<f64>,
}

pub struct Trace {
    steps: Vec<StepCache>,
    h_last: DMatrix<f64>,
    stacked: DMatrix<f64>,
    /// `O × B` outputs.
    pub output: DMatrix<f64>,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize, output: usize, steps: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            steps,
            w: vec![0.0; 4 * hidden * (input + hidden)],
            b: vec![0.0; 4 * hidden],
            w_out: vec![0.0; output * hidden],
            b_out: vec![0.0; output],
            w_skip: vec![0.0; output * steps * input],
        }
    }

    /// Glorot-uniform weights, forget-gate bias 1, zero read-out bias and
    /// zero skip path.
    pub fn init<R: Rng>(
        input: usize,
        hidden: usize,
        output: usize,
        steps: usize,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(input, hidden, output, steps);
        let a = (6.0 / (input + 2 * hidden) as f64).sqrt();
        for w in &mut net.w {
            *w = rng.random_range(-a..a);
        }
        for j in hidden..2 * hidden {
            net.b[j] = 1.0;
        }
        let a = (6.0 / (hidden + output) as f64).sqrt();
        for w in &mut net.w_out {
            *w = rng.random_range(-a..a);
        }
        net
    }

    pub fn parameter_count(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn buffers(&self) -> [&Vec<f64>; 5] {
        [&self.w, &self.b, &self.w_out, &self.b_out, &self.w_skip]
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.w,
            &mut self.b,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.w_skip,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.buffers()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn gate_weights(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.w, 4 * self.hidden, self.input + self.hidden)
    }

    fn readout(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.w_out, self.output, self.hidden)
    }

    fn skip(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.w_skip, self.output, self.steps * self.input)
    }

    /// Runs a batch; `xs[s]` holds step `s` of every sequence as a `D × B`
    /// matrix.
    pub fn forward_batch(&self, xs: &[DMatrix<f64>]) -> Trace {
        assert_eq!(xs.len(), self.steps, "sequence length");
        let (d, h) = (self.input, self.hidden);
        let batch = xs.first().map_or(0, |x| x.ncols());
        let mut stacked = DMatrix::<f64>::zeros(self.steps * d, batch);
        for (s, x) in xs.iter().enumerate() {
            stacked.rows_mut(s * d, d).copy_from(x);
        }
        let w = self.gate_weights();
        let mut h_prev = DMatrix::<f64>::zeros(h, batch);
        let mut c_prev = DMatrix::<f64>::zeros(h, batch);
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            debug_assert_eq!(x.nrows(), self.input);
            let mut xh = x.clone().resize_vertically(self.input + h, 0.0);
            xh.rows_mut(self.input, h).copy_from(&h_prev);
            let mut gates = w * &xh;
            let mut c = DMatrix::<f64>::zeros(h, batch);
            for col in 0..batch {
                let g = &mut gates.column_mut(col);
                for j in 0..h {
                    g[j] = sigmoid(g[j] + self.b[j]);
                    g[h + j] = sigmoid(g[h + j] + self.b[h + j]);
                    g[2 * h + j] = (g[2 * h + j] + self.b[2 * h + j]).tanh();
                    g[3 * h + j] = sigmoid(g[3 * h + j] + self.b[3 * h + j]);
                    c[(j, col)] = g[h + j] * c_prev[(j, col)] + g[j] * g[2 * h + j];
                    h_prev[(j, col)] = g[3 * h + j] * c[(j, col)].tanh();
                }
            }
            steps.push(StepCache {
                xh,
                gates,
                c_prev: std::mem::replace(&mut c_prev, c.clone()),
                c,
            });
        }
        let mut output = self.readout() * &h_prev + self.skip() * &stacked;
        for mut col in output.column_iter_mut() {
            for (o, b) in col.iter_mut().zip(&self.b_out) {
                *o += b;
            }
        }
        Trace {
            steps,
            h_last: h_prev,
            stacked,
            output,
        }
    }

    /// Output of a single sequence.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let cols: Vec<DMatrix<f64>> = xs
            .iter()
            .map(|x| DMatrix::from_column_slice(x.len(), 1, x))
            .collect();
        self.forward_batch(&cols)
            .output
            .column(0)
            .iter()
            .copied()
            .collect()
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// derivative with respect to the `O × B` output is `d_out`.
    pub fn backward(&self, trace: &Trace, d_out: &DMatrix<f64>, grad: &mut Lstm) {
        let (d, h) = (self.input, self.hidden);
        let batch = d_out.ncols();
        {
            let mut gw = DMatrixViewMut::from_slice(&mut grad.w_out, self.output, h);
            gw.gemm(1.0, d_out, &trace.h_last.transpose(), 1.0);
        }
        {
            let mut gs = DMatrixViewMut::from_slice(&mut grad.w_skip, self.output, self.steps * d);
            gs.gemm(1.0, d_out, &trace.stacked.transpose(), 1.0);
        }
        for (gb, row) in grad.b_out.iter_mut().zip(d_out.row_iter()) {
            *gb += row.sum();
        }
        let mut dh = self.readout().transpose() * d_out;
        let w_t = self.gate_weights().transpose();
        let mut dc = DMatrix::<f64>::zeros(h, batch);
        let mut dz = DMatrix::<f64>::zeros(4 * h, batch);
        for step in trace.steps.iter().rev() {
            let g = &step.gates;
            for col in 0..batch {
                for j in 0..h {
                    let (ig, fg, gg, og) = (
                        g[(j, col)],
                        g[(h + j, col)],
                        g[(2 * h + j, col)],
                        g[(3 * h + j, col)],
                    );
                    let tc = step.c[(j, col)].tanh();
                    let dhj = dh[(j, col)];
                    let dct = dc[(j, col)] + dhj * og * (1.0 - tc * tc);
                    dz[(j, col)] = dct * gg * ig * (1.0 - ig);
                    dz[(h + j, col)] = dct * step.c_prev[(j, col)] * fg * (1.0 - fg);
                    dz[(2 * h + j, col)] = dct * ig * (1.0 - gg * gg);
                    dz[(3 * h + j, col)] = dhj * tc * og * (1.0 - og);
                    dc[(j, col)] = dct * fg;
                }
            }
            {
                let mut gw = DMatrixViewMut::from_slice(&mut grad.w, 4 * h, d + h);
                gw.gemm(1.0, &dz, &step.xh.transpose(), 1.0);
            }
            for (gb, row) in grad.b.iter_mut().zip(dz.row_iter()) {
                *gb += row.sum();
            }
            dh = (&w_t * &dz).rows(d, h).into_owned();
        }
    }
}

/// Adam moment estimates for every parameter buffer of an [`Lstm`].
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Lstm,
    v: Lstm,
}

impl Adam {
    pub fn new(shape: &Lstm, lr: f64) -> Self {
        let zeros = Lstm::zeros(shape.input, shape.hidden, shape.output, shape.steps);
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Adam step with decoupled weight decay on the weight matrices.
    pub fn update(&mut self, net: &mut Lstm, grad: &Lstm, weight_decay: f64) {
        if weight_decay > 0.0 {
            let shrink = 1.0 - self.lr * weight_decay;
            net.w
                .iter_mut()
                .chain(net.w_out.iter_mut())
                .chain(net.w_skip.iter_mut())
                .for_each(|p| *p *= shrink);
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let params = net.buffers_mut();
        let grads = grad.buffers();
        let ms = self.m.buffers_mut();
        let vs = self.v.buffers_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch_inputs(rng: &mut ChaCha8Rng, d: usize, b: usize, steps: usize) -> Vec<DMatrix<f64>> {
        (0..steps)
            .map(|_| DMatrix::from_fn(d, b, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn loss(net: &Lstm, xs: &[DMatrix<f64>], target: &DMatrix<f64>) -> f64 {
        0.5 * (&net.forward_batch(xs).output - target).norm_squared()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Lstm::init(4, 5, 3, 4, &mut rng);
        net.w_skip
            .iter_mut()
            .enumerate()
            .for_each(|(k, w)| *w = 0.01 * (k % 5) as f64);
        let xs = batch_inputs(&mut rng, 4, 2, 4);
        let target = DMatrix::from_fn(3, 2, |r, c| 0.3 * r as f64 - 0.2 * c as f64);
        let trace = net.forward_batch(&xs);
        let mut grad = Lstm::zeros(4, 5, 3, 4);
        net.backward(&trace, &(&trace.output - &target), &mut grad);

        let h = 1e-6;
        for buf in 0..5 {
            let len = net.buffers()[buf].len();
            for k in (0..len).step_by(7) {
                let mut plus = net.clone();
                plus.buffers_mut()[buf][k] += h;
                let mut minus = net.clone();
                minus.buffers_mut()[buf][k] -= h;
                let fd = (loss(&plus, &xs, &target) - loss(&minus, &xs, &target)) / (2.0 * h);
                let an = grad.buffers()[buf][k];
                assert!(
                    (fd - an).abs() < 1e-7 + 1e-5 * an.abs(),
                    "buf {buf} k {k}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn batch_columns_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Lstm::init(3, 4, 2, 5, &mut rng);
        let xs = batch_inputs(&mut rng, 3, 3, 5);
        let out = net.forward_batch(&xs).output;
        let single: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.column(1).iter().copied().collect())
            .collect();
        let one = net.forward(&single);
        assert!((out[(0, 1)] - one[0]).abs() < 1e-14 && (out[(1, 1)] - one[1]).abs() < 1e-14);
    }

    #[test]
    fn adam_fits_a_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Lstm::init(2, 4, 1, 3, &mut rng);
        let mut adam = Adam::new(&net, 0.05);
        let xs = vec![DMatrix::from_column_slice(2, 1, &[0.5, -0.5]); 3];
        for _ in 0..300 {
            let trace = net.forward_batch(&xs);
            let mut grad = Lstm::zeros(2, 4, 1, 3);
            let d = trace.output.add_scalar(-2.0);
            net.backward(&trace, &d, &mut grad);
            adam.update(&mut net, &grad, 0.0);
        }
        assert!((net.forward_batch(&xs).output[0] - 2.0).abs() < 1e-3);
    }
}
