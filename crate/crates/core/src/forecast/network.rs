//! Batched LSTM / BiLSTM / dense networks with hand-written backpropagation
//! through time.
//!
//! A batch of windows is passed as `T` matrices of shape `(B, F)`, one per
//! time step. Gate pre-activations are laid out as `[input | forget | cell |
//! output]`, each `hidden` columns wide.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;
use crate::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of one unidirectional LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `(input_dim, 4 * hidden_dim)`
    pub wx: Array2<f64>,
    /// `(hidden_dim, 4 * hidden_dim)`
    pub wh: Array2<f64>,
    /// `4 * hidden_dim`
    pub b: Array1<f64>,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmTape {
    xs: Vec<Array2<f64>>,
    /// `h_0 ..= h_T`, `h_0 = 0`.
    hs: Vec<Array2<f64>>,
    /// `c_0 ..= c_T`, `c_0 = 0`.
    cs: Vec<Array2<f64>>,
    /// Activated gates per step, `(B, 4H)`.
    gates: Vec<Array2<f64>>,
    tanh_cs: Vec<Array2<f64>>,
}

impl LstmTape {
    /// Hidden outputs `h_1 ..= h_T`.
    pub(crate) fn outputs(&self) -> &[Array2<f64>] {
        &self.hs[1..]
    }
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            wx: Array2::zeros((input_dim, 4 * hidden_dim)),
            wh: Array2::zeros((hidden_dim, 4 * hidden_dim)),
            b: Array1::zeros(4 * hidden_dim),
        }
    }

    /// Uniform `(-1/sqrt(H), 1/sqrt(H))` weights, zero biases except the
    /// forget gate at 1.0.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SimRng) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let mut p = Self::zeros(input_dim, hidden_dim);
        p.wx.mapv_inplace(|_| rng.random_range(-k..k));
        p.wh.mapv_inplace(|_| rng.random_range(-k..k));
        p.b.slice_mut(s![hidden_dim..2 * hidden_dim]).fill(1.0);
        p
    }

    pub(crate) fn forward_seq(&self, xs: Vec<Array2<f64>>) -> LstmTape {
        let batch = xs[0].nrows();
        let h = self.hidden_dim;
        let mut tape = LstmTape {
            hs: vec![Array2::zeros((batch, h))],
            cs: vec![Array2::zeros((batch, h))],
            gates: Vec::with_capacity(xs.len()),
            tanh_cs: Vec::with_capacity(xs.len()),
            xs: Vec::new(),
        };
        for x in &xs {
            let mut z = Array2::from_shape_fn((batch, 4 * h), |(_, j)| self.b[j]);
            general_mat_mul(1.0, x, &self.wx, 1.0, &mut z);
            general_mat_mul(1.0, tape.hs.last().unwrap(), &self.wh, 1.0, &mut z);
            let c_prev = tape.cs.last().unwrap();
            let mut c = Array2::zeros((batch, h));
            let mut tc = Array2::zeros((batch, h));
            let mut hn = Array2::zeros((batch, h));
            {
                let zs = z.as_slice_mut().unwrap();
                let cp = c_prev.as_slice().unwrap();
                let cs = c.as_slice_mut().unwrap();
                let tcs = tc.as_slice_mut().unwrap();
                let hs = hn.as_slice_mut().unwrap();
                for r in 0..batch {
                    let g = &mut zs[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        let i = sigmoid(g[j]);
                        let f = sigmoid(g[h + j]);
                        let cand = g[2 * h + j].tanh();
                        let o = sigmoid(g[3 * h + j]);
                        g[j] = i;
                        g[h + j] = f;
                        g[2 * h + j] = cand;
                        g[3 * h + j] = o;
                        let cv = f * cp[r * h + j] + i * cand;
                        let t = cv.tanh();
                        cs[r * h + j] = cv;
                        tcs[r * h + j] = t;
                        hs[r * h + j] = o * t;
                    }
                }
            }
            tape.gates.push(z);
            tape.cs.push(c);
            tape.tanh_cs.push(tc);
            tape.hs.push(hn);
        }
        tape.xs = xs;
        tape
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx_t`.
    /// `d_hs[t]` is the upstream gradient of `h_{t+1}`, `None` meaning zero.
    pub(crate) fn backward_seq(
        &self,
        tape: &LstmTape,
        d_hs: &[Option<Array2<f64>>],
        grad: &mut LstmParams,
    ) -> Vec<Array2<f64>> {
        let steps = tape.xs.len();
        let batch = tape.xs[0].nrows();
        let h = self.hidden_dim;
        let mut dh_next: Array2<f64> = Array2::zeros((batch, h));
        let mut dc_next: Array2<f64> = Array2::zeros((batch, h));
        let mut dxs = vec![Array2::zeros((0, 0)); steps];
        let mut dz = Array2::zeros((batch, 4 * h));
        for t in (0..steps).rev() {
            if let Some(d) = &d_hs[t] {
                dh_next += d;
            }
            {
                let dzs = dz.as_slice_mut().unwrap();
                let dhs = dh_next.as_slice().unwrap();
                let dcs = dc_next.as_slice_mut().unwrap();
                let gs = tape.gates[t].as_slice().unwrap();
                let cp = tape.cs[t].as_slice().unwrap();
                let tcs = tape.tanh_cs[t].as_slice().unwrap();
                for r in 0..batch {
                    let g = &gs[r * 4 * h..(r + 1) * 4 * h];
                    let d = &mut dzs[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        let idx = r * h + j;
                        let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                        let dh = dhs[idx];
                        let tc = tcs[idx];
                        let d_o = dh * tc;
                        let dc = dcs[idx] + dh * o * (1.0 - tc * tc);
                        d[j] = dc * cand * i * (1.0 - i);
                        d[h + j] = dc * cp[idx] * f * (1.0 - f);
                        d[2 * h + j] = dc * i * (1.0 - cand * cand);
                        d[3 * h + j] = d_o * o * (1.0 - o);
                        dcs[idx] = dc * f;
                    }
                }
            }
            general_mat_mul(1.0, &tape.xs[t].t(), &dz, 1.0, &mut grad.wx);
            general_mat_mul(1.0, &tape.hs[t].t(), &dz, 1.0, &mut grad.wh);
            grad.b += &dz.sum_axis(Axis(0));
            dxs[t] = dz.dot(&self.wx.t());
            dh_next = dz.dot(&self.wh.t());
        }
        dxs
    }

    /// Runs one window (`W x input_dim`) and returns the hidden sequence
    /// (`W x hidden_dim`) with the final `(h, c)` state.
    pub fn forward_window(
        &self,
        window: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, (Array1<f64>, Array1<f64>))> {
        if window.ncols() != self.input_dim || window.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "window is {}x{}, layer expects width {}",
                window.nrows(),
                window.ncols(),
                self.input_dim
            )));
        }
        let xs = window
            .rows()
            .into_iter()
            .map(|r| r.to_owned().insert_axis(Axis(0)))
            .collect();
        let tape = self.forward_seq(xs);
        let mut seq = Array2::zeros((window.nrows(), self.hidden_dim));
        for (t, h) in tape.outputs().iter().enumerate() {
            seq.row_mut(t).assign(&h.row(0));
        }
        let h_last = tape.hs.last().unwrap().row(0).to_owned();
        let c_last = tape.cs.last().unwrap().row(0).to_owned();
        Ok((seq, (h_last, c_last)))
    }

    fn tensors(&self) -> [&[f64]; 3] {
        [
            self.wx.as_slice().unwrap(),
            self.wh.as_slice().unwrap(),
            self.b.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.wx.as_slice_mut().unwrap(),
            self.wh.as_slice_mut().unwrap(),
            self.b.as_slice_mut().unwrap(),
        ]
    }
}

/// Forward and backward LSTMs whose outputs are concatenated per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    /// Hidden sequences `(forward, backward)` for one window, both indexed by
    /// input time.
    pub fn forward_window(&self, window: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (fwd, _) = self.forward.forward_window(window)?;
        let mut rev = window.to_owned();
        rev.invert_axis(Axis(0));
        let (mut bwd, _) = self.backward.forward_window(rev.view())?;
        bwd.invert_axis(Axis(0));
        Ok((fwd, bwd))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `(in, out)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut SimRng) -> Self {
        let k = (6.0 / (input + output) as f64).sqrt();
        Dense {
            w: Array2::from_shape_fn((input, output), |_| rng.random_range(-k..k)),
            b: Array1::zeros(output),
            activation,
        }
    }

    fn zeros_like(&self) -> Self {
        Dense {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.len()),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recurrent {
    /// The window is flattened row-major and fed to the dense head.
    None,
    Unidirectional(Vec<LstmParams>),
    /// Sequence representation is `[h_fwd(T), h_bwd(1)]`.
    Bidirectional(Vec<BiLstmParams>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub window: usize,
    pub input_dim: usize,
    pub recurrent: Recurrent,
    pub head: Vec<Dense>,
    /// Dropout rate after every hidden dense layer.
    pub dropout: f64,
}

enum RecTape {
    None,
    Uni(Vec<LstmTape>),
    Bi(Vec<(LstmTape, LstmTape)>),
}

struct DenseTape {
    input: Array2<f64>,
    pre: Array2<f64>,
    /// Inverted-dropout mask applied to this layer's output.
    mask: Option<Array2<f64>>,
}

pub(crate) struct Tape {
    rec: RecTape,
    dense: Vec<DenseTape>,
}

impl Network {
    pub fn output_dim(&self) -> usize {
        self.head.last().map_or(0, |d| d.b.len())
    }

    /// Dimension of the recurrent summary fed to the dense head.
    pub fn repr_dim(&self) -> usize {
        match &self.recurrent {
            Recurrent::None => self.window * self.input_dim,
            Recurrent::Unidirectional(ls) => ls.last().unwrap().hidden_dim,
            Recurrent::Bidirectional(ls) => 2 * ls.last().unwrap().forward.hidden_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |l: &LstmParams| LstmParams::zeros(l.input_dim, l.hidden_dim);
        Network {
            window: self.window,
            input_dim: self.input_dim,
            recurrent: match &self.recurrent {
                Recurrent::None => Recurrent::None,
                Recurrent::Unidirectional(ls) => Recurrent::Unidirectional(ls.iter().map(zero).collect()),
                Recurrent::Bidirectional(ls) => Recurrent::Bidirectional(
                    ls.iter()
                        .map(|b| BiLstmParams {
                            forward: zero(&b.forward),
                            backward: zero(&b.backward),
                        })
                        .collect(),
                ),
            },
            head: self.head.iter().map(Dense::zeros_like).collect(),
            dropout: self.dropout,
        }
    }

    /// Parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        match &self.recurrent {
            Recurrent::None => {}
            Recurrent::Unidirectional(ls) => ls.iter().for_each(|l| out.extend(l.tensors())),
            Recurrent::Bidirectional(ls) => ls.iter().for_each(|b| {
                out.extend(b.forward.tensors());
                out.extend(b.backward.tensors());
            }),
        }
        for d in &self.head {
            out.push(d.w.as_slice().unwrap());
            out.push(d.b.as_slice().unwrap());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        match &mut self.recurrent {
            Recurrent::None => {}
            Recurrent::Unidirectional(ls) => ls.iter_mut().for_each(|l| out.extend(l.tensors_mut())),
            Recurrent::Bidirectional(ls) => ls.iter_mut().for_each(|b| {
                out.extend(b.forward.tensors_mut());
                out.extend(b.backward.tensors_mut());
            }),
        }
        for d in &mut self.head {
            out.push(d.w.as_slice_mut().unwrap());
            out.push(d.b.as_slice_mut().unwrap());
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Batched forward pass. Dropout masks are drawn from `dropout_rng` when
    /// given and the rate is positive; otherwise inference semantics apply.
    pub(crate) fn forward(
        &self,
        xs: &[Array2<f64>],
        dropout_rng: Option<&mut SimRng>,
    ) -> (Array2<f64>, Tape) {
        let batch = xs[0].nrows();
        let (repr, rec) = match &self.recurrent {
            Recurrent::None => {
                let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
                (ndarray::concatenate(Axis(1), &views).unwrap(), RecTape::None)
            }
            Recurrent::Unidirectional(layers) => {
                let mut input = xs.to_vec();
                let mut tapes = Vec::with_capacity(layers.len());
                for l in layers {
                    let tape = l.forward_seq(input);
                    input = tape.outputs().to_vec();
                    tapes.push(tape);
                }
                (input.pop().unwrap(), RecTape::Uni(tapes))
            }
            Recurrent::Bidirectional(layers) => {
                let mut input = xs.to_vec();
                let mut tapes = Vec::with_capacity(layers.len());
                for l in layers {
                    let rev: Vec<_> = input.iter().rev().cloned().collect();
                    let tf = l.forward.forward_seq(input);
                    let tb = l.backward.forward_seq(rev);
                    let steps = tf.outputs().len();
                    input = (0..steps)
                        .map(|t| {
                            ndarray::concatenate(
                                Axis(1),
                                &[tf.outputs()[t].view(), tb.outputs()[steps - 1 - t].view()],
                            )
                            .unwrap()
                        })
                        .collect();
                    tapes.push((tf, tb));
                }
                let (tf, tb) = tapes.last().unwrap();
                let repr = ndarray::concatenate(
                    Axis(1),
                    &[tf.outputs().last().unwrap().view(), tb.outputs().last().unwrap().view()],
                )
                .unwrap();
                (repr, RecTape::Bi(tapes))
            }
        };
        debug_assert_eq!(repr.nrows(), batch);

        let mut rng = dropout_rng.filter(|_| self.dropout > 0.0);
        let keep = 1.0 - self.dropout;
        let mut dense = Vec::with_capacity(self.head.len());
        let mut a = repr;
        let last = self.head.len() - 1;
        for (li, d) in self.head.iter().enumerate() {
            let mut pre = Array2::from_shape_fn((batch, d.b.len()), |(_, j)| d.b[j]);
            general_mat_mul(1.0, &a, &d.w, 1.0, &mut pre);
            let mut out = match d.activation {
                Activation::Relu => pre.mapv(|v| v.max(0.0)),
                Activation::Identity => pre.clone(),
            };
            let mask = match rng.as_deref_mut() {
                Some(r) if li != last => {
                    let m = Array2::from_shape_fn(out.raw_dim(), |_| {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    out *= &m;
                    Some(m)
                }
                _ => None,
            };
            dense.push(DenseTape { input: a, pre, mask });
            a = out;
        }
        (a, Tape { rec, dense })
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/doutput`.
    pub(crate) fn backward(&self, tape: &Tape, d_out: Array2<f64>, grad: &mut Network) {
        let mut d = d_out;
        for (li, (layer, t)) in self.head.iter().zip(&tape.dense).enumerate().rev() {
            if let Some(m) = &t.mask {
                d *= m;
            }
            if layer.activation == Activation::Relu {
                d.zip_mut_with(&t.pre, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let g = &mut grad.head[li];
            general_mat_mul(1.0, &t.input.t(), &d, 1.0, &mut g.w);
            g.b += &d.sum_axis(Axis(0));
            d = d.dot(&layer.w.t());
        }

        match (&self.recurrent, &tape.rec, &mut grad.recurrent) {
            (Recurrent::None, RecTape::None, Recurrent::None) => {}
            (Recurrent::Unidirectional(layers), RecTape::Uni(tapes), Recurrent::Unidirectional(gl)) => {
                let steps = self.window;
                let mut d_hs: Vec<Option<Array2<f64>>> = vec![None; steps];
                d_hs[steps - 1] = Some(d);
                for l in (0..layers.len()).rev() {
                    let dx = layers[l].backward_seq(&tapes[l], &d_hs, &mut gl[l]);
                    d_hs = dx.into_iter().map(Some).collect();
                }
            }
            (Recurrent::Bidirectional(layers), RecTape::Bi(tapes), Recurrent::Bidirectional(gl)) => {
                let steps = self.window;
                let h = layers.last().unwrap().forward.hidden_dim;
                // gradients wrt each layer's concatenated output, by input time
                let mut d_out: Vec<Option<Array2<f64>>> = vec![None; steps];
                let mut top = Array2::zeros((d.nrows(), 2 * h));
                top.assign(&d);
                // forward half belongs to the last step, backward half to the first
                let mut last = Array2::zeros((d.nrows(), 2 * h));
                last.slice_mut(s![.., ..h]).assign(&top.slice(s![.., ..h]));
                let mut first = Array2::zeros((d.nrows(), 2 * h));
                first.slice_mut(s![.., h..]).assign(&top.slice(s![.., h..]));
                d_out[steps - 1] = Some(last);
                if steps == 1 {
                    *d_out[0].as_mut().unwrap() += &first;
                } else {
                    d_out[0] = Some(first);
                }
                for l in (0..layers.len()).rev() {
                    let h = layers[l].forward.hidden_dim;
                    let (tf, tb) = &tapes[l];
                    let df: Vec<Option<Array2<f64>>> = d_out
                        .iter()
                        .map(|o| o.as_ref().map(|a| a.slice(s![.., ..h]).to_owned()))
                        .collect();
                    // backward direction processes time reversed
                    let db: Vec<Option<Array2<f64>>> = d_out
                        .iter()
                        .rev()
                        .map(|o| o.as_ref().map(|a| a.slice(s![.., h..]).to_owned()))
                        .collect();
                    let gb = &mut gl[l];
                    let dxf = layers[l].forward.backward_seq(tf, &df, &mut gb.forward);
                    let dxb = layers[l].backward.backward_seq(tb, &db, &mut gb.backward);
                    d_out = (0..steps)
                        .map(|t| Some(&dxf[t] + &dxb[steps - 1 - t]))
                        .collect();
                }
            }
            _ => unreachable!("gradient network shape differs from model"),
        }
    }

    /// Inference on a batch.
    pub fn predict(&self, xs: &[Array2<f64>]) -> Array2<f64> {
        self.forward(xs, None).0
    }
}

/// Stacks windows (`W x F` each) into `W` batch matrices of shape `(B, F)`.
pub fn batch_inputs<'a, I>(windows: I, window: usize, width: usize) -> Vec<Array2<f64>>
where
    I: IntoIterator<Item = ArrayView2<'a, f64>>,
{
    let windows: Vec<_> = windows.into_iter().collect();
    (0..window)
        .map(|t| {
            Array2::from_shape_fn((windows.len(), width), |(r, f)| windows[r][[t, f]])
        })
        .collect()
}

/// Mean squared error over all entries and its gradient wrt `pred`.
pub(crate) fn mse_with_grad(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::array;

    #[test]
    fn zero_weights_give_zero_hidden() {
        let p = LstmParams::zeros(3, 4);
        let w = Array2::from_elem((5, 3), 0.7);
        let (seq, (h, c)) = p.forward_window(w.view()).unwrap();
        assert!(seq.iter().all(|v| *v == 0.0));
        assert!(h.iter().all(|v| *v == 0.0));
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_matches_closed_form() {
        let mut rng = substream(3, "t", &[]);
        let p = LstmParams::init(2, 1, &mut rng);
        let x = array![[0.3, -1.2]];
        let (seq, (h, c)) = p.forward_window(x.view()).unwrap();
        // hand evaluation with h0 = c0 = 0
        let z = |g: usize| p.wx[[0, g]] * 0.3 + p.wx[[1, g]] * -1.2 + p.b[g];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (i, cand, o) = (sig(z(0)), z(2).tanh(), sig(z(3)));
        let c1 = i * cand;
        let h1 = o * c1.tanh();
        assert!((c[0] - c1).abs() < 1e-15);
        assert!((h[0] - h1).abs() < 1e-15);
        assert_eq!(seq[[0, 0]], h[0]);
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = substream(1, "t", &[]);
        let p = LstmParams::init(3, 5, &mut rng);
        assert!(p.b.slice(s![5..10]).iter().all(|v| *v == 1.0));
        assert!(p.b.slice(s![0..5]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bidirectional_palindrome_symmetry() {
        let mut rng = substream(5, "t", &[]);
        let l = LstmParams::init(2, 3, &mut rng);
        let bi = BiLstmParams {
            forward: l.clone(),
            backward: l,
        };
        let w = array![[0.1, 0.5], [-0.4, 0.2], [0.9, -0.3], [-0.4, 0.2], [0.1, 0.5]];
        let (f, mut b) = bi.forward_window(w.view()).unwrap();
        b.invert_axis(Axis(0));
        for (x, y) in f.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = LstmParams::zeros(3, 2);
        let w = Array2::zeros((4, 2));
        assert!(matches!(p.forward_window(w.view()), Err(Error::ShapeMismatch(_))));
    }
}
