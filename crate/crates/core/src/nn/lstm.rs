//! LSTM cell over borrowed weight slices.
//!
//! Weights are laid out as one matrix `W: [4H, D + H]` acting on the
//! concatenation `[x_t; h_{t-1}]` plus a bias `b: [4H]`, gate blocks in the
//! order input, forget, cell candidate, output. Working on slices lets the
//! variational LSTM run the same kernels on freshly sampled weights.

use super::special::sigmoid;
use super::tensor::{axpy, dot, ensure_finite};
use super::{NnError, Parameter, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub input_dim: usize,
    pub hidden: usize,
}

impl<'a> LstmWeights<'a> {
    pub fn new(w: &'a [f64], b: &'a [f64], input_dim: usize, hidden: usize) -> Result<Self, NnError> {
        if w.len() != 4 * hidden * (input_dim + hidden) || b.len() != 4 * hidden {
            return Err(NnError::ShapeMismatch {
                op: "lstm_step",
                expected: format!("W [{}, {}], b [{}]", 4 * hidden, input_dim + hidden, 4 * hidden),
                got: format!("W len {}, b len {}", w.len(), b.len()),
            });
        }
        Ok(Self { w, b, input_dim, hidden })
    }

    pub fn weight_count(input_dim: usize, hidden: usize) -> usize {
        4 * hidden * (input_dim + hidden) + 4 * hidden
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass of one step needs.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`, each of length `H`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One LSTM step `(s_t, x_t) -> s_{t+1}`.
pub fn lstm_step(
    state: &LstmState,
    x: &[f64],
    weights: &LstmWeights<'_>,
) -> Result<(LstmState, LstmStepCache), NnError> {
    let (d, h) = (weights.input_dim, weights.hidden);
    if x.len() != d || state.h.len() != h || state.c.len() != h {
        return Err(NnError::ShapeMismatch {
            op: "lstm_step",
            expected: format!("x [{d}], h/c [{h}]"),
            got: format!("x [{}], h [{}], c [{}]", x.len(), state.h.len(), state.c.len()),
        });
    }
    let cols = d + h;
    let mut xh = Vec::with_capacity(cols);
    xh.extend_from_slice(x);
    xh.extend_from_slice(&state.h);

    let mut gates = vec![0.0; 4 * h];
    for (r, g) in gates.iter_mut().enumerate() {
        *g = weights.b[r] + dot(&weights.w[r * cols..(r + 1) * cols], &xh);
    }
    for r in 0..4 * h {
        gates[r] = if (2 * h..3 * h).contains(&r) {
            gates[r].tanh()
        } else {
            sigmoid(gates[r])
        };
    }
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut hn = vec![0.0; h];
    for j in 0..h {
        let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
        c[j] = f * state.c[j] + i * g;
        tanh_c[j] = c[j].tanh();
        hn[j] = o * tanh_c[j];
    }
    ensure_finite("lstm_step", &c)?;
    let cache = LstmStepCache {
        xh,
        c_prev: state.c.clone(),
        gates,
        tanh_c,
    };
    Ok((LstmState { h: hn, c }, cache))
}

/// Gradients flowing out of one step.
#[derive(Clone, Debug)]
pub struct LstmStepGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Backward through one step given `dL/dh_t` and `dL/dc_t`; accumulates
/// into `grad_w` and `grad_b`.
pub fn lstm_step_backward(
    cache: &LstmStepCache,
    dh: &[f64],
    dc: &[f64],
    weights: &LstmWeights<'_>,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> LstmStepGrads {
    let (d, h) = (weights.input_dim, weights.hidden);
    let cols = d + h;
    let g = &cache.gates;
    let mut dz = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for j in 0..h {
        let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
        let tc = cache.tanh_c[j];
        let dc_total = dc[j] + dh[j] * o * (1.0 - tc * tc);
        let d_o = dh[j] * tc;
        let d_i = dc_total * gg;
        let d_g = dc_total * i;
        let d_f = dc_total * cache.c_prev[j];
        dc_prev[j] = dc_total * f;
        dz[j] = d_i * i * (1.0 - i);
        dz[h + j] = d_f * f * (1.0 - f);
        dz[2 * h + j] = d_g * (1.0 - gg * gg);
        dz[3 * h + j] = d_o * o * (1.0 - o);
    }
    let mut dxh = vec![0.0; cols];
    for (r, &dzr) in dz.iter().enumerate() {
        if dzr == 0.0 {
            continue;
        }
        grad_b[r] += dzr;
        axpy(dzr, &cache.xh, &mut grad_w[r * cols..(r + 1) * cols]);
        axpy(dzr, &weights.w[r * cols..(r + 1) * cols], &mut dxh);
    }
    let dh_prev = dxh.split_off(d);
    LstmStepGrads {
        dx: dxh,
        dh_prev,
        dc_prev,
    }
}

/// Deterministic LSTM cell owning its parameters; unrolls over a sequence
/// with shared weights.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: Parameter,
    pub b: Parameter,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(w: Tensor, b: Tensor, input_dim: usize, hidden: usize) -> Result<Self, NnError> {
        LstmWeights::new(w.data(), b.data(), input_dim, hidden)?;
        Ok(Self {
            w: Parameter::new(w),
            b: Parameter::new(b),
            input_dim,
            hidden,
        })
    }

    fn weights(&self) -> LstmWeights<'_> {
        LstmWeights {
            w: self.w.value.data(),
            b: self.b.value.data(),
            input_dim: self.input_dim,
            hidden: self.hidden,
        }
    }

    /// Runs the sequence from a zero state; returns hidden states and caches.
    pub fn unroll(&self, xs: &[Vec<f64>]) -> Result<(Vec<LstmState>, Vec<LstmStepCache>), NnError> {
        let w = self.weights();
        let mut state = LstmState::zeros(self.hidden);
        let mut states = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = lstm_step(&state, x, &w)?;
            states.push(next.clone());
            caches.push(cache);
            state = next;
        }
        Ok((states, caches))
    }

    /// Backpropagation through time given `dL/dh_t` for every step. Each
    /// shared weight receives one contribution per step. Returns `dL/dx_t`.
    pub fn unroll_backward(&mut self, caches: &[LstmStepCache], dhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (w_val, gw, gb) = (
            self.w.value.data(),
            self.w.grad.data_mut(),
            self.b.grad.data_mut(),
        );
        let weights = LstmWeights {
            w: w_val,
            b: &[],
            input_dim: self.input_dim,
            hidden: self.hidden,
        };
        let mut dh_next = vec![0.0; self.hidden];
        let mut dc_next = vec![0.0; self.hidden];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let dh: Vec<f64> = dhs[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let grads = lstm_step_backward(&caches[t], &dh, &dc_next, &weights, gw, gb);
            dh_next = grads.dh_prev;
            dc_next = grads.dc_prev;
            dxs[t] = grads.dx;
        }
        dxs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn zero_weights_fixed_point() {
        let (d, h) = (3, 4);
        let w = vec![0.0; 4 * h * (d + h)];
        let b = vec![0.0; 4 * h];
        let weights = LstmWeights::new(&w, &b, d, h).unwrap();
        let (s, _) = lstm_step(&LstmState::zeros(h), &[0.0; 3], &weights).unwrap();
        assert!(s.h.iter().all(|&v| v == 0.0));
        assert!(s.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_is_bounded() {
        let (d, h) = (2, 5);
        let mut rng = Rng::new(11);
        let w: Vec<f64> = (0..4 * h * (d + h)).map(|_| 3.0 * rng.normal()).collect();
        let b: Vec<f64> = (0..4 * h).map(|_| rng.normal()).collect();
        let weights = LstmWeights::new(&w, &b, d, h).unwrap();
        let mut s = LstmState::zeros(h);
        for _ in 0..50 {
            let x = [50.0 * rng.normal(), 50.0 * rng.normal()];
            s = lstm_step(&s, &x, &weights).unwrap().0;
            assert!(s.h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let w = vec![0.0; LstmWeights::weight_count(2, 2) - 8];
        let b = vec![0.0; 8];
        let weights = LstmWeights::new(&w, &b, 2, 2).unwrap();
        assert!(lstm_step(&LstmState::zeros(2), &[1.0], &weights).is_err());
    }
}
