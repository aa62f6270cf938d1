use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Single-layer LSTM with gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[input, 4·hidden]`
    pub w_x: Tensor,
    /// `[hidden, 4·hidden]`
    pub w_h: Tensor,
    /// `[4·hidden]`
    pub b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

impl LstmParams {
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / math::sqrt(hidden as f64);
        Self {
            w_x: Tensor::uniform(vec![input, 4 * hidden], scale, rng),
            w_h: Tensor::uniform(vec![hidden, 4 * hidden], scale, rng),
            b: Tensor::uniform(vec![4 * hidden], scale, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Tensor::zeros(vec![input, 4 * hidden]),
            w_h: Tensor::zeros(vec![hidden, 4 * hidden]),
            b: Tensor::zeros(vec![4 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LstmVars {
        LstmVars {
            w_x: tape.leaf(&self.w_x, trainable),
            w_h: tape.leaf(&self.w_h, trainable),
            b: tape.leaf(&self.b, trainable),
        }
    }

    pub(crate) fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((alloc::format!("{prefix}.w_x"), &self.w_x));
        out.push((alloc::format!("{prefix}.w_h"), &self.w_h));
        out.push((alloc::format!("{prefix}.b"), &self.b));
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.w_x);
        out.push(&mut self.w_h);
        out.push(&mut self.b);
    }
}

impl LstmVars {
    pub fn vars(&self) -> [Var; 3] {
        [self.w_x, self.w_h, self.b]
    }
}

/// One LSTM step over a batch: `x` is `[B, input]`, `h` and `c` are `[B, hidden]`.
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hidden = tape.shape(p.w_h)[0];
    let zx = tape.matmul(x, p.w_x)?;
    let zh = tape.matmul(h, p.w_h)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_bias(z, p.b)?;
    let i = tape.slice_cols(z, 0, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(z, hidden, hidden)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(z, 2 * hidden, hidden)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(z, 3 * hidden, hidden)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}
