use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Graph handles for one LSTM layer. Gate blocks along the `4h` axis are
/// ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

impl LstmWeights {
    pub fn hidden_size(&self, g: &Graph) -> usize {
        g.value(self.recurrent).shape()[0]
    }
}

/// One LSTM step: i, f, o = σ(·), g = tanh(·), c = f⊙c_prev + i⊙g,
/// h = o⊙tanh(c). All of `x`, `h_prev`, `c_prev` are vectors.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmWeights,
) -> Result<(Var, Var)> {
    let projected = g.matmul(x, w.input)?;
    let projected = g.add_row(projected, w.bias)?;
    lstm_step(g, projected, h_prev, c_prev, w)
}

fn lstm_step(
    g: &mut Graph,
    projected: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmWeights,
) -> Result<(Var, Var)> {
    let h = w.hidden_size(g);
    if g.value(projected).len() != 4 * h || g.value(c_prev).len() != h {
        return Err(Error::shape(
            "lstm_cell",
            format!(
                "gates {:?}, cell {:?}, hidden size {h}",
                g.value(projected).shape(),
                g.value(c_prev).shape()
            ),
        ));
    }
    let recur = g.matmul(h_prev, w.recurrent)?;
    let gates = g.add(projected, recur)?;
    let i = g.slice_cols(gates, 0, h)?;
    let f = g.slice_cols(gates, h, h)?;
    let cand = g.slice_cols(gates, 2 * h, h)?;
    let o = g.slice_cols(gates, 3 * h, h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let squashed = g.tanh(c);
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c))
}

/// Runs the layer left to right over the rows of `xs` from a zero state and
/// returns every hidden state.
pub fn lstm_sequence(g: &mut Graph, xs: Var, w: &LstmWeights) -> Result<Vec<Var>> {
    let n = g.value(xs).matrix_dims().map_or(0, |(r, _)| r);
    let h = w.hidden_size(g);
    let projected = g.matmul(xs, w.input)?;
    let projected = g.add_row(projected, w.bias)?;
    let mut state = g.constant(super::Tensor::zeros(&[h]));
    let mut cell = state;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let row = g.row(projected, t)?;
        let (h_t, c_t) = lstm_step(g, row, state, cell, w)?;
        out.push(h_t);
        state = h_t;
        cell = c_t;
    }
    Ok(out)
}
