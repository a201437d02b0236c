//! Differentiable primitives: linear layers, ReLU, softmax, inverted dropout,
//! and an LSTM cell, each with a hand-written backward pass. The model is a
//! fixed architecture, so there is no autodiff graph; forward passes return
//! whatever caches their backward needs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::tensor::Matrix;

/// `y = x W + b` for a row vector `x` of length `w.rows()`.
pub fn linear_forward<S: Scalar>(x: &[S], w: &Matrix<S>, b: &[S]) -> Result<Vec<S>> {
    if x.len() != w.rows() {
        return Err(Error::Dim(format!(
            "linear: input length {} vs weight rows {}",
            x.len(),
            w.rows()
        )));
    }
    if b.len() != w.cols() {
        return Err(Error::Dim(format!(
            "linear: bias length {} vs weight cols {}",
            b.len(),
            w.cols()
        )));
    }
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi != S::zero() {
            let row = w.row(i);
            for (yj, &wij) in y.iter_mut().zip(row) {
                *yj += xi * wij;
            }
        }
    }
    Ok(y)
}

/// Accumulates `dw += x^T dy`, `db += dy` and writes `dx = dy W^T`.
pub fn linear_backward<S: Scalar>(
    x: &[S],
    w: &Matrix<S>,
    dy: &[S],
    dw: &mut Matrix<S>,
    db: &mut [S],
    dx: &mut [S],
) {
    debug_assert_eq!(x.len(), w.rows());
    debug_assert_eq!(dy.len(), w.cols());
    debug_assert_eq!(dx.len(), x.len());
    for (dbj, &dyj) in db.iter_mut().zip(dy) {
        *dbj += dyj;
    }
    let cols = w.cols();
    for (i, &xi) in x.iter().enumerate() {
        let wrow = w.row(i);
        let dwrow = &mut dw.values_mut()[i * cols..(i + 1) * cols];
        let mut acc = S::zero();
        for j in 0..cols {
            acc += wrow[j] * dy[j];
            if xi != S::zero() {
                dwrow[j] += xi * dy[j];
            }
        }
        dx[i] = acc;
    }
}

/// Elementwise `max(0, x)`.
pub fn relu<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v.max(S::zero())).collect()
}

/// `dx = dy` where the pre-activation was positive, else zero.
pub fn relu_backward<S: Scalar>(pre: &[S], dy: &[S], dx: &mut [S]) {
    for ((dxi, &p), &dyi) in dx.iter_mut().zip(pre).zip(dy) {
        *dxi = if p > S::zero() { dyi } else { S::zero() };
    }
}

/// Numerically stable softmax (max subtraction). Errors on an empty input.
pub fn softmax<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    if v.is_empty() {
        return Err(Error::Dim("softmax of empty vector".into()));
    }
    let max = v.iter().cloned().fold(v[0], S::max);
    let exps: Vec<S> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: S = exps.iter().cloned().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `dx_i = y_i (dy_i - sum_j y_j dy_j)` with `y = softmax(x)`.
pub fn softmax_backward<S: Scalar>(y: &[S], dy: &[S], dx: &mut [S]) {
    let dot: S = y.iter().zip(dy).map(|(&yi, &di)| yi * di).sum();
    for ((dxi, &yi), &dyi) in dx.iter_mut().zip(y).zip(dy) {
        *dxi = yi * (dyi - dot);
    }
}

/// Per-entry multiplier applied by a dropout draw; `None` means identity
/// (eval mode or rate 0). Backward multiplies by the same mask.
pub type DropoutMask<S> = Option<Vec<S>>;

/// Inverted dropout: in training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; in eval mode the input
/// passes through untouched.
pub fn dropout<S: Scalar, R: Rng + ?Sized>(
    x: &[S],
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Vec<S>, DropoutMask<S>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.to_vec(), None));
    }
    let keep_scale = S::of(1.0 / (1.0 - rate));
    let mask: Vec<S> = x
        .iter()
        .map(|_| {
            if rng.gen::<f64>() < rate {
                S::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let y = x.iter().zip(&mask).map(|(&xi, &m)| xi * m).collect();
    Ok((y, Some(mask)))
}

pub fn dropout_backward<S: Scalar>(mask: &DropoutMask<S>, dy: &[S], dx: &mut [S]) {
    match mask {
        None => dx.copy_from_slice(dy),
        Some(m) => {
            for ((dxi, &mi), &dyi) in dx.iter_mut().zip(m).zip(dy) {
                *dxi = mi * dyi;
            }
        }
    }
}

/// Hidden and cell vectors of one recurrent unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<S> {
    pub hidden: Vec<S>,
    pub cell: Vec<S>,
}

impl<S: Scalar> LstmState<S> {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            hidden: vec![S::zero(); hidden_size],
            cell: vec![S::zero(); hidden_size],
        }
    }
}

/// Everything the LSTM backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmCache<S> {
    pub x: Vec<S>,
    pub h_prev: Vec<S>,
    pub c_prev: Vec<S>,
    pub i: Vec<S>,
    pub f: Vec<S>,
    pub g: Vec<S>,
    pub o: Vec<S>,
    pub c_new: Vec<S>,
    pub tanh_c: Vec<S>,
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// One LSTM step. Gate pre-activations are laid out `[i, f, g, o]` along the
/// `4H` axis of `wx` (input-to-hidden, `n x 4H`), `wh` (hidden-to-hidden,
/// `H x 4H`) and `b` (`4H`); that order is what the checkpoint format stores.
///
/// `c' = f (.) c + i (.) g`, `h' = o (.) tanh(c')`.
pub fn lstm_cell<S: Scalar>(
    x: &[S],
    state: &LstmState<S>,
    wx: &Matrix<S>,
    wh: &Matrix<S>,
    b: &[S],
) -> Result<LstmState<S>> {
    let (next, _) = lstm_cell_cached(x, state, wx, wh, b)?;
    Ok(next)
}

pub fn lstm_cell_cached<S: Scalar>(
    x: &[S],
    state: &LstmState<S>,
    wx: &Matrix<S>,
    wh: &Matrix<S>,
    b: &[S],
) -> Result<(LstmState<S>, LstmCache<S>)> {
    let hsize = state.hidden.len();
    if state.cell.len() != hsize {
        return Err(Error::Dim("lstm: hidden/cell length mismatch".into()));
    }
    if wx.rows() != x.len() || wx.cols() != 4 * hsize {
        return Err(Error::Dim(format!(
            "lstm: wx is {}x{}, expected {}x{}",
            wx.rows(),
            wx.cols(),
            x.len(),
            4 * hsize
        )));
    }
    if wh.rows() != hsize || wh.cols() != 4 * hsize || b.len() != 4 * hsize {
        return Err(Error::Dim("lstm: wh or bias shape mismatch".into()));
    }

    let mut pre = linear_forward(x, wx, b)?;
    let rec = linear_forward(&state.hidden, wh, &vec![S::zero(); 4 * hsize])?;
    for (p, r) in pre.iter_mut().zip(rec) {
        *p += r;
    }

    let mut i = Vec::with_capacity(hsize);
    let mut f = Vec::with_capacity(hsize);
    let mut g = Vec::with_capacity(hsize);
    let mut o = Vec::with_capacity(hsize);
    for k in 0..hsize {
        i.push(sigmoid(pre[k]));
        f.push(sigmoid(pre[hsize + k]));
        g.push(pre[2 * hsize + k].tanh());
        o.push(sigmoid(pre[3 * hsize + k]));
    }

    let mut c_new = Vec::with_capacity(hsize);
    let mut tanh_c = Vec::with_capacity(hsize);
    let mut hidden = Vec::with_capacity(hsize);
    for k in 0..hsize {
        let c = f[k] * state.cell[k] + i[k] * g[k];
        let tc = c.tanh();
        c_new.push(c);
        tanh_c.push(tc);
        hidden.push(o[k] * tc);
    }

    let cache = LstmCache {
        x: x.to_vec(),
        h_prev: state.hidden.clone(),
        c_prev: state.cell.clone(),
        i,
        f,
        g,
        o,
        c_new: c_new.clone(),
        tanh_c,
    };
    Ok((
        LstmState {
            hidden,
            cell: c_new,
        },
        cache,
    ))
}

/// Backward through one LSTM step. `dh`/`dc` are the gradients flowing into
/// the step's outputs; gradients for the previous state and the input are
/// written out, parameter gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell_backward<S: Scalar>(
    cache: &LstmCache<S>,
    wx: &Matrix<S>,
    wh: &Matrix<S>,
    dh: &[S],
    dc: &[S],
    dwx: &mut Matrix<S>,
    dwh: &mut Matrix<S>,
    db: &mut [S],
    dx: &mut [S],
    dh_prev: &mut [S],
    dc_prev: &mut [S],
) {
    let hsize = dh.len();
    let one = S::one();
    let mut dpre = vec![S::zero(); 4 * hsize];
    for k in 0..hsize {
        let dc_total = dc[k] + dh[k] * cache.o[k] * (one - cache.tanh_c[k] * cache.tanh_c[k]);
        let d_o = dh[k] * cache.tanh_c[k];
        let d_i = dc_total * cache.g[k];
        let d_f = dc_total * cache.c_prev[k];
        let d_g = dc_total * cache.i[k];
        dc_prev[k] = dc_total * cache.f[k];
        dpre[k] = d_i * cache.i[k] * (one - cache.i[k]);
        dpre[hsize + k] = d_f * cache.f[k] * (one - cache.f[k]);
        dpre[2 * hsize + k] = d_g * (one - cache.g[k] * cache.g[k]);
        dpre[3 * hsize + k] = d_o * cache.o[k] * (one - cache.o[k]);
    }
    linear_backward(&cache.x, wx, &dpre, dwx, db, dx);
    let mut db_unused = vec![S::zero(); 4 * hsize];
    linear_backward(&cache.h_prev, wh, &dpre, dwh, &mut db_unused, dh_prev);
}
