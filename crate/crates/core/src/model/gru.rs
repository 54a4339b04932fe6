//! The gated recurrent cell: forward pass, cached forward for training, and
//! the exact backward pass used by backpropagation through time.
//!
//! Gate equations (reset/update convention, new state as a convex
//! combination steered by the update gate):
//!
//! ```text
//! z = σ(W_z x + U_z h_prev + b_z)
//! r = σ(W_r x + U_r h_prev + b_r)
//! h̃ = tanh(W_h x + U_h (r ⊙ h_prev) + b_h)
//! h = (1 − z) ⊙ h_prev + z ⊙ h̃
//! ```

use serde::{Deserialize, Serialize};

use crate::math::{add_acc, matvec, matvec_t_acc, outer_acc, sigmoid_vec, tanh_vec, Mat};
use crate::model::ModelError;

/// Weights of one GRU cell. `w_*` map the input, `u_*` map the previous
/// hidden state, `b_*` are biases; update/reset/candidate respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_update: Mat,
    pub u_update: Mat,
    pub b_update: Vec<f64>,
    pub w_reset: Mat,
    pub u_reset: Mat,
    pub b_reset: Vec<f64>,
    pub w_cand: Mat,
    pub u_cand: Mat,
    pub b_cand: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruParams {
            w_update: Mat::zeros(hidden_dim, input_dim),
            u_update: Mat::zeros(hidden_dim, hidden_dim),
            b_update: vec![0.0; hidden_dim],
            w_reset: Mat::zeros(hidden_dim, input_dim),
            u_reset: Mat::zeros(hidden_dim, hidden_dim),
            b_reset: vec![0.0; hidden_dim],
            w_cand: Mat::zeros(hidden_dim, input_dim),
            u_cand: Mat::zeros(hidden_dim, hidden_dim),
            b_cand: vec![0.0; hidden_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_update.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_update.rows
    }

    pub fn param_count(&self) -> usize {
        3 * (self.w_update.len() + self.u_update.len() + self.b_update.len())
    }

    pub fn check_dims(&self) -> bool {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        let mats = [
            (&self.w_update, h, i),
            (&self.u_update, h, h),
            (&self.w_reset, h, i),
            (&self.u_reset, h, h),
            (&self.w_cand, h, i),
            (&self.u_cand, h, h),
        ];
        mats.iter().all(|(m, r, c)| m.rows == *r && m.cols == *c)
            && self.b_update.len() == h
            && self.b_reset.len() == h
            && self.b_cand.len() == h
    }
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub cand: Vec<f64>,
    pub h: Vec<f64>,
}

/// One forward step of the cell.
pub fn gru_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    params: &GruParams,
) -> Result<Vec<f64>, ModelError> {
    Ok(gru_cell_forward_cached(x, h_prev, params)?.h)
}

/// Forward step that also returns the cached activations.
pub fn gru_cell_forward_cached(
    x: &[f64],
    h_prev: &[f64],
    params: &GruParams,
) -> Result<GruStepCache, ModelError> {
    if x.len() != params.input_dim() || h_prev.len() != params.hidden_dim() || !params.check_dims()
    {
        return Err(ModelError::DimensionMismatch {
            context: format!(
                "gru cell expects input {} and hidden {}, got {} and {}",
                params.input_dim(),
                params.hidden_dim(),
                x.len(),
                h_prev.len()
            ),
        });
    }
    let h_dim = params.hidden_dim();

    let mut update = vec![0.0; h_dim];
    matvec(&params.w_update, x, &mut update);
    let mut tmp = vec![0.0; h_dim];
    matvec(&params.u_update, h_prev, &mut tmp);
    add_acc(&mut update, &tmp);
    add_acc(&mut update, &params.b_update);
    sigmoid_vec(&mut update);

    let mut reset = vec![0.0; h_dim];
    matvec(&params.w_reset, x, &mut reset);
    matvec(&params.u_reset, h_prev, &mut tmp);
    add_acc(&mut reset, &tmp);
    add_acc(&mut reset, &params.b_reset);
    sigmoid_vec(&mut reset);

    let gated_prev: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let mut cand = vec![0.0; h_dim];
    matvec(&params.w_cand, x, &mut cand);
    matvec(&params.u_cand, &gated_prev, &mut tmp);
    add_acc(&mut cand, &tmp);
    add_acc(&mut cand, &params.b_cand);
    tanh_vec(&mut cand);

    let h: Vec<f64> = (0..h_dim)
        .map(|i| (1.0 - update[i]) * h_prev[i] + update[i] * cand[i])
        .collect();

    Ok(GruStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        update,
        reset,
        cand,
        h,
    })
}

/// Gradients of one cell's parameters, accumulated across time steps.
#[derive(Debug, Clone)]
pub struct GruGrads {
    pub w_update: Mat,
    pub u_update: Mat,
    pub b_update: Vec<f64>,
    pub w_reset: Mat,
    pub u_reset: Mat,
    pub b_reset: Vec<f64>,
    pub w_cand: Mat,
    pub u_cand: Mat,
    pub b_cand: Vec<f64>,
}

impl GruGrads {
    pub fn zeros_like(p: &GruParams) -> Self {
        GruGrads {
            w_update: Mat::zeros(p.w_update.rows, p.w_update.cols),
            u_update: Mat::zeros(p.u_update.rows, p.u_update.cols),
            b_update: vec![0.0; p.b_update.len()],
            w_reset: Mat::zeros(p.w_reset.rows, p.w_reset.cols),
            u_reset: Mat::zeros(p.u_reset.rows, p.u_reset.cols),
            b_reset: vec![0.0; p.b_reset.len()],
            w_cand: Mat::zeros(p.w_cand.rows, p.w_cand.cols),
            u_cand: Mat::zeros(p.u_cand.rows, p.u_cand.cols),
            b_cand: vec![0.0; p.b_cand.len()],
        }
    }
}

/// Backward through one cell step.
///
/// `d_h` is the loss gradient w.r.t. this step's output. Accumulates
/// parameter gradients into `grads` and returns `(d_x, d_h_prev)`.
pub fn gru_cell_backward(
    params: &GruParams,
    cache: &GruStepCache,
    d_h: &[f64],
    grads: &mut GruGrads,
) -> (Vec<f64>, Vec<f64>) {
    let h_dim = params.hidden_dim();
    let in_dim = params.input_dim();

    let mut d_x = vec![0.0; in_dim];
    let mut d_h_prev = vec![0.0; h_dim];

    // h = (1 − z) h_prev + z h̃
    let d_update: Vec<f64> = (0..h_dim)
        .map(|i| d_h[i] * (cache.cand[i] - cache.h_prev[i]))
        .collect();
    let d_cand: Vec<f64> = (0..h_dim).map(|i| d_h[i] * cache.update[i]).collect();
    for i in 0..h_dim {
        d_h_prev[i] += d_h[i] * (1.0 - cache.update[i]);
    }

    // candidate: h̃ = tanh(W_h x + U_h (r ⊙ h_prev) + b_h)
    let d_a_cand: Vec<f64> = (0..h_dim)
        .map(|i| d_cand[i] * (1.0 - cache.cand[i] * cache.cand[i]))
        .collect();
    let gated_prev: Vec<f64> = cache
        .reset
        .iter()
        .zip(&cache.h_prev)
        .map(|(r, h)| r * h)
        .collect();
    outer_acc(&mut grads.w_cand, &d_a_cand, &cache.x);
    outer_acc(&mut grads.u_cand, &d_a_cand, &gated_prev);
    add_acc(&mut grads.b_cand, &d_a_cand);
    matvec_t_acc(&params.w_cand, &d_a_cand, &mut d_x);
    let mut d_gated = vec![0.0; h_dim];
    matvec_t_acc(&params.u_cand, &d_a_cand, &mut d_gated);
    let d_reset: Vec<f64> = (0..h_dim).map(|i| d_gated[i] * cache.h_prev[i]).collect();
    for i in 0..h_dim {
        d_h_prev[i] += d_gated[i] * cache.reset[i];
    }

    // update gate
    let d_a_update: Vec<f64> = (0..h_dim)
        .map(|i| d_update[i] * cache.update[i] * (1.0 - cache.update[i]))
        .collect();
    outer_acc(&mut grads.w_update, &d_a_update, &cache.x);
    outer_acc(&mut grads.u_update, &d_a_update, &cache.h_prev);
    add_acc(&mut grads.b_update, &d_a_update);
    matvec_t_acc(&params.w_update, &d_a_update, &mut d_x);
    matvec_t_acc(&params.u_update, &d_a_update, &mut d_h_prev);

    // reset gate
    let d_a_reset: Vec<f64> = (0..h_dim)
        .map(|i| d_reset[i] * cache.reset[i] * (1.0 - cache.reset[i]))
        .collect();
    outer_acc(&mut grads.w_reset, &d_a_reset, &cache.x);
    outer_acc(&mut grads.u_reset, &d_a_reset, &cache.h_prev);
    add_acc(&mut grads.b_reset, &d_a_reset);
    matvec_t_acc(&params.w_reset, &d_a_reset, &mut d_x);
    matvec_t_acc(&params.u_reset, &d_a_reset, &mut d_h_prev);

    (d_x, d_h_prev)
}
