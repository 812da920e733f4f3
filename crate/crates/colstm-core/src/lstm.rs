//! Peephole LSTM step kernels, per-gate dropout, bidirectional scanning, and
//! feedforward layers.
//!
//! # The two paths
//!
//! Every step computes two coupled activations from one set of weights:
//!
//! * the **clean path** (`i, f, g, c, o, h`) — the usual peephole LSTM
//!   recurrence. It alone feeds the next timestep, so the memory carried
//!   through time is never perturbed by dropout.
//! * the **dropped path** (`i_d, f_d, c_d, o_d, h_d`) — recomputed from the
//!   same pre-activations with multiplicative masks applied at five sites
//!   (after the input gate, forget gate, cell, output gate, and output). Only
//!   this path is exposed to the layer above.
//!
//! Masks are plain value vectors: binary during training, the constant keep
//! probability `1 - p` at inference time, and all ones when dropout is off.
//! With all-ones masks the dropped path reproduces the clean path bit for
//! bit, so the no-dropout, train-at-`p = 0`, and inference-at-`p = 0`
//! behaviours coincide exactly rather than merely approximately.
//!
//! Peephole connections are full matrices (`w_ci`, `w_cf`, `w_co`); the
//! common diagonal restriction is available through network configuration.

use rand::Rng;

use crate::tensor::{
    add_assign, hadamard, sigmoid, tanh_vec, Activation, Matrix, TensorView, TensorViewMut,
};

/// Weights and biases for one direction of one recurrent layer.
///
/// `n` is the layer width (number of cells), `input_width` the width of the
/// sequence it consumes. Gate order throughout the crate: input `i`, forget
/// `f`, cell candidate `c`, output `o`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_xi: Matrix,
    pub w_xf: Matrix,
    pub w_xc: Matrix,
    pub w_xo: Matrix,
    pub w_hi: Matrix,
    pub w_hf: Matrix,
    pub w_hc: Matrix,
    pub w_ho: Matrix,
    pub w_ci: Matrix,
    pub w_cf: Matrix,
    pub w_co: Matrix,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

/// Tensor names in declaration order; also the serialization order.
pub const LSTM_TENSOR_NAMES: [&str; 15] = [
    "w_xi", "w_xf", "w_xc", "w_xo", "w_hi", "w_hf", "w_hc", "w_ho", "w_ci", "w_cf", "w_co",
    "b_i", "b_f", "b_c", "b_o",
];

impl LstmParams {
    /// All-zero parameters for a layer of width `n` reading `input_width`
    /// wide frames. Also used as the gradient/velocity container.
    pub fn zeros(n: usize, input_width: usize) -> Self {
        LstmParams {
            w_xi: Matrix::zeros(n, input_width),
            w_xf: Matrix::zeros(n, input_width),
            w_xc: Matrix::zeros(n, input_width),
            w_xo: Matrix::zeros(n, input_width),
            w_hi: Matrix::zeros(n, n),
            w_hf: Matrix::zeros(n, n),
            w_hc: Matrix::zeros(n, n),
            w_ho: Matrix::zeros(n, n),
            w_ci: Matrix::zeros(n, n),
            w_cf: Matrix::zeros(n, n),
            w_co: Matrix::zeros(n, n),
            b_i: vec![0.0; n],
            b_f: vec![0.0; n],
            b_c: vec![0.0; n],
            b_o: vec![0.0; n],
        }
    }

    /// Random initialization: weights uniform in `[-scale, scale]`, biases
    /// zero except the forget bias, which starts at `forget_bias` so cells
    /// begin by remembering. With `diagonal_peepholes` the off-diagonal
    /// entries of the three peephole matrices are zeroed (the RNG is advanced
    /// identically either way).
    pub fn init<R: Rng>(
        rng: &mut R,
        n: usize,
        input_width: usize,
        scale: f64,
        forget_bias: f64,
        diagonal_peepholes: bool,
    ) -> Self {
        let mut p = LstmParams::zeros(n, input_width);
        for (name, t) in p.tensors_mut() {
            match t {
                TensorViewMut::Matrix(m) => {
                    for v in m.data_mut() {
                        *v = rng.gen_range(-scale..scale);
                    }
                }
                TensorViewMut::Vector(b) => {
                    let fill = if name == "b_f" { forget_bias } else { 0.0 };
                    for v in b.iter_mut() {
                        *v = fill;
                    }
                }
            }
        }
        if diagonal_peepholes {
            for m in [&mut p.w_ci, &mut p.w_cf, &mut p.w_co] {
                zero_off_diagonal(m);
            }
        }
        p
    }

    /// Layer width.
    pub fn n(&self) -> usize {
        self.b_i.len()
    }

    /// Width of the frames this layer consumes.
    pub fn input_width(&self) -> usize {
        self.w_xi.cols()
    }

    /// Immutable views of all tensors in declaration order.
    pub fn tensors(&self) -> Vec<(&'static str, TensorView<'_>)> {
        vec![
            ("w_xi", TensorView::Matrix(&self.w_xi)),
            ("w_xf", TensorView::Matrix(&self.w_xf)),
            ("w_xc", TensorView::Matrix(&self.w_xc)),
            ("w_xo", TensorView::Matrix(&self.w_xo)),
            ("w_hi", TensorView::Matrix(&self.w_hi)),
            ("w_hf", TensorView::Matrix(&self.w_hf)),
            ("w_hc", TensorView::Matrix(&self.w_hc)),
            ("w_ho", TensorView::Matrix(&self.w_ho)),
            ("w_ci", TensorView::Matrix(&self.w_ci)),
            ("w_cf", TensorView::Matrix(&self.w_cf)),
            ("w_co", TensorView::Matrix(&self.w_co)),
            ("b_i", TensorView::Vector(&self.b_i)),
            ("b_f", TensorView::Vector(&self.b_f)),
            ("b_c", TensorView::Vector(&self.b_c)),
            ("b_o", TensorView::Vector(&self.b_o)),
        ]
    }

    /// Mutable views of all tensors in declaration order.
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, TensorViewMut<'_>)> {
        vec![
            ("w_xi", TensorViewMut::Matrix(&mut self.w_xi)),
            ("w_xf", TensorViewMut::Matrix(&mut self.w_xf)),
            ("w_xc", TensorViewMut::Matrix(&mut self.w_xc)),
            ("w_xo", TensorViewMut::Matrix(&mut self.w_xo)),
            ("w_hi", TensorViewMut::Matrix(&mut self.w_hi)),
            ("w_hf", TensorViewMut::Matrix(&mut self.w_hf)),
            ("w_hc", TensorViewMut::Matrix(&mut self.w_hc)),
            ("w_ho", TensorViewMut::Matrix(&mut self.w_ho)),
            ("w_ci", TensorViewMut::Matrix(&mut self.w_ci)),
            ("w_cf", TensorViewMut::Matrix(&mut self.w_cf)),
            ("w_co", TensorViewMut::Matrix(&mut self.w_co)),
            ("b_i", TensorViewMut::Vector(&mut self.b_i)),
            ("b_f", TensorViewMut::Vector(&mut self.b_f)),
            ("b_c", TensorViewMut::Vector(&mut self.b_c)),
            ("b_o", TensorViewMut::Vector(&mut self.b_o)),
        ]
    }
}

fn zero_off_diagonal(m: &mut Matrix) {
    let (r, c) = (m.rows(), m.cols());
    for i in 0..r {
        for j in 0..c {
            if i != j {
                m.set(i, j, 0.0);
            }
        }
    }
}

/// Multiplicative mask values for the five dropout sites of one timestep.
///
/// Entries are exactly 0 or 1 when sampled for training, the constant
/// `1 - p` at inference, and all ones when dropout is off. `p` records the
/// drop probability the masks were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub m_i: Vec<f64>,
    pub m_f: Vec<f64>,
    pub m_c: Vec<f64>,
    pub m_o: Vec<f64>,
    pub m_h: Vec<f64>,
    pub p: f64,
}

impl DropoutMasks {
    /// Draw independent binary masks with drop probability `p` for a layer of
    /// width `n`. Entry order: `m_i`, `m_f`, `m_c`, `m_o`, `m_h`, each front
    /// to back, so a given RNG state always yields the same masks.
    pub fn sample<R: Rng>(rng: &mut R, p: f64, n: usize) -> Self {
        assert!(
            (0.0..1.0).contains(&p),
            "drop probability must lie in [0, 1), got {p}"
        );
        let mut draw = || -> Vec<f64> {
            (0..n)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 })
                .collect()
        };
        DropoutMasks {
            m_i: draw(),
            m_f: draw(),
            m_c: draw(),
            m_o: draw(),
            m_h: draw(),
            p,
        }
    }

    /// All-ones masks: dropout disabled.
    pub fn ones(n: usize) -> Self {
        DropoutMasks {
            m_i: vec![1.0; n],
            m_f: vec![1.0; n],
            m_c: vec![1.0; n],
            m_o: vec![1.0; n],
            m_h: vec![1.0; n],
            p: 0.0,
        }
    }

    /// Inference-time masks: every site scaled by the keep probability
    /// `1 - p` so dropped-path activations match their training-time
    /// expectation. The clean path is never scaled.
    pub fn inference(p: f64, n: usize) -> Self {
        assert!(
            (0.0..1.0).contains(&p),
            "drop probability must lie in [0, 1), got {p}"
        );
        let keep = 1.0 - p;
        DropoutMasks {
            m_i: vec![keep; n],
            m_f: vec![keep; n],
            m_c: vec![keep; n],
            m_o: vec![keep; n],
            m_h: vec![keep; n],
            p,
        }
    }

    /// True when every entry is exactly 1.0 (dropout has no effect).
    pub fn is_ones(&self) -> bool {
        [&self.m_i, &self.m_f, &self.m_c, &self.m_o, &self.m_h]
            .iter()
            .all(|m| m.iter().all(|&v| v == 1.0))
    }

    pub fn width(&self) -> usize {
        self.m_i.len()
    }
}

/// Everything one step computes, cached for the backward pass.
///
/// Clean path: `i, f, g, c, tanh_c, o, h`. Dropped path: `i_d, f_d, c_d,
/// tanh_c_d, o_d_pre, o_d, h_d`, where `o_d_pre` is the output gate of the
/// dropped path before its mask. `g` is the tanh cell candidate shared by
/// both paths.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStepState {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub o: Vec<f64>,
    pub h: Vec<f64>,
    pub i_d: Vec<f64>,
    pub f_d: Vec<f64>,
    pub c_d: Vec<f64>,
    pub tanh_c_d: Vec<f64>,
    pub o_d_pre: Vec<f64>,
    pub o_d: Vec<f64>,
    pub h_d: Vec<f64>,
}

/// One step of the dual-path recurrence. `x` is the current frame, `h_prev`
/// and `c_prev` the clean-path state from the previous timestep, and `m` the
/// mask values for this timestep.
pub fn lstm_step_with_masks(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    m: &DropoutMasks,
) -> LstmStepState {
    let n = p.n();
    assert_eq!(
        h_prev.len(),
        n,
        "state width mismatch: layer width {n}, h_prev has length {}",
        h_prev.len()
    );
    assert_eq!(
        c_prev.len(),
        n,
        "state width mismatch: layer width {n}, c_prev has length {}",
        c_prev.len()
    );
    assert_eq!(m.width(), n, "mask width {} does not match layer width {n}", m.width());

    // Clean path: standard peephole recurrence.
    let mut a_i = p.w_xi.matvec(x);
    add_assign(&mut a_i, &p.w_hi.matvec(h_prev));
    add_assign(&mut a_i, &p.w_ci.matvec(c_prev));
    add_assign(&mut a_i, &p.b_i);
    let i = sigmoid(&a_i);

    let mut a_f = p.w_xf.matvec(x);
    add_assign(&mut a_f, &p.w_hf.matvec(h_prev));
    add_assign(&mut a_f, &p.w_cf.matvec(c_prev));
    add_assign(&mut a_f, &p.b_f);
    let f = sigmoid(&a_f);

    let mut a_g = p.w_xc.matvec(x);
    add_assign(&mut a_g, &p.w_hc.matvec(h_prev));
    add_assign(&mut a_g, &p.b_c);
    let g = tanh_vec(&a_g);

    let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c = tanh_vec(&c);

    let output_gate = |cell: &[f64]| -> Vec<f64> {
        let mut a_o = p.w_xo.matvec(x);
        add_assign(&mut a_o, &p.w_ho.matvec(h_prev));
        add_assign(&mut a_o, &p.w_co.matvec(cell));
        add_assign(&mut a_o, &p.b_o);
        sigmoid(&a_o)
    };
    let o = output_gate(&c);
    let h = hadamard(&o, &tanh_c);

    // Dropped path. With all-ones masks it recomputes the clean path bit for
    // bit, so we can just copy.
    if m.is_ones() {
        return LstmStepState {
            i_d: i.clone(),
            f_d: f.clone(),
            c_d: c.clone(),
            tanh_c_d: tanh_c.clone(),
            o_d_pre: o.clone(),
            o_d: o.clone(),
            h_d: h.clone(),
            i,
            f,
            g,
            c,
            tanh_c,
            o,
            h,
        };
    }

    let i_d = hadamard(&i, &m.m_i);
    let f_d = hadamard(&f, &m.m_f);
    let c_d: Vec<f64> = (0..n)
        .map(|k| (f_d[k] * c_prev[k] + i_d[k] * g[k]) * m.m_c[k])
        .collect();
    let tanh_c_d = tanh_vec(&c_d);
    let o_d_pre = output_gate(&c_d);
    let o_d = hadamard(&o_d_pre, &m.m_o);
    let h_d: Vec<f64> = (0..n).map(|k| o_d[k] * tanh_c_d[k] * m.m_h[k]).collect();

    LstmStepState {
        i,
        f,
        g,
        c,
        tanh_c,
        o,
        h,
        i_d,
        f_d,
        c_d,
        tanh_c_d,
        o_d_pre,
        o_d,
        h_d,
    }
}

/// Step with dropout disabled (all-ones masks).
pub fn lstm_step_forward(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStepState {
    lstm_step_with_masks(p, x, h_prev, c_prev, &DropoutMasks::ones(p.n()))
}

/// Training-time step with explicit binary masks.
pub fn lstm_step_forward_dropout(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    masks: &DropoutMasks,
) -> LstmStepState {
    lstm_step_with_masks(p, x, h_prev, c_prev, masks)
}

/// Inference-time step: dropped-path sites scaled by `1 - p`, clean path
/// untouched.
pub fn lstm_step_forward_inference(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    drop_p: f64,
) -> LstmStepState {
    lstm_step_with_masks(p, x, h_prev, c_prev, &DropoutMasks::inference(drop_p, p.n()))
}

/// Per-site error vectors produced by one backward step, split into the
/// contribution arriving from the layer above (`hier`, gated by the masks)
/// and the contribution arriving through the recurrence (`recur` / `tilde`).
///
/// Invariant: `eps_h = eps_h_hier ⊙ m_h + eps_h_recur`, and each gate total
/// is the sum of its `hat` (dropped-path) and `tilde` (clean-path) parts.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardErrors {
    /// Raw error on the dropped output from the layer above.
    pub eps_h_hier: Vec<f64>,
    /// Error on the clean output carried back from the next timestep.
    pub eps_h_recur: Vec<f64>,
    /// Total output error: `eps_h_hier ⊙ m_h + eps_h_recur`.
    pub eps_h: Vec<f64>,
    pub eps_o_hat: Vec<f64>,
    pub eps_o_tilde: Vec<f64>,
    pub eps_o: Vec<f64>,
    pub eps_c_hat: Vec<f64>,
    pub eps_c_tilde: Vec<f64>,
    pub eps_c: Vec<f64>,
    pub eps_f_hat: Vec<f64>,
    pub eps_f_tilde: Vec<f64>,
    pub eps_f: Vec<f64>,
    pub eps_i_hat: Vec<f64>,
    pub eps_i_tilde: Vec<f64>,
    pub eps_i: Vec<f64>,
}

/// Outputs of one backward step: error diagnostics, the errors carried to
/// timestep `t - 1`, and the error passed down to the layer below.
#[derive(Clone, Debug)]
pub struct StepBackwardResult {
    pub errors: BackwardErrors,
    pub d_h_prev: Vec<f64>,
    pub d_c_prev: Vec<f64>,
    pub d_x: Vec<f64>,
}

/// Exact adjoint of [`lstm_step_with_masks`].
///
/// `eps_h_hier` is the loss gradient on this step's dropped output `h_d`;
/// `eps_h_recur` and `eps_c_recur` are the gradients on the clean `h` and `c`
/// carried back from timestep `t + 1` (zero at the last step). Parameter
/// gradients accumulate into `grads`. The no-dropout backward pass is this
/// function with all-ones masks — there is no separate code path.
pub fn lstm_step_backward(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    state: &LstmStepState,
    m: &DropoutMasks,
    eps_h_hier: &[f64],
    eps_h_recur: &[f64],
    eps_c_recur: &[f64],
    grads: &mut LstmParams,
) -> StepBackwardResult {
    let n = p.n();

    // Dropped path, from the top down.
    let d_ph = hadamard(eps_h_hier, &m.m_h);
    let d_od = hadamard(&d_ph, &state.tanh_c_d);
    let d_tcd = hadamard(&d_ph, &state.o_d);
    let d_sod = hadamard(&d_od, &m.m_o);
    let d_aod: Vec<f64> = (0..n)
        .map(|k| d_sod[k] * state.o_d_pre[k] * (1.0 - state.o_d_pre[k]))
        .collect();
    let mut d_cd: Vec<f64> = (0..n)
        .map(|k| d_tcd[k] * (1.0 - state.tanh_c_d[k] * state.tanh_c_d[k]))
        .collect();
    add_assign(&mut d_cd, &p.w_co.matvec_t(&d_aod));
    let d_v = hadamard(&d_cd, &m.m_c);

    // Clean path.
    let d_o = hadamard(eps_h_recur, &state.tanh_c);
    let d_tc = hadamard(eps_h_recur, &state.o);
    let d_ao: Vec<f64> = (0..n).map(|k| d_o[k] * state.o[k] * (1.0 - state.o[k])).collect();
    let mut d_c: Vec<f64> = (0..n)
        .map(|k| eps_c_recur[k] + d_tc[k] * (1.0 - state.tanh_c[k] * state.tanh_c[k]))
        .collect();
    add_assign(&mut d_c, &p.w_co.matvec_t(&d_ao));

    // Both paths meet at the shared gates.
    let d_fd = hadamard(&d_v, c_prev);
    let d_id = hadamard(&d_v, &state.g);
    let d_f: Vec<f64> = (0..n).map(|k| d_c[k] * c_prev[k] + d_fd[k] * m.m_f[k]).collect();
    let d_i: Vec<f64> = (0..n).map(|k| d_c[k] * state.g[k] + d_id[k] * m.m_i[k]).collect();
    let d_g: Vec<f64> = (0..n).map(|k| d_c[k] * state.i[k] + d_v[k] * state.i_d[k]).collect();

    let d_ai: Vec<f64> = (0..n).map(|k| d_i[k] * state.i[k] * (1.0 - state.i[k])).collect();
    let d_af: Vec<f64> = (0..n).map(|k| d_f[k] * state.f[k] * (1.0 - state.f[k])).collect();
    let d_ag: Vec<f64> = (0..n).map(|k| d_g[k] * (1.0 - state.g[k] * state.g[k])).collect();
    let d_ao_sum: Vec<f64> = (0..n).map(|k| d_ao[k] + d_aod[k]).collect();

    // Parameter gradients.
    grads.w_xi.add_outer(&d_ai, x);
    grads.w_hi.add_outer(&d_ai, h_prev);
    grads.w_ci.add_outer(&d_ai, c_prev);
    add_assign(&mut grads.b_i, &d_ai);

    grads.w_xf.add_outer(&d_af, x);
    grads.w_hf.add_outer(&d_af, h_prev);
    grads.w_cf.add_outer(&d_af, c_prev);
    add_assign(&mut grads.b_f, &d_af);

    grads.w_xc.add_outer(&d_ag, x);
    grads.w_hc.add_outer(&d_ag, h_prev);
    add_assign(&mut grads.b_c, &d_ag);

    grads.w_xo.add_outer(&d_ao_sum, x);
    grads.w_ho.add_outer(&d_ao_sum, h_prev);
    add_assign(&mut grads.b_o, &d_ao_sum);
    // The output-gate peephole sees the clean cell on one path and the
    // dropped cell on the other.
    grads.w_co.add_outer(&d_ao, &state.c);
    grads.w_co.add_outer(&d_aod, &state.c_d);

    // Carries to timestep t-1 and to the layer below.
    let mut d_h_prev = p.w_hi.matvec_t(&d_ai);
    add_assign(&mut d_h_prev, &p.w_hf.matvec_t(&d_af));
    add_assign(&mut d_h_prev, &p.w_hc.matvec_t(&d_ag));
    add_assign(&mut d_h_prev, &p.w_ho.matvec_t(&d_ao_sum));

    let mut d_c_prev: Vec<f64> = (0..n).map(|k| d_c[k] * state.f[k] + d_v[k] * state.f_d[k]).collect();
    add_assign(&mut d_c_prev, &p.w_ci.matvec_t(&d_ai));
    add_assign(&mut d_c_prev, &p.w_cf.matvec_t(&d_af));

    let mut d_x = p.w_xi.matvec_t(&d_ai);
    add_assign(&mut d_x, &p.w_xf.matvec_t(&d_af));
    add_assign(&mut d_x, &p.w_xc.matvec_t(&d_ag));
    add_assign(&mut d_x, &p.w_xo.matvec_t(&d_ao_sum));

    let eps_h: Vec<f64> = (0..n).map(|k| d_ph[k] + eps_h_recur[k]).collect();
    let errors = BackwardErrors {
        eps_h_hier: eps_h_hier.to_vec(),
        eps_h_recur: eps_h_recur.to_vec(),
        eps_h,
        eps_o_hat: d_sod,
        eps_o_tilde: d_o,
        eps_o: Vec::new(),
        eps_c_hat: d_v,
        eps_c_tilde: d_c,
        eps_c: Vec::new(),
        eps_f_hat: (0..n).map(|k| d_fd[k] * m.m_f[k]).collect(),
        eps_f_tilde: (0..n).map(|k| d_f[k] - d_fd[k] * m.m_f[k]).collect(),
        eps_f: d_f,
        eps_i_hat: (0..n).map(|k| d_id[k] * m.m_i[k]).collect(),
        eps_i_tilde: (0..n).map(|k| d_i[k] - d_id[k] * m.m_i[k]).collect(),
        eps_i: d_i,
    };
    let errors = BackwardErrors {
        eps_o: crate::tensor::add(&errors.eps_o_hat, &errors.eps_o_tilde),
        eps_c: crate::tensor::add(&errors.eps_c_hat, &errors.eps_c_tilde),
        ..errors
    };

    StepBackwardResult {
        errors,
        d_h_prev,
        d_c_prev,
        d_x,
    }
}

/// Forward states and masks for one direction over a whole sequence, indexed
/// by scan position (for the reverse direction, position 0 is the last
/// frame).
#[derive(Clone, Debug)]
pub struct DirectionCache {
    pub states: Vec<LstmStepState>,
    pub masks: Vec<DropoutMasks>,
}

impl DirectionCache {
    /// Dropped-path outputs in scan order.
    pub fn outputs(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.h_d.clone()).collect()
    }
}

/// Run one direction over `inputs` (already in scan order) from zero state.
/// `masks` supplies one mask set per timestep. Panics on an empty sequence.
pub fn scan_forward(p: &LstmParams, inputs: &[Vec<f64>], masks: Vec<DropoutMasks>) -> DirectionCache {
    assert!(!inputs.is_empty(), "cannot scan an empty sequence");
    assert_eq!(
        masks.len(),
        inputs.len(),
        "mask count {} does not match sequence length {}",
        masks.len(),
        inputs.len()
    );
    let n = p.n();
    let mut states = Vec::with_capacity(inputs.len());
    let mut h_prev = vec![0.0; n];
    let mut c_prev = vec![0.0; n];
    for (x, m) in inputs.iter().zip(masks.iter()) {
        let state = lstm_step_with_masks(p, x, &h_prev, &c_prev, m);
        h_prev = state.h.clone();
        c_prev = state.c.clone();
        states.push(state);
    }
    DirectionCache { states, masks }
}

/// Backpropagate one direction. `hier_errors[k]` is the loss gradient on the
/// dropped output at scan position `k`. Returns the gradient with respect to
/// the inputs, in scan order; parameter gradients accumulate into `grads`.
pub fn scan_backward(
    p: &LstmParams,
    inputs: &[Vec<f64>],
    cache: &DirectionCache,
    hier_errors: &[Vec<f64>],
    grads: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let t_len = inputs.len();
    assert_eq!(cache.states.len(), t_len, "cache/input length mismatch");
    assert_eq!(hier_errors.len(), t_len, "error/input length mismatch");
    let n = p.n();
    let zero = vec![0.0; n];
    let mut carry_h = vec![0.0; n];
    let mut carry_c = vec![0.0; n];
    let mut d_inputs = vec![Vec::new(); t_len];
    for k in (0..t_len).rev() {
        let (h_prev, c_prev) = if k == 0 {
            (zero.as_slice(), zero.as_slice())
        } else {
            (cache.states[k - 1].h.as_slice(), cache.states[k - 1].c.as_slice())
        };
        let result = lstm_step_backward(
            p,
            &inputs[k],
            h_prev,
            c_prev,
            &cache.states[k],
            &cache.masks[k],
            &hier_errors[k],
            &carry_h,
            &carry_c,
            grads,
        );
        carry_h = result.d_h_prev;
        carry_c = result.d_c_prev;
        d_inputs[k] = result.d_x;
    }
    d_inputs
}

/// One bidirectional recurrent layer: independent forward and reverse
/// directions over the same input, outputs concatenated per timestep
/// (forward half first), giving frames of width `2n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlstmLayer {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

/// Caches for both directions of a bidirectional layer.
#[derive(Clone, Debug)]
pub struct BlstmCache {
    pub fwd: DirectionCache,
    pub bwd: DirectionCache,
}

impl BlstmLayer {
    pub fn n(&self) -> usize {
        self.fwd.n()
    }

    pub fn input_width(&self) -> usize {
        self.fwd.input_width()
    }

    /// Output width per timestep (both directions concatenated).
    pub fn output_width(&self) -> usize {
        2 * self.n()
    }

    /// Run both directions. `masks_fwd` is indexed by time, `masks_bwd` by
    /// reverse-scan position (position 0 pairs with the last frame).
    pub fn forward(
        &self,
        inputs: &[Vec<f64>],
        masks_fwd: Vec<DropoutMasks>,
        masks_bwd: Vec<DropoutMasks>,
    ) -> (Vec<Vec<f64>>, BlstmCache) {
        let t_len = inputs.len();
        let fwd = scan_forward(&self.fwd, inputs, masks_fwd);
        let reversed: Vec<Vec<f64>> = inputs.iter().rev().cloned().collect();
        let bwd = scan_forward(&self.bwd, &reversed, masks_bwd);
        let outputs = (0..t_len)
            .map(|t| {
                let mut frame = fwd.states[t].h_d.clone();
                frame.extend_from_slice(&bwd.states[t_len - 1 - t].h_d);
                frame
            })
            .collect();
        (outputs, BlstmCache { fwd, bwd })
    }

    /// Backpropagate both directions. `hier_errors[t]` has width `2n`
    /// (forward half first). Returns per-timestep input gradients.
    pub fn backward(
        &self,
        inputs: &[Vec<f64>],
        cache: &BlstmCache,
        hier_errors: &[Vec<f64>],
        grads_fwd: &mut LstmParams,
        grads_bwd: &mut LstmParams,
    ) -> Vec<Vec<f64>> {
        let t_len = inputs.len();
        let n = self.n();
        let fwd_errors: Vec<Vec<f64>> = hier_errors.iter().map(|e| e[..n].to_vec()).collect();
        // Reverse-scan errors pair with reverse-scan positions.
        let bwd_errors: Vec<Vec<f64>> = (0..t_len)
            .map(|k| hier_errors[t_len - 1 - k][n..].to_vec())
            .collect();
        let d_fwd = scan_backward(&self.fwd, inputs, &cache.fwd, &fwd_errors, grads_fwd);
        let reversed: Vec<Vec<f64>> = inputs.iter().rev().cloned().collect();
        let d_bwd_rev = scan_backward(&self.bwd, &reversed, &cache.bwd, &bwd_errors, grads_bwd);
        (0..t_len)
            .map(|t| crate::tensor::add(&d_fwd[t], &d_bwd_rev[t_len - 1 - t]))
            .collect()
    }
}

/// Convenience wrapper: run a bidirectional layer with dropout off and return
/// just the concatenated outputs.
pub fn bidirectional_forward(fwd: &LstmParams, bwd: &LstmParams, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let layer = BlstmLayer {
        fwd: fwd.clone(),
        bwd: bwd.clone(),
    };
    let t_len = inputs.len();
    let ones_f = (0..t_len).map(|_| DropoutMasks::ones(fwd.n())).collect();
    let ones_b = (0..t_len).map(|_| DropoutMasks::ones(bwd.n())).collect();
    layer.forward(inputs, ones_f, ones_b).0
}

/// A per-timestep fully connected layer with a pointwise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedforwardParams {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl FeedforwardParams {
    pub fn zeros(out_width: usize, in_width: usize, activation: Activation) -> Self {
        FeedforwardParams {
            w: Matrix::zeros(out_width, in_width),
            b: vec![0.0; out_width],
            activation,
        }
    }

    pub fn init<R: Rng>(
        rng: &mut R,
        out_width: usize,
        in_width: usize,
        scale: f64,
        activation: Activation,
    ) -> Self {
        let mut p = FeedforwardParams::zeros(out_width, in_width, activation);
        for v in p.w.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        p
    }

    pub fn out_width(&self) -> usize {
        self.b.len()
    }

    pub fn in_width(&self) -> usize {
        self.w.cols()
    }

    /// `y = act(Wx + b)` for one frame.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.w.matvec(x);
        add_assign(&mut a, &self.b);
        self.activation.apply(&a)
    }

    /// Adjoint for one frame: given the input `x`, the output `y`, and the
    /// loss gradient `d_y`, accumulate parameter gradients and return the
    /// input gradient.
    pub fn backward(&self, x: &[f64], y: &[f64], d_y: &[f64], grads: &mut FeedforwardParams) -> Vec<f64> {
        let deriv = crate::tensor::activation_derivative(self.activation, y);
        let d_a = hadamard(d_y, &deriv);
        grads.w.add_outer(&d_a, x);
        add_assign(&mut grads.b, &d_a);
        self.w.matvec_t(&d_a)
    }

    pub fn tensors(&self) -> Vec<(&'static str, TensorView<'_>)> {
        vec![
            ("w", TensorView::Matrix(&self.w)),
            ("b", TensorView::Vector(&self.b)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, TensorViewMut<'_>)> {
        vec![
            ("w", TensorViewMut::Matrix(&mut self.w)),
            ("b", TensorViewMut::Vector(&mut self.b)),
        ]
    }
}
