//! LSTM cell, unrolled sequence pass, and backpropagation through time.
//!
//! Per step, with `*` the elementwise product:
//!
//! ```text
//! f_t = sigmoid(W_fx x_t + W_fh h_{t-1} + b_f)
//! i_t = sigmoid(W_ix x_t + W_ih h_{t-1} + b_i)
//! g_t = tanh   (W_gx x_t + W_gh h_{t-1} + b_g)
//! o_t = sigmoid(W_ox x_t + W_oh h_{t-1} + b_o)
//! c_t = g_t * i_t + c_{t-1} * f_t
//! h_t = o_t * tanh(c_t)
//! ```
//!
//! Every tensor here is batched: row `r` of `x_t`, `h_t`, `c_t` belongs to
//! the `r`-th independent sequence. A single sequence is a batch of one.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{gemm, lookup, sigmoid, uniform_init, ParamId, ParamSet, Shape, Tensor, Trans};

const GATES: [&str; 4] = ["f", "i", "g", "o"];

/// Handles to the twelve tensors of one LSTM layer inside a [`ParamSet`].
///
/// Gate order in the arrays is forget, input, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub prefix: String,
    pub input_size: usize,
    pub hidden_size: usize,
    /// `W_fx, W_ix, W_gx, W_ox`, each `hidden x input`.
    pub w_x: [ParamId; 4],
    /// `W_fh, W_ih, W_gh, W_oh`, each `hidden x hidden`.
    pub w_h: [ParamId; 4],
    /// `b_f, b_i, b_g, b_o`, each `(hidden,)`.
    pub b: [ParamId; 4],
}

impl LstmParams {
    /// Registers a layer under `{prefix}.w_{gate}x`, `{prefix}.w_{gate}h`,
    /// `{prefix}.b_{gate}`, initialized uniformly in `±1/sqrt(hidden_size)`.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::Argument(format!(
                "LSTM layer `{prefix}` needs positive sizes (input {input_size}, hidden {hidden_size})"
            )));
        }
        let mut reg = |name: String, shape: Shape| params.register(name, uniform_init(rng, shape, hidden_size));
        let mut w_x = Vec::with_capacity(4);
        let mut w_h = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            w_x.push(reg(format!("{prefix}.w_{gate}x"), Shape::Matrix(hidden_size, input_size))?);
            w_h.push(reg(format!("{prefix}.w_{gate}h"), Shape::Matrix(hidden_size, hidden_size))?);
            b.push(reg(format!("{prefix}.b_{gate}"), Shape::Vector(hidden_size))?);
        }
        Ok(LstmParams {
            prefix: prefix.to_string(),
            input_size,
            hidden_size,
            w_x: w_x.try_into().expect("4 gates"),
            w_h: w_h.try_into().expect("4 gates"),
            b: b.try_into().expect("4 gates"),
        })
    }

    /// Looks up an existing layer by prefix and checks every shape.
    pub fn bind(params: &ParamSet, prefix: &str, input_size: usize, hidden_size: usize) -> Result<Self> {
        let mut w_x = Vec::with_capacity(4);
        let mut w_h = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            w_x.push(lookup(params, &format!("{prefix}.w_{gate}x"), Shape::Matrix(hidden_size, input_size))?);
            w_h.push(lookup(params, &format!("{prefix}.w_{gate}h"), Shape::Matrix(hidden_size, hidden_size))?);
            b.push(lookup(params, &format!("{prefix}.b_{gate}"), Shape::Vector(hidden_size))?);
        }
        Ok(LstmParams {
            prefix: prefix.to_string(),
            input_size,
            hidden_size,
            w_x: w_x.try_into().expect("4 gates"),
            w_h: w_h.try_into().expect("4 gates"),
            b: b.try_into().expect("4 gates"),
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w_x.iter().chain(&self.w_h).chain(&self.b).copied()
    }

    /// `4 (h i + h h + h)`.
    pub fn num_values(&self) -> usize {
        let (h, i) = (self.hidden_size, self.input_size);
        4 * (h * i + h * h + h)
    }
}

/// Short-term (`h`) and long-term (`c`) state, each `(batch, hidden)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(Shape::Matrix(batch, hidden)),
            c: Tensor::zeros(Shape::Matrix(batch, hidden)),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.as_rows().0
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    pub f: Tensor,
    pub i: Tensor,
    pub g: Tensor,
    pub o: Tensor,
    pub c: Tensor,
    pub tanh_c: Tensor,
    pub h: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BpttCache {
    pub steps: Vec<StepCache>,
}

impl BpttCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The four gate tensors stacked row-wise in f, i, g, o order, so one gemm
/// computes every gate pre-activation of a step.
struct Packed {
    w_x: Vec<f64>,
    w_h: Vec<f64>,
    b: Vec<f64>,
}

impl Packed {
    fn new(lstm: &LstmParams, params: &ParamSet) -> Self {
        let cat = |ids: &[ParamId; 4]| ids.iter().flat_map(|&id| params.value(id).data().iter().copied()).collect();
        Packed {
            w_x: cat(&lstm.w_x),
            w_h: cat(&lstm.w_h),
            b: cat(&lstm.b),
        }
    }
}

fn check_step_shapes(lstm: &LstmParams, x_t: &Tensor, prev: &LstmState) -> Result<()> {
    let (batch, in_cols) = x_t.as_rows();
    if in_cols != lstm.input_size {
        return Err(Error::shape("cell_forward input", x_t.shape(), Shape::Matrix(batch, lstm.input_size)));
    }
    let expected = Shape::Matrix(batch, lstm.hidden_size);
    if prev.h.shape() != expected || prev.c.shape() != expected {
        return Err(Error::shape("cell_forward state", prev.h.shape(), expected));
    }
    Ok(())
}

/// One LSTM step.
pub fn cell_forward(
    lstm: &LstmParams,
    params: &ParamSet,
    x_t: &Tensor,
    prev: &LstmState,
) -> Result<(LstmState, StepCache)> {
    check_step_shapes(lstm, x_t, prev)?;
    packed_step(lstm, &Packed::new(lstm, params), x_t, prev)
}

fn packed_step(lstm: &LstmParams, packed: &Packed, x_t: &Tensor, prev: &LstmState) -> Result<(LstmState, StepCache)> {
    let (batch, input) = x_t.as_rows();
    let hidden = lstm.hidden_size;
    let width = 4 * hidden;
    let mut pre = vec![0.0; batch * width];
    for row in pre.chunks_exact_mut(width) {
        row.copy_from_slice(&packed.b);
    }
    gemm(batch, input, width, 1.0, x_t.data(), Trans::No, &packed.w_x, Trans::Yes, 1.0, &mut pre);
    gemm(batch, hidden, width, 1.0, prev.h.data(), Trans::No, &packed.w_h, Trans::Yes, 1.0, &mut pre);

    let n = batch * hidden;
    let mut f = Vec::with_capacity(n);
    let mut i = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut o = Vec::with_capacity(n);
    for row in pre.chunks_exact(width) {
        let (rf, rest) = row.split_at(hidden);
        let (ri, rest) = rest.split_at(hidden);
        let (rg, ro) = rest.split_at(hidden);
        f.extend(rf.iter().map(|&v| sigmoid(v)));
        i.extend(ri.iter().map(|&v| sigmoid(v)));
        g.extend(rg.iter().map(|v| v.tanh()));
        o.extend(ro.iter().map(|&v| sigmoid(v)));
    }

    let mut c = vec![0.0; n];
    let mut tanh_c = vec![0.0; n];
    let mut h = vec![0.0; n];
    let c_prev = prev.c.data();
    for k in 0..n {
        c[k] = g[k] * i[k] + c_prev[k] * f[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("cell_forward"));
    }

    let expected = Shape::Matrix(batch, hidden);
    let mat = |v: Vec<f64>| Tensor::new(expected, v).expect("sized above");
    let state = LstmState {
        h: mat(h),
        c: mat(c),
    };
    let cache = StepCache {
        x: x_t.clone(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        f: mat(f),
        i: mat(i),
        g: mat(g),
        o: mat(o),
        c: state.c.clone(),
        tanh_c: mat(tanh_c),
        h: state.h.clone(),
    };
    Ok((state, cache))
}

/// Runs the cell over `inputs` (one `(batch, input)` tensor per step).
/// Returns every `h_t`, the final state, and the cache for [`bptt_backward`].
pub fn sequence_forward(
    lstm: &LstmParams,
    params: &ParamSet,
    inputs: &[Tensor],
    init: &LstmState,
) -> Result<(Vec<Tensor>, LstmState, BpttCache)> {
    if inputs.is_empty() {
        return Err(Error::Argument("sequence_forward needs at least one step".into()));
    }
    let packed = Packed::new(lstm, params);
    let mut state = init.clone();
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut cache = BpttCache {
        steps: Vec::with_capacity(inputs.len()),
    };
    for x in inputs {
        check_step_shapes(lstm, x, &state)?;
        let (next, step) = packed_step(lstm, &packed, x, &state)?;
        outputs.push(next.h.clone());
        cache.steps.push(step);
        state = next;
    }
    Ok((outputs, state, cache))
}

/// Gradients that flow out of [`bptt_backward`] besides the parameter ones.
#[derive(Debug, Clone, PartialEq)]
pub struct BpttGrads {
    /// `dL/dx_t` per step, for stacking layers.
    pub inputs: Vec<Tensor>,
    pub h0: Tensor,
    pub c0: Tensor,
}

/// Reverse-mode gradients of the unrolled recurrence. `output_grads[t]` is
/// `dL/dh_t` from outside the recurrence (`None` for zero). Parameter
/// gradients are added into the accumulators of `params`.
///
/// The per-step pre-activation gradients are kept for the whole sequence so
/// the weight gradients come out of one product over all steps at the end.
pub fn bptt_backward(
    lstm: &LstmParams,
    params: &mut ParamSet,
    cache: &BpttCache,
    output_grads: &[Option<Tensor>],
) -> Result<BpttGrads> {
    if cache.steps.len() != output_grads.len() {
        return Err(Error::Argument(format!(
            "cache has {} steps but {} output gradients were given",
            cache.steps.len(),
            output_grads.len()
        )));
    }
    let Some(first) = cache.steps.first() else {
        return Err(Error::Argument("empty BPTT cache".into()));
    };
    let (batch, hidden) = first.h.as_rows();
    let input = lstm.input_size;
    let n = batch * hidden;
    let width = 4 * hidden;
    let steps = cache.steps.len();
    let packed = Packed::new(lstm, params);
    let trainable: Vec<bool> = (0..4)
        .map(|k| !(params.is_frozen(lstm.w_x[k]) && params.is_frozen(lstm.w_h[k]) && params.is_frozen(lstm.b[k])))
        .collect();
    let any_trainable = trainable.iter().any(|&t| t);

    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    let mut dx_all = vec![Tensor::zeros(Shape::Matrix(batch, input)); steps];
    // Row `t * batch + r` holds the gate gradients of sequence `r` at step `t`.
    let mut dpre_all = vec![0.0; steps * batch * width];

    for (t, step) in cache.steps.iter().enumerate().rev() {
        let mut dh = std::mem::take(&mut dh_next);
        if let Some(g) = &output_grads[t] {
            if g.as_rows() != (batch, hidden) {
                return Err(Error::shape("bptt_backward output grad", g.shape(), step.h.shape()));
            }
            for (a, b) in dh.iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        let (f, i, g, o) = (step.f.data(), step.i.data(), step.g.data(), step.o.data());
        let (tc, c_prev) = (step.tanh_c.data(), step.c_prev.data());
        let dpre = &mut dpre_all[t * batch * width..(t + 1) * batch * width];
        for r in 0..batch {
            let row = &mut dpre[r * width..(r + 1) * width];
            for j in 0..hidden {
                let k = r * hidden + j;
                let dc = dc_next[k] + dh[k] * o[k] * (1.0 - tc[k] * tc[k]);
                row[j] = dc * c_prev[k] * f[k] * (1.0 - f[k]);
                row[hidden + j] = dc * g[k] * i[k] * (1.0 - i[k]);
                row[2 * hidden + j] = dc * i[k] * (1.0 - g[k] * g[k]);
                row[3 * hidden + j] = dh[k] * tc[k] * o[k] * (1.0 - o[k]);
                dc_next[k] = dc * f[k];
            }
        }

        let mut dh_prev = vec![0.0; n];
        gemm(batch, width, hidden, 1.0, dpre, Trans::No, &packed.w_h, Trans::No, 0.0, &mut dh_prev);
        gemm(batch, width, input, 1.0, dpre, Trans::No, &packed.w_x, Trans::No, 0.0, dx_all[t].data_mut());
        dh_next = dh_prev;
    }

    if any_trainable {
        let rows = steps * batch;
        let mut xs = Vec::with_capacity(rows * input);
        let mut hs = Vec::with_capacity(rows * hidden);
        for step in &cache.steps {
            xs.extend_from_slice(step.x.data());
            hs.extend_from_slice(step.h_prev.data());
        }
        let mut dw_x = vec![0.0; width * input];
        let mut dw_h = vec![0.0; width * hidden];
        gemm(width, rows, input, 1.0, &dpre_all, Trans::Yes, &xs, Trans::No, 0.0, &mut dw_x);
        gemm(width, rows, hidden, 1.0, &dpre_all, Trans::Yes, &hs, Trans::No, 0.0, &mut dw_h);
        let mut db = vec![0.0; width];
        for row in dpre_all.chunks_exact(width) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for k in (0..4).filter(|&k| trainable[k]) {
            let add = |dst: &mut Tensor, src: &[f64]| {
                for (a, b) in dst.data_mut().iter_mut().zip(src) {
                    *a += b;
                }
            };
            add(params.grad_mut(lstm.w_x[k]), &dw_x[k * hidden * input..(k + 1) * hidden * input]);
            add(params.grad_mut(lstm.w_h[k]), &dw_h[k * hidden * hidden..(k + 1) * hidden * hidden]);
            add(params.grad_mut(lstm.b[k]), &db[k * hidden..(k + 1) * hidden]);
        }
    }

    let shape = Shape::Matrix(batch, hidden);
    Ok(BpttGrads {
        inputs: dx_all,
        h0: Tensor::new(shape, dh_next)?,
        c0: Tensor::new(shape, dc_next)?,
    })
}
