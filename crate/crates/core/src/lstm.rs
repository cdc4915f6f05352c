//! LSTM layer: the gated cell, sequence unrolling and backpropagation through
//! time with hand-derived gradients.
//!
//! Row-vector convention throughout: a gate pre-activation is `x U + s W + b`
//! with `U` of shape `input_dim x hidden_dim` and `W` of shape
//! `hidden_dim x hidden_dim`.

use crate::error::{Error, Result};
use crate::math::{
    outer_acc, sigmoid_scalar, softmax, vec_mat_acc, vec_mat_t_acc, ParamSet, Real, Rng, Tensor2,
};

/// Initial value of the forget-gate bias when biases are enabled.
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GateBiases<T> {
    pub input: Tensor2<T>,
    pub forget: Tensor2<T>,
    pub output: Tensor2<T>,
    pub cell: Tensor2<T>,
}

/// Weights of one LSTM layer: input projections `u_*`, recurrent projections
/// `w_*` and optional biases, one of each per gate (input, forget, output,
/// candidate).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams<T> {
    pub u_i: Tensor2<T>,
    pub u_f: Tensor2<T>,
    pub u_o: Tensor2<T>,
    pub u_g: Tensor2<T>,
    pub w_i: Tensor2<T>,
    pub w_f: Tensor2<T>,
    pub w_o: Tensor2<T>,
    pub w_g: Tensor2<T>,
    pub biases: Option<GateBiases<T>>,
}

/// Input weights, recurrent weights and optional bias of one gate.
type GateWeights<'a, T> = (&'a Tensor2<T>, &'a Tensor2<T>, Option<&'a Tensor2<T>>);

impl<T: Real> LstmLayerParams<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize, with_bias: bool) -> Self {
        let u = || Tensor2::zeros(input_dim, hidden_dim);
        let w = || Tensor2::zeros(hidden_dim, hidden_dim);
        let b = || Tensor2::zeros(1, hidden_dim);
        Self {
            u_i: u(),
            u_f: u(),
            u_o: u(),
            u_g: u(),
            w_i: w(),
            w_f: w(),
            w_o: w(),
            w_g: w(),
            biases: with_bias.then(|| GateBiases {
                input: b(),
                forget: b(),
                output: b(),
                cell: b(),
            }),
        }
    }

    /// Uniform weights scaled by the gate fan-in; biases zero except the
    /// forget gate, which starts at [`FORGET_BIAS_INIT`].
    pub fn init(input_dim: usize, hidden_dim: usize, with_bias: bool, rng: &mut Rng) -> Self {
        let fan_in = input_dim + hidden_dim;
        let mut p = Self::zeros(input_dim, hidden_dim, with_bias);
        for t in [&mut p.u_i, &mut p.u_f, &mut p.u_o, &mut p.u_g] {
            *t = Tensor2::uniform(input_dim, hidden_dim, fan_in, rng);
        }
        for t in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_g] {
            *t = Tensor2::uniform(hidden_dim, hidden_dim, fan_in, rng);
        }
        if let Some(b) = p.biases.as_mut() {
            b.forget.fill(T::lit(FORGET_BIAS_INIT));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.u_i.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_i.cols()
    }

    pub fn has_bias(&self) -> bool {
        self.biases.is_some()
    }

    pub fn cast<U: Real>(&self) -> LstmLayerParams<U> {
        LstmLayerParams {
            u_i: self.u_i.cast(),
            u_f: self.u_f.cast(),
            u_o: self.u_o.cast(),
            u_g: self.u_g.cast(),
            w_i: self.w_i.cast(),
            w_f: self.w_f.cast(),
            w_o: self.w_o.cast(),
            w_g: self.w_g.cast(),
            biases: self.biases.as_ref().map(|b| GateBiases {
                input: b.input.cast(),
                forget: b.forget.cast(),
                output: b.output.cast(),
                cell: b.cell.cast(),
            }),
        }
    }

    /// Checks that every tensor has the shape implied by `u_i`.
    pub fn validate(&self) -> Result<()> {
        let (n, h) = self.u_i.shape();
        for u in [&self.u_f, &self.u_o, &self.u_g] {
            if u.shape() != (n, h) {
                return Err(Error::shape(
                    "lstm input weights",
                    format!("{n}x{h}"),
                    u.shape_str(),
                ));
            }
        }
        for w in [&self.w_i, &self.w_f, &self.w_o, &self.w_g] {
            if w.shape() != (h, h) {
                return Err(Error::shape(
                    "lstm recurrent weights",
                    format!("{h}x{h}"),
                    w.shape_str(),
                ));
            }
        }
        if let Some(b) = &self.biases {
            for t in [&b.input, &b.forget, &b.output, &b.cell] {
                if t.shape() != (1, h) {
                    return Err(Error::shape("lstm bias", format!("1x{h}"), t.shape_str()));
                }
            }
        }
        Ok(())
    }

    fn gate_weights(&self) -> [GateWeights<'_, T>; 4] {
        let b = self.biases.as_ref();
        [
            (&self.u_i, &self.w_i, b.map(|b| &b.input)),
            (&self.u_f, &self.w_f, b.map(|b| &b.forget)),
            (&self.u_o, &self.w_o, b.map(|b| &b.output)),
            (&self.u_g, &self.w_g, b.map(|b| &b.cell)),
        ]
    }
}

impl<T: Real> ParamSet<T> for LstmLayerParams<T> {
    fn tensors(&self) -> Vec<&Tensor2<T>> {
        let mut v = vec![
            &self.u_i, &self.u_f, &self.u_o, &self.u_g, &self.w_i, &self.w_f, &self.w_o, &self.w_g,
        ];
        if let Some(b) = &self.biases {
            v.extend([&b.input, &b.forget, &b.output, &b.cell]);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>> {
        let mut v = vec![
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_o,
            &mut self.u_g,
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_g,
        ];
        if let Some(b) = &mut self.biases {
            v.extend([&mut b.input, &mut b.forget, &mut b.output, &mut b.cell]);
        }
        v
    }
}

/// Hidden state `s` and cell state `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub s: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            s: vec![T::zero(); hidden_dim],
            c: vec![T::zero(); hidden_dim],
        }
    }
}

/// Gate activations of one step, kept for the backward pass.
#[derive(Clone, Debug)]
struct StepCache<T> {
    i: Vec<T>,
    f: Vec<T>,
    o: Vec<T>,
    g: Vec<T>,
    tanh_c: Vec<T>,
    state: LstmState<T>,
}

fn check_step_dims<T: Real>(
    x: &[T],
    prev: &LstmState<T>,
    params: &LstmLayerParams<T>,
) -> Result<()> {
    let (n, h) = (params.input_dim(), params.hidden_dim());
    if x.len() != n {
        return Err(Error::shape(
            "lstm cell input",
            format!("input_dim {n}"),
            format!("x of length {}", x.len()),
        ));
    }
    if prev.s.len() != h || prev.c.len() != h {
        return Err(Error::shape(
            "lstm cell state",
            format!("hidden_dim {h}"),
            format!("state of lengths {}/{}", prev.s.len(), prev.c.len()),
        ));
    }
    Ok(())
}

fn step_unchecked<T: Real>(
    x: &[T],
    prev: &LstmState<T>,
    params: &LstmLayerParams<T>,
) -> StepCache<T> {
    let h = params.hidden_dim();
    let mut pre: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); h]);
    for (z, (u, w, b)) in pre.iter_mut().zip(params.gate_weights()) {
        if let Some(b) = b {
            z.copy_from_slice(b.as_slice());
        }
        vec_mat_acc(x, u, z);
        vec_mat_acc(&prev.s, w, z);
    }
    let [mut i, mut f, mut o, mut g] = pre;
    i.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    f.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    o.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    let c: Vec<T> = (0..h).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let s = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    StepCache {
        i,
        f,
        o,
        g,
        tanh_c,
        state: LstmState { s, c },
    }
}

/// One LSTM step:
/// `i = σ(xU_i + sW_i)`, `f = σ(xU_f + sW_f)`, `o = σ(xU_o + sW_o)`,
/// `g = tanh(xU_g + sW_g)`, `c' = f∘c + i∘g`, `s' = o∘tanh(c')`.
pub fn cell_step<T: Real>(
    x: &[T],
    prev: &LstmState<T>,
    params: &LstmLayerParams<T>,
) -> Result<LstmState<T>> {
    check_step_dims(x, prev, params)?;
    Ok(step_unchecked(x, prev, params).state)
}

/// Forward pass over a sequence with every intermediate retained.
#[derive(Clone, Debug)]
pub struct LstmTrace<T> {
    init: LstmState<T>,
    inputs: Tensor2<T>,
    steps: Vec<StepCache<T>>,
}

impl<T: Real> LstmTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state(&self, t: usize) -> &LstmState<T> {
        &self.steps[t].state
    }

    pub fn hidden(&self, t: usize) -> &[T] {
        &self.steps[t].state.s
    }

    pub fn final_state(&self) -> &LstmState<T> {
        &self.steps.last().expect("trace is non-empty").state
    }

    /// Hidden states stacked as a `len x hidden_dim` matrix.
    pub fn hidden_states(&self) -> Tensor2<T> {
        let rows: Vec<Vec<T>> = self.steps.iter().map(|s| s.state.s.clone()).collect();
        Tensor2::from_rows(&rows).expect("uniform hidden width")
    }

    fn prev_state(&self, t: usize) -> &LstmState<T> {
        if t == 0 {
            &self.init
        } else {
            &self.steps[t - 1].state
        }
    }
}

/// Runs the cell over each row of `xs` starting from `init`.
pub fn sequence_forward<T: Real>(
    xs: &Tensor2<T>,
    init: &LstmState<T>,
    params: &LstmLayerParams<T>,
) -> Result<LstmTrace<T>> {
    if xs.rows() == 0 {
        return Err(Error::usage("sequence_forward on an empty sequence"));
    }
    if xs.rows() > 0 {
        check_step_dims(xs.row(0), init, params)?;
    }
    let mut steps: Vec<StepCache<T>> = Vec::with_capacity(xs.rows());
    for t in 0..xs.rows() {
        let prev = steps.last().map_or(init, |s| &s.state);
        let step = step_unchecked(xs.row(t), prev, params);
        steps.push(step);
    }
    Ok(LstmTrace {
        init: init.clone(),
        inputs: xs.clone(),
        steps,
    })
}

/// Gradients produced by [`sequence_backward`].
#[derive(Clone, Debug)]
pub struct LstmGradients<T> {
    pub params: LstmLayerParams<T>,
    /// Gradient with respect to each input row.
    pub inputs: Tensor2<T>,
    /// Gradient with respect to the initial state.
    pub init: LstmState<T>,
}

/// Backpropagation through time. `d_hidden` row `t` is the upstream gradient
/// of the loss with respect to the hidden state at step `t`. Parameters are
/// only read.
pub fn sequence_backward<T: Real>(
    trace: &LstmTrace<T>,
    params: &LstmLayerParams<T>,
    d_hidden: &Tensor2<T>,
) -> Result<LstmGradients<T>> {
    let (n, h) = (params.input_dim(), params.hidden_dim());
    if d_hidden.rows() != trace.len() || d_hidden.cols() != h {
        return Err(Error::usage(format!(
            "upstream gradients {} do not align with a trace of {} steps x {h} units",
            d_hidden.shape_str(),
            trace.len()
        )));
    }
    if trace.inputs.cols() != n {
        return Err(Error::shape(
            "sequence_backward",
            format!("input_dim {n}"),
            trace.inputs.shape_str(),
        ));
    }

    let mut grads = LstmLayerParams::zeros(n, h, params.has_bias());
    let mut d_inputs = Tensor2::zeros(trace.len(), n);
    let mut ds_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let one = T::one();

    let mut d_i = vec![T::zero(); h];
    let mut d_f = vec![T::zero(); h];
    let mut d_o = vec![T::zero(); h];
    let mut d_g = vec![T::zero(); h];

    for t in (0..trace.len()).rev() {
        let step = &trace.steps[t];
        let prev = trace.prev_state(t);
        let x = trace.inputs.row(t);
        let up = d_hidden.row(t);
        for k in 0..h {
            let ds = up[k] + ds_next[k];
            let tc = step.tanh_c[k];
            let dc = dc_next[k] + ds * step.o[k] * (one - tc * tc);
            d_o[k] = ds * tc * step.o[k] * (one - step.o[k]);
            d_f[k] = dc * prev.c[k] * step.f[k] * (one - step.f[k]);
            d_i[k] = dc * step.g[k] * step.i[k] * (one - step.i[k]);
            d_g[k] = dc * step.i[k] * (one - step.g[k] * step.g[k]);
            dc_next[k] = dc * step.f[k];
        }

        ds_next.iter_mut().for_each(|v| *v = T::zero());
        let dx = d_inputs.row_mut(t);
        for (dz, (u, w, gu, gw)) in [&d_i, &d_f, &d_o, &d_g].into_iter().zip([
            (&params.u_i, &params.w_i, &mut grads.u_i, &mut grads.w_i),
            (&params.u_f, &params.w_f, &mut grads.u_f, &mut grads.w_f),
            (&params.u_o, &params.w_o, &mut grads.u_o, &mut grads.w_o),
            (&params.u_g, &params.w_g, &mut grads.u_g, &mut grads.w_g),
        ]) {
            outer_acc(gu, x, dz);
            outer_acc(gw, &prev.s, dz);
            vec_mat_t_acc(dz, u, dx);
            vec_mat_t_acc(dz, w, &mut ds_next);
        }
        if let Some(b) = grads.biases.as_mut() {
            for (bt, dz) in [&mut b.input, &mut b.forget, &mut b.output, &mut b.cell]
                .into_iter()
                .zip([&d_i, &d_f, &d_o, &d_g])
            {
                for (bv, &d) in bt.as_mut_slice().iter_mut().zip(dz.iter()) {
                    *bv += d;
                }
            }
        }
    }

    Ok(LstmGradients {
        params: grads,
        inputs: d_inputs,
        init: LstmState {
            s: ds_next,
            c: dc_next,
        },
    })
}

/// Simple recurrent step `s' = tanh(x W + s U)`.
///
/// Documented for completeness; the training pipeline only uses LSTM layers.
pub fn rnn_step<T: Real>(x: &[T], prev: &[T], w: &Tensor2<T>, u: &Tensor2<T>) -> Result<Vec<T>> {
    if x.len() != w.rows() || prev.len() != u.rows() || w.cols() != u.cols() || u.rows() != u.cols()
    {
        return Err(Error::shape(
            "rnn_step",
            format!("W {} / U {}", w.shape_str(), u.shape_str()),
            format!("x {} / s {}", x.len(), prev.len()),
        ));
    }
    let mut z = vec![T::zero(); w.cols()];
    vec_mat_acc(x, w, &mut z);
    vec_mat_acc(prev, u, &mut z);
    Ok(z.into_iter().map(T::tanh).collect())
}

/// Output distribution `softmax(s V)` of the simple recurrent network.
pub fn rnn_output<T: Real>(s: &[T], v: &Tensor2<T>) -> Result<Vec<T>> {
    if s.len() != v.rows() {
        return Err(Error::shape(
            "rnn_output",
            v.shape_str(),
            format!("s of length {}", s.len()),
        ));
    }
    let mut z = vec![T::zero(); v.cols()];
    vec_mat_acc(s, v, &mut z);
    softmax(&z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_state() {
        let p = LstmLayerParams::<f64>::zeros(3, 2, false);
        let st = cell_step(&[0.4, -1.0, 2.0], &LstmState::zeros(2), &p).unwrap();
        assert_eq!(st.s, vec![0.0, 0.0]);
        assert_eq!(st.c, vec![0.0, 0.0]);
    }

    #[test]
    fn single_unit_hand_values() {
        let mut p = LstmLayerParams::<f64>::zeros(1, 1, false);
        for t in p.tensors_mut() {
            t.fill(1.0);
        }
        let st = cell_step(&[1.0], &LstmState::zeros(1), &p).unwrap();
        // Reference values from an independent scalar evaluation.
        assert!((st.c[0] - 0.556_769_941_145_939_7).abs() < 1e-12);
        assert!((st.s[0] - 0.369_606_352_935_705_76).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let p = LstmLayerParams::<f64>::zeros(3, 2, true);
        assert!(matches!(
            cell_step(&[1.0], &LstmState::zeros(2), &p),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            cell_step(&[1.0; 3], &LstmState::zeros(4), &p),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            sequence_forward(&Tensor2::zeros(0, 3), &LstmState::zeros(2), &p),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn sequence_matches_manual_fold() {
        let mut rng = Rng::new(9);
        let p = LstmLayerParams::<f64>::init(3, 4, true, &mut rng);
        let xs = Tensor2::uniform(5, 3, 1, &mut rng);
        let trace = sequence_forward(&xs, &LstmState::zeros(4), &p).unwrap();
        let mut st = LstmState::zeros(4);
        for t in 0..5 {
            st = cell_step(xs.row(t), &st, &p).unwrap();
            assert_eq!(trace.state(t), &st);
        }
        let one = sequence_forward(
            &Tensor2::from_rows(&[xs.row(0).to_vec()]).unwrap(),
            &LstmState::zeros(4),
            &p,
        )
        .unwrap();
        assert_eq!(
            one.final_state(),
            &cell_step(xs.row(0), &LstmState::zeros(4), &p).unwrap()
        );
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(10);
        let p = LstmLayerParams::<f64>::init(2, 3, true, &mut rng);
        let xs = Tensor2::uniform(4, 2, 1, &mut rng);
        let before = p.clone();
        let trace = sequence_forward(&xs, &LstmState::zeros(3), &p).unwrap();
        let g = sequence_backward(&trace, &p, &Tensor2::zeros(4, 3)).unwrap();
        assert!(g
            .params
            .tensors()
            .iter()
            .all(|t| t.as_slice().iter().all(|&v| v == 0.0)));
        assert_eq!(p, before);
        assert!(sequence_backward(&trace, &p, &Tensor2::zeros(3, 3)).is_err());
    }

    #[test]
    fn state_stays_bounded() {
        let mut rng = Rng::new(12);
        let mut p = LstmLayerParams::<f64>::init(2, 5, true, &mut rng);
        for t in p.tensors_mut() {
            t.scale(6.0);
        }
        let mut st = LstmState::zeros(5);
        for _ in 0..50 {
            let x = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            let next = cell_step(&x, &st, &p).unwrap();
            for k in 0..5 {
                assert!(next.s[k] > -1.0 && next.s[k] < 1.0);
                assert!(next.c[k].abs() <= st.c[k].abs() + 1.0);
            }
            st = next;
        }
    }

    #[test]
    fn rnn_math() {
        let w = Tensor2::from_rows(&[vec![1.0f64, 0.0]]).unwrap();
        let u = Tensor2::<f64>::zeros(2, 2);
        let s = rnn_step(&[0.5], &[0.0, 0.0], &w, &u).unwrap();
        assert!((s[0] - 0.5f64.tanh()).abs() < 1e-15 && s[1] == 0.0);
        let v = Tensor2::<f64>::zeros(2, 4);
        let y = rnn_output(&s, &v).unwrap();
        assert!(y.iter().all(|p| (p - 0.25).abs() < 1e-15));
        assert!(rnn_step(&[0.5, 1.0], &[0.0, 0.0], &w, &u).is_err());
    }
}
