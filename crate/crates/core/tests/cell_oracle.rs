//! The LSTM cell against a plain scalar implementation of the gate equations.

use convoscan::lstm::{cell_step, LstmLayerParams, LstmState};
use convoscan::math::{Rng, Tensor2};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x U[:, k] + s W[:, k] + b[k]`, summed term by term.
fn pre(
    x: &[f64],
    s: &[f64],
    u: &Tensor2<f64>,
    w: &Tensor2<f64>,
    b: Option<&Tensor2<f64>>,
    k: usize,
) -> f64 {
    let mut z = b.map_or(0.0, |b| b.get(0, k));
    for (j, xj) in x.iter().enumerate() {
        z += xj * u.get(j, k);
    }
    for (j, sj) in s.iter().enumerate() {
        z += sj * w.get(j, k);
    }
    z
}

fn oracle(x: &[f64], prev: &LstmState<f64>, p: &LstmLayerParams<f64>) -> LstmState<f64> {
    let h = prev.s.len();
    let b = p.biases.as_ref();
    let mut next = LstmState::zeros(h);
    for k in 0..h {
        let i = sig(pre(x, &prev.s, &p.u_i, &p.w_i, b.map(|b| &b.input), k));
        let f = sig(pre(x, &prev.s, &p.u_f, &p.w_f, b.map(|b| &b.forget), k));
        let o = sig(pre(x, &prev.s, &p.u_o, &p.w_o, b.map(|b| &b.output), k));
        let g = pre(x, &prev.s, &p.u_g, &p.w_g, b.map(|b| &b.cell), k).tanh();
        next.c[k] = f * prev.c[k] + i * g;
        next.s[k] = o * next.c[k].tanh();
    }
    next
}

fn random_vec(rng: &mut Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-r, r)).collect()
}

#[test]
fn thousand_random_three_unit_cells() {
    let mut rng = Rng::new(2024);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = 1 + rng.below(4);
        let bias = case % 2 == 0;
        let mut p = LstmLayerParams::<f64>::init(n, 3, bias, &mut rng);
        // Wider than the init range so gates leave their linear region.
        for t in [
            &mut p.u_i, &mut p.u_f, &mut p.u_o, &mut p.u_g, &mut p.w_i, &mut p.w_f, &mut p.w_o,
            &mut p.w_g,
        ] {
            for v in t.as_mut_slice() {
                *v = rng.uniform(-2.0, 2.0);
            }
        }
        if let Some(b) = p.biases.as_mut() {
            for t in [&mut b.input, &mut b.forget, &mut b.output, &mut b.cell] {
                for v in t.as_mut_slice() {
                    *v = rng.uniform(-2.0, 2.0);
                }
            }
        }
        let x = random_vec(&mut rng, n, 3.0);
        let prev = LstmState {
            s: random_vec(&mut rng, 3, 1.0),
            c: random_vec(&mut rng, 3, 3.0),
        };
        let got = cell_step(&x, &prev, &p).unwrap();
        let want = oracle(&x, &prev, &p);
        for k in 0..3 {
            worst = worst
                .max((got.s[k] - want.s[k]).abs())
                .max((got.c[k] - want.c[k]).abs());
        }
    }
    assert!(worst <= 1e-12, "max deviation {worst}");
}

#[test]
fn hand_computed_single_unit() {
    // One input, one unit, every weight 0.5, no bias, zero state:
    // pre = 0.5 for all gates, c = σ(.5)·tanh(.5), s = σ(.5)·tanh(c).
    let mut p = LstmLayerParams::<f64>::zeros(1, 1, false);
    for t in [
        &mut p.u_i, &mut p.u_f, &mut p.u_o, &mut p.u_g, &mut p.w_i, &mut p.w_f, &mut p.w_o,
        &mut p.w_g,
    ] {
        t.set(0, 0, 0.5);
    }
    let out = cell_step(&[1.0], &LstmState::zeros(1), &p).unwrap();
    let c = sig(0.5) * 0.5f64.tanh();
    assert!((out.c[0] - c).abs() < 1e-15);
    assert!((out.s[0] - sig(0.5) * c.tanh()).abs() < 1e-15);
    assert!((out.c[0] - 0.287_649_136_644_968).abs() < 1e-12);
    assert!((out.s[0] - 0.174_269_718_656_105).abs() < 1e-12);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let p = LstmLayerParams::<f64>::zeros(2, 3, true);
    assert!(cell_step(&[1.0], &LstmState::zeros(3), &p).is_err());
    assert!(cell_step(&[1.0, 2.0], &LstmState::zeros(2), &p).is_err());
}
