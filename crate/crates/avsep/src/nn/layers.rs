//! Composite layers built from tape primitives: linear maps, layer norm,
//! multi-head attention, and (bi)directional LSTMs.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::nn::params::{xavier, zeros, BoundParams, ParamSet};
use crate::nn::tape::{Tape, Var};

pub fn init_linear(params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, din: usize, dout: usize) {
    params.insert(format!("{prefix}.w"), xavier(rng, din, dout));
    params.insert(format!("{prefix}.b"), zeros(1, dout));
}

pub fn linear(tape: &mut Tape, bp: &BoundParams, prefix: &str, x: Var) -> Var {
    let w = bp.var(&format!("{prefix}.w"));
    let b = bp.var(&format!("{prefix}.b"));
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

pub fn init_layer_norm(params: &mut ParamSet, prefix: &str, d: usize) {
    params.insert(format!("{prefix}.g"), Array2::from_elem((1, d), 1.0));
    params.insert(format!("{prefix}.b"), zeros(1, d));
}

pub fn layer_norm(tape: &mut Tape, bp: &BoundParams, prefix: &str, x: Var) -> Var {
    let g = bp.var(&format!("{prefix}.g"));
    let b = bp.var(&format!("{prefix}.b"));
    tape.layer_norm_rows(x, g, b)
}

pub fn init_mha(params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, d: usize) {
    for name in ["q", "k", "v", "o"] {
        init_linear(params, rng, &format!("{prefix}.{name}"), d, d);
    }
}

/// Multi-head attention output: the projected result and the per-head
/// attention matrices (rows are softmax distributions over key positions).
pub struct MhaOutput {
    pub out: Var,
    pub attn: Vec<Var>,
}

/// Multi-head attention with `query` attending over `keyval`. Shapes:
/// query Tq x d, keyval Tk x d, output Tq x d.
pub fn multi_head_attention(
    tape: &mut Tape,
    bp: &BoundParams,
    prefix: &str,
    n_heads: usize,
    query: Var,
    keyval: Var,
) -> MhaOutput {
    let d = tape.value(query).ncols();
    assert!(d % n_heads == 0, "model dim {d} not divisible by {n_heads} heads");
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = linear(tape, bp, &format!("{prefix}.q"), query);
    let k = linear(tape, bp, &format!("{prefix}.k"), keyval);
    let v = linear(tape, bp, &format!("{prefix}.v"), keyval);

    let mut head_outs = Vec::with_capacity(n_heads);
    let mut attns = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scaled = tape.scalar_affine(scores, scale, 0.0);
        let attn = tape.softmax_rows(scaled);
        let out = tape.matmul(attn, vh);
        head_outs.push(out);
        attns.push(attn);
    }
    let concat = tape.concat_cols(&head_outs);
    let out = linear(tape, bp, &format!("{prefix}.o"), concat);
    MhaOutput { out, attn: attns }
}

pub fn init_lstm(params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, din: usize, hidden: usize) {
    params.insert(format!("{prefix}.wx"), xavier(rng, din, 4 * hidden));
    params.insert(format!("{prefix}.wh"), xavier(rng, hidden, 4 * hidden));
    // Forget-gate bias starts at 1 so early gradients flow through time.
    let mut b = zeros(1, 4 * hidden);
    for j in hidden..2 * hidden {
        b[(0, j)] = 1.0;
    }
    params.insert(format!("{prefix}.b"), b);
}

/// One LSTM direction over a T x din sequence, returning T x hidden states
/// in time order. Gate layout in the 4h axis: input, forget, cell, output.
pub fn lstm_direction(
    tape: &mut Tape,
    bp: &BoundParams,
    prefix: &str,
    x: Var,
    hidden: usize,
    reverse: bool,
) -> Var {
    let steps = tape.value(x).nrows();
    let wx = bp.var(&format!("{prefix}.wx"));
    let wh = bp.var(&format!("{prefix}.wh"));
    let b = bp.var(&format!("{prefix}.b"));

    // All input projections in one matmul; the recurrent part runs per step.
    let xw = tape.matmul(x, wx);

    let mut h_prev = tape.leaf(Array2::zeros((1, hidden)));
    let mut c_prev = tape.leaf(Array2::zeros((1, hidden)));
    let mut states: Vec<Var> = Vec::with_capacity(steps);

    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let xt = tape.slice_rows(xw, t, 1);
        let hw = tape.matmul(h_prev, wh);
        let pre = tape.add(xt, hw);
        let z = tape.add_row(pre, b);
        let zi = tape.slice_cols(z, 0, hidden);
        let zf = tape.slice_cols(z, hidden, hidden);
        let zg = tape.slice_cols(z, 2 * hidden, hidden);
        let zo = tape.slice_cols(z, 3 * hidden, hidden);
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul_elem(f, c_prev);
        let ig = tape.mul_elem(i, g);
        let c = tape.add(fc, ig);
        let ct = tape.tanh(c);
        let h = tape.mul_elem(o, ct);
        states.push(h);
        h_prev = h;
        c_prev = c;
    }
    if reverse {
        states.reverse();
    }
    tape.concat_rows(&states)
}

pub fn init_bilstm(params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, din: usize, hidden: usize) {
    init_lstm(params, rng, &format!("{prefix}.fwd"), din, hidden);
    init_lstm(params, rng, &format!("{prefix}.bwd"), din, hidden);
}

/// Bidirectional LSTM: forward and backward passes concatenated along the
/// feature axis (T x 2*hidden).
pub fn bilstm(tape: &mut Tape, bp: &BoundParams, prefix: &str, x: Var, hidden: usize) -> Var {
    let fwd = lstm_direction(tape, bp, &format!("{prefix}.fwd"), x, hidden, false);
    let bwd = lstm_direction(tape, bp, &format!("{prefix}.bwd"), x, hidden, true);
    tape.concat_cols(&[fwd, bwd])
}

/// Fixed sinusoidal position code, frames x dim.
pub fn sinusoidal_positions(frames: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((frames, dim), |(t, j)| {
        let pair = (j / 2) as f64;
        let rate = 10_000f64.powf(2.0 * pair / dim as f64);
        let angle = t as f64 / rate;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    fn randm(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut params = ParamSet::new();
        init_mha(&mut params, &mut rng(), "mha", 8);
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let q = tape.leaf(randm(5, 8, 1));
        let kv = tape.leaf(randm(7, 8, 2));
        let out = multi_head_attention(&mut tape, &bp, "mha", 2, q, kv);
        assert_eq!(tape.value(out.out).dim(), (5, 8));
        for attn in &out.attn {
            let a = tape.value(*attn);
            assert_eq!(a.dim(), (5, 7));
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lstm_shapes_and_direction_differ() {
        let mut params = ParamSet::new();
        init_lstm(&mut params, &mut rng(), "l", 3, 4);
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let x = tape.leaf(randm(6, 3, 3));
        let fwd = lstm_direction(&mut tape, &bp, "l", x, 4, false);
        let bwd = lstm_direction(&mut tape, &bp, "l", x, 4, true);
        assert_eq!(tape.value(fwd).dim(), (6, 4));
        assert_eq!(tape.value(bwd).dim(), (6, 4));
        assert_ne!(tape.value(fwd), tape.value(bwd));
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        // End-to-end gradient check through the recurrent composite.
        let din = 3;
        let hidden = 2;
        let steps = 4;
        let mut params = ParamSet::new();
        init_bilstm(&mut params, &mut rng(), "bl", din, hidden);
        let x0 = randm(steps, din, 7);

        let run = |ps: &ParamSet, x: &Array2<f64>| {
            let mut tape = Tape::new();
            let bp = ps.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let y = bilstm(&mut tape, &bp, "bl", xv, hidden);
            let sq = tape.mul_elem(y, y);
            let loss = tape.mean(sq);
            (tape, bp, loss)
        };

        let (tape, bp, loss) = run(&params, &x0);
        let grads = tape.backward(loss);

        let h = 1e-6;
        for name in params.names().map(str::to_string).collect::<Vec<_>>() {
            let analytic = grads.get(bp.var(&name)).unwrap().clone();
            let dim = params.get(&name).unwrap().dim();
            for r in 0..dim.0 {
                for c in (0..dim.1).step_by(3) {
                    let mut plus = params.clone();
                    plus.get_mut(&name).unwrap()[(r, c)] += h;
                    let (tp, _, lp) = run(&plus, &x0);
                    let mut minus = params.clone();
                    minus.get_mut(&name).unwrap()[(r, c)] -= h;
                    let (tm, _, lm) = run(&minus, &x0);
                    let numeric = (tp.value(lp)[(0, 0)] - tm.value(lm)[(0, 0)]) / (2.0 * h);
                    let a = analytic[(r, c)];
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (a - numeric).abs() / denom < 1e-4,
                        "{name}[{r},{c}]: analytic {a} numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn positions_are_bounded_and_distinct() {
        let p = sinusoidal_positions(10, 6);
        assert!(p.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(p.row(0), p.row(5));
    }
}
