//! Layer-level helpers composed from graph primitives.

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights drawn from U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))).
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::of(rng.random_range(-limit..=limit)))
}

/// Bound parameters of one LSTM cell: `weight` is `[input + hidden, 4·hidden]`
/// with gate blocks ordered (input, forget, candidate, output); `bias` is
/// `[1, 4·hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub weight: Var,
    pub bias: Var,
}

/// One gated LSTM update over a batch. `x` is `[B, input]`, `h` and `c` are
/// `[B, hidden]`. Returns `(h′, c′)`.
pub fn lstm_step<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    h: Var,
    c: Var,
    params: LstmVars,
) -> Result<(Var, Var)> {
    let hidden = g.shape(h)[1];
    let [w_rows, w_cols] = g.shape(params.weight);
    if w_cols != 4 * hidden || w_rows != g.shape(x)[1] + hidden || g.shape(c) != g.shape(h) {
        return Err(Error::shape(
            "lstm_step",
            g.shape(x),
            g.shape(params.weight),
        ));
    }
    let xh = g.concat(&[x, h])?;
    let gates = g.add(g.matmul(xh, params.weight)?, params.bias)?;
    let input = g.sigmoid(g.slice_cols(gates, 0, hidden)?);
    let forget = g.sigmoid(g.slice_cols(gates, hidden, 2 * hidden)?);
    let cand = g.tanh(g.slice_cols(gates, 2 * hidden, 3 * hidden)?);
    let output = g.sigmoid(g.slice_cols(gates, 3 * hidden, 4 * hidden)?);
    let c_next = g.add(g.mul(forget, c)?, g.mul(input, cand)?)?;
    let h_next = g.mul(output, g.tanh(c_next))?;
    Ok((h_next, c_next))
}

/// Same-padded convolution of a single `[T, C]` sequence with `[k·C, F]`
/// kernels plus a `[1, F]` bias, giving `[T, F]`.
pub fn conv1d<T: Scalar>(g: &Graph<T>, x: Var, kernel: Var, bias: Var) -> Result<Var> {
    let seq_len = g.shape(x)[0];
    g.add(g.conv1d(x, kernel, seq_len)?, bias)
}

/// `x·W + b`.
pub fn dense<T: Scalar>(g: &Graph<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    g.add(g.matmul(x, weight)?, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, width: usize) -> Tensor<f64> {
        let (t_len, channels, filters) = (x.rows(), x.cols(), k.cols());
        let pad = (width - 1) / 2;
        let mut out = Tensor::zeros(t_len, filters);
        for t in 0..t_len {
            for f in 0..filters {
                let mut acc = 0.0;
                for j in 0..width {
                    let s = t as isize + j as isize - pad as isize;
                    if s < 0 || s >= t_len as isize {
                        continue;
                    }
                    for c in 0..channels {
                        acc += x.get(s as usize, c) * k.get(j * channels + c, f);
                    }
                }
                out.set(t, f, acc);
            }
        }
        out
    }

    #[test]
    fn zero_lstm_stays_zero() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(2, 3));
        let h = g.leaf(Tensor::zeros(2, 4));
        let c = g.leaf(Tensor::zeros(2, 4));
        let p = LstmVars {
            weight: g.leaf(Tensor::zeros(7, 16)),
            bias: g.leaf(Tensor::zeros(1, 16)),
        };
        let (h1, c1) = lstm_step(&g, x, h, c, p).unwrap();
        assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_carries_cell() {
        let hidden = 3;
        let g = Graph::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = g.leaf(glorot_uniform(&mut rng, 1, 2, 1, 2));
        let h = g.leaf(glorot_uniform(&mut rng, 1, hidden, 1, hidden));
        let c_val = Tensor::row_vector(vec![0.7, -1.2, 2.5]);
        let c = g.leaf(c_val.clone());
        let bias = Tensor::from_fn(1, 4 * hidden, |_, j| match j / hidden {
            0 => -80.0,
            1 => 80.0,
            _ => 0.0,
        });
        let p = LstmVars {
            weight: g.leaf(Tensor::zeros(2 + hidden, 4 * hidden)),
            bias: g.leaf(bias),
        };
        let (_, c1) = lstm_step(&g, x, h, c, p).unwrap();
        assert!(g.value(c1).max_abs_diff(&c_val) < 1e-12);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let g = Graph::<f64>::new();
        let data = Tensor::column_vector(vec![1.0, -2.0, 3.0, 0.5]);
        let x = g.leaf(data.clone());
        let k = g.leaf(Tensor::column_vector(vec![0.0, 1.0, 0.0]));
        let b = g.leaf(Tensor::zeros(1, 1));
        assert_eq!(g.value(conv1d(&g, x, k, b).unwrap()), data);
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::filled(6, 1, 2.5));
        let k = g.leaf(Tensor::filled(3, 1, 1.0));
        let b = g.leaf(Tensor::zeros(1, 1));
        let y = g.value(conv1d(&g, x, k, b).unwrap());
        for t in 1..5 {
            assert_eq!(y.get(t, 0), 7.5);
        }
        assert_eq!(y.get(0, 0), 5.0);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(t_len, channels, filters, width) in
            &[(7, 2, 3, 3), (5, 3, 2, 5), (9, 1, 4, 1), (4, 2, 2, 7)]
        {
            let x: Tensor<f64> = glorot_uniform(&mut rng, t_len, channels, 1, 1);
            let k: Tensor<f64> = glorot_uniform(&mut rng, width * channels, filters, 1, 1);
            let g = Graph::new();
            let xv = g.leaf(x.clone());
            let kv = g.leaf(k.clone());
            let y = g.value(g.conv1d(xv, kv, t_len).unwrap());
            assert!(y.max_abs_diff(&naive_conv(&x, &k, width)) < 1e-14);
        }
    }

    #[test]
    fn conv_rejects_even_kernels() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(5, 2));
        let k = g.leaf(Tensor::zeros(4, 1));
        assert!(matches!(g.conv1d(x, k, 5), Err(Error::Shape { .. })));
    }

    #[test]
    fn batched_conv_matches_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t_len, channels, filters, batch) = (6, 2, 3, 4);
        let samples: Vec<Tensor<f64>> = (0..batch)
            .map(|_| glorot_uniform(&mut rng, t_len, channels, 1, 1))
            .collect();
        let k: Tensor<f64> = glorot_uniform(&mut rng, 3 * channels, filters, 1, 1);
        let stacked = Tensor::from_fn(t_len * batch, channels, |r, c| {
            samples[r % batch].get(r / batch, c)
        });
        let g = Graph::new();
        let kv = g.leaf(k.clone());
        let y = g.value(g.conv1d(g.leaf(stacked), kv, t_len).unwrap());
        for (b, s) in samples.iter().enumerate() {
            let single = naive_conv(s, &k, 3);
            for t in 0..t_len {
                for f in 0..filters {
                    assert!((y.get(t * batch + b, f) - single.get(t, f)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn lstm_step_gradients() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![
                glorot_uniform(&mut rng, 2, 3, 1, 1),
                glorot_uniform(&mut rng, 2, 4, 1, 1),
                glorot_uniform(&mut rng, 2, 4, 1, 1),
                glorot_uniform(&mut rng, 7, 16, 7, 16),
                glorot_uniform(&mut rng, 1, 16, 1, 1),
            ];
            let report = check_gradients(&inputs, 1e-5, |g, v| {
                let (h1, _) = lstm_step(
                    g,
                    v[0],
                    v[1],
                    v[2],
                    LstmVars {
                        weight: v[3],
                        bias: v[4],
                    },
                )?;
                Ok(g.sum(h1))
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }
}
