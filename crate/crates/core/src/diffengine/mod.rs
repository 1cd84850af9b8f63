//! Minimal reverse-mode differentiation over dense arrays, plus the Adam
//! optimizer and its learning-rate schedule.

pub mod gradcheck;
mod optim;
mod tape;

pub use optim::{lr_schedule, AdamConfig, OptimizerState};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.random_range(lo..hi))
    }

    #[test]
    fn gradient_examples() {
        let mut tape = Tape::new();
        let x = tape.scalar(3.0);
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(&tape, x)[[0, 0]], 6.0);

        let mut tape = Tape::new();
        let x = tape.scalar(2.0);
        let y = tape.scalar(5.0);
        let p = tape.mul(x, y).unwrap();
        let g = tape.backward(p).unwrap();
        assert_eq!(g.wrt(&tape, x)[[0, 0]], 5.0);
        assert_eq!(g.wrt(&tape, y)[[0, 0]], 2.0);
    }

    #[test]
    fn forward_examples() {
        let mut tape = Tape::<f64>::new();
        let zero = tape.scalar(0.0);
        let one = tape.scalar(1.0);
        let d = tape.gaussian_log_density(zero, zero, one).unwrap();
        assert_abs_diff_eq!(tape.scalar_value(d), -0.918_938_533_204_672_7, epsilon = 1e-15);
        let sp = tape.softplus(zero);
        assert_abs_diff_eq!(tape.scalar_value(sp), std::f64::consts::LN_2, epsilon = 1e-15);
        let m = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let a = tape.leaf(m.clone());
        let eye = tape.leaf(Array2::eye(4));
        let p = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(p), &m);
        let bad = tape.leaf(Array2::zeros((3, 3)));
        assert!(tape.matmul(a, bad).is_err());
        assert!(tape.add(a, bad).is_err());
        let neg = tape.scalar(-1.0);
        assert!(tape.gaussian_log_density(zero, zero, neg).is_err());
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn finite_difference_every_op() {
        let cases = gradcheck::standard_cases();
        assert_eq!(cases.len(), 23);
        for (i, case) in cases.iter().enumerate() {
            let err = case.max_relative_error(100, 977 * i as u64).unwrap();
            assert!(err < 1e-5, "{}: relative error {err}", case.name);
        }
    }

    #[test]
    fn three_layer_tanh_network_gradient() {
        // 2-3-2-1 network: 9 + 8 + 3 = 20 parameters
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = rand_matrix(&mut rng, (5, 2), -1.0, 1.0);
        let params: Vec<Array2<f64>> = [(2, 3), (1, 3), (3, 2), (1, 2), (2, 1), (1, 1)]
            .iter()
            .map(|&s| rand_matrix(&mut rng, s, -1.0, 1.0))
            .collect();
        assert_eq!(params.iter().map(|p| p.len()).sum::<usize>(), 20);
        let forward = |params: &[Array2<f64>]| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let p: Vec<Var> = params.iter().map(|v| tape.leaf(v.clone())).collect();
            let a1 = tape.affine(xv, p[0], p[1]).unwrap();
            let h1 = tape.tanh(a1);
            let a2 = tape.affine(h1, p[2], p[3]).unwrap();
            let h2 = tape.tanh(a2);
            let a3 = tape.affine(h2, p[4], p[5]).unwrap();
            let h3 = tape.tanh(a3);
            let root = tape.sum(h3);
            (tape, p, root)
        };
        let (tape, vars, root) = forward(&params);
        let grads = tape.backward(root).unwrap();
        for i in 0..params.len() {
            let f = |v: &Array2<f64>| {
                let mut ps = params.clone();
                ps[i] = v.clone();
                let (t, _, r) = forward(&ps);
                t.scalar_value(r)
            };
            let fd = gradcheck::finite_difference(&params[i], &f, 1e-5);
            for (a, b) in grads.wrt(&tape, vars[i]).iter().zip(fd.iter()) {
                assert!((a - b).abs() / a.abs().max(b.abs()).max(1e-8) < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_linear_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xv = rand_matrix(&mut rng, (3, 3), -1.0, 1.0);
        let build = |a: f64, b: f64| {
            let mut tape = Tape::new();
            let x = tape.leaf(xv.clone());
            let t1 = tape.tanh(x);
            let f = tape.sum(t1);
            let e = tape.exp(x);
            let g = tape.mean(e).unwrap();
            let fa = tape.scale(f, a);
            let gb = tape.scale(g, b);
            let root = tape.add(fa, gb).unwrap();
            let grads = tape.backward(root).unwrap();
            grads.wrt(&tape, x)
        };
        let combined = build(2.0, -3.0);
        let separate = build(1.0, 0.0) * 2.0 + build(0.0, 1.0) * -3.0;
        for (a, b) in combined.iter().zip(separate.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(build(0.3, 0.7), build(0.3, 0.7));
    }
}
