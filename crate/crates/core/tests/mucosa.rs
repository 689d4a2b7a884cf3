use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabglm::autodiff::Tape;
use tabglm::gradcheck::random_matrix;
use tabglm::mucosa::{consistency_loss, joint_loss, one_sided_consistency, supervised_loss};
use tabglm::tensor::Matrix;

fn loss_value(text: &Matrix, graph: &Matrix, tau: f64) -> f64 {
    let mut t = Tape::new();
    let a = t.constant(text.clone());
    let b = t.constant(graph.clone());
    let l = consistency_loss(&mut t, a, b, tau).unwrap();
    t.value(l).item()
}

/// Direct evaluation of the symmetric loss with plain loops.
fn oracle(text: &Matrix, graph: &Matrix, tau: f64) -> f64 {
    let norm = |m: &Matrix| {
        let mut out = m.clone();
        for r in 0..m.rows() {
            let n = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        out
    };
    let (t, g) = (norm(text), norm(graph));
    let b = t.rows();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let side = |a: &Matrix, o: &Matrix, i: usize| {
        let s: Vec<f64> = (0..b).map(|j| dot(a.row(i), o.row(j)) / tau).collect();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        s[i] - lse
    };
    -(0..b)
        .map(|i| side(&t, &g, i) + side(&g, &t, i))
        .sum::<f64>()
        / (2.0 * b as f64)
}

fn batch(seed: u64) -> (Matrix, Matrix, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.gen_range(1..12);
    let d = rng.gen_range(2..9);
    let tau = rng.gen_range(0.05..2.0);
    (
        random_matrix(&mut rng, b, d),
        random_matrix(&mut rng, b, d),
        tau,
    )
}

#[test]
fn hundred_batches_symmetric_and_scale_invariant() {
    for seed in 0..100 {
        let (text, graph, tau) = batch(seed);
        let l = loss_value(&text, &graph, tau);
        assert!((l - oracle(&text, &graph, tau)).abs() < 1e-9, "seed {seed}");
        assert!(
            (l - loss_value(&graph, &text, tau)).abs() < 1e-12,
            "seed {seed}"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let mut scaled = text.clone();
        for r in 0..scaled.rows() {
            let s: f64 = rng.gen_range(0.01..100.0);
            scaled.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        assert!(
            (l - loss_value(&scaled, &graph, tau)).abs() < 1e-9,
            "seed {seed}"
        );
    }
}

proptest! {
    #[test]
    fn one_sided_gradient_stays_on_the_anchor(seed in any::<u64>()) {
        let (text, graph, tau) = batch(seed);
        let mut t = Tape::new();
        let a = t.param(text);
        let b = t.param(graph);
        let l = one_sided_consistency(&mut t, a, b, tau).unwrap();
        t.backward(l).unwrap();
        prop_assert!(t.grad(b).data().iter().all(|&v| v == 0.0));
        if t.shape(a).0 > 1 {
            prop_assert!(t.grad(a).max_abs() > 0.0);
        }
    }

    #[test]
    fn symmetric_loss_reaches_both_operands(seed in any::<u64>()) {
        let (text, graph, tau) = batch(seed);
        prop_assume!(text.rows() > 1);
        let mut t = Tape::new();
        let a = t.param(text);
        let b = t.param(graph);
        let l = consistency_loss(&mut t, a, b, tau).unwrap();
        t.backward(l).unwrap();
        prop_assert!(t.grad(a).max_abs() > 0.0);
        prop_assert!(t.grad(b).max_abs() > 0.0);
    }
}

#[test]
fn closed_form_values() {
    let eye = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let aligned = loss_value(&eye, &eye, 0.1);
    assert!((aligned - (1.0 + (-10.0f64).exp()).ln()).abs() < 1e-9);
    let same = Matrix::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
    assert!((loss_value(&same, &same, 0.1) - 2.0f64.ln()).abs() < 1e-9);
    let one = Matrix::from_rows(&[vec![3.0, -1.0, 2.0]]).unwrap();
    let other = Matrix::from_rows(&[vec![-1.0, 5.0, 0.5]]).unwrap();
    assert_eq!(loss_value(&one, &other, 0.1), 0.0);
}

#[test]
fn cross_entropy_values() {
    let mut t = Tape::new();
    let logits = t.constant(Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap());
    let l = supervised_loss(&mut t, logits, &[0]).unwrap();
    assert!((t.value(l).item() - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);

    let uniform = t.constant(Matrix::zeros(3, 4));
    let l = supervised_loss(&mut t, uniform, &[0, 3, 1]).unwrap();
    assert!((t.value(l).item() - 4.0f64.ln()).abs() < 1e-12);

    let peaked = t.constant(Matrix::from_rows(&[vec![20.0, 0.0], vec![0.0, 20.0]]).unwrap());
    let l = supervised_loss(&mut t, peaked, &[0, 1]).unwrap();
    assert!(t.value(l).item() < 1e-8);
    assert!(supervised_loss(&mut t, peaked, &[0, 2]).is_err());
}

#[test]
fn joint_weighting() {
    let mut t = Tape::new();
    let sup = t.constant(Matrix::scalar(1.0));
    let cons = t.constant(Matrix::scalar(0.5));
    for (lambda, want) in [(0.0, 1.0), (0.2, 0.9), (1.0, 0.5)] {
        let j = joint_loss(&mut t, sup, cons, lambda).unwrap();
        assert!((t.value(j).item() - want).abs() < 1e-15);
    }
}
