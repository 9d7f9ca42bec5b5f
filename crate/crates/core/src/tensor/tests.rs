use super::*;
use crate::rng::SeededRng;
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut SeededRng) -> Vec<f64> {
    (0..shape.iter().product::<usize>())
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect()
}

fn params_of(specs: &[(&str, &[usize])], seed: u64) -> ParameterSet {
    let mut rng = SeededRng::new(seed);
    let mut ps = ParameterSet::new();
    for (name, shape) in specs {
        ps.insert(*name, Tensor::param(shape, random(shape, &mut rng)).unwrap())
            .unwrap();
    }
    ps
}

fn assert_grads<F>(f: F, ps: &ParameterSet, tol: f64)
where
    F: Fn(&ParameterSet) -> Result<Tensor>,
{
    let report = grad_check(f, ps, 1e-5, tol).unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn matmul_identity_and_hand_sum() {
    let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(eye.matmul(&m).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    let a = t(&[1, 2], &[1.0, 2.0]);
    let b = t(&[2, 1], &[3.0, 4.0]);
    assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let err = t(&[2, 3], &[0.0; 6]).matmul(&t(&[2, 2], &[0.0; 4])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn matmul_gradient_matches_central_difference() {
    let ps = params_of(&[("a", &[3, 4]), ("b", &[4, 2])], 11);
    assert_grads(
        |p| {
            let c = p.get("a")?.matmul(p.get("b")?)?;
            Ok(c.mul(&c)?.sum())
        },
        &ps,
        1e-6,
    );
}

#[test]
fn batch_matmul_gradients() {
    let ps = params_of(&[("a", &[2, 3, 4]), ("b", &[2, 4, 2]), ("c", &[2, 5, 4])], 12);
    assert_grads(
        |p| {
            let x = p.get("a")?.batch_matmul(p.get("b")?, false)?;
            let y = p.get("a")?.batch_matmul(p.get("c")?, true)?;
            Ok(x.tanh().sum().add(&y.tanh().sum())?)
        },
        &ps,
        1e-6,
    );
}

#[test]
fn unary_reference_values() {
    let zero = Tensor::scalar(0.0);
    assert_eq!(zero.sigmoid().data(), &[0.5]);
    assert_eq!(zero.tanh().data(), &[0.0]);
    // 1 / (1 + e^-1)
    let s1 = Tensor::scalar(1.0).sigmoid().item().unwrap();
    assert!((s1 - 0.731_058_578_630_004_9).abs() < 1e-15);
}

#[test]
fn log1p_domain_is_checked() {
    let x = t(&[2], &[0.5, -1.0]);
    assert!(matches!(
        x.map_unary(UnaryOp::Log1p),
        Err(crate::Error::NumericDomain(_))
    ));
}

#[test]
fn unary_gradients() {
    let ps = params_of(&[("x", &[2, 3])], 13);
    for kind in [
        UnaryOp::Sigmoid,
        UnaryOp::Tanh,
        UnaryOp::Exp,
        UnaryOp::Log1p,
        UnaryOp::Relu,
    ] {
        assert_grads(
            |p| {
                let y = p.get("x")?.map_unary(kind)?;
                Ok(y.mul(&y)?.sum())
            },
            &ps,
            1e-6,
        );
    }
}

#[test]
fn binary_elementwise() {
    let x = t(&[2], &[2.0, 3.0]);
    assert_eq!(x.add(&Tensor::zeros(&[2])).unwrap().data(), x.data());
    assert_eq!(x.mul(&t(&[2], &[4.0, 5.0])).unwrap().data(), &[8.0, 15.0]);
    assert!(x.add(&Tensor::zeros(&[3])).is_err());
}

#[test]
fn broadcast_bias_gradient_is_column_sum() {
    let ps = params_of(&[("x", &[2, 3]), ("b", &[1, 3])], 14);
    let upstream = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let y = ps.get("x").unwrap().add(ps.get("b").unwrap()).unwrap();
    y.mul(&upstream).unwrap().sum().backward().unwrap();
    assert_eq!(ps.get("b").unwrap().grad().unwrap(), vec![5.0, 7.0, 9.0]);

    let ps = params_of(&[("x", &[2, 3]), ("b", &[3])], 15);
    for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul] {
        assert_grads(
            |p| {
                let y = p.get("x")?.map_binary(p.get("b")?, op)?;
                Ok(y.mul(&y)?.sum())
            },
            &ps,
            1e-6,
        );
    }
}

#[test]
fn softmax_reference_rows() {
    let y = t(&[1, 3], &[0.0, 0.0, 0.0]).softmax_rows().unwrap();
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let e = std::f64::consts::E;
    let y = t(&[1, 2], &[1.0, 0.0]).softmax_rows().unwrap();
    assert!((y.data()[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((y.data()[0] - 0.731_058_6).abs() < 1e-7);
    assert!((y.data()[1] - 0.268_941_4).abs() < 1e-7);
    let y = t(&[1, 2], &[1000.0, 0.0]).softmax_rows().unwrap();
    assert!(y.data().iter().all(|v| v.is_finite()));
    assert!((y.data()[0] - 1.0).abs() < 1e-12 && y.data()[1] < 1e-300);
}

#[test]
fn softmax_rejects_non_finite() {
    assert!(matches!(
        t(&[1, 2], &[f64::NAN, 0.0]).softmax_rows(),
        Err(crate::Error::Numeric(_))
    ));
}

#[test]
fn causal_softmax_masks_future() {
    let x = t(&[3, 3], &[1.0, 5.0, 5.0, 1.0, 2.0, 9.0, 0.1, 0.2, 0.3]);
    let y = x.softmax_rows_causal().unwrap();
    assert_eq!(&y.data()[..3], &[1.0, 0.0, 0.0]);
    assert_eq!(y.data()[5], 0.0);
    let ps = params_of(&[("x", &[2, 3, 3])], 16);
    assert_grads(
        |p| {
            let y = p.get("x")?.softmax_rows_causal()?;
            Ok(y.mul(&y)?.sum())
        },
        &ps,
        1e-6,
    );
}

#[test]
fn concat_and_slice_are_inverse() {
    let a = t(&[1, 2], &[1.0, 2.0]);
    let b = t(&[1, 1], &[3.0]);
    let c = Tensor::concat_last(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(c.data(), &[1.0, 2.0, 3.0]);
    assert_eq!(c.slice_last(0, 2).unwrap().data(), a.data());
    assert_eq!(c.slice_last(2, 1).unwrap().data(), b.data());
    assert!(Tensor::concat_last(&[a, t(&[2, 1], &[0.0, 0.0])]).is_err());
}

#[test]
fn concat_gradient_splits() {
    let ps = params_of(&[("a", &[2, 2]), ("b", &[2, 3])], 17);
    assert_grads(
        |p| {
            let c = Tensor::concat_last(&[p.get("a")?.clone(), p.get("b")?.clone()])?;
            let w = Tensor::new(&[5, 1], vec![0.3, -1.0, 2.0, 0.5, 1.5])?;
            Ok(c.tanh().matmul(&w)?.sum())
        },
        &ps,
        1e-6,
    );
}

#[test]
fn layer_norm_cases() {
    let ones = Tensor::new(&[3], vec![1.0; 3]).unwrap();
    let zeros = Tensor::zeros(&[3]);
    let y = t(&[1, 3], &[4.0, 4.0, 4.0]).layer_norm(&ones, &zeros, 1e-5).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let g = Tensor::new(&[2], vec![1.0; 2]).unwrap();
    let y = t(&[1, 2], &[1.0, 3.0]).layer_norm(&g, &Tensor::zeros(&[2]), 1e-5).unwrap();
    assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);

    let ps = params_of(&[("x", &[3, 4]), ("g", &[4]), ("b", &[4])], 18);
    assert_grads(
        |p| {
            let y = p.get("x")?.layer_norm(p.get("g")?, p.get("b")?, 1e-5)?;
            let w = Tensor::new(&[3, 4], (0..12).map(|i| (i as f64).sin()).collect())?;
            Ok(y.mul(&w)?.sum())
        },
        &ps,
        1e-5,
    );
}

#[test]
fn dropout_modes() {
    let mut rng = SeededRng::new(1);
    let x = t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]);
    let y = x.dropout(0.0, true, &mut rng).unwrap();
    assert_eq!(y.data(), x.data());
    let y = x.dropout(0.5, false, &mut rng).unwrap();
    assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(matches!(x.dropout(1.0, true, &mut rng), Err(crate::Error::Parameter(_))));
}

#[test]
fn dropout_preserves_mean_in_expectation() {
    let n = 100_000;
    let x = Tensor::new(&[n], vec![1.0; n]).unwrap();
    let mut rng = SeededRng::new(99);
    let y = x.dropout(0.5, true, &mut rng).unwrap();
    let mean = y.data().iter().sum::<f64>() / n as f64;
    // Each element is 0 or 2 with equal odds: variance 1.
    let sigma = (1.0 / n as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
}

#[test]
fn dropout_masks_are_seed_deterministic() {
    let x = Tensor::new(&[64], vec![1.0; 64]).unwrap();
    let a = x.dropout(0.3, true, &mut SeededRng::new(5)).unwrap();
    let b = x.dropout(0.3, true, &mut SeededRng::new(5)).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn embedding_cases() {
    let table = t(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(table.embedding_lookup(&[1]).unwrap().data(), &[2.0, 3.0]);
    let empty = table.embedding_lookup(&[]).unwrap();
    assert_eq!(empty.shape(), &[0, 2]);
    let err = table.embedding_lookup(&[3]).unwrap_err().to_string();
    assert!(err.contains('3'));

    let ps = params_of(&[("e", &[4, 3])], 19);
    let out = ps.get("e").unwrap().embedding_lookup(&[2, 0, 2]).unwrap();
    out.sum().backward().unwrap();
    let g = ps.get("e").unwrap().grad().unwrap();
    assert_eq!(&g[6..9], &[2.0, 2.0, 2.0]);
    assert_eq!(&g[3..6], &[0.0, 0.0, 0.0]);
    assert_grads(
        |p| {
            let y = p.get("e")?.embedding_lookup(&[2, 0, 2, 1])?;
            Ok(y.mul(&y)?.sum())
        },
        &ps,
        1e-6,
    );
}

#[test]
fn backward_linear_and_quadratic() {
    let w = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    w.sum().backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![1.0; 3]);

    let w = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    w.mul(&w).unwrap().sum().backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![2.0, -4.0, 1.0]);
}

#[test]
fn backward_accumulates_across_calls() {
    let w = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
    let loss = w.mul(&w).unwrap().sum();
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![4.0, 8.0]);
    w.zero_grad();
    assert!(w.grad().is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let w = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(w.tanh().backward(), Err(crate::Error::Contract(_))));
}

#[test]
fn shared_tensor_sums_both_paths() {
    let ps = params_of(&[("x", &[2, 2])], 20);
    assert_grads(
        |p| {
            let x = p.get("x")?;
            let h = x.tanh();
            // h feeds two consumers
            let a = h.mul(x)?;
            let b = h.sigmoid();
            Ok(a.add(&b)?.sum())
        },
        &ps,
        1e-6,
    );
}

#[test]
fn heads_round_trip_and_gradient() {
    let x = t(&[1, 2, 4], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let s = x.split_heads(2).unwrap();
    assert_eq!(s.shape(), &[2, 2, 2]);
    assert_eq!(s.data(), &[0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
    assert_eq!(s.merge_heads(2).unwrap().data(), x.data());
    let ps = params_of(&[("x", &[2, 3, 4])], 21);
    assert_grads(
        |p| {
            let s = p.get("x")?.split_heads(2)?.tanh();
            let w = Tensor::new(&[4, 3, 2], (0..24).map(|i| (i as f64).cos()).collect())?;
            Ok(s.mul(&w)?.merge_heads(2)?.sum())
        },
        &ps,
        1e-6,
    );
}

#[test]
fn time_step_and_stack_gradients() {
    let ps = params_of(&[("x", &[2, 3, 2])], 22);
    assert_grads(
        |p| {
            let x = p.get("x")?;
            let steps: Vec<Tensor> = (0..3).rev().map(|i| x.time_step(i).map(|s| s.tanh())).collect::<Result<_>>()?;
            let y = Tensor::stack_time(&steps)?;
            let w = Tensor::new(&[2, 3, 2], (0..12).map(|i| 0.1 * i as f64).collect())?;
            Ok(y.mul(&w)?.sum())
        },
        &ps,
        1e-6,
    );
}

#[test]
fn additive_scores_gradient() {
    let ps = params_of(&[("q", &[2, 2, 3]), ("k", &[2, 4, 3]), ("v", &[3])], 23);
    assert_grads(
        |p| {
            let e = Tensor::additive_scores(p.get("q")?, p.get("k")?, p.get("v")?)?;
            Ok(e.softmax_rows()?.mul(&e)?.sum())
        },
        &ps,
        1e-6,
    );
}

#[test]
fn loss_reference_values() {
    let x = t(&[2, 2], &[0.3, -0.1, 2.0, 1.0]);
    assert_eq!(x.mse(&x).unwrap().item().unwrap(), 0.0);

    let uniform = t(&[2, 5], &[0.7; 10]);
    let ce = uniform.sparse_ce(&[1, 4]).unwrap().item().unwrap();
    assert!((ce - 5f64.ln()).abs() < 1e-12);

    let p = t(&[1, 3], &[0.0, 1.0, 0.0]);
    assert_eq!(p.categorical_ce(&p).unwrap().item().unwrap(), 0.0);

    assert!(matches!(
        t(&[1, 2], &[f64::NAN, 1.0]).sparse_ce(&[0]),
        Err(crate::Error::Numeric(_))
    ));
}

#[test]
fn loss_gradients() {
    let ps = params_of(&[("x", &[3, 4])], 24);
    let target = Tensor::new(&[3, 4], (0..12).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
    let onehot = Tensor::new(
        &[3, 4],
        vec![0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1.],
    )
    .unwrap();
    assert_grads(|p| p.get("x")?.sparse_ce(&[1, 0, 3]), &ps, 1e-6);
    assert_grads(|p| p.get("x")?.mse(&target), &ps, 1e-6);
    assert_grads(
        |p| p.get("x")?.softmax_rows()?.categorical_ce(&onehot),
        &ps,
        1e-6,
    );
}

#[test]
fn grad_check_product_and_dead_parameter() {
    let mut ps = ParameterSet::new();
    ps.insert("x", Tensor::param(&[1], vec![2.0]).unwrap()).unwrap();
    ps.insert("y", Tensor::param(&[1], vec![3.0]).unwrap()).unwrap();
    ps.insert("dead", Tensor::param(&[2], vec![1.0, 1.0]).unwrap()).unwrap();
    let report = grad_check(
        |p| p.get("x")?.mul(p.get("y")?),
        &ps,
        1e-5,
        1e-8,
    )
    .unwrap();
    assert!(report.passed(), "{report}");
    assert_eq!(report.entries.len(), 3);
    assert_eq!(report.entries[2].max_rel_err, 0.0);
    let text = report.to_string();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().starts_with("x "));
    assert!(text.lines().all(|l| l.ends_with(" pass")));
}

#[test]
fn grad_check_detects_nondeterminism() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    let calls = AtomicUsize::new(0);
    let mut ps = ParameterSet::new();
    ps.insert("x", Tensor::param(&[1], vec![1.0]).unwrap()).unwrap();
    let res = grad_check(
        |p| {
            let n = calls.fetch_add(1, Ordering::SeqCst) as f64;
            p.get("x")?.add(&Tensor::scalar(n))
        },
        &ps,
        1e-5,
        1e-4,
    );
    assert!(matches!(res, Err(crate::Error::Oracle(_))));
}

#[test]
fn grad_check_rejects_bad_step() {
    let ps = params_of(&[("x", &[1])], 1);
    assert!(grad_check(|p| Ok(p.get("x")?.sum()), &ps, 0.0, 1e-4).is_err());
}

#[test]
fn deep_graph_drops_without_overflow() {
    let w = Tensor::param(&[1], vec![0.5]).unwrap();
    let mut x = w.clone();
    for _ in 0..200_000 {
        x = x.scale(1.0);
    }
    x.backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![1.0]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 1..8), 1..5)
    ) {
        let n = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| {
            let mut r = r.clone();
            r.resize(n, 0.0);
            r
        }).collect();
        let m = rows.len();
        let y = Tensor::new(&[m, n], data).unwrap().softmax_rows().unwrap();
        for r in 0..m {
            let row = &y.data()[r * n..(r + 1) * n];
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
