use super::*;
use crate::error::Error;

fn ln(x: f64) -> f64 {
    x.ln()
}

#[test]
fn cosine_of_identical_vectors_is_one() {
    let mut g = Graph::new();
    let u = g.input(Tensor::vector(vec![0.3, -1.2, 2.0]));
    let s = g.cosine_sim(u, u).unwrap();
    assert!((g.value(s).item() - 1.0).abs() < 1e-15);
}

#[test]
fn uniform_cross_entropy_is_log_classes() {
    let mut g = Graph::new();
    let logits = g.input(Tensor::matrix(1, 7, vec![0.25; 7]).unwrap());
    for target in 0..7 {
        let l = g.cross_entropy(logits, &[target]).unwrap();
        assert!((g.value(l).item() - ln(7.0)).abs() < 1e-14);
    }
}

#[test]
fn softmax_of_zeros_is_half() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![0.0, 0.0]));
    let s = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn square_gradient() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[6.0]);
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::new();
    let z = g.variable(Tensor::vector(vec![0.4, -0.1, 0.9]));
    let v = g.variable(Tensor::vector(vec![-0.2, 0.7, 0.3]));
    let dv = g.detach(v);
    let s = g.cosine_sim(z, dv).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(v).is_none_or(|gv| gv.iter().all(|&x| x == 0.0)));
    assert!(grads.wrt(z).unwrap().iter().any(|&x| x != 0.0));
}

#[test]
fn detach_is_value_transparent() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::matrix(2, 3, vec![0.1, 0.5, -0.3, 2.0, -1.0, 0.25]).unwrap());
    let d = g.detach(x);
    let a = g.softmax(x, 1).unwrap();
    let b = g.softmax(d, 1).unwrap();
    assert_eq!(g.value(a).data(), g.value(b).data());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    let c = g.input(Tensor::zeros(&[4]));
    assert!(g.add(a, c).unwrap_err().to_string().contains("add"));
}

#[test]
fn embedding_rejects_out_of_range_ids() {
    let mut g = Graph::new();
    let t = g.input(Tensor::zeros(&[3, 2]));
    assert!(matches!(
        g.embedding(t, &[0, 3]),
        Err(Error::IdOutOfRange { id: 3, limit: 3, .. })
    ));
}

#[test]
fn softmax_rows_sum_to_one_and_layer_norm_is_standardized() {
    let mut r = crate::rng::stream(11, 0, 0);
    use rand::Rng;
    for _ in 0..20 {
        let data: Vec<f64> = (0..5 * 8).map(|_| r.random_range(-6.0..6.0)).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(5, 8, data).unwrap());
        let s = g.softmax(x, 1).unwrap();
        for row in g.value(s).data().chunks(8) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let s0 = g.softmax(x, 0).unwrap();
        for j in 0..8 {
            let col: f64 = (0..5).map(|i| g.value(s0).data()[i * 8 + j]).sum();
            assert!((col - 1.0).abs() <= 1e-12);
        }
        let y = g.layer_norm(x, 1, 1e-12).unwrap();
        for row in g.value(y).data().chunks(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() <= 1e-10);
            assert!((var - 1.0).abs() <= 1e-8);
        }
    }
}

#[test]
fn backward_twice_is_idempotent() {
    let mut store = ParamStore::new();
    let w = store
        .insert("w", Tensor::matrix(2, 2, vec![0.5, -0.3, 0.8, 0.1]).unwrap())
        .unwrap();
    let run = |store: &ParamStore| {
        let mut g = Graph::with_params(store);
        let x = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let wv = g.param(w);
        let y = g.matmul(x, wv).unwrap();
        let y = g.gelu(y);
        let l = g.sum(y);
        g.backward(l).unwrap().into_param_grads()
    };
    store.zero_grad();
    store.accumulate(&run(&store));
    let first = store.get(w).grad.clone().unwrap();
    store.zero_grad();
    store.accumulate(&run(&store));
    assert_eq!(store.get(w).grad.as_ref().unwrap(), &first);
}

#[test]
fn linear_map_gradcheck_is_exact() {
    let a = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap();
    let x = Tensor::matrix(4, 2, (0..8).map(|i| (i as f64).sin()).collect()).unwrap();
    let report = grad_check(
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            Ok(g.sum(y))
        },
        &[a, x],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-9, "{report:?}");
}

#[test]
fn param_gradcheck_matches_leaf_gradcheck() {
    let mut store = ParamStore::new();
    store
        .insert("w", Tensor::matrix(3, 3, (0..9).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap())
        .unwrap();
    let w = store.id("w").unwrap();
    let report = grad_check_params(
        &store,
        |g| {
            let wv = g.param(w);
            let s = g.softmax(wv, 1)?;
            let y = g.mul(s, wv)?;
            Ok(g.sum(y))
        },
        1e-5,
        Coords::All,
    )
    .unwrap();
    assert_eq!(report.checked, 9);
    assert!(report.max_rel_error <= 1e-8, "{report:?}");
}
