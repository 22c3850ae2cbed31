use diffcore::gradcheck::{self, suite, Tolerance};
use diffcore::{Rng, Tape64, Tensor64};

#[test]
fn every_op_matches_finite_differences() {
    let results = suite::run(100, 7, Tolerance::default()).unwrap();
    let mut bad = Vec::new();
    for (name, failed, report) in &results {
        if *failed > 0 {
            bad.push(format!("{name}: {failed} draws failed, worst {:?}", report.worst));
        }
    }
    assert!(bad.is_empty(), "{}", bad.join("\n"));
    assert_eq!(results.len(), suite::OPS.len());
}

#[test]
fn square_has_second_derivative_two() {
    let t = Tape64::new();
    let x = t.param(Tensor64::scalar(3.0));
    let y = t.square(x).unwrap();
    let g = t.grad_of(y, &[x], true).unwrap().grads[0];
    assert_eq!(t.item(g), 6.0);
    let gg = t.grad_of(g, &[x], false).unwrap().grads[0];
    assert_eq!(t.item(gg), 2.0);
}

#[test]
fn disconnected_input_gets_flagged_zero() {
    let t = Tape64::new();
    let x = t.param(Tensor64::new(vec![2], vec![1.0, 2.0]).unwrap());
    let z = t.param(Tensor64::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let y = t.sum(t.square(x).unwrap()).unwrap();
    let g = t.grad_of(y, &[x, z], false).unwrap();
    assert_eq!(g.disconnected, vec![false, true]);
    assert_eq!(t.value(g.grads[1]).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn second_order_through_conv_critic_matches_finite_differences() {
    // penalty (|∇x D(x)| - 1)^2 for D = linear(lrelu(conv(x))), differentiated
    // with respect to the conv kernel and the linear weights
    let mut rng = Rng::new(11);
    let mut rand = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor64::new(shape.to_vec(), (0..n).map(|_| rng.uniform() - 0.5).collect()).unwrap()
    };
    let x = rand(&[2, 2, 6]);
    let inputs = vec![rand(&[3, 2, 3]), rand(&[18, 1]), rand(&[1])];
    let report = gradcheck::check(
        &inputs,
        move |t, v| {
            let xv = t.param(x.clone());
            let h = t.leaky_relu(t.conv1d(xv, v[0], 1)?, 0.2)?;
            let d = t.linear(t.flatten(h)?, v[1], v[2])?;
            let g = t.grad_of(t.sum(d)?, &[xv], true)?.grads[0];
            let norms = t.sqrt(t.sum_rows(t.square(t.flatten(g)?)?)?)?;
            let dev = t.affine(norms, 1.0, -1.0)?;
            t.mean(t.square(dev)?)
        },
        Tolerance::default(),
        3,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn max_pool_routes_gradient_to_argmax_only() {
    let data = vec![0.3, -1.0, 2.0, 0.5, 0.1, 0.7, -0.2, 0.6];
    let t = Tape64::new();
    let x = t.param(Tensor64::new(vec![1, 1, 8], data.clone()).unwrap());
    let y = t.max_pool1d(x, 2).unwrap();
    let loss = t.sum(y).unwrap();
    let g = t.grad_of(loss, &[x], false).unwrap().grads[0];
    // brute force: for each window mark the position holding its max
    let mut expected = vec![0.0; 8];
    for w in 0..4 {
        let (i, _) = data[2 * w..2 * w + 2]
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        expected[2 * w + i] = 1.0;
    }
    assert_eq!(t.value(g).data(), expected.as_slice());
}

#[test]
fn backward_leaves_forward_values_untouched() {
    let mut rng = Rng::new(5);
    let t = Tape64::new();
    let x = t.param(Tensor64::new(vec![1, 2, 8], (0..16).map(|_| rng.normal()).collect()).unwrap());
    let w = t.param(Tensor64::new(vec![3, 2, 3], (0..18).map(|_| rng.normal()).collect()).unwrap());
    let y = t.tanh(t.conv1d(x, w, 1).unwrap()).unwrap();
    let loss = t.sum(t.square(y).unwrap()).unwrap();
    let before: Vec<Vec<f64>> = [x, w, y, loss].iter().map(|v| t.value(*v).data().to_vec()).collect();
    t.grad_of(loss, &[x, w], true).unwrap();
    let after: Vec<Vec<f64>> = [x, w, y, loss].iter().map(|v| t.value(*v).data().to_vec()).collect();
    assert_eq!(before, after);
}
