//! Finite-difference gradient verification.
//!
//! The probe objective is `sum(y * w)` for a fixed quasi-random weight
//! tensor `w`, so the upstream gradient is simply `w`. Central differences
//! in f64 with `h = 1e-5` leave plenty of headroom below the tolerances
//! used by the tests.

use ndarray::{ArrayD, Dimension};

use super::{ParamRefs, ParamRefsMut, Tensor};

const H: f64 = 1e-5;

/// Deterministic, sign-varied probe weights for a given output shape.
pub fn probe_weights(dim: ndarray::IxDyn) -> ArrayD<f64> {
    let n: usize = dim.size();
    let data: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7311 + 0.17).sin()).collect();
    ArrayD::from_shape_vec(dim, data).expect("shape/product agree")
}

/// `sum(y * w)` — the scalar objective behind every check here.
pub fn probe_objective(y: &ArrayD<f64>, w: &ArrayD<f64>) -> f64 {
    y.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
    let scale = analytic.abs().max(numeric.abs()).max(1.0);
    assert!(
        (analytic - numeric).abs() <= tol * scale,
        "{what}: analytic {analytic} vs numeric {numeric} (tol {tol}, scale {scale})"
    );
}

/// Checks every parameter gradient of `layer` against central differences.
///
/// `backward_acc` must run a differentiated forward pass and accumulate
/// parameter gradients for upstream gradient `dy`; gradients are zeroed here
/// before it runs.
pub fn check_param_gradients<L>(
    x: &Tensor,
    forward: fn(&L, &Tensor) -> Tensor,
    backward_acc: fn(&mut L, &Tensor, &Tensor),
    layer: &mut L,
    params: fn(&L) -> ParamRefs<'_>,
    params_mut: fn(&mut L) -> ParamRefsMut<'_>,
    tol: f64,
) {
    let y0 = forward(layer, x);
    let w = probe_weights(ndarray::IxDyn(y0.shape()));
    let dy = w
        .clone()
        .into_dimensionality::<ndarray::Ix4>()
        .expect("4-d output");
    for (_, p) in params_mut(layer) {
        p.zero_grad();
    }
    backward_acc(layer, x, &dy);
    let analytic: Vec<(String, ArrayD<f64>)> = params(layer)
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect();

    let n_params = analytic.len();
    for pi in 0..n_params {
        let n_elems = analytic[pi].1.len();
        for ei in 0..n_elems {
            let nudge = |layer: &mut L, delta: f64| {
                let mut ps = params_mut(layer);
                let slice = ps[pi]
                    .1
                    .value
                    .as_slice_mut()
                    .expect("params are contiguous");
                slice[ei] += delta;
            };
            nudge(layer, H);
            let fp = probe_objective(&forward(layer, x).into_dyn(), &w);
            nudge(layer, -2.0 * H);
            let fm = probe_objective(&forward(layer, x).into_dyn(), &w);
            nudge(layer, H);
            let numeric = (fp - fm) / (2.0 * H);
            let ana = analytic[pi].1.as_slice().expect("contiguous")[ei];
            assert_close(ana, numeric, tol, &format!("{}[{}]", analytic[pi].0, ei));
        }
    }
}

/// Checks the gradient w.r.t. the input tensor against central differences.
pub fn check_input_gradient(
    x: &Tensor,
    forward: impl Fn(&Tensor) -> Tensor,
    backward: impl Fn(&Tensor, &Tensor) -> Tensor,
    tol: f64,
) {
    let y0 = forward(x);
    let w = probe_weights(ndarray::IxDyn(y0.shape()));
    let dy = w
        .clone()
        .into_dimensionality::<ndarray::Ix4>()
        .expect("4-d output");
    let dx = backward(x, &dy);
    let mut xp = x.clone();
    for idx in 0..x.len() {
        {
            let s = xp.as_slice_mut().expect("contiguous");
            s[idx] += H;
        }
        let fp = probe_objective(&forward(&xp).into_dyn(), &w);
        {
            let s = xp.as_slice_mut().expect("contiguous");
            s[idx] -= 2.0 * H;
        }
        let fm = probe_objective(&forward(&xp).into_dyn(), &w);
        {
            let s = xp.as_slice_mut().expect("contiguous");
            s[idx] += H;
        }
        let numeric = (fp - fm) / (2.0 * H);
        let ana = dx.as_slice().expect("contiguous")[idx];
        assert_close(ana, numeric, tol, &format!("input[{idx}]"));
    }
}

/// Central-difference derivative of an arbitrary scalar function of one
/// mutable slot. Used by the loss-level checks where the objective is the
/// loss itself rather than a probe.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, at: f64) -> f64 {
    let h = H * at.abs().max(1.0);
    (f(at + h) - f(at - h)) / (2.0 * h)
}
