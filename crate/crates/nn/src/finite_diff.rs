//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls `forward` on fresh clones of the
//! network snapshot, so dropout masks and batch statistics are identical
//! across perturbations and nothing here shares code with `backward`.

use crate::error::Result;
use crate::layers::Mode;
use crate::network::Sequential;
use crate::tensor::Tensor;

/// Worst relative error per checked tensor.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `(label, relative error)` for the input and every parameter tensor.
    pub entries: Vec<(String, f64)>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// `‖a − n‖₂ / (‖a‖₂ + ‖n‖₂)`.
///
/// Structurally zero gradients (both norms below `1e-7`, e.g. a bias that
/// feeds straight into batch normalization) report the absolute difference,
/// since their numeric side is pure rounding noise.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    if na < 1e-7 && nn < 1e-7 {
        return diff;
    }
    diff / (na + nn)
}

/// Check a network under the linear probe loss `L = Σ wᵢ yᵢ`.
pub fn check_network(
    net: &Sequential<f64>,
    input: &Tensor<f64>,
    probe: &Tensor<f64>,
    mode: Mode,
    step: f64,
) -> Result<GradCheck> {
    let snapshot = net.clone();
    let loss_of = |out: &Tensor<f64>| -> f64 { out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum() };

    let mut analytic_net = snapshot.clone();
    analytic_net.zero_grad();
    let out = analytic_net.forward(input, mode)?;
    debug_assert_eq!(out.shape(), probe.shape());
    let input_grad = analytic_net.backward(probe)?;
    let param_grads: Vec<Vec<f64>> = analytic_net
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let eval = |net: Sequential<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut n = net;
        Ok(loss_of(&n.forward(x, mode)?))
    };

    let mut entries = Vec::new();
    let mut numeric = vec![0.0; input.len()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let mut xp = input.clone();
        xp.data_mut()[i] += step;
        let mut xm = input.clone();
        xm.data_mut()[i] -= step;
        *slot = (eval(snapshot.clone(), &xp)? - eval(snapshot.clone(), &xm)?) / (2.0 * step);
    }
    entries.push(("input".to_string(), relative_error(input_grad.data(), &numeric)));

    for (pi, analytic) in param_grads.iter().enumerate() {
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = snapshot.clone();
            plus.params_mut()[pi].value.data_mut()[j] += step;
            let mut minus = snapshot.clone();
            minus.params_mut()[pi].value.data_mut()[j] -= step;
            *slot = (eval(plus, input)? - eval(minus, input)?) / (2.0 * step);
        }
        entries.push((format!("param {pi}"), relative_error(analytic, &numeric)));
    }
    Ok(GradCheck { entries })
}
