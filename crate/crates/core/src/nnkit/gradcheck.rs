use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;

const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)` over all parameters.
    pub max_rel_error: f64,
    /// Some relu/leaky-relu pre-activation sits within finite-difference reach
    /// of its kink; the comparison is not meaningful at such a point.
    pub near_kink: bool,
    pub checked: usize,
}

/// Compares backpropagated parameter gradients against central finite
/// differences (step 1e-5). `loss` maps the network output to a scalar loss
/// and its gradient with respect to that output.
pub fn gradcheck<L>(net: &Network, input: &Tensor, loss: L) -> Result<GradCheckReport>
where
    L: Fn(&Tensor) -> (f64, Tensor),
{
    let acts = net.forward(input)?;
    let (_, dout) = loss(acts.output());
    let (grads, _) = net.backward(&acts, &dout)?;

    let mut near_kink = false;
    for (i, spec) in net.layers().iter().enumerate() {
        if !spec.activation.has_kink() {
            continue;
        }
        let x_max = acts.layer_input(i).values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let margin = (10.0 * STEP * x_max).max(1e-4);
        if acts.pre_activation(i).iter().any(|z| z.abs() < margin) {
            near_kink = true;
        }
    }

    let mut probe = net.clone();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for t in 0..grads.tensors.len() {
        for j in 0..grads.tensors[t].len() {
            let orig = probe.params().tensors[t].values()[j];
            probe.params_mut().tensors[t].values_mut()[j] = orig + STEP;
            let up = loss(&probe.infer(input)?).0;
            probe.params_mut().tensors[t].values_mut()[j] = orig - STEP;
            let down = loss(&probe.infer(input)?).0;
            probe.params_mut().tensors[t].values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads.tensors[t].values()[j];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, near_kink, checked })
}

#[cfg(test)]
mod tests {
    use super::super::layer::{Activation, LayerSpec};
    use super::*;

    fn half_sq(out: &Tensor) -> (f64, Tensor) {
        let l = 0.5 * out.values().iter().map(|v| v * v).sum::<f64>();
        (l, out.clone())
    }

    #[test]
    fn linear_net_quadratic_loss_is_exact() {
        let net = Network::new(vec![LayerSpec::dense(3, 2, Activation::Identity)], 1).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.9, 1.1, 0.4, -0.7]).unwrap();
        let r = gradcheck(&net, &x, half_sq).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert!(!r.near_kink);
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn conv_leaky_net_matches_finite_differences() {
        let net = Network::new(
            vec![LayerSpec::conv3x3(2, 3, Activation::LeakyRelu), LayerSpec::conv3x3(3, 1, Activation::Tanh)],
            9,
        )
        .unwrap();
        let x = Tensor::new(vec![2, 4, 3], (0..24).map(|v| ((v * 37 % 11) as f64 - 5.0) / 4.0).collect()).unwrap();
        let r = gradcheck(&net, &x, half_sq).unwrap();
        if !r.near_kink {
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn relu_at_zero_is_flagged() {
        let mut net = Network::new(vec![LayerSpec::dense(2, 2, Activation::Relu)], 0).unwrap();
        net.params_mut().tensors[1].values_mut().fill(0.0);
        let x = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert!(gradcheck(&net, &x, half_sq).unwrap().near_kink);
    }
}
