#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadinspect::detect::BBox;
use roadinspect::loss::{assign_targets, detection_loss, detection_loss_grad, LossWeights, TargetGrid};
use roadinspect::model::{Network, NetworkConfig, Variant};
use roadinspect::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    /// Samples skipped because a max-pool window picked a different winner at +h and -h,
    /// which makes the central difference straddle a kink.
    pub route_switches: usize,
}

fn loss_and_routes(net: &Network, img: &Tensor, t: &TargetGrid) -> (f64, Vec<Vec<usize>>) {
    let (out, routes) = net.forward_with_routes(img).unwrap();
    (detection_loss(&out, t, LossWeights::default()).unwrap().total, routes)
}

/// Compares backprop against central differences on `per_tensor` random entries of
/// every parameter tensor.
pub fn gradient_check(variant: Variant, input: usize, base: usize, per_tensor: usize, h: f64, seed: u64) -> GradCheck {
    let cfg = NetworkConfig::preset_scaled(variant, 3, 2, input, base).unwrap();
    let mut net = Network::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Jitter everything, biases included, so no unit starts exactly on a kink.
    for p in net.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let img = Tensor::from_vec(&[3, input, input], (0..3 * input * input).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let pred = net.forward_train(&img).unwrap();
    let truths = [(1, BBox::new(0.4, 0.6, 0.3, 0.2)), (2, BBox::new(0.8, 0.2, 0.1, 0.5))];
    let targets = assign_targets(&truths, net.layout(), &pred).unwrap();
    let (_, g) = detection_loss_grad(&pred, &targets, LossWeights::default()).unwrap();
    net.zero_grad();
    net.backward(&g).unwrap();

    let mut out = GradCheck { max_rel: 0.0, checked: 0, route_switches: 0 };
    for pi in 0..net.params().len() {
        let len = net.params()[pi].len();
        for _ in 0..per_tensor.min(len) {
            let i = rng.gen_range(0..len);
            let analytic = net.params()[pi].grad.data()[i];
            let orig = net.params()[pi].value.data()[i];
            net.params_mut()[pi].value.data_mut()[i] = orig + h;
            let (lp, rp) = loss_and_routes(&net, &img, &targets);
            net.params_mut()[pi].value.data_mut()[i] = orig - h;
            let (lm, rm) = loss_and_routes(&net, &img, &targets);
            net.params_mut()[pi].value.data_mut()[i] = orig;
            if rp != rm {
                out.route_switches += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs());
            let rel = if denom < 1e-10 { 0.0 } else { (analytic - fd).abs() / denom };
            out.max_rel = out.max_rel.max(rel);
            out.checked += 1;
        }
    }
    out
}
