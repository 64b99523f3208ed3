//! Central finite-difference gradient checking.

use super::mlp::{Activation, Mlp};
use crate::error::Result;

/// Outcome of [`grad_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub within_tolerance: bool,
    /// Coordinates left out because the probe interval `[x - h, x + h]`
    /// contains a ReLU kink, where the difference quotient is not a
    /// derivative estimate.
    pub kink_crossings: usize,
    pub coordinates: usize,
}

pub const FD_STEP: f64 = 1e-6;

/// Relative error `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares backprop against central differences (step [`FD_STEP`]) of
/// `sum(net(input))` over every parameter and every input coordinate.
pub fn grad_check(net: &Mlp, input: &[f64], tolerance: f64) -> Result<GradCheck> {
    grad_check_with_step(net, input, FD_STEP, tolerance)
}

#[derive(Clone, Copy)]
enum Probe {
    Param(usize),
    Input(usize),
}

/// `(f(x + h) - f(x - h)) / ((x + h) - (x - h))` for `f = sum(net(input))`.
///
/// The numerator is carried through the layers as a difference
/// (`W+ a+ - W- a- = (W+ - W-) a+ + W- (a+ - a-)`, and
/// `tanh p - tanh m = sinh(p - m) / (cosh p cosh m)`) rather than formed by
/// subtracting two forward passes, so it suffers no cancellation. Returns
/// `None` when a ReLU pre-activation changes sign across the interval.
fn central_difference(net: &Mlp, input: &[f64], probe: Probe, step: f64) -> Option<f64> {
    let (target, original) = match probe {
        Probe::Param(i) => (i, net.params()[i]),
        Probe::Input(i) => (i, input[i]),
    };
    let (up, down) = (original + step, original - step);
    let width = up - down;

    let mut a_plus = input.to_vec();
    let mut a_minus = input.to_vec();
    let mut da = vec![0.0; input.len()];
    if let Probe::Input(i) = probe {
        a_plus[i] = up;
        a_minus[i] = down;
        da[i] = width;
    }
    let mut offset = 0;
    for layer in 0..net.layer_count() {
        let (fan_in, fan_out) = (net.sizes()[layer], net.sizes()[layer + 1]);
        let w = net.weights(layer);
        let b = net.bias(layer);
        let bias_offset = offset + fan_in * fan_out;
        let act = if layer + 1 == net.layer_count() {
            net.output_activation()
        } else {
            net.hidden_activation()
        };
        let (mut next_plus, mut next_minus, mut next_d) =
            (Vec::with_capacity(fan_out), Vec::with_capacity(fan_out), Vec::with_capacity(fan_out));
        for o in 0..fan_out {
            let (mut zp, mut zm, mut dz) = (b[o], b[o], 0.0);
            if matches!(probe, Probe::Param(_)) && target == bias_offset + o {
                (zp, zm, dz) = (up, down, width);
            }
            for i in 0..fan_in {
                let (mut wp, mut wm) = (w[o * fan_in + i], w[o * fan_in + i]);
                if matches!(probe, Probe::Param(_)) && target == offset + o * fan_in + i {
                    (wp, wm) = (up, down);
                    dz += width * a_plus[i];
                }
                zp += wp * a_plus[i];
                zm += wm * a_minus[i];
                dz += wm * da[i];
            }
            let (ap, am, d) = match act {
                Activation::Identity => (zp, zm, dz),
                Activation::Tanh => (zp.tanh(), zm.tanh(), dz.sinh() / (zp.cosh() * zm.cosh())),
                Activation::Relu => match (zp > 0.0, zm > 0.0) {
                    (true, true) => (zp, zm, dz),
                    (false, false) => (0.0, 0.0, 0.0),
                    _ => return None,
                },
            };
            next_plus.push(ap);
            next_minus.push(am);
            next_d.push(d);
        }
        a_plus = next_plus;
        a_minus = next_minus;
        da = next_d;
        offset = bias_offset + fan_out;
    }
    Some(da.iter().sum::<f64>() / width)
}

/// [`grad_check`] with an explicit finite-difference step.
pub fn grad_check_with_step(net: &Mlp, input: &[f64], step: f64, tolerance: f64) -> Result<GradCheck> {
    let (_, cache) = net.forward(input)?;
    let (grads, input_grad) = net.backward(&cache, &vec![1.0; net.output_dim()])?;

    let probes = (0..net.param_count())
        .map(|i| (Probe::Param(i), grads.0[i]))
        .chain((0..input.len()).map(|i| (Probe::Input(i), input_grad[i])));
    let (mut worst, mut kinks, mut coordinates) = (0.0_f64, 0, 0);
    for (probe, analytic) in probes {
        coordinates += 1;
        match central_difference(net, input, probe, step) {
            Some(numeric) => worst = worst.max(relative_error(analytic, numeric)),
            None => kinks += 1,
        }
    }
    Ok(GradCheck {
        max_relative_error: worst,
        within_tolerance: worst < tolerance,
        kink_crossings: kinks,
        coordinates,
    })
}
