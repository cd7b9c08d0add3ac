//! Central finite-difference check of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{ensure, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Relative error denominators never drop below this, so coordinates whose
/// true gradient is ~0 are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compare autodiff gradients of the scalar built by `loss` against central
/// differences with step `h`. Every input is bound with `Tape::param`. At
/// most `per_input` coordinates of each input are probed (all of them when
/// the tensor is smaller), chosen with `rng`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    loss: F,
    h: f64,
    per_input: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get_slice(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let coords: Vec<usize> = if input.numel() <= per_input {
            (0..input.numel()).collect()
        } else {
            (0..per_input).map(|_| rng.below(input.numel() as u64) as usize).collect()
        };
        for j in coords {
            let x0 = input.data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[j];
            ensure!(a.is_finite() && numeric.is_finite(), NonFinite, "input {i} coord {j}");
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::LEAKY_RELU_SLOPE;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    /// Reduce any tensor to a scalar through an MSE against a fixed target,
    /// so every output coordinate carries a distinct weight.
    fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
        let shape = tape.value(y).shape().to_vec();
        let target = random(&shape, &mut Rng::new(seed));
        let t = tape.constant(target);
        tape.mse(y, t)
    }

    fn assert_ok(r: GradCheckReport, what: &str) {
        assert!(r.checked > 0, "{what}: nothing checked");
        assert!(r.max_rel_error < 1e-4, "{what}: rel error {}", r.max_rel_error);
    }

    const H: f64 = 1e-5;

    #[test]
    fn primitives_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = Rng::new(seed);
            let x = random(&[2, 5, 4], &mut rng);
            let y = random(&[2, 5, 4], &mut rng);
            let k = random(&[3, 2, 3, 3], &mut rng);
            let kt = random(&[2, 3, 4, 4], &mut rng);
            let b = random(&[2], &mut rng);
            let maps = random(&[3, 5, 4], &mut rng);
            let z = random(&[2, 5, 4], &mut rng);

            let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>)> = vec![
                ("conv2d", vec![x.clone(), k.clone()], Box::new(|t, v| {
                    let y = t.conv2d(v[0], v[1], 2, 1)?;
                    project(t, y, 99)
                })),
                ("conv2d_s1", vec![x.clone(), k.clone()], Box::new(|t, v| {
                    let y = t.conv2d(v[0], v[1], 1, 0)?;
                    project(t, y, 98)
                })),
                ("conv_transpose2d", vec![x.clone(), kt.clone()], Box::new(|t, v| {
                    let y = t.conv_transpose2d(v[0], v[1], 2, 1)?;
                    project(t, y, 97)
                })),
                ("channel_bias", vec![x.clone(), b.clone()], Box::new(|t, v| {
                    let y = t.channel_bias(v[0], v[1])?;
                    project(t, y, 96)
                })),
                ("relu", vec![x.clone()], Box::new(|t, v| {
                    let y = t.relu(v[0]);
                    project(t, y, 95)
                })),
                ("leaky_relu", vec![x.clone()], Box::new(|t, v| {
                    let y = t.leaky_relu(v[0], LEAKY_RELU_SLOPE);
                    project(t, y, 94)
                })),
                ("add", vec![x.clone(), y.clone()], Box::new(|t, v| {
                    let o = t.add(v[0], v[1])?;
                    project(t, o, 93)
                })),
                ("sub", vec![x.clone(), y.clone()], Box::new(|t, v| {
                    let o = t.sub(v[0], v[1])?;
                    project(t, o, 92)
                })),
                ("mul", vec![x.clone(), y.clone()], Box::new(|t, v| {
                    let o = t.mul(v[0], v[1])?;
                    project(t, o, 91)
                })),
                ("scale", vec![x.clone()], Box::new(|t, v| {
                    let o = t.scale(v[0], -1.7);
                    project(t, o, 90)
                })),
                ("concat", vec![x.clone(), maps.clone()], Box::new(|t, v| {
                    let o = t.concat_channels(&[v[0], v[1]])?;
                    project(t, o, 89)
                })),
                ("softmax", vec![maps.clone()], Box::new(|t, v| {
                    let o = t.softmax_channels(v[0])?;
                    project(t, o, 88)
                })),
                ("mse", vec![x.clone(), y.clone()], Box::new(|t, v| t.mse(v[0], v[1]))),
                ("mix", vec![maps.clone(), x.clone(), y.clone(), z.clone()], Box::new(|t, v| {
                    let o = t.mix(v[0], &[v[1], v[2], v[3]])?;
                    project(t, o, 87)
                })),
                ("spatial_mean_broadcast", vec![x.clone()], Box::new(|t, v| {
                    let m = t.spatial_mean(v[0])?;
                    let o = t.spatial_broadcast(m, 3, 2)?;
                    project(t, o, 86)
                })),
            ];
            for (name, inputs, f) in cases {
                let r = check_gradients(&inputs, f, H, 64, &mut rng).unwrap();
                assert_ok(r, name);
            }
        }
    }

    #[test]
    fn composite_chain_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let x = random(&[3, 8, 6], &mut rng);
        let k1 = random(&[4, 3, 4, 4], &mut rng);
        let k2 = random(&[4, 2, 4, 4], &mut rng);
        let r = check_gradients(
            &[x, k1, k2],
            |t, v| {
                let e = t.conv2d(v[0], v[1], 2, 1)?;
                let e = t.relu(e);
                let d = t.conv_transpose2d(e, v[2], 2, 1)?;
                let d = t.leaky_relu(d, LEAKY_RELU_SLOPE);
                let s = t.softmax_channels(d)?;
                project(t, s, 5)
            },
            H,
            40,
            &mut rng,
        )
        .unwrap();
        assert_ok(r, "chain");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // an op whose forward is not what backward differentiates would be
        // caught; emulate with a loss that branches on the probe value
        let mut rng = Rng::new(1);
        let x = Tensor::scalar(0.5);
        let r = check_gradients(
            &[x],
            |t, v| {
                let xv = t.value(v[0]).item();
                let c = t.constant(Tensor::scalar(xv * xv));
                let y = t.add(v[0], c)?;
                let zero = t.constant(Tensor::scalar(0.0));
                t.mse(y, zero)
            },
            H,
            1,
            &mut rng,
        )
        .unwrap();
        assert!(r.max_rel_error > 1e-2);
    }
}
