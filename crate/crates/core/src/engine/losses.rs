//! Loss terms of the joint objective, recorded on a tape so every network can
//! be optimized against its own scalar.

use std::sync::Arc;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::tensor::kernels::GaussianFilter;
use crate::tensor::{Real, Rng, Shape, Tape, Tensor, Var};

/// `mean(real) − α·mean(fake_R) − (1−α)·mean(fake_G)`.
///
/// A missing fake family drops its term; the weight of the other one is kept
/// as written, so the critic objective without a generator is
/// `mean(real) − α·mean(fake_R)`.
pub fn adversarial_loss<T: Real>(
    tape: &mut Tape<T>,
    d_real: Var,
    d_fake_r: Option<Var>,
    d_fake_g: Option<Var>,
    alpha: f64,
) -> Result<Var> {
    let rs = tape.shape(d_real);
    for v in [d_fake_r, d_fake_g].into_iter().flatten() {
        if tape.shape(v) != rs {
            return Err(Error::shape("adversarial_loss", rs, tape.shape(v)));
        }
    }
    let mut loss = tape.mean(d_real);
    for (v, w) in [(d_fake_r, alpha), (d_fake_g, 1.0 - alpha)] {
        if let Some(v) = v {
            let m = tape.mean(v);
            let m = tape.scale(m, w);
            loss = tape.sub(loss, m)?;
        }
    }
    Ok(loss)
}

/// WGAN-GP penalty `λ·mean((‖∇D(x̃)‖₂ − 1)²)` on random interpolates
/// `x̃ = ε·real + (1−ε)·fake`, one `ε ~ U(0,1)` per batch item.
///
/// `real` and `fake` are whole pairs already concatenated along channels;
/// only their values are used. `critic` maps such a pair to per-item scores.
/// The returned scalar is differentiable with respect to the critic's
/// parameters.
pub fn gradient_penalty<T, F>(
    tape: &mut Tape<T>,
    mut critic: F,
    real: Var,
    fake: Var,
    lambda: f64,
    rng: &mut Rng,
) -> Result<Var>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let s = tape.shape(real);
    if tape.shape(fake) != s {
        return Err(Error::shape("gradient_penalty", s, tape.shape(fake)));
    }
    let eps: Vec<f64> = (0..s.n()).map(|_| rng.gen::<f64>()).collect();
    let interp = interpolate(tape.value(real), tape.value(fake), &eps);
    gradient_penalty_at(tape, &mut critic, interp, lambda)
}

fn interpolate<T: Real>(real: &Tensor<T>, fake: &Tensor<T>, eps: &[f64]) -> Tensor<T> {
    let item = real.shape().item_len();
    let mut out = real.clone();
    for (i, (o, f)) in out.data_mut().iter_mut().zip(fake.data()).enumerate() {
        let e = T::from_f64(eps[i / item]);
        *o = e * *o + (T::one() - e) * *f;
    }
    out
}

/// Penalty at fixed critic inputs `points`.
pub fn gradient_penalty_at<T, F>(tape: &mut Tape<T>, critic: &mut F, points: Tensor<T>, lambda: f64) -> Result<Var>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let x = tape.leaf(points, true);
    let score = critic(tape, x)?;
    let total = tape.sum(score);
    let g = tape.grad(total, &[x])?[0];
    let sq = tape.square(g);
    let per_item = tape.sum_per_sample(sq);
    // the small offset keeps the sqrt derivative finite at zero gradient
    let per_item = tape.add_scalar(per_item, 1e-12);
    let norm = tape.sqrt(per_item);
    let dev = tape.add_scalar(norm, -1.0);
    let dev2 = tape.square(dev);
    let m = tape.mean(dev2);
    Ok(tape.scale(m, lambda))
}

/// Mean absolute error.
pub fn denoiser_l1<T: Real>(tape: &mut Tape<T>, xhat: Var, x: Var) -> Result<Var> {
    let d = tape.sub(xhat, x)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// `mean|GF(ŷ − x) − GF(y − x)|`: matches local noise statistics of the
/// generated and the real image.
pub fn noise_stat_loss<T: Real>(
    tape: &mut Tape<T>,
    yhat: Var,
    y: Var,
    x: Var,
    filter: &Arc<GaussianFilter>,
) -> Result<Var> {
    let fake = tape.sub(yhat, x)?;
    let real = tape.sub(y, x)?;
    let gf = tape.gaussian(fake, filter);
    let gr = tape.gaussian(real, filter);
    let d = tape.sub(gf, gr)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Scalar value of a loss, or a diagnostic naming the term when it is not finite.
pub fn checked<T: Real>(tape: &Tape<T>, v: Var, term: &str, step: u64) -> Result<f64> {
    let s = tape.shape(v);
    if s != Shape::SCALAR {
        return Err(Error::NotScalar(s));
    }
    let value = tape.value(v).item().as_f64();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Critic, CriticConfig, NetConfig, NetworkParams, Role};
    use crate::tensor::{sample_normal, sample_uniform, seeded_rng};

    fn scores(tape: &mut Tape<f64>, v: f64, n: usize) -> Var {
        tape.constant(Tensor::full(Shape::new(n, 1, 1, 1), v))
    }

    #[test]
    fn adversarial_arithmetic() {
        let mut t = Tape::new();
        let (a, b, c) = (scores(&mut t, 1.0, 4), scores(&mut t, 0.2, 4), scores(&mut t, 0.4, 4));
        let l = adversarial_loss(&mut t, a, Some(b), Some(c), 0.5).unwrap();
        assert!((t.value(l).item() - 0.7).abs() < 1e-12);
        for alpha in [0.0, 0.3, 1.0] {
            let (a, b, c) = (scores(&mut t, 0.8, 3), scores(&mut t, 0.8, 3), scores(&mut t, 0.8, 3));
            let l = adversarial_loss(&mut t, a, Some(b), Some(c), alpha).unwrap();
            assert!(t.value(l).item().abs() < 1e-12);
        }
        let bad = scores(&mut t, 0.0, 2);
        assert!(adversarial_loss(&mut t, a, Some(bad), None, 0.5).is_err());
    }

    #[test]
    fn linear_critic_penalty_is_ten() {
        // D(v) = sum of the 4 inputs: gradient all ones, norm 2
        let mut t = Tape::<f64>::new();
        let real = t.constant(Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let fake = t.constant(Tensor::zeros(Shape::new(1, 2, 1, 2)));
        let critic = |t: &mut Tape<f64>, v: Var| Ok(t.sum_per_sample(v));
        let gp = gradient_penalty(&mut t, critic, real, fake, 10.0, &mut seeded_rng(1)).unwrap();
        assert!((t.value(gp).item() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn unit_gradient_critic_has_no_penalty() {
        // D(v) = 0.5·sum over 4 inputs has gradient norm exactly 1
        let mut t = Tape::<f64>::new();
        let real = t.constant(sample_uniform(Shape::new(3, 2, 1, 2), 0.0, 1.0, &mut seeded_rng(2)));
        let fake = t.constant(sample_uniform(Shape::new(3, 2, 1, 2), 0.0, 1.0, &mut seeded_rng(3)));
        let critic = |t: &mut Tape<f64>, v: Var| {
            let s = t.sum_per_sample(v);
            Ok(t.scale(s, 0.5))
        };
        let gp = gradient_penalty(&mut t, critic, real, fake, 10.0, &mut seeded_rng(1)).unwrap();
        assert!(t.value(gp).item().abs() < 1e-10);
    }

    fn small_critic() -> NetworkParams {
        let cfg = CriticConfig::new(1, 32, 32).with_base_channels(2);
        NetworkParams::init(Role::Discriminator, NetConfig::Critic(cfg), &mut seeded_rng(4)).unwrap()
    }

    #[test]
    fn penalty_matches_finite_difference_gradient_norms() {
        let params = small_critic();
        let critic = Critic::new(&params).unwrap();
        let points: Tensor<f64> = sample_normal(Shape::new(2, 2, 32, 32), 0.0, 1.0, &mut seeded_rng(5)).unwrap();

        let mut t = Tape::<f64>::new();
        let p = params.bind(&mut t, true);
        let mut f = |t: &mut Tape<f64>, v: Var| critic.forward_joint(t, &p, v);
        let gp = gradient_penalty_at(&mut t, &mut f, points.clone(), 10.0).unwrap();
        let got = t.value(gp).item();

        // oracle: per-item input-gradient norms by central differences
        let score = |pts: &Tensor<f64>| -> Vec<f64> {
            let mut t = Tape::<f64>::new();
            let p = params.bind(&mut t, false);
            let v = t.constant(pts.clone());
            let s = critic.forward_joint(&mut t, &p, v).unwrap();
            t.value(s).data().to_vec()
        };
        let h = 1e-5;
        let item = points.shape().item_len();
        let mut sq = [0.0f64; 2];
        for i in 0..points.len() {
            let mut plus = points.clone();
            plus.data_mut()[i] += h;
            let mut minus = points.clone();
            minus.data_mut()[i] -= h;
            let n = i / item;
            let d = (score(&plus)[n] - score(&minus)[n]) / (2.0 * h);
            sq[n] += d * d;
        }
        let want = 10.0 * sq.iter().map(|s| (s.sqrt() - 1.0).powi(2)).sum::<f64>() / 2.0;
        assert!(((got - want) / want).abs() < 1e-2, "{got} vs {want}");
        assert!(got >= 0.0);
    }

    #[test]
    fn penalty_parameter_gradient_matches_finite_difference() {
        let params = small_critic();
        let critic = Critic::new(&params).unwrap();
        let points: Tensor<f64> = sample_normal(Shape::new(2, 2, 32, 32), 0.0, 1.0, &mut seeded_rng(6)).unwrap();
        let values: Vec<Tensor<f64>> = params.params.iter().map(|p| p.value.cast()).collect();
        let eval = |vals: Vec<Tensor<f64>>| -> f64 {
            let mut t = Tape::<f64>::new();
            let p = params.bind_values(&mut t, vals, true);
            let mut f = |t: &mut Tape<f64>, v: Var| critic.forward_joint(t, &p, v);
            let gp = gradient_penalty_at(&mut t, &mut f, points.clone(), 10.0).unwrap();
            t.value(gp).item()
        };
        let mut t = Tape::<f64>::new();
        let p = params.bind_values(&mut t, values.clone(), true);
        let mut f = |t: &mut Tape<f64>, v: Var| critic.forward_joint(t, &p, v);
        let gp = gradient_penalty_at(&mut t, &mut f, points.clone(), 10.0).unwrap();
        let grads = t.gradients(gp, p.vars()).unwrap();

        let mut rng = seeded_rng(7);
        let mut checked = 0;
        for (pi, g) in grads.iter().enumerate() {
            let mut tries = 0;
            let mut ok = 0;
            while ok < 3 && tries < 12 {
                tries += 1;
                let j = rng.gen_range(0..g.len());
                let fd = |h: f64| {
                    let mut plus = values.clone();
                    plus[pi].data_mut()[j] += h;
                    let mut minus = values.clone();
                    minus[pi].data_mut()[j] -= h;
                    (eval(plus) - eval(minus)) / (2.0 * h)
                };
                let (f1, f2) = (fd(1e-5), fd(2e-5));
                let scale = f1.abs().max(f2.abs()).max(1e-4);
                if (f1 - f2).abs() > 1e-4 * scale {
                    // a leaky-ReLU kink lies inside the stencil
                    continue;
                }
                let an = g.data()[j];
                let err = (an - f1).abs() / an.abs().max(f1.abs()).max(1e-4);
                assert!(err < 1e-3, "param {pi}[{j}]: {an} vs {f1}");
                ok += 1;
            }
            checked += ok;
        }
        assert!(checked >= 2 * grads.len(), "too many kink crossings: {checked}");
    }

    #[test]
    fn l1_cases() {
        let mut t = Tape::<f64>::new();
        let x: Tensor<f64> = sample_uniform(Shape::new(2, 1, 4, 4), 0.0, 1.0, &mut seeded_rng(8));
        let xv = t.constant(x.clone());
        let same = denoiser_l1(&mut t, xv, xv).unwrap();
        assert_eq!(t.value(same).item(), 0.0);
        let off = t.constant(x.map(|v| v + 0.05));
        let l = denoiser_l1(&mut t, off, xv).unwrap();
        assert!((t.value(l).item() - 0.05).abs() < 1e-6);

        let other: Tensor<f64> = sample_uniform(x.shape(), 0.0, 1.0, &mut seeded_rng(9));
        let ov = t.constant(other.clone());
        let l = denoiser_l1(&mut t, ov, xv).unwrap();
        let brute = other.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
        assert!((t.value(l).item() - brute).abs() < 1e-6);
    }

    #[test]
    fn noise_stat_constant_fields() {
        let f = Arc::new(GaussianFilter::new(5, 2.0).unwrap());
        let mut t = Tape::<f64>::new();
        let s = Shape::new(1, 1, 16, 16);
        let x = t.constant(Tensor::full(s, 0.3));
        let y = t.constant(Tensor::full(s, 0.4));
        let yhat = t.constant(Tensor::full(s, 0.5));
        let l = noise_stat_loss(&mut t, yhat, y, x, &f).unwrap();
        assert!((t.value(l).item() - 0.1).abs() < 1e-6);
        let same = noise_stat_loss(&mut t, y, y, x, &f).unwrap();
        assert_eq!(t.value(same).item(), 0.0);
    }

    #[test]
    fn noise_stat_shrinks_with_filter_size() {
        // independent same-law noise: the loss is positive and falls as the filter widens
        let s = Shape::new(1, 1, 32, 32);
        let mut rng = seeded_rng(10);
        let mut means = Vec::new();
        for (k, sigma) in [(3, 0.8), (7, 2.0), (15, 4.0)] {
            let f = Arc::new(GaussianFilter::new(k, sigma).unwrap());
            let mut total = 0.0;
            for _ in 0..100 {
                let mut t = Tape::<f64>::new();
                let x = t.constant(Tensor::zeros(s));
                let y = t.constant(sample_normal(s, 0.0, 0.1, &mut rng).unwrap());
                let yhat = t.constant(sample_normal(s, 0.0, 0.1, &mut rng).unwrap());
                let l = noise_stat_loss(&mut t, yhat, y, x, &f).unwrap();
                total += t.value(l).item();
            }
            means.push(total / 100.0);
        }
        assert!(means[0] > 0.0 && means[0] < 0.1, "{means:?}");
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn non_finite_names_term() {
        let mut t = Tape::<f32>::new();
        let v = t.constant(Tensor::scalar(f32::NAN));
        let e = checked(&t, v, "loss_G", 7).unwrap_err();
        assert!(e.to_string().contains("loss_G") && e.to_string().contains('7'), "{e}");
    }
}
