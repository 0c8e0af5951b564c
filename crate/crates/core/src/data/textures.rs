//! Procedural clean images: smooth gradients, soft-edged shapes and a faint grating.

use rand::Rng as _;

use crate::tensor::{Rng, Shape, Tensor};

fn smoothstep(edge: f64, v: f64) -> f64 {
    // one-pixel soft edge centred on `edge`
    let t = ((v - edge) + 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// One `1×C×H×W` image with values in `[0.05, 0.95]`.
pub fn procedural_image(height: usize, width: usize, channels: usize, rng: &mut Rng) -> Tensor<f32> {
    let (hf, wf) = (height as f64, width as f64);
    let base = rng.gen_range(0.3..0.7);
    let gx = rng.gen_range(-0.25..0.25);
    let gy = rng.gen_range(-0.25..0.25);
    let mut plane: Vec<f64> = (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64 / hf, (i % width) as f64 / wf);
            base + gx * (x - 0.5) + gy * (y - 0.5)
        })
        .collect();

    let shapes = rng.gen_range(3..=6);
    for _ in 0..shapes {
        let level = rng.gen_range(-0.35..0.35);
        let cy = rng.gen_range(0.0..hf);
        let cx = rng.gen_range(0.0..wf);
        if rng.gen_bool(0.5) {
            let r = rng.gen_range(0.08..0.3) * hf.min(wf);
            for (i, v) in plane.iter_mut().enumerate() {
                let (y, x) = ((i / width) as f64, (i % width) as f64);
                let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                *v += level * (1.0 - smoothstep(r, d));
            }
        } else {
            let hh = rng.gen_range(0.1..0.35) * hf;
            let hw = rng.gen_range(0.1..0.35) * wf;
            for (i, v) in plane.iter_mut().enumerate() {
                let (y, x) = ((i / width) as f64, (i % width) as f64);
                let d = ((y - cy).abs() - hh).max((x - cx).abs() - hw);
                *v += level * (1.0 - smoothstep(0.0, d));
            }
        }
    }

    let amp = rng.gen_range(0.02..0.08);
    let (fy, fx) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for (i, v) in plane.iter_mut().enumerate() {
        let (y, x) = ((i / width) as f64 / hf, (i % width) as f64 / wf);
        *v += amp * (std::f64::consts::TAU * (fy * y + fx * x) + phase).sin();
    }

    let tint: Vec<f64> = (0..channels)
        .map(|_| if channels == 1 { 1.0 } else { rng.gen_range(0.8..1.2) })
        .collect();
    Tensor::from_fn(Shape::new(1, channels, height, width), |[_, c, y, x]| {
        (plane[y * width + x] * tint[c]).clamp(0.05, 0.95) as f32
    })
}

pub fn procedural_images(count: usize, height: usize, width: usize, channels: usize, rng: &mut Rng) -> Vec<Tensor<f32>> {
    (0..count).map(|_| procedural_image(height, width, channels, rng)).collect()
}
