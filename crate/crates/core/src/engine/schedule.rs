/// Step-wise halving: `base_lr · 0.5^⌊epoch / period⌋`.
pub fn lr_schedule(epoch: usize, base_lr: f64, period: usize) -> f64 {
    let period = period.max(1);
    base_lr * 0.5f64.powi((epoch / period) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_per_period() {
        assert_eq!(lr_schedule(0, 1e-4, 10), 1e-4);
        assert_eq!(lr_schedule(9, 1e-4, 10), 1e-4);
        assert_eq!(lr_schedule(10, 1e-4, 10), 5e-5);
        assert_eq!(lr_schedule(30, 1e-4, 10), 1.25e-5);
        assert_eq!(lr_schedule(3, 2e-4, 1), 2.5e-5);
    }
}
