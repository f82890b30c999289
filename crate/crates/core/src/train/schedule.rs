/// Linear warmup from 0 to `base_lr` over the first `warmup · total` steps,
/// then linear decay to 0 at `total`.
pub fn lr_at(step: u64, total: u64, base_lr: f64, warmup: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let step = step.min(total) as f64;
    let total = total as f64;
    let peak = warmup * total;
    if step < peak {
        base_lr * step / peak
    } else if peak >= total {
        base_lr
    } else {
        base_lr * (total - step) / (total - peak)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_at(50, 1000, 1.0, 0.05), 1.0);
        assert_eq!(lr_at(1000, 1000, 1.0, 0.05), 0.0);
        assert!((lr_at(25, 1000, 1.0, 0.05) - 0.5).abs() < 1e-12);
        assert_eq!(lr_at(0, 1000, 1.0, 0.05), 0.0);
        assert_eq!(lr_at(0, 10, 2.0, 0.0), 2.0);
    }
}
