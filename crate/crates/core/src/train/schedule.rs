/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to
/// 0 at `total`. Steps past `total` clamp to 0.
pub fn lr_schedule(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if step >= total {
        return if warmup == total && step == total { peak } else { 0.0 };
    }
    if step < warmup {
        return peak * (step as f64 / warmup as f64);
    }
    peak * ((total - step) as f64 / (total - warmup) as f64)
}
