//! Learning-rate schedule: linear warmup, then cosine annealing with warm
//! restarts whose cycle maxima decay by a fixed rate per restart.

use super::TrainingConfig;

/// Learning rate at `step` (0-based, `step < config.steps`).
///
/// Steps below `warmup_steps` ramp linearly from 0 toward `max_lr`, which is
/// reached exactly at `step == warmup_steps`. The remaining steps split into
/// `restart_cycles` cosine cycles (as equal as integer division allows);
/// cycle `i` anneals from `max_lr * (1 - max_lr_decrease_rate)^i` down
/// toward `min_lr`.
pub fn lr_at(step: usize, config: &TrainingConfig) -> f64 {
    assert!(step < config.steps, "step {step} out of range");
    let w = config.warmup_steps;
    if step < w {
        return config.max_lr * step as f64 / w as f64;
    }
    let total = config.steps - w;
    let cycles = config.restart_cycles.clamp(1, total.max(1));
    let base_len = total / cycles;
    let remainder = total % cycles;
    // the first `remainder` cycles are one step longer
    let mut u = step - w;
    let mut cycle = 0usize;
    let mut len = base_len + usize::from(cycle < remainder);
    while u >= len {
        u -= len;
        cycle += 1;
        len = base_len + usize::from(cycle < remainder);
    }
    let cycle_max = config.max_lr * (1.0 - config.max_lr_decrease_rate).powi(cycle as i32);
    if u == 0 {
        return cycle_max;
    }
    let phase = std::f64::consts::PI * u as f64 / len as f64;
    config.min_lr + (cycle_max - config.min_lr) * (1.0 + phase.cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(steps: usize, warmup: usize, cycles: usize) -> TrainingConfig {
        TrainingConfig {
            steps,
            warmup_steps: warmup,
            restart_cycles: cycles,
            max_lr: 1e-3,
            min_lr: 1e-6,
            max_lr_decrease_rate: 0.01,
            ..TrainingConfig::all_constructions()
        }
    }

    #[test]
    fn warmup_reaches_max_exactly() {
        let c = cfg(503, 3, 5);
        assert_eq!(lr_at(3, &c), c.max_lr);
        assert!(lr_at(0, &c) == 0.0);
        assert!(lr_at(1, &c) < lr_at(2, &c));
    }

    #[test]
    fn cycle_midpoint_is_halfway() {
        // steps = 3 warmup + 100 annealing in 1 cycle; midpoint at u = 50
        let c = cfg(103, 3, 1);
        let mid = lr_at(3 + 50, &c);
        let expected = (c.max_lr + c.min_lr) / 2.0;
        assert!(
            (mid - expected).abs() < 1e-12 * c.max_lr,
            "midpoint {mid} vs {expected}"
        );
    }

    #[test]
    fn restart_maxima_decay_by_rate() {
        let c = cfg(203, 3, 4);
        // 200 annealing steps in 4 cycles of 50: restarts at u = 0, 50, 100, 150
        for i in 0..4 {
            let at_restart = lr_at(3 + 50 * i, &c);
            let expected = c.max_lr * (1.0 - c.max_lr_decrease_rate).powi(i as i32);
            assert!((at_restart - expected).abs() < 1e-18);
        }
    }

    /// Closed-form oracle over the full default 500-step schedule: monotone
    /// decay within each half-cycle and exact formula agreement everywhere.
    #[test]
    fn full_schedule_matches_closed_form() {
        let c = cfg(500, 3, 5);
        let total = 497usize;
        let base = total / 5;
        let rem = total % 5;
        let mut boundaries = vec![];
        let mut acc = 3usize;
        for i in 0..5 {
            let len = base + usize::from(i < rem);
            boundaries.push((acc, acc + len, i));
            acc += len;
        }
        assert_eq!(acc, 500);
        for &(start, end, cycle) in &boundaries {
            let cmax = c.max_lr * 0.99f64.powi(cycle as i32);
            let len = end - start;
            let mut prev = f64::INFINITY;
            for s in start..end {
                let u = s - start;
                let expected = if u == 0 {
                    cmax
                } else {
                    c.min_lr
                        + (cmax - c.min_lr)
                            * (1.0 + (std::f64::consts::PI * u as f64 / len as f64).cos())
                            / 2.0
                };
                let got = lr_at(s, &c);
                assert!((got - expected).abs() <= 1e-18, "step {s}");
                assert!(got <= prev + 1e-18, "cosine decay must be monotone within a cycle");
                prev = got;
            }
        }
    }
}
