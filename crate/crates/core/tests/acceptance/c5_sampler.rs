use dss_core::training::{Pool, RealSynMix};

use crate::common::{ensure, ok, Outcome};

pub fn run() -> Outcome {
    let mix = ok(RealSynMix::new(200, 200, 28, 6.0, 5), "sampler")?;
    for epoch in 0..5 {
        for step in 0..200 {
            let batch = mix.batch(epoch, step);
            let real = batch.iter().filter(|b| b.pool == Pool::Real).count();
            ensure(batch.len() == 28 && real == 24, || {
                format!("epoch {epoch} step {step}: {real} real of {}", batch.len())
            })?;
        }
    }

    let target = 6.0 / 7.0;
    let steps = 20_000;
    let mut worst = 0.0f64;
    for batch_size in [5usize, 8, 10, 13, 27, 64] {
        let mix = ok(RealSynMix::new(200, 200, batch_size, 6.0, batch_size as u64), "sampler")?;
        let real: usize = (0..steps)
            .map(|s| mix.batch(s / 500, s % 500).iter().filter(|b| b.pool == Pool::Real).count())
            .sum();
        let frac = real as f64 / (steps * batch_size) as f64;
        let rel = (frac - target).abs() / target;
        worst = worst.max(rel);
        ensure(rel <= 0.01, || format!("batch {batch_size}: real fraction {frac:.5} vs {target:.5}"))?;
    }
    Ok(format!(
        "28-item batches always 24 real / 4 synthetic (1000 batches); long-run share within {:.3}% of 6/7 \
         for batch sizes 5, 8, 10, 13, 27, 64",
        worst * 100.0
    ))
}
