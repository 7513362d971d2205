use dss_core::audio::{overlap_add, read_wav, segment, write_wav, Waveform};
use dss_core::separator::{SeparatorConfig, SeparatorModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{ensure, ok, Outcome};

fn framing(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for t in 0..500 {
        let len = rng.gen_range(1..3000);
        let w = Waveform::new((0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), 8000).unwrap();
        let frame = [2usize, 8, 16, 40][t % 4];
        let exact = overlap_add(&ok(segment(&w, frame, frame), "segment")?, false, 8000);
        ensure(exact.samples() == w.samples(), || format!("hop = L not bit-exact at length {len}, L {frame}"))?;
        for hop in [1, frame / 2, frame - 1].into_iter().filter(|&h| h >= 1 && h < frame) {
            let back = overlap_add(&ok(segment(&w, frame, hop), "segment")?, true, 8000);
            ensure(back.len() == len, || format!("length {} after overlap-add, want {len}", back.len()))?;
            let peak = w.samples().iter().fold(0.0f32, |m, v| m.max(v.abs())).max(f32::MIN_POSITIVE) as f64;
            let err = back
                .samples()
                .iter()
                .zip(w.samples())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() as f64))
                / peak;
            worst = worst.max(err);
        }
    }
    ensure(worst <= 1e-6, || format!("normalized overlap-add error {worst:e}"))?;
    Ok(worst)
}

fn checkpoints(dir: &std::path::Path) -> Result<(), String> {
    for (k, cfg) in [SeparatorConfig::default(), SeparatorConfig::uss()].into_iter().enumerate() {
        let model = ok(SeparatorModel::new(cfg, 11 + k as u64), "model")?;
        let path = dir.join(format!("m{k}.ckpt"));
        ok(model.save(&path), "save")?;
        let back = ok(SeparatorModel::load(&path), "load")?;
        ensure(back.config == model.config, || "config changed".into())?;
        for ((na, a), (nb, b)) in model.params.iter().zip(back.params.iter()) {
            let same = na == nb
                && a.shape() == b.shape()
                && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, || format!("tensor {na} differs after reload"))?;
        }
        ensure(ok(back.to_bytes(), "encode")? == std::fs::read(&path).unwrap(), || "re-encoding differs".into())?;
    }
    Ok(())
}

fn wav(rng: &mut ChaCha8Rng, dir: &std::path::Path) -> Result<f64, String> {
    let mut samples: Vec<f32> = (0..20_000).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    samples.extend([-1.0, 1.0, 0.0, 1.0 - 1.0 / 32768.0, -1.0 + 1e-7]);
    let w = Waveform::new(samples, 8000).unwrap();
    let path = dir.join("q.wav");
    ok(write_wav(&w, &path), "write_wav")?;
    let back = ok(read_wav(&path), "read_wav")?;
    ensure(back.len() == w.len() && back.sample_rate() == 8000, || "WAV length or rate changed".into())?;
    let err = back
        .samples()
        .iter()
        .zip(w.samples())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() as f64));
    ensure(err <= 2f64.powi(-15), || format!("quantization error {err:e} above 2^-15"))?;
    Ok(err)
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let ola = framing(&mut rng)?;
    checkpoints(dir.path())?;
    let q = wav(&mut rng, dir.path())?;
    Ok(format!(
        "overlap-add bit-exact at hop = L, normalized error {ola:.1e} otherwise (500 signals); \
         DSS and USS checkpoints bit-exact; WAV max error {q:.3e} (2^-15 = {:.3e})",
        2f64.powi(-15)
    ))
}
