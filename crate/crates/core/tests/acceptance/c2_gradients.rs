use dss_core::autodiff::{Graph, Var};
use dss_core::discovery::SpeakerProfiles;
use dss_core::separator::{SeparatorConfig, SeparatorModel, TcnConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{ensure, random_signal, Outcome};

const TOLERANCE: f64 = 1e-4;
const SEEDS: u64 = 20;

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Var + 'a;

/// Reverse-mode gradients against central differences on the 64-bit graph.
/// Relative error uses `max(|a|, |n|, floor)` with the floor at 1e-3 of
/// the largest gradient component, so numerically zero components compare
/// on an absolute scale.
fn max_rel_error(build: &Build, params: &[(Vec<usize>, Vec<f64>)], step: f64) -> f64 {
    let record = |values: &[(Vec<usize>, Vec<f64>)]| {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = values.iter().map(|(s, v)| g.param(s.clone(), v.clone()).unwrap()).collect();
        let loss = build(&mut g, &vars);
        (g, loss)
    };
    let (mut g, loss) = record(params);
    let analytic = g.backward_values(loss).unwrap();
    let mut numeric = Vec::new();
    for (p, (_, v)) in params.iter().enumerate() {
        let mut col = Vec::with_capacity(v.len());
        for i in 0..v.len() {
            let eval = |delta: f64| {
                let mut shifted = params.to_vec();
                shifted[p].1[i] += delta;
                let (g, l) = record(&shifted);
                g.scalar(l).unwrap()
            };
            col.push((eval(step) - eval(-step)) / (2.0 * step));
        }
        numeric.push(col);
    }
    let scale = numeric.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let mut worst = 0.0f64;
    for (p, num) in numeric.iter().enumerate() {
        let a = analytic[p].clone().unwrap_or_else(|| vec![0.0; num.len()]);
        for (x, n) in a.iter().zip(num) {
            worst = worst.max((x - n).abs() / x.abs().max(n.abs()).max(floor));
        }
    }
    worst
}

/// Weighted square-sum readout so every output element matters differently.
fn readout(g: &mut Graph<f64>, y: Var) -> Var {
    let n = g.value(y).len();
    let w = g
        .input(g.shape(y).to_vec(), (0..n).map(|i| 0.3 + (i as f64 * 0.77).sin()).collect())
        .unwrap();
    let yw = g.mul(y, w).unwrap();
    let sq = g.mul(yw, y).unwrap();
    g.sum(sq)
}

/// Values at least 0.05 away from zero so ReLU kinks are not straddled.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

fn primitives(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let mut out = Vec::new();
    let mut check = |name: &'static str, build: &Build, params: Vec<(Vec<usize>, Vec<f64>)>| {
        out.push((name, max_rel_error(build, &params, 1e-5)));
    };
    let x = random_signal(&mut rng, 12);
    check(
        "matmul",
        &|g, p| {
            let y = g.matmul(p[0], p[1]).unwrap();
            readout(g, y)
        },
        vec![(vec![3, 4], x.clone()), (vec![4, 5], random_signal(&mut rng, 20))],
    );
    check(
        "add_bias",
        &|g, p| {
            let y = g.add_bias(p[0], p[1]).unwrap();
            readout(g, y)
        },
        vec![(vec![3, 4], x.clone()), (vec![4], random_signal(&mut rng, 4))],
    );
    for dilation in [1usize, 2, 3] {
        check(
            "conv1d",
            &move |g, p| {
                let y = g.conv1d(p[0], p[1], dilation).unwrap();
                readout(g, y)
            },
            vec![(vec![7, 3], random_signal(&mut rng, 21)), (vec![3, 3, 2], random_signal(&mut rng, 18))],
        );
    }
    check(
        "relu",
        &|g, p| {
            let y = g.relu(p[0]);
            readout(g, y)
        },
        vec![(vec![3, 4], off_kink(&mut rng, 12))],
    );
    check(
        "sigmoid",
        &|g, p| {
            let y = g.sigmoid(p[0]);
            readout(g, y)
        },
        vec![(vec![3, 4], random_signal(&mut rng, 12).iter().map(|v| 3.0 * v).collect())],
    );
    check(
        "add",
        &|g, p| {
            let y = g.add(p[0], p[1]).unwrap();
            readout(g, y)
        },
        vec![(vec![2, 3], random_signal(&mut rng, 6)), (vec![2, 3], random_signal(&mut rng, 6))],
    );
    check(
        "mul",
        &|g, p| {
            let y = g.mul(p[0], p[1]).unwrap();
            readout(g, y)
        },
        vec![(vec![2, 3], random_signal(&mut rng, 6)), (vec![2, 3], random_signal(&mut rng, 6))],
    );
    check(
        "scale",
        &|g, p| {
            let y = g.scale(p[0], -1.7);
            readout(g, y)
        },
        vec![(vec![2, 3], random_signal(&mut rng, 6))],
    );
    check(
        "concat_row",
        &|g, p| {
            let y = g.concat_row(p[0], p[1]).unwrap();
            readout(g, y)
        },
        vec![(vec![3, 4], x.clone()), (vec![3], random_signal(&mut rng, 3))],
    );
    check(
        "slice_cols",
        &|g, p| {
            let y = g.slice_cols(p[0], 1, 2).unwrap();
            readout(g, y)
        },
        vec![(vec![3, 4], x.clone())],
    );
    check(
        "layer_norm",
        &|g, p| {
            let y = g.layer_norm(p[0], p[1], p[2]).unwrap();
            readout(g, y)
        },
        vec![
            (vec![3, 4], x.clone()),
            (vec![4], random_signal(&mut rng, 4)),
            (vec![4], random_signal(&mut rng, 4)),
        ],
    );
    check(
        "overlap_add",
        &|g, p| {
            let y = g.overlap_add(p[0], 2, 9).unwrap();
            readout(g, y)
        },
        vec![(vec![5, 3], random_signal(&mut rng, 15))],
    );
    let reference = random_signal(&mut rng, 64);
    let est: Vec<f64> = reference.iter().map(|r| r + 0.5 * rng.gen_range(-1.0..1.0)).collect();
    check("neg_si_sdr", &|g, p| g.neg_si_sdr(p[0], &reference).unwrap(), vec![(vec![64], est)]);
    check(
        "sum",
        &|g, p| {
            let s = g.sum(p[0]);
            g.mul(s, s).unwrap()
        },
        vec![(vec![2, 3], random_signal(&mut rng, 6))],
    );
    check(
        "mean",
        &|g, p| {
            let s = g.mean(p[0]);
            g.mul(s, s).unwrap()
        },
        vec![(vec![2, 3], random_signal(&mut rng, 6))],
    );
    out
}

fn full_graph(seed: u64) -> f64 {
    let cfg = SeparatorConfig {
        frame_len: 4,
        hop: 2,
        encoder_dim: 6,
        adapt_dim: 5,
        embed_dim: 3,
        num_speakers: 2,
        tcn: TcnConfig {
            blocks_per_repeat: 2,
            repeats: 1,
            kernel_size: 3,
            hidden_channels: 4,
            dilation_base: 2,
        },
        conditioned: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
    let model = SeparatorModel::new(cfg, seed).unwrap();
    let signal: Vec<f32> = (0..24).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let rows: Vec<Vec<f32>> = (0..2).map(|_| (0..3).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
    let profiles = SpeakerProfiles::from_rows(&rows).unwrap();
    let targets: Vec<Vec<f64>> = (0..2).map(|_| random_signal(&mut rng, 24)).collect();
    // random biases and gains keep ReLU inputs off their kinks
    let params: Vec<(Vec<usize>, Vec<f64>)> = model
        .params
        .iter()
        .map(|(name, t)| {
            let vals = t
                .values()
                .iter()
                .map(|&v| {
                    if name.ends_with(".b") {
                        rng.gen_range(-0.5..0.5)
                    } else if name.ends_with(".g") {
                        rng.gen_range(0.5..1.5)
                    } else {
                        v as f64
                    }
                })
                .collect();
            (t.shape().to_vec(), vals)
        })
        .collect();
    let build = |g: &mut Graph<f64>, p: &[Var]| {
        let outs = model.forward_graph(g, p, &signal, Some(&profiles)).unwrap();
        let l0 = g.neg_si_sdr(outs[0], &targets[0]).unwrap();
        let l1 = g.neg_si_sdr(outs[1], &targets[1]).unwrap();
        let s = g.add(l0, l1).unwrap();
        g.scale(s, 0.5)
    };
    max_rel_error(&build, &params, 1e-6)
}

pub fn run() -> Outcome {
    let mut worst_prim: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..SEEDS {
        for (name, err) in primitives(seed) {
            match worst_prim.iter_mut().find(|(n, _)| *n == name) {
                Some(w) => w.1 = w.1.max(err),
                None => worst_prim.push((name, err)),
            }
        }
    }
    let worst_full = (0..SEEDS).map(full_graph).fold(0.0f64, f64::max);
    let (wn, we) = worst_prim.iter().fold(("", 0.0f64), |a, &(n, e)| if e > a.1 { (n, e) } else { a });
    ensure(we < TOLERANCE, || format!("{wn} relative error {we:.2e}"))?;
    ensure(worst_full < TOLERANCE, || format!("full DSS graph relative error {worst_full:.2e}"))?;
    Ok(format!(
        "{} primitives x {SEEDS} seeds, worst {wn} {we:.2e}; full DSS graph x {SEEDS} seeds, worst {worst_full:.2e}",
        worst_prim.len()
    ))
}
