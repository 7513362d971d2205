use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dss_core::corpus::{build_corpus, ConversationSpec, CorpusConfig};
use dss_core::discovery::DiscoveryConfig;
use dss_core::embedder::EmbedderConfig;
use dss_core::evaluation::{evaluate_system, DssSystem, EvalOptions, EvalReport, UssSystem};
use dss_core::separator::{SeparatorConfig, SeparatorModel, TcnConfig};
use dss_core::training::{train_dss, train_uss, TrainConfig, CHECKPOINT_FILE, LOSS_HISTORY_FILE};

use crate::common::{ensure, ok, Outcome};

const SEED: u64 = 21;

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

struct Artifacts {
    corpus: BTreeMap<PathBuf, Vec<u8>>,
    dss: BTreeMap<PathBuf, Vec<u8>>,
    uss: BTreeMap<PathBuf, Vec<u8>>,
    report: String,
}

/// Corpus, both trainings and a report, all from one root seed.
fn pipeline(root: &Path) -> Result<Artifacts, String> {
    let corpus_cfg = CorpusConfig {
        num_speakers: 8,
        train_conversations: 3,
        dev_conversations: 1,
        test_conversations: 2,
        fully_overlapped: 3,
        full_overlap_duration_s: 2.0,
        conversation: ConversationSpec {
            duration_s: 12.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let corpus_dir = root.join("corpus");
    let m = ok(build_corpus(&corpus_cfg, &corpus_dir, SEED), "corpus")?;
    let sep = SeparatorConfig {
        encoder_dim: 16,
        adapt_dim: 16,
        tcn: TcnConfig {
            blocks_per_repeat: 2,
            repeats: 1,
            hidden_channels: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let train = TrainConfig {
        batch_size: 3,
        epochs: 2,
        steps_per_epoch: 3,
        chunk_s: 2.0,
        seed: SEED,
        ..Default::default()
    };
    let emb = EmbedderConfig::default();
    let disc = DiscoveryConfig::default();
    let (dss_dir, uss_dir) = (root.join("dss"), root.join("uss"));
    let dss = ok(SeparatorModel::new(sep.clone(), SEED), "model")?;
    let dss = ok(train_dss(dss, &m.train_real, &m.train_synthetic, &emb, &disc, &train, Some(&dss_dir)), "train dss")?;
    let uss = ok(SeparatorModel::new(SeparatorConfig { conditioned: false, ..sep }, SEED), "model")?;
    let uss = ok(train_uss(uss, &m.train_real, &m.train_synthetic, &train, Some(&uss_dir)), "train uss")?;

    let opts = EvalOptions {
        chunk_s: 4.0,
        durations: vec![8.0, 12.0],
        seed: SEED,
        ..Default::default()
    };
    let mut dss_sys = DssSystem::new(dss.model, emb, disc);
    dss_sys.chunk_s = 4.0;
    let mut uss_sys = UssSystem::new(uss.model);
    uss_sys.chunk_s = 4.0;
    uss_sys.overlap_s = 2.0;
    uss_sys.chunk_noise_snr_db = Some(5.0);
    let rows = vec![
        ok(evaluate_system(&dss_sys, &m.test_real, &opts), "evaluate dss")?,
        ok(evaluate_system(&uss_sys, &m.test_real, &opts), "evaluate uss")?,
    ];
    let report = ok(EvalReport::new("determinism", "small", opts.durations.clone(), rows), "report")?;
    Ok(Artifacts {
        corpus: tree(&corpus_dir),
        dss: tree(&dss_dir),
        uss: tree(&uss_dir),
        report: report.to_text() + &report.to_csv(),
    })
}

pub fn run() -> Outcome {
    let (a, b) = (ok(tempfile::tempdir(), "tempdir")?, ok(tempfile::tempdir(), "tempdir")?);
    let x = pipeline(a.path())?;
    let y = pipeline(b.path())?;
    ensure(x.corpus == y.corpus, || "corpus trees differ".into())?;
    for (name, t, u) in [("dss", &x.dss, &y.dss), ("uss", &x.uss, &y.uss)] {
        ensure(t.contains_key(Path::new(CHECKPOINT_FILE)) && t.contains_key(Path::new(LOSS_HISTORY_FILE)), || {
            format!("{name}: missing checkpoint or loss history")
        })?;
        ensure(t == u, || format!("{name}: checkpoint or loss history differs"))?;
    }
    ensure(x.report == y.report, || "evaluation reports differ".into())?;
    Ok(format!(
        "two runs from seed {SEED}: {} corpus files, DSS/USS checkpoints and loss histories, and the \
         evaluation report are byte-identical",
        x.corpus.len()
    ))
}
