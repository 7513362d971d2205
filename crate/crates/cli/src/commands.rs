//! Subcommand implementations. Every output goes through a temporary file
//! or directory and a rename, so failures leave nothing half written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use dss_core::audio::{plan_chunks, read_wav, write_wav};
use dss_core::corpus::{build_corpus, Manifest};
use dss_core::discovery::discover;
use dss_core::evaluation::{
    ablate_over_clustering, evaluate_system, DssSystem, EvalReport, EvalRow, MixtureSystem, OracleSystem,
    SeparationSystem, UssSystem,
};
use dss_core::separator::SeparatorModel;
use dss_core::stitcher::{parity_accuracy, simulate_error_propagation, stitch};
use dss_core::training::{train_dss, train_uss, CHECKPOINT_FILE, LOSS_HISTORY_FILE};
use dss_core::util::{atomic_write, sha256_hex};
use dss_core::RunConfig;
use log::info;

use crate::{
    Cli, Command, DiscoverArgs, EvalSystem, EvaluateArgs, GenCorpusArgs, SeparateArgs, StitchSimArgs, System,
    TrainArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] dss_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(&cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Separate(a) => separate(&cfg, a),
        Command::Discover(a) => discover_cmd(&cfg, a),
        Command::Evaluate(a) => evaluate(&cfg, a),
        Command::StitchSim(a) => stitch_sim(&cfg, a),
    }
}

/// Build the corpus in a sibling temporary directory, then swap it in.
fn gen_corpus(cfg: &RunConfig, a: &GenCorpusArgs) -> Result<()> {
    let parent = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".dss-corpus-")
        .tempdir_in(&parent)
        .map_err(io_err(&parent))?;
    let m = build_corpus(&cfg.corpus, staging.path(), cfg.seed)?;
    for (name, man) in [
        (dss_core::corpus::TRAIN_REAL_MANIFEST, &m.train_real),
        (dss_core::corpus::TRAIN_SYNTHETIC_MANIFEST, &m.train_synthetic),
        (dss_core::corpus::DEV_MANIFEST, &m.dev_real),
        (dss_core::corpus::TEST_MANIFEST, &m.test_real),
    ] {
        info!("{name}: {} records", man.len());
    }
    let staged = staging.keep();
    if a.out.exists() {
        let old = parent.join(format!(".dss-corpus-old-{}", std::process::id()));
        fs::rename(&a.out, &old).map_err(io_err(&a.out))?;
        fs::rename(&staged, &a.out).map_err(io_err(&a.out))?;
        fs::remove_dir_all(&old).map_err(io_err(&old))?;
    } else {
        fs::rename(&staged, &a.out).map_err(io_err(&a.out))?;
    }
    println!("corpus written to {}", a.out.display());
    Ok(())
}

fn train(mut cfg: RunConfig, a: &TrainArgs) -> Result<()> {
    if let Some(v) = a.epochs {
        cfg.training.epochs = v;
    }
    if let Some(v) = a.steps_per_epoch {
        cfg.training.steps_per_epoch = v;
    }
    if let Some(v) = a.batch_size {
        cfg.training.batch_size = v;
    }
    if let Some(v) = a.sampling_coefficient {
        cfg.training.sampling_coefficient = v;
    }
    cfg.validate()?;
    let directed = a.system == System::Dss;
    let real = Manifest::read(&a.real)?;
    let syn = Manifest::read(&a.syn)?;
    let model = match &a.init {
        Some(p) => SeparatorModel::load(p)?,
        None => SeparatorModel::new(cfg.separator_for(directed), cfg.seed)?,
    };
    let tc = cfg.training_config();
    let outcome = if directed {
        train_dss(model, &real, &syn, &cfg.embedder, &cfg.discovery.to_config(), &tc, Some(&a.out))?
    } else {
        train_uss(model, &real, &syn, &tc, Some(&a.out))?
    };
    let means = outcome.history.epoch_means();
    println!(
        "trained {} steps; final epoch loss {:.4}; checkpoint {}; history {}",
        outcome.history.entries.len(),
        means.last().copied().unwrap_or(f64::NAN),
        a.out.join(CHECKPOINT_FILE).display(),
        a.out.join(LOSS_HISTORY_FILE).display()
    );
    Ok(())
}

fn separate(cfg: &RunConfig, a: &SeparateArgs) -> Result<()> {
    let model = SeparatorModel::load(&a.model)?;
    let mixture = read_wav(&a.input)?;
    let directed = model.config.conditioned;
    let chunk_s = a.chunk_s.unwrap_or(8.0);
    let overlap_s = a.overlap_s.unwrap_or(if directed { 0.0 } else { 4.0 });
    let plan = plan_chunks(&mixture, chunk_s, overlap_s)?;
    let channels = if directed {
        let (out, found) =
            model.separate_recording(&mixture, &cfg.embedder, &cfg.discovery.to_config(), &plan, cfg.seed)?;
        info!("discovered {} clusters", found.clusters.num_clusters);
        out
    } else {
        let chunks = plan
            .boundaries
            .iter()
            .map(|&(s, e)| model.forward_chunk(&mixture.slice(s, e), None))
            .collect::<dss_core::Result<Vec<_>>>()?;
        if chunks.len() == 1 {
            chunks.into_iter().next().expect("one chunk")
        } else {
            stitch(&chunks, &plan)?.0
        }
    };
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    for (j, ch) in channels.iter().enumerate() {
        let p = a.out.join(format!("channel{j}.wav"));
        write_wav(ch, &p)?;
        println!("{}", p.display());
    }
    Ok(())
}

fn discover_cmd(cfg: &RunConfig, a: &DiscoverArgs) -> Result<()> {
    let n = a.n.unwrap_or(cfg.discovery.num_speakers);
    let mut dc = cfg.discovery.to_config();
    if let Some(m) = a.m {
        dc.max_clusters = m;
    }
    if n < 1 || dc.max_clusters < n {
        return Err(CliError::Usage(format!("need 1 <= N <= M, got N={n} M={}", dc.max_clusters)));
    }
    let mixture = read_wav(&a.input)?;
    let found = discover(&mixture, &cfg.embedder, n, &dc, cfg.seed)?;
    if let Some(p) = &a.out {
        found.profiles.write(p)?;
    }
    print!("{}", found.summary());
    Ok(())
}

fn evaluate(cfg: &RunConfig, a: &EvaluateArgs) -> Result<()> {
    let mut opts = cfg.eval_options();
    if let Some(d) = &a.durations {
        opts.durations = d.clone();
    }
    opts.validate()?;
    let manifest = Manifest::read(&a.manifest)?;
    let load_model = || -> Result<SeparatorModel> {
        let p = a
            .model
            .as_ref()
            .ok_or_else(|| CliError::Usage("--model is required for dss and uss".into()))?;
        Ok(SeparatorModel::load(p)?)
    };
    if a.m_values.is_some() && a.system != EvalSystem::Dss {
        return Err(CliError::Usage("--m-values applies to dss only".into()));
    }
    let rows: Vec<EvalRow> = match a.system {
        EvalSystem::Oracle => vec![evaluate_system(&OracleSystem, &manifest, &opts)?],
        EvalSystem::Mixture => vec![evaluate_system(
            &MixtureSystem {
                num_speakers: cfg.discovery.num_speakers,
            },
            &manifest,
            &opts,
        )?],
        EvalSystem::Dss => {
            let model = load_model()?;
            let dc = cfg.discovery.to_config();
            match &a.m_values {
                Some(ms) => ablate_over_clustering(&model, &cfg.embedder, &dc, &manifest, ms, &opts)?,
                None => {
                    let mut sys = DssSystem::new(model, cfg.embedder.clone(), dc);
                    sys.chunk_s = opts.chunk_s;
                    vec![evaluate_system(&sys, &manifest, &opts)?]
                }
            }
        }
        EvalSystem::Uss => {
            let mut sys = UssSystem::new(load_model()?);
            sys.chunk_s = opts.chunk_s;
            sys.overlap_s = opts.chunk_s / 2.0;
            sys.chunk_noise_snr_db = a.chunk_noise_snr;
            vec![evaluate_system(&sys as &dyn SeparationSystem, &manifest, &opts)?]
        }
    };
    let manifest_text = fs::read(&a.manifest).map_err(io_err(&a.manifest))?;
    let corpus_id = format!(
        "{}:{}",
        a.manifest.file_name().map(|s| s.to_string_lossy()).unwrap_or_default(),
        &sha256_hex(&manifest_text)[..12]
    );
    let mut provenance = cfg.to_toml()?;
    let _ = writeln!(provenance, "# system={:?} noise={:?}", a.system, a.chunk_noise_snr);
    let report = EvalReport::new(corpus_id, &provenance, opts.durations.clone(), rows)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    atomic_write(&a.out.join("report.txt"), report.to_text().as_bytes())?;
    atomic_write(&a.out.join("report.csv"), report.to_csv().as_bytes())?;
    print!("{}", report.to_text());
    Ok(())
}

fn stitch_sim(cfg: &RunConfig, a: &StitchSimArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.flip_prob) {
        return Err(CliError::Usage(format!("--flip-prob {} outside [0, 1]", a.flip_prob)));
    }
    let curve = simulate_error_propagation(a.chunks, a.flip_prob, a.trials, cfg.seed)?;
    atomic_write(&a.out, curve.to_csv().as_bytes())?;
    let last = a.chunks - 1;
    println!(
        "mean accuracy {:.4}; last chunk {:.4} (closed form {:.4})",
        curve.mean,
        curve.per_position[last],
        parity_accuracy(last, a.flip_prob)
    );
    Ok(())
}
