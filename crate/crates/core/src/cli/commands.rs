use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{self, ConfigFile, DataConfig};
use super::{Command, LedgerCommand, RunArgs, EXIT_FAILURE, EXIT_FORMAT, EXIT_OK, EXIT_USAGE};
use crate::dataset::{load_har, make_shards, synth_dataset, Dataset, ShardPlan};
use crate::fedcore::{federated_fuse, LocalUpdate, ScalingPolicy};
use crate::ledger::{read_chain_file, verify_chain, write_chain_file, ChainStatus};
use crate::neuralnet::{
    default_arch, deserialize_weights, evaluate, init_weights, serialize_weights, train_local,
    Architecture,
};
use crate::simnet::{heterogeneity, reports_csv, run_experiment, seeds};

pub(super) fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match command {
        Command::Simulate(args) => simulate(&args, out),
        Command::TrainLocal { run, client } => train_one(&run, client, out),
        Command::Aggregate {
            weights,
            accuracies,
            ids,
            boost,
            out: dest,
        } => aggregate(&weights, &accuracies, ids, boost, &dest, out),
        Command::Ledger {
            command: LedgerCommand::Verify { file },
        } => return verify(&file, out, err),
        Command::Heterogeneity { times, file } => return hetero(times, file.as_deref(), out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn load_data(data: &DataConfig) -> Result<(Dataset<f32>, Dataset<f32>)> {
    match data {
        DataConfig::Har { dir } => {
            if !dir.is_dir() {
                bail!("dataset directory not found: {}", dir.display());
            }
            load_har(dir).with_context(|| format!("loading UCI-HAR from {}", dir.display()))
        }
        DataConfig::Synthetic {
            seed,
            instances,
            features,
            classes,
        } => Ok(synth_dataset(*seed, *instances, *features, *classes)?),
    }
}

fn architecture(cfg: &ConfigFile, train: &Dataset<f32>) -> Result<Architecture> {
    let arch = match &cfg.model.layers {
        Some(layers) => Architecture::new(train.num_features(), layers.clone())?,
        None => default_arch(train.num_features(), train.num_classes())?,
    };
    ensure!(
        arch.num_classes() == train.num_classes(),
        "model has {} outputs but the data has {} classes",
        arch.num_classes(),
        train.num_classes()
    );
    Ok(arch)
}

/// `chain.fgch` -> `chain_n3.fgch` when a sweep writes one file per count.
fn per_count(path: &Path, clients: usize, sweep: bool) -> PathBuf {
    if !sweep {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_n{clients}.{}", ext.to_string_lossy()),
        None => format!("{stem}_n{clients}"),
    };
    path.with_file_name(name)
}

/// Writes files under `root` and remembers their digests for the run metadata.
struct Artifacts {
    root: PathBuf,
    digests: BTreeMap<String, String>,
}

impl Artifacts {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            digests: BTreeMap::new(),
        })
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading back {}", path.display()))?;
        let key = path.strip_prefix(&self.root).unwrap_or(path);
        let key = key
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        self.digests
            .insert(key, hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(&path)
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    seed: u64,
    sweep: Vec<usize>,
    config: &'a ConfigFile,
    artifacts: &'a BTreeMap<String, String>,
}

fn simulate(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = config::resolve(args.config.as_deref(), &args.overrides())?;
    cfg.simulation.validate()?;
    let sweep = cfg.sweep();
    let (train, test) = load_data(&cfg.data)?;
    let arch = architecture(&cfg, &train)?;

    let runs = run_experiment(&cfg.simulation, &arch, &train, &test, &sweep)?;

    let mut files = Artifacts::new(&cfg.output.dir)?;
    let is_sweep = runs.len() > 1;
    let reports: Vec<_> = runs
        .iter()
        .flat_map(|r| r.reports.iter().cloned())
        .collect();
    files.write("rounds.csv", reports_csv(&reports).as_bytes())?;
    for run in &runs {
        for report in &run.reports {
            for (id, history) in report.client_ids.iter().zip(&report.histories) {
                let name = format!(
                    "history/n{}_round{}_client{}.csv",
                    run.clients, report.round, id
                );
                files.write(name, history.to_csv().as_bytes())?;
            }
            writeln!(
                out,
                "clients={} round={} avg_local_acc={:.4} global_acc={:.4} rejected={} chain_len={} H={}",
                run.clients,
                report.round,
                report.avg_local_accuracy,
                report.global_accuracy,
                report.rejected,
                report.chain_len,
                report.heterogeneity.map(|h| format!("{h:.6}")).unwrap_or_else(|| "-".into()),
            )?;
        }
        let last = run.reports.last().expect("at least one round");
        files.write(
            per_count(Path::new("confusion.csv"), run.clients, is_sweep),
            last.confusion.confusion_csv().as_bytes(),
        )?;
        files.write(
            per_count(Path::new("global.fgfw"), run.clients, is_sweep),
            &serialize_weights(&run.global),
        )?;
        let chain_path = per_count(&cfg.chain_path(), run.clients, is_sweep);
        if let Some(parent) = chain_path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_chain_file(&chain_path, &run.chain)
            .with_context(|| format!("writing {}", chain_path.display()))?;
        files.record(&chain_path)?;
    }

    let meta = RunMeta {
        seed: cfg.simulation.seed,
        sweep,
        config: &cfg,
        artifacts: &files.digests,
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(cfg.output.dir.join("run-meta.json"), json + "\n")?;
    writeln!(out, "wrote {}", cfg.output.dir.display())?;
    Ok(())
}

fn train_one(args: &RunArgs, client: u64, out: &mut dyn Write) -> Result<()> {
    let cfg = config::resolve(args.config.as_deref(), &args.overrides())?;
    let sim = &cfg.simulation;
    sim.validate()?;
    ensure!(
        client >= 1 && client <= sim.clients as u64,
        "client {client} outside 1..={}",
        sim.clients
    );
    let (train, test) = load_data(&cfg.data)?;
    let arch = architecture(&cfg, &train)?;
    let shards = make_shards(
        &train,
        &ShardPlan {
            mode: sim.partition,
            client_count: sim.clients,
            seed: sim.seed.wrapping_add(seeds::SHARDS),
        },
    )?;
    let init = init_weights::<f32>(&arch, sim.seed.wrapping_add(seeds::INIT));
    let shard = &shards[(client - 1) as usize];
    let (weights, history) = train_local(&arch, &init, shard, &test, &sim.train_config(client, 1))?;
    let report = evaluate(&arch, &weights, &test)?;

    let mut files = Artifacts::new(&cfg.output.dir)?;
    files.write("weights.fgfw", &serialize_weights(&weights))?;
    files.write("history.csv", history.to_csv().as_bytes())?;
    files.write("confusion.csv", report.confusion_csv().as_bytes())?;
    writeln!(
        out,
        "client={client} samples={} accuracy={:.4}",
        shard.len(),
        report.accuracy
    )?;
    Ok(())
}

fn aggregate(
    paths: &[PathBuf],
    accuracies: &[f64],
    ids: Option<Vec<u64>>,
    boost: f64,
    dest: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    ensure!(
        accuracies.len() == paths.len(),
        "{} weight files but {} accuracies",
        paths.len(),
        accuracies.len()
    );
    let ids = ids.unwrap_or_else(|| (1..=paths.len() as u64).collect());
    ensure!(
        ids.len() == paths.len(),
        "{} weight files but {} ids",
        paths.len(),
        ids.len()
    );
    let mut updates = Vec::with_capacity(paths.len());
    for ((path, &acc), &id) in paths.iter().zip(accuracies).zip(&ids) {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let weights =
            deserialize_weights(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        updates.push(LocalUpdate {
            client_id: id,
            round: 1,
            weights,
            reported_accuracy: acc,
        });
    }
    let (global, factors) = federated_fuse(&updates, &ScalingPolicy { boost })?;
    fs::write(dest, serialize_weights(&global))
        .with_context(|| format!("writing {}", dest.display()))?;
    for ((path, id), f) in paths.iter().zip(&ids).zip(&factors) {
        writeln!(out, "{}\tclient={id}\tfactor={f:.6}", path.display())?;
    }
    Ok(())
}

fn verify(file: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let chain = match read_chain_file(file) {
        Ok(chain) => chain,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", file.display());
            return EXIT_FORMAT;
        }
    };
    match verify_chain(&chain) {
        ChainStatus::Valid => {
            let _ = writeln!(out, "valid ({} blocks)", chain.len());
            EXIT_OK
        }
        ChainStatus::Invalid(index) => {
            let _ = writeln!(out, "invalid at block {index}");
            EXIT_FAILURE
        }
    }
}

fn hetero(
    mut times: Vec<f64>,
    file: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    if let Some(path) = file {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                let _ = writeln!(err, "error: reading {}: {e}", path.display());
                return EXIT_FAILURE;
            }
        };
        for tok in text.split_whitespace() {
            match tok.parse::<f64>() {
                Ok(v) => times.push(v),
                Err(_) => {
                    let _ = writeln!(err, "error: {}: not a number: {tok:?}", path.display());
                    return EXIT_USAGE;
                }
            }
        }
    }
    match heterogeneity(&times) {
        Ok(h) => {
            let _ = writeln!(out, "{h:.6}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}
