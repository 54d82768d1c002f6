//! Multi-seed experiment runner writing per-seed and aggregate CSV curves.

use std::path::{Path, PathBuf};

use crate::agents::{rng_stream, train_agent, TrainedArtifacts};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{aggregate, write_csv, AggregateRow, MetricRow};

pub struct ExperimentOutput {
    pub runs: Vec<Vec<MetricRow>>,
    pub aggregate: Vec<AggregateRow>,
    pub files: Vec<PathBuf>,
}

pub fn seed_csv_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}.csv"))
}

pub fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}.ckpt.json"))
}

/// Trains every seed, one worker thread per available core, and returns
/// results in seed order.
pub fn run_seeds(config: &ExperimentConfig) -> Result<Vec<(TrainedArtifacts, Vec<MetricRow>)>> {
    config.validate()?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(config.seeds.len());
    if workers <= 1 {
        return config.seeds.iter().map(|&s| train_agent(config, s)).collect();
    }
    let chunk = config.seeds.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .chunks(chunk)
            .map(|seeds| scope.spawn(move || seeds.iter().map(|&s| train_agent(config, s)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(config.seeds.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::InvalidConfig { field: "seeds", reason: "training worker panicked".into() })??);
        }
        Ok(out)
    })
}

/// Writes `config.toml`, `seed_<s>.csv`, `seed_<s>.ckpt.json` and
/// `aggregate.csv` under `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let mut files = vec![out.join("config.toml")];
    std::fs::write(&files[0], config.to_toml_string())?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for (artifacts, rows) in run_seeds(config)? {
        let csv = seed_csv_path(out, artifacts.seed);
        write_csv(&csv, &rows)?;
        let ckpt = checkpoint_path(out, artifacts.seed);
        artifacts.save(&ckpt)?;
        files.extend([csv, ckpt]);
        runs.push(rows);
    }
    let agg = aggregate(&runs, config.bootstrap_resamples, &mut rng_stream(0, 7))?;
    let agg_path = out.join("aggregate.csv");
    write_csv(&agg_path, &agg)?;
    files.push(agg_path);
    Ok(ExperimentOutput { runs, aggregate: agg, files })
}
