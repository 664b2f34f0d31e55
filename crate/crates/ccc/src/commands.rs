//! Subcommand implementations. Each writes its human-readable report to
//! the given writer and its files under the requested output location.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ccc_core::bench::{
    build_histories, generate_stream, parse_arms, records_from_predictions, run_with_histories, Arm,
};
use ccc_core::condense::condense_snapshot;
use ccc_core::gradcheck::{run_suite, GradcheckReport};
use ccc_core::metrics::MetricsReport;
use ccc_core::replay::RegionPolicy;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::{
    self, load_snapshot, load_stream, read_json, snapshot_file_name, write_json, CondensedFile, EmbeddingsFile,
    HistoryArtifactsFile, Manifest, PredictionsFile, SnapshotFile,
};

/// Outcome of one arm as written to `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub arm: String,
    pub config_hash: String,
    pub wall_time_secs: f64,
    pub metrics: MetricsReport,
    /// Row `t`: accuracy on every task up to `t` after training task `t`.
    pub accuracy_after: Vec<Vec<f64>>,
    pub replayed_nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub run_id: String,
    pub config_hash: String,
    pub results: Vec<ExperimentResult>,
}

fn write_report(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text).map_err(|e| CliError::io("<stdout>", e))
}

pub fn cmd_generate(config: Option<&Path>, overrides: &[String], out_dir: &Path, out: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config, overrides)?;
    let stream = generate_stream(&cfg.bench)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut written = Vec::with_capacity(stream.len() + 1);
    let mut names = Vec::with_capacity(stream.len());
    for g in &stream {
        let name = snapshot_file_name(g.timestep());
        let path = out_dir.join(&name);
        write_json(&path, &SnapshotFile::from(g))?;
        names.push(name);
        written.push(path);
    }
    let manifest = out_dir.join(formats::MANIFEST);
    write_json(
        &manifest,
        &Manifest {
            snapshots: names,
            bench: cfg.bench.clone(),
        },
    )?;
    written.push(manifest);
    write_report(
        out,
        format_args!("wrote {} snapshots to {}\n", stream.len(), out_dir.display()),
    )?;
    Ok(written)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub stream_dir: PathBuf,
    pub arms: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub dump_embeddings: bool,
}

pub fn cmd_run(opts: &RunOptions, out: &mut dyn Write) -> Result<(PathBuf, RunResults)> {
    let cfg = RunConfig::load(opts.config.as_deref(), &opts.overrides)?;
    let arms: Vec<Arm> = match &opts.arms {
        Some(list) => parse_arms(list)?,
        None => parse_arms(&cfg.run.arms.join(","))?,
    };
    let stream = load_stream(&opts.stream_dir)?;
    let raw: Vec<Vec<u8>> = formats::stream_files(&opts.stream_dir)?
        .iter()
        .map(|p| fs::read(p).map_err(|e| CliError::io(p, e)))
        .collect::<Result<_>>()?;
    let config_hash = cfg.hash_with(raw.iter().map(Vec::as_slice));
    let exp = cfg.experiment(opts.dump_embeddings);

    let run_id = cfg.run.run_id.clone().unwrap_or_else(|| config_hash[..12].to_string());
    let run_dir = opts.output_dir.clone().unwrap_or_else(|| cfg.run.output_dir.clone()).join(&run_id);
    fs::create_dir_all(&run_dir).map_err(|e| CliError::io(&run_dir, e))?;
    write_json(&run_dir.join("config.json"), &cfg)?;

    let needs_history = arms.iter().any(|a| a.policy(&exp.replay) != RegionPolicy::Nothing);
    let history_start = Instant::now();
    let histories = if needs_history {
        build_histories(&stream, &exp)?
    } else {
        vec![None; stream.len()]
    };
    let history_secs = history_start.elapsed().as_secs_f64();
    if let Some(Some(last)) = histories.last() {
        write_json(&run_dir.join("history_artifacts.json"), &HistoryArtifactsFile::from(last))?;
    }

    let mut results = Vec::with_capacity(arms.len());
    for &arm in &arms {
        let start = Instant::now();
        let outcome = run_with_histories(&stream, &[arm], &histories, &exp)?
            .pop()
            .expect("one outcome per arm");
        let shared = if arm.policy(&exp.replay) == RegionPolicy::Nothing {
            0.0
        } else {
            history_secs
        };
        let arm_dir = run_dir.join(arm.name());
        write_json(&arm_dir.join("predictions.json"), &PredictionsFile::new(arm.name(), &outcome.predictions))?;
        for (t, e) in outcome.embeddings.iter().enumerate() {
            write_json(
                &arm_dir.join("embeddings").join(format!("task_{t:04}.json")),
                &EmbeddingsFile::new(t, e),
            )?;
        }
        results.push(ExperimentResult {
            arm: arm.name().to_string(),
            config_hash: config_hash.clone(),
            wall_time_secs: start.elapsed().as_secs_f64() + shared,
            metrics: outcome.metrics,
            accuracy_after: outcome.accuracy_after,
            replayed_nodes: outcome.replayed_nodes,
        });
    }
    let run = RunResults {
        run_id,
        config_hash,
        results,
    };
    write_json(&run_dir.join("result.json"), &run)?;
    write_report(out, format_args!("{}", summary_table(&run.results)))?;
    write_report(out, format_args!("results in {}\n", run_dir.display()))?;
    Ok((run_dir, run))
}

/// Fixed-width PM/FM table, percentages with two decimals.
pub fn summary_table(results: &[ExperimentResult]) -> String {
    let mut s = format!("{:<14}{:>10}{:>10}\n", "arm", "PM (%)", "FM (%)");
    for r in results {
        s.push_str(&format!(
            "{:<14}{:>10.2}{:>10.2}\n",
            r.arm,
            100.0 * r.metrics.pm,
            100.0 * r.metrics.fm_mean
        ));
    }
    s
}

pub fn cmd_condense(
    snapshot: &Path,
    config: Option<&Path>,
    overrides: &[String],
    output: &Path,
    out: &mut dyn Write,
) -> Result<CondensedFile> {
    let cfg = RunConfig::load(config, overrides)?;
    let g = load_snapshot(snapshot)?;
    let c = condense_snapshot(&g, &cfg.condense)?;
    let file = CondensedFile::from(&c);
    write_json(output, &file)?;
    write_report(
        out,
        format_args!(
            "condensed {} nodes into {} ({} edges at theta {}) -> {}\n",
            g.len(),
            c.len(),
            c.edges.len(),
            c.theta,
            output.display()
        ),
    )?;
    Ok(file)
}

pub fn cmd_gradcheck(
    seed: u64,
    instances: usize,
    fault: Option<f64>,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<GradcheckReport> {
    if instances == 0 {
        return Err(CliError::Config("--instances must be positive".into()));
    }
    let report = run_suite(seed, instances, fault)?;
    let mut s = format!("{:<22}{:>10}{:>10}{:>16}  status\n", "op", "instances", "redrawn", "max rel err");
    for op in &report.ops {
        s.push_str(&format!(
            "{:<22}{:>10}{:>10}{:>16.3e}  {}\n",
            op.op,
            op.instances,
            op.redrawn,
            op.max_rel_error,
            if op.passed { "ok" } else { "FAIL" }
        ));
    }
    write_report(out, format_args!("{s}"))?;
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    if !report.passed {
        let failed: Vec<&str> = report.ops.iter().filter(|o| !o.passed).map(|o| o.op.as_str()).collect();
        return Err(CliError::Gradcheck(failed.join(", ")));
    }
    Ok(report)
}

pub fn cmd_eval(predictions: &Path, output: Option<&Path>, out: &mut dyn Write) -> Result<MetricsReport> {
    let file: PredictionsFile = read_json(predictions)?;
    let preds = file.to_predictions().map_err(|e| CliError::schema(predictions, e))?;
    let records = records_from_predictions(&preds).map_err(|e| CliError::schema(predictions, e))?;
    let report = MetricsReport::from_records(&records)?;
    match output {
        Some(p) => write_json(p, &report)?,
        None => write_report(out, format_args!("{}", formats::to_json(&report)))?,
    }
    Ok(report)
}
