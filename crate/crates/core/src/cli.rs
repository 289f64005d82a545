//! Command-line front end.
//!
//! Exit codes: 0 success, 1 numeric or verification failure, 2 usage or
//! input error. Every command writes its outputs only after all work has
//! succeeded, so a failing run leaves no partial files behind.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::bench::run_bench;
use crate::error::{Error, Result};
use crate::importance::{score_layer, Beta, Metric};
use crate::io::{
    read_feature_maps, read_keep_spec, read_manifest, read_plan, read_scores, write_atomic,
    write_plan, write_scores, KeepRule,
};
use crate::pruner::{compose_plans, keep_count_from_ratio, make_plan, PrunePlan};
use crate::report::{compare_scores, comparison_chart, file_stem, ranked_table, spectral_heatmap};
use crate::verify::verify_conv;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "EZCROP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ezcrop", version, about = "Energy-zone channel importance for CNN pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every layer of a feature-map dump directory.
    Analyze {
        /// Directory holding manifest.json and the tensor containers.
        dumps: PathBuf,
        /// Zone size factor in (0, 1); larger values widen the low-frequency square.
        #[arg(long, default_value = "0.25")]
        beta: Beta,
        #[arg(long, value_enum, default_value_t = Metric::Energy)]
        metric: Metric,
        /// Use at most this many samples per layer.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        batch_limit: Option<u64>,
        /// Scores file to write.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Turn scores into a keep plan using per-layer ratios or counts.
    Plan {
        scores: PathBuf,
        /// JSON with a default rule and per-layer overrides.
        keep_spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compose plans from successive pruning passes, left to right.
    Compose {
        #[arg(required = true)]
        plans: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check spectral convolution against direct circular convolution.
    VerifyConv {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        /// Also write the report to this file.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Ranked tables, metric comparison and spectral heatmaps.
    Report {
        /// One scores file, or two to compare metrics.
        #[arg(required = true, num_args = 1..=2)]
        scores: Vec<PathBuf>,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
        /// Dump directory; when given, a heatmap is written per channel.
        #[arg(long)]
        heatmaps: Option<PathBuf>,
    },
    /// Time the energy and rank metrics over slice sizes.
    Bench {
        /// Comma-separated slice sizes; at least four, each 16 or more.
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024")]
        sizes: Vec<usize>,
        /// Timed samples per size and metric; at least five.
        #[arg(long, default_value_t = 9)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// JSON report to write.
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn with_pool<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

/// Runs a parsed command and returns the text to print on stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Analyze {
            dumps,
            beta,
            metric,
            batch_limit,
            output,
        } => cmd_analyze(&dumps, beta, metric, batch_limit.map(|b| b as usize), &output),
        Command::Plan {
            scores,
            keep_spec,
            output,
        } => cmd_plan(&scores, &keep_spec, &output),
        Command::Compose { plans, output } => cmd_compose(&plans, &output),
        Command::VerifyConv {
            seed,
            trials,
            output,
        } => cmd_verify_conv(seed, trials as usize, output.as_deref()),
        Command::Report {
            scores,
            output,
            heatmaps,
        } => cmd_report(&scores, &output, heatmaps.as_deref()),
        Command::Bench {
            sizes,
            reps,
            seed,
            output,
        } => cmd_bench(&sizes, reps, seed, &output),
    }
}

pub fn cmd_analyze(
    dumps: &Path,
    beta: Beta,
    metric: Metric,
    batch_limit: Option<usize>,
    output: &Path,
) -> Result<String> {
    let manifest = read_manifest(dumps)?;
    let layers = with_pool(|| {
        manifest
            .layers
            .iter()
            .map(|entry| {
                let mut fm = read_feature_maps(&dumps.join(&entry.file))
                    .map_err(|e| e.in_layer(&entry.id))?;
                if let Some(limit) = batch_limit {
                    fm.truncate_batch(limit);
                }
                info!("scoring layer {} {:?} with {metric}", entry.id, fm.dims());
                score_layer(&fm, metric, beta)
                    .map(|imp| imp.with_layer(&entry.id))
                    .map_err(|e| e.in_layer(&entry.id))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    write_scores(output, &layers)?;
    Ok(format!(
        "scored {} layers with the {metric} metric -> {}\n",
        layers.len(),
        output.display()
    ))
}

pub fn cmd_plan(scores: &Path, keep_spec: &Path, output: &Path) -> Result<String> {
    let layers = read_scores(scores)?;
    let spec = read_keep_spec(keep_spec)?;
    if let Some(unknown) = spec
        .layers
        .keys()
        .find(|id| !layers.iter().any(|l| &l.layer == *id))
    {
        return Err(Error::InvalidArgument(format!(
            "keep spec names unknown layer {unknown:?}"
        )));
    }
    let mut plan = PrunePlan::default();
    for imp in &layers {
        let rule = spec
            .layers
            .get(&imp.layer)
            .copied()
            .or(spec.default)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no keep rule for layer {:?}", imp.layer))
            })?;
        let count = match rule {
            KeepRule::Ratio(r) => keep_count_from_ratio(r, imp.channels()),
            KeepRule::Count(c) => Ok(c),
        }
        .map_err(|e| e.in_layer(&imp.layer))?;
        plan.layers.push(make_plan(imp, count)?);
    }
    write_plan(output, &plan)?;
    let kept: usize = plan.layers.iter().map(|l| l.kept()).sum();
    let total: usize = plan.layers.iter().map(|l| l.channels()).sum();
    Ok(format!(
        "plan keeps {kept} of {total} channels across {} layers -> {}\n",
        plan.layers.len(),
        output.display()
    ))
}

pub fn cmd_compose(plans: &[PathBuf], output: &Path) -> Result<String> {
    let (first, rest) = plans
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("no plans given".into()))?;
    let mut acc = read_plan(first)?;
    for path in rest {
        acc = compose_plans(&acc, &read_plan(path)?)?;
    }
    write_plan(output, &acc)?;
    Ok(format!(
        "composed {} plans -> {}\n",
        plans.len(),
        output.display()
    ))
}

pub fn cmd_verify_conv(seed: u64, trials: usize, output: Option<&Path>) -> Result<String> {
    let report = verify_conv(seed, trials)?;
    let text = report.render();
    if let Some(path) = output {
        write_atomic(path, text.as_bytes())?;
    }
    if report.passed() {
        Ok(text)
    } else {
        print!("{text}");
        Err(Error::Verification(format!(
            "{} of {} trials exceed {:.0e} (max_err {:.3e})",
            report.failures(),
            trials,
            report.tolerance,
            report.max_err()
        )))
    }
}

pub fn cmd_report(scores: &[PathBuf], output: &Path, heatmaps: Option<&Path>) -> Result<String> {
    let sets = scores
        .iter()
        .map(|p| read_scores(p))
        .collect::<Result<Vec<_>>>()?;
    let comparison = match sets.as_slice() {
        [a, b] => Some(compare_scores(a, b)?),
        _ => None,
    };

    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut text = String::new();
    for layer in &sets[0] {
        text.push_str(&ranked_table(layer));
        text.push('\n');
    }
    if let (Some(cmp), [a, b]) = (&comparison, sets.as_slice()) {
        text.push_str(&format!(
            "metric agreement ({} vs {}), Spearman rank correlation\n",
            a.first().map_or("?".into(), |l| l.metric.to_string()),
            b.first().map_or("?".into(), |l| l.metric.to_string()),
        ));
        for (c, (la, lb)) in cmp.iter().zip(a.iter().zip(b)) {
            match c.spearman {
                Some(rho) => text.push_str(&format!("  {}: rho = {rho:.6}\n", c.layer)),
                None => text.push_str(&format!("  {}: rho undefined (constant scores)\n", c.layer)),
            }
            files.push((
                output.join(format!("compare_{}.ppm", file_stem(&c.layer))),
                comparison_chart(la, lb).to_ppm(),
            ));
        }
    }
    if let Some(dumps) = heatmaps {
        let manifest = read_manifest(dumps)?;
        for entry in &manifest.layers {
            let fm = read_feature_maps(&dumps.join(&entry.file)).map_err(|e| e.in_layer(&entry.id))?;
            for ch in 0..fm.channels() {
                files.push((
                    output.join(format!("heatmap_{}_ch{}.pgm", file_stem(&entry.id), ch + 1)),
                    spectral_heatmap(&fm, ch).to_pgm(),
                ));
            }
        }
    }
    files.push((output.join("report.txt"), text.into_bytes()));

    fs::create_dir_all(output)
        .map_err(|e| Error::io(format!("creating {}", output.display()), e))?;
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    Ok(format!(
        "wrote {} files to {}\n",
        files.len(),
        output.display()
    ))
}

pub fn cmd_bench(sizes: &[usize], reps: usize, seed: u64, output: &Path) -> Result<String> {
    let report = run_bench(sizes, reps, seed)?;
    write_atomic(output, report.to_json().as_bytes())?;
    let mut s = format!(
        "slopes: energy {:.3}, rank {:.3}\n",
        report.energy_slope, report.rank_slope
    );
    for sp in &report.speedup {
        s.push_str(&format!("  n={:>5}: rank/energy = {:.1}x\n", sp.size, sp.ratio));
    }
    Ok(s)
}
