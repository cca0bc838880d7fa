use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use stackfill::catalog::{read_manifest, CatalogError};
use stackfill::pipeline::{self, RunConfig};
use stackfill::synth::{self, HoldoutRules, SceneConfig};

/// Adaptive completion of sparse multimodal satellite image stacks.
#[derive(Parser)]
#[command(name = "stackfill", version)]
struct Cli {
    /// Run configuration (TOML); defaults apply to anything unset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene, and optionally a hold-out query set.
    Synth {
        /// Scene config (JSON); the built-in scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Directory the scene is written to.
        #[arg(long)]
        out: PathBuf,
        /// Also withhold this many queries into `<out>/queries`.
        #[arg(long)]
        queries: Option<usize>,
        /// Share of queries constructed to need inter-modal generation.
        #[arg(long, default_value_t = 0.16)]
        inter_fraction: f64,
    },
    /// Add every raster of a JSON-lines manifest to the catalog.
    Ingest {
        /// One JSON object per line: raster, sensor, band, tile_id, date
        manifest: PathBuf,
    },
    /// Per-modality record counts and date spans.
    Stats,
    /// Resolve, train and predict every query of a CSV file.
    Complete {
        /// CSV with header sensor,band,tile_id,date
        queries: PathBuf,
        /// Report path; overrides the config.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Output raster directory; overrides the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score a completion report against truth rasters.
    Evaluate {
        /// JSON-lines report written by `complete`
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Metrics path; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// LPIPS scores from an external evaluator; overrides the config.
        #[arg(long)]
        lpips: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.check_paths()?;
    Ok(cfg)
}

fn print(v: &serde_json::Value) {
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    // a closed pipe (`| head`) is not an error
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn synth_cmd(
    cfg: &RunConfig,
    seed_override: Option<u64>,
    scene: Option<&Path>,
    out: &Path,
    queries: Option<usize>,
    inter_fraction: f64,
) -> Result<()> {
    let mut scene_cfg = match scene {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice::<SceneConfig>(&bytes)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => SceneConfig::default(),
    };
    if let Some(seed) = seed_override {
        scene_cfg.seed = seed;
    }
    let summary = synth::generate(&scene_cfg, out)?;
    let mut report = json!({ "scene": summary });
    if let Some(n) = queries {
        let rules = HoldoutRules {
            n_queries: n,
            inter_fraction,
            window_days: cfg.filter.window_days,
            cond_window_days: cfg.cond_window_days,
            max_nodata: cfg.filter.max_nodata,
            max_cloud: cfg.filter.max_cloud,
            cloud_classes: cfg.cloud_classes.clone(),
            fallback: cfg.fallback.clone(),
            ..HoldoutRules::default()
        };
        let set = synth::make_query_set(&summary.manifest, &rules, cfg.seed, out.join("queries"))?;
        let inter = set
            .specs
            .iter()
            .filter(|s| s.expected == stackfill::pattern::Route::InterModal)
            .count();
        report["queries"] = json!({
            "queries_csv": set.queries_csv,
            "train_manifest": set.train_manifest,
            "truth_dir": set.truth_dir,
            "intra_modal": set.specs.len() - inter,
            "inter_modal": inter,
            "withheld": set.withheld,
        });
    }
    print(&report);
    Ok(())
}

fn ingest_cmd(cfg: &RunConfig, manifest: &Path) -> Result<()> {
    let entries =
        read_manifest(manifest).with_context(|| format!("manifest {}", manifest.display()))?;
    let catalog = cfg.open_catalog()?;
    let mut items = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let meta = e
            .meta()
            .with_context(|| format!("manifest entry {}", i + 1))?;
        items.push((PathBuf::from(&e.raster), meta));
    }
    let results = catalog.ingest_batch(&items);
    let mut ingested = 0;
    let mut skipped = 0;
    let mut failed = Vec::new();
    for (r, (path, _)) in results.into_iter().zip(&items) {
        match r {
            Ok(_) => ingested += 1,
            Err(CatalogError::Duplicate { .. }) => skipped += 1,
            Err(e) => failed.push(format!("{}: {e}", path.display())),
        }
    }
    print(&json!({
        "ingested": ingested,
        "skipped_duplicates": skipped,
        "failed": failed,
        "catalog_size": catalog.len(),
    }));
    if skipped > 0 || !failed.is_empty() {
        bail!(
            "{skipped} duplicate record(s) skipped, {} raster(s) failed",
            failed.len()
        );
    }
    Ok(())
}

fn stats_cmd(cfg: &RunConfig) -> Result<()> {
    let catalog = cfg.open_catalog()?;
    print(&json!({ "records": catalog.len(), "modalities": catalog.stats() }));
    Ok(())
}

fn complete_cmd(
    cfg: &mut RunConfig,
    queries: &Path,
    report: Option<PathBuf>,
    output_dir: Option<PathBuf>,
) -> Result<()> {
    if let Some(r) = report {
        cfg.report = r;
    }
    if let Some(o) = output_dir {
        cfg.output_dir = o;
    }
    if !cfg.catalog.exists() {
        bail!(
            "catalog {} does not exist; run ingest first",
            cfg.catalog.display()
        );
    }
    let qs = pipeline::read_queries(queries)
        .with_context(|| format!("queries {}", queries.display()))?;
    let catalog = cfg.open_catalog()?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let (reports, summary) = pipeline::complete(cfg, &catalog, &qs);
    pipeline::write_report(&cfg.report, &reports)?;
    print(&json!({ "report": cfg.report, "summary": summary }));
    Ok(())
}

fn evaluate_cmd(
    cfg: &RunConfig,
    report: &Path,
    truth: &Path,
    out: Option<PathBuf>,
    lpips: Option<PathBuf>,
) -> Result<()> {
    let reports =
        pipeline::read_report(report).with_context(|| format!("report {}", report.display()))?;
    let lpips = match lpips.or_else(|| cfg.lpips.clone()) {
        Some(p) => Some(pipeline::read_lpips(p)?),
        None => None,
    };
    let metrics = pipeline::evaluate(&reports, truth, lpips.as_ref())?;
    let out = out.unwrap_or_else(|| cfg.metrics.clone());
    pipeline::write_metrics(&out, &metrics)?;
    print(&json!({
        "metrics": out,
        "queries": metrics.queries,
        "scored": metrics.scored,
        "mean_psnr": metrics.mean_psnr,
        "mean_ssim": metrics.mean_ssim,
        "mean_lpips": metrics.mean_lpips,
    }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let threads = cfg.threads;
    let seed = cli.seed;
    stackfill::with_threads(threads, move || match cli.cmd {
        Cmd::Synth {
            scene,
            out,
            queries,
            inter_fraction,
        } => synth_cmd(&cfg, seed, scene.as_deref(), &out, queries, inter_fraction),
        Cmd::Ingest { manifest } => ingest_cmd(&cfg, &manifest),
        Cmd::Stats => stats_cmd(&cfg),
        Cmd::Complete {
            queries,
            report,
            output_dir,
        } => complete_cmd(&mut cfg, &queries, report, output_dir),
        Cmd::Evaluate {
            report,
            truth,
            out,
            lpips,
        } => evaluate_cmd(&cfg, &report, &truth, out, lpips),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
