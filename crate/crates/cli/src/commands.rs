use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde_json::json;

use yieldtrack::analysis::{equality_products, Analysis};
use yieldtrack::bootstrap::{
    bootstrap_aggregate_error, convergence_curve, read_residuals, synth_residuals, write_residuals,
};
use yieldtrack::export::{self, centroid_boundaries, export_map, ClassBreaks, MapValue};
use yieldtrack::ingest::{
    load_observations, read_pixels_csv, write_pixels_binary, zonal_aggregate, zonal_aggregate_binary, VillageRegistry,
    ZonalSummary, PIXEL_MAGIC,
};
use yieldtrack::scenario::{EngineConfig, ScenarioKind, ScenarioOutcome};
use yieldtrack::snapshot::{read_geojson, write_file, Dataset};
use yieldtrack::synth::{synth_dataset, synth_pixels, SynthConfig};

use crate::{usage_error, BandArgs, Command};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            villages,
            zones,
            seed,
            no_boundaries,
            residuals,
            sigma,
            pixels,
        } => synth(&out, villages, zones, seed, !no_boundaries, residuals, sigma, pixels),
        Command::Ingest {
            villages,
            yields,
            aez,
            pixels,
            boundaries,
            out,
        } => ingest(&villages, &yields, &aez, pixels.as_deref(), boundaries.as_deref(), &out),
        Command::Trend {
            data,
            from,
            to,
            include_preliminary,
            band,
            allow_excluded,
            out,
            trajectory,
        } => {
            let config = EngineConfig {
                window_first: from,
                window_last: to,
                include_preliminary,
                ..engine_config(&band)
            };
            trend(
                &data.data_dir,
                config,
                allow_excluded,
                out.as_deref(),
                trajectory.as_deref(),
            )
        }
        Command::Equality {
            data,
            cohort_year,
            out_dir,
        } => equality(&data.data_dir, cohort_year, &out_dir),
        Command::Scenario {
            data,
            kind,
            aez_cap,
            band,
            include_preliminary,
            out_dir,
        } => {
            let kinds = parse_kinds(&kind);
            let config = EngineConfig {
                include_preliminary,
                ..engine_config(&band)
            };
            scenario(&data.data_dir, &kinds, config, aez_cap, out_dir.as_deref())
        }
        Command::Bootstrap {
            residuals,
            sigma,
            count,
            n,
            replicates,
            seed,
            tolerance,
            max_n,
            out,
            curve,
        } => bootstrap(
            residuals.as_deref(),
            sigma,
            count,
            n,
            replicates,
            seed,
            tolerance,
            max_n,
            out.as_deref(),
            curve.as_deref(),
        ),
        Command::ExportMap {
            data,
            scenario,
            value,
            aez_cap,
            band,
            boundaries,
            breaks,
            out,
        } => {
            let kind = ScenarioKind::parse(&scenario, value).unwrap_or_else(|e| usage_error(e));
            let breaks: ClassBreaks = breaks.parse().unwrap_or_else(|e| usage_error(e));
            map(
                &data.data_dir,
                kind,
                engine_config(&band),
                aez_cap,
                boundaries.as_deref(),
                &breaks,
                out.as_deref(),
            )
        }
        Command::Serve {
            data,
            port,
            host,
            breaks,
            ui_dir,
        } => {
            let breaks: ClassBreaks = breaks.parse().unwrap_or_else(|e| usage_error(e));
            let addr: SocketAddr = format!("{host}:{port}").parse().unwrap_or_else(|e| usage_error(e));
            serve(&data.data_dir, addr, breaks, ui_dir)
        }
    }
}

fn engine_config(band: &BandArgs) -> EngineConfig {
    EngineConfig {
        band: band.band.parse().unwrap_or_else(|e| usage_error(e)),
        confidence: band.confidence,
        ..EngineConfig::default()
    }
}

fn parse_kinds(args: &[String]) -> Vec<ScenarioKind> {
    if args.len() == 1 && args[0].eq_ignore_ascii_case("all") {
        return ScenarioKind::PRESETS.to_vec();
    }
    let value = args.get(1).map(|v| {
        v.parse::<f64>()
            .unwrap_or_else(|_| usage_error(format!("scenario value {v:?} is not a number")))
    });
    vec![ScenarioKind::parse(&args[0], value).unwrap_or_else(|e| usage_error(e))]
}

/// `path` or stdout.
fn with_output(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> yieldtrack::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            write_file(p, |w| body(w))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn load(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading snapshot {}", dir.display()))
}

#[allow(clippy::too_many_arguments)]
fn synth(
    out: &Path,
    villages: usize,
    zones: usize,
    seed: u64,
    boundaries: bool,
    residuals: Option<usize>,
    sigma: f64,
    pixels: Option<usize>,
) -> Result<()> {
    let config = SynthConfig {
        villages,
        zones,
        seed,
        boundaries,
        ..SynthConfig::default()
    };
    let ds = synth_dataset(&config)?;
    ds.save(out)?;
    if let Some(count) = residuals {
        let r = synth_residuals(sigma, count, seed)?;
        write_file(&out.join("residuals.csv"), |w| write_residuals(&r, w))?;
    }
    if let Some(count) = pixels {
        let ids: Vec<String> = ds.registry.villages().map(|v| v.village_id.clone()).collect();
        let means: Vec<f64> = ids
            .iter()
            .map(|id| {
                ds.table
                    .get(id)
                    .and_then(|s| s.points.iter().rev().find(|p| !p.preliminary))
                    .map_or(config.base_mean, |p| p.yield_kg_ha)
            })
            .collect();
        let records = synth_pixels(&ids, &means, count, sigma, seed)?;
        write_file(&out.join("pixels.bin"), |w| write_pixels_binary(w, &ids, &records))?;
    }
    eprintln!(
        "synth: {} villages, {} zones, {} observations -> {}",
        ds.registry.len(),
        zones,
        ds.observations.len(),
        out.display()
    );
    Ok(())
}

fn read_pixels(path: &Path, registry: &VillageRegistry) -> Result<ZonalSummary> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let binary = reader.fill_buf()?.starts_with(PIXEL_MAGIC);
    if binary {
        Ok(zonal_aggregate_binary(reader, registry)?)
    } else {
        let records = read_pixels_csv(reader).collect::<yieldtrack::Result<Vec<_>>>()?;
        Ok(zonal_aggregate(records, registry))
    }
}

fn ingest(
    villages: &Path,
    yields: &Path,
    aez: &Path,
    pixels: Option<&Path>,
    boundaries: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let registry = VillageRegistry::load(villages, aez)?;
    let observations = load_observations(yields)?;
    let mut ds = Dataset::new(registry, observations)?;
    if let Some(b) = boundaries {
        ds = ds.with_boundaries(read_geojson(b)?)?;
    }
    if let Some(p) = pixels {
        let summary = read_pixels(p, &ds.registry)?;
        if summary.unknown_records > 0 || summary.invalid_records > 0 {
            eprintln!(
                "ingest: skipped {} pixels with unknown villages and {} invalid pixels",
                summary.unknown_records, summary.invalid_records
            );
        }
        ds.pixel_summary = Some(summary);
    }
    ds.save(out)?;
    let q = &ds.quality;
    eprintln!(
        "ingest: {} villages, {} with data; {} single-season and {} zero-area village-years -> {}",
        ds.registry.len(),
        ds.table.len(),
        q.single_season.len(),
        q.zero_area_excluded.len(),
        out.display()
    );
    Ok(())
}

fn trend(
    dir: &Path,
    config: EngineConfig,
    allow_excluded: bool,
    out: Option<&Path>,
    trajectory: Option<&Path>,
) -> Result<()> {
    let ds = load(dir)?;
    let analysis = Analysis::new(&ds.table, config)?;
    let excluded = &analysis.trends.excluded;
    if let Some((_, reason)) = excluded.first() {
        if !allow_excluded {
            bail!(
                "{reason} ({} villages cannot be fitted; --allow-excluded skips them)",
                excluded.len()
            );
        }
        eprintln!("trend: skipped {} villages that cannot be fitted", excluded.len());
    }
    let statuses = analysis.track_statuses()?;
    with_output(out, |w| {
        export::write_trend_csv(
            w,
            &analysis.trends,
            &statuses,
            config.band,
            config.baseline_year,
            config.end_year,
        )
    })?;
    if let Some(path) = trajectory {
        let t = analysis.trajectory(&ds.table, Default::default())?;
        with_output(Some(path), |w| export::write_trajectory_csv(w, &t))?;
    }
    Ok(())
}

fn equality(dir: &Path, cohort_year: i32, out_dir: &Path) -> Result<()> {
    let ds = load(dir)?;
    let products = equality_products(&ds.table, cohort_year)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_file(&out_dir.join("cohort_means.csv"), |w| {
        export::write_cohort_csv(w, &products.cells)
    })?;
    write_file(&out_dir.join("inequality.csv"), |w| {
        export::write_inequality_csv(w, &products.inequality)
    })?;
    Ok(())
}

fn evaluate(ds: &Dataset, analysis: &Analysis, kind: ScenarioKind, aez_cap: bool) -> Result<ScenarioOutcome> {
    if aez_cap {
        let ceilings = analysis.ceilings(&ds.table, &ds.registry)?;
        Ok(analysis.capped_scenario(kind, &ceilings, &ds.registry)?)
    } else {
        Ok(analysis.scenario(kind)?)
    }
}

fn scenario(
    dir: &Path,
    kinds: &[ScenarioKind],
    config: EngineConfig,
    aez_cap: bool,
    out_dir: Option<&Path>,
) -> Result<()> {
    let ds = load(dir)?;
    let analysis = Analysis::new(&ds.table, config)?;
    let outcomes = kinds
        .iter()
        .map(|&k| evaluate(&ds, &analysis, k, aez_cap).with_context(|| format!("scenario {k}")))
        .collect::<Result<Vec<_>>>()?;
    match out_dir {
        None if outcomes.len() == 1 => with_output(None, |w| export::write_json(w, &outcomes[0]))?,
        None => with_output(None, |w| export::write_json(w, &outcomes))?,
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let suffix = if aez_cap { "-capped" } else { "" };
            for o in &outcomes {
                let stem = format!("{}{suffix}", o.scenario);
                write_file(&dir.join(format!("{stem}.json")), |w| export::write_json(w, o))?;
                write_file(&dir.join(format!("{stem}.villages.csv")), |w| {
                    export::write_village_outcomes_csv(
                        w,
                        &o.per_village,
                        config.baseline_year,
                        config.pivot_year,
                        config.end_year,
                    )
                })?;
            }
            if aez_cap {
                let ceilings = analysis.ceilings(&ds.table, &ds.registry)?;
                write_file(&dir.join("ceilings.csv"), |w| export::write_ceilings_csv(w, &ceilings))?;
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bootstrap(
    residuals: Option<&Path>,
    sigma: Option<f64>,
    count: usize,
    n: usize,
    replicates: usize,
    seed: u64,
    tolerance: f64,
    max_n: Option<usize>,
    out: Option<&Path>,
    curve: Option<&Path>,
) -> Result<()> {
    let res = match (residuals, sigma) {
        (Some(path), _) => {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            read_residuals(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(s)) => synth_residuals(s, count, seed)?,
        (None, None) => usage_error("bootstrap needs --residuals FILE or --sigma S"),
    };
    let summary = bootstrap_aggregate_error(&res, n, replicates, seed)?;
    let c = convergence_curve(&res, max_n.unwrap_or(res.len()), tolerance, seed)?;
    let report = json!({
        "n": summary.n,
        "replicates": summary.replicates,
        "mean_abs_error": summary.mean_abs_error,
        "lo": summary.lo,
        "hi": summary.hi,
        "replicate_mean": summary.replicate_mean,
        "replicate_sd": summary.replicate_sd,
        "seed": seed,
        "convergence": {
            "tolerance": c.tolerance,
            "max_n": c.points.len(),
            "n_star": c.n_star,
            "converged": c.converged,
            "final_mean": c.final_mean(),
        },
    });
    with_output(out, |w| export::write_json(w, &report))?;
    if let Some(path) = curve {
        with_output(Some(path), |w| c.write_csv(w))?;
    }
    Ok(())
}

fn map(
    dir: &Path,
    kind: ScenarioKind,
    config: EngineConfig,
    aez_cap: bool,
    boundaries: Option<&Path>,
    breaks: &ClassBreaks,
    out: Option<&Path>,
) -> Result<()> {
    let ds = load(dir)?;
    let analysis = Analysis::new(&ds.table, config)?;
    let outcome = evaluate(&ds, &analysis, kind, aez_cap)?;
    let values: BTreeMap<String, MapValue> = outcome
        .per_village
        .iter()
        .map(|v| (v.village_id.clone(), MapValue::from(v)))
        .collect();
    let boundaries = match boundaries {
        Some(p) => read_geojson(p)?,
        None => ds
            .boundaries
            .clone()
            .unwrap_or_else(|| centroid_boundaries(&ds.registry)),
    };
    let (mut fc, summary) = export_map(&values, &boundaries, Some(&ds.registry), breaks)?;
    fc["scenario"] = json!(outcome.scenario);
    fc["band"] = json!(config.band);
    if summary.unmatched > 0 {
        eprintln!("export-map: {} boundary features match no village", summary.unmatched);
    }
    with_output(out, |w| export::write_json(w, &fc))
}

fn serve(dir: &Path, addr: SocketAddr, breaks: ClassBreaks, ui_dir: Option<PathBuf>) -> Result<()> {
    let ds = load(dir)?;
    let state = Arc::new(yieldtrack_service::AppState::new(ds, breaks));
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("serving on http://{addr}");
    rt.block_on(yieldtrack_service::serve(state, addr, ui_dir))?;
    Ok(())
}
