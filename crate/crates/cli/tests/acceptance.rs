//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Thresholds are pinned below.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use yieldtrack::analysis::Analysis;
use yieldtrack::bootstrap::{bootstrap_aggregate_error, convergence_curve, synth_residuals};
use yieldtrack::equality::{format_ratio, inequality_ratio};
use yieldtrack::ingest::{
    load_observations, write_observations, write_pixels_binary, zonal_aggregate_binary, AnnualPoint, AnnualYieldSeries,
    VillageRegistry,
};
use yieldtrack::scenario::{EngineConfig, ScenarioKind};
use yieldtrack::snapshot::Dataset;
use yieldtrack::synth::{synth_dataset, synth_pixels, SynthConfig};
use yieldtrack::trend::{fit_village_trend, t_critical, Band, TrendWindow};

const OLS_REL_TOL: f64 = 1e-9;
const T_975_3: f64 = 3.18245;
const T_TOL: f64 = 1e-4;
const OLS_BUDGET: Duration = Duration::from_secs(1);
const WORKED_TOL: f64 = 0.1;
const POSTCONDITION_TOL: f64 = 1e-9;
const SCALE_REL_TOL: f64 = 1e-9;
const CAPPING_DATASETS: u64 = 50;
const BOOT_SIGMA: f64 = 700.0;
const BOOT_N: usize = 1153;
const BOOT_REPLICATES: usize = 2000;
const BOOT_SD_REL_TOL: f64 = 0.30;
const CONVERGENCE_TOLERANCE: f64 = 40.0;
const CONVERGENCE_SEEDS: u64 = 100;
const N_STAR_RANGE: (f64, f64) = (150.0, 600.0);
const BOOT_BUDGET: Duration = Duration::from_secs(10);
const PIPELINE_VILLAGES: usize = 15_000;
const PIPELINE_BUDGET: Duration = Duration::from_secs(5);
const PIXEL_RECORDS: usize = 10_000_000;
const PIXEL_BUDGET: Duration = Duration::from_secs(10);

type Outcome = Result<String, String>;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn series(id: &str, first: i32, ys: &[f64]) -> AnnualYieldSeries {
    AnnualYieldSeries {
        village_id: id.into(),
        points: ys
            .iter()
            .enumerate()
            .map(|(i, &y)| AnnualPoint {
                year: first + i as i32,
                yield_kg_ha: y,
                area_ha: 1.0,
                preliminary: false,
                seasons: 2,
            })
            .collect(),
    }
}

/// Solves the 2x2 normal equations on raw calendar years with offset 2019.
fn normal_equation_fit(years: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = years.len() as f64;
    let xs: Vec<f64> = years.iter().map(|x| x - 2019.0).collect();
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let a = (sxx * sy - sx * sxy) / det;
    let sse = xs.iter().zip(ys).map(|(x, y)| (y - a - slope * x).powi(2)).sum();
    (slope, a - 2019.0 * slope, sse)
}

fn ols_oracle() -> Outcome {
    let t = t_critical(0.95, 3.0).map_err(|e| e.to_string())?;
    check((t - T_975_3).abs() <= T_TOL, || format!("t(0.975, 3) = {t}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let level = rng.random_range(200.0..3000.0);
            let slope = rng.random_range(-200.0..300.0);
            (0..5)
                .map(|i| level + slope * i as f64 + rng.random_range(-400.0..400.0))
                .collect()
        })
        .collect();
    let start = Instant::now();
    let models: Vec<_> = inputs
        .iter()
        .map(|ys| fit_village_trend(&series("v", 2019, ys), TrendWindow::default()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let projections: Vec<(f64, f64)> = models
        .iter()
        .map(|m| {
            let lo = m.project(2030, Band::lower(0.95).unwrap()).unwrap();
            let hi = m.project(2030, Band::upper(0.95).unwrap()).unwrap();
            (lo, hi)
        })
        .collect();
    let elapsed = start.elapsed();
    let years = [2019.0, 2020.0, 2021.0, 2022.0, 2023.0];
    let mut worst = 0.0f64;
    for ((ys, m), (lo, hi)) in inputs.iter().zip(&models).zip(&projections) {
        let (slope, intercept, sse) = normal_equation_fit(&years, ys);
        for (got, want) in [(m.slope, slope), (m.intercept(), intercept), (m.sse, sse)] {
            check(rel_close(got, want, OLS_REL_TOL), || {
                format!("OLS {got} vs oracle {want}")
            })?;
            worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
        }
        let centre = intercept + slope * 2030.0;
        let s = (sse / 3.0).sqrt();
        let margin = 3.182446305284263 * s * (1.0 + 0.2 + (2030.0f64 - 2021.0).powi(2) / 10.0).sqrt();
        for (got, want) in [(*lo, centre - margin), (*hi, centre + margin)] {
            check(rel_close(got, want, OLS_REL_TOL), || {
                format!("PI {got} vs closed form {want}")
            })?;
        }
    }
    check(elapsed < OLS_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("100 series, worst rel err {worst:.1e}, t={t:.5}, {elapsed:?}"))
}

fn worked_regression() -> Outcome {
    let m = fit_village_trend(
        &series("w", 2019, &[1000.0, 1050.0, 1250.0, 1200.0, 1500.0]),
        TrendWindow::default(),
    )
    .map_err(|e| e.to_string())?;
    let y = m.project(2030, Band::MEAN).unwrap();
    let lo = m.project(2030, Band::lower(0.95).unwrap()).unwrap();
    let hi = m.project(2030, Band::upper(0.95).unwrap()).unwrap();
    check((m.slope - 115.0).abs() <= 1e-9, || format!("slope {}", m.slope))?;
    check((y - 2235.0).abs() <= WORKED_TOL, || format!("y2030 {y}"))?;
    check(
        (lo - 1389.9).abs() <= WORKED_TOL && (hi - 3080.1).abs() <= WORKED_TOL,
        || format!("PI [{lo:.2}, {hi:.2}]"),
    )?;
    Ok(format!("slope {:.1}, y2030 {y:.1}, PI [{lo:.2}, {hi:.2}]", m.slope))
}

fn synth(villages: usize, seed: u64) -> Dataset {
    synth_dataset(&SynthConfig {
        villages,
        seed,
        ..SynthConfig::default()
    })
    .expect("synthetic dataset")
}

fn scenario_postconditions() -> Outcome {
    let ds = synth(1000, 2015);
    let a = Analysis::new(&ds.table, EngineConfig::default()).map_err(|e| e.to_string())?;
    let run = |k| a.scenario(k).map_err(|e| e.to_string());
    for k in [ScenarioKind::NationalSDG, ScenarioKind::EquitableNationalSDG] {
        let o = run(k)?;
        check(
            (o.natl_progress_pct - 100.0).abs() <= POSTCONDITION_TOL && o.additional_years == 0.0,
            || {
                format!(
                    "{}: natl {} add {}",
                    o.scenario, o.natl_progress_pct, o.additional_years
                )
            },
        )?;
    }
    for k in [ScenarioKind::VillageSDG, ScenarioKind::EquitableVillageSDG] {
        let o = run(k)?;
        check(o.village_progress_pct == 100.0, || {
            format!("{}: village {}", o.scenario, o.village_progress_pct)
        })?;
    }
    for k in [
        ScenarioKind::Equitable,
        ScenarioKind::EquitableNationalSDG,
        ScenarioKind::EquitableVillageSDG,
    ] {
        let o = run(k)?;
        check(o.equality_ratio == Some(1.0), || {
            format!("{}: equality {:?}", o.scenario, o.equality_ratio)
        })?;
    }
    let sc1 = run(ScenarioKind::Current)?;
    let statuses = a.track_statuses().map_err(|e| e.to_string())?;
    check(
        sc1.per_village.len() == statuses.len() && sc1.per_village.len() == 1000,
        || "village count".into(),
    )?;
    for (v, s) in sc1.per_village.iter().zip(&statuses) {
        check(
            v.village_id == s.village_id && v.ratio.to_bits() == s.ratio.to_bits(),
            || format!("{}: {} vs {}", v.village_id, v.ratio, s.ratio),
        )?;
    }
    Ok("N=1000: Sc2/Sc5 100%, Sc3/Sc6 all villages, Sc4-6 equality 1.0, Sc1 ratios bit-equal".into())
}

fn scale_invariance() -> Outcome {
    let ds = synth_dataset(&SynthConfig {
        villages: 1000,
        seed: 77,
        base_sd: 200.0,
        trend_sd: 25.0,
        noise_sd: 80.0,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let scaled = ds.table.scaled(3.0);
    let a = Analysis::new(&ds.table, EngineConfig::default()).map_err(|e| e.to_string())?;
    let b = Analysis::new(&scaled, EngineConfig::default()).map_err(|e| e.to_string())?;
    let floored = a.anchors.anchors.iter().filter(|v| v.degenerate).count();
    check(floored == 0, || format!("precondition: {floored} floored baselines"))?;
    let (pa, pb) = (
        a.presets().map_err(|e| e.to_string())?,
        b.presets().map_err(|e| e.to_string())?,
    );
    let same = |x: f64, y: f64, what: &str, label: &str| {
        check(rel_close(x, y, SCALE_REL_TOL) || (x.is_infinite() && x == y), || {
            format!("{label} {what}: {x} vs {y}")
        })
    };
    for (x, y) in pa.iter().zip(&pb) {
        let l = x.scenario.as_str();
        same(x.natl_progress_pct, y.natl_progress_pct, "natl", l)?;
        same(x.village_progress_pct, y.village_progress_pct, "village", l)?;
        same(x.additional_years, y.additional_years, "years", l)?;
        same(x.equality_ratio.unwrap(), y.equality_ratio.unwrap(), "equality", l)?;
        same(x.bounds.unwrap().0, y.bounds.unwrap().0, "lo", l)?;
        same(x.bounds.unwrap().1, y.bounds.unwrap().1, "hi", l)?;
        same(3.0 * x.greatest_growth, y.greatest_growth, "growth", l)?;
        for (u, v) in x.per_village.iter().zip(&y.per_village) {
            same(u.ratio, v.ratio, "ratio", l)?;
            same(3.0 * u.growth, v.growth, "village growth", l)?;
        }
    }
    Ok(format!("x3 over {} presets and 1000 villages", pa.len()))
}

fn aez_capping() -> Outcome {
    let mut compared = 0;
    for seed in 0..CAPPING_DATASETS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = synth_dataset(&SynthConfig {
            villages: rng.random_range(60..400),
            zones: rng.random_range(2..10),
            seed,
            trend_mean: rng.random_range(-40.0..120.0),
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let a = Analysis::new(&ds.table, EngineConfig::default()).map_err(|e| e.to_string())?;
        let ceilings = a.ceilings(&ds.table, &ds.registry).map_err(|e| e.to_string())?;
        for kind in ScenarioKind::PRESETS {
            let raw = a.scenario(kind).map_err(|e| e.to_string())?;
            let cap = a
                .capped_scenario(kind, &ceilings, &ds.registry)
                .map_err(|e| e.to_string())?;
            check(
                cap.natl_progress_pct <= raw.natl_progress_pct + 1e-9
                    && cap.village_progress_pct <= raw.village_progress_pct,
                || format!("seed {seed} {}: capped exceeds uncapped", raw.scenario),
            )?;
            compared += 1;
        }
    }
    // declining yields: every zone's best year is below twice the mean backcast
    let ds = synth_dataset(&SynthConfig {
        villages: 200,
        seed: 9,
        trend_mean: -90.0,
        trend_sd: 10.0,
        noise_sd: 40.0,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let a = Analysis::new(&ds.table, EngineConfig::default()).map_err(|e| e.to_string())?;
    let ceilings = a.ceilings(&ds.table, &ds.registry).map_err(|e| e.to_string())?;
    let goal = 2.0 * a.anchors.mean_baseline().unwrap();
    check(ceilings.ceilings.values().all(|&c| c < goal), || {
        format!("precondition: ceilings {:?} vs goal {goal}", ceilings.max())
    })?;
    for kind in ScenarioKind::PRESETS {
        let o = a
            .capped_scenario(kind, &ceilings, &ds.registry)
            .map_err(|e| e.to_string())?;
        check(o.additional_years == f64::INFINITY, || {
            format!("{}: additional years {}", o.scenario, o.additional_years)
        })?;
    }
    Ok(format!(
        "{compared} capped/uncapped pairs over {CAPPING_DATASETS} datasets; all-below-goal ceilings give inf"
    ))
}

fn bootstrap() -> Outcome {
    let start = Instant::now();
    let residuals = synth_residuals(BOOT_SIGMA, BOOT_N, 1).map_err(|e| e.to_string())?;
    let s = bootstrap_aggregate_error(&residuals, BOOT_N, BOOT_REPLICATES, 1).map_err(|e| e.to_string())?;
    let expected = BOOT_SIGMA / (BOOT_N as f64).sqrt();
    let mut n_stars: Vec<f64> = (0..CONVERGENCE_SEEDS)
        .map(|seed| {
            let r = synth_residuals(BOOT_SIGMA, BOOT_N, 1000 + seed).unwrap();
            convergence_curve(&r, BOOT_N, CONVERGENCE_TOLERANCE, seed)
                .unwrap()
                .n_star as f64
        })
        .collect();
    let elapsed = start.elapsed();
    n_stars.sort_by(f64::total_cmp);
    let median = (n_stars[49] + n_stars[50]) / 2.0;
    check((s.replicate_sd - expected).abs() <= BOOT_SD_REL_TOL * expected, || {
        format!("replicate sd {:.2} vs {expected:.2}", s.replicate_sd)
    })?;
    check((N_STAR_RANGE.0..=N_STAR_RANGE.1).contains(&median), || {
        format!("median n* {median}")
    })?;
    check(elapsed < BOOT_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "replicate sd {:.2} (expected {expected:.2}), median n* {median}, {elapsed:.2?}",
        s.replicate_sd
    ))
}

fn enumerated_bounds(top: &[f64], bottom: &[f64]) -> (f64, f64) {
    let mut pairs: Vec<f64> = top.iter().flat_map(|t| bottom.iter().map(move |b| t / b)).collect();
    pairs.sort_by(f64::total_cmp);
    let pct = |p: f64| {
        let h = (pairs.len() - 1) as f64 * p;
        let (i, f) = (h.floor() as usize, h.fract());
        if i + 1 < pairs.len() {
            pairs[i] * (1.0 - f) + pairs[i + 1] * f
        } else {
            pairs[i]
        }
    };
    (pct(0.025), pct(0.975))
}

fn equality() -> Outcome {
    let r = inequality_ratio(&[2166.0], &[915.0], 2019).map_err(|e| e.to_string())?;
    check((r.ratio - 2.37).abs() < 0.005 && format_ratio(r.ratio) == "2.4", || {
        format!("ratio {} formats {}", r.ratio, format_ratio(r.ratio))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    for nt in 1..=20 {
        for nb in 1..=20 {
            let top: Vec<f64> = (0..nt).map(|_| rng.random_range(1500.0..4000.0)).collect();
            let bottom: Vec<f64> = (0..nb).map(|_| rng.random_range(100.0..1200.0)).collect();
            let got = inequality_ratio(&top, &bottom, 2020).map_err(|e| e.to_string())?;
            let (lo, hi) = enumerated_bounds(&top, &bottom);
            check(rel_close(got.lo, lo, 1e-12) && rel_close(got.hi, hi, 1e-12), || {
                format!("{nt}x{nb}: [{}, {}] vs [{lo}, {hi}]", got.lo, got.hi)
            })?;
            cases += 1;
        }
    }
    Ok(format!(
        "2166/915 = {:.3} -> \"{}\"; {cases} cohort-size pairs match enumeration",
        r.ratio,
        format_ratio(r.ratio)
    ))
}

fn performance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = synth(PIPELINE_VILLAGES, 3);
    let (villages, aez, yields) = (
        dir.path().join("v.csv"),
        dir.path().join("a.csv"),
        dir.path().join("y.csv"),
    );
    ds.registry
        .write_villages_csv(File::create(&villages).unwrap())
        .map_err(|e| e.to_string())?;
    ds.registry
        .write_zones_csv(File::create(&aez).unwrap())
        .map_err(|e| e.to_string())?;
    write_observations(&ds.observations, File::create(&yields).unwrap()).map_err(|e| e.to_string())?;
    let seasons = ds.observations.len() / PIPELINE_VILLAGES;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (pipeline, outcomes) = pool.install(|| -> Result<_, String> {
        let start = Instant::now();
        let registry = VillageRegistry::load(&villages, &aez).map_err(|e| e.to_string())?;
        let obs = load_observations(&yields).map_err(|e| e.to_string())?;
        let data = Dataset::new(registry, obs).map_err(|e| e.to_string())?;
        let a = Analysis::new(&data.table, EngineConfig::default()).map_err(|e| e.to_string())?;
        let outcomes = a.presets().map_err(|e| e.to_string())?;
        Ok((start.elapsed(), outcomes.len()))
    })?;
    check(outcomes == 7 && seasons == 11, || {
        format!("{outcomes} scenarios, {seasons} seasons")
    })?;
    check(pipeline < PIPELINE_BUDGET, || format!("pipeline took {pipeline:?}"))?;

    let ids: Vec<String> = ds.registry.villages().map(|v| v.village_id.clone()).collect();
    let means = vec![1400.0; ids.len()];
    let records = synth_pixels(&ids, &means, PIXEL_RECORDS, 700.0, 1).map_err(|e| e.to_string())?;
    let pixels = dir.path().join("p.bin");
    {
        let mut w = std::io::BufWriter::new(File::create(&pixels).unwrap());
        write_pixels_binary(&mut w, &ids, &records).map_err(|e| e.to_string())?;
    }
    drop(records);
    let start = Instant::now();
    let summary = zonal_aggregate_binary(BufReader::new(File::open(&pixels).unwrap()), &ds.registry)
        .map_err(|e| e.to_string())?;
    let zonal = start.elapsed();
    let total: u64 = summary.stats.values().map(|s| s.count).sum();
    check(total == PIXEL_RECORDS as u64, || format!("aggregated {total} pixels"))?;
    check(zonal < PIXEL_BUDGET, || format!("zonal took {zonal:?}"))?;
    Ok(format!(
        "{PIPELINE_VILLAGES} villages x {seasons} seasons in {pipeline:.2?} (1 thread); 10M pixels in {zonal:.2?}"
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_yieldtrack"))
        .args(args)
        .env_remove("YIELDTRACK_DATA")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn full_pipeline(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    cli(&[
        "synth",
        "--out",
        &p("raw"),
        "--villages",
        "400",
        "--seed",
        "21",
        "--residuals",
        "1153",
        "--pixels",
        "50000",
    ])?;
    let raw = |s: &str| p(&format!("raw/{s}"));
    cli(&[
        "ingest",
        "--villages",
        &raw("villages.csv"),
        "--yields",
        &raw("yields.csv"),
        "--aez",
        &raw("aez.csv"),
        "--pixels",
        &raw("pixels.bin"),
        "--boundaries",
        &raw("boundaries.geojson"),
        "--out",
        &p("snap"),
    ])?;
    let snap = p("snap");
    cli(&[
        "trend",
        "--data-dir",
        &snap,
        "--out",
        &p("out/trend.csv"),
        "--trajectory",
        &p("out/trajectory.csv"),
    ])?;
    cli(&[
        "trend",
        "--data-dir",
        &snap,
        "--band",
        "lower",
        "--out",
        &p("out/trend-lower.csv"),
    ])?;
    cli(&[
        "scenario",
        "--data-dir",
        &snap,
        "--kind",
        "all",
        "--out-dir",
        &p("out/scenarios"),
    ])?;
    cli(&[
        "scenario",
        "--data-dir",
        &snap,
        "--kind",
        "sc3",
        "--aez-cap",
        "--band",
        "upper",
        "--out-dir",
        &p("out/capped"),
    ])?;
    cli(&["equality", "--data-dir", &snap, "--out-dir", &p("out/equality")])?;
    cli(&[
        "export-map",
        "--data-dir",
        &snap,
        "--scenario",
        "sc1",
        "--out",
        &p("out/map.geojson"),
    ])?;
    cli(&[
        "bootstrap",
        "--residuals",
        &raw("residuals.csv"),
        "--seed",
        "5",
        "--out",
        &p("out/bootstrap.json"),
        "--curve",
        &p("out/curve.csv"),
    ])?;
    Ok(())
}

fn files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_pipeline(a.path())?;
    full_pipeline(b.path())?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    check(fa == fb, || "artifact sets differ".into())?;
    for f in &fa {
        let same = fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap();
        check(same, || format!("{} differs", f.display()))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs", fa.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("ols-oracle", ols_oracle),
        ("worked-regression", worked_regression),
        ("scenario-postconditions", scenario_postconditions),
        ("scale-invariance", scale_invariance),
        ("aez-capping", aez_capping),
        ("bootstrap-aggregation", bootstrap),
        ("equality", equality),
        ("performance", performance),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
