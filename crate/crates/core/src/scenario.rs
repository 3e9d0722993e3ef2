//! Policy scenarios: per-village growth schedules from the pivot year and the
//! national and village outcome metrics they imply at the end year.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::equality::{self, CohortAssignment};
use crate::error::{Error, Result};
use crate::ingest::{AnnualTable, AnnualYieldSeries};
use crate::stats;
use crate::trend::{self, Band, BandKind, TrendModel, TrendSet, TrendWindow};

/// Relative slack when deciding whether the national goal is met.
pub const GOAL_TOLERANCE: f64 = 1e-9;

/// Analysis years, projection band and national reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub baseline_year: i32,
    pub end_year: i32,
    pub pivot_year: i32,
    pub confidence: f64,
    pub band: BandKind,
    /// Extend the regression window through the pivot year, admitting
    /// preliminary points.
    pub include_preliminary: bool,
    /// National baseline yield (kg/ha) the reference line doubles.
    pub fao_baseline: f64,
    pub window_first: i32,
    pub window_last: i32,
    pub cohort_year: i32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            baseline_year: 2015,
            end_year: 2030,
            pivot_year: 2024,
            confidence: 0.95,
            band: BandKind::Mean,
            include_preliminary: false,
            fao_baseline: 1531.5,
            window_first: 2019,
            window_last: 2023,
            cohort_year: 2019,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_year < self.pivot_year && self.pivot_year < self.end_year) {
            return Err(Error::Config(format!(
                "years must satisfy baseline < pivot < end, got {} / {} / {}",
                self.baseline_year, self.pivot_year, self.end_year
            )));
        }
        if self.window_first > self.window_last {
            return Err(Error::Config("regression window is empty".into()));
        }
        if !(self.fao_baseline > 0.0 && self.fao_baseline.is_finite()) {
            return Err(Error::Config(format!(
                "fao baseline {} must be positive",
                self.fao_baseline
            )));
        }
        Band::new(self.band, self.confidence)?;
        Ok(())
    }

    pub fn band(&self) -> Band {
        Band {
            kind: self.band,
            confidence: self.confidence,
        }
    }

    pub fn window(&self) -> TrendWindow {
        TrendWindow {
            first: self.window_first,
            last: if self.include_preliminary {
                self.window_last.max(self.pivot_year)
            } else {
                self.window_last
            },
            include_preliminary: self.include_preliminary,
        }
    }

    /// Years between the pivot and the end year.
    pub fn horizon(&self) -> f64 {
        (self.end_year - self.pivot_year) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Sc1: observed trends continue.
    Current,
    /// Sc2: one uniform growth rate that doubles the national mean.
    NationalSDG,
    /// Sc3: every village at least doubles.
    VillageSDG,
    /// Sc4: every village reaches the top cohort's projected yield.
    Equitable,
    /// Sc5: every village reaches twice the national baseline mean.
    EquitableNationalSDG,
    /// Sc6: every village reaches the largest village doubling target.
    EquitableVillageSDG,
    /// Sc7: every village repeats its best observed year-over-year gain.
    MaxAchievedGrowth,
    CustomUniform(f64),
    CustomTarget(f64),
}

impl ScenarioKind {
    pub const PRESETS: [ScenarioKind; 7] = [
        ScenarioKind::Current,
        ScenarioKind::NationalSDG,
        ScenarioKind::VillageSDG,
        ScenarioKind::Equitable,
        ScenarioKind::EquitableNationalSDG,
        ScenarioKind::EquitableVillageSDG,
        ScenarioKind::MaxAchievedGrowth,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ScenarioKind::Current => "current",
            ScenarioKind::NationalSDG => "national-sdg",
            ScenarioKind::VillageSDG => "village-sdg",
            ScenarioKind::Equitable => "equitable",
            ScenarioKind::EquitableNationalSDG => "equitable-national-sdg",
            ScenarioKind::EquitableVillageSDG => "equitable-village-sdg",
            ScenarioKind::MaxAchievedGrowth => "max-achieved-growth",
            ScenarioKind::CustomUniform(_) => "custom-uniform",
            ScenarioKind::CustomTarget(_) => "custom-target",
        }
    }

    /// Accepts `sc1`..`sc7`, kebab-case labels and variant names.
    /// Custom kinds need `value`.
    pub fn parse(name: &str, value: Option<f64>) -> Result<Self> {
        let key: String = name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let kind = match key.as_str() {
            "sc1" | "current" => ScenarioKind::Current,
            "sc2" | "nationalsdg" => ScenarioKind::NationalSDG,
            "sc3" | "villagesdg" => ScenarioKind::VillageSDG,
            "sc4" | "equitable" => ScenarioKind::Equitable,
            "sc5" | "equitablenationalsdg" => ScenarioKind::EquitableNationalSDG,
            "sc6" | "equitablevillagesdg" => ScenarioKind::EquitableVillageSDG,
            "sc7" | "maxachievedgrowth" => ScenarioKind::MaxAchievedGrowth,
            "customuniform" | "uniform" => ScenarioKind::CustomUniform(
                value.ok_or_else(|| Error::Config("custom-uniform needs a growth value".into()))?,
            ),
            "customtarget" | "target" => ScenarioKind::CustomTarget(
                value.ok_or_else(|| Error::Config("custom-target needs a target yield".into()))?,
            ),
            _ => return Err(Error::Config(format!("unknown scenario kind {name:?}"))),
        };
        if value.is_some() && !matches!(kind, ScenarioKind::CustomUniform(_) | ScenarioKind::CustomTarget(_)) {
            return Err(Error::Config(format!("scenario {} takes no value", kind.label())));
        }
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScenarioKind::CustomUniform(g) if !g.is_finite() => {
                Err(Error::Config(format!("uniform growth {g} must be finite")))
            }
            ScenarioKind::CustomTarget(y) if !(y > 0.0 && y.is_finite()) => {
                Err(Error::Config(format!("target yield {y} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A declarative what-if request. Only `kind` is required.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub config: EngineConfig,
    #[serde(default)]
    pub aez_cap: bool,
}

/// Projection anchors for one village under the configured band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VillageAnchor {
    pub village_id: String,
    /// Baseline-year projection, floored.
    pub y_baseline: f64,
    pub y_pivot: f64,
    /// End-year projection of the trend itself.
    pub y_end_trend: f64,
    pub slope: f64,
    /// Growth implied by the band between pivot and end year; equals the
    /// slope on the mean band.
    pub trend_growth: f64,
    pub degenerate: bool,
    /// Largest observed year-over-year gain, if two consecutive years exist.
    pub max_observed_growth: Option<f64>,
    /// Last observed year in the regression window.
    pub last_observed: i32,
}

/// Baseline, pivot and end-year anchors for a fitted village.
pub fn village_anchor(model: &TrendModel, config: &EngineConfig) -> Result<VillageAnchor> {
    let band = config.band();
    let (y_baseline, degenerate) = trend::clamp_baseline(model.project(config.baseline_year, band)?);
    let y_pivot = model.project(config.pivot_year, band)?;
    let y_end_trend = model.project(config.end_year, band)?;
    let trend_growth = match band.kind {
        BandKind::Mean => model.slope,
        _ => (y_end_trend - y_pivot) / config.horizon(),
    };
    Ok(VillageAnchor {
        village_id: model.village_id.clone(),
        y_baseline,
        y_pivot,
        y_end_trend,
        slope: model.slope,
        trend_growth,
        degenerate,
        max_observed_growth: None,
        last_observed: model.window.1,
    })
}

/// Largest per-year gain between consecutive observed years in the window.
pub fn max_observed_growth(series: &AnnualYieldSeries, window: TrendWindow) -> Option<f64> {
    let pts: Vec<_> = series
        .points
        .iter()
        .filter(|p| window.admits(p.year, p.preliminary))
        .collect();
    pts.windows(2)
        .filter(|w| w[1].year - w[0].year == 1)
        .map(|w| w[1].yield_kg_ha - w[0].yield_kg_ha)
        .max_by(f64::total_cmp)
}

/// Anchors for every fitted village (id order) and the cohort assignment
/// used by equality metrics.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    pub config: EngineConfig,
    pub anchors: Vec<VillageAnchor>,
    pub cohorts: Option<CohortAssignment>,
    pub excluded: Vec<(String, String)>,
}

impl AnchorSet {
    pub fn build(table: &AnnualTable, trends: &TrendSet, config: &EngineConfig) -> Result<Self> {
        config.validate()?;
        let window = config.window();
        let mut anchors = Vec::with_capacity(trends.models.len());
        for model in trends.models.values() {
            let mut anchor = village_anchor(model, config)?;
            if let Some(series) = table.get(&model.village_id) {
                anchor.max_observed_growth = max_observed_growth(series, window);
                if let Some(last) = series
                    .points
                    .iter()
                    .filter(|p| window.admits(p.year, p.preliminary))
                    .map(|p| p.year)
                    .max()
                {
                    anchor.last_observed = last;
                }
            }
            anchors.push(anchor);
        }
        let cohorts = equality::assign_cohorts(
            anchors.iter().filter_map(|a| {
                table
                    .get(&a.village_id)
                    .and_then(|s| s.point(config.cohort_year))
                    .map(|p| (a.village_id.as_str(), p.yield_kg_ha))
            }),
            config.cohort_year,
        )
        .ok();
        Ok(Self {
            config: *config,
            anchors,
            cohorts,
            excluded: trends.excluded.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn mean_baseline(&self) -> Option<f64> {
        stats::mean_iter(self.anchors.iter().map(|a| a.y_baseline))
    }

    pub fn mean_pivot(&self) -> Option<f64> {
        stats::mean_iter(self.anchors.iter().map(|a| a.y_pivot))
    }
}

/// Scheduled post-pivot growth and resulting end-year yield for a village.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleEntry {
    pub growth: f64,
    pub y_end: f64,
    /// Sc7 fell back to the trend growth for lack of consecutive years.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub kind: ScenarioKind,
    /// Common end-year target, for the equal-target kinds.
    pub target: Option<f64>,
    /// Aligned with [`AnchorSet::anchors`].
    pub entries: Vec<ScheduleEntry>,
}

fn by_growth(a: &VillageAnchor, growth: f64, horizon: f64) -> ScheduleEntry {
    ScheduleEntry {
        growth,
        y_end: a.y_pivot + growth * horizon,
        fallback: false,
    }
}

fn to_target(a: &VillageAnchor, target: f64, horizon: f64) -> ScheduleEntry {
    ScheduleEntry {
        growth: (target - a.y_pivot) / horizon,
        y_end: target,
        fallback: false,
    }
}

/// Assigns every village its growth from the pivot year.
pub fn build_schedule(kind: ScenarioKind, set: &AnchorSet) -> Result<Schedule> {
    kind.validate()?;
    if set.is_empty() {
        return Err(Error::InsufficientVillages { found: 0, needed: 1 });
    }
    let h = set.config.horizon();
    let anchors = &set.anchors;
    let mean_b = set.mean_baseline().expect("non-empty");
    let common = |target: f64| -> Vec<ScheduleEntry> { anchors.iter().map(|a| to_target(a, target, h)).collect() };
    let (target, entries) = match kind {
        ScenarioKind::Current => (
            None,
            anchors
                .iter()
                .map(|a| ScheduleEntry {
                    growth: a.trend_growth,
                    y_end: a.y_end_trend,
                    fallback: false,
                })
                .collect(),
        ),
        ScenarioKind::NationalSDG => {
            let mean_p = set.mean_pivot().expect("non-empty");
            let g = (2.0 * mean_b - mean_p) / h;
            (None, anchors.iter().map(|a| by_growth(a, g, h)).collect())
        }
        ScenarioKind::VillageSDG => (
            None,
            anchors
                .iter()
                .map(|a| {
                    let goal = 2.0 * a.y_baseline;
                    let required = (goal - a.y_pivot) / h;
                    if a.trend_growth >= required {
                        let e = by_growth(a, a.trend_growth, h);
                        // never below the doubling goal through rounding
                        ScheduleEntry {
                            y_end: e.y_end.max(goal),
                            ..e
                        }
                    } else {
                        to_target(a, goal, h)
                    }
                })
                .collect(),
        ),
        ScenarioKind::Equitable => {
            let cohorts = set.cohorts.as_ref().ok_or(Error::InsufficientVillages {
                found: anchors.len(),
                needed: equality::DECILES as usize,
            })?;
            let top: Vec<f64> = anchors
                .iter()
                .filter(|a| cohorts.decile_of(&a.village_id) == Some(equality::DECILES))
                .map(|a| a.y_end_trend)
                .collect();
            let y = stats::mean(&top).expect("top decile non-empty");
            (Some(y), common(y))
        }
        ScenarioKind::EquitableNationalSDG => {
            let y = 2.0 * mean_b;
            (Some(y), common(y))
        }
        ScenarioKind::EquitableVillageSDG => {
            let y = anchors
                .iter()
                .map(|a| 2.0 * a.y_baseline)
                .fold(f64::NEG_INFINITY, f64::max);
            (Some(y), common(y))
        }
        ScenarioKind::MaxAchievedGrowth => (
            None,
            anchors
                .iter()
                .map(|a| match a.max_observed_growth {
                    Some(g) => by_growth(a, g, h),
                    None => ScheduleEntry {
                        fallback: true,
                        ..by_growth(a, a.trend_growth, h)
                    },
                })
                .collect(),
        ),
        ScenarioKind::CustomUniform(g) => (None, anchors.iter().map(|a| by_growth(a, g, h)).collect()),
        ScenarioKind::CustomTarget(y) => (Some(y), common(y)),
    };
    Ok(Schedule { kind, target, entries })
}

/// Years beyond the end year needed for the national mean to reach twice
/// the baseline mean at the mean growth rate: 0 when already met,
/// `+inf` when growth is not positive.
pub fn additional_years(mean_baseline: f64, mean_end: f64, mean_growth: f64) -> f64 {
    let goal = 2.0 * mean_baseline;
    if mean_end >= goal - GOAL_TOLERANCE * goal.abs() {
        0.0
    } else if mean_growth > 0.0 {
        (goal - mean_end) / mean_growth
    } else {
        f64::INFINITY
    }
}

/// Per-village result of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VillageOutcome {
    pub village_id: String,
    pub y_baseline: f64,
    pub y_pivot: f64,
    pub growth: f64,
    pub y_end: f64,
    pub ratio: f64,
    pub on_track: bool,
    pub degenerate: bool,
    pub fallback: bool,
    pub capped: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OutcomeFlags {
    pub degenerate_baseline: usize,
    pub negative_growth: usize,
    pub growth_fallback: usize,
    pub excluded_villages: usize,
    pub equality_excluded_pairs: u64,
    pub capped_villages: usize,
    pub equality_unavailable: bool,
}

fn ser_years<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

/// The five headline metrics plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub scenario: String,
    pub band: BandKind,
    pub capped: bool,
    /// Percent of the national doubling goal achieved at the end year.
    pub natl_progress_pct: f64,
    /// Serialized as `"inf"` when the goal is out of reach.
    #[serde(serialize_with = "ser_years")]
    pub additional_years: f64,
    pub village_progress_pct: f64,
    pub equality_ratio: Option<f64>,
    pub bounds: Option<(f64, f64)>,
    /// Largest per-village growth; after capping, the effective growth.
    pub greatest_growth: f64,
    pub n_villages: usize,
    pub target: Option<f64>,
    pub mean_baseline: f64,
    pub mean_end: f64,
    pub mean_growth: f64,
    pub flags: OutcomeFlags,
    #[serde(skip)]
    pub per_village: Vec<VillageOutcome>,
}

impl ScenarioOutcome {
    pub fn village(&self, village_id: &str) -> Option<&VillageOutcome> {
        self.per_village
            .binary_search_by(|v| v.village_id.as_str().cmp(village_id))
            .ok()
            .map(|i| &self.per_village[i])
    }

    pub fn ratios(&self) -> BTreeMap<&str, f64> {
        self.per_village
            .iter()
            .map(|v| (v.village_id.as_str(), v.ratio))
            .collect()
    }
}

/// Metrics from per-village end-year yields. `unreachable` forces an
/// infinite additional-years figure (used when ceilings bound the mean).
pub(crate) fn summarize(
    label: &str,
    set: &AnchorSet,
    per_village: Vec<VillageOutcome>,
    target: Option<f64>,
    capped: bool,
    unreachable: bool,
) -> Result<ScenarioOutcome> {
    let n = per_village.len();
    if n == 0 {
        return Err(Error::InsufficientVillages { found: 0, needed: 1 });
    }
    let mean_baseline = stats::mean_iter(per_village.iter().map(|v| v.y_baseline)).expect("non-empty");
    let mean_end = stats::mean_iter(per_village.iter().map(|v| v.y_end)).expect("non-empty");
    let mean_growth = stats::mean_iter(per_village.iter().map(|v| v.growth)).expect("non-empty");
    let on_track = per_village.iter().filter(|v| v.on_track).count();
    let mut flags = OutcomeFlags {
        degenerate_baseline: per_village.iter().filter(|v| v.degenerate).count(),
        negative_growth: per_village.iter().filter(|v| v.growth < 0.0).count(),
        growth_fallback: per_village.iter().filter(|v| v.fallback).count(),
        excluded_villages: set.excluded.len(),
        capped_villages: per_village.iter().filter(|v| v.capped).count(),
        ..Default::default()
    };

    let (mut equality_ratio, mut bounds) = (None, None);
    match &set.cohorts {
        Some(cohorts) => {
            let pick = |decile: u8| -> Vec<f64> {
                per_village
                    .iter()
                    .filter(|v| cohorts.decile_of(&v.village_id) == Some(decile))
                    .map(|v| v.y_end)
                    .collect()
            };
            match equality::inequality_ratio(&pick(equality::DECILES), &pick(1), set.config.end_year) {
                Ok(r) => {
                    equality_ratio = Some(r.ratio);
                    bounds = Some((r.lo, r.hi));
                    flags.equality_excluded_pairs = r.excluded_pairs;
                }
                Err(_) => flags.equality_unavailable = true,
            }
        }
        None => flags.equality_unavailable = true,
    }

    let additional = if unreachable {
        f64::INFINITY
    } else {
        additional_years(mean_baseline, mean_end, mean_growth)
    };
    Ok(ScenarioOutcome {
        scenario: label.to_string(),
        band: set.config.band,
        capped,
        natl_progress_pct: 100.0 * (mean_end - mean_baseline) / mean_baseline,
        additional_years: additional,
        village_progress_pct: 100.0 * on_track as f64 / n as f64,
        equality_ratio,
        bounds,
        greatest_growth: per_village.iter().map(|v| v.growth).fold(f64::NEG_INFINITY, f64::max),
        n_villages: n,
        target,
        mean_baseline,
        mean_end,
        mean_growth,
        flags,
        per_village,
    })
}

/// Evaluates a schedule into outcome metrics.
pub fn evaluate(set: &AnchorSet, schedule: &Schedule) -> Result<ScenarioOutcome> {
    if schedule.entries.len() != set.anchors.len() {
        return Err(Error::Config("schedule does not match anchors".into()));
    }
    let per_village = set
        .anchors
        .iter()
        .zip(&schedule.entries)
        .map(|(a, e)| {
            let ratio = e.y_end / a.y_baseline;
            VillageOutcome {
                village_id: a.village_id.clone(),
                y_baseline: a.y_baseline,
                y_pivot: a.y_pivot,
                growth: e.growth,
                y_end: e.y_end,
                ratio,
                on_track: ratio >= 2.0,
                degenerate: a.degenerate,
                fallback: e.fallback,
                capped: false,
            }
        })
        .collect();
    summarize(schedule.kind.label(), set, per_village, schedule.target, false, false)
}

/// Builds and evaluates a scenario in one step.
pub fn run(kind: ScenarioKind, set: &AnchorSet) -> Result<ScenarioOutcome> {
    evaluate(set, &build_schedule(kind, set)?)
}
