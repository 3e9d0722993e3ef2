//! Per-village linear yield trends, prediction bands and SDG 2.3 doubling
//! classification.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnnualTable, AnnualYieldSeries};
use crate::stats;

/// Floor applied to projected baseline yields before forming ratios.
pub const BASELINE_FLOOR: f64 = 1.0;

/// Years (inclusive) whose points enter a regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendWindow {
    pub first: i32,
    pub last: i32,
    pub include_preliminary: bool,
}

impl Default for TrendWindow {
    fn default() -> Self {
        Self {
            first: 2019,
            last: 2023,
            include_preliminary: false,
        }
    }
}

impl TrendWindow {
    pub fn admits(&self, year: i32, preliminary: bool) -> bool {
        year >= self.first && year <= self.last && (self.include_preliminary || !preliminary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Mean,
    Lower,
    Upper,
}

impl fmt::Display for BandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandKind::Mean => "mean",
            BandKind::Lower => "lower",
            BandKind::Upper => "upper",
        })
    }
}

impl FromStr for BandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(BandKind::Mean),
            "lower" => Ok(BandKind::Lower),
            "upper" => Ok(BandKind::Upper),
            other => Err(Error::Config(format!(
                "unknown band {other:?}; expected mean, lower or upper"
            ))),
        }
    }
}

/// Which projection to use: the fitted mean, or one side of a prediction
/// interval at the given confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub kind: BandKind,
    pub confidence: f64,
}

impl Band {
    pub const MEAN: Band = Band {
        kind: BandKind::Mean,
        confidence: 0.95,
    };

    pub fn new(kind: BandKind, confidence: f64) -> Result<Self> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::Config(format!("confidence {confidence} must lie in (0, 1)")));
        }
        Ok(Self { kind, confidence })
    }

    pub fn lower(confidence: f64) -> Result<Self> {
        Self::new(BandKind::Lower, confidence)
    }

    pub fn upper(confidence: f64) -> Result<Self> {
        Self::new(BandKind::Upper, confidence)
    }
}

impl Default for Band {
    fn default() -> Self {
        Band::MEAN
    }
}

thread_local! {
    static T_CACHE: RefCell<HashMap<(u64, u64), f64>> = RefCell::new(HashMap::new());
}

/// Two-sided critical value `t_{1-(1-conf)/2, df}`.
pub fn t_critical(confidence: f64, df: f64) -> Result<f64> {
    let key = (confidence.to_bits(), df.to_bits());
    if let Some(t) = T_CACHE.with(|c| c.borrow().get(&key).copied()) {
        return Ok(t);
    }
    let t = stats::student_t_quantile(1.0 - (1.0 - confidence) / 2.0, df)
        .ok_or_else(|| Error::Config(format!("no t quantile for confidence {confidence}, df {df}")))?;
    T_CACHE.with(|c| c.borrow_mut().insert(key, t));
    Ok(t)
}

/// Ordinary least squares fit of annual yield on calendar year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendModel {
    pub village_id: String,
    pub n: usize,
    pub x_mean: f64,
    pub y_mean: f64,
    /// kg/ha/year
    pub slope: f64,
    /// Centered sum of squares of the years.
    pub sxx: f64,
    pub sse: f64,
    /// sqrt(SSE / (n - 2))
    pub resid_scale: f64,
    pub window: (i32, i32),
}

impl TrendModel {
    pub fn intercept(&self) -> f64 {
        self.y_mean - self.slope * self.x_mean
    }

    pub fn fitted(&self, year: i32) -> f64 {
        self.y_mean + self.slope * (year as f64 - self.x_mean)
    }

    /// Half-width of the prediction interval for a new observation at `year`.
    pub fn margin(&self, year: i32, confidence: f64) -> Result<f64> {
        if self.n < 3 {
            return Err(Error::InsufficientPoints {
                village: self.village_id.clone(),
                found: self.n,
            });
        }
        let t = t_critical(confidence, (self.n - 2) as f64)?;
        let dx = year as f64 - self.x_mean;
        Ok(t * self.resid_scale * (1.0 + 1.0 / self.n as f64 + dx * dx / self.sxx).sqrt())
    }

    pub fn project(&self, year: i32, band: Band) -> Result<f64> {
        let mean = self.fitted(year);
        match band.kind {
            BandKind::Mean => Ok(mean),
            BandKind::Lower => Ok(mean - self.margin(year, band.confidence)?),
            BandKind::Upper => Ok(mean + self.margin(year, band.confidence)?),
        }
    }

    /// Copy with yields scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            y_mean: self.y_mean * factor,
            slope: self.slope * factor,
            sse: self.sse * factor * factor,
            resid_scale: self.resid_scale * factor.abs(),
            ..self.clone()
        }
    }
}

/// Fits a village trend over the points admitted by `window`.
pub fn fit_village_trend(series: &AnnualYieldSeries, window: TrendWindow) -> Result<TrendModel> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = series
        .points
        .iter()
        .filter(|p| window.admits(p.year, p.preliminary))
        .map(|p| (p.year as f64, p.yield_kg_ha))
        .unzip();
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientPoints {
            village: series.village_id.clone(),
            found: n,
        });
    }
    let x_mean = stats::mean(&xs).expect("non-empty");
    let y_mean = stats::mean(&ys).expect("non-empty");
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let dx = x - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    if sxx <= 0.0 {
        return Err(Error::validation(
            format!("series {:?}", series.village_id),
            "all years identical",
        ));
    }
    let slope = sxy / sxx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (y_mean + slope * (x - x_mean));
            r * r
        })
        .sum();
    Ok(TrendModel {
        village_id: series.village_id.clone(),
        n,
        x_mean,
        y_mean,
        slope,
        sxx,
        sse,
        resid_scale: (sse / (n - 2) as f64).sqrt(),
        window: (window.first, window.last),
    })
}

/// Models for every village that can be fitted, plus the exclusions.
#[derive(Debug, Clone, Default)]
pub struct TrendSet {
    pub models: BTreeMap<String, TrendModel>,
    pub excluded: Vec<(String, String)>,
}

/// Fits every village in parallel; results are keyed by village id.
pub fn fit_all(table: &AnnualTable, window: TrendWindow) -> TrendSet {
    let series: Vec<&AnnualYieldSeries> = table.iter().collect();
    let fits: Vec<Result<TrendModel>> = series.par_iter().map(|s| fit_village_trend(s, window)).collect();
    let mut set = TrendSet::default();
    for (s, fit) in series.into_iter().zip(fits) {
        match fit {
            Ok(m) => {
                set.models.insert(s.village_id.clone(), m);
            }
            Err(e) => set.excluded.push((s.village_id.clone(), e.to_string())),
        }
    }
    set
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackStatus {
    pub village_id: String,
    pub y_baseline: f64,
    pub y_end: f64,
    pub ratio: f64,
    pub on_track: bool,
    /// The projected baseline fell to the floor and was clamped.
    pub flagged_degenerate: bool,
}

/// Ratio of end-year to baseline-year projections on a single band.
pub fn doubling_ratio(model: &TrendModel, baseline_year: i32, end_year: i32, band: Band) -> Result<TrackStatus> {
    let (y_baseline, flagged_degenerate) = clamp_baseline(model.project(baseline_year, band)?);
    let y_end = model.project(end_year, band)?;
    let ratio = y_end / y_baseline;
    Ok(TrackStatus {
        village_id: model.village_id.clone(),
        y_baseline,
        y_end,
        ratio,
        on_track: ratio >= 2.0,
        flagged_degenerate,
    })
}

pub(crate) fn clamp_baseline(y: f64) -> (f64, bool) {
    if y <= BASELINE_FLOOR {
        (BASELINE_FLOOR, true)
    } else {
        (y, false)
    }
}

/// Linear path from the baseline value to twice that value at `end_year`.
pub fn sdg_reference(fao_baseline: f64, baseline_year: i32, end_year: i32, year: i32) -> f64 {
    fao_baseline * (1.0 + (year - baseline_year) as f64 / (end_year - baseline_year) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NationalWeighting {
    #[default]
    Unweighted,
    Area,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservedPoint {
    pub year: i32,
    pub mean_yield: f64,
    pub villages: usize,
    pub preliminary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferencePoint {
    pub year: i32,
    pub target_yield: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NationalTrajectory {
    pub fao_baseline: f64,
    pub weighting: NationalWeighting,
    pub observed: Vec<ObservedPoint>,
    pub sdg_line: Vec<ReferencePoint>,
}

/// National mean yield per observed year alongside the doubling line.
pub fn national_trajectory(
    table: &AnnualTable,
    fao_baseline: f64,
    baseline_year: i32,
    end_year: i32,
    weighting: NationalWeighting,
) -> Result<NationalTrajectory> {
    if table.is_empty() {
        return Err(Error::InsufficientVillages { found: 0, needed: 1 });
    }
    if !(fao_baseline > 0.0 && fao_baseline.is_finite()) {
        return Err(Error::Config(format!("fao baseline {fao_baseline} must be positive")));
    }
    if end_year <= baseline_year {
        return Err(Error::Config("end year must follow baseline year".into()));
    }
    let mut observed = Vec::new();
    for year in table.years() {
        let points: Vec<_> = table.year_points(year).map(|(_, p)| *p).collect();
        let mean_yield = match weighting {
            NationalWeighting::Unweighted => stats::mean_iter(points.iter().map(|p| p.yield_kg_ha)),
            NationalWeighting::Area => {
                let area: f64 = points.iter().map(|p| p.area_ha).sum();
                (area > 0.0).then(|| points.iter().map(|p| p.yield_kg_ha * p.area_ha).sum::<f64>() / area)
            }
        };
        if let Some(mean_yield) = mean_yield {
            observed.push(ObservedPoint {
                year,
                mean_yield,
                villages: points.len(),
                preliminary: points.iter().any(|p| p.preliminary),
            });
        }
    }
    let sdg_line = (baseline_year..=end_year)
        .map(|year| ReferencePoint {
            year,
            target_yield: sdg_reference(fao_baseline, baseline_year, end_year, year),
        })
        .collect();
    Ok(NationalTrajectory {
        fao_baseline,
        weighting,
        observed,
        sdg_line,
    })
}
