//! File products: trend, equality, scenario and ceiling tables, outcome
//! JSON and the choropleth GeoJSON.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::equality::{CohortCell, InequalityReport};
use crate::error::{Error, Result};
use crate::feasibility::CeilingTable;
use crate::ingest::VillageRegistry;
use crate::scenario::{ScenarioOutcome, VillageOutcome};
use crate::trend::{BandKind, NationalTrajectory, TrackStatus, TrendSet};

pub const NODATA: &str = "nodata";

fn put<W: Write, I, T>(w: &mut csv::Writer<W>, what: &str, record: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(record).map_err(|e| Error::csv(what, e))
}

fn finish<W: Write>(mut w: csv::Writer<W>, what: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(what, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

/// `village_id,slope,y<baseline>,y<end>,ratio,on_track,band,flagged`
pub fn write_trend_csv(
    out: impl Write,
    trends: &TrendSet,
    statuses: &[TrackStatus],
    band: BandKind,
    baseline_year: i32,
    end_year: i32,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (yb, ye) = (format!("y{baseline_year}"), format!("y{end_year}"));
    put(
        &mut w,
        "trend",
        ["village_id", "slope", &yb, &ye, "ratio", "on_track", "band", "flagged"],
    )?;
    for s in statuses {
        let slope = trends
            .models
            .get(&s.village_id)
            .ok_or_else(|| Error::UnknownVillage(s.village_id.clone()))?
            .slope;
        put(
            &mut w,
            "trend",
            [
                s.village_id.clone(),
                slope.to_string(),
                s.y_baseline.to_string(),
                s.y_end.to_string(),
                s.ratio.to_string(),
                flag(s.on_track).into(),
                band.to_string(),
                flag(s.flagged_degenerate).into(),
            ],
        )?;
    }
    finish(w, "trend")
}

/// `year,observed_mean,villages,preliminary,sdg_target`, one row per year of
/// either series.
pub fn write_trajectory_csv(out: impl Write, trajectory: &NationalTrajectory) -> Result<()> {
    let mut rows: BTreeMap<i32, (Option<&crate::trend::ObservedPoint>, Option<f64>)> = BTreeMap::new();
    for p in &trajectory.observed {
        rows.entry(p.year).or_default().0 = Some(p);
    }
    for r in &trajectory.sdg_line {
        rows.entry(r.year).or_default().1 = Some(r.target_yield);
    }
    let mut w = csv::Writer::from_writer(out);
    put(
        &mut w,
        "trajectory",
        ["year", "observed_mean", "villages", "preliminary", "sdg_target"],
    )?;
    for (year, (obs, target)) in rows {
        put(
            &mut w,
            "trajectory",
            [
                year.to_string(),
                opt(obs.map(|o| o.mean_yield)),
                obs.map(|o| o.villages.to_string()).unwrap_or_default(),
                obs.map(|o| flag(o.preliminary)).unwrap_or_default().to_string(),
                opt(target),
            ],
        )?;
    }
    finish(w, "trajectory")
}

/// `year,decile,mean_yield`; empty mean when no member has data.
pub fn write_cohort_csv(out: impl Write, cells: &[CohortCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    put(&mut w, "cohorts", ["year", "decile", "mean_yield"])?;
    for c in cells {
        put(
            &mut w,
            "cohorts",
            [c.year.to_string(), c.decile.to_string(), opt(c.mean_yield)],
        )?;
    }
    finish(w, "cohorts")
}

/// `year,ratio,lo,hi,preliminary`
pub fn write_inequality_csv(out: impl Write, reports: &[InequalityReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    put(&mut w, "inequality", ["year", "ratio", "lo", "hi", "preliminary"])?;
    for r in reports {
        put(
            &mut w,
            "inequality",
            [
                r.year.to_string(),
                r.ratio.to_string(),
                r.lo.to_string(),
                r.hi.to_string(),
                flag(r.preliminary).into(),
            ],
        )?;
    }
    finish(w, "inequality")
}

/// `village_id,y<baseline>,y<pivot>,growth,y<end>,ratio,on_track`
pub fn write_village_outcomes_csv(
    out: impl Write,
    villages: &[VillageOutcome],
    baseline_year: i32,
    pivot_year: i32,
    end_year: i32,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header = [
        "village_id".to_string(),
        format!("y{baseline_year}"),
        format!("y{pivot_year}"),
        "growth".into(),
        format!("y{end_year}"),
        "ratio".into(),
        "on_track".into(),
    ];
    put(&mut w, "villages", &header)?;
    for v in villages {
        put(
            &mut w,
            "villages",
            [
                v.village_id.clone(),
                v.y_baseline.to_string(),
                v.y_pivot.to_string(),
                v.growth.to_string(),
                v.y_end.to_string(),
                v.ratio.to_string(),
                flag(v.on_track).into(),
            ],
        )?;
    }
    finish(w, "villages")
}

/// `aez_id,ceiling_kg_ha,window_first,window_last`
pub fn write_ceilings_csv(out: impl Write, ceilings: &CeilingTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    put(
        &mut w,
        "ceilings",
        ["aez_id", "ceiling_kg_ha", "window_first", "window_last"],
    )?;
    for (zone, c) in &ceilings.ceilings {
        put(
            &mut w,
            "ceilings",
            [
                zone.clone(),
                c.to_string(),
                ceilings.window.0.to_string(),
                ceilings.window.1.to_string(),
            ],
        )?;
    }
    finish(w, "ceilings")
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(mut out: impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io("json", e))
}

pub fn outcome_json(outcome: &ScenarioOutcome) -> Result<String> {
    Ok(serde_json::to_string_pretty(outcome)?)
}

/// Ratio class edges, lower-inclusive. The defaults give
/// `<1.0`, `1.0–1.5`, `1.5–2.0` and `≥2.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBreaks {
    edges: Vec<f64>,
}

impl Default for ClassBreaks {
    fn default() -> Self {
        ClassBreaks {
            edges: vec![1.0, 1.5, 2.0],
        }
    }
}

impl ClassBreaks {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Config("class breaks need at least one edge".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "class breaks must be finite and strictly increasing".into(),
            ));
        }
        Ok(ClassBreaks { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Every label in ascending order, `nodata` excluded.
    pub fn labels(&self) -> Vec<String> {
        let e = &self.edges;
        let mut out = vec![format!("<{:.1}", e[0])];
        out.extend(e.windows(2).map(|w| format!("{:.1}–{:.1}", w[0], w[1])));
        out.push(format!("≥{:.1}", e[e.len() - 1]));
        out
    }

    pub fn classify(&self, ratio: f64) -> String {
        if ratio.is_nan() {
            return NODATA.into();
        }
        let idx = self.edges.partition_point(|&e| e <= ratio);
        self.labels().swap_remove(idx)
    }
}

impl fmt::Display for ClassBreaks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ClassBreaks {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let edges = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad class break {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ClassBreaks::new(edges)
    }
}

/// What the map shows for one village.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapValue {
    pub ratio: f64,
    pub on_track: bool,
    pub growth: Option<f64>,
}

impl From<&TrackStatus> for MapValue {
    fn from(s: &TrackStatus) -> Self {
        MapValue {
            ratio: s.ratio,
            on_track: s.on_track,
            growth: None,
        }
    }
}

impl From<&VillageOutcome> for MapValue {
    fn from(v: &VillageOutcome) -> Self {
        MapValue {
            ratio: v.ratio,
            on_track: v.on_track,
            growth: Some(v.growth),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MapSummary {
    pub features: usize,
    pub nodata: usize,
    /// Boundary features whose id is not a registry village.
    pub unmatched: usize,
}

/// Point features at registry centroids, for datasets without polygons.
pub fn centroid_boundaries(registry: &VillageRegistry) -> Value {
    let features: Vec<Value> = registry
        .villages()
        .filter_map(|v| {
            v.centroid.map(|(lon, lat)| {
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [lon, lat]},
                    "properties": {"village_id": v.village_id, "name": v.name},
                })
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Annotates each boundary feature with `ratio`, `on_track` and `class`.
/// Geometry and other properties are carried through unchanged.
pub fn export_map(
    values: &BTreeMap<String, MapValue>,
    boundaries: &Value,
    registry: Option<&VillageRegistry>,
    breaks: &ClassBreaks,
) -> Result<(Value, MapSummary)> {
    if boundaries.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::validation("boundaries", "expected a GeoJSON FeatureCollection"));
    }
    let Some(features) = boundaries.get("features").and_then(Value::as_array) else {
        return Err(Error::validation(
            "boundaries",
            "FeatureCollection has no features array",
        ));
    };
    let mut summary = MapSummary::default();
    let mut out = Vec::with_capacity(features.len());
    for (i, feature) in features.iter().enumerate() {
        let id = feature
            .get("properties")
            .and_then(|p| p.get("village_id"))
            .and_then(Value::as_str)
            .ok_or_else(|| {
                Error::validation("boundaries", format!("feature {i} lacks a string village_id property"))
            })?;
        let mut props: Map<String, Value> = feature
            .get("properties")
            .and_then(Value::as_object)
            .cloned()
            .unwrap_or_default();
        if registry.is_some_and(|r| !r.contains(id)) {
            summary.unmatched += 1;
        }
        match values.get(id).filter(|v| v.ratio.is_finite()) {
            Some(v) => {
                props.insert("ratio".into(), json!(v.ratio));
                props.insert("on_track".into(), json!(v.on_track));
                props.insert("class".into(), json!(breaks.classify(v.ratio)));
                if let Some(g) = v.growth {
                    props.insert("growth".into(), json!(g));
                }
            }
            None => {
                summary.nodata += 1;
                props.insert("ratio".into(), Value::Null);
                props.insert("on_track".into(), Value::Null);
                props.insert("class".into(), json!(NODATA));
            }
        }
        out.push(json!({
            "type": "Feature",
            "geometry": feature.get("geometry").cloned().unwrap_or(Value::Null),
            "properties": props,
        }));
    }
    summary.features = out.len();
    let mut labels = breaks.labels();
    labels.push(NODATA.into());
    Ok((
        json!({"type": "FeatureCollection", "classes": labels, "features": out}),
        summary,
    ))
}
