//! Agro-ecological yield ceilings: the highest annual village yield observed
//! in each zone caps projected end-year yields.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{AnnualTable, VillageRegistry};
use crate::scenario::{self, AnchorSet, ScenarioOutcome, VillageOutcome};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CeilingTable {
    pub ceilings: BTreeMap<String, f64>,
    /// Inclusive observation window the maxima were taken over.
    pub window: (i32, i32),
}

impl CeilingTable {
    pub fn get(&self, aez_id: &str) -> Option<f64> {
        self.ceilings.get(aez_id).copied()
    }

    pub fn max(&self) -> Option<f64> {
        self.ceilings.values().copied().max_by(f64::total_cmp)
    }
}

/// Maximum observed (non-preliminary) annual village yield per zone.
pub fn compute_ceilings(table: &AnnualTable, registry: &VillageRegistry, window: (i32, i32)) -> Result<CeilingTable> {
    if window.0 > window.1 {
        return Err(Error::Config("ceiling window is empty".into()));
    }
    let mut maxima: BTreeMap<&str, f64> = BTreeMap::new();
    for series in table.iter() {
        let Some(village) = registry.get(&series.village_id) else {
            return Err(Error::UnknownVillage(series.village_id.clone()));
        };
        for p in &series.points {
            if p.year < window.0 || p.year > window.1 || p.preliminary {
                continue;
            }
            let slot = maxima.entry(village.aez_id.as_str()).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(p.yield_kg_ha);
        }
    }
    let mut ceilings = BTreeMap::new();
    for zone in registry.zones() {
        match maxima.get(zone.aez_id.as_str()) {
            Some(&c) if c > 0.0 => {
                ceilings.insert(zone.aez_id.clone(), c);
            }
            _ => return Err(Error::EmptyZone(zone.aez_id.clone())),
        }
    }
    Ok(CeilingTable { ceilings, window })
}

/// Caps end-year yields at each village's zone ceiling and recomputes every
/// metric. Growth becomes the effective post-cap rate.
///
/// When the mean of the villages' ceilings is below the national doubling
/// goal, no horizon can meet it and additional years are infinite.
pub fn apply_ceiling(
    outcome: &ScenarioOutcome,
    set: &AnchorSet,
    ceilings: &CeilingTable,
    registry: &VillageRegistry,
) -> Result<ScenarioOutcome> {
    let horizon = set.config.horizon();
    let end_year = set.config.end_year;
    let mut per_village = Vec::with_capacity(outcome.per_village.len());
    let mut village_ceilings = Vec::with_capacity(outcome.per_village.len());
    for (v, anchor) in outcome.per_village.iter().zip(&set.anchors) {
        debug_assert_eq!(v.village_id, anchor.village_id);
        let zone = registry
            .zone_of(&v.village_id)
            .ok_or_else(|| Error::UnknownVillage(v.village_id.clone()))?;
        let ceiling = ceilings
            .get(&zone.aez_id)
            .ok_or_else(|| Error::EmptyZone(zone.aez_id.clone()))?;
        village_ceilings.push(ceiling);
        // observed history is never censored
        let projected = end_year > anchor.last_observed;
        let capped = projected && v.y_end > ceiling;
        let y_end = if capped { ceiling } else { v.y_end };
        let ratio = y_end / v.y_baseline;
        per_village.push(VillageOutcome {
            y_end,
            growth: if capped {
                (y_end - v.y_pivot) / horizon
            } else {
                v.growth
            },
            ratio,
            on_track: ratio >= 2.0,
            capped,
            ..v.clone()
        });
    }
    let mean_ceiling = stats::mean(&village_ceilings).unwrap_or(0.0);
    let mean_baseline = stats::mean_iter(per_village.iter().map(|v| v.y_baseline)).unwrap_or(0.0);
    let unreachable = mean_ceiling < 2.0 * mean_baseline;
    scenario::summarize(&outcome.scenario, set, per_village, outcome.target, true, unreachable)
}
