//! The full pipeline over one annual table and engine configuration.

use serde::Serialize;

use crate::equality::{self, CohortAssignment, CohortCell, InequalityReport};
use crate::error::Result;
use crate::feasibility::{self, CeilingTable};
use crate::ingest::{AnnualTable, VillageRegistry};
use crate::scenario::{self, AnchorSet, EngineConfig, ScenarioKind, ScenarioOutcome};
use crate::trend::{self, Band, NationalTrajectory, NationalWeighting, TrackStatus, TrendSet};

#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: EngineConfig,
    pub trends: TrendSet,
    pub anchors: AnchorSet,
}

impl Analysis {
    pub fn new(table: &AnnualTable, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let trends = trend::fit_all(table, config.window());
        let anchors = AnchorSet::build(table, &trends, &config)?;
        Ok(Analysis {
            config,
            trends,
            anchors,
        })
    }

    /// Doubling ratios on the configured band, in id order.
    pub fn track_statuses(&self) -> Result<Vec<TrackStatus>> {
        let band = self.config.band();
        self.trends
            .models
            .values()
            .map(|m| trend::doubling_ratio(m, self.config.baseline_year, self.config.end_year, band))
            .collect()
    }

    pub fn track_statuses_on(&self, band: Band) -> Result<Vec<TrackStatus>> {
        self.trends
            .models
            .values()
            .map(|m| trend::doubling_ratio(m, self.config.baseline_year, self.config.end_year, band))
            .collect()
    }

    pub fn scenario(&self, kind: ScenarioKind) -> Result<ScenarioOutcome> {
        scenario::run(kind, &self.anchors)
    }

    /// Scenario outcome after capping at zone ceilings.
    pub fn capped_scenario(
        &self,
        kind: ScenarioKind,
        ceilings: &CeilingTable,
        registry: &VillageRegistry,
    ) -> Result<ScenarioOutcome> {
        let outcome = self.scenario(kind)?;
        feasibility::apply_ceiling(&outcome, &self.anchors, ceilings, registry)
    }

    pub fn ceilings(&self, table: &AnnualTable, registry: &VillageRegistry) -> Result<CeilingTable> {
        feasibility::compute_ceilings(table, registry, (self.config.window_first, self.config.window_last))
    }

    /// Every preset scenario, in preset order.
    pub fn presets(&self) -> Result<Vec<ScenarioOutcome>> {
        ScenarioKind::PRESETS.iter().map(|&k| self.scenario(k)).collect()
    }

    pub fn trajectory(&self, table: &AnnualTable, weighting: NationalWeighting) -> Result<NationalTrajectory> {
        trend::national_trajectory(
            table,
            self.config.fao_baseline,
            self.config.baseline_year,
            self.config.end_year,
            weighting,
        )
    }
}

/// Cohort assignment plus the cohort-mean and inequality series derived
/// from it.
#[derive(Debug, Clone, Serialize)]
pub struct EqualityProducts {
    pub cohorts: CohortAssignment,
    pub cells: Vec<CohortCell>,
    pub inequality: Vec<InequalityReport>,
}

pub fn equality_products(table: &AnnualTable, cohort_year: i32) -> Result<EqualityProducts> {
    let cohorts = equality::assign_cohorts_from_table(table, cohort_year)?;
    let cells = equality::cohort_mean_series(&cohorts, table, &table.years());
    let inequality = equality::inequality_series(&cohorts, table);
    Ok(EqualityProducts {
        cohorts,
        cells,
        inequality,
    })
}
