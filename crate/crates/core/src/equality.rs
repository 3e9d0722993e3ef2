//! Yield-decile cohorts fixed in a cohort year and the ratio between the top
//! and bottom cohorts over time.
//!
//! Bounds on the ratio are the 2.5th and 97.5th percentiles of every
//! top-member / bottom-member yield ratio, using linear interpolation between
//! closest ranks (type 7).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::AnnualTable;
use crate::stats;

pub const DECILES: u8 = 10;

/// Decile membership (1 = lowest, 10 = highest) fixed at `cohort_year`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortAssignment {
    pub cohort_year: i32,
    pub deciles: BTreeMap<String, u8>,
}

impl CohortAssignment {
    pub fn decile_of(&self, village_id: &str) -> Option<u8> {
        self.deciles.get(village_id).copied()
    }

    /// Members of `decile` in village-id order.
    pub fn members(&self, decile: u8) -> Vec<&str> {
        self.deciles
            .iter()
            .filter(|(_, &d)| d == decile)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn top(&self) -> Vec<&str> {
        self.members(DECILES)
    }

    pub fn bottom(&self) -> Vec<&str> {
        self.members(1)
    }
}

/// Splits villages into ten contiguous rank groups by yield, ties broken by
/// village id. Group sizes differ by at most one.
pub fn assign_cohorts<'a, I>(yields: I, cohort_year: i32) -> Result<CohortAssignment>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut ranked: Vec<(&str, f64)> = yields.into_iter().collect();
    if ranked.len() < DECILES as usize {
        return Err(Error::InsufficientVillages {
            found: ranked.len(),
            needed: DECILES as usize,
        });
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = ranked.len();
    let deciles = ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (id, _))| (id.to_string(), (rank * DECILES as usize / n) as u8 + 1))
        .collect();
    Ok(CohortAssignment { cohort_year, deciles })
}

/// Cohorts from the annual table's observations in `cohort_year`.
pub fn assign_cohorts_from_table(table: &AnnualTable, cohort_year: i32) -> Result<CohortAssignment> {
    assign_cohorts(
        table.year_points(cohort_year).map(|(id, p)| (id, p.yield_kg_ha)),
        cohort_year,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortCell {
    pub year: i32,
    pub decile: u8,
    /// Absent when no member has data in `year`.
    pub mean_yield: Option<f64>,
    pub members_present: usize,
    pub members_missing: usize,
    pub preliminary: bool,
}

/// Mean observed yield of each decile cohort for each requested year.
pub fn cohort_mean_series(assignment: &CohortAssignment, table: &AnnualTable, years: &[i32]) -> Vec<CohortCell> {
    let mut cells = Vec::with_capacity(years.len() * DECILES as usize);
    for &year in years {
        let preliminary = table.is_preliminary_year(year);
        for decile in 1..=DECILES {
            let members = assignment.members(decile);
            let values: Vec<f64> = members
                .iter()
                .filter_map(|id| table.get(id).and_then(|s| s.point(year)).map(|p| p.yield_kg_ha))
                .collect();
            cells.push(CohortCell {
                year,
                decile,
                mean_yield: stats::mean(&values),
                members_present: values.len(),
                members_missing: members.len() - values.len(),
                preliminary,
            });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub year: i32,
    pub top_mean: f64,
    pub bottom_mean: f64,
    pub ratio: f64,
    pub lo: f64,
    pub hi: f64,
    /// Pairs dropped because the bottom member's yield was not positive.
    pub excluded_pairs: u64,
    pub preliminary: bool,
}

/// Ratio of cohort means with pairwise 2.5/97.5 percentile bounds.
pub fn inequality_ratio(top: &[f64], bottom: &[f64], year: i32) -> Result<InequalityReport> {
    let (Some(top_mean), Some(bottom_mean)) = (stats::mean(top), stats::mean(bottom)) else {
        return Err(Error::InsufficientVillages { found: 0, needed: 1 });
    };
    let valid_bottom: Vec<f64> = bottom.iter().copied().filter(|&b| b > 0.0).collect();
    let excluded_pairs = ((bottom.len() - valid_bottom.len()) * top.len()) as u64;
    if valid_bottom.is_empty() || bottom_mean <= 0.0 {
        return Err(Error::NoValidPairs);
    }
    let mut pairs = Vec::with_capacity(top.len() * valid_bottom.len());
    for &t in top {
        pairs.extend(valid_bottom.iter().map(|&b| t / b));
    }
    let lo = stats::percentile_select(&mut pairs, 0.025).expect("pairs non-empty");
    let hi = stats::percentile_select(&mut pairs, 0.975).expect("pairs non-empty");
    Ok(InequalityReport {
        year,
        top_mean,
        bottom_mean,
        ratio: top_mean / bottom_mean,
        lo,
        hi,
        excluded_pairs,
        preliminary: false,
    })
}

/// Top/bottom cohort inequality in every year of the table.
pub fn inequality_series(assignment: &CohortAssignment, table: &AnnualTable) -> Vec<InequalityReport> {
    let gather = |ids: &[&str], year: i32| -> Vec<f64> {
        ids.iter()
            .filter_map(|id| table.get(id).and_then(|s| s.point(year)).map(|p| p.yield_kg_ha))
            .collect()
    };
    let (top, bottom) = (assignment.top(), assignment.bottom());
    table
        .years()
        .into_iter()
        .filter_map(|year| {
            inequality_ratio(&gather(&top, year), &gather(&bottom, year), year)
                .ok()
                .map(|mut r| {
                    r.preliminary = table.is_preliminary_year(year);
                    r
                })
        })
        .collect()
}

/// One-decimal presentation used in reports.
pub fn format_ratio(ratio: f64) -> String {
    format!("{ratio:.1}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{AnnualPoint, AnnualYieldSeries};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i:02}")).collect()
    }

    #[test]
    fn twenty_villages_two_per_decile() {
        let names = ids(20);
        let a = assign_cohorts(
            names
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), 100.0 * (20 - i) as f64)),
            2019,
        )
        .unwrap();
        for d in 1..=10 {
            assert_eq!(a.members(d).len(), 2);
        }
        // highest yield is v00
        assert_eq!(a.decile_of("v00"), Some(10));
        assert_eq!(a.decile_of("v19"), Some(1));
    }

    #[test]
    fn ten_villages_singleton_deciles() {
        let names = ids(10);
        let a = assign_cohorts(
            names
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), (i * 7 % 10) as f64)),
            2019,
        )
        .unwrap();
        for (i, id) in names.iter().enumerate() {
            assert_eq!(a.decile_of(id), Some((i * 7 % 10) as u8 + 1));
        }
    }

    #[test]
    fn ties_broken_by_id() {
        let names = ids(20);
        let a = assign_cohorts(names.iter().map(|id| (id.as_str(), 1000.0)), 2019).unwrap();
        assert_eq!(a.members(1), vec!["v00", "v01"]);
        assert_eq!(a.members(10), vec!["v18", "v19"]);
    }

    #[test]
    fn too_few_villages() {
        let names = ids(9);
        assert!(matches!(
            assign_cohorts(names.iter().map(|id| (id.as_str(), 1.0)), 2019),
            Err(Error::InsufficientVillages { found: 9, needed: 10 })
        ));
    }

    #[test]
    fn sizes_differ_by_at_most_one() {
        for n in 10..60 {
            let names = ids(n);
            let a = assign_cohorts(names.iter().enumerate().map(|(i, id)| (id.as_str(), i as f64)), 2019).unwrap();
            let sizes: Vec<usize> = (1..=10).map(|d| a.members(d).len()).collect();
            assert_eq!(sizes.iter().sum::<usize>(), n);
            assert!(
                sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
                "{n}: {sizes:?}"
            );
        }
    }

    type Point = (i32, f64, bool);

    fn table(rows: &[(&str, &[Point])]) -> AnnualTable {
        AnnualTable::from_series(rows.iter().map(|(id, pts)| {
            AnnualYieldSeries {
                village_id: id.to_string(),
                points: pts
                    .iter()
                    .map(|&(year, y, prelim)| AnnualPoint {
                        year,
                        yield_kg_ha: y,
                        area_ha: 1.0,
                        preliminary: prelim,
                        seasons: 2,
                    })
                    .collect(),
            }
        }))
        .unwrap()
    }

    #[test]
    fn cohort_means_track_fixed_members() {
        let mut rows: Vec<(String, Vec<Point>)> = Vec::new();
        for i in 0..20 {
            let base = 500.0 + 100.0 * i as f64;
            let mut pts = vec![(2019, base, false), (2024, 3000.0 - base, true)];
            if i != 0 {
                pts.insert(1, (2020, base + 50.0, false));
            }
            rows.push((format!("v{i:02}"), pts));
        }
        let borrowed: Vec<(&str, &[Point])> = rows.iter().map(|(id, p)| (id.as_str(), p.as_slice())).collect();
        let t = table(&borrowed);
        let a = assign_cohorts_from_table(&t, 2019).unwrap();
        let cells = cohort_mean_series(&a, &t, &[2019, 2020, 2024]);
        let cell = |y, d| cells.iter().find(|c| c.year == y && c.decile == d).unwrap();
        assert_eq!(cell(2019, 1).mean_yield, Some(550.0));
        // v00 missing in 2020
        assert_eq!(cell(2020, 1).mean_yield, Some(650.0));
        assert_eq!(cell(2020, 1).members_missing, 1);
        // 2024 reverses ranks but membership is fixed at 2019
        assert_eq!(cell(2024, 10).mean_yield, Some(3000.0 - 2350.0));
        assert!(cell(2024, 10).preliminary && !cell(2019, 10).preliminary);

        let series = inequality_series(&a, &t);
        assert_eq!(series.len(), 3);
        assert!(series[2].preliminary);
        assert_relative_eq!(series[0].ratio, 2350.0 / 550.0, epsilon = 1e-12);
    }

    #[test]
    fn headline_ratio_formats_to_one_decimal() {
        let r = inequality_ratio(&[2166.0], &[915.0], 2024).unwrap();
        assert_relative_eq!(r.ratio, 2.367, epsilon = 1e-3);
        assert_eq!(format_ratio(r.ratio), "2.4");
    }

    #[test]
    fn pairwise_bounds_small_case() {
        let r = inequality_ratio(&[2000.0, 2200.0], &[900.0, 1100.0], 2019).unwrap();
        assert_relative_eq!(r.ratio, 2.1, epsilon = 1e-12);
        assert_relative_eq!(r.lo, 1.831_818, epsilon = 1e-6);
        assert_relative_eq!(r.hi, 2.427_778, epsilon = 1e-6);
    }

    #[test]
    fn identical_cohorts() {
        let r = inequality_ratio(&[1000.0, 1000.0], &[1000.0, 1000.0], 2019).unwrap();
        assert_eq!((r.ratio, r.lo, r.hi), (1.0, 1.0, 1.0));
    }

    #[test]
    fn non_positive_bottom_members_excluded() {
        let r = inequality_ratio(&[2000.0, 3000.0], &[0.0, 1000.0], 2019).unwrap();
        assert_eq!(r.excluded_pairs, 2);
        assert_eq!(r.lo, 2.0 + 0.025 * 1.0);
        assert!(matches!(
            inequality_ratio(&[2000.0], &[0.0], 2019),
            Err(Error::NoValidPairs)
        ));
    }

    fn exhaustive_bounds(top: &[f64], bottom: &[f64]) -> (f64, f64) {
        let mut pairs: Vec<f64> = top.iter().flat_map(|t| bottom.iter().map(move |b| t / b)).collect();
        pairs.sort_by(f64::total_cmp);
        let interp = |p: f64| {
            let h = (pairs.len() - 1) as f64 * p;
            let k = h.floor() as usize;
            if k + 1 < pairs.len() {
                pairs[k] + (h - k as f64) * (pairs[k + 1] - pairs[k])
            } else {
                pairs[k]
            }
        };
        (interp(0.025), interp(0.975))
    }

    proptest! {
        #[test]
        fn bounds_match_enumeration(top in proptest::collection::vec(100.0..5000.0f64, 1..20),
                                   bottom in proptest::collection::vec(100.0..5000.0f64, 1..20)) {
            let r = inequality_ratio(&top, &bottom, 2019).unwrap();
            let (lo, hi) = exhaustive_bounds(&top, &bottom);
            prop_assert!((r.lo - lo).abs() <= 1e-12 * lo);
            prop_assert!((r.hi - hi).abs() <= 1e-12 * hi);
            prop_assert!(r.lo <= r.hi);
        }

        #[test]
        fn scale_invariant(top in proptest::collection::vec(100.0..5000.0f64, 1..10),
                           bottom in proptest::collection::vec(100.0..5000.0f64, 1..10),
                           c in 0.01..100.0f64) {
            let r = inequality_ratio(&top, &bottom, 2019).unwrap();
            let ts: Vec<f64> = top.iter().map(|v| v * c).collect();
            let bs: Vec<f64> = bottom.iter().map(|v| v * c).collect();
            let s = inequality_ratio(&ts, &bs, 2019).unwrap();
            prop_assert!((r.ratio - s.ratio).abs() <= 1e-9 * r.ratio);
            prop_assert!((r.lo - s.lo).abs() <= 1e-9 * r.lo);
            prop_assert!((r.hi - s.hi).abs() <= 1e-9 * r.hi);
        }

        #[test]
        fn singleton_cohorts_are_exact(a in 1.0..5000.0f64, b in 1.0..5000.0f64) {
            let r = inequality_ratio(&[a], &[b], 2019).unwrap();
            prop_assert_eq!((r.ratio, r.lo, r.hi), (a / b, a / b, a / b));
        }
    }
}
