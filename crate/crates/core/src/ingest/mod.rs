//! Loading, validation and aggregation of village yield data.

mod pixels;
mod registry;
mod yields;

pub use pixels::{
    read_pixel_header, read_pixels_csv, write_pixels_binary, zonal_aggregate, zonal_aggregate_binary, PixelHeader,
    PixelRecord, ZonalAccumulator, ZonalStat, ZonalSummary, PIXEL_MAGIC, PIXEL_VERSION,
};
pub use registry::{VillageRecord, VillageRegistry, Zone};
pub use yields::{
    aggregate_annual, combine_seasons, load_observations, read_observations, write_observations, AnnualPoint,
    AnnualTable, AnnualYieldSeries, QualityReport, Season, SeasonalObservation,
};
