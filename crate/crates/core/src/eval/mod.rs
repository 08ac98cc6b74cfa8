//! Scoring, rendering and the label-budget ablation protocol.

mod ablation;
mod metrics;
mod plot;

pub use ablation::{percentile, run_ablation, AblationCell, AblationConfig, AblationReport, AblationRun};
pub use crate::occ::Method;
pub use metrics::{
    confusion_map, f1, ndvi_delta, region_rates, save_png, MetricsRecord, NdviDelta, Polarity, RegionRate, RegionSpec,
    FN_COLOR, FP_COLOR, TN_COLOR, TP_COLOR,
};
pub use plot::{render_curves, CurveSeries};
