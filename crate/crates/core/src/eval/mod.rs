//! Metrics, the synthetic route generator, ablation runners and plots.

mod ablation;
mod metrics;
mod plots;
mod synthetic;

pub use ablation::{
    config_digest, median, Ablation, EvalReport, SelectionStrategy, SweepKind, SweepReport, Trial, ACTION_ITERATIONS,
    PROPORTIONS,
};
pub use metrics::{mae, Dataset, EvaluationPlan, PlanPredictor};
pub use plots::{plot_convergence, plot_sweep};
pub use synthetic::{generate_synthetic_route, journeys_from_arrivals, rectified_normal_mean, SyntheticRouteConfig};
