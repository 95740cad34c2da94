//! Sanity metrics, evaluation reports and plots.

mod evaluate;
mod metrics;
mod plot;

pub use evaluate::{
    evaluate, masked_accuracy_counts, Aggregate, EvalOptions, ImageMetrics, MetricReport, SrSource,
};
pub use metrics::{crop_to_multiple, psnr, ssim, ssim_rgb, PSNR_CAP_DB};
pub use plot::plot_loss_curves;
