mod bradley_terry;
mod metrics;
mod report;

pub use bradley_terry::{bt_scores, parse_pairwise_csv, BtFit, PairwiseCounts};
pub use metrics::{mean_iou, mse, psnr, psnr_from_mse, IouScores, PSNR_CAP};
pub use report::{evaluate_dataset, evaluate_pair, evaluate_pairs, harmonize, EvalReport, EvalRow, REPORT_HEADER};
