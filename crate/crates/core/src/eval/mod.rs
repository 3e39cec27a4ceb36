//! Rotated-box IoU, average precision and report tables.

pub mod ap;
pub mod iou;
pub mod report;

pub use ap::{average_precision, interpolated_ap, match_frame, IouKind};
pub use iou::{iou_3d, rotated_iou_bev};
pub use report::{build_report, EvalFrame, EvalReport};
