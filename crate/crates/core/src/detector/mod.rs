//! The two-stream detection network: anchors and target assignment, the
//! backbone/proposal/fusion graph, losses, proposal filtering, and the
//! inference pipeline.

pub mod anchors;
pub mod assign;
pub mod boxes;
pub mod detect;
pub mod graph;
pub mod loss;
pub mod model;
pub mod proposals;

pub use anchors::{generate_anchors, AnchorSet};
pub use assign::{
    assign_anchor_labels, match_and_sample_rois, AnchorAssignment, AnchorLabel, AssignConfig,
    RoiSample, RoiSampleConfig,
};
pub use boxes::{decode_box_deltas, encode_box_deltas, enlarge_box, iou, nms, BoxF, Detection};
pub use detect::{detect, resize_dims, DetectSettings};
pub use loss::{rpn_loss, total_loss, LossBreakdown, LossNodes};
pub use model::{
    BackboneConfig, ClassMode, FusionKind, ModelConfig, RpnStream, StreamMode, TwoStreamModel,
};
pub use proposals::{propose_rois, ProposalConfig};
