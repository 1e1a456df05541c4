//! Network joining: how a cluster root picks its master.

mod baseline;
mod scored;

pub use baseline::{baseline_select, HeardJoinMe, JoinDecision};
pub use scored::{
    filter_candidates, make_joinme_ack, score_candidate, select_parent, CandidateInfo,
    FilterThresholds, ScoreWeights, SCORE_TIE_TOLERANCE,
};
