//! Scored parent selection.
//!
//! A joining node builds one [`CandidateInfo`] per neighbor from its status
//! broadcasts, drops unsuitable neighbors, scores the rest and asks for the
//! best one inside the biggest cluster through the ACK field of its joinMe
//! packet.
//!
//! Each score term is normalised to `[0, 1]` with 1 being the preferred end:
//!
//! | input | term |
//! |-------|------|
//! | slaves `m` | `1 - min(m, m_max) / m_max` |
//! | hops `h` | `1 / (1 + h)` |
//! | buffer `b` | `1 - min(b, b_max) / b_max` |
//! | connection interval | `1 - clamp((ci - ci_min) / (ci_max - ci_min))` |
//! | link RSSI, master-link RSSI | `clamp((r - rssi_lo) / (rssi_hi - rssi_lo))` |
//!
//! and the score is the weighted sum. A candidate without a master link
//! (a cluster root) gets the full master-link term.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ClusterId, JoinMePacket, NodeId, NodeState, StatusAdvert};

/// Scores closer than this fraction of the weight sum count as tied.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInfo {
    pub id: NodeId,
    pub cluster_id: ClusterId,
    pub cluster_size: u32,
    pub m: u32,
    /// `u32::MAX` when the candidate has no route to the sink.
    pub h: u32,
    pub b: u32,
    pub ci_ms: f64,
    pub rl_dbm: f64,
    pub rn_dbm: Option<f64>,
    pub free_out: u32,
    pub children: Vec<NodeId>,
}

impl CandidateInfo {
    pub fn from_advert(advert: &StatusAdvert, rl_dbm: f64) -> Self {
        CandidateInfo {
            id: advert.sender,
            cluster_id: advert.cluster_id,
            cluster_size: advert.cluster_size,
            m: advert.m_slaves,
            h: advert.h_hops.unwrap_or(u32::MAX),
            b: advert.b_occupancy,
            ci_ms: advert.ci_ms,
            rl_dbm,
            rn_dbm: advert.rn_dbm,
            free_out: advert.free_out,
            children: advert.children.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScoreWeights {
    pub w_m: f64,
    pub w_h: f64,
    pub w_b: f64,
    pub w_ci: f64,
    pub w_rl: f64,
    pub w_rn: f64,
    pub m_max: f64,
    pub b_max: f64,
    pub ci_min_ms: f64,
    pub ci_max_ms: f64,
    pub rssi_lo: f64,
    pub rssi_hi: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            w_m: 0.10,
            w_h: 0.20,
            w_b: 0.25,
            w_ci: 0.20,
            w_rl: 0.15,
            w_rn: 0.10,
            m_max: 3.0,
            b_max: 30.0,
            ci_min_ms: 7.5,
            ci_max_ms: 400.0,
            rssi_lo: -90.0,
            rssi_hi: -50.0,
        }
    }
}

impl ScoreWeights {
    /// Weights in `w_m, w_h, w_b, w_ci, w_rl, w_rn` order.
    pub fn weights(&self) -> [f64; 6] {
        [
            self.w_m, self.w_h, self.w_b, self.w_ci, self.w_rl, self.w_rn,
        ]
    }

    /// Replace the six weights, keeping the normalisation bounds.
    pub fn with_weights(self, w: [f64; 6]) -> Self {
        ScoreWeights {
            w_m: w[0],
            w_h: w[1],
            w_b: w[2],
            w_ci: w[3],
            w_rl: w[4],
            w_rn: w[5],
            ..self
        }
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights().iter().sum()
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::scenario(
                "weights",
                "every weight must be finite and >= 0",
            ));
        }
        if self.weight_sum() <= 0.0 {
            return Err(Error::scenario("weights", "weights must not all be zero"));
        }
        if !(self.m_max > 0.0) {
            return Err(Error::scenario("weights.m_max", "must be > 0"));
        }
        if !(self.b_max > 0.0) {
            return Err(Error::scenario("weights.b_max", "must be > 0"));
        }
        if !(self.ci_min_ms < self.ci_max_ms) {
            return Err(Error::scenario(
                "weights.ci_min_ms",
                "must be below ci_max_ms",
            ));
        }
        if !(self.rssi_lo < self.rssi_hi) {
            return Err(Error::scenario("weights.rssi_lo", "must be below rssi_hi"));
        }
        Ok(())
    }

    fn rssi_term(&self, rssi: f64) -> f64 {
        clamp01((rssi - self.rssi_lo) / (self.rssi_hi - self.rssi_lo))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    pub rl_min_dbm: f64,
    /// Buffer occupancy from which a candidate hands over to a heard child.
    pub b_fair: u32,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            rl_min_dbm: -85.0,
            b_fair: 1,
        }
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Drop neighbors that cannot or should not become the parent.
///
/// Full neighbors and weak links go first. A neighbor whose buffer is not
/// empty (`b >= b_fair`) is then dropped in favor of its own children, but
/// only if one of those children is still in the list. Output is sorted by
/// id. Expects at most one entry per neighbor.
pub fn filter_candidates(
    cands: &[CandidateInfo],
    thresholds: FilterThresholds,
) -> Vec<CandidateInfo> {
    debug_assert!(
        {
            let ids: BTreeSet<_> = cands.iter().map(|c| c.id).collect();
            ids.len() == cands.len()
        },
        "candidates must be deduplicated by id"
    );
    let usable: Vec<&CandidateInfo> = cands
        .iter()
        .filter(|c| c.free_out >= 1 && c.rl_dbm >= thresholds.rl_min_dbm)
        .collect();
    let usable_ids: BTreeSet<NodeId> = usable.iter().map(|c| c.id).collect();

    let mut out: Vec<CandidateInfo> = usable
        .into_iter()
        .filter(|c| {
            let busy = c.b >= thresholds.b_fair;
            !(busy && c.children.iter().any(|ch| usable_ids.contains(ch)))
        })
        .cloned()
        .collect();
    out.sort_by_key(|c| c.id);
    out
}

pub fn score_candidate(c: &CandidateInfo, w: &ScoreWeights) -> f64 {
    let m = 1.0 - f64::from(c.m).min(w.m_max) / w.m_max;
    let h = 1.0 / (1.0 + f64::from(c.h));
    let b = 1.0 - f64::from(c.b).min(w.b_max) / w.b_max;
    let ci = 1.0 - clamp01((c.ci_ms - w.ci_min_ms) / (w.ci_max_ms - w.ci_min_ms));
    let rl = w.rssi_term(c.rl_dbm);
    let rn = c.rn_dbm.map_or(1.0, |r| w.rssi_term(r));
    w.w_m * m + w.w_h * h + w.w_b * b + w.w_ci * ci + w.w_rl * rl + w.w_rn * rn
}

/// Highest-scored candidate inside the biggest cluster present.
///
/// Scores within [`SCORE_TIE_TOLERANCE`] of the best (relative to the
/// weight sum) are ties, broken by stronger link RSSI, then lower id.
pub fn select_parent(filtered: &[CandidateInfo], w: &ScoreWeights) -> Option<NodeId> {
    let biggest = filtered.iter().map(|c| c.cluster_size).max()?;
    let pool: Vec<(&CandidateInfo, f64)> = filtered
        .iter()
        .filter(|c| c.cluster_size == biggest)
        .map(|c| (c, score_candidate(c, w)))
        .collect();
    let best = pool
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let floor = best - SCORE_TIE_TOLERANCE * w.weight_sum();
    pool.into_iter()
        .filter(|(_, s)| *s >= floor)
        .max_by(|(a, _), (b, _)| a.rl_dbm.total_cmp(&b.rl_dbm).then_with(|| b.id.cmp(&a.id)))
        .map(|(c, _)| c.id)
}

/// joinMe packet naming `parent` in its ACK field, or nothing when no
/// parent was selected this round.
pub fn make_joinme_ack(me: &NodeState, parent: Option<NodeId>) -> Option<JoinMePacket> {
    parent.map(|p| JoinMePacket {
        ack_field: Some(p),
        ..JoinMePacket::from_node(me)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Position;
    use alloc::vec;

    fn cand(id: u32) -> CandidateInfo {
        CandidateInfo {
            id: NodeId(id),
            cluster_id: ClusterId(u32::MAX),
            cluster_size: 10,
            m: 0,
            h: 1,
            b: 0,
            ci_ms: 50.0,
            rl_dbm: -70.0,
            rn_dbm: Some(-70.0),
            free_out: 2,
            children: vec![],
        }
    }

    fn ids(cs: &[CandidateInfo]) -> Vec<u32> {
        cs.iter().map(|c| c.id.0).collect()
    }

    #[test]
    fn busy_parent_hands_over_to_heard_child() {
        let mut p = cand(3);
        p.b = 5;
        p.children = vec![NodeId(8)];
        let c = cand(8);
        let out = filter_candidates(&[p, c], FilterThresholds::default());
        assert_eq!(ids(&out), vec![8]);
    }

    #[test]
    fn busy_candidate_without_heard_children_is_kept() {
        let mut p = cand(3);
        p.b = 5;
        p.children = vec![NodeId(8)];
        let out = filter_candidates(&[p], FilterThresholds::default());
        assert_eq!(ids(&out), vec![3]);
    }

    #[test]
    fn handover_needs_the_child_to_survive_slot_and_rssi_rules() {
        let mut p = cand(3);
        p.b = 5;
        p.children = vec![NodeId(8), NodeId(9)];
        let mut full = cand(8);
        full.free_out = 0;
        let mut weak = cand(9);
        weak.rl_dbm = -88.0;
        let out = filter_candidates(&[weak, full, p], FilterThresholds::default());
        assert_eq!(ids(&out), vec![3]);
    }

    #[test]
    fn full_and_weak_candidates_dropped() {
        let mut full = cand(2);
        full.free_out = 0;
        let mut weak = cand(4);
        weak.rl_dbm = -85.5;
        let edge = {
            let mut c = cand(6);
            c.rl_dbm = -85.0;
            c
        };
        let out = filter_candidates(&[full, cand(5), weak, edge], FilterThresholds::default());
        assert_eq!(ids(&out), vec![5, 6]);
    }

    #[test]
    fn idle_parent_is_not_redirected() {
        let mut p = cand(3);
        p.children = vec![NodeId(8)];
        let out = filter_candidates(&[cand(8), p], FilterThresholds::default());
        assert_eq!(ids(&out), vec![3, 8]);
    }

    #[test]
    fn perfect_candidate_scores_one() {
        let c = CandidateInfo {
            m: 0,
            h: 0,
            b: 0,
            ci_ms: 7.5,
            rl_dbm: -50.0,
            rn_dbm: Some(-50.0),
            ..cand(1)
        };
        assert!((score_candidate(&c, &ScoreWeights::default()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn worked_score_example() {
        // 0.10 + 0.10 + 0.25 + 0.2*(1 - 92.5/392.5) + 0.15*0.75 + 0.10*0.875
        let c = CandidateInfo {
            m: 0,
            h: 1,
            b: 0,
            ci_ms: 100.0,
            rl_dbm: -60.0,
            rn_dbm: Some(-55.0),
            ..cand(1)
        };
        let s = score_candidate(&c, &ScoreWeights::default());
        assert!((s - 0.802_866_242).abs() < 1e-6, "{s}");
    }

    #[test]
    fn full_buffer_costs_exactly_the_buffer_weight() {
        let w = ScoreWeights::default();
        let c = CandidateInfo {
            m: 0,
            h: 0,
            b: 30,
            ci_ms: 7.5,
            rl_dbm: -50.0,
            rn_dbm: None,
            ..cand(1)
        };
        assert!((score_candidate(&c, &w) - (1.0 - w.w_b)).abs() < 1e-12);
    }

    #[test]
    fn biggest_cluster_beats_better_score() {
        let w = ScoreWeights::default();
        let mut a = cand(2);
        a.cluster_size = 6;
        a.b = 25;
        a.ci_ms = 400.0;
        let mut b = cand(3);
        b.cluster_size = 4;
        assert!(score_candidate(&b, &w) > score_candidate(&a, &w));
        assert_eq!(select_parent(&[a, b], &w), Some(NodeId(2)));
    }

    #[test]
    fn empty_selection_is_absent() {
        assert_eq!(select_parent(&[], &ScoreWeights::default()), None);
    }

    #[test]
    fn equal_scores_prefer_stronger_link_then_lower_id() {
        // rl weight zero so the link only matters as a tie-break.
        let w = ScoreWeights {
            w_rl: 0.0,
            ..ScoreWeights::default()
        };
        let mut a = cand(4);
        a.rl_dbm = -70.0;
        let mut b = cand(9);
        b.rl_dbm = -60.0;
        assert_eq!(select_parent(&[a.clone(), b], &w), Some(NodeId(9)));
        let c = cand(2);
        assert_eq!(select_parent(&[a, c], &w), Some(NodeId(2)));
    }

    #[test]
    fn ack_names_the_parent() {
        let me = NodeState::new(NodeId(12), Position::default(), 50.0);
        let pkt = make_joinme_ack(&me, Some(NodeId(7))).unwrap();
        assert_eq!(pkt.ack_field, Some(NodeId(7)));
        assert!(pkt.addressed_to(NodeId(7)));
        assert!(!pkt.addressed_to(NodeId(4)));
        assert_eq!(make_joinme_ack(&me, None), None);
    }

    #[test]
    fn weight_validation() {
        assert!(ScoreWeights::default().validate().is_ok());
        assert!(ScoreWeights::default()
            .with_weights([0.0; 6])
            .validate()
            .is_err());
        assert!(ScoreWeights::default()
            .with_weights([1.0, -0.1, 0.0, 0.0, 0.0, 0.0])
            .validate()
            .is_err());
        let w = ScoreWeights {
            ci_min_ms: 500.0,
            ..ScoreWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
