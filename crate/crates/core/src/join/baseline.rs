//! Reference cluster-merging join: the smaller cluster joins the bigger one,
//! with no regard for the quality of the parent it lands on.

use crate::model::{JoinMePacket, NodeId, NodeState};

/// A joinMe packet together with the RSSI it was received at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeardJoinMe {
    pub packet: JoinMePacket,
    pub rl_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinDecision {
    ConnectAsChild(NodeId),
    /// Nothing eligible this window; rescan.
    Wait,
    /// The node is not looking for a master (it already has one, or it is
    /// the sink).
    None,
}

/// Pick a master among joinMe packets heard during one discovery window.
///
/// Eligible senders have a free slave slot and belong to a different
/// cluster that is bigger than ours, or equally big with a higher cluster
/// id. Among the biggest eligible cluster the strongest link wins, then the
/// lowest sender id.
pub fn baseline_select(adverts: &[HeardJoinMe], me: &NodeState) -> JoinDecision {
    if me.master.is_some() || me.id == NodeId::SINK {
        return JoinDecision::None;
    }
    let eligible = |h: &&HeardJoinMe| {
        let p = &h.packet;
        p.sender != me.id
            && p.free_out >= 1
            && p.cluster_id != me.cluster_id
            && (p.cluster_size > me.cluster_size
                || (p.cluster_size == me.cluster_size && p.cluster_id > me.cluster_id))
    };
    let Some(biggest) = adverts
        .iter()
        .filter(eligible)
        .map(|h| h.packet.cluster_size)
        .max()
    else {
        return JoinDecision::Wait;
    };
    adverts
        .iter()
        .filter(eligible)
        .filter(|h| h.packet.cluster_size == biggest)
        .max_by(|a, b| {
            a.rl_dbm
                .total_cmp(&b.rl_dbm)
                .then_with(|| b.packet.sender.cmp(&a.packet.sender))
        })
        .map_or(JoinDecision::Wait, |h| {
            JoinDecision::ConnectAsChild(h.packet.sender)
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Position;
    use crate::model::ClusterId;
    use alloc::vec;
    use alloc::vec::Vec;

    fn me(id: u32) -> NodeState {
        NodeState::new(NodeId(id), Position::default(), 100.0)
    }

    fn heard(sender: u32, cluster: u32, size: u32, free_out: u32, rl: f64) -> HeardJoinMe {
        HeardJoinMe {
            packet: JoinMePacket {
                sender: NodeId(sender),
                cluster_id: ClusterId(cluster),
                cluster_size: size,
                free_in: 0,
                free_out,
                ack_field: None,
            },
            rl_dbm: rl,
        }
    }

    #[test]
    fn joins_the_bigger_cluster() {
        let adverts = [heard(4, 40, 3, 2, -50.0), heard(5, 50, 5, 1, -80.0)];
        assert_eq!(
            baseline_select(&adverts, &me(20)),
            JoinDecision::ConnectAsChild(NodeId(5))
        );
    }

    #[test]
    fn nothing_heard_waits() {
        assert_eq!(baseline_select(&[], &me(20)), JoinDecision::Wait);
    }

    #[test]
    fn strongest_link_within_biggest_cluster() {
        let adverts = [heard(3, 50, 5, 1, -80.0), heard(7, 50, 5, 1, -60.0)];
        assert_eq!(
            baseline_select(&adverts, &me(20)),
            JoinDecision::ConnectAsChild(NodeId(7))
        );
        let tied = [heard(7, 50, 5, 1, -60.0), heard(3, 50, 5, 1, -60.0)];
        assert_eq!(
            baseline_select(&tied, &me(20)),
            JoinDecision::ConnectAsChild(NodeId(3))
        );
    }

    #[test]
    fn full_senders_and_smaller_clusters_ignored() {
        let mut m = me(20);
        m.cluster_size = 4;
        let adverts: Vec<_> = vec![heard(3, 50, 9, 0, -40.0), heard(4, 60, 2, 3, -40.0)];
        assert_eq!(baseline_select(&adverts, &m), JoinDecision::Wait);
    }

    #[test]
    fn equal_sizes_lower_cluster_joins_higher() {
        let lower = me(2);
        let higher = me(9);
        assert_eq!(
            baseline_select(&[heard(9, 9, 1, 3, -70.0)], &lower),
            JoinDecision::ConnectAsChild(NodeId(9))
        );
        assert_eq!(
            baseline_select(&[heard(2, 2, 1, 3, -70.0)], &higher),
            JoinDecision::Wait
        );
    }

    #[test]
    fn sink_and_attached_nodes_do_not_seek() {
        let adverts = [heard(5, 50, 5, 1, -60.0)];
        assert_eq!(baseline_select(&adverts, &me(1)), JoinDecision::None);
        let mut attached = me(8);
        attached.master = Some(NodeId(3));
        assert_eq!(baseline_select(&adverts, &attached), JoinDecision::None);
    }
}
