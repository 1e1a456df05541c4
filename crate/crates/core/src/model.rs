//! Network state: nodes, clusters, master/slave tree links, buffers and the
//! packets exchanged while joining.
//!
//! Every cluster is a tree over master/slave links whose root is the only
//! member without a master. The sink is always the root of its cluster, so
//! `hops_to_sink` is defined exactly for the members of the sink's cluster.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::channel::Position;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct NodeId(pub u32);

impl NodeId {
    /// Reserved id of the sink.
    pub const SINK: NodeId = NodeId(1);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterId(pub u32);

impl ClusterId {
    /// Initial cluster id of a lone node.
    ///
    /// The sink's cluster takes the largest id so that it wins the
    /// equal-size tie-break ("lower id joins higher").
    pub fn initial(node: NodeId) -> ClusterId {
        if node == NodeId::SINK {
            ClusterId(u32::MAX)
        } else {
            ClusterId(node.0)
        }
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataPacket {
    pub seq: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub created_at_us: u64,
    pub hops_traversed: u32,
}

impl DataPacket {
    pub fn created_at_ms(&self) -> f64 {
        self.created_at_us as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub pos: Position,
    pub cluster_id: ClusterId,
    pub cluster_size: u32,
    pub master: Option<NodeId>,
    pub slaves: Vec<NodeId>,
    /// `None` outside the sink's cluster.
    pub hops_to_sink: Option<u32>,
    pub buffer: VecDeque<DataPacket>,
    pub b_max: usize,
    pub ci_ms: f64,
    pub slave_capacity: u32,
    pub traffic_rate_pps: f64,
}

impl NodeState {
    /// A lone node forming its own cluster.
    pub fn new(id: NodeId, pos: Position, ci_ms: f64) -> Self {
        NodeState {
            id,
            pos,
            cluster_id: ClusterId::initial(id),
            cluster_size: 1,
            master: None,
            slaves: Vec::new(),
            hops_to_sink: (id == NodeId::SINK).then_some(0),
            buffer: VecDeque::new(),
            b_max: 30,
            ci_ms,
            slave_capacity: 3,
            traffic_rate_pps: 0.0,
        }
    }

    pub fn free_out(&self) -> u32 {
        self.slave_capacity.saturating_sub(self.slaves.len() as u32)
    }

    /// Free master slot. The sink never takes a master.
    pub fn free_in(&self) -> u32 {
        u32::from(self.master.is_none() && self.id != NodeId::SINK)
    }

    pub fn is_root(&self) -> bool {
        self.master.is_none()
    }

    pub fn buffer_full(&self) -> bool {
        self.buffer.len() >= self.b_max
    }
}

/// Periodic status broadcast carrying the scoring inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusAdvert {
    pub sender: NodeId,
    pub cluster_id: ClusterId,
    pub cluster_size: u32,
    pub m_slaves: u32,
    /// `None` when the sender is not connected to the sink.
    pub h_hops: Option<u32>,
    pub b_occupancy: u32,
    pub ci_ms: f64,
    /// RSSI of the sender's link to its master; absent for roots.
    pub rn_dbm: Option<f64>,
    pub free_out: u32,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinMePacket {
    pub sender: NodeId,
    pub cluster_id: ClusterId,
    pub cluster_size: u32,
    pub free_in: u32,
    pub free_out: u32,
    /// Node the sender explicitly requests as its master.
    pub ack_field: Option<NodeId>,
}

impl JoinMePacket {
    pub fn from_node(node: &NodeState) -> Self {
        JoinMePacket {
            sender: node.id,
            cluster_id: node.cluster_id,
            cluster_size: node.cluster_size,
            free_in: node.free_in(),
            free_out: node.free_out(),
            ack_field: None,
        }
    }

    /// Whether `receiver` may answer this packet with a connection
    /// handshake. A packet with an ACK field is only answered by the node
    /// it names.
    pub fn addressed_to(&self, receiver: NodeId) -> bool {
        receiver != self.sender && self.ack_field.is_none_or(|ack| ack == receiver)
    }
}

/// Snapshot of `node` as a status message. `rn_measured` is dropped for
/// roots, which have no master link.
pub fn make_status_advert(node: &NodeState, rn_measured: Option<f64>) -> StatusAdvert {
    StatusAdvert {
        sender: node.id,
        cluster_id: node.cluster_id,
        cluster_size: node.cluster_size,
        m_slaves: node.slaves.len() as u32,
        h_hops: node.hops_to_sink,
        b_occupancy: node.buffer.len() as u32,
        ci_ms: node.ci_ms,
        rn_dbm: node.master.and(rn_measured),
        free_out: node.free_out(),
        children: node.slaves.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: BTreeMap<NodeId, NodeState>,
}

impl Network {
    pub fn new(nodes: impl IntoIterator<Item = NodeState>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for node in nodes {
            let id = node.id;
            if map.insert(id, node).is_some() {
                return Err(Error::InvalidInput(format!("duplicate node id {id}")));
            }
        }
        Ok(Network { nodes: map })
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeState> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut NodeState> {
        self.nodes.get_mut(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn get(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn in_sink_cluster(&self, id: NodeId) -> bool {
        match (self.get(id), self.get(NodeId::SINK)) {
            (Some(n), Some(sink)) => n.cluster_id == sink.cluster_id,
            _ => false,
        }
    }

    /// Connect the root `child` (and its whole cluster) below `parent`.
    pub fn attach(&mut self, child: NodeId, parent: NodeId) -> Result<()> {
        if child == parent {
            return Err(Error::Topology(format!(
                "node {child} cannot be its own master"
            )));
        }
        let (child_cluster, child_size) = {
            let c = self.node(child)?;
            if child == NodeId::SINK {
                return Err(Error::Topology("the sink never takes a master".into()));
            }
            if !c.is_root() {
                return Err(Error::Topology(format!(
                    "node {child} already has a master"
                )));
            }
            (c.cluster_id, c.cluster_size)
        };
        let (parent_cluster, parent_size, parent_hops) = {
            let p = self.node(parent)?;
            if p.cluster_id == child_cluster {
                return Err(Error::Topology(format!(
                    "attaching {child} below {parent} would close a cycle"
                )));
            }
            if p.free_out() == 0 {
                return Err(Error::SlotExhausted(parent));
            }
            (p.cluster_id, p.cluster_size, p.hops_to_sink)
        };

        self.node_mut(child)?.master = Some(parent);
        self.node_mut(parent)?.slaves.push(child);

        let merged = child_size + parent_size;
        for node in self.nodes.values_mut() {
            if node.cluster_id == child_cluster {
                node.cluster_id = parent_cluster;
                node.cluster_size = merged;
            } else if node.cluster_id == parent_cluster {
                node.cluster_size = merged;
            }
        }

        // Depth-first relabel of the absorbed subtree.
        let mut stack = alloc::vec![(child, parent_hops.map(|h| h + 1))];
        while let Some((id, hops)) = stack.pop() {
            let node = self.node_mut(id)?;
            node.hops_to_sink = hops;
            for &s in &node.slaves {
                stack.push((s, hops.map(|h| h + 1)));
            }
        }
        Ok(())
    }

    /// Master chain from `id` up to its cluster root, both included.
    pub fn path_to_root(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let mut path = alloc::vec![id];
        let mut cur = self.node(id)?;
        while let Some(m) = cur.master {
            if path.len() > self.nodes.len() {
                return Err(Error::Topology(format!("master chain from {id} loops")));
            }
            path.push(m);
            cur = self.node(m)?;
        }
        Ok(path)
    }

    /// Master chain from `id` to the sink (both included), or `None` when
    /// `id` is outside the sink's cluster.
    pub fn path_to_sink(&self, id: NodeId) -> Result<Option<Vec<NodeId>>> {
        let path = self.path_to_root(id)?;
        Ok((path.last() == Some(&NodeId::SINK)).then_some(path))
    }

    /// Checks every structural invariant, returning a description of the
    /// first violation.
    pub fn check_invariants(&self) -> core::result::Result<(), String> {
        let mut members: BTreeMap<ClusterId, u32> = BTreeMap::new();
        for n in self.nodes.values() {
            *members.entry(n.cluster_id).or_default() += 1;
        }
        let sink_cluster = self.get(NodeId::SINK).map(|s| s.cluster_id);

        let mut edges: BTreeMap<ClusterId, u32> = BTreeMap::new();
        let mut roots: BTreeMap<ClusterId, u32> = BTreeMap::new();
        for n in self.nodes.values() {
            let count = members[&n.cluster_id];
            if n.cluster_size != count {
                return Err(format!(
                    "node {} reports cluster size {} but cluster {} has {} members",
                    n.id, n.cluster_size, n.cluster_id, count
                ));
            }
            if n.slaves.len() as u32 > n.slave_capacity {
                return Err(format!("node {} exceeds its slave capacity", n.id));
            }
            if n.buffer.len() > n.b_max {
                return Err(format!("node {} buffer exceeds b_max", n.id));
            }
            for s in &n.slaves {
                let slave = self
                    .get(*s)
                    .ok_or_else(|| format!("node {} lists unknown slave {}", n.id, s))?;
                if slave.master != Some(n.id) {
                    return Err(format!("slave {} of {} does not point back", s, n.id));
                }
            }
            match n.master {
                None => *roots.entry(n.cluster_id).or_default() += 1,
                Some(m) => {
                    let master = self
                        .get(m)
                        .ok_or_else(|| format!("node {} has unknown master {}", n.id, m))?;
                    if !master.slaves.contains(&n.id) {
                        return Err(format!("master {} of {} does not list it", m, n.id));
                    }
                    if master.cluster_id != n.cluster_id {
                        return Err(format!("link {}-{} crosses clusters", n.id, m));
                    }
                    *edges.entry(n.cluster_id).or_default() += 1;
                }
            }
            let path = self.path_to_root(n.id).map_err(|e| format!("{e}"))?;
            let depth = path.len() as u32 - 1;
            let in_sink_cluster = Some(n.cluster_id) == sink_cluster;
            if in_sink_cluster {
                if path.last() != Some(&NodeId::SINK) {
                    return Err(format!(
                        "sink cluster member {} is not rooted at the sink",
                        n.id
                    ));
                }
                if n.hops_to_sink != Some(depth) {
                    return Err(format!(
                        "node {} has hops {:?} but is {} hops from the sink",
                        n.id, n.hops_to_sink, depth
                    ));
                }
                if let Some(m) = n.master {
                    let mh = self.get(m).and_then(|x| x.hops_to_sink);
                    if mh.map(|h| h + 1) != n.hops_to_sink {
                        return Err(format!("node {} hops is not its master's + 1", n.id));
                    }
                }
            } else if n.hops_to_sink.is_some() {
                return Err(format!("node {} outside the sink cluster has hops", n.id));
            }
        }
        for (cluster, size) in &members {
            if roots.get(cluster).copied().unwrap_or(0) != 1 {
                return Err(format!("cluster {cluster} does not have exactly one root"));
            }
            if edges.get(cluster).copied().unwrap_or(0) != size - 1 {
                return Err(format!("cluster {cluster} is not a tree"));
            }
        }
        Ok(())
    }
}
