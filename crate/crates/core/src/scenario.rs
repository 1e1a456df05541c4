//! Scenario description, validation and generation.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{hears, Position, RadioParams};
use crate::engine::EngineParams;
use crate::error::{Error, Result};
use crate::join::{FilterThresholds, ScoreWeights};
use crate::model::NodeId;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NodeSpec {
    pub id: NodeId,
    pub pos: Position,
    #[cfg_attr(feature = "serde", serde(default = "default_ci_ms"))]
    pub ci_ms: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_b_max"))]
    pub b_max: u32,
    #[cfg_attr(feature = "serde", serde(default = "default_slave_capacity"))]
    pub slave_capacity: u32,
    #[cfg_attr(feature = "serde", serde(default))]
    pub traffic_rate_pps: f64,
}

fn default_ci_ms() -> f64 {
    100.0
}

fn default_b_max() -> u32 {
    30
}

fn default_slave_capacity() -> u32 {
    3
}

impl NodeSpec {
    pub fn new(id: u32, x: f64, y: f64) -> Self {
        NodeSpec {
            id: NodeId(id),
            pos: Position::new(x, y),
            ci_ms: default_ci_ms(),
            b_max: default_b_max(),
            slave_capacity: default_slave_capacity(),
            traffic_rate_pps: 0.0,
        }
    }

    pub fn ci(mut self, ci_ms: f64) -> Self {
        self.ci_ms = ci_ms;
        self
    }

    pub fn rate(mut self, pps: f64) -> Self {
        self.traffic_rate_pps = pps;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Thresholds {
    pub rl_min_dbm: f64,
    pub b_fair: u32,
    /// Fraction of `b_max` from which a node counts as saturated.
    pub theta_sat: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let f = FilterThresholds::default();
        Thresholds {
            rl_min_dbm: f.rl_min_dbm,
            b_fair: f.b_fair,
            theta_sat: 0.8,
        }
    }
}

impl Thresholds {
    pub fn filter(&self) -> FilterThresholds {
        FilterThresholds {
            rl_min_dbm: self.rl_min_dbm,
            b_fair: self.b_fair,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rl_min_dbm.is_finite() {
            return Err(Error::scenario("thresholds.rl_min_dbm", "must be finite"));
        }
        if !(self.theta_sat > 0.0 && self.theta_sat <= 1.0) {
            return Err(Error::scenario("thresholds.theta_sat", "must be in (0, 1]"));
        }
        Ok(())
    }
}

#[cfg(feature = "serde")]
fn default_name() -> String {
    "scenario".to_string()
}

#[cfg(feature = "serde")]
fn default_sink() -> NodeId {
    NodeId::SINK
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Scenario {
    #[cfg_attr(feature = "serde", serde(default = "default_name"))]
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    #[cfg_attr(feature = "serde", serde(default = "default_sink"))]
    pub sink_id: NodeId,
    pub new_node_id: NodeId,
    #[cfg_attr(feature = "serde", serde(default))]
    pub radio: RadioParams,
    #[cfg_attr(feature = "serde", serde(default))]
    pub engine: EngineParams,
    #[cfg_attr(feature = "serde", serde(default))]
    pub weights: ScoreWeights,
    #[cfg_attr(feature = "serde", serde(default))]
    pub thresholds: Thresholds,
    /// Declares that the new node is expected to hear nobody.
    #[cfg_attr(feature = "serde", serde(default))]
    pub unjoinable: bool,
}

impl Scenario {
    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Neighbors of every node under the mean (unshadowed) channel.
    pub fn hearing_graph(&self) -> Result<BTreeMap<NodeId, Vec<NodeId>>> {
        let mut graph: BTreeMap<NodeId, Vec<NodeId>> =
            self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for (i, a) in self.nodes.iter().enumerate() {
            for b in &self.nodes[i + 1..] {
                if hears(a.pos, b.pos, &self.radio)?.0 {
                    graph.entry(a.id).or_default().push(b.id);
                    graph.entry(b.id).or_default().push(a.id);
                }
            }
        }
        for adj in graph.values_mut() {
            adj.sort();
        }
        Ok(graph)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::scenario("nodes", "scenario has no nodes"));
        }
        let mut seen = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let field = |f: &str| format!("nodes[{i}].{f}");
            if n.id.0 == 0 {
                return Err(Error::scenario(field("id"), "ids must be positive"));
            }
            if !seen.insert(n.id) {
                return Err(Error::scenario(
                    field("id"),
                    format!("duplicate node id {}", n.id),
                ));
            }
            if !n.pos.is_finite() {
                return Err(Error::scenario(field("pos"), "coordinates must be finite"));
            }
            if !(n.ci_ms.is_finite() && n.ci_ms > 0.0) {
                return Err(Error::scenario(field("ci_ms"), "must be positive"));
            }
            if n.b_max == 0 {
                return Err(Error::scenario(field("b_max"), "must be at least 1"));
            }
            if !(n.traffic_rate_pps.is_finite() && n.traffic_rate_pps >= 0.0) {
                return Err(Error::scenario(field("traffic_rate_pps"), "must be >= 0"));
            }
        }
        if self.sink_id != NodeId::SINK {
            return Err(Error::scenario(
                "sink_id",
                format!("the sink must use the reserved id {}", NodeId::SINK),
            ));
        }
        if !seen.contains(&self.sink_id) {
            return Err(Error::scenario(
                "sink_id",
                format!("no node with id {}", self.sink_id),
            ));
        }
        if !seen.contains(&self.new_node_id) {
            return Err(Error::scenario(
                "new_node_id",
                format!("no node with id {}", self.new_node_id),
            ));
        }
        if self.new_node_id == self.sink_id {
            return Err(Error::scenario(
                "new_node_id",
                "the new node cannot be the sink",
            ));
        }
        self.radio.validate()?;
        self.engine.validate()?;
        self.weights.validate()?;
        self.thresholds.validate()?;

        let graph = self.hearing_graph()?;
        let reached = reachable(&graph, self.sink_id, self.new_node_id);
        if reached.len() != self.nodes.len() - 1 {
            let missing: Vec<String> = self
                .nodes
                .iter()
                .map(|n| n.id)
                .filter(|id| *id != self.new_node_id && !reached.contains(id))
                .map(|id| id.to_string())
                .collect();
            return Err(Error::scenario(
                "nodes",
                format!(
                    "hearing graph is disconnected; unreachable: {}",
                    missing.join(", ")
                ),
            ));
        }
        let new_node_neighbors = graph[&self.new_node_id].len();
        if new_node_neighbors == 0 && !self.unjoinable {
            return Err(Error::scenario(
                "new_node_id",
                "the new node hears nobody; set `unjoinable` to run it anyway",
            ));
        }
        Ok(())
    }
}

fn reachable(
    graph: &BTreeMap<NodeId, Vec<NodeId>>,
    from: NodeId,
    excluded: NodeId,
) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        for &m in &graph[&n] {
            if m != excluded && seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

/// Knobs for [`gen_random_scenario`] besides node count, seed and area.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub ci_tiers_ms: Vec<f64>,
    pub rate_tiers_pps: Vec<f64>,
    pub max_attempts: u32,
    /// Candidates the new node must hear.
    pub min_new_node_neighbors: usize,
    pub b_max: u32,
    pub slave_capacity: u32,
    pub radio: RadioParams,
    pub engine: EngineParams,
    pub weights: ScoreWeights,
    pub thresholds: Thresholds,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            ci_tiers_ms: vec![50.0, 100.0, 200.0, 400.0],
            rate_tiers_pps: vec![0.0, 2.0, 5.0, 20.0],
            max_attempts: 1000,
            min_new_node_neighbors: 2,
            b_max: default_b_max(),
            slave_capacity: default_slave_capacity(),
            radio: RadioParams::default(),
            engine: EngineParams::default(),
            weights: ScoreWeights::default(),
            thresholds: Thresholds::default(),
        }
    }
}

/// Random topology of `n_nodes` (sink and new node included) scattered
/// uniformly over an `area_m` square.
///
/// The sink is node 1 and the new node is node `n_nodes`. Positions are
/// redrawn until the network without the new node is connected and the new
/// node hears enough candidates. Connection intervals and traffic rates are
/// then drawn from the tiers; the sink and the new node generate no
/// background traffic.
pub fn gen_random_scenario(
    n_nodes: usize,
    seed: u64,
    area_m: f64,
    params: &GenParams,
) -> Result<Scenario> {
    if n_nodes < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 nodes, got {n_nodes}"
        )));
    }
    if !(area_m.is_finite() && area_m > 0.0) {
        return Err(Error::InvalidInput(format!(
            "area must be positive, got {area_m}"
        )));
    }
    if params.ci_tiers_ms.is_empty() || params.rate_tiers_pps.is_empty() {
        return Err(Error::InvalidInput("tier lists must not be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let new_node = NodeId(n_nodes as u32);

    for _ in 0..params.max_attempts {
        let nodes: Vec<NodeSpec> = (1..=n_nodes as u32)
            .map(|id| {
                let x = rng.random_range(0.0..area_m);
                let y = rng.random_range(0.0..area_m);
                NodeSpec {
                    b_max: params.b_max,
                    slave_capacity: params.slave_capacity,
                    ..NodeSpec::new(id, x, y)
                }
            })
            .collect();
        let mut scenario = Scenario {
            name: format!("random{n_nodes}-s{seed}"),
            nodes,
            sink_id: NodeId::SINK,
            new_node_id: new_node,
            radio: params.radio,
            engine: params.engine,
            weights: params.weights,
            thresholds: params.thresholds,
            unjoinable: false,
        };
        let graph = scenario.hearing_graph()?;
        if graph[&new_node].len() < params.min_new_node_neighbors
            || reachable(&graph, NodeId::SINK, new_node).len() != n_nodes - 1
        {
            continue;
        }
        for node in &mut scenario.nodes {
            node.ci_ms = params.ci_tiers_ms[rng.random_range(0..params.ci_tiers_ms.len())];
            let rate = params.rate_tiers_pps[rng.random_range(0..params.rate_tiers_pps.len())];
            if node.id != NodeId::SINK && node.id != new_node {
                node.traffic_rate_pps = rate;
            }
        }
        scenario.validate()?;
        return Ok(scenario);
    }
    Err(Error::GenerationFailed {
        attempts: params.max_attempts,
    })
}

/// Built-in 11-node layout with one congested and one clean branch.
///
/// Nodes sit on a ring of 9 m hops around the sink:
///
/// ```text
///                 11 (new)
///            4 ·           · 8
///   5 ── 3 ·                   · 7 ── 9
///            2 ·           · 6
///                   1 (sink)
///                   |
///                   10
/// ```
///
/// Branch A (2, 3, 4 and leaf 5) carries a 20 pps generator at its tail
/// node 4, whose 400 ms connection interval cannot drain it. Branch B
/// (6, 7, 8 and leaf 9) is lightly loaded. The new node hears both tails at
/// the same distance; 1 dB of shadowing decides which one sounds closer.
pub fn training11() -> Scenario {
    let nodes = vec![
        NodeSpec::new(1, 0.0, 0.0).ci(50.0),
        NodeSpec::new(2, 8.315, 3.444).ci(50.0).rate(2.0),
        NodeSpec::new(3, 11.759, 11.759).ci(100.0).rate(2.0),
        NodeSpec::new(4, 8.315, 20.074).ci(400.0).rate(20.0),
        NodeSpec::new(5, 20.759, 11.759).ci(100.0).rate(5.0),
        NodeSpec::new(6, -8.315, 3.444).ci(50.0).rate(1.0),
        NodeSpec::new(7, -11.759, 11.759).ci(100.0).rate(2.0),
        NodeSpec::new(8, -8.315, 20.074).ci(100.0),
        NodeSpec::new(9, -20.759, 11.759).ci(100.0).rate(2.0),
        NodeSpec::new(10, 0.0, -9.0).ci(100.0).rate(2.0),
        NodeSpec::new(11, 0.0, 23.518).ci(50.0),
    ];
    Scenario {
        name: "training11".to_string(),
        nodes,
        sink_id: NodeId::SINK,
        new_node_id: NodeId(11),
        radio: RadioParams {
            shadowing_sigma_db: 1.0,
            ..RadioParams::default()
        },
        engine: EngineParams::default(),
        weights: ScoreWeights::default(),
        thresholds: Thresholds::default(),
        unjoinable: false,
    }
}

/// Looks up a built-in scenario by name.
pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "training11" => Some(training11()),
        _ => None,
    }
}
