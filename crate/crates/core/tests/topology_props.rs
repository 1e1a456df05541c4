//! Random cluster merges checked against an independent recount of the
//! resulting forest.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatternet_core::join::{baseline_select, HeardJoinMe, JoinDecision};
use scatternet_core::model::JoinMePacket;
use scatternet_core::{Network, NodeId, NodeState, Position};

fn network(n: u32, capacity: u32) -> Network {
    Network::new((1..=n).map(|id| NodeState {
        slave_capacity: capacity,
        ..NodeState::new(NodeId(id), Position::default(), 100.0)
    }))
    .unwrap()
}

/// Recomputes sizes, tree shape and hop counts from master pointers alone.
fn audit(net: &Network) -> Result<(), String> {
    let masters: BTreeMap<NodeId, Option<NodeId>> = net.nodes().map(|n| (n.id, n.master)).collect();
    let root_of = |mut id: NodeId| -> Result<(NodeId, u32), String> {
        let mut depth = 0;
        while let Some(m) = masters[&id] {
            id = m;
            depth += 1;
            if depth as usize > masters.len() {
                return Err("master chain loops".into());
            }
        }
        Ok((id, depth))
    };
    let mut sizes: BTreeMap<NodeId, u32> = BTreeMap::new();
    for &id in masters.keys() {
        *sizes.entry(root_of(id)?.0).or_default() += 1;
    }
    for n in net.nodes() {
        let (root, depth) = root_of(n.id)?;
        if n.cluster_size != sizes[&root] {
            return Err(format!(
                "node {} size {} != {}",
                n.id, n.cluster_size, sizes[&root]
            ));
        }
        let root_cluster = net.get(root).unwrap().cluster_id;
        if n.cluster_id != root_cluster {
            return Err(format!("node {} cluster id differs from its root's", n.id));
        }
        if root == NodeId::SINK {
            if n.hops_to_sink != Some(depth) {
                return Err(format!(
                    "node {} hops {:?} != depth {depth}",
                    n.id, n.hops_to_sink
                ));
            }
            if let Some(m) = n.master {
                let mh = net.get(m).unwrap().hops_to_sink.unwrap();
                if n.hops_to_sink != Some(mh + 1) {
                    return Err(format!("node {} hops is not master + 1", n.id));
                }
            }
        } else if n.hops_to_sink.is_some() {
            return Err(format!("node {} has hops outside the sink cluster", n.id));
        }
        if n.slaves.len() as u32 > n.slave_capacity {
            return Err(format!("node {} over capacity", n.id));
        }
    }
    // Distinct cluster ids per tree.
    let mut ids_by_root: BTreeMap<NodeId, _> = BTreeMap::new();
    for n in net.nodes() {
        ids_by_root.insert(
            root_of(n.id)?.0,
            net.get(root_of(n.id)?.0).unwrap().cluster_id,
        );
    }
    let mut seen = std::collections::BTreeSet::new();
    for cid in ids_by_root.values() {
        if !seen.insert(*cid) {
            return Err("two trees share a cluster id".into());
        }
    }
    Ok(())
}

/// Applies random legal merges; returns the number of attaches performed.
fn random_build_up(seed: u64, n: u32) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = network(n, rng.random_range(1..=4));
    let mut attaches = 0;
    for _ in 0..4 * n {
        let roots: Vec<NodeId> = net
            .nodes()
            .filter(|x| x.is_root() && x.id != NodeId::SINK)
            .map(|x| x.id)
            .collect();
        if roots.is_empty() {
            break;
        }
        let child = roots[rng.random_range(0..roots.len())];
        let child_cluster = net.get(child).unwrap().cluster_id;
        let parents: Vec<NodeId> = net
            .nodes()
            .filter(|x| x.cluster_id != child_cluster && x.free_out() > 0)
            .map(|x| x.id)
            .collect();
        if parents.is_empty() {
            continue;
        }
        let parent = parents[rng.random_range(0..parents.len())];
        net.attach(child, parent).map_err(|e| e.to_string())?;
        attaches += 1;
        audit(&net)?;
        net.check_invariants()?;
    }
    Ok(attaches)
}

#[test]
fn thousand_random_build_ups_keep_invariants() {
    let mut total = 0;
    for seed in 0..1000 {
        total += random_build_up(seed, 2 + (seed % 19) as u32)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
    assert!(total > 5000);
}

#[test]
fn illegal_attaches_leave_the_network_untouched() {
    let mut net = network(4, 1);
    net.attach(NodeId(2), NodeId(1)).unwrap();
    let before = net.clone();
    assert!(net.attach(NodeId(3), NodeId(1)).is_err());
    assert!(net.attach(NodeId(2), NodeId(3)).is_err());
    assert!(net.attach(NodeId(1), NodeId(3)).is_err());
    assert!(net.attach(NodeId(3), NodeId(3)).is_err());
    assert_eq!(net, before);
}

/// Fully connected nodes running the baseline rule in rounds.
fn baseline_rounds(n: u32, capacity: u32, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = network(n, capacity);
    for _ in 0..(4 * n) {
        let mut order: Vec<NodeId> = net.ids().collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for id in order {
            let me = net.get(id).unwrap().clone();
            let heard: Vec<HeardJoinMe> = net
                .nodes()
                .filter(|x| x.id != id)
                .map(|x| HeardJoinMe {
                    packet: JoinMePacket::from_node(x),
                    rl_dbm: -60.0 - f64::from(x.id.0),
                })
                .collect();
            if let JoinDecision::ConnectAsChild(p) = baseline_select(&heard, &me) {
                net.attach(id, p).unwrap();
                net.check_invariants().unwrap();
            }
        }
    }
    net
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn baseline_converges_to_one_cluster(n in 2u32..12, capacity in 2u32..4, seed in any::<u64>()) {
        let net = baseline_rounds(n, capacity, seed);
        prop_assert!(net.ids().all(|id| net.in_sink_cluster(id)));
        prop_assert_eq!(net.get(NodeId::SINK).unwrap().cluster_size, n);
        prop_assert!(audit(&net).is_ok());
    }

    #[test]
    fn random_merges_stay_consistent(seed in any::<u64>(), n in 2u32..25) {
        prop_assert!(random_build_up(seed, n).is_ok());
    }
}
