#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mesopolis::netmodel::{Link, LinkClass, Network, NetworkParts, Node, Zone};

pub mod oracles;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn grid4() -> Network {
    mesopolis::netmodel::load_network(&fixture("grid4")).unwrap()
}

pub fn node(id: u32, x: f64, y: f64) -> Node {
    Node { id, x, y, zone_id: 1, signalized: false }
}

pub fn zone() -> Zone {
    Zone {
        id: 1,
        centroid: 0,
        population: 100,
        median_income: 50_000.0,
        opportunities: 100.0,
        low_income_percentile: 10.0,
        burden_percentiles: BTreeMap::new(),
        cbd: false,
        dac: false,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn link(id: u32, from: usize, to: usize, length: f64, vf: f64, w: f64, kj: f64, q: f64) -> Link {
    Link {
        id,
        from,
        to,
        length,
        lanes: 1,
        free_flow_speed: vf,
        wave_speed: w,
        jam_density: kj,
        capacity: q,
        class: LinkClass::Arterial,
        toll_profile: None,
    }
}

pub fn network(nodes: Vec<Node>, links: Vec<Link>) -> Network {
    Network::from_parts(NetworkParts { nodes, links, zones: vec![zone()], ..Default::default() })
}

/// Link index from node `a` to node `b` (by external node id).
pub fn link_between(net: &Network, a: u32, b: u32) -> usize {
    let (ia, ib) = (net.node_idx(a).unwrap(), net.node_idx(b).unwrap());
    *net.out_links(ia).iter().find(|&&l| net.links[l].to == ib).unwrap()
}

/// Path through a sequence of external node ids.
pub fn path_through(net: &Network, ids: &[u32]) -> Vec<usize> {
    ids.windows(2).map(|w| link_between(net, w[0], w[1])).collect()
}
