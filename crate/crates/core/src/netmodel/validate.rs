use std::fmt;

use super::Network;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Issue {
    UnreachableNode(u32),
    OrphanTransitStop { route: u32, node: u32 },
    UnreachableTransitStop { route: u32, node: u32 },
    PhaseMovementWithoutTurn { node: u32, movement: u32 },
    NoZones,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::UnreachableNode(n) => write!(f, "unreachable node {n}"),
            Issue::OrphanTransitStop { route, node } => {
                write!(f, "orphan transit stop: route {route} stop node {node} is not on any link")
            }
            Issue::UnreachableTransitStop { route, node } => {
                write!(f, "unreachable transit stop: route {route} stop node {node}")
            }
            Issue::PhaseMovementWithoutTurn { node, movement } => {
                write!(f, "signal at node {node}: movement {movement} has no turn")
            }
            Issue::NoZones => write!(f, "network has no zones"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    pub strongly_connected: bool,
    /// External ids of expressway links.
    pub tollable_links: Vec<u32>,
    pub unreachable_stops: usize,
}

impl ValidationReport {
    pub fn is_simulatable(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Label nodes reachable from `start` following links forward (or backward).
fn reach(net: &Network, start: usize, forward: bool) -> Vec<bool> {
    let mut seen = vec![false; net.nodes.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(n) = stack.pop() {
        let next: Vec<usize> = if forward {
            net.out_links(n).iter().map(|&l| net.links[l].to).collect()
        } else {
            net.in_links(n).iter().map(|&l| net.links[l].from).collect()
        };
        for m in next {
            if !seen[m] {
                seen[m] = true;
                stack.push(m);
            }
        }
    }
    seen
}

/// Structural checks that decide whether a network can be simulated.
pub fn validate_network(net: &Network) -> ValidationReport {
    let mut issues = Vec::new();
    if net.zones.is_empty() {
        issues.push(Issue::NoZones);
    }

    // the drivable component is anchored at the busiest node so a single
    // stray node is the one reported
    let anchor = (0..net.nodes.len())
        .max_by_key(|&n| (net.out_links(n).len() + net.in_links(n).len(), std::cmp::Reverse(n)));
    let mut in_core = vec![false; net.nodes.len()];
    if let Some(a) = anchor {
        let f = reach(net, a, true);
        let b = reach(net, a, false);
        for n in 0..net.nodes.len() {
            in_core[n] = f[n] && b[n];
        }
    }
    let mut order: Vec<usize> = (0..net.nodes.len()).collect();
    order.sort_by_key(|&n| net.nodes[n].id);
    for &n in &order {
        if !in_core[n] {
            issues.push(Issue::UnreachableNode(net.nodes[n].id));
        }
    }
    let strongly_connected = in_core.iter().all(|&c| c);

    let mut unreachable_stops = 0;
    for r in &net.routes {
        for &s in &r.stops {
            let node = net.nodes[s].id;
            if net.out_links(s).is_empty() && net.in_links(s).is_empty() {
                issues.push(Issue::OrphanTransitStop { route: r.id, node });
                unreachable_stops += 1;
            } else if !in_core[s] {
                issues.push(Issue::UnreachableTransitStop { route: r.id, node });
                unreachable_stops += 1;
            }
        }
    }

    for s in &net.signals {
        for p in &s.phases {
            for &m in &p.movements {
                let has_turn = net
                    .link_idx(m)
                    .is_some_and(|l| net.turns_from(l).any(|t| t.allowed));
                if !has_turn {
                    issues.push(Issue::PhaseMovementWithoutTurn { node: net.nodes[s.node].id, movement: m });
                }
            }
        }
    }

    let mut tollable_links: Vec<u32> =
        net.links.iter().filter(|l| l.is_tollable()).map(|l| l.id).collect();
    tollable_links.sort_unstable();

    ValidationReport { issues, strongly_connected, tollable_links, unreachable_stops }
}
