use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use super::{
    is_dac, Agency, Link, LinkClass, Network, NetworkParts, Node, Phase, Signal, TransitRoute,
    Zone, DEFAULT_T_GREEN, DEFAULT_T_RED, FD_TOLERANCE,
};

#[derive(Debug, Clone, PartialEq)]
pub enum LoadErrorKind {
    DuplicateId(u64),
    DanglingReference(String),
    FundamentalDiagram(String),
    InvalidValue(String),
}

impl std::fmt::Display for LoadErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadErrorKind::DuplicateId(id) => write!(f, "duplicate id {id}"),
            LoadErrorKind::DanglingReference(what) => write!(f, "dangling reference: {what}"),
            LoadErrorKind::FundamentalDiagram(what) => {
                write!(f, "fundamental-diagram violation: {what}")
            }
            LoadErrorKind::InvalidValue(what) => write!(f, "invalid value: {what}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{file}: missing file")]
    MissingFile { file: String },
    #[error("{file}: line {line}: {field}: {kind}")]
    Invalid { file: String, line: u64, field: String, kind: LoadErrorKind },
    #[error("{file}: {source}")]
    Parse {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(file: &str, line: u64, field: &str, kind: LoadErrorKind) -> LoadError {
    LoadError::Invalid { file: file.to_string(), line, field: field.to_string(), kind }
}

fn de_bool<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Ok(true),
        "0" | "false" | "no" | "n" | "" => Ok(false),
        other => Err(serde::de::Error::custom(format!("not a boolean: {other:?}"))),
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct NodeRow {
    id: u32,
    x: f64,
    y: f64,
    zone_id: u32,
    #[serde(deserialize_with = "de_bool")]
    signalized: bool,
}

#[derive(Debug, Deserialize, Serialize)]
struct LinkRow {
    id: u32,
    from: u32,
    to: u32,
    length_m: f64,
    lanes: u32,
    vf_mps: f64,
    w_mps: f64,
    kj_vpmpl: f64,
    qmax_vpspl: f64,
    class: LinkClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    toll_profile: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct SignalRow {
    node_id: u32,
    phase_idx: usize,
    /// Semicolon-separated approach link ids.
    movements: String,
    min_g: f64,
    des_g: f64,
    max_g: f64,
    #[serde(deserialize_with = "de_bool")]
    connected: bool,
}

#[derive(Debug, Deserialize, Serialize)]
struct RouteRow {
    id: u32,
    agency: Agency,
    speed_mps: f64,
    #[serde(deserialize_with = "de_bool")]
    improvable: bool,
    /// One value, or one per hour of the horizon, semicolon-separated.
    headways_min: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct StopRow {
    route_id: u32,
    seq: u32,
    node_id: u32,
}

#[derive(Debug, Deserialize, Serialize)]
struct ZoneRow {
    id: u32,
    centroid: u32,
    population: u64,
    median_income: f64,
    opportunities: f64,
    low_income_pct: f64,
    /// `name=percentile` pairs, semicolon-separated.
    #[serde(default)]
    burden_pcts: String,
    #[serde(deserialize_with = "de_bool")]
    cbd: bool,
}

#[derive(Debug, Deserialize, Serialize)]
struct TurnRow {
    in_link: u32,
    out_link: u32,
    #[serde(deserialize_with = "de_bool")]
    allowed: bool,
}

fn read_rows<T: for<'de> Deserialize<'de>>(
    dir: &Path,
    file: &str,
    required: bool,
) -> Result<Vec<(u64, T)>, LoadError> {
    let path = dir.join(file);
    if !path.exists() {
        return if required {
            Err(LoadError::MissingFile { file: file.to_string() })
        } else {
            Ok(Vec::new())
        };
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|source| LoadError::Parse { file: file.to_string(), source })?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<T>() {
        let row = rec.map_err(|source| LoadError::Parse { file: file.to_string(), source })?;
        // header is line 1; csv positions are not exposed through serde rows
        out.push((out.len() as u64 + 2, row));
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(';').map(str::trim).filter(|p| !p.is_empty()).map(|p| p.parse().ok()).collect()
}

fn parse_burdens(s: &str) -> Option<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for pair in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=')?;
        out.insert(k.trim().to_string(), v.trim().parse().ok()?);
    }
    Some(out)
}

/// Check one link's triangular fundamental diagram.
fn check_fd(link: &LinkRow) -> Result<(), (&'static str, LoadErrorKind)> {
    use LoadErrorKind::*;
    if !(link.length_m > 0.0) {
        return Err(("length_m", InvalidValue("length must be positive".into())));
    }
    if link.lanes == 0 {
        return Err(("lanes", InvalidValue("at least one lane required".into())));
    }
    if !(link.vf_mps > 0.0) || !(link.kj_vpmpl > 0.0) || !(link.qmax_vpspl > 0.0) {
        return Err((
            "vf_mps",
            FundamentalDiagram("speeds, jam density and capacity must be positive".into()),
        ));
    }
    if !(link.w_mps > 0.0 && link.w_mps < link.vf_mps) {
        return Err((
            "w_mps",
            FundamentalDiagram(format!(
                "backward wave speed {} must lie in (0, free-flow speed {})",
                link.w_mps, link.vf_mps
            )),
        ));
    }
    let apex = super::triangular_apex(link.vf_mps, link.w_mps, link.kj_vpmpl);
    if link.qmax_vpspl > apex * (1.0 + FD_TOLERANCE) {
        return Err((
            "qmax_vpspl",
            FundamentalDiagram(format!(
                "capacity {} exceeds triangular apex {apex}",
                link.qmax_vpspl
            )),
        ));
    }
    Ok(())
}

/// Load a network from a directory of delimited tables.
///
/// `nodes.csv`, `links.csv` and `zones.csv` are required; `signals.csv`,
/// `transit_routes.csv`, `transit_stops.csv` and `turns.csv` are optional.
pub fn load_network(dir: &Path) -> Result<Network, LoadError> {
    use LoadErrorKind::*;

    let node_rows: Vec<(u64, NodeRow)> = read_rows(dir, "nodes.csv", true)?;
    let link_rows: Vec<(u64, LinkRow)> = read_rows(dir, "links.csv", true)?;
    let zone_rows: Vec<(u64, ZoneRow)> = read_rows(dir, "zones.csv", true)?;
    let signal_rows: Vec<(u64, SignalRow)> = read_rows(dir, "signals.csv", false)?;
    let route_rows: Vec<(u64, RouteRow)> = read_rows(dir, "transit_routes.csv", false)?;
    let stop_rows: Vec<(u64, StopRow)> = read_rows(dir, "transit_stops.csv", false)?;
    let turn_rows: Vec<(u64, TurnRow)> = read_rows(dir, "turns.csv", false)?;

    let zone_ids: HashSet<u32> = zone_rows.iter().map(|(_, z)| z.id).collect();

    let mut nodes = Vec::with_capacity(node_rows.len());
    let mut node_index = HashMap::new();
    for (line, r) in node_rows {
        if node_index.insert(r.id, nodes.len()).is_some() {
            return Err(invalid("nodes.csv", line, "id", DuplicateId(r.id as u64)));
        }
        if !zone_ids.contains(&r.zone_id) {
            return Err(invalid(
                "nodes.csv",
                line,
                "zone_id",
                DanglingReference(format!("zone {}", r.zone_id)),
            ));
        }
        nodes.push(Node { id: r.id, x: r.x, y: r.y, zone_id: r.zone_id, signalized: r.signalized });
    }

    let mut links = Vec::with_capacity(link_rows.len());
    let mut link_index = HashMap::new();
    for (line, r) in link_rows {
        if link_index.insert(r.id, links.len()).is_some() {
            return Err(invalid("links.csv", line, "id", DuplicateId(r.id as u64)));
        }
        let from = *node_index.get(&r.from).ok_or_else(|| {
            invalid("links.csv", line, "from", DanglingReference(format!("node {}", r.from)))
        })?;
        let to = *node_index.get(&r.to).ok_or_else(|| {
            invalid("links.csv", line, "to", DanglingReference(format!("node {}", r.to)))
        })?;
        if from == to {
            return Err(invalid("links.csv", line, "to", InvalidValue("self loop".into())));
        }
        check_fd(&r).map_err(|(field, kind)| invalid("links.csv", line, field, kind))?;
        if r.toll_profile.as_deref().is_some_and(|p| !p.is_empty()) && r.class != LinkClass::Expressway
        {
            return Err(invalid(
                "links.csv",
                line,
                "toll_profile",
                InvalidValue("only expressway links are tollable".into()),
            ));
        }
        links.push(Link {
            id: r.id,
            from,
            to,
            length: r.length_m,
            lanes: r.lanes,
            free_flow_speed: r.vf_mps,
            wave_speed: r.w_mps,
            jam_density: r.kj_vpmpl,
            capacity: r.qmax_vpspl,
            class: r.class,
            toll_profile: r.toll_profile.filter(|p| !p.is_empty()),
        });
    }

    let mut prohibited_turns = Vec::new();
    for (line, r) in turn_rows {
        let a = *link_index.get(&r.in_link).ok_or_else(|| {
            invalid("turns.csv", line, "in_link", DanglingReference(format!("link {}", r.in_link)))
        })?;
        let b = *link_index.get(&r.out_link).ok_or_else(|| {
            invalid("turns.csv", line, "out_link", DanglingReference(format!("link {}", r.out_link)))
        })?;
        if links[a].to != links[b].from {
            return Err(invalid(
                "turns.csv",
                line,
                "out_link",
                InvalidValue("links do not share a node".into()),
            ));
        }
        if !r.allowed {
            prohibited_turns.push((a, b));
        }
    }

    // signals: group phase rows per node
    let mut grouped: BTreeMap<usize, (u64, bool, Vec<(usize, Phase)>)> = BTreeMap::new();
    for (line, r) in signal_rows {
        let node = *node_index.get(&r.node_id).ok_or_else(|| {
            invalid("signals.csv", line, "node_id", DanglingReference(format!("node {}", r.node_id)))
        })?;
        if !nodes[node].signalized {
            return Err(invalid(
                "signals.csv",
                line,
                "node_id",
                InvalidValue(format!("node {} is not signalized", r.node_id)),
            ));
        }
        let movements: Vec<u32> = parse_list(&r.movements).ok_or_else(|| {
            invalid("signals.csv", line, "movements", InvalidValue(r.movements.clone()))
        })?;
        for m in &movements {
            let ok = link_index.get(m).is_some_and(|&l| links[l].to == node);
            if !ok {
                return Err(invalid(
                    "signals.csv",
                    line,
                    "movements",
                    DanglingReference(format!("approach link {m} does not enter node {}", r.node_id)),
                ));
            }
        }
        if !(0.0 < r.min_g && r.min_g <= r.des_g && r.des_g <= r.max_g) {
            return Err(invalid(
                "signals.csv",
                line,
                "min_g",
                InvalidValue("need 0 < min_g <= des_g <= max_g".into()),
            ));
        }
        let entry = grouped.entry(node).or_insert((line, r.connected, Vec::new()));
        if entry.1 != r.connected {
            return Err(invalid(
                "signals.csv",
                line,
                "connected",
                InvalidValue("inconsistent connected flag across phases".into()),
            ));
        }
        entry.2.push((
            r.phase_idx,
            Phase { movements, min_green: r.min_g, desired_green: r.des_g, max_green: r.max_g },
        ));
    }
    let mut signals = Vec::new();
    for (node, (line, connected, mut phases)) in grouped {
        phases.sort_by_key(|(i, _)| *i);
        if phases.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("signals.csv", line, "phase_idx", DuplicateId(phases[0].0 as u64)));
        }
        let phases: Vec<Phase> = phases.into_iter().map(|(_, p)| p).collect();
        let mut seen = HashSet::new();
        for p in &phases {
            for m in &p.movements {
                if !seen.insert(*m) {
                    return Err(invalid(
                        "signals.csv",
                        line,
                        "movements",
                        InvalidValue(format!("movement {m} appears in two phases")),
                    ));
                }
            }
        }
        signals.push(Signal {
            node,
            phases,
            connected,
            t_green: DEFAULT_T_GREEN,
            t_red: DEFAULT_T_RED,
        });
    }
    for (i, n) in nodes.iter().enumerate() {
        if n.signalized && !signals.iter().any(|s| s.node == i) {
            return Err(invalid(
                "nodes.csv",
                0,
                "signalized",
                DanglingReference(format!("signalized node {} has no signal record", n.id)),
            ));
        }
    }

    let mut stop_map: BTreeMap<u32, Vec<(u64, u32, usize)>> = BTreeMap::new();
    for (line, r) in stop_rows {
        let node = *node_index.get(&r.node_id).ok_or_else(|| {
            invalid(
                "transit_stops.csv",
                line,
                "node_id",
                DanglingReference(format!("node {}", r.node_id)),
            )
        })?;
        stop_map.entry(r.route_id).or_default().push((line, r.seq, node));
    }
    let mut routes = Vec::new();
    let mut route_ids = HashSet::new();
    for (line, r) in route_rows {
        if !route_ids.insert(r.id) {
            return Err(invalid("transit_routes.csv", line, "id", DuplicateId(r.id as u64)));
        }
        let headways: Vec<f64> = parse_list(&r.headways_min)
            .filter(|h: &Vec<f64>| {
                (h.len() == 1 || h.len() == crate::clock::NUM_HOURS) && h.iter().all(|&x| x > 0.0)
            })
            .ok_or_else(|| {
                invalid(
                    "transit_routes.csv",
                    line,
                    "headways_min",
                    InvalidValue("need one or 24 positive headways".into()),
                )
            })?;
        if !(r.speed_mps > 0.0) {
            return Err(invalid(
                "transit_routes.csv",
                line,
                "speed_mps",
                InvalidValue("speed must be positive".into()),
            ));
        }
        let mut stops = stop_map.remove(&r.id).unwrap_or_default();
        stops.sort_by_key(|s| s.1);
        if stops.len() < 2 {
            return Err(invalid(
                "transit_routes.csv",
                line,
                "id",
                InvalidValue(format!("route {} needs at least two stops", r.id)),
            ));
        }
        routes.push(TransitRoute {
            id: r.id,
            agency: r.agency,
            stops: stops.into_iter().map(|s| s.2).collect(),
            headways,
            speed: r.speed_mps,
            improvable: r.improvable,
        });
    }
    if let Some((route, stops)) = stop_map.into_iter().next() {
        return Err(invalid(
            "transit_stops.csv",
            stops[0].0,
            "route_id",
            DanglingReference(format!("route {route}")),
        ));
    }

    let mut zones = Vec::new();
    let mut seen_zone = HashSet::new();
    for (line, r) in zone_rows {
        if !seen_zone.insert(r.id) {
            return Err(invalid("zones.csv", line, "id", DuplicateId(r.id as u64)));
        }
        let centroid = *node_index.get(&r.centroid).ok_or_else(|| {
            invalid("zones.csv", line, "centroid", DanglingReference(format!("node {}", r.centroid)))
        })?;
        let burden_percentiles = parse_burdens(&r.burden_pcts).ok_or_else(|| {
            invalid("zones.csv", line, "burden_pcts", InvalidValue(r.burden_pcts.clone()))
        })?;
        let pct_ok = |p: f64| (0.0..=100.0).contains(&p);
        if !pct_ok(r.low_income_pct) || !burden_percentiles.values().all(|&p| pct_ok(p)) {
            return Err(invalid(
                "zones.csv",
                line,
                "low_income_pct",
                InvalidValue("percentiles must lie in [0, 100]".into()),
            ));
        }
        let dac = is_dac(r.low_income_pct, &burden_percentiles);
        zones.push(Zone {
            id: r.id,
            centroid,
            population: r.population,
            median_income: r.median_income,
            opportunities: r.opportunities,
            low_income_percentile: r.low_income_pct,
            burden_percentiles,
            cbd: r.cbd,
            dac,
        });
    }

    Ok(Network::from_parts(NetworkParts {
        nodes,
        links,
        prohibited_turns,
        signals,
        routes,
        zones,
    }))
}

fn writer(dir: &Path, file: &str) -> Result<csv::Writer<File>, LoadError> {
    csv::Writer::from_path(dir.join(file))
        .map_err(|source| LoadError::Parse { file: file.to_string(), source })
}

fn fmt_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

/// Write every table of `net` into `dir` (created if missing).
pub fn write_network(net: &Network, dir: &Path) -> Result<(), LoadError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| LoadError::Io { file: dir.display().to_string(), source })?;
    let csv_err = |file: &str| {
        let file = file.to_string();
        move |source: csv::Error| LoadError::Parse { file: file.clone(), source }
    };

    let mut w = writer(dir, "nodes.csv")?;
    for n in &net.nodes {
        w.serialize(NodeRow { id: n.id, x: n.x, y: n.y, zone_id: n.zone_id, signalized: n.signalized })
            .map_err(csv_err("nodes.csv"))?;
    }
    w.flush().map_err(|source| LoadError::Io { file: "nodes.csv".into(), source })?;

    // toll_profile column only when some link carries one, keeping the
    // baseline schema when none do
    let any_toll = net.links.iter().any(|l| l.toll_profile.is_some());
    let mut w = writer(dir, "links.csv")?;
    for l in &net.links {
        let row = LinkRow {
            id: l.id,
            from: net.nodes[l.from].id,
            to: net.nodes[l.to].id,
            length_m: l.length,
            lanes: l.lanes,
            vf_mps: l.free_flow_speed,
            w_mps: l.wave_speed,
            kj_vpmpl: l.jam_density,
            qmax_vpspl: l.capacity,
            class: l.class,
            toll_profile: if any_toll { Some(l.toll_profile.clone().unwrap_or_default()) } else { None },
        };
        w.serialize(row).map_err(csv_err("links.csv"))?;
    }
    w.flush().map_err(|source| LoadError::Io { file: "links.csv".into(), source })?;

    let mut w = writer(dir, "zones.csv")?;
    for z in &net.zones {
        let burden = z
            .burden_percentiles
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        w.serialize(ZoneRow {
            id: z.id,
            centroid: net.nodes[z.centroid].id,
            population: z.population,
            median_income: z.median_income,
            opportunities: z.opportunities,
            low_income_pct: z.low_income_percentile,
            burden_pcts: burden,
            cbd: z.cbd,
        })
        .map_err(csv_err("zones.csv"))?;
    }
    w.flush().map_err(|source| LoadError::Io { file: "zones.csv".into(), source })?;

    if !net.signals.is_empty() {
        let mut w = writer(dir, "signals.csv")?;
        for s in &net.signals {
            for (i, p) in s.phases.iter().enumerate() {
                w.serialize(SignalRow {
                    node_id: net.nodes[s.node].id,
                    phase_idx: i,
                    movements: fmt_list(&p.movements),
                    min_g: p.min_green,
                    des_g: p.desired_green,
                    max_g: p.max_green,
                    connected: s.connected,
                })
                .map_err(csv_err("signals.csv"))?;
            }
        }
        w.flush().map_err(|source| LoadError::Io { file: "signals.csv".into(), source })?;
    }

    if !net.routes.is_empty() {
        let mut w = writer(dir, "transit_routes.csv")?;
        let mut ws = writer(dir, "transit_stops.csv")?;
        for r in &net.routes {
            w.serialize(RouteRow {
                id: r.id,
                agency: r.agency,
                speed_mps: r.speed,
                improvable: r.improvable,
                headways_min: fmt_list(&r.headways),
            })
            .map_err(csv_err("transit_routes.csv"))?;
            for (seq, &s) in r.stops.iter().enumerate() {
                ws.serialize(StopRow { route_id: r.id, seq: seq as u32, node_id: net.nodes[s].id })
                    .map_err(csv_err("transit_stops.csv"))?;
            }
        }
        w.flush().map_err(|source| LoadError::Io { file: "transit_routes.csv".into(), source })?;
        ws.flush().map_err(|source| LoadError::Io { file: "transit_stops.csv".into(), source })?;
    }

    let prohibited: Vec<_> = net.turns.iter().filter(|t| !t.allowed).collect();
    if !prohibited.is_empty() {
        let mut w = writer(dir, "turns.csv")?;
        for t in prohibited {
            w.serialize(TurnRow {
                in_link: net.links[t.in_link].id,
                out_link: net.links[t.out_link].id,
                allowed: false,
            })
            .map_err(csv_err("turns.csv"))?;
        }
        w.flush().map_err(|source| LoadError::Io { file: "turns.csv".into(), source })?;
    }
    Ok(())
}
