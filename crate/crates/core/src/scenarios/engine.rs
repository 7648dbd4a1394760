use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::levers::{apply_transit_lever, LeverSettings, ScenarioPlan, TransitEdit};
use super::tolls::TollProfile;
use crate::analytics::{
    aggregate_metrics, CostParams as MetricCostParams, DayLog, LegInfo, LegKind, MetricInputs, MetricsError, MetricsRow,
    OpenTraversal, PersonTrip,
};
use crate::clock::{self, HORIZON_END, HORIZON_START};
use crate::demand::{
    apply_telecommute, generate_activities, generate_deliveries, substitute_shopping_trips, ActivityPlan, ActivityType,
    DeliveryCategory, DeliveryRequest, DemandConfig, LevelOfService, Population, SkimLos, PARCEL_WINDOW,
};
use crate::energy::{assign_powertrains, mep_simplified, FleetMix, MepParams, Powertrain, PowertrainTable, VehicleClass};
use crate::fleets::{
    assign_ohd, build_tours, classify_request, fmlm_feasible, generate_receivers, generate_shipments, Depot, DepotKind,
    DeliveryTour, FleetEvent, FleetOperator, FmlmOption, FreightSpec, LegOrder, Region, ServiceType, Shipment, Tariff,
    TncPolicy, TncRequest, TncVehicle, TourParams,
};
use crate::flowsim::{FlowParams, Simulation, VehicleSpec};
use crate::netmodel::{LinkClass, Network};
use crate::router::{
    compute_skims, relative_gap, transit_path_cost, AStar, CostParams, Mode, RouteQuery, SkimBand, Skims, TravelTimeTable,
};
use crate::seed;

/// Everything about a scenario run that is not a lever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub demand: DemandConfig,
    pub cost: CostParams,
    pub tariff: Tariff,
    pub tnc: TncPolicy,
    /// Passenger ride-hailing vehicles per 1000 residents.
    pub tnc_vehicles_per_1000: f64,
    /// Share of the passenger fleet serving CBD-internal rides.
    pub tnc_cbd_share: f64,
    /// On-demand delivery orders one cargo vehicle is sized for.
    pub odd_orders_per_vehicle: f64,
    pub freight: FreightSpec,
    pub freight_tours: TourParams,
    pub parcel_tours: TourParams,
    /// OHD acceptance among receivers with the lever off and on.
    pub ohd_rate_off: f64,
    pub ohd_rate_on: f64,
    /// Detour factor and speed of the tour planner's cost estimate.
    pub planning_detour: f64,
    pub planning_speed: f64,
    pub hev_fraction: f64,
    pub cacc_alpha: f64,
    pub dt: f64,
    /// Extra time after the horizon for vehicles to finish, s.
    pub drain: f64,
    /// Refresh interval of the prevailing-time snapshot used by routing, s.
    pub snapshot_interval: f64,
    /// Radius of the random offset of ride-hailing request points, m.
    pub request_scatter: f64,
    /// Number of the busiest zones that host on-demand pickup sites.
    pub store_zones: usize,
    pub mep: MepParams,
    /// Transit energy per passenger-km for accessibility scoring.
    pub transit_kwh_per_pkm: f64,
    pub metric_costs: MetricCostParams,
    /// Replaces the design's fixed telecommuting rate; for context
    /// sensitivity runs outside the factorial.
    pub telecommute_override: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            demand: DemandConfig::default(),
            cost: CostParams::default(),
            tariff: Tariff::default(),
            tnc: TncPolicy::default(),
            tnc_vehicles_per_1000: 1.5,
            tnc_cbd_share: 0.3,
            odd_orders_per_vehicle: 25.0,
            freight: FreightSpec::default(),
            freight_tours: TourParams::default(),
            parcel_tours: TourParams { capacity: 60, service_time: 90.0, ..TourParams::default() },
            ohd_rate_off: 0.05,
            ohd_rate_on: 0.15,
            planning_detour: 1.3,
            planning_speed: 10.0,
            hev_fraction: 0.1,
            cacc_alpha: crate::flowsim::DEFAULT_ALPHA,
            dt: 1.0,
            drain: 2.0 * clock::HOUR,
            snapshot_interval: 60.0,
            request_scatter: 150.0,
            store_zones: 4,
            mep: MepParams::default(),
            transit_kwh_per_pkm: 0.15,
            metric_costs: MetricCostParams::default(),
            telecommute_override: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("pricing requires baseline run")]
    MissingBaseline,
    #[error("network has no zones")]
    NoZones,
    #[error("{0}")]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Invalid(String),
}

/// Shared, read-only inputs of a scenario run.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioInputs<'a> {
    pub net: &'a Network,
    pub depots: &'a [Depot],
    pub population: &'a Population,
    /// Toll profile derived from the baseline run; required when pricing
    /// is on.
    pub tolls: Option<&'a TollProfile>,
    pub table: &'a PowertrainTable,
}

/// Diagnostics of a run besides its metrics.
#[derive(Debug, Clone, Default)]
pub struct ScenarioLog {
    pub gaps: Vec<f64>,
    pub transit_edits: Vec<TransitEdit>,
    pub tours: Vec<DeliveryTour>,
    pub rejected_shipments: usize,
    /// Business freight shipments and those moved to the overnight window.
    pub freight_shipments: usize,
    pub ohd_shipments: usize,
    pub substituted_trips: usize,
    pub telecommuters: usize,
    pub tnc_requests: usize,
    pub tnc_unserved: usize,
    pub fleet_events: Vec<FleetEvent>,
    /// Mean experienced time per (link, hour) of the final iteration.
    pub hourly_times: Vec<Vec<Option<f64>>>,
    /// Conservation counters of the final iteration.
    pub loaded: u64,
    pub arrived: u64,
    pub still_on_network: u64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub row: MetricsRow,
    pub log: ScenarioLog,
}

/// Lever-dependent inputs a plan derives before simulating.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanArtifacts {
    pub tolls: TollProfile,
    pub routes: Vec<crate::netmodel::TransitRoute>,
    pub transit_edits: Vec<TransitEdit>,
    /// Off-hours acceptance per business receiver.
    pub ohd_flags: Vec<bool>,
    pub fleet_mix: FleetMix,
    pub household_powertrains: Vec<Powertrain>,
}

/// Derived artifacts of a plan, without running it.
pub fn derive_artifacts(plan: &ScenarioPlan, inp: &ScenarioInputs, cfg: &EngineConfig) -> Result<PlanArtifacts, ScenarioError> {
    let prep = prepare(plan, inp, cfg)?;
    Ok(PlanArtifacts {
        tolls: prep.tolls,
        routes: prep.net.routes.clone(),
        transit_edits: prep.transit_edits,
        ohd_flags: prep.ohd_flags,
        fleet_mix: FleetMix::from_level(plan.settings.ev_level),
        household_powertrains: prep.household_pt,
    })
}

/// Day-invariant scenario state.
struct Prepared {
    net: Network,
    population: Population,
    tolls: TollProfile,
    priced: bool,
    activity_nodes: NodePicker,
    deliveries: Vec<DeliveryRequest>,
    household_pt: Vec<Powertrain>,
    tours: Vec<DeliveryTour>,
    tour_kinds: Vec<LegKind>,
    tour_pt: Vec<Powertrain>,
    rejected: usize,
    freight_shipments: usize,
    ohd_shipments: usize,
    ohd_flags: Vec<bool>,
    tnc_fleet: Vec<TncVehicle>,
    odd_requests: Vec<TncRequest>,
    transit_edits: Vec<TransitEdit>,
    telecommuters: usize,
}

fn telecommute_rate(s: &LeverSettings, cfg: &EngineConfig) -> f64 {
    cfg.telecommute_override.unwrap_or(s.telecommute())
}

/// Seeded choice of a concrete node for an activity in a zone.
struct NodePicker {
    by_zone: Vec<Vec<usize>>,
    seed: u64,
}

impl NodePicker {
    fn new(net: &Network, seed_value: u64) -> Self {
        let by_zone = (0..net.zones.len())
            .map(|z| {
                let nodes: Vec<usize> = net
                    .zone_nodes(z)
                    .into_iter()
                    .filter(|&n| {
                        let street = |ls: &[usize]| ls.iter().any(|&l| net.links[l].class != LinkClass::Expressway);
                        street(net.out_links(n)) && street(net.in_links(n))
                    })
                    .collect();
                if nodes.is_empty() {
                    vec![net.zones[z].centroid]
                } else {
                    nodes
                }
            })
            .collect();
        NodePicker { by_zone, seed: seed_value }
    }

    fn pick(&self, zone: usize, key: &[u64]) -> usize {
        let nodes = &self.by_zone[zone];
        let mut parts = vec![self.seed, seed::tag("node"), zone as u64];
        parts.extend_from_slice(key);
        nodes[(seed::derive(&parts) % nodes.len() as u64) as usize]
    }

    fn home(&self, zone: usize, household: u32) -> usize {
        self.pick(zone, &[0, household as u64])
    }

    fn activity(&self, plan: &ActivityPlan, idx: usize, household: u32) -> usize {
        let a = &plan.activities[idx];
        match a.kind {
            ActivityType::Home => self.home(a.zone, household),
            ActivityType::Work => self.pick(a.zone, &[1, plan.person as u64]),
            _ => self.pick(a.zone, &[2, plan.person as u64, idx as u64]),
        }
    }
}

fn planning_cost<'a>(net: &'a Network, cfg: &'a EngineConfig) -> impl Fn(usize, usize) -> f64 + 'a {
    move |a, b| net.distance(a, b) * cfg.planning_detour / cfg.planning_speed
}

fn prepare(plan: &ScenarioPlan, inp: &ScenarioInputs, cfg: &EngineConfig) -> Result<Prepared, ScenarioError> {
    let s = &plan.settings;
    if inp.net.zones.is_empty() {
        return Err(ScenarioError::NoZones);
    }
    let (net, transit_edits) = if s.transit { apply_transit_lever(inp.net) } else { (inp.net.clone(), Vec::new()) };
    let tolls = if s.pricing { inp.tolls.cloned().ok_or(ScenarioError::MissingBaseline)? } else { TollProfile::empty() };
    let common = plan.common_seed;

    let mut population = inp.population.clone();
    let telecommuters = apply_telecommute(&mut population.persons, telecommute_rate(s, cfg), common);
    let picker = NodePicker::new(&net, common);
    let mix = FleetMix::from_level(s.ev_level);

    let rates = crate::demand::DeliveryRates::for_level(s.ecomm_level);
    let rates = cfg.demand.delivery_rates.unwrap_or(rates);
    let deliveries = if population.persons.is_empty() {
        Vec::new()
    } else {
        generate_deliveries(&population.households, &rates, common)
    };

    let owners: Vec<usize> = (0..population.households.len()).filter(|&h| population.households[h].vehicle).collect();
    let pts = assign_powertrains(&vec![VehicleClass::Ld; owners.len()], mix, cfg.hev_fraction, seed::derive(&[common, 1]));
    let mut household_pt = vec![Powertrain::Ice; population.households.len()];
    for (&h, &pt) in owners.iter().zip(&pts) {
        household_pt[h] = pt;
    }

    // Freight: business receivers plus household parcels, planned once.
    let (mut tours, mut tour_kinds, mut rejected) = (Vec::new(), Vec::new(), 0);
    let (mut freight_shipments, mut ohd_shipments, mut ohd_flags) = (0, 0, Vec::new());
    if !population.persons.is_empty() {
        let cost = planning_cost(&net, cfg);
        let mut receivers = generate_receivers(&net, &cfg.freight, common);
        let mut shipments = generate_shipments(&receivers, &cfg.freight, common);
        let rate = if s.ohd { cfg.ohd_rate_on } else { cfg.ohd_rate_off };
        assign_ohd(&mut receivers, &mut shipments, rate, common);
        freight_shipments = shipments.len();
        ohd_flags = receivers.iter().map(|r| r.ohd_accepting).collect();
        ohd_shipments = shipments.iter().filter(|x| x.window != x.day_window).count();
        let freight_depots: Vec<Depot> = inp.depots.iter().filter(|d| d.kind == DepotKind::Freight).cloned().collect();
        let fp = build_tours(&net, &shipments, &freight_depots, &cfg.freight_tours, &cost);
        rejected += fp.rejected.len();
        tour_kinds.extend(std::iter::repeat_n(LegKind::Freight, fp.tours.len()));
        tours.extend(fp.tours);

        let mut parcels: BTreeMap<u32, u32> = BTreeMap::new();
        for d in deliveries.iter().filter(|d| d.category == DeliveryCategory::Ecommerce) {
            *parcels.entry(d.household).or_default() += 1;
        }
        let base_id = shipments.iter().map(|s| s.id + 1).max().unwrap_or(0);
        let parcel_shipments: Vec<Shipment> = parcels
            .iter()
            .enumerate()
            .map(|(i, (&h, &n))| {
                let hh = &population.households[h as usize];
                Shipment {
                    id: base_id + i as u32,
                    receiver: None,
                    node: picker.home(hh.zone, h),
                    size: n.min(cfg.parcel_tours.capacity),
                    window: PARCEL_WINDOW,
                    day_window: PARCEL_WINDOW,
                    class: VehicleClass::Md,
                }
            })
            .collect();
        let parcel_depots: Vec<Depot> = inp.depots.iter().filter(|d| d.kind == DepotKind::Parcel).cloned().collect();
        let pp = build_tours(&net, &parcel_shipments, &parcel_depots, &cfg.parcel_tours, &cost);
        rejected += pp.rejected.len();
        tour_kinds.extend(std::iter::repeat_n(LegKind::Parcel, pp.tours.len()));
        tours.extend(pp.tours);
    }
    for (i, t) in tours.iter_mut().enumerate() {
        t.vehicle = i as u32;
    }
    let tour_pt = assign_powertrains(&tours.iter().map(|t| t.class).collect::<Vec<_>>(), mix, cfg.hev_fraction, seed::derive(&[common, 2]));

    // On-demand delivery orders and the cargo fleet sized for them.
    let mut stores: Vec<usize> = (0..net.zones.len()).collect();
    stores.sort_by(|&a, &b| net.zones[b].opportunities.total_cmp(&net.zones[a].opportunities).then(a.cmp(&b)));
    stores.truncate(cfg.store_zones.max(1));
    let stores: Vec<usize> = stores.into_iter().map(|z| net.zones[z].centroid).collect();
    let mut odd_requests = Vec::new();
    for d in deliveries.iter().filter(|d| d.category.is_on_demand()) {
        let hh = &population.households[d.household as usize];
        let home = picker.home(hh.zone, d.household);
        let store = *stores
            .iter()
            .min_by(|&&a, &&b| net.distance(a, home).total_cmp(&net.distance(b, home)).then(a.cmp(&b)))
            .expect("at least one store");
        odd_requests.push(TncRequest {
            id: 0,
            person: None,
            request_time: d.request_time,
            service: ServiceType::Door,
            region: Region::Suburban,
            pickup: store,
            dropoff: home,
            transit_stop: None,
            cargo: true,
            subsidized: false,
            fare: 0.0,
        });
    }

    let n_persons = population.persons.len() as f64;
    let n_tnc = if n_persons > 0.0 { (cfg.tnc_vehicles_per_1000 * n_persons / 1000.0).ceil().max(2.0) as usize } else { 0 };
    let n_cbd = ((n_tnc as f64 * cfg.tnc_cbd_share).round() as usize).min(n_tnc);
    let n_cargo = (odd_requests.len() as f64 / cfg.odd_orders_per_vehicle.max(1.0)).ceil() as usize;
    let classes = vec![VehicleClass::Ld; n_tnc + n_cargo];
    let fleet_pt = assign_powertrains(&classes, mix, cfg.hev_fraction, seed::derive(&[common, 3]));
    let cbd_nodes: Vec<usize> = (0..net.nodes.len()).filter(|&n| net.is_cbd_node(n)).collect();
    let all_nodes: Vec<usize> = picker.by_zone.iter().flatten().copied().collect();
    let mut rng = seed::rng(&[plan.seed, seed::tag("fleet start")]);
    let mut tnc_fleet = Vec::with_capacity(n_tnc + n_cargo);
    for i in 0..n_tnc + n_cargo {
        let cargo = i >= n_tnc;
        let region = if i < n_cbd && !cbd_nodes.is_empty() { Region::Cbd } else { Region::Suburban };
        let pool = if region == Region::Cbd { &cbd_nodes } else { &all_nodes };
        let start = pool[rng.random_range(0..pool.len())];
        let seats = if cargo { 1 } else { cfg.tnc.seats };
        tnc_fleet.push(TncVehicle::new(i as u32, start, region, seats, fleet_pt[i], cargo));
    }

    Ok(Prepared {
        priced: s.pricing,
        net,
        population,
        tolls,
        activity_nodes: picker,
        deliveries,
        household_pt,
        tours,
        tour_kinds,
        tour_pt,
        rejected,
        freight_shipments,
        ohd_shipments,
        ohd_flags,
        tnc_fleet,
        odd_requests,
        transit_edits,
        telecommuters,
    })
}

/// Drive of a resident's own vehicle.
struct DriveTrip {
    person: u32,
    household: u32,
    depart: f64,
    origin: usize,
    dest: usize,
    cacc: bool,
    parking: f64,
}

/// Rider waiting for ride-hailing, plus any transit part of an FMLM trip.
struct RideTrip {
    person: u32,
    transit_time: f64,
    transit_fare: f64,
    transit_distance: f64,
}

#[derive(Clone, Copy)]
enum Owner {
    Private(usize),
    Fleet(u32),
    Tour(usize, usize),
}

#[derive(Clone, Copy)]
enum Job {
    Fleet(LegOrder),
    Tour(usize, usize),
}

/// Results of one simulated day used by both the convergence check and
/// metric accounting.
struct Day {
    log: DayLog,
    gap_pairs: Vec<(f64, f64)>,
    measured: Vec<Vec<Option<f64>>>,
    hourly: Vec<Vec<Option<f64>>>,
    fleet_events: Vec<FleetEvent>,
    tnc_requests: usize,
    tnc_unserved: usize,
    substituted: usize,
    loaded: u64,
    arrived: u64,
    on_network: u64,
}

fn ordered(t: f64) -> u64 {
    // non-negative clock times sort like their bit patterns
    t.max(0.0).to_bits()
}

fn simulate_day(
    prep: &Prepared,
    plan: &ScenarioPlan,
    cfg: &EngineConfig,
    hist: &TravelTimeTable,
    skims: &Skims,
    iteration: u32,
) -> Day {
    let net = &prep.net;
    let s = &plan.settings;
    let pop = &prep.population;
    let common = plan.common_seed;
    let tolls = prep.priced.then_some(&prep.tolls);

    let mut los = SkimLos::new(net, skims);
    los.tariff = cfg.tariff;
    los.transit_fare = cfg.cost.transit_fare;
    los.fmlm_subsidy = s.tnc_policy;
    let demand = DemandConfig { telecommute_rate: telecommute_rate(s, cfg), ecomm_level: s.ecomm_level, ..cfg.demand.clone() };
    let mut plans: Vec<ActivityPlan> =
        pop.persons.iter().map(|p| generate_activities(p, &demand, &los as &dyn LevelOfService, common)).collect();
    let removals = substitute_shopping_trips(&mut plans, pop, &prep.deliveries, demand.substitution, common);

    let policy = TncPolicy { corner: s.tnc_policy, fmlm_subsidy: s.tnc_policy, ..cfg.tnc };
    let mut trips_out: Vec<PersonTrip> = Vec::new();
    let mut drives: Vec<DriveTrip> = Vec::new();
    let mut rides: Vec<RideTrip> = Vec::new();
    let mut ride_requests: Vec<TncRequest> = Vec::new();
    let mut fmlm_cache: HashMap<(usize, usize, usize), Option<FmlmOption>> = HashMap::new();
    let ride_estimate = |a: usize, b: usize| {
        let m = net.distance(a, b) * cfg.planning_detour;
        (m, m / cfg.planning_speed)
    };

    for plan_p in &plans {
        let person = &pop.persons[plan_p.person as usize];
        let hh = person.household_id;
        for (k, trip) in plan_p.trips().into_iter().enumerate() {
            let o = prep.activity_nodes.activity(plan_p, k, hh);
            let d = prep.activity_nodes.activity(plan_p, k + 1, hh);
            let parking = if trip.mode == Mode::Drive && los.cbd[trip.to_zone] && trip.to_zone != person.home_zone {
                los.cbd_parking
            } else {
                0.0
            };
            match trip.mode {
                Mode::Drive if o != d => drives.push(DriveTrip {
                    person: person.id,
                    household: hh,
                    depart: trip.depart,
                    origin: o,
                    dest: d,
                    cacc: person.cacc_household,
                    parking,
                }),
                Mode::Drive => trips_out.push(PersonTrip {
                    person: person.id,
                    mode: Mode::Drive,
                    reached: true,
                    leg: None,
                    offnet_distance: 0.0,
                    time: 60.0,
                    fare: 0.0,
                    parking,
                }),
                Mode::Transit => {
                    let (time, fare, dist) = match transit_path_cost(net, o, d, trip.depart, &cfg.cost) {
                        Ok(p) => (p.duration(), p.fare_cost, skims.drive_dist(skims.band_of(trip.depart), trip.from_zone, trip.to_zone)),
                        Err(_) => {
                            let m = net.distance(o, d);
                            (m / cfg.cost.walk_speed, 0.0, m)
                        }
                    };
                    trips_out.push(PersonTrip {
                        person: person.id,
                        mode: Mode::Transit,
                        reached: true,
                        leg: None,
                        offnet_distance: dist,
                        time,
                        fare,
                        parking: 0.0,
                    });
                }
                Mode::Walk => {
                    let m = net.distance(o, d);
                    trips_out.push(PersonTrip {
                        person: person.id,
                        mode: Mode::Walk,
                        reached: true,
                        leg: None,
                        offnet_distance: m,
                        time: m / cfg.cost.walk_speed,
                        fare: 0.0,
                        parking: 0.0,
                    });
                }
                Mode::Tnc => {
                    let mut rng = seed::rng(&[common, seed::tag("scatter"), person.id as u64, k as u64]);
                    let mut jitter = |n: usize| {
                        let (x, y) = net.position(n);
                        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        let r: f64 = cfg.request_scatter * rng.random::<f64>().sqrt();
                        (x + r * a.cos(), y + r * a.sin())
                    };
                    let (po, pd) = (jitter(o), jitter(d));
                    let hour = clock::hour_index(trip.depart);
                    let c = classify_request(net, po, pd, &policy, |a, b| {
                        *fmlm_cache.entry((a, b, hour)).or_insert_with(|| {
                            fmlm_feasible(net, a, b, trip.depart, &cfg.cost, &cfg.tariff, &ride_estimate)
                        })
                    });
                    let (mut tt, mut tf, mut td) = (0.0, 0.0, 0.0);
                    if let Some(opt) = c.fmlm {
                        let (from, to, at) = if opt.first_mile {
                            (opt.stop, d, trip.depart + ride_estimate(o, opt.stop).1)
                        } else {
                            (o, opt.stop, trip.depart)
                        };
                        if let Ok(p) = transit_path_cost(net, from, to, at, &cfg.cost) {
                            tt = p.duration();
                            tf = p.fare_cost;
                            td = net.distance(from, to) * cfg.planning_detour;
                        }
                    }
                    ride_requests.push(TncRequest {
                        id: ride_requests.len() as u32,
                        person: Some(person.id),
                        request_time: trip.depart,
                        service: c.service,
                        region: c.region,
                        pickup: c.pickup,
                        dropoff: c.dropoff,
                        transit_stop: c.fmlm.map(|f| f.stop),
                        cargo: false,
                        subsidized: c.service == ServiceType::Fmlm && policy.fmlm_subsidy,
                        fare: 0.0,
                    });
                    rides.push(RideTrip { person: person.id, transit_time: tt, transit_fare: tf, transit_distance: td });
                }
            }
        }
    }
    let n_rides = ride_requests.len();
    for (i, r) in prep.odd_requests.iter().enumerate() {
        ride_requests.push(TncRequest { id: (n_rides + i) as u32, ..r.clone() });
    }
    let mut requests: Vec<usize> = (0..ride_requests.len()).collect();
    requests.sort_by(|&a, &b| ride_requests[a].request_time.total_cmp(&ride_requests[b].request_time).then(a.cmp(&b)));
    drives.sort_by(|a, b| a.depart.total_cmp(&b.depart).then(a.person.cmp(&b.person)));

    // Simulation state
    let flow = FlowParams {
        dt: cfg.dt,
        cacc_alpha: cfg.cacc_alpha,
        connected_signals: s.signals,
        start_time: HORIZON_START,
        ..FlowParams::default()
    };
    let mut sim = Simulation::new(net, flow);
    let mut operator = FleetOperator::new(policy, prep.tnc_fleet.clone(), HORIZON_START);
    let mut astar = AStar::new().verify_heuristic(false);
    let mut legs: Vec<LegInfo> = Vec::new();
    let mut owners: Vec<Owner> = Vec::new();
    let mut leg_depart: Vec<f64> = Vec::new();
    let mut drive_arrival: Vec<Option<f64>> = vec![None; drives.len()];
    let mut drive_leg: Vec<Option<u64>> = vec![None; drives.len()];
    let mut jobs: BTreeMap<(u64, u64), Job> = BTreeMap::new();
    let mut job_seq = 0u64;
    for (ti, t) in prep.tours.iter().enumerate() {
        jobs.insert((ordered(t.depart), job_seq), Job::Tour(ti, 0));
        job_seq += 1;
    }
    let mut snapshot = sim.prevailing_times();
    let mut next_snapshot = HORIZON_START + cfg.snapshot_interval;
    let (mut next_drive, mut next_request) = (0usize, 0usize);
    let end = HORIZON_END + cfg.drain;

    struct Loader<'a> {
        net: &'a Network,
        legs: &'a mut Vec<LegInfo>,
        owners: &'a mut Vec<Owner>,
        leg_depart: &'a mut Vec<f64>,
    }
    impl Loader<'_> {
        fn load(&mut self, sim: &mut Simulation, path: Vec<usize>, dest: usize, info: LegInfo, owner: Owner, cacc: bool) -> u64 {
            let tag = self.legs.len() as u64;
            self.legs.push(info);
            self.owners.push(owner);
            self.leg_depart.push(sim.now());
            debug_assert_eq!(self.net.links[*path.last().unwrap()].to, dest);
            sim.load(VehicleSpec { tag, cacc, path, destination: dest });
            tag
        }
    }
    let fleet_info = |operator: &FleetOperator, vid: u32, occupied: bool| {
        let v = &operator.vehicles[vid as usize];
        LegInfo {
            kind: if v.cargo { LegKind::Cargo } else { LegKind::Tnc },
            class: VehicleClass::Ld,
            powertrain: v.powertrain,
            productive: occupied,
            person: None,
        }
    };

    loop {
        let now = sim.now();
        if now >= end {
            break;
        }
        let c = sim.counts();
        if now >= HORIZON_END && c.on_network == 0 && c.buffered == 0 && jobs.is_empty() {
            break;
        }
        if now >= next_snapshot {
            snapshot = sim.prevailing_times();
            next_snapshot = now + cfg.snapshot_interval;
        }
        let q = RouteQuery { net, table: hist, prevailing: Some(&snapshot), tolls, params: &cfg.cost, iteration };
        let mut loader = Loader { net, legs: &mut legs, owners: &mut owners, leg_depart: &mut leg_depart };

        while next_drive < drives.len() && drives[next_drive].depart <= now {
            let d = &drives[next_drive];
            if let Ok(p) = astar.road_path(&q, d.origin, d.dest, now, Mode::Drive) {
                let info = LegInfo {
                    kind: LegKind::Private,
                    class: VehicleClass::Ld,
                    powertrain: prep.household_pt[d.household as usize],
                    productive: true,
                    person: Some(d.person),
                };
                drive_leg[next_drive] = Some(loader.load(&mut sim, p.links, d.dest, info, Owner::Private(next_drive), d.cacc));
            }
            next_drive += 1;
        }
        while next_request < requests.len() && ride_requests[requests[next_request]].request_time <= now {
            operator.submit(ride_requests[requests[next_request]].clone());
            next_request += 1;
        }
        let mut orders: Vec<LegOrder> = operator.tick(now, net);
        while let Some((&key, _)) = jobs.first_key_value() {
            if f64::from_bits(key.0) > now {
                break;
            }
            let job = jobs.remove(&key).unwrap();
            match job {
                Job::Fleet(o) => orders.push(o),
                Job::Tour(ti, k) => {
                    let tour = &prep.tours[ti];
                    let from = if k == 0 { tour.depot_node } else { tour.stops[k - 1].node };
                    let to = if k < tour.stops.len() { tour.stops[k].node } else { tour.depot_node };
                    let info = LegInfo {
                        kind: prep.tour_kinds[ti],
                        class: tour.class,
                        powertrain: prep.tour_pt[ti],
                        productive: k < tour.stops.len(),
                        person: None,
                    };
                    let routed = if from == to { None } else { astar.road_path(&q, from, to, now, Mode::Drive).ok() };
                    match routed {
                        Some(p) if !p.links.is_empty() => {
                            loader.load(&mut sim, p.links, to, info, Owner::Tour(ti, k), false);
                        }
                        _ if k < tour.stops.len() => {
                            // already there (or unreachable): serve and move on
                            let next = now.max(tour.stops[k].arrival) + tour_service(prep, ti, cfg);
                            jobs.insert((ordered(next), job_seq), Job::Tour(ti, k + 1));
                            job_seq += 1;
                        }
                        _ => {}
                    }
                }
            }
        }
        let mut pending: std::collections::VecDeque<LegOrder> = orders.into();
        while let Some(o) = pending.pop_front() {
            let routed = if o.from == o.to { None } else { astar.road_path(&q, o.from, o.to, now, Mode::Drive).ok() };
            match routed {
                Some(p) if !p.links.is_empty() => {
                    let info = fleet_info(&operator, o.vehicle, o.occupied);
                    loader.load(&mut sim, p.links, o.to, info, Owner::Fleet(o.vehicle), false);
                }
                _ => pending.extend(operator.on_arrival(o.vehicle, o.to, now, net)),
            }
        }

        let out = sim.step();
        for a in out.arrivals {
            match owners[a.tag as usize] {
                Owner::Private(i) => drive_arrival[i] = Some(a.time),
                Owner::Fleet(vid) => {
                    for o in operator.on_arrival(vid, a.node, a.time, net) {
                        jobs.insert((ordered(o.depart), job_seq), Job::Fleet(o));
                        job_seq += 1;
                    }
                }
                Owner::Tour(ti, k) => {
                    let tour = &prep.tours[ti];
                    if k < tour.stops.len() {
                        let next = a.time.max(tour.stops[k].arrival) + tour_service(prep, ti, cfg);
                        jobs.insert((ordered(next), job_seq), Job::Tour(ti, k + 1));
                        job_seq += 1;
                    }
                }
            }
        }
        for rr in out.route_requests {
            let q = RouteQuery { net, table: hist, prevailing: Some(&snapshot), tolls, params: &cfg.cost, iteration };
            let from = net.links[rr.link].to;
            let dest = sim.vehicle(rr.slot).map(|v| v.destination).unwrap_or(from);
            if let Ok(p) = astar.road_path(&q, from, dest, sim.now(), Mode::Drive) {
                sim.reroute(rr.slot, p.links, dest);
            }
        }
    }

    let t_end = sim.now();
    let exits = sim.take_exits();
    let open: Vec<OpenTraversal> = sim
        .active_vehicles()
        .filter_map(|(_, v)| v.link.map(|l| OpenTraversal { tag: v.tag, link: l, t_in: v.entered_link_at, t_end }))
        .collect();
    let counts = sim.counts();

    // Convergence: experienced private-drive costs against shortest paths
    // on the travel times this day produced.
    let measured = sim.measured_times();
    let hourly = sim.measured_hourly_times();
    let vot_s = cfg.cost.dollars_per_second();
    let mut leg_toll = vec![0.0; legs.len()];
    for e in &exits {
        if let Some(tp) = tolls {
            leg_toll[e.tag as usize] += tp.toll(e.link, e.t_in);
        }
    }
    let mut experienced_table = hist.clone();
    for (l, row) in measured.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            if let Some(v) = v {
                experienced_table.set(l, p, *v);
            }
        }
    }
    let gq = RouteQuery { net, table: &experienced_table, prevailing: None, tolls, params: &cfg.cost, iteration };
    let mut gap_pairs = Vec::new();
    for (i, d) in drives.iter().enumerate() {
        let (Some(tag), Some(arr)) = (drive_leg[i], drive_arrival[i]) else { continue };
        let dep = leg_depart[tag as usize];
        let experienced = (arr - dep) * vot_s + leg_toll[tag as usize];
        if let Ok(p) = astar.road_path(&gq, d.origin, d.dest, dep, Mode::Drive) {
            gap_pairs.push((experienced, p.cost()));
        }
    }

    for (i, d) in drives.iter().enumerate() {
        let (time, reached) = match (drive_leg[i], drive_arrival[i]) {
            (Some(_), Some(a)) => (a - d.depart, true),
            (Some(_), None) => (t_end - d.depart, false),
            (None, _) => (0.0, false),
        };
        trips_out.push(PersonTrip {
            person: d.person,
            mode: Mode::Drive,
            reached,
            leg: drive_leg[i],
            offnet_distance: 0.0,
            time,
            fare: 0.0,
            parking: d.parking,
        });
    }

    // Ride-hailing: fares on delivered rides, waits and transit parts.
    let served: HashMap<u32, (f64, f64)> =
        operator.served.iter().map(|r| (r.request, (r.pickup_time, r.dropoff_time))).collect();
    let tnc_unserved = (0..n_rides).filter(|id| !served.contains_key(&(*id as u32))).count();
    for (id, r) in rides.iter().enumerate() {
        let req = &ride_requests[id];
        match served.get(&(id as u32)) {
            Some(&(pick, drop)) => {
                let meters = net.distance(req.pickup, req.dropoff) * cfg.planning_detour;
                let fare = operator.ledger.charge(&cfg.tariff, req.id, meters, drop - pick, req.subsidized);
                trips_out.push(PersonTrip {
                    person: r.person,
                    mode: Mode::Tnc,
                    reached: true,
                    leg: None,
                    offnet_distance: r.transit_distance,
                    time: drop - req.request_time + r.transit_time,
                    fare: fare + r.transit_fare,
                    parking: 0.0,
                });
            }
            None => trips_out.push(PersonTrip {
                person: r.person,
                mode: Mode::Tnc,
                reached: false,
                leg: None,
                offnet_distance: 0.0,
                time: cfg.tnc.expiry,
                fare: 0.0,
                parking: 0.0,
            }),
        }
    }
    trips_out.sort_by(|a, b| a.person.cmp(&b.person));

    let log = DayLog {
        legs,
        exits,
        open,
        trips: trips_out,
        fmlm_subsidy: operator.ledger.subsidy(),
        overnight_freight_tours: prep
            .tours
            .iter()
            .filter(|t| matches!(t.class, VehicleClass::Md | VehicleClass::Hd) && t.is_overnight())
            .count(),
        mep_by_zone: mep_by_zone(net, skims, cfg, &prep.household_pt),
    };
    Day {
        log,
        gap_pairs,
        measured,
        hourly,
        fleet_events: operator.events,
        tnc_requests: n_rides,
        tnc_unserved,
        substituted: removals.len(),
        loaded: counts.loaded,
        arrived: counts.arrived,
        on_network: counts.on_network + counts.buffered,
    }
}

fn tour_service(prep: &Prepared, ti: usize, cfg: &EngineConfig) -> f64 {
    match prep.tour_kinds[ti] {
        LegKind::Parcel => cfg.parcel_tours.service_time,
        _ => cfg.freight_tours.service_time,
    }
}

/// Accessibility per origin zone at the AM-peak skim band.
fn mep_by_zone(net: &Network, skims: &Skims, cfg: &EngineConfig, household_pt: &[Powertrain]) -> Vec<f64> {
    let table = PowertrainTable::shipped();
    let z = skims.zones;
    let band = skims.band_of(8.0 * clock::HOUR);
    let n = household_pt.len().max(1) as f64;
    let share = |pt: Powertrain| household_pt.iter().filter(|&&p| p == pt).count() as f64 / n;
    let shares = [(Powertrain::Ice, share(Powertrain::Ice)), (Powertrain::Hev, share(Powertrain::Hev)), (Powertrain::Bev, share(Powertrain::Bev))];
    let opp: Vec<f64> = net.zones.iter().map(|zn| zn.opportunities).collect();
    (0..z)
        .map(|o| {
            let mut times = vec![Vec::with_capacity(z); 3];
            let mut energy = vec![Vec::with_capacity(z); 3];
            for d in 0..z {
                let dist = skims.drive_dist(band, o, d);
                let dt = skims.drive_time(band, o, d);
                let speed = if dt > 0.0 { dist / dt } else { 10.0 };
                let kwh: f64 = shares
                    .iter()
                    .map(|&(pt, w)| w * dist / 1000.0 * table.lookup(VehicleClass::Ld, pt, speed).intensity_kwh_per_km)
                    .sum();
                times[0].push(dt / 60.0);
                energy[0].push(kwh);
                times[1].push(skims.transit_time(band, o, d) / 60.0);
                energy[1].push(cfg.transit_kwh_per_pkm * dist / 1000.0);
                times[2].push(skims.walk_time(o, d) / 60.0);
                energy[2].push(0.0);
            }
            mep_simplified(&opp, &times, &energy, cfg.mep)
        })
        .collect()
}

/// Run one plan to convergence: plan activities on the current skims,
/// simulate the day, fold the measured times into the historical table,
/// and stop when the relative gap drops below the threshold or the
/// iteration budget is spent. Metrics come from the final day.
pub fn run_scenario(plan: &ScenarioPlan, inp: &ScenarioInputs, cfg: &EngineConfig) -> Result<ScenarioOutcome, ScenarioError> {
    if plan.max_iterations == 0 || !(plan.gap_threshold.is_finite() && plan.gap_threshold >= 0.0) {
        return Err(ScenarioError::Invalid(format!(
            "plan needs at least one iteration and a finite gap threshold (got {} and {})",
            plan.max_iterations, plan.gap_threshold
        )));
    }
    let prep = prepare(plan, inp, cfg)?;
    let net = &prep.net;
    let tolls = prep.priced.then_some(&prep.tolls);
    let bands = SkimBand::defaults();
    let mut hist = TravelTimeTable::free_flow(net);
    let mut gaps = Vec::new();
    let max_it = plan.max_iterations;
    let mut last: Option<Day> = None;
    let mut converged = false;
    for k in 0..max_it {
        let q = RouteQuery { net, table: &hist, prevailing: None, tolls, params: &cfg.cost, iteration: k };
        let skims = compute_skims(&q, &bands);
        let day = simulate_day(&prep, plan, cfg, &hist, &skims, k);
        let gap = relative_gap(&day.gap_pairs);
        log::debug!("plan seed {:#x} iteration {}: gap {:.4}", plan.seed, k + 1, gap);
        gaps.push(gap);
        hist.update_historical(&day.measured, k);
        last = Some(day);
        if gap < plan.gap_threshold {
            converged = true;
            break;
        }
    }
    let day = last.expect("at least one iteration");
    let inputs = MetricInputs {
        settings: &plan.settings,
        replication: plan.replication,
        seed: plan.seed,
        population: &prep.population,
        net,
        table: inp.table,
        tolls: &prep.tolls,
        costs: cfg.metric_costs,
    };
    let mut row = aggregate_metrics(&day.log, &inputs)?;
    row.iterations = gaps.len() as u32;
    row.converged = converged;
    row.gap = *gaps.last().unwrap();
    if !converged {
        log::info!("plan seed {:#x} stopped at gap {:.4} after {} iterations", plan.seed, row.gap, row.iterations);
    }
    let log = ScenarioLog {
        gaps,
        transit_edits: prep.transit_edits.clone(),
        tours: prep.tours.clone(),
        rejected_shipments: prep.rejected,
        freight_shipments: prep.freight_shipments,
        ohd_shipments: prep.ohd_shipments,
        substituted_trips: day.substituted,
        telecommuters: prep.telecommuters,
        tnc_requests: day.tnc_requests,
        tnc_unserved: day.tnc_unserved,
        fleet_events: day.fleet_events,
        hourly_times: day.hourly,
        loaded: day.loaded,
        arrived: day.arrived,
        still_on_network: day.on_network,
    };
    Ok(ScenarioOutcome { row, log })
}
