//! Ride-hailing and freight operators.

mod freight;
mod tariff;
mod tnc;

pub use freight::{
    assign_ohd, build_tours, generate_receivers, generate_shipments, nearest_neighbor_order, overnight_trip_ratio,
    read_depots, tour_length, two_opt, DeliveryTour, Depot, DepotError, DepotKind, FreightSpec, Receiver, Rejection,
    Shipment, TourParams, TourPlan, TourStop,
};
pub use tariff::{fare_cents, FareRecord, SubsidyLedger, Tariff};
pub use tnc::{
    classify_request, dispatch, fmlm_feasible, write_fleet_events, Classification, FleetEvent, FleetEventKind,
    FleetOperator, FmlmOption, LegOrder, PlannedStop, Region, ServedRide, ServiceType, StopKind, TncPolicy, TncRequest,
    TncState, TncVehicle,
};
