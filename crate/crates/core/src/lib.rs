//! Models and tooling for tracking vehicles with roadside BLE beacons.
//!
//! A concealed receiver on a vehicle logs the identifiers of beacons it
//! drives past and reports them by SMS once it regains GSM coverage. This
//! crate models each link in that chain: radio range under obstruction,
//! the chance of hearing a beacon during a pass, beacon battery life,
//! beacon siting along a road, and the receiver-to-map reporting pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod power;
pub mod preset;
pub mod protocol;
pub mod rendezvous;
pub mod rf_model;
pub mod rng;
pub mod roadplan;
pub mod sim;
