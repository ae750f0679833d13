//! In-process message dispatch between components.
//!
//! [`direct`] is the direct delivery model: a component keeps an ordered
//! list of subscribed handlers, each handler keeps a table of the message
//! types it accepts, and emitting calls the accepting subscribers in place.
//! Three reference models route the same messages differently:
//!
//! * [`os`]: handle registry, window procedure and per-receiver map, with an
//!   optional FIFO queue and pump.
//! * [`msgmap`]: per-kind static maps shared by all instances, resolved by
//!   walking the parent chain.
//! * [`vtable`]: a sealed catalog of predefined slots that handlers override.
//!
//! [`scenario`] plays scripted topologies against any model and [`oracle`]
//! computes the expected deliveries independently. [`bench`] times the
//! models against each other.

pub mod bench;
pub mod cli;
pub mod direct;
pub mod error;
pub mod message;
pub mod msgmap;
pub mod oracle;
pub mod os;
pub mod scenario;
pub mod vtable;

pub use direct::{DirectBus, DirectContext, MAX_EMIT_DEPTH};
pub use error::DispatchError;
pub use message::{
    ComponentId, DeliveryLog, DeliveryRecord, HandlerId, Message, MessageTypeId, MessageTypeRegistry,
    ModelTag, RegistryError,
};
pub use msgmap::MessageMapModel;
pub use oracle::oracle_deliveries;
pub use os::{WindowHandle, WindowSystem};
pub use scenario::{parse_scenario, run_scenario, Scenario, ScenarioError};
pub use vtable::{DispatchOutcome, PredefinedEventCatalog, VtableModel};
