//! Brute-force expected deliveries for a scenario.
//!
//! Works on the scenario's names with plain list scans and shares nothing
//! with the dispatch models: subscription state is replayed step by step and
//! every emit is checked against each subscriber's accepted set.

use crate::message::{ComponentId, DeliveryLog, DeliveryRecord, HandlerId, MessageTypeId, ModelTag};
use crate::scenario::{Action, HandlerSpec, Scenario, ScenarioError};

fn index_of(names: &[String], name: &str) -> usize {
    let mut i = 0;
    while i < names.len() {
        if names[i] == name {
            return i;
        }
        i += 1;
    }
    panic!("`{name}` not declared; scenario was validated")
}

/// Whether `handler` accepts `msg_type`, walking its kind chain if it has one.
fn accepts(scenario: &Scenario, handler: usize, msg_type: &str) -> bool {
    match &scenario.handlers[handler].spec {
        HandlerSpec::Accepts(types) => types.iter().any(|t| t == msg_type),
        HandlerSpec::Kind(kind) => {
            let mut current = Some(kind.clone());
            while let Some(name) = current {
                let decl = scenario
                    .kinds
                    .iter()
                    .find(|k| k.name == name)
                    .expect("validated kind");
                if decl.accepts.iter().any(|t| t == msg_type) {
                    return true;
                }
                current = decl.parent.clone();
            }
            false
        }
    }
}

/// Expected log of the direct model (and, projected to receiver and seq, of
/// every other model that can run the scenario).
pub fn oracle_deliveries(scenario: &Scenario) -> Result<DeliveryLog, ScenarioError> {
    scenario.validate()?;
    let handler_names: Vec<String> = scenario.handlers.iter().map(|h| h.name.clone()).collect();

    // (component, handler) pairs, kept in per-component subscription order
    let mut subscribed: Vec<(usize, usize)> = Vec::new();
    let subscribe = |subscribed: &mut Vec<(usize, usize)>, c: usize, h: usize| {
        if !subscribed.contains(&(c, h)) {
            subscribed.push((c, h));
        }
    };
    for (c, h) in &scenario.subscriptions {
        subscribe(&mut subscribed, index_of(&scenario.components, c), index_of(&handler_names, h));
    }

    let mut records = Vec::new();
    let mut pending: Vec<DeliveryRecord> = Vec::new();
    let mut seq = 0u64;
    for action in &scenario.script {
        match action {
            Action::Emit { component, msg_type, .. } | Action::Post { component, msg_type, .. } => {
                let c = index_of(&scenario.components, component);
                let t = index_of(&scenario.types, msg_type);
                for &(sc, h) in &subscribed {
                    if sc == c && accepts(scenario, h, msg_type) {
                        let record = DeliveryRecord {
                            seq,
                            msg_type: MessageTypeId(t as u32),
                            sender: ComponentId(c as u64),
                            receiver: HandlerId(h as u64),
                            model: ModelTag::Direct,
                        };
                        if matches!(action, Action::Emit { .. }) {
                            records.push(record);
                        } else {
                            pending.push(record);
                        }
                    }
                }
                seq += 1;
            }
            Action::Subscribe { component, handler } => {
                let c = index_of(&scenario.components, component);
                let h = index_of(&handler_names, handler);
                subscribe(&mut subscribed, c, h);
            }
            Action::Unsubscribe { component, handler } => {
                let c = index_of(&scenario.components, component);
                let h = index_of(&handler_names, handler);
                subscribed.retain(|&pair| pair != (c, h));
            }
            Action::Pump => records.append(&mut pending),
        }
    }
    Ok(DeliveryLog::from(records))
}

/// First index where two logs differ, with the records on each side.
pub fn first_divergence<'a>(
    expected: &'a [DeliveryRecord],
    actual: &'a [DeliveryRecord],
    same: impl Fn(&DeliveryRecord, &DeliveryRecord) -> bool,
) -> Option<(usize, Option<&'a DeliveryRecord>, Option<&'a DeliveryRecord>)> {
    let n = expected.len().max(actual.len());
    (0..n).find_map(|i| {
        let (e, a) = (expected.get(i), actual.get(i));
        match (e, a) {
            (Some(x), Some(y)) if same(x, y) => None,
            _ => Some((i, e, a)),
        }
    })
}
