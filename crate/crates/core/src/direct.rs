//! Direct delivery: components hold subscriber lists, handlers hold inbound
//! message tables, and `emit` calls accepting subscribers synchronously with
//! no queue or handle lookup in between.
//!
//! Handlers are immutable once created, so callbacks run against a
//! [`DirectContext`] that borrows the handler set shared and the rest of the
//! bus mutably. A callback may emit, subscribe or unsubscribe through it.

use std::fmt;

use bytes::Bytes;
use smallvec::SmallVec;

use crate::error::DispatchError;
use crate::message::{
    ComponentId, DeliveryRecord, HandlerId, IdCounter, Message, MessageTypeId,
    MessageTypeRegistry, ModelTag,
};

/// Maximum nesting of `emit` calls, counting the outermost call as depth 1.
pub const MAX_EMIT_DEPTH: usize = 64;

pub type DirectCallback =
    Box<dyn Fn(&mut DirectContext<'_>, &Message) -> Result<(), DispatchError> + Send + Sync>;

/// Accepted message types of one handler, each bound to one callback.
///
/// Stored densely by type id; ids past the end (including types registered
/// after the table was built) are simply not members.
pub struct HandlerTable {
    slots: Box<[Option<DirectCallback>]>,
}

impl HandlerTable {
    pub fn new(bindings: Vec<(MessageTypeId, DirectCallback)>) -> Result<Self, DispatchError> {
        let len = bindings
            .iter()
            .map(|(t, _)| t.index() + 1)
            .max()
            .unwrap_or(0);
        let mut slots: Vec<Option<DirectCallback>> = (0..len).map(|_| None).collect();
        for (ty, cb) in bindings {
            let slot = &mut slots[ty.index()];
            if slot.is_some() {
                return Err(DispatchError::DuplicateBinding(ty));
            }
            *slot = Some(cb);
        }
        Ok(Self {
            slots: slots.into_boxed_slice(),
        })
    }

    #[inline]
    pub fn get(&self, ty: MessageTypeId) -> Option<&DirectCallback> {
        self.slots.get(ty.index()).and_then(Option::as_ref)
    }

    #[inline]
    pub fn accepts(&self, ty: MessageTypeId) -> bool {
        self.get(ty).is_some()
    }

    pub fn accepted_types(&self) -> impl Iterator<Item = MessageTypeId> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| MessageTypeId(i as u32))
    }
}

impl fmt::Debug for HandlerTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.accepted_types()).finish()
    }
}

#[derive(Debug)]
pub struct DirectHandler {
    pub id: HandlerId,
    pub table: HandlerTable,
}

#[derive(Debug, Clone)]
pub struct DirectComponent {
    pub id: ComponentId,
    subscribers: Vec<HandlerId>,
}

impl DirectComponent {
    pub fn subscribers(&self) -> &[HandlerId] {
        &self.subscribers
    }
}

/// Everything on the bus except the handler set.
#[derive(Debug, Default)]
struct BusState {
    registry: MessageTypeRegistry,
    components: Vec<DirectComponent>,
    next_seq: u64,
    depth: usize,
    log: Option<Vec<DeliveryRecord>>,
}

#[derive(Debug, Default)]
pub struct DirectBus {
    handlers: Vec<DirectHandler>,
    component_ids: IdCounter,
    handler_ids: IdCounter,
    state: BusState,
}

impl DirectBus {
    pub fn new(registry: MessageTypeRegistry) -> Self {
        Self {
            state: BusState {
                registry,
                ..BusState::default()
            },
            ..Self::default()
        }
    }

    /// Records every delivery into an internal log, see [`DirectBus::take_log`].
    pub fn with_logging(mut self) -> Self {
        self.state.log = Some(Vec::new());
        self
    }

    pub fn registry(&self) -> &MessageTypeRegistry {
        &self.state.registry
    }

    pub fn registry_mut(&mut self) -> &mut MessageTypeRegistry {
        &mut self.state.registry
    }

    pub fn take_log(&mut self) -> Vec<DeliveryRecord> {
        self.state.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn create_component(&mut self) -> ComponentId {
        let id = ComponentId(self.component_ids.next());
        self.state.components.push(DirectComponent {
            id,
            subscribers: Vec::new(),
        });
        id
    }

    pub fn create_handler(
        &mut self,
        bindings: Vec<(MessageTypeId, DirectCallback)>,
    ) -> Result<HandlerId, DispatchError> {
        let table = HandlerTable::new(bindings)?;
        let id = HandlerId(self.handler_ids.next());
        self.handlers.push(DirectHandler { id, table });
        Ok(id)
    }

    pub fn component(&self, id: ComponentId) -> Option<&DirectComponent> {
        self.state.components.get(id.index())
    }

    pub fn handler(&self, id: HandlerId) -> Option<&DirectHandler> {
        self.handlers.get(id.index())
    }

    pub fn subscribe(&mut self, component: ComponentId, handler: HandlerId) -> Result<bool, DispatchError> {
        self.context().subscribe(component, handler)
    }

    pub fn unsubscribe(&mut self, component: ComponentId, handler: HandlerId) -> Result<bool, DispatchError> {
        self.context().unsubscribe(component, handler)
    }

    /// Delivers one message to every accepting subscriber of `sender`, in
    /// subscription order. Returns the number of callbacks invoked.
    pub fn emit(
        &mut self,
        sender: ComponentId,
        msg_type: MessageTypeId,
        payload: Bytes,
    ) -> Result<usize, DispatchError> {
        emit_in(&self.handlers, &mut self.state, sender, msg_type, payload)
    }

    fn context(&mut self) -> DirectContext<'_> {
        DirectContext {
            handlers: &self.handlers,
            state: &mut self.state,
        }
    }
}

/// View of a bus handed to callbacks during an emit.
pub struct DirectContext<'a> {
    handlers: &'a [DirectHandler],
    state: &'a mut BusState,
}

impl DirectContext<'_> {
    pub fn emit(
        &mut self,
        sender: ComponentId,
        msg_type: MessageTypeId,
        payload: Bytes,
    ) -> Result<usize, DispatchError> {
        emit_in(self.handlers, self.state, sender, msg_type, payload)
    }

    pub fn subscribe(&mut self, component: ComponentId, handler: HandlerId) -> Result<bool, DispatchError> {
        self.check_handler(handler)?;
        let comp = self.component_mut(component)?;
        if comp.subscribers.contains(&handler) {
            return Ok(false);
        }
        comp.subscribers.push(handler);
        Ok(true)
    }

    pub fn unsubscribe(&mut self, component: ComponentId, handler: HandlerId) -> Result<bool, DispatchError> {
        self.check_handler(handler)?;
        let comp = self.component_mut(component)?;
        match comp.subscribers.iter().position(|h| *h == handler) {
            Some(pos) => {
                comp.subscribers.remove(pos);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Current nesting depth of emit calls (0 outside any emit).
    pub fn depth(&self) -> usize {
        self.state.depth
    }

    fn check_handler(&self, handler: HandlerId) -> Result<(), DispatchError> {
        if handler.index() < self.handlers.len() {
            Ok(())
        } else {
            Err(DispatchError::UnknownHandler(handler))
        }
    }

    fn component_mut(&mut self, id: ComponentId) -> Result<&mut DirectComponent, DispatchError> {
        self.state
            .components
            .get_mut(id.index())
            .ok_or(DispatchError::UnknownComponent(id))
    }
}

fn emit_in(
    handlers: &[DirectHandler],
    state: &mut BusState,
    sender: ComponentId,
    msg_type: MessageTypeId,
    payload: Bytes,
) -> Result<usize, DispatchError> {
    let component = state
        .components
        .get(sender.index())
        .ok_or(DispatchError::UnknownComponent(sender))?;
    if !state.registry.contains(msg_type) {
        return Err(DispatchError::UnregisteredType(msg_type));
    }
    if state.depth >= MAX_EMIT_DEPTH {
        return Err(DispatchError::ReentrancyLimitExceeded {
            limit: MAX_EMIT_DEPTH,
        });
    }
    // Subscription changes made by callbacks apply from the next emit on.
    let snapshot: SmallVec<[HandlerId; 8]> = SmallVec::from_slice(&component.subscribers);

    let msg = Message {
        msg_type,
        payload,
        sender,
        seq: state.next_seq,
    };
    state.next_seq += 1;

    state.depth += 1;
    let mut ctx = DirectContext { handlers, state };
    let mut delivered = 0;
    let mut result = Ok(());
    for id in snapshot {
        let handler = &handlers[id.index()];
        if let Some(cb) = handler.table.get(msg_type) {
            if let Some(log) = ctx.state.log.as_mut() {
                log.push(DeliveryRecord::of(&msg, id, ModelTag::Direct));
            }
            delivered += 1;
            result = cb(&mut ctx, &msg);
            if result.is_err() {
                break;
            }
        }
    }
    ctx.state.depth -= 1;
    result.map(|()| delivered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    fn noop() -> DirectCallback {
        Box::new(|_, _| Ok(()))
    }

    fn bus(types: usize) -> DirectBus {
        let names: Vec<String> = (0..types).map(|i| format!("T{i}")).collect();
        DirectBus::new(MessageTypeRegistry::with_types(names).unwrap()).with_logging()
    }

    fn receivers(log: &[DeliveryRecord]) -> Vec<u64> {
        log.iter().map(|r| r.receiver.0).collect()
    }

    #[test]
    fn components_get_fresh_ids() {
        let mut bus = bus(1);
        let a = bus.create_component();
        let b = bus.create_component();
        assert_eq!(a, ComponentId(0));
        assert_ne!(a, b);
        assert!(bus.component(a).unwrap().subscribers().is_empty());
        assert_eq!(bus.emit(a, MessageTypeId(0), Bytes::new()), Ok(0));
    }

    #[test]
    fn handler_tables() {
        let mut bus = bus(3);
        let empty = bus.create_handler(vec![]).unwrap();
        let h = bus
            .create_handler(vec![(MessageTypeId(0), noop()), (MessageTypeId(2), noop())])
            .unwrap();
        assert_eq!(bus.handler(empty).unwrap().table.accepted_types().count(), 0);
        let accepted: Vec<_> = bus.handler(h).unwrap().table.accepted_types().collect();
        assert_eq!(accepted, vec![MessageTypeId(0), MessageTypeId(2)]);
        assert_eq!(
            bus.create_handler(vec![(MessageTypeId(1), noop()), (MessageTypeId(1), noop())])
                .unwrap_err(),
            DispatchError::DuplicateBinding(MessageTypeId(1))
        );
    }

    #[test]
    fn subscribe_is_idempotent_and_ordered() {
        let mut bus = bus(1);
        let c = bus.create_component();
        let h1 = bus.create_handler(vec![]).unwrap();
        let h2 = bus.create_handler(vec![]).unwrap();
        assert_eq!(bus.subscribe(c, h1), Ok(true));
        assert_eq!(bus.subscribe(c, h1), Ok(false));
        assert_eq!(bus.component(c).unwrap().subscribers(), &[h1]);
        assert_eq!(bus.subscribe(c, h2), Ok(true));
        assert_eq!(bus.component(c).unwrap().subscribers(), &[h1, h2]);
        assert_eq!(
            bus.subscribe(ComponentId(9), h1),
            Err(DispatchError::UnknownComponent(ComponentId(9)))
        );
        assert_eq!(
            bus.subscribe(c, HandlerId(9)),
            Err(DispatchError::UnknownHandler(HandlerId(9)))
        );
    }

    #[test]
    fn unsubscribe_preserves_order() {
        let mut bus = bus(1);
        let c = bus.create_component();
        let hs: Vec<_> = (0..3).map(|_| bus.create_handler(vec![]).unwrap()).collect();
        assert_eq!(bus.unsubscribe(c, hs[0]), Ok(false));
        for &h in &hs {
            bus.subscribe(c, h).unwrap();
        }
        assert_eq!(bus.unsubscribe(c, hs[1]), Ok(true));
        assert_eq!(bus.component(c).unwrap().subscribers(), &[hs[0], hs[2]]);
        assert_eq!(bus.unsubscribe(c, hs[0]), Ok(true));
        assert_eq!(bus.unsubscribe(c, hs[2]), Ok(true));
        assert!(bus.component(c).unwrap().subscribers().is_empty());
    }

    #[test]
    fn emit_filters_by_table() {
        let mut bus = bus(2);
        let c = bus.create_component();
        let h1 = bus.create_handler(vec![(MessageTypeId(0), noop())]).unwrap();
        let h2 = bus.create_handler(vec![(MessageTypeId(1), noop())]).unwrap();
        bus.subscribe(c, h1).unwrap();
        bus.subscribe(c, h2).unwrap();
        assert_eq!(bus.emit(c, MessageTypeId(0), Bytes::new()), Ok(1));
        assert_eq!(receivers(&bus.take_log()), vec![h1.0]);
    }

    #[test]
    fn type_registered_after_handlers_is_filtered() {
        let mut bus = bus(2);
        let c = bus.create_component();
        let h = bus
            .create_handler(vec![(MessageTypeId(0), noop()), (MessageTypeId(1), noop())])
            .unwrap();
        bus.subscribe(c, h).unwrap();
        let late = bus.registry_mut().register("LATE").unwrap();
        assert_eq!(bus.emit(c, late, Bytes::new()), Ok(0));
        assert!(bus.take_log().is_empty());
    }

    #[test]
    fn emit_errors() {
        let mut bus = bus(1);
        let c = bus.create_component();
        assert_eq!(
            bus.emit(ComponentId(5), MessageTypeId(0), Bytes::new()),
            Err(DispatchError::UnknownComponent(ComponentId(5)))
        );
        assert_eq!(
            bus.emit(c, MessageTypeId(1), Bytes::new()),
            Err(DispatchError::UnregisteredType(MessageTypeId(1)))
        );
    }

    #[test]
    fn seq_increases_per_emit() {
        let mut bus = bus(1);
        let c = bus.create_component();
        let h1 = bus.create_handler(vec![(MessageTypeId(0), noop())]).unwrap();
        let h2 = bus.create_handler(vec![(MessageTypeId(0), noop())]).unwrap();
        bus.subscribe(c, h1).unwrap();
        bus.subscribe(c, h2).unwrap();
        bus.emit(c, MessageTypeId(0), Bytes::new()).unwrap();
        bus.emit(c, MessageTypeId(0), Bytes::new()).unwrap();
        let seqs: Vec<u64> = bus.take_log().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![0, 0, 1, 1]);
    }

    #[test]
    fn mutation_during_emit_applies_next_time() {
        let mut bus = bus(1);
        let c = bus.create_component();
        let late = bus.create_handler(vec![(MessageTypeId(0), noop())]).unwrap();
        // h0 adds `late` and removes h2 while the first emit is running
        let h0 = bus
            .create_handler(vec![(
                MessageTypeId(0),
                Box::new(move |ctx: &mut DirectContext<'_>, msg: &Message| {
                    ctx.subscribe(msg.sender, late)?;
                    ctx.unsubscribe(msg.sender, HandlerId(2))?;
                    Ok(())
                }),
            )])
            .unwrap();
        let h2 = bus.create_handler(vec![(MessageTypeId(0), noop())]).unwrap();
        assert_eq!(h2, HandlerId(2));
        bus.subscribe(c, h0).unwrap();
        bus.subscribe(c, h2).unwrap();

        assert_eq!(bus.emit(c, MessageTypeId(0), Bytes::new()), Ok(2));
        assert_eq!(receivers(&bus.take_log()), vec![h0.0, h2.0]);
        assert_eq!(bus.emit(c, MessageTypeId(0), Bytes::new()), Ok(2));
        assert_eq!(receivers(&bus.take_log()), vec![h0.0, late.0]);
    }

    fn chain_bus(levels: usize) -> (DirectBus, ComponentId) {
        let mut bus = bus(1);
        let c = bus.create_component();
        let h = bus
            .create_handler(vec![(
                MessageTypeId(0),
                Box::new(move |ctx: &mut DirectContext<'_>, msg: &Message| {
                    if ctx.depth() < levels {
                        ctx.emit(msg.sender, msg.msg_type, Bytes::new())?;
                    }
                    Ok(())
                }),
            )])
            .unwrap();
        bus.subscribe(c, h).unwrap();
        (bus, c)
    }

    #[test]
    fn reentrancy_limit() {
        let (mut bus, c) = chain_bus(MAX_EMIT_DEPTH);
        assert_eq!(bus.emit(c, MessageTypeId(0), Bytes::new()), Ok(1));
        assert_eq!(bus.take_log().len(), MAX_EMIT_DEPTH);

        let (mut bus, c) = chain_bus(MAX_EMIT_DEPTH + 1);
        assert_eq!(
            bus.emit(c, MessageTypeId(0), Bytes::new()),
            Err(DispatchError::ReentrancyLimitExceeded { limit: 64 })
        );
        // depth is restored after the failure
        assert_eq!(bus.context().depth(), 0);
    }

    #[test]
    fn callback_failure_stops_the_emit() {
        let mut bus = bus(1);
        let c = bus.create_component();
        let calls = Arc::new(AtomicUsize::new(0));
        let failing = bus
            .create_handler(vec![(
                MessageTypeId(0),
                Box::new(|_: &mut DirectContext<'_>, _: &Message| Err(DispatchError::Callback("boom".into()))),
            )])
            .unwrap();
        let counted = {
            let calls = calls.clone();
            bus.create_handler(vec![(
                MessageTypeId(0),
                Box::new(move |_: &mut DirectContext<'_>, _: &Message| {
                    calls.fetch_add(1, Ordering::Relaxed);
                    Ok(())
                }),
            )])
            .unwrap()
        };
        bus.subscribe(c, failing).unwrap();
        bus.subscribe(c, counted).unwrap();
        assert_eq!(
            bus.emit(c, MessageTypeId(0), Bytes::new()),
            Err(DispatchError::Callback("boom".into()))
        );
        assert_eq!(calls.load(Ordering::Relaxed), 0);
        assert_eq!(receivers(&bus.take_log()), vec![failing.0]);
    }

    #[test]
    fn callbacks_see_the_message() {
        let mut bus = bus(1);
        let c = bus.create_component();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let h = {
            let seen = seen.clone();
            bus.create_handler(vec![(
                MessageTypeId(0),
                Box::new(move |_: &mut DirectContext<'_>, m: &Message| {
                    seen.lock().unwrap().push(m.clone());
                    Ok(())
                }),
            )])
            .unwrap()
        };
        bus.subscribe(c, h).unwrap();
        bus.emit(c, MessageTypeId(0), Bytes::from_static(b"hi")).unwrap();
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].payload.as_ref(), b"hi");
        assert_eq!(seen[0].sender, c);
        assert_eq!(seen[0].seq, 0);
    }

    #[test]
    fn bus_is_send() {
        fn assert_send<T: Send>() {}
        assert_send::<DirectBus>();
    }
}
