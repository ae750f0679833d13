//! Fixed-catalog override dispatch.
//!
//! The framework seals a catalog of predefined event slots. Handlers fill
//! slots with overrides; the rest keep the built-in no-op. Types outside the
//! catalog cannot be delivered at all.

use std::fmt;
use std::sync::Arc;

use crate::error::DispatchError;
use crate::message::{
    DeliveryRecord, HandlerId, IdCounter, Message, MessageTypeId, MessageTypeRegistry, ModelTag,
};

pub type SlotFn = Arc<dyn Fn(HandlerId, &Message) + Send + Sync>;

const NO_SLOT: u32 = u32::MAX;

/// Sealed, ordered list of event slots.
#[derive(Debug, Clone)]
pub struct PredefinedEventCatalog {
    slots: Box<[MessageTypeId]>,
    // type id -> slot index, NO_SLOT when absent
    slot_of: Box<[u32]>,
}

impl PredefinedEventCatalog {
    pub fn build(types: &[MessageTypeId]) -> Result<Self, DispatchError> {
        let len = types.iter().map(|t| t.index() + 1).max().unwrap_or(0);
        let mut slot_of = vec![NO_SLOT; len];
        for (i, ty) in types.iter().enumerate() {
            let entry = &mut slot_of[ty.index()];
            if *entry != NO_SLOT {
                return Err(DispatchError::DuplicateSlot(*ty));
            }
            *entry = i as u32;
        }
        Ok(Self {
            slots: types.into(),
            slot_of: slot_of.into_boxed_slice(),
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[MessageTypeId] {
        &self.slots
    }

    #[inline]
    pub fn slot_of(&self, ty: MessageTypeId) -> Option<usize> {
        match self.slot_of.get(ty.index()) {
            Some(&s) if s != NO_SLOT => Some(s as usize),
            _ => None,
        }
    }

    /// A handler with every slot at its default.
    pub fn new_handler(&self, id: HandlerId) -> TypedHandler {
        TypedHandler {
            id,
            slots: vec![Slot::Default; self.len()].into_boxed_slice(),
        }
    }

    /// Runs the handler's slot for `msg`.
    #[inline]
    pub fn dispatch(&self, handler: &TypedHandler, msg: &Message) -> DispatchOutcome {
        let Some(index) = self.slot_of(msg.msg_type) else {
            return DispatchOutcome::OutsideCatalog;
        };
        match handler.slots.get(index) {
            Some(Slot::Override(f)) => {
                f(handler.id, msg);
                DispatchOutcome::Overridden
            }
            _ => {
                default_slot(handler.id, msg);
                DispatchOutcome::Default
            }
        }
    }
}

fn default_slot(_: HandlerId, _: &Message) {}

#[derive(Clone, Default)]
enum Slot {
    #[default]
    Default,
    Override(SlotFn),
}

pub struct TypedHandler {
    pub id: HandlerId,
    slots: Box<[Slot]>,
}

impl TypedHandler {
    pub fn override_slot(&mut self, index: usize, f: SlotFn) -> Result<(), DispatchError> {
        let len = self.slots.len();
        let slot = self
            .slots
            .get_mut(index)
            .ok_or(DispatchError::InvalidSlot { index, len })?;
        *slot = Slot::Override(f);
        Ok(())
    }

    pub fn is_overridden(&self, index: usize) -> bool {
        matches!(self.slots.get(index), Some(Slot::Override(_)))
    }
}

impl fmt::Debug for TypedHandler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let overridden: Vec<usize> = (0..self.slots.len()).filter(|&i| self.is_overridden(i)).collect();
        f.debug_struct("TypedHandler")
            .field("id", &self.id)
            .field("overridden", &overridden)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DispatchOutcome {
    Overridden,
    Default,
    OutsideCatalog,
}

/// A catalog plus the handlers built against it.
#[derive(Debug)]
pub struct VtableModel {
    registry: MessageTypeRegistry,
    catalog: PredefinedEventCatalog,
    handlers: Vec<TypedHandler>,
    handler_ids: IdCounter,
    log: Option<Vec<DeliveryRecord>>,
}

impl VtableModel {
    pub fn new(registry: MessageTypeRegistry, catalog: PredefinedEventCatalog) -> Self {
        Self {
            registry,
            catalog,
            handlers: Vec::new(),
            handler_ids: IdCounter::default(),
            log: None,
        }
    }

    pub fn with_logging(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn catalog(&self) -> &PredefinedEventCatalog {
        &self.catalog
    }

    pub fn registry_mut(&mut self) -> &mut MessageTypeRegistry {
        &mut self.registry
    }

    pub fn take_log(&mut self) -> Vec<DeliveryRecord> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Overrides are keyed by message type; each must be a catalog slot.
    pub fn create_handler(&mut self, overrides: Vec<(MessageTypeId, SlotFn)>) -> Result<HandlerId, DispatchError> {
        let id = HandlerId(self.handler_ids.issued());
        let mut handler = self.catalog.new_handler(id);
        for (ty, f) in overrides {
            let index = self.catalog.slot_of(ty).ok_or(DispatchError::InvalidSlot {
                index: ty.index(),
                len: self.catalog.len(),
            })?;
            if handler.is_overridden(index) {
                return Err(DispatchError::DuplicateBinding(ty));
            }
            handler.override_slot(index, f)?;
        }
        self.handler_ids.next();
        self.handlers.push(handler);
        Ok(id)
    }

    pub fn handler(&self, id: HandlerId) -> Option<&TypedHandler> {
        self.handlers.get(id.index())
    }

    pub fn dispatch_typed(&mut self, handler: HandlerId, msg: &Message) -> Result<DispatchOutcome, DispatchError> {
        if !self.registry.contains(msg.msg_type) {
            return Err(DispatchError::UnregisteredType(msg.msg_type));
        }
        let h = self
            .handlers
            .get(handler.index())
            .ok_or(DispatchError::UnknownHandler(handler))?;
        let outcome = self.catalog.dispatch(h, msg);
        if outcome == DispatchOutcome::Overridden {
            if let Some(log) = self.log.as_mut() {
                log.push(DeliveryRecord::of(msg, handler, ModelTag::Vtable));
            }
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bytes::Bytes;
    use std::sync::atomic::{AtomicUsize, Ordering};

    use crate::message::ComponentId;

    fn msg(ty: u32) -> Message {
        Message {
            msg_type: MessageTypeId(ty),
            payload: Bytes::new(),
            sender: ComponentId(0),
            seq: 0,
        }
    }

    fn ids(v: &[u32]) -> Vec<MessageTypeId> {
        v.iter().copied().map(MessageTypeId).collect()
    }

    #[test]
    fn empty_catalog_delivers_nothing() {
        let cat = PredefinedEventCatalog::build(&[]).unwrap();
        let h = cat.new_handler(HandlerId(0));
        for t in 0..4 {
            assert_eq!(cat.dispatch(&h, &msg(t)), DispatchOutcome::OutsideCatalog);
        }
    }

    #[test]
    fn slots_keep_given_order() {
        let cat = PredefinedEventCatalog::build(&ids(&[2, 0, 1])).unwrap();
        assert_eq!(cat.len(), 3);
        assert_eq!(cat.slot_of(MessageTypeId(2)), Some(0));
        assert_eq!(cat.slot_of(MessageTypeId(0)), Some(1));
        assert_eq!(cat.slot_of(MessageTypeId(1)), Some(2));
        assert_eq!(cat.slot_of(MessageTypeId(3)), None);
        assert_eq!(
            PredefinedEventCatalog::build(&ids(&[0, 0])).unwrap_err(),
            DispatchError::DuplicateSlot(MessageTypeId(0))
        );
    }

    #[test]
    fn three_outcomes() {
        let cat = PredefinedEventCatalog::build(&ids(&[0, 1])).unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let mut h = cat.new_handler(HandlerId(0));
        let c = calls.clone();
        h.override_slot(0, Arc::new(move |_, _| {
            c.fetch_add(1, Ordering::Relaxed);
        }))
        .unwrap();
        assert_eq!(cat.dispatch(&h, &msg(0)), DispatchOutcome::Overridden);
        assert_eq!(cat.dispatch(&h, &msg(1)), DispatchOutcome::Default);
        assert_eq!(cat.dispatch(&h, &msg(7)), DispatchOutcome::OutsideCatalog);
        assert_eq!(calls.load(Ordering::Relaxed), 1);
        assert_eq!(
            h.override_slot(2, Arc::new(|_, _| {})).unwrap_err(),
            DispatchError::InvalidSlot { index: 2, len: 2 }
        );
    }

    #[test]
    fn model_logs_overrides_only() {
        let reg = MessageTypeRegistry::with_types(["A", "B", "C"]).unwrap();
        let cat = PredefinedEventCatalog::build(&ids(&[0, 1])).unwrap();
        let mut m = VtableModel::new(reg, cat).with_logging();
        let h = m.create_handler(vec![(MessageTypeId(1), Arc::new(|_, _| {}))]).unwrap();
        assert_eq!(m.dispatch_typed(h, &msg(0)), Ok(DispatchOutcome::Default));
        assert_eq!(m.dispatch_typed(h, &msg(1)), Ok(DispatchOutcome::Overridden));
        assert_eq!(m.dispatch_typed(h, &msg(2)), Ok(DispatchOutcome::OutsideCatalog));
        assert_eq!(m.dispatch_typed(h, &msg(3)), Err(DispatchError::UnregisteredType(MessageTypeId(3))));
        assert_eq!(m.dispatch_typed(HandlerId(4), &msg(0)), Err(DispatchError::UnknownHandler(HandlerId(4))));
        assert_eq!(m.take_log().len(), 1);
        assert!(m.create_handler(vec![(MessageTypeId(2), Arc::new(|_, _| {}))]).is_err());
        // a failed creation does not consume an id
        assert_eq!(m.create_handler(vec![]), Ok(HandlerId(1)));
    }
}
