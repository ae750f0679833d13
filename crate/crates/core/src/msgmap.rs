//! Cascading static message maps.
//!
//! Each handler kind owns one map shared by all of its instances. Dispatch
//! walks from the instance's kind up the parent chain and the first map that
//! binds the type wins. Bindings are not virtual: a child kind only changes
//! behaviour for a type by registering its own entry.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::DispatchError;
use crate::message::{
    DeliveryRecord, HandlerId, IdCounter, Message, MessageTypeId, MessageTypeRegistry, ModelTag,
};
use crate::os::{OsContext, WindowProc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KindId(pub u32);

impl fmt::Display for KindId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Receives the id of the instance the message was dispatched to.
pub type MapCallback = Arc<dyn Fn(HandlerId, &Message) + Send + Sync>;

pub struct HandlerKind {
    pub id: KindId,
    pub parent: Option<KindId>,
    map: HashMap<MessageTypeId, MapCallback>,
}

impl HandlerKind {
    pub fn binds(&self, ty: MessageTypeId) -> bool {
        self.map.contains_key(&ty)
    }
}

impl fmt::Debug for HandlerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut types: Vec<_> = self.map.keys().collect();
        types.sort();
        f.debug_struct("HandlerKind")
            .field("id", &self.id)
            .field("parent", &self.parent)
            .field("map", &types)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KindInstance {
    pub instance_id: HandlerId,
    pub kind: KindId,
}

/// Where a lookup was satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub kind: KindId,
    /// 0 for the instance's own kind, 1 for its parent, ...
    pub distance: usize,
}

#[derive(Debug, Default)]
pub struct MessageMapModel {
    registry: MessageTypeRegistry,
    kinds: Vec<HandlerKind>,
    instances: Vec<KindInstance>,
    instance_ids: IdCounter,
    unhandled: u64,
    log: Option<Vec<DeliveryRecord>>,
}

impl MessageMapModel {
    pub fn new(registry: MessageTypeRegistry) -> Self {
        Self {
            registry,
            ..Self::default()
        }
    }

    pub fn with_logging(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn registry(&self) -> &MessageTypeRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut MessageTypeRegistry {
        &mut self.registry
    }

    pub fn take_log(&mut self) -> Vec<DeliveryRecord> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Messages that no map in the chain bound.
    pub fn unhandled(&self) -> u64 {
        self.unhandled
    }

    pub fn kind(&self, id: KindId) -> Option<&HandlerKind> {
        self.kinds.get(id.0 as usize)
    }

    pub fn instance(&self, id: HandlerId) -> Option<&KindInstance> {
        self.instances.get(id.index())
    }

    /// Parents must already exist, which keeps every chain acyclic.
    pub fn define_kind(
        &mut self,
        parent: Option<KindId>,
        entries: Vec<(MessageTypeId, MapCallback)>,
    ) -> Result<KindId, DispatchError> {
        if let Some(p) = parent {
            if self.kind(p).is_none() {
                return Err(DispatchError::UnknownParent(p));
            }
        }
        let mut map = HashMap::with_capacity(entries.len());
        for (ty, cb) in entries {
            if map.insert(ty, cb).is_some() {
                return Err(DispatchError::DuplicateBinding(ty));
            }
        }
        let id = KindId(self.kinds.len() as u32);
        self.kinds.push(HandlerKind { id, parent, map });
        Ok(id)
    }

    /// Adds a binding to a kind's own map; every instance sees it at once.
    pub fn add_map_entry(
        &mut self,
        kind: KindId,
        msg_type: MessageTypeId,
        callback: MapCallback,
    ) -> Result<(), DispatchError> {
        let k = self
            .kinds
            .get_mut(kind.0 as usize)
            .ok_or(DispatchError::UnknownKind(kind))?;
        if k.map.contains_key(&msg_type) {
            return Err(DispatchError::DuplicateBinding(msg_type));
        }
        k.map.insert(msg_type, callback);
        Ok(())
    }

    pub fn create_instance(&mut self, kind: KindId) -> Result<HandlerId, DispatchError> {
        if self.kind(kind).is_none() {
            return Err(DispatchError::UnknownKind(kind));
        }
        let instance_id = HandlerId(self.instance_ids.next());
        self.instances.push(KindInstance { instance_id, kind });
        Ok(instance_id)
    }

    /// Nearest kind in the instance's chain that binds `msg_type`.
    pub fn resolve(
        &self,
        instance: HandlerId,
        msg_type: MessageTypeId,
    ) -> Result<Option<(Resolution, &MapCallback)>, DispatchError> {
        let inst = self
            .instance(instance)
            .ok_or(DispatchError::UnknownInstance(instance))?;
        Ok(cascade(&self.kinds, inst.kind, msg_type))
    }

    pub fn dispatch_via_map(&mut self, instance: HandlerId, msg: &Message) -> Result<bool, DispatchError> {
        let inst = *self
            .instance(instance)
            .ok_or(DispatchError::UnknownInstance(instance))?;
        if !self.registry.contains(msg.msg_type) {
            return Err(DispatchError::UnregisteredType(msg.msg_type));
        }
        match cascade(&self.kinds, inst.kind, msg.msg_type) {
            Some((_, cb)) => {
                if let Some(log) = self.log.as_mut() {
                    log.push(DeliveryRecord::of(msg, instance, ModelTag::MsgMap));
                }
                cb(instance, msg);
                Ok(true)
            }
            None => {
                self.unhandled += 1;
                Ok(false)
            }
        }
    }
}

fn cascade(kinds: &[HandlerKind], start: KindId, msg_type: MessageTypeId) -> Option<(Resolution, &MapCallback)> {
    let mut current = Some(start);
    let mut distance = 0;
    while let Some(id) = current {
        let kind = &kinds[id.0 as usize];
        if let Some(cb) = kind.map.get(&msg_type) {
            return Some((Resolution { kind: id, distance }, cb));
        }
        current = kind.parent;
        distance += 1;
    }
    None
}

/// A kind instance exposed as a window, so messages reach it through the
/// emulated OS path before the map cascade runs.
pub struct MapWindowInstance {
    model: Arc<MessageMapModel>,
    instance: HandlerId,
}

impl MapWindowInstance {
    pub fn new(model: Arc<MessageMapModel>, instance: HandlerId) -> Result<Self, DispatchError> {
        model
            .instance(instance)
            .ok_or(DispatchError::UnknownInstance(instance))?;
        Ok(Self { model, instance })
    }
}

impl WindowProc for MapWindowInstance {
    fn receiver(&self) -> HandlerId {
        self.instance
    }

    fn window_proc(&self, ctx: &mut OsContext<'_>, msg: &Message) -> Result<bool, DispatchError> {
        ctx.count_map_lookup();
        match self.model.resolve(self.instance, msg.msg_type)? {
            Some((_, cb)) => {
                ctx.record_delivery(self.instance, msg);
                cb(self.instance, msg);
                Ok(true)
            }
            None => Ok(false),
        }
    }
}
