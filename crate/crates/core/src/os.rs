//! Emulated OS-mediated delivery.
//!
//! Every receiver is reachable only through an opaque [`WindowHandle`]. A
//! delivery resolves the handle in a hashed registry, calls the window
//! procedure through a trait object, and the procedure looks the message
//! type up in the receiver's own hashed map. `post` queues instead, and
//! `pump` drains the queue through the same chain.
//!
//! Handles start at 0 and are never recycled.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use bytes::Bytes;

use crate::direct::MAX_EMIT_DEPTH;
use crate::error::DispatchError;
use crate::message::{
    ComponentId, DeliveryRecord, HandlerId, IdCounter, Message, MessageTypeId,
    MessageTypeRegistry, ModelTag,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowHandle(pub u64);

impl fmt::Display for WindowHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// The receiving end of a window: its procedure is reached by indirect call.
pub trait WindowProc: Send {
    fn receiver(&self) -> HandlerId;

    /// Returns `Ok(false)` when the message falls through to the default sink.
    fn window_proc(&self, ctx: &mut OsContext<'_>, msg: &Message) -> Result<bool, DispatchError>;
}

pub type OsCallback =
    Box<dyn Fn(&mut OsContext<'_>, &Message) -> Result<(), DispatchError> + Send + Sync>;

/// Receiver with a hashed message map of its own.
pub struct MapWindow {
    id: HandlerId,
    map: HashMap<MessageTypeId, OsCallback>,
}

impl MapWindow {
    pub fn new(id: HandlerId, bindings: Vec<(MessageTypeId, OsCallback)>) -> Result<Self, DispatchError> {
        let mut map = HashMap::with_capacity(bindings.len());
        for (ty, cb) in bindings {
            if map.insert(ty, cb).is_some() {
                return Err(DispatchError::DuplicateBinding(ty));
            }
        }
        Ok(Self { id, map })
    }
}

impl WindowProc for MapWindow {
    fn receiver(&self) -> HandlerId {
        self.id
    }

    fn window_proc(&self, ctx: &mut OsContext<'_>, msg: &Message) -> Result<bool, DispatchError> {
        ctx.count_map_lookup();
        match self.map.get(&msg.msg_type) {
            Some(cb) => {
                ctx.record_delivery(self.id, msg);
                cb(ctx, msg)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

/// Per-operation counters for the indirection chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IndirectionStats {
    pub registry_lookups: u64,
    pub thunk_calls: u64,
    pub map_lookups: u64,
    pub delivered: u64,
    pub unhandled: u64,
}

impl IndirectionStats {
    pub fn lookups(&self) -> u64 {
        self.registry_lookups + self.map_lookups
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PumpFailure {
    pub handle: WindowHandle,
    pub seq: u64,
    pub error: DispatchError,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PumpReport {
    /// Entries dequeued, including ones that failed.
    pub processed: usize,
    pub failures: Vec<PumpFailure>,
}

#[derive(Default)]
struct OsState {
    registry: MessageTypeRegistry,
    queue: VecDeque<(WindowHandle, Message)>,
    next_seq: u64,
    depth: usize,
    stats: IndirectionStats,
    log: Option<Vec<DeliveryRecord>>,
}

#[derive(Default)]
pub struct WindowSystem {
    windows: HashMap<WindowHandle, Box<dyn WindowProc>>,
    handles: IdCounter,
    handler_ids: IdCounter,
    state: OsState,
}

impl fmt::Debug for WindowSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WindowSystem")
            .field("windows", &self.windows.len())
            .field("queued", &self.state.queue.len())
            .field("stats", &self.state.stats)
            .finish()
    }
}

impl WindowSystem {
    pub fn new(registry: MessageTypeRegistry) -> Self {
        Self {
            state: OsState {
                registry,
                ..OsState::default()
            },
            ..Self::default()
        }
    }

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

    pub fn stats(&self) -> IndirectionStats {
        self.state.stats
    }

    pub fn reset_stats(&mut self) {
        self.state.stats = IndirectionStats::default();
    }

    /// Registers a receiver with its own message map under a fresh handle.
    pub fn register_window(
        &mut self,
        bindings: Vec<(MessageTypeId, OsCallback)>,
    ) -> Result<(WindowHandle, HandlerId), DispatchError> {
        let id = HandlerId(self.handler_ids.next());
        let window = MapWindow::new(id, bindings)?;
        Ok((self.register_window_proc(Box::new(window)), id))
    }

    pub fn register_window_proc(&mut self, proc_: Box<dyn WindowProc>) -> WindowHandle {
        let handle = WindowHandle(self.handles.next());
        self.windows.insert(handle, proc_);
        handle
    }

    pub fn unregister_window(&mut self, handle: WindowHandle) -> bool {
        self.windows.remove(&handle).is_some()
    }

    pub fn resolve(&self, handle: WindowHandle) -> Option<HandlerId> {
        self.windows.get(&handle).map(|w| w.receiver())
    }

    /// Stamps the next sequence number, for callers that fan one message out
    /// to several handles.
    pub fn next_seq(&mut self) -> u64 {
        let seq = self.state.next_seq;
        self.state.next_seq += 1;
        seq
    }

    pub fn queue_len(&self) -> usize {
        self.state.queue.len()
    }

    pub fn queued(&self) -> impl Iterator<Item = &(WindowHandle, Message)> {
        self.state.queue.iter()
    }

    pub fn send(
        &mut self,
        sender: ComponentId,
        handle: WindowHandle,
        msg_type: MessageTypeId,
        payload: Bytes,
    ) -> Result<bool, DispatchError> {
        self.context().send(sender, handle, msg_type, payload)
    }

    pub fn send_message(&mut self, handle: WindowHandle, msg: Message) -> Result<bool, DispatchError> {
        self.context().send_message(handle, msg)
    }

    pub fn post(
        &mut self,
        sender: ComponentId,
        handle: WindowHandle,
        msg_type: MessageTypeId,
        payload: Bytes,
    ) -> Result<(), DispatchError> {
        self.context().post(sender, handle, msg_type, payload)
    }

    pub fn post_message(&mut self, handle: WindowHandle, msg: Message) -> Result<(), DispatchError> {
        self.context().post_message(handle, msg)
    }

    /// Drains the queue in FIFO order, including entries posted while
    /// draining. A failing entry is recorded and skipped.
    pub fn pump(&mut self) -> PumpReport {
        let mut report = PumpReport::default();
        while let Some((handle, msg)) = self.state.queue.pop_front() {
            report.processed += 1;
            let seq = msg.seq;
            if let Err(error) = deliver(&self.windows, &mut self.state, handle, &msg) {
                report.failures.push(PumpFailure { handle, seq, error });
            }
        }
        report
    }

    fn context(&mut self) -> OsContext<'_> {
        OsContext {
            windows: &self.windows,
            state: &mut self.state,
        }
    }
}

/// View of the window system handed to window procedures and callbacks.
pub struct OsContext<'a> {
    windows: &'a HashMap<WindowHandle, Box<dyn WindowProc>>,
    state: &'a mut OsState,
}

impl OsContext<'_> {
    pub fn send(
        &mut self,
        sender: ComponentId,
        handle: WindowHandle,
        msg_type: MessageTypeId,
        payload: Bytes,
    ) -> Result<bool, DispatchError> {
        let msg = self.stamp(sender, msg_type, payload)?;
        deliver(self.windows, self.state, handle, &msg)
    }

    pub fn send_message(&mut self, handle: WindowHandle, msg: Message) -> Result<bool, DispatchError> {
        self.check_type(msg.msg_type)?;
        deliver(self.windows, self.state, handle, &msg)
    }

    pub fn post(
        &mut self,
        sender: ComponentId,
        handle: WindowHandle,
        msg_type: MessageTypeId,
        payload: Bytes,
    ) -> Result<(), DispatchError> {
        let msg = self.stamp(sender, msg_type, payload)?;
        self.state.queue.push_back((handle, msg));
        Ok(())
    }

    pub fn post_message(&mut self, handle: WindowHandle, msg: Message) -> Result<(), DispatchError> {
        self.check_type(msg.msg_type)?;
        self.state.queue.push_back((handle, msg));
        Ok(())
    }

    pub fn count_map_lookup(&mut self) {
        self.state.stats.map_lookups += 1;
    }

    pub fn record_delivery(&mut self, receiver: HandlerId, msg: &Message) {
        self.state.stats.delivered += 1;
        if let Some(log) = self.state.log.as_mut() {
            log.push(DeliveryRecord::of(msg, receiver, ModelTag::Os));
        }
    }

    fn check_type(&self, ty: MessageTypeId) -> Result<(), DispatchError> {
        if self.state.registry.contains(ty) {
            Ok(())
        } else {
            Err(DispatchError::UnregisteredType(ty))
        }
    }

    fn stamp(&mut self, sender: ComponentId, msg_type: MessageTypeId, payload: Bytes) -> Result<Message, DispatchError> {
        self.check_type(msg_type)?;
        let seq = self.state.next_seq;
        self.state.next_seq += 1;
        Ok(Message {
            msg_type,
            payload,
            sender,
            seq,
        })
    }
}

fn deliver(
    windows: &HashMap<WindowHandle, Box<dyn WindowProc>>,
    state: &mut OsState,
    handle: WindowHandle,
    msg: &Message,
) -> Result<bool, DispatchError> {
    state.stats.registry_lookups += 1;
    let window = windows.get(&handle).ok_or(DispatchError::UnknownHandle(handle))?;
    if state.depth >= MAX_EMIT_DEPTH {
        return Err(DispatchError::ReentrancyLimitExceeded {
            limit: MAX_EMIT_DEPTH,
        });
    }
    state.depth += 1;
    state.stats.thunk_calls += 1;
    let mut ctx = OsContext { windows, state };
    let result = window.window_proc(&mut ctx, msg);
    ctx.state.depth -= 1;
    if let Ok(false) = result {
        ctx.state.stats.unhandled += 1;
    }
    result
}
