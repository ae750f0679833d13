use thiserror::Error;

use crate::message::{ComponentId, HandlerId, MessageTypeId};
use crate::msgmap::KindId;
use crate::os::WindowHandle;

/// Errors raised by the dispatch models.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("unknown component {0}")]
    UnknownComponent(ComponentId),
    #[error("unknown handler {0}")]
    UnknownHandler(HandlerId),
    #[error("message type {0} is not registered")]
    UnregisteredType(MessageTypeId),
    #[error("message type {0} is bound more than once")]
    DuplicateBinding(MessageTypeId),
    #[error("nested emit exceeds the reentrancy limit of {limit}")]
    ReentrancyLimitExceeded { limit: usize },
    #[error("unknown window handle {0}")]
    UnknownHandle(WindowHandle),
    #[error("unknown handler kind {0}")]
    UnknownKind(KindId),
    #[error("unknown parent kind {0}")]
    UnknownParent(KindId),
    #[error("unknown kind instance {0}")]
    UnknownInstance(HandlerId),
    #[error("message type {0} appears twice in the event catalog")]
    DuplicateSlot(MessageTypeId),
    #[error("slot index {index} is outside a catalog of {len} slots")]
    InvalidSlot { index: usize, len: usize },
    #[error("callback failed: {0}")]
    Callback(String),
}
