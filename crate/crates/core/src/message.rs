//! Identity types, the message-type registry and delivery records shared by
//! every dispatch model.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use thiserror::Error;

/// Dense identifier of a message kind, assigned `0..n` in registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageTypeId(pub u32);

impl MessageTypeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for MessageTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

macro_rules! entity_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u64);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

entity_id!(
    /// A message-producing entity.
    ComponentId
);
entity_id!(
    /// A message-receiving entity (handler, window receiver, kind instance).
    HandlerId
);

/// Monotone id counter. Ids are never recycled.
#[derive(Debug, Default, Clone)]
pub(crate) struct IdCounter(u64);

impl IdCounter {
    pub(crate) fn next(&mut self) -> u64 {
        let id = self.0;
        self.0 += 1;
        id
    }

    pub(crate) fn issued(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("message type name is empty")]
    EmptyName,
    #[error("message type `{0}` is already registered")]
    DuplicateName(String),
}

/// Name → id table for message kinds. Ids are dense and never reassigned.
#[derive(Debug, Clone, Default)]
pub struct MessageTypeRegistry {
    names: Vec<String>,
    by_name: HashMap<String, MessageTypeId>,
}

impl MessageTypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry from names, in order. Fails on the first bad name.
    pub fn with_types<I, S>(names: I) -> Result<Self, RegistryError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut registry = Self::new();
        for name in names {
            registry.register(name.as_ref())?;
        }
        Ok(registry)
    }

    pub fn register(&mut self, name: &str) -> Result<MessageTypeId, RegistryError> {
        if name.is_empty() {
            return Err(RegistryError::EmptyName);
        }
        if self.by_name.contains_key(name) {
            return Err(RegistryError::DuplicateName(name.to_owned()));
        }
        let id = MessageTypeId(self.names.len() as u32);
        self.names.push(name.to_owned());
        self.by_name.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Option<MessageTypeId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: MessageTypeId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    #[inline]
    pub fn contains(&self, id: MessageTypeId) -> bool {
        id.index() < self.names.len()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MessageTypeId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (MessageTypeId(i as u32), n.as_str()))
    }
}

/// The unit flowing through every model. The payload is opaque to routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_type: MessageTypeId,
    pub payload: Bytes,
    pub sender: ComponentId,
    pub seq: u64,
}

/// Which dispatch model produced a delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelTag {
    Direct,
    Os,
    MsgMap,
    Vtable,
}

impl ModelTag {
    pub const ALL: [ModelTag; 4] = [
        ModelTag::Direct,
        ModelTag::Os,
        ModelTag::MsgMap,
        ModelTag::Vtable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Direct => "direct",
            ModelTag::Os => "os",
            ModelTag::MsgMap => "msgmap",
            ModelTag::Vtable => "vtable",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown model `{0}` (expected direct, os, msgmap or vtable)")]
pub struct UnknownModel(pub String);

impl FromStr for ModelTag {
    type Err = UnknownModel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelTag::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownModel(s.to_owned()))
    }
}

/// One callback invocation, as observed by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub seq: u64,
    pub msg_type: MessageTypeId,
    pub sender: ComponentId,
    pub receiver: HandlerId,
    pub model: ModelTag,
}

impl DeliveryRecord {
    pub(crate) fn of(msg: &Message, receiver: HandlerId, model: ModelTag) -> Self {
        Self {
            seq: msg.seq,
            msg_type: msg.msg_type,
            sender: msg.sender,
            receiver,
            model,
        }
    }
}

impl fmt::Display for DeliveryRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.seq, self.msg_type, self.sender, self.receiver, self.model
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct LogParseError {
    pub line: usize,
    pub reason: String,
}

impl FromStr for DeliveryRecord {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        let [seq, ty, sender, receiver, model] = fields.as_slice() else {
            return Err(format!(
                "expected 5 fields `seq type sender receiver model`, found {}",
                fields.len()
            ));
        };
        let int = |field: &str, what: &str| {
            field
                .parse::<u64>()
                .map_err(|_| format!("invalid {what} `{field}`"))
        };
        Ok(DeliveryRecord {
            seq: int(seq, "seq")?,
            msg_type: MessageTypeId(
                ty.parse::<u32>()
                    .map_err(|_| format!("invalid type `{ty}`"))?,
            ),
            sender: ComponentId(int(sender, "sender")?),
            receiver: HandlerId(int(receiver, "receiver")?),
            model: model.parse().map_err(|e: UnknownModel| e.to_string())?,
        })
    }
}

/// Ordered delivery records, in real invocation order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeliveryLog {
    pub records: Vec<DeliveryRecord>,
}

impl DeliveryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DeliveryRecord> {
        self.records.iter()
    }

    /// `(receiver, seq)` pairs, the projection used for cross-model checks.
    pub fn receiver_seq(&self) -> Vec<(HandlerId, u64)> {
        self.records.iter().map(|r| (r.receiver, r.seq)).collect()
    }

    /// One `seq type sender receiver model` line per record.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse_lines(text: &str) -> Result<Self, LogParseError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = line.parse().map_err(|reason| LogParseError {
                line: i + 1,
                reason,
            })?;
            records.push(record);
        }
        Ok(Self { records })
    }
}

impl From<Vec<DeliveryRecord>> for DeliveryLog {
    fn from(records: Vec<DeliveryRecord>) -> Self {
        Self { records }
    }
}

impl<'a> IntoIterator for &'a DeliveryLog {
    type Item = &'a DeliveryRecord;
    type IntoIter = std::slice::Iter<'a, DeliveryRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_registration_is_zero() {
        let mut reg = MessageTypeRegistry::new();
        assert_eq!(reg.register("CLICK"), Ok(MessageTypeId(0)));
    }

    #[test]
    fn registration_is_dense() {
        let mut reg = MessageTypeRegistry::with_types(["A", "B", "C"]).unwrap();
        assert_eq!(reg.register("D"), Ok(MessageTypeId(3)));
        assert_eq!(reg.len(), 4);
        assert_eq!(reg.lookup("B"), Some(MessageTypeId(1)));
    }

    #[test]
    fn duplicate_and_empty_names_rejected() {
        let mut reg = MessageTypeRegistry::new();
        reg.register("CLICK").unwrap();
        assert_eq!(
            reg.register("CLICK"),
            Err(RegistryError::DuplicateName("CLICK".into()))
        );
        assert_eq!(reg.register(""), Err(RegistryError::EmptyName));
        // names are case-sensitive
        assert_eq!(reg.register("click"), Ok(MessageTypeId(1)));
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn lookup_absent() {
        let mut reg = MessageTypeRegistry::new();
        assert_eq!(reg.register("CLICK"), Ok(MessageTypeId(0)));
        assert_eq!(reg.lookup("CLICK"), Some(MessageTypeId(0)));
        assert_eq!(reg.lookup("MOVE"), None);
    }

    #[test]
    fn log_line_format() {
        let log = DeliveryLog::from(vec![DeliveryRecord {
            seq: 7,
            msg_type: MessageTypeId(2),
            sender: ComponentId(1),
            receiver: HandlerId(3),
            model: ModelTag::MsgMap,
        }]);
        assert_eq!(log.to_lines(), "7 2 1 3 msgmap\n");
        assert_eq!(DeliveryLog::parse_lines(&log.to_lines()).unwrap(), log);
        let err = DeliveryLog::parse_lines("1 2 3 4 direct\n1 2 3\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    proptest! {
        #[test]
        fn ids_are_exactly_zero_to_n(names in proptest::collection::vec("[a-z]{1,4}", 0..40)) {
            let mut reg = MessageTypeRegistry::new();
            let mut ids = Vec::new();
            for name in &names {
                if let Ok(id) = reg.register(name) {
                    prop_assert_eq!(reg.lookup(name), Some(id));
                    ids.push(id.0);
                }
            }
            let expected: Vec<u32> = (0..ids.len() as u32).collect();
            prop_assert_eq!(ids, expected);
        }

        #[test]
        fn log_lines_round_trip(raw in proptest::collection::vec((any::<u64>(), any::<u32>(), any::<u64>(), any::<u64>(), 0usize..4), 0..20)) {
            let log = DeliveryLog::from(raw.into_iter().map(|(seq, t, s, r, m)| DeliveryRecord {
                seq,
                msg_type: MessageTypeId(t),
                sender: ComponentId(s),
                receiver: HandlerId(r),
                model: ModelTag::ALL[m],
            }).collect::<Vec<_>>());
            prop_assert_eq!(DeliveryLog::parse_lines(&log.to_lines()).unwrap(), log);
        }
    }
}
