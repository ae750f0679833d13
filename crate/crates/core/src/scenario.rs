//! Declarative scenarios and a runner that plays them against any model.
//!
//! # Format
//!
//! UTF-8, line oriented. `#` starts a comment line. A line consisting of one
//! of the section keys followed by `:` opens that section; every other
//! non-blank line is an entry of the current section. Each section may appear
//! once, in any order; a missing section is empty.
//!
//! ```text
//! types:
//!   CLICK            # one or more names per line
//!   MOVE KEY
//! components:
//!   button
//! kinds:
//!   base: CLICK      # kind NAME [< PARENT] : TYPE*
//!   special < base: KEY
//! handlers:
//!   log: CLICK MOVE  # handler NAME : TYPE*
//!   widget @ special # handler NAME @ KIND
//! subscriptions:
//!   button -> log
//! script:
//!   emit button CLICK 0aff   # emit COMPONENT TYPE [HEX-PAYLOAD]
//!   subscribe button widget
//!   unsubscribe button widget
//!   post button KEY          # post COMPONENT TYPE [HEX-PAYLOAD]
//!   pump
//! ```
//!
//! Names match `[A-Za-z_][A-Za-z0-9_.-]*` and may not be a section key.
//! Types, components, kinds and handlers are separate namespaces. A kind's
//! parent must be declared above it. A handler bound to a kind accepts every
//! type bound anywhere in the kind's chain.
//!
//! # Model mapping
//!
//! Component `i` and handler `i` (declaration order) get `ComponentId(i)`
//! and `HandlerId(i)` in every model.
//!
//! * `direct`: handlers become bus handlers; subscribe/unsubscribe/emit map
//!   one-to-one. `post` and `pump` are rejected.
//! * `os`: each handler is a window with its own map. The runner keeps the
//!   sender-side subscriber lists; `emit` stamps one message and `send`s it to
//!   each subscriber's handle in order, `post` queues it the same way, and
//!   `pump` drains the queue.
//! * `msgmap`: declared kinds become kinds, kind-less handlers get a private
//!   kind; each handler is one instance. `emit` dispatches through the map
//!   cascade to each subscriber. `post`/`pump` are rejected.
//! * `vtable`: the catalog is every declared type; handlers override the
//!   slots they accept. `emit` dispatches to each subscriber. `post`/`pump`
//!   are rejected.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use bytes::Bytes;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::direct::{DirectBus, DirectCallback};
use crate::error::DispatchError;
use crate::message::{
    ComponentId, DeliveryLog, HandlerId, Message, MessageTypeId, MessageTypeRegistry, ModelTag,
};
use crate::msgmap::{KindId, MapCallback, MessageMapModel};
use crate::os::{OsCallback, WindowHandle, WindowSystem};
use crate::vtable::{PredefinedEventCatalog, SlotFn, VtableModel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KindDecl {
    pub name: String,
    pub parent: Option<String>,
    pub accepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandlerSpec {
    Accepts(Vec<String>),
    Kind(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandlerDecl {
    pub name: String,
    pub spec: HandlerSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Emit {
        component: String,
        msg_type: String,
        payload: Vec<u8>,
    },
    Subscribe {
        component: String,
        handler: String,
    },
    Unsubscribe {
        component: String,
        handler: String,
    },
    Post {
        component: String,
        msg_type: String,
        payload: Vec<u8>,
    },
    Pump,
}

impl Action {
    fn keyword(&self) -> &'static str {
        match self {
            Action::Emit { .. } => "emit",
            Action::Subscribe { .. } => "subscribe",
            Action::Unsubscribe { .. } => "unsubscribe",
            Action::Post { .. } => "post",
            Action::Pump => "pump",
        }
    }

    fn is_queued(&self) -> bool {
        matches!(self, Action::Post { .. } | Action::Pump)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub types: Vec<String>,
    pub components: Vec<String>,
    pub kinds: Vec<KindDecl>,
    pub handlers: Vec<HandlerDecl>,
    pub subscriptions: Vec<(String, String)>,
    pub script: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}{message}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Validation {
        line: Option<usize>,
        message: String,
    },
    #[error("script step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: DispatchError,
    },
}

impl ScenarioError {
    fn validation(line: Option<usize>, message: impl Into<String>) -> Self {
        ScenarioError::Validation {
            line,
            message: message.into(),
        }
    }
}

const SECTION_KEYS: [&str; 6] = ["types", "components", "kinds", "handlers", "subscriptions", "script"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Types,
    Components,
    Kinds,
    Handlers,
    Subscriptions,
    Script,
}

impl Section {
    fn from_header(line: &str) -> Option<Self> {
        let key = line.strip_suffix(':')?.trim_end();
        Some(match key {
            "types" => Section::Types,
            "components" => Section::Components,
            "kinds" => Section::Kinds,
            "handlers" => Section::Handlers,
            "subscriptions" => Section::Subscriptions,
            "script" => Section::Script,
            _ => return None,
        })
    }
}

/// Line numbers of parsed entries, used to locate validation errors.
#[derive(Debug, Default)]
struct SourceLines {
    types: Vec<usize>,
    components: Vec<usize>,
    kinds: Vec<usize>,
    handlers: Vec<usize>,
    subscriptions: Vec<usize>,
    script: Vec<usize>,
}

struct Token<'a> {
    column: usize,
    text: &'a str,
}

fn tokenize(line: &str, offset: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices().chain(std::iter::once((line.len(), ' '))) {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(Token {
                    column: offset + line[..s].chars().count() + 1,
                    text: &line[s..i],
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    out
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

struct LineParser<'a> {
    line: usize,
    raw: &'a str,
}

impl<'a> LineParser<'a> {
    fn err(&self, column: usize, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn name(&self, tok: &Token<'_>, what: &str) -> Result<String, ScenarioError> {
        if !is_name(tok.text) {
            return Err(self.err(tok.column, format!("invalid {what} name `{}`", tok.text)));
        }
        if SECTION_KEYS.contains(&tok.text) {
            return Err(self.err(tok.column, format!("`{}` is reserved and cannot name a {what}", tok.text)));
        }
        Ok(tok.text.to_owned())
    }

    fn names(&self, toks: &[Token<'_>], what: &str) -> Result<Vec<String>, ScenarioError> {
        toks.iter().map(|t| self.name(t, what)).collect()
    }

    /// Splits the line at the first `sep`, returning tokens on either side.
    fn split(&self, sep: char) -> Option<(Vec<Token<'a>>, Vec<Token<'a>>)> {
        let pos = self.raw.find(sep)?;
        let right_offset = self.raw[..pos + sep.len_utf8()].chars().count();
        Some((tokenize(&self.raw[..pos], 0), tokenize(&self.raw[pos + sep.len_utf8()..], right_offset)))
    }

    fn kind(&self) -> Result<KindDecl, ScenarioError> {
        let (left, right) = self
            .split(':')
            .ok_or_else(|| self.err(1, "expected `NAME [< PARENT] : TYPE*`"))?;
        let accepts = self.names(&right, "type")?;
        match left.as_slice() {
            [name] => Ok(KindDecl {
                name: self.name(name, "kind")?,
                parent: None,
                accepts,
            }),
            [name, lt, parent] if lt.text == "<" => Ok(KindDecl {
                name: self.name(name, "kind")?,
                parent: Some(self.name(parent, "kind")?),
                accepts,
            }),
            _ => Err(self.err(left.first().map_or(1, |t| t.column), "expected `NAME [< PARENT] : TYPE*`")),
        }
    }

    fn handler(&self) -> Result<HandlerDecl, ScenarioError> {
        const SHAPE: &str = "expected `NAME : TYPE*` or `NAME @ KIND`";
        if let Some((left, right)) = self.split(':') {
            let [name] = left.as_slice() else {
                return Err(self.err(1, SHAPE));
            };
            return Ok(HandlerDecl {
                name: self.name(name, "handler")?,
                spec: HandlerSpec::Accepts(self.names(&right, "type")?),
            });
        }
        if let Some((left, right)) = self.split('@') {
            if let ([name], [kind]) = (left.as_slice(), right.as_slice()) {
                return Ok(HandlerDecl {
                    name: self.name(name, "handler")?,
                    spec: HandlerSpec::Kind(self.name(kind, "kind")?),
                });
            }
        }
        Err(self.err(1, SHAPE))
    }

    fn subscription(&self) -> Result<(String, String), ScenarioError> {
        let toks = tokenize(self.raw, 0);
        match toks.as_slice() {
            [c, arrow, h] if arrow.text == "->" => Ok((self.name(c, "component")?, self.name(h, "handler")?)),
            _ => Err(self.err(toks.first().map_or(1, |t| t.column), "expected `COMPONENT -> HANDLER`")),
        }
    }

    fn payload(&self, tok: Option<&Token<'_>>) -> Result<Vec<u8>, ScenarioError> {
        let Some(tok) = tok else { return Ok(Vec::new()) };
        decode_hex(tok.text).ok_or_else(|| self.err(tok.column, format!("invalid hex payload `{}`", tok.text)))
    }

    fn action(&self) -> Result<Action, ScenarioError> {
        let toks = tokenize(self.raw, 0);
        let Some(head) = toks.first() else {
            return Err(self.err(1, "empty action"));
        };
        let arity = |min: usize, max: usize| {
            if toks.len() < min || toks.len() > max {
                Err(self.err(head.column, format!("`{}` takes {} argument(s)", head.text, if min == max { format!("{}", min - 1) } else { format!("{} to {}", min - 1, max - 1) })))
            } else {
                Ok(())
            }
        };
        match head.text {
            "emit" | "post" => {
                arity(3, 4)?;
                let component = self.name(&toks[1], "component")?;
                let msg_type = self.name(&toks[2], "type")?;
                let payload = self.payload(toks.get(3))?;
                Ok(if head.text == "emit" {
                    Action::Emit { component, msg_type, payload }
                } else {
                    Action::Post { component, msg_type, payload }
                })
            }
            "subscribe" | "unsubscribe" => {
                arity(3, 3)?;
                let component = self.name(&toks[1], "component")?;
                let handler = self.name(&toks[2], "handler")?;
                Ok(if head.text == "subscribe" {
                    Action::Subscribe { component, handler }
                } else {
                    Action::Unsubscribe { component, handler }
                })
            }
            "pump" => {
                arity(1, 1)?;
                Ok(Action::Pump)
            }
            other => Err(self.err(head.column, format!("unknown action `{other}`"))),
        }
    }
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || !s.is_ascii() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

fn encode_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario = Scenario::default();
    let mut lines = SourceLines::default();
    let mut section: Option<Section> = None;
    let mut seen: Vec<Section> = Vec::new();

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        // trailing comments
        let raw = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        if let Some(s) = Section::from_header(raw.trim()) {
            if seen.contains(&s) {
                return Err(ScenarioError::Parse {
                    line,
                    column: 1,
                    message: format!("section `{}` appears twice", raw.trim()),
                });
            }
            seen.push(s);
            section = Some(s);
            continue;
        }
        let p = LineParser { line, raw };
        let Some(current) = section else {
            return Err(p.err(1, "entry before any section header"));
        };
        match current {
            Section::Types => {
                for t in p.names(&tokenize(raw, 0), "type")? {
                    scenario.types.push(t);
                    lines.types.push(line);
                }
            }
            Section::Components => {
                for c in p.names(&tokenize(raw, 0), "component")? {
                    scenario.components.push(c);
                    lines.components.push(line);
                }
            }
            Section::Kinds => {
                scenario.kinds.push(p.kind()?);
                lines.kinds.push(line);
            }
            Section::Handlers => {
                scenario.handlers.push(p.handler()?);
                lines.handlers.push(line);
            }
            Section::Subscriptions => {
                scenario.subscriptions.push(p.subscription()?);
                lines.subscriptions.push(line);
            }
            Section::Script => {
                scenario.script.push(p.action()?);
                lines.script.push(line);
            }
        }
    }
    scenario.validate_with(Some(&lines))?;
    Ok(scenario)
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        parse_scenario(text)
    }

    /// Canonical text form; `parse_scenario(&s.serialize()) == Ok(s)`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("types:\n");
        for t in &self.types {
            out.push_str(&format!("  {t}\n"));
        }
        out.push_str("components:\n");
        for c in &self.components {
            out.push_str(&format!("  {c}\n"));
        }
        out.push_str("kinds:\n");
        for k in &self.kinds {
            out.push_str("  ");
            out.push_str(&k.name);
            if let Some(p) = &k.parent {
                out.push_str(" < ");
                out.push_str(p);
            }
            out.push(':');
            for t in &k.accepts {
                out.push(' ');
                out.push_str(t);
            }
            out.push('\n');
        }
        out.push_str("handlers:\n");
        for h in &self.handlers {
            match &h.spec {
                HandlerSpec::Accepts(types) => {
                    out.push_str(&format!("  {}:", h.name));
                    for t in types {
                        out.push(' ');
                        out.push_str(t);
                    }
                    out.push('\n');
                }
                HandlerSpec::Kind(k) => out.push_str(&format!("  {} @ {k}\n", h.name)),
            }
        }
        out.push_str("subscriptions:\n");
        for (c, h) in &self.subscriptions {
            out.push_str(&format!("  {c} -> {h}\n"));
        }
        out.push_str("script:\n");
        for a in &self.script {
            out.push_str(&format!("  {a}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.validate_with(None)
    }

    /// True when the script only uses actions every model supports.
    pub fn is_dispatch_only(&self) -> bool {
        !self.script.iter().any(Action::is_queued)
    }

    pub fn supports(&self, model: ModelTag) -> bool {
        model == ModelTag::Os || self.is_dispatch_only()
    }

    fn validate_with(&self, lines: Option<&SourceLines>) -> Result<(), ScenarioError> {
        let at = |v: fn(&SourceLines) -> &Vec<usize>, i: usize| lines.and_then(|l| v(l).get(i).copied());

        check_unique(&self.types, "type", |i| at(|l| &l.types, i))?;
        check_unique(&self.components, "component", |i| at(|l| &l.components, i))?;
        let kind_names: Vec<String> = self.kinds.iter().map(|k| k.name.clone()).collect();
        check_unique(&kind_names, "kind", |i| at(|l| &l.kinds, i))?;
        let handler_names: Vec<String> = self.handlers.iter().map(|h| h.name.clone()).collect();
        check_unique(&handler_names, "handler", |i| at(|l| &l.handlers, i))?;

        let types: HashSet<&str> = self.types.iter().map(String::as_str).collect();
        let components: HashSet<&str> = self.components.iter().map(String::as_str).collect();
        let handlers: HashSet<&str> = handler_names.iter().map(String::as_str).collect();

        let missing = |line, what: &str, name: &str| ScenarioError::validation(line, format!("undeclared {what} `{name}`"));
        let check_types = |list: &[String], line: Option<usize>| -> Result<(), ScenarioError> {
            let mut seen = HashSet::new();
            for t in list {
                if !types.contains(t.as_str()) {
                    return Err(missing(line, "type", t));
                }
                if !seen.insert(t) {
                    return Err(ScenarioError::validation(line, format!("type `{t}` is listed twice")));
                }
            }
            Ok(())
        };

        for (i, k) in self.kinds.iter().enumerate() {
            let line = at(|l| &l.kinds, i);
            if let Some(p) = &k.parent {
                if !self.kinds[..i].iter().any(|prev| &prev.name == p) {
                    return Err(ScenarioError::validation(
                        line,
                        format!("parent kind `{p}` of `{}` must be declared before it", k.name),
                    ));
                }
            }
            check_types(&k.accepts, line)?;
        }
        for (i, h) in self.handlers.iter().enumerate() {
            let line = at(|l| &l.handlers, i);
            match &h.spec {
                HandlerSpec::Accepts(list) => check_types(list, line)?,
                HandlerSpec::Kind(k) => {
                    if !kind_names.contains(k) {
                        return Err(missing(line, "kind", k));
                    }
                }
            }
        }
        let check_pair = |c: &str, h: &str, line| {
            if !components.contains(c) {
                return Err(missing(line, "component", c));
            }
            if !handlers.contains(h) {
                return Err(missing(line, "handler", h));
            }
            Ok(())
        };
        for (i, (c, h)) in self.subscriptions.iter().enumerate() {
            check_pair(c, h, at(|l| &l.subscriptions, i))?;
        }
        for (i, a) in self.script.iter().enumerate() {
            let line = at(|l| &l.script, i);
            match a {
                Action::Emit { component, msg_type, .. } | Action::Post { component, msg_type, .. } => {
                    if !components.contains(component.as_str()) {
                        return Err(missing(line, "component", component));
                    }
                    if !types.contains(msg_type.as_str()) {
                        return Err(missing(line, "type", msg_type));
                    }
                }
                Action::Subscribe { component, handler } | Action::Unsubscribe { component, handler } => {
                    check_pair(component, handler, line)?;
                }
                Action::Pump => {}
            }
        }
        Ok(())
    }
}

fn check_unique(names: &[String], what: &str, line: impl Fn(usize) -> Option<usize>) -> Result<(), ScenarioError> {
    let mut seen = HashSet::new();
    for (i, n) in names.iter().enumerate() {
        if !seen.insert(n) {
            return Err(ScenarioError::validation(line(i), format!("duplicate {what} `{n}`")));
        }
    }
    Ok(())
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Emit { component, msg_type, payload } | Action::Post { component, msg_type, payload } => {
                write!(f, "{} {component} {msg_type}", self.keyword())?;
                if !payload.is_empty() {
                    write!(f, " {}", encode_hex(payload))?;
                }
                Ok(())
            }
            Action::Subscribe { component, handler } | Action::Unsubscribe { component, handler } => {
                write!(f, "{} {component} {handler}", self.keyword())
            }
            Action::Pump => f.write_str("pump"),
        }
    }
}

// ---------------------------------------------------------------------------
// Runner

/// A scenario with every name resolved to its dense index.
struct Resolved {
    registry: MessageTypeRegistry,
    kinds: Vec<(Option<usize>, Vec<MessageTypeId>)>,
    handler_kinds: Vec<Option<usize>>,
    accepted: Vec<Vec<MessageTypeId>>,
    subscriptions: Vec<(usize, usize)>,
    script: Vec<Step>,
}

enum Step {
    Emit(usize, MessageTypeId, Bytes),
    Subscribe(usize, usize),
    Unsubscribe(usize, usize),
    Post(usize, MessageTypeId, Bytes),
    Pump,
}

impl Resolved {
    fn new(s: &Scenario) -> Result<Self, ScenarioError> {
        s.validate()?;
        let registry = MessageTypeRegistry::with_types(&s.types)
            .map_err(|e| ScenarioError::validation(None, e.to_string()))?;
        let ty = |n: &String| registry.lookup(n).expect("validated");
        let pos = |list: &[String], n: &str| list.iter().position(|x| x == n).expect("validated");
        let kind_names: Vec<String> = s.kinds.iter().map(|k| k.name.clone()).collect();
        let handler_names: Vec<String> = s.handlers.iter().map(|h| h.name.clone()).collect();

        let kinds: Vec<(Option<usize>, Vec<MessageTypeId>)> = s
            .kinds
            .iter()
            .map(|k| (k.parent.as_deref().map(|p| pos(&kind_names, p)), k.accepts.iter().map(ty).collect()))
            .collect();
        let mut handler_kinds = Vec::new();
        let mut accepted = Vec::new();
        for h in &s.handlers {
            match &h.spec {
                HandlerSpec::Accepts(list) => {
                    handler_kinds.push(None);
                    accepted.push(list.iter().map(ty).collect());
                }
                HandlerSpec::Kind(k) => {
                    let start = pos(&kind_names, k);
                    handler_kinds.push(Some(start));
                    let mut set: Vec<MessageTypeId> = Vec::new();
                    let mut cur = Some(start);
                    while let Some(i) = cur {
                        for t in &kinds[i].1 {
                            if !set.contains(t) {
                                set.push(*t);
                            }
                        }
                        cur = kinds[i].0;
                    }
                    accepted.push(set);
                }
            }
        }
        let subscriptions = s
            .subscriptions
            .iter()
            .map(|(c, h)| (pos(&s.components, c), pos(&handler_names, h)))
            .collect();
        let script = s
            .script
            .iter()
            .map(|a| match a {
                Action::Emit { component, msg_type, payload } => {
                    Step::Emit(pos(&s.components, component), ty(msg_type), Bytes::from(payload.clone()))
                }
                Action::Post { component, msg_type, payload } => {
                    Step::Post(pos(&s.components, component), ty(msg_type), Bytes::from(payload.clone()))
                }
                Action::Subscribe { component, handler } => {
                    Step::Subscribe(pos(&s.components, component), pos(&handler_names, handler))
                }
                Action::Unsubscribe { component, handler } => {
                    Step::Unsubscribe(pos(&s.components, component), pos(&handler_names, handler))
                }
                Action::Pump => Step::Pump,
            })
            .collect();
        Ok(Self {
            registry,
            kinds,
            handler_kinds,
            accepted,
            subscriptions,
            script,
        })
    }
}

/// Sender-side subscriber lists, for models without their own.
struct Fanout(Vec<Vec<usize>>);

impl Fanout {
    fn new(components: usize) -> Self {
        Self(vec![Vec::new(); components])
    }

    fn subscribe(&mut self, c: usize, h: usize) {
        if !self.0[c].contains(&h) {
            self.0[c].push(h);
        }
    }

    fn unsubscribe(&mut self, c: usize, h: usize) {
        self.0[c].retain(|x| *x != h);
    }
}

fn step_err(index: usize) -> impl Fn(DispatchError) -> ScenarioError {
    move |source| ScenarioError::Step { index, source }
}

/// Plays the script against one model and returns everything it delivered.
pub fn run_scenario(model: ModelTag, scenario: &Scenario) -> Result<DeliveryLog, ScenarioError> {
    let resolved = Resolved::new(scenario)?;
    if !scenario.supports(model) {
        let (index, action) = scenario
            .script
            .iter()
            .enumerate()
            .find(|(_, a)| a.is_queued())
            .expect("unsupported implies a queued action");
        return Err(ScenarioError::validation(
            None,
            format!("script step {index}: `{}` is not supported by the {model} model", action.keyword()),
        ));
    }
    let records = match model {
        ModelTag::Direct => run_direct(&resolved, scenario.components.len()),
        ModelTag::Os => run_os(&resolved, scenario.components.len()),
        ModelTag::MsgMap => run_msgmap(&resolved, scenario.components.len()),
        ModelTag::Vtable => run_vtable(&resolved, scenario.components.len()),
    }?;
    Ok(DeliveryLog::from(records))
}

fn noop_direct() -> DirectCallback {
    Box::new(|_, _| Ok(()))
}

fn noop_os() -> OsCallback {
    Box::new(|_, _| Ok(()))
}

fn run_direct(r: &Resolved, components: usize) -> Result<Vec<crate::message::DeliveryRecord>, ScenarioError> {
    let mut bus = DirectBus::new(r.registry.clone()).with_logging();
    for _ in 0..components {
        bus.create_component();
    }
    for accepted in &r.accepted {
        let bindings = accepted
            .iter()
            .map(|&t| (t, noop_direct()))
            .collect();
        bus.create_handler(bindings).map_err(step_err(0))?;
    }
    for &(c, h) in &r.subscriptions {
        bus.subscribe(ComponentId(c as u64), HandlerId(h as u64)).map_err(step_err(0))?;
    }
    for (i, step) in r.script.iter().enumerate() {
        let e = step_err(i);
        match step {
            Step::Emit(c, t, p) => {
                bus.emit(ComponentId(*c as u64), *t, p.clone()).map_err(e)?;
            }
            Step::Subscribe(c, h) => {
                bus.subscribe(ComponentId(*c as u64), HandlerId(*h as u64)).map_err(e)?;
            }
            Step::Unsubscribe(c, h) => {
                bus.unsubscribe(ComponentId(*c as u64), HandlerId(*h as u64)).map_err(e)?;
            }
            Step::Post(..) | Step::Pump => unreachable!("rejected before running"),
        }
    }
    Ok(bus.take_log())
}

fn run_os(r: &Resolved, components: usize) -> Result<Vec<crate::message::DeliveryRecord>, ScenarioError> {
    let mut sys = WindowSystem::new(r.registry.clone()).with_logging();
    let mut handles: Vec<WindowHandle> = Vec::new();
    for accepted in &r.accepted {
        let bindings = accepted
            .iter()
            .map(|&t| (t, noop_os()))
            .collect();
        let (handle, _) = sys.register_window(bindings).map_err(step_err(0))?;
        handles.push(handle);
    }
    let mut fanout = Fanout::new(components);
    for &(c, h) in &r.subscriptions {
        fanout.subscribe(c, h);
    }
    for (i, step) in r.script.iter().enumerate() {
        let e = step_err(i);
        match step {
            Step::Emit(c, t, p) | Step::Post(c, t, p) => {
                let msg = Message {
                    msg_type: *t,
                    payload: p.clone(),
                    sender: ComponentId(*c as u64),
                    seq: sys.next_seq(),
                };
                for &h in &fanout.0[*c] {
                    if matches!(step, Step::Emit(..)) {
                        sys.send_message(handles[h], msg.clone()).map_err(&e)?;
                    } else {
                        sys.post_message(handles[h], msg.clone()).map_err(&e)?;
                    }
                }
            }
            Step::Subscribe(c, h) => fanout.subscribe(*c, *h),
            Step::Unsubscribe(c, h) => fanout.unsubscribe(*c, *h),
            Step::Pump => {
                let report = sys.pump();
                if let Some(f) = report.failures.into_iter().next() {
                    return Err(e(f.error));
                }
            }
        }
    }
    Ok(sys.take_log())
}

fn run_msgmap(r: &Resolved, components: usize) -> Result<Vec<crate::message::DeliveryRecord>, ScenarioError> {
    let mut model = MessageMapModel::new(r.registry.clone()).with_logging();
    let noop: MapCallback = Arc::new(|_, _| {});
    let mut kind_ids: Vec<KindId> = Vec::new();
    for (parent, types) in &r.kinds {
        let entries = types.iter().map(|&t| (t, noop.clone())).collect();
        let id = model
            .define_kind(parent.map(|p| kind_ids[p]), entries)
            .map_err(step_err(0))?;
        kind_ids.push(id);
    }
    for (h, kind) in r.handler_kinds.iter().enumerate() {
        let kind = match kind {
            Some(k) => kind_ids[*k],
            None => {
                let entries = r.accepted[h].iter().map(|&t| (t, noop.clone())).collect();
                model.define_kind(None, entries).map_err(step_err(0))?
            }
        };
        model.create_instance(kind).map_err(step_err(0))?;
    }
    let mut fanout = Fanout::new(components);
    for &(c, h) in &r.subscriptions {
        fanout.subscribe(c, h);
    }
    let mut seq = 0;
    for (i, step) in r.script.iter().enumerate() {
        match step {
            Step::Emit(c, t, p) => {
                let msg = Message {
                    msg_type: *t,
                    payload: p.clone(),
                    sender: ComponentId(*c as u64),
                    seq,
                };
                seq += 1;
                for &h in &fanout.0[*c] {
                    model.dispatch_via_map(HandlerId(h as u64), &msg).map_err(step_err(i))?;
                }
            }
            Step::Subscribe(c, h) => fanout.subscribe(*c, *h),
            Step::Unsubscribe(c, h) => fanout.unsubscribe(*c, *h),
            Step::Post(..) | Step::Pump => unreachable!("rejected before running"),
        }
    }
    Ok(model.take_log())
}

fn run_vtable(r: &Resolved, components: usize) -> Result<Vec<crate::message::DeliveryRecord>, ScenarioError> {
    let all: Vec<MessageTypeId> = r.registry.iter().map(|(id, _)| id).collect();
    let catalog = PredefinedEventCatalog::build(&all).map_err(step_err(0))?;
    let mut model = VtableModel::new(r.registry.clone(), catalog).with_logging();
    let noop: SlotFn = Arc::new(|_, _| {});
    for accepted in &r.accepted {
        model
            .create_handler(accepted.iter().map(|&t| (t, noop.clone())).collect())
            .map_err(step_err(0))?;
    }
    let mut fanout = Fanout::new(components);
    for &(c, h) in &r.subscriptions {
        fanout.subscribe(c, h);
    }
    let mut seq = 0;
    for (i, step) in r.script.iter().enumerate() {
        match step {
            Step::Emit(c, t, p) => {
                let msg = Message {
                    msg_type: *t,
                    payload: p.clone(),
                    sender: ComponentId(*c as u64),
                    seq,
                };
                seq += 1;
                for &h in &fanout.0[*c] {
                    model.dispatch_typed(HandlerId(h as u64), &msg).map_err(step_err(i))?;
                }
            }
            Step::Subscribe(c, h) => fanout.subscribe(*c, *h),
            Step::Unsubscribe(c, h) => fanout.unsubscribe(*c, *h),
            Step::Post(..) | Step::Pump => unreachable!("rejected before running"),
        }
    }
    Ok(model.take_log())
}

// ---------------------------------------------------------------------------
// Random scenarios

#[derive(Debug, Clone, Copy)]
pub struct RandomLimits {
    pub max_components: usize,
    pub max_handlers: usize,
    pub max_types: usize,
    pub max_steps: usize,
    pub max_kind_depth: usize,
    /// Include `post` and `pump` actions (only the os model runs those).
    pub queued_actions: bool,
}

impl Default for RandomLimits {
    fn default() -> Self {
        Self {
            max_components: 20,
            max_handlers: 20,
            max_types: 50,
            max_steps: 1000,
            max_kind_depth: 5,
            queued_actions: false,
        }
    }
}

/// Generates a valid scenario within `limits`.
pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, limits: &RandomLimits) -> Scenario {
    let n_types = rng.gen_range(1..=limits.max_types.max(1));
    let n_components = rng.gen_range(1..=limits.max_components.max(1));
    let n_handlers = rng.gen_range(1..=limits.max_handlers.max(1));
    let n_steps = rng.gen_range(0..=limits.max_steps);

    let types: Vec<String> = (0..n_types).map(|i| format!("T{i}")).collect();
    let components: Vec<String> = (0..n_components).map(|i| format!("c{i}")).collect();

    let pick_types = |rng: &mut R| -> Vec<String> {
        let k = rng.gen_range(0..=n_types.min(8));
        types.choose_multiple(rng, k).cloned().collect()
    };

    // a few kind chains
    let mut kinds: Vec<KindDecl> = Vec::new();
    let mut depth: Vec<usize> = Vec::new();
    if limits.max_kind_depth > 0 {
        for i in 0..rng.gen_range(0..=6) {
            let parent = if !kinds.is_empty() && rng.gen_bool(0.7) {
                let p = rng.gen_range(0..kinds.len());
                (depth[p] < limits.max_kind_depth).then_some(p)
            } else {
                None
            };
            depth.push(parent.map_or(1, |p| depth[p] + 1));
            kinds.push(KindDecl {
                name: format!("k{i}"),
                parent: parent.map(|p| kinds[p].name.clone()),
                accepts: pick_types(rng),
            });
        }
    }

    let handlers: Vec<HandlerDecl> = (0..n_handlers)
        .map(|i| HandlerDecl {
            name: format!("h{i}"),
            spec: if !kinds.is_empty() && rng.gen_bool(0.3) {
                HandlerSpec::Kind(kinds.choose(rng).unwrap().name.clone())
            } else {
                HandlerSpec::Accepts(pick_types(rng))
            },
        })
        .collect();

    let comp = |rng: &mut R| components[rng.gen_range(0..n_components)].clone();
    let hand = |rng: &mut R| handlers[rng.gen_range(0..n_handlers)].name.clone();
    let ty = |rng: &mut R| types[rng.gen_range(0..n_types)].clone();
    let payload = |rng: &mut R| {
        let len = rng.gen_range(0..4);
        (0..len).map(|_| rng.gen()).collect::<Vec<u8>>()
    };

    let n_subs = rng.gen_range(0..=n_components * 3);
    let subscriptions = (0..n_subs).map(|_| (comp(rng), hand(rng))).collect();

    let script = (0..n_steps)
        .map(|_| {
            let roll = rng.gen_range(0..100);
            match roll {
                0..=54 => Action::Emit {
                    component: comp(rng),
                    msg_type: ty(rng),
                    payload: payload(rng),
                },
                55..=74 => Action::Subscribe {
                    component: comp(rng),
                    handler: hand(rng),
                },
                75..=89 => Action::Unsubscribe {
                    component: comp(rng),
                    handler: hand(rng),
                },
                _ if limits.queued_actions && roll < 97 => Action::Post {
                    component: comp(rng),
                    msg_type: ty(rng),
                    payload: payload(rng),
                },
                _ if limits.queued_actions => Action::Pump,
                _ => Action::Emit {
                    component: comp(rng),
                    msg_type: ty(rng),
                    payload: Vec::new(),
                },
            }
        })
        .collect();

    Scenario {
        types,
        components,
        kinds,
        handlers,
        subscriptions,
        script,
    }
}
