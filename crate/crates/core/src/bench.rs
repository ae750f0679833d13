//! Throughput comparison: N sends from one component to one handler under
//! each model, timed with a monotonic clock, reported as median elapsed
//! milliseconds, messages per millisecond and speedup over `os_send`.
//!
//! All report arithmetic works on whole microseconds:
//! `rate = floor(n * 1000 / us)` and `speedup = floor(100 * base_us / us) / 100`,
//! so every printed cell can be recomputed exactly from the elapsed row.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use serde::Serialize;
use thiserror::Error;

use crate::direct::{DirectBus, DirectCallback};
use crate::error::DispatchError;
use crate::message::{ComponentId, HandlerId, Message, MessageTypeId, MessageTypeRegistry};
use crate::msgmap::{MapCallback, MapWindowInstance, MessageMapModel};
use crate::os::{OsCallback, WindowHandle, WindowSystem};
use crate::vtable::{PredefinedEventCatalog, SlotFn, VtableModel};

pub const DEFAULT_MESSAGES: u64 = 10_000_000;
pub const DEFAULT_WARMUP: u64 = 100_000;
pub const DEFAULT_REPETITIONS: usize = 5;
pub const DEFAULT_CATALOG_SIZE: usize = 64;
/// Posts queued before each pump in `os_post_pump`.
pub const POST_BATCH: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchModel {
    Direct,
    OsSend,
    OsPostPump,
    MsgMapOverOs,
    /// Map cascade only, no transport.
    MsgMap,
    Vtable { catalog_size: usize },
}

impl BenchModel {
    pub fn label(&self) -> String {
        match self {
            BenchModel::Direct => "direct".into(),
            BenchModel::OsSend => "os_send".into(),
            BenchModel::OsPostPump => "os_post_pump".into(),
            BenchModel::MsgMapOverOs => "msgmap_over_os".into(),
            BenchModel::MsgMap => "msgmap".into(),
            BenchModel::Vtable { catalog_size } if *catalog_size == DEFAULT_CATALOG_SIZE => "vtable".into(),
            BenchModel::Vtable { catalog_size } => format!("vtable[{catalog_size}]"),
        }
    }

    pub fn defaults() -> Vec<BenchModel> {
        vec![
            BenchModel::OsSend,
            BenchModel::Direct,
            BenchModel::OsPostPump,
            BenchModel::MsgMapOverOs,
            BenchModel::Vtable {
                catalog_size: DEFAULT_CATALOG_SIZE,
            },
        ]
    }
}

impl fmt::Display for BenchModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for BenchModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "direct" => BenchModel::Direct,
            "os_send" => BenchModel::OsSend,
            "os_post_pump" => BenchModel::OsPostPump,
            "msgmap_over_os" => BenchModel::MsgMapOverOs,
            "msgmap" => BenchModel::MsgMap,
            "vtable" => BenchModel::Vtable {
                catalog_size: DEFAULT_CATALOG_SIZE,
            },
            other => {
                let size = other
                    .strip_prefix("vtable[")
                    .and_then(|r| r.strip_suffix(']'))
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| {
                        format!(
                            "unknown model `{other}` (expected direct, os_send, os_post_pump, \
                             msgmap_over_os, msgmap, vtable or vtable[N])"
                        )
                    })?;
                BenchModel::Vtable { catalog_size: size }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub models: Vec<BenchModel>,
    pub message_count: u64,
    pub warmup_count: u64,
    pub repetitions: usize,
    pub payload_size: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            models: BenchModel::defaults(),
            message_count: DEFAULT_MESSAGES,
            warmup_count: DEFAULT_WARMUP,
            repetitions: DEFAULT_REPETITIONS,
            payload_size: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.message_count == 0 {
            return Err(BenchError::InvalidConfig("message_count must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchError::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(BenchError::InvalidConfig("no models selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
    #[error("{model}: repetition {repetition} delivered {actual} of {expected} messages")]
    CounterMismatch {
        model: String,
        repetition: usize,
        expected: u64,
        actual: u64,
    },
    #[error("{model}: {source}")]
    Dispatch {
        model: String,
        #[source]
        source: DispatchError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchResult {
    pub model: String,
    pub message_count: u64,
    pub repetitions: usize,
    /// Median over repetitions.
    pub elapsed_us: u64,
    pub min_us: u64,
    pub max_us: u64,
    pub rate: u64,
    /// Speedup over the baseline in hundredths, truncated.
    pub speedup_hundredths: u64,
}

/// `floor(n / elapsed_ms)`, with elapsed given in microseconds.
pub fn rate_per_ms(message_count: u64, elapsed_us: u64) -> u64 {
    (message_count as u128 * 1000 / elapsed_us.max(1) as u128) as u64
}

/// `baseline / elapsed` truncated to two decimals, in hundredths.
pub fn speedup_hundredths(baseline_us: u64, elapsed_us: u64) -> u64 {
    (baseline_us as u128 * 100 / elapsed_us.max(1) as u128) as u64
}

fn median(sorted: &[u64]) -> u64 {
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2
    }
}

fn whole_micros(d: Duration) -> u64 {
    (d.as_micros() as u64).max(1)
}

impl BenchResult {
    /// Summarises per-repetition timings (microseconds). Speedup starts at
    /// x1.00 until [`apply_baseline`] runs.
    pub fn from_timings(model: impl Into<String>, message_count: u64, timings_us: &[u64]) -> Self {
        assert!(!timings_us.is_empty(), "at least one repetition");
        let mut sorted = timings_us.to_vec();
        sorted.sort_unstable();
        let elapsed_us = median(&sorted).max(1);
        Self {
            model: model.into(),
            message_count,
            repetitions: timings_us.len(),
            elapsed_us,
            min_us: sorted[0],
            max_us: sorted[sorted.len() - 1],
            rate: rate_per_ms(message_count, elapsed_us),
            speedup_hundredths: 100,
        }
    }

    pub fn elapsed_ms(&self) -> f64 {
        self.elapsed_us as f64 / 1000.0
    }

    pub fn speedup(&self) -> f64 {
        self.speedup_hundredths as f64 / 100.0
    }

    /// `x13.98` style.
    pub fn speedup_label(&self) -> String {
        format!("x{}", hundredths(self.speedup_hundredths))
    }
}

fn hundredths(v: u64) -> String {
    format!("{}.{:02}", v / 100, v % 100)
}

fn millis(us: u64) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

/// Index of the `os_send` result, or 0 when it was not measured.
pub fn baseline_index(results: &[BenchResult]) -> usize {
    results.iter().position(|r| r.model == "os_send").unwrap_or(0)
}

pub fn apply_baseline(results: &mut [BenchResult]) {
    if results.is_empty() {
        return;
    }
    let base = results[baseline_index(results)].elapsed_us;
    for r in results.iter_mut() {
        r.speedup_hundredths = speedup_hundredths(base, r.elapsed_us);
    }
}

/// A model wired into the two-component benchmark topology.
pub trait BenchTarget {
    /// Sends `count` messages from the sender to the receiver.
    fn run(&mut self, count: u64) -> Result<(), DispatchError>;

    /// Deliveries observed by the receiving callback since the last call.
    fn take_delivered(&mut self) -> u64;
}

/// Counter bumped by every receiving callback. Relaxed load/store keeps it a
/// plain memory write that the optimizer still cannot drop.
#[derive(Debug, Clone, Default)]
pub struct DeliveryCounter(Arc<AtomicU64>);

impl DeliveryCounter {
    #[inline]
    pub fn bump(&self) {
        let v = self.0.load(Ordering::Relaxed);
        self.0.store(v + 1, Ordering::Relaxed);
    }

    pub fn take(&self) -> u64 {
        self.0.swap(0, Ordering::Relaxed)
    }
}

/// Runs warmup and repetitions on one target, verifying the delivery count
/// after each repetition.
pub fn measure<T: BenchTarget + ?Sized>(
    label: &str,
    target: &mut T,
    config: &BenchConfig,
) -> Result<BenchResult, BenchError> {
    config.validate()?;
    let dispatch = |source| BenchError::Dispatch {
        model: label.to_owned(),
        source,
    };
    if config.warmup_count > 0 {
        target.run(config.warmup_count).map_err(dispatch)?;
        let warm = target.take_delivered();
        if warm != config.warmup_count {
            return Err(BenchError::CounterMismatch {
                model: label.to_owned(),
                repetition: 0,
                expected: config.warmup_count,
                actual: warm,
            });
        }
    }
    let mut timings = Vec::with_capacity(config.repetitions);
    for rep in 1..=config.repetitions {
        let start = Instant::now();
        target.run(config.message_count).map_err(dispatch)?;
        let elapsed = start.elapsed();
        let delivered = target.take_delivered();
        if delivered != config.message_count {
            return Err(BenchError::CounterMismatch {
                model: label.to_owned(),
                repetition: rep,
                expected: config.message_count,
                actual: delivered,
            });
        }
        timings.push(whole_micros(elapsed));
    }
    Ok(BenchResult::from_timings(label, config.message_count, &timings))
}

/// Measures every selected model and fills in speedups.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchResult>, BenchError> {
    config.validate()?;
    let payload = Bytes::from(vec![0xA5u8; config.payload_size]);
    let mut results = Vec::with_capacity(config.models.len());
    for model in &config.models {
        let label = model.label();
        let mut target = build_target(*model, payload.clone()).map_err(|source| BenchError::Dispatch {
            model: label.clone(),
            source,
        })?;
        results.push(measure(&label, target.as_mut(), config)?);
    }
    apply_baseline(&mut results);
    Ok(results)
}

pub fn build_target(model: BenchModel, payload: Bytes) -> Result<Box<dyn BenchTarget>, DispatchError> {
    Ok(match model {
        BenchModel::Direct => Box::new(DirectTarget::new(payload)?),
        BenchModel::OsSend => Box::new(OsTarget::new(payload, false)?),
        BenchModel::OsPostPump => Box::new(OsTarget::new(payload, true)?),
        BenchModel::MsgMapOverOs => Box::new(MsgMapOverOsTarget::new(payload)?),
        BenchModel::MsgMap => Box::new(MsgMapTarget::new(payload)?),
        BenchModel::Vtable { catalog_size } => Box::new(VtableTarget::new(payload, catalog_size)?),
    })
}

const BENCH_TYPES: usize = 8;
const BENCH_TYPE: MessageTypeId = MessageTypeId(0);

fn registry(types: usize) -> MessageTypeRegistry {
    MessageTypeRegistry::with_types((0..types).map(|i| format!("M{i}"))).expect("fresh names")
}

pub struct DirectTarget {
    bus: DirectBus,
    sender: ComponentId,
    payload: Bytes,
    counter: DeliveryCounter,
}

impl DirectTarget {
    pub fn new(payload: Bytes) -> Result<Self, DispatchError> {
        let counter = DeliveryCounter::default();
        let mut bus = DirectBus::new(registry(BENCH_TYPES));
        let sender = bus.create_component();
        let c = counter.clone();
        let cb: DirectCallback = Box::new(move |_, _| {
            c.bump();
            Ok(())
        });
        let receiver = bus.create_handler(vec![(BENCH_TYPE, cb)])?;
        bus.subscribe(sender, receiver)?;
        Ok(Self {
            bus,
            sender,
            payload,
            counter,
        })
    }
}

impl BenchTarget for DirectTarget {
    fn run(&mut self, count: u64) -> Result<(), DispatchError> {
        let ty = black_box(BENCH_TYPE);
        for _ in 0..count {
            self.bus.emit(self.sender, ty, self.payload.clone())?;
        }
        Ok(())
    }

    fn take_delivered(&mut self) -> u64 {
        self.counter.take()
    }
}

pub struct OsTarget {
    sys: WindowSystem,
    handle: WindowHandle,
    payload: Bytes,
    queued: bool,
    counter: DeliveryCounter,
}

impl OsTarget {
    pub fn new(payload: Bytes, queued: bool) -> Result<Self, DispatchError> {
        let counter = DeliveryCounter::default();
        let mut sys = WindowSystem::new(registry(BENCH_TYPES));
        let c = counter.clone();
        let cb: OsCallback = Box::new(move |_, _| {
            c.bump();
            Ok(())
        });
        let (handle, _) = sys.register_window(vec![(BENCH_TYPE, cb)])?;
        Ok(Self {
            sys,
            handle,
            payload,
            queued,
            counter,
        })
    }
}

const SENDER: ComponentId = ComponentId(0);

impl BenchTarget for OsTarget {
    fn run(&mut self, count: u64) -> Result<(), DispatchError> {
        let ty = black_box(BENCH_TYPE);
        if !self.queued {
            for _ in 0..count {
                self.sys.send(SENDER, self.handle, ty, self.payload.clone())?;
            }
            return Ok(());
        }
        let mut left = count;
        while left > 0 {
            let batch = left.min(POST_BATCH);
            for _ in 0..batch {
                self.sys.post(SENDER, self.handle, ty, self.payload.clone())?;
            }
            let report = self.sys.pump();
            if let Some(f) = report.failures.into_iter().next() {
                return Err(f.error);
            }
            left -= batch;
        }
        Ok(())
    }

    fn take_delivered(&mut self) -> u64 {
        self.counter.take()
    }
}

fn counting_map_model(counter: &DeliveryCounter) -> Result<(MessageMapModel, HandlerId), DispatchError> {
    let mut model = MessageMapModel::new(registry(BENCH_TYPES));
    let c = counter.clone();
    let cb: MapCallback = Arc::new(move |_, _| c.bump());
    // the binding sits in the base kind, one cascade step above the instance
    let base = model.define_kind(None, vec![(BENCH_TYPE, cb)])?;
    let leaf = model.define_kind(Some(base), vec![])?;
    let instance = model.create_instance(leaf)?;
    Ok((model, instance))
}

pub struct MsgMapOverOsTarget {
    sys: WindowSystem,
    handle: WindowHandle,
    payload: Bytes,
    counter: DeliveryCounter,
}

impl MsgMapOverOsTarget {
    pub fn new(payload: Bytes) -> Result<Self, DispatchError> {
        let counter = DeliveryCounter::default();
        let (model, instance) = counting_map_model(&counter)?;
        let model = Arc::new(model);
        let mut sys = WindowSystem::new(model.registry().clone());
        let handle = sys.register_window_proc(Box::new(MapWindowInstance::new(model, instance)?));
        Ok(Self {
            sys,
            handle,
            payload,
            counter,
        })
    }
}

impl BenchTarget for MsgMapOverOsTarget {
    fn run(&mut self, count: u64) -> Result<(), DispatchError> {
        let ty = black_box(BENCH_TYPE);
        for _ in 0..count {
            self.sys.send(SENDER, self.handle, ty, self.payload.clone())?;
        }
        Ok(())
    }

    fn take_delivered(&mut self) -> u64 {
        self.counter.take()
    }
}

pub struct MsgMapTarget {
    model: MessageMapModel,
    instance: HandlerId,
    payload: Bytes,
    seq: u64,
    counter: DeliveryCounter,
}

impl MsgMapTarget {
    pub fn new(payload: Bytes) -> Result<Self, DispatchError> {
        let counter = DeliveryCounter::default();
        let (model, instance) = counting_map_model(&counter)?;
        Ok(Self {
            model,
            instance,
            payload,
            seq: 0,
            counter,
        })
    }
}

impl BenchTarget for MsgMapTarget {
    fn run(&mut self, count: u64) -> Result<(), DispatchError> {
        let ty = black_box(BENCH_TYPE);
        for _ in 0..count {
            let msg = Message {
                msg_type: ty,
                payload: self.payload.clone(),
                sender: SENDER,
                seq: self.seq,
            };
            self.seq += 1;
            self.model.dispatch_via_map(self.instance, &msg)?;
        }
        Ok(())
    }

    fn take_delivered(&mut self) -> u64 {
        self.counter.take()
    }
}

pub struct VtableTarget {
    model: VtableModel,
    handler: HandlerId,
    msg_type: MessageTypeId,
    payload: Bytes,
    seq: u64,
    counter: DeliveryCounter,
}

impl VtableTarget {
    /// The benchmark type occupies the catalog's last slot.
    pub fn new(payload: Bytes, catalog_size: usize) -> Result<Self, DispatchError> {
        let size = catalog_size.max(1);
        let counter = DeliveryCounter::default();
        let registry = registry(size);
        let slots: Vec<MessageTypeId> = registry.iter().map(|(id, _)| id).collect();
        let msg_type = slots[size - 1];
        let mut model = VtableModel::new(registry, PredefinedEventCatalog::build(&slots)?);
        let c = counter.clone();
        let f: SlotFn = Arc::new(move |_, _| c.bump());
        let handler = model.create_handler(vec![(msg_type, f)])?;
        Ok(Self {
            model,
            handler,
            msg_type,
            payload,
            seq: 0,
            counter,
        })
    }
}

impl BenchTarget for VtableTarget {
    fn run(&mut self, count: u64) -> Result<(), DispatchError> {
        let ty = black_box(self.msg_type);
        for _ in 0..count {
            let msg = Message {
                msg_type: ty,
                payload: self.payload.clone(),
                sender: SENDER,
                seq: self.seq,
            };
            self.seq += 1;
            self.model.dispatch_typed(self.handler, &msg)?;
        }
        Ok(())
    }

    fn take_delivered(&mut self) -> u64 {
        self.counter.take()
    }
}

/// Cost of building one handler against a catalog of `catalog_size` slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogCost {
    pub catalog_size: usize,
    pub construct_ns_per_handler: f64,
}

pub fn catalog_construction_cost(catalog_size: usize, handlers: usize) -> Result<CatalogCost, DispatchError> {
    let slots: Vec<MessageTypeId> = (0..catalog_size as u32).map(MessageTypeId).collect();
    let catalog = PredefinedEventCatalog::build(&slots)?;
    let f: SlotFn = Arc::new(|_, _| {});
    let handlers = handlers.max(1);
    let start = Instant::now();
    for i in 0..handlers {
        let mut h = catalog.new_handler(HandlerId(i as u64));
        h.override_slot(i % catalog_size.max(1), f.clone()).ok();
        black_box(&h);
    }
    let ns = start.elapsed().as_nanos() as f64;
    Ok(CatalogCost {
        catalog_size,
        construct_ns_per_handler: ns / handlers as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected markdown, json or csv)")),
        }
    }
}

#[derive(Serialize)]
struct JsonRow<'a> {
    model: &'a str,
    n: u64,
    elapsed_ms: f64,
    rate: u64,
    speedup: f64,
}

pub fn render_report(results: &[BenchResult], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(results),
        ReportFormat::Json => {
            let rows: Vec<JsonRow<'_>> = results
                .iter()
                .map(|r| JsonRow {
                    model: &r.model,
                    n: r.message_count,
                    elapsed_ms: r.elapsed_ms(),
                    rate: r.rate,
                    speedup: r.speedup(),
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&rows).expect("plain data");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("model,n,elapsed_ms,rate,speedup\n");
            for r in results {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.model,
                    r.message_count,
                    millis(r.elapsed_us),
                    r.rate,
                    hundredths(r.speedup_hundredths)
                ));
            }
            s
        }
    }
}

fn render_markdown(results: &[BenchResult]) -> String {
    if results.is_empty() {
        return String::new();
    }
    let n = results[0].message_count;
    let baseline = &results[baseline_index(results)].model;
    let row = |title: String, cells: Vec<String>| format!("| {} | {} |\n", title, cells.join(" | "));

    let mut s = row(String::new(), results.iter().map(|r| r.model.clone()).collect());
    s.push_str(&format!("|---|{}\n", "---:|".repeat(results.len())));
    s.push_str(&row(
        format!("{n} sends, ms"),
        results.iter().map(|r| millis(r.elapsed_us)).collect(),
    ));
    s.push_str(&row("messages/ms".into(), results.iter().map(|r| r.rate.to_string()).collect()));
    s.push_str(&row(
        format!("speedup vs {baseline}"),
        results.iter().map(BenchResult::speedup_label).collect(),
    ));
    let reps = results[0].repetitions;
    s.push_str(&format!(
        "\nElapsed is the median of {reps} repetition{} (our choice; min/max ms: {}).\n",
        if reps == 1 { "" } else { "s" },
        results
            .iter()
            .map(|r| format!("{} {}/{}", r.model, millis(r.min_us), millis(r.max_us)))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    s
}

pub fn render_catalog_costs(costs: &[CatalogCost]) -> String {
    let mut s = String::from("| catalog slots | handler construction, ns |\n|---:|---:|\n");
    for c in costs {
        s.push_str(&format!("| {} | {:.1} |\n", c.catalog_size, c.construct_ns_per_handler));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_pair() -> Vec<BenchResult> {
        let mut results = vec![
            BenchResult::from_timings("os_send", 10_000_000, &[39_357_000]),
            BenchResult::from_timings("direct", 10_000_000, &[2_814_000]),
        ];
        apply_baseline(&mut results);
        results
    }

    #[test]
    fn table_arithmetic() {
        let r = reference_pair();
        assert_eq!(r[0].rate, 254);
        assert_eq!(r[1].rate, 3553);
        assert_eq!(r[0].speedup_label(), "x1.00");
        assert_eq!(r[1].speedup_label(), "x13.98");
    }

    #[test]
    fn median_min_max() {
        let r = BenchResult::from_timings("m", 100, &[50, 10, 30, 20, 40]);
        assert_eq!((r.elapsed_us, r.min_us, r.max_us), (30, 10, 50));
        let r = BenchResult::from_timings("m", 100, &[10, 40, 20, 30]);
        assert_eq!(r.elapsed_us, 25);
    }

    #[test]
    fn baseline_falls_back_to_first() {
        let mut r = vec![
            BenchResult::from_timings("direct", 1000, &[100]),
            BenchResult::from_timings("vtable", 1000, &[50]),
        ];
        apply_baseline(&mut r);
        assert_eq!(r[0].speedup_label(), "x1.00");
        assert_eq!(r[1].speedup_label(), "x2.00");
    }

    #[test]
    fn markdown_shape() {
        let md = render_report(&reference_pair(), ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "|  | os_send | direct |");
        assert_eq!(lines[2], "| 10000000 sends, ms | 39357.000 | 2814.000 |");
        assert_eq!(lines[3], "| messages/ms | 254 | 3553 |");
        assert_eq!(lines[4], "| speedup vs os_send | x1.00 | x13.98 |");
        assert_eq!(md, render_report(&reference_pair(), ReportFormat::Markdown));
    }

    #[test]
    fn single_result_is_x1() {
        let mut r = vec![BenchResult::from_timings("direct", 1000, &[7])];
        apply_baseline(&mut r);
        let md = render_report(&r, ReportFormat::Markdown);
        assert!(md.contains("| speedup vs direct | x1.00 |"), "{md}");
    }

    #[test]
    fn json_and_csv() {
        let json = render_report(&reference_pair(), ReportFormat::Json);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v[1]["model"], "direct");
        assert_eq!(v[1]["n"], 10_000_000);
        assert_eq!(v[1]["elapsed_ms"], 2814.0);
        assert_eq!(v[1]["rate"], 3553);
        assert_eq!(v[1]["speedup"], 13.98);
        let csv = render_report(&reference_pair(), ReportFormat::Csv);
        assert_eq!(
            csv,
            "model,n,elapsed_ms,rate,speedup\nos_send,10000000,39357.000,254,1.00\ndirect,10000000,2814.000,3553,13.98\n"
        );
    }

    #[test]
    fn model_names() {
        for m in [
            BenchModel::Direct,
            BenchModel::OsSend,
            BenchModel::OsPostPump,
            BenchModel::MsgMapOverOs,
            BenchModel::MsgMap,
            BenchModel::Vtable { catalog_size: 64 },
            BenchModel::Vtable { catalog_size: 512 },
        ] {
            assert_eq!(m.label().parse::<BenchModel>(), Ok(m));
        }
        assert!("vtable[0]".parse::<BenchModel>().is_err());
        assert!("win32".parse::<BenchModel>().is_err());
    }

    #[test]
    fn every_target_delivers_exactly_n() {
        let mut models = BenchModel::defaults();
        models.push(BenchModel::MsgMap);
        models.push(BenchModel::Vtable { catalog_size: 8 });
        for m in models {
            let mut t = build_target(m, Bytes::from_static(b"xy")).unwrap();
            t.run(2500).unwrap();
            assert_eq!(t.take_delivered(), 2500, "{m}");
            assert_eq!(t.take_delivered(), 0, "{m}");
        }
    }

    struct Dropping(DirectTarget);

    impl BenchTarget for Dropping {
        fn run(&mut self, count: u64) -> Result<(), DispatchError> {
            self.0.run(count.saturating_sub(1))
        }
        fn take_delivered(&mut self) -> u64 {
            self.0.take_delivered()
        }
    }

    #[test]
    fn dropped_message_is_a_counter_mismatch() {
        let mut t = Dropping(DirectTarget::new(Bytes::new()).unwrap());
        let config = BenchConfig {
            warmup_count: 0,
            message_count: 100,
            repetitions: 3,
            ..BenchConfig::default()
        };
        assert_eq!(
            measure("faulty", &mut t, &config),
            Err(BenchError::CounterMismatch {
                model: "faulty".into(),
                repetition: 1,
                expected: 100,
                actual: 99
            })
        );
    }

    #[test]
    fn config_validation() {
        let bad = BenchConfig {
            message_count: 0,
            ..BenchConfig::default()
        };
        assert!(matches!(run_bench(&bad), Err(BenchError::InvalidConfig(_))));
        let bad = BenchConfig {
            repetitions: 0,
            ..BenchConfig::default()
        };
        assert!(matches!(run_bench(&bad), Err(BenchError::InvalidConfig(_))));
    }

    #[test]
    fn small_run() {
        let config = BenchConfig {
            message_count: 10_000,
            warmup_count: 100,
            repetitions: 3,
            ..BenchConfig::default()
        };
        let results = run_bench(&config).unwrap();
        assert_eq!(results.len(), 5);
        let base = results[baseline_index(&results)].elapsed_us;
        for r in &results {
            assert_eq!(r.rate, rate_per_ms(r.message_count, r.elapsed_us));
            assert_eq!(r.speedup_hundredths, speedup_hundredths(base, r.elapsed_us));
            assert!(r.min_us <= r.elapsed_us && r.elapsed_us <= r.max_us);
        }
    }
}
