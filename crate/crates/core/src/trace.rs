//! Trace data model, JSONL reading/writing and usage vocabularies.
//!
//! A trace file is UTF-8 JSONL. The optional first line is a header
//! `{"header":true,"depth":D,"epoch_weekday":W}`; every other line is one
//! usage event with the context snapshot observed just before it.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minutes in the concatenated weekday + weekend cycle.
pub const CYCLE_MINUTES: f64 = 2880.0;
/// Accelerometer power is clamped into this range before taking the log.
pub const ACCEL_POWER_RANGE: (f64, f64) = (0.1, 10_000.0);
/// Default number of usage categories kept per kind.
pub const DEFAULT_VOCAB_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UsageKind {
    Web,
    Phone,
    App,
}

impl UsageKind {
    pub const ALL: [UsageKind; 3] = [UsageKind::Web, UsageKind::Phone, UsageKind::App];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UsageKind::Web => "web",
            UsageKind::Phone => "phone",
            UsageKind::App => "app",
        }
    }
}

impl fmt::Display for UsageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for UsageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "web" => Ok(UsageKind::Web),
            "phone" => Ok(UsageKind::Phone),
            "app" => Ok(UsageKind::App),
            other => Err(Error::invalid(format!("unknown usage kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub user_id: String,
    /// Seconds since the trace epoch.
    pub timestamp: u64,
    pub kind: UsageKind,
    pub label: String,
}

/// Everything known about the device right before a usage event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    /// Minutes in `[0, 2880)`; weekdays occupy the first 1440 minutes.
    pub time_of_cycle: f64,
    pub accel_log_power: f64,
    pub gps: Option<(f64, f64)>,
    pub cell_id: Option<String>,
    /// Most-recent-first labels per usage kind, indexed by [`UsageKind::index`].
    pub prior_usage: [Vec<String>; 3],
}

impl ContextSnapshot {
    pub fn prior(&self, kind: UsageKind) -> &[String] {
        &self.prior_usage[kind.index()]
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..CYCLE_MINUTES).contains(&self.time_of_cycle) {
            return Err(format!("time of cycle {} outside [0, 2880)", self.time_of_cycle));
        }
        if !self.accel_log_power.is_finite() {
            return Err("accelerometer log-power is not finite".into());
        }
        if let Some((lat, lon)) = self.gps {
            if !(lat.abs() <= 90.0 && lon.abs() <= 180.0) {
                return Err(format!("gps ({lat}, {lon}) out of range"));
            }
        }
        Ok(())
    }
}

/// Log of accelerometer power after clamping the raw power into [`ACCEL_POWER_RANGE`].
pub fn accel_log_power(raw_power: f64) -> f64 {
    raw_power.clamp(ACCEL_POWER_RANGE.0, ACCEL_POWER_RANGE.1).ln()
}

/// Maps seconds since the epoch onto the 2880-minute weekday/weekend cycle.
/// `epoch_weekday` is 0 for Monday through 6 for Sunday.
pub fn time_of_cycle(timestamp: u64, epoch_weekday: u8) -> f64 {
    let day = timestamp / 86_400;
    let weekday = (u64::from(epoch_weekday) + day) % 7;
    let minute = (timestamp % 86_400) as f64 / 60.0;
    if weekday >= 5 {
        minute + 1440.0
    } else {
        minute
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEvent {
    pub context: ContextSnapshot,
    pub outcome: UsageEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    /// Prior-usage chains are truncated to this many labels.
    pub depth: usize,
    pub epoch_weekday: u8,
}

impl Default for TraceHeader {
    fn default() -> Self {
        TraceHeader {
            depth: 1,
            epoch_weekday: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTrace {
    pub user_id: String,
    /// Sorted by timestamp.
    pub events: Vec<LabeledEvent>,
}

impl UserTrace {
    /// Events whose outcome is of `kind`, in order.
    pub fn events_of(&self, kind: UsageKind) -> Vec<LabeledEvent> {
        self.events
            .iter()
            .filter(|e| e.outcome.kind == kind)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub header: TraceHeader,
    /// Sorted by user id.
    pub users: Vec<UserTrace>,
}

impl Trace {
    pub fn event_count(&self) -> usize {
        self.users.iter().map(|u| u.events.len()).sum()
    }

    pub fn user(&self, id: &str) -> Option<&UserTrace> {
        self.users.iter().find(|u| u.user_id == id)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Trace> {
        parse_trace(path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        write_trace(self, &mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        write_trace(self, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: bool,
    depth: usize,
    epoch_weekday: u8,
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    user: String,
    ts: u64,
    kind: UsageKind,
    label: String,
    tod: f64,
    alp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cell: Option<String>,
    #[serde(default)]
    prior_web: Vec<String>,
    #[serde(default)]
    prior_phone: Vec<String>,
    #[serde(default)]
    prior_app: Vec<String>,
}

impl EventLine {
    fn into_event(self, line: usize) -> Result<LabeledEvent> {
        let err = |message: String| Error::Parse { line, message };
        if self.label.is_empty() {
            return Err(err("empty label".into()));
        }
        let gps = match (self.lat, self.lon) {
            (Some(lat), Some(lon)) => Some((lat, lon)),
            (None, None) => None,
            _ => return Err(err("lat and lon must be given together".into())),
        };
        let (lo, hi) = (ACCEL_POWER_RANGE.0.ln(), ACCEL_POWER_RANGE.1.ln());
        let context = ContextSnapshot {
            time_of_cycle: self.tod,
            accel_log_power: self.alp.clamp(lo, hi),
            gps,
            cell_id: self.cell,
            prior_usage: [self.prior_web, self.prior_phone, self.prior_app],
        };
        context.validate().map_err(err)?;
        Ok(LabeledEvent {
            context,
            outcome: UsageEvent {
                user_id: self.user,
                timestamp: self.ts,
                kind: self.kind,
                label: self.label,
            },
        })
    }

    fn from_event(e: &LabeledEvent, depth: usize) -> EventLine {
        let prior = |k: UsageKind| {
            let p = e.context.prior(k);
            p[..p.len().min(depth)].to_vec()
        };
        EventLine {
            user: e.outcome.user_id.clone(),
            ts: e.outcome.timestamp,
            kind: e.outcome.kind,
            label: e.outcome.label.clone(),
            tod: e.context.time_of_cycle,
            alp: e.context.accel_log_power,
            lat: e.context.gps.map(|g| g.0),
            lon: e.context.gps.map(|g| g.1),
            cell: e.context.cell_id.clone(),
            prior_web: prior(UsageKind::Web),
            prior_phone: prior(UsageKind::Phone),
            prior_app: prior(UsageKind::App),
        }
    }
}

/// Reads a JSONL trace, grouping events per user.
pub fn parse_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace_from(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_trace_from(reader: impl BufRead) -> Result<Trace> {
    let mut header = None;
    let mut users: HashMap<String, Vec<(usize, LabeledEvent)>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<trace>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if value.get("header").and_then(|h| h.as_bool()) == Some(true) {
            let h: HeaderLine = serde_json::from_value(value).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if header.is_some() || !users.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "header must be the first line".into(),
                });
            }
            header = Some(TraceHeader {
                depth: h.depth,
                epoch_weekday: h.epoch_weekday % 7,
            });
            continue;
        }
        let rec: EventLine = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let event = rec.into_event(line_no)?;
        let seq = users.entry(event.outcome.user_id.clone()).or_default();
        if let Some((_, last)) = seq.last() {
            if event.outcome.timestamp < last.outcome.timestamp {
                return Err(Error::NonMonotonic {
                    line: line_no,
                    user: event.outcome.user_id.clone(),
                    ts: event.outcome.timestamp,
                });
            }
        }
        seq.push((line_no, event));
    }
    let header = header.unwrap_or_default();
    let mut ids: Vec<String> = users.keys().cloned().collect();
    ids.sort();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let seq = users.remove(&id).expect("key listed above");
        check_prior_chains(&seq, header.depth)?;
        out.push(UserTrace {
            user_id: id,
            events: seq.into_iter().map(|(_, e)| e).collect(),
        });
    }
    Ok(Trace { header, users: out })
}

/// The first prior label of each kind must be the label of the user's
/// previous event of that kind, whenever such an event exists.
fn check_prior_chains(seq: &[(usize, LabeledEvent)], depth: usize) -> Result<()> {
    if depth == 0 {
        return Ok(());
    }
    let mut last: [Option<&str>; 3] = [None; 3];
    for (line, e) in seq {
        for kind in UsageKind::ALL {
            if let Some(prev) = last[kind.index()] {
                if e.context.prior(kind).first().map(String::as_str) != Some(prev) {
                    return Err(Error::PriorChain { line: *line, kind });
                }
            }
        }
        last[e.outcome.kind.index()] = Some(&e.outcome.label);
    }
    Ok(())
}

/// Writes the canonical form: header, then users by id, events in order.
pub fn write_trace(trace: &Trace, out: &mut impl Write) -> std::io::Result<()> {
    let header = HeaderLine {
        header: true,
        depth: trace.header.depth,
        epoch_weekday: trace.header.epoch_weekday,
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    let mut users: Vec<&UserTrace> = trace.users.iter().collect();
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    for user in users {
        for e in &user.events {
            serde_json::to_writer(&mut *out, &EventLine::from_event(e, trace.header.depth))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Rewrites every event's prior-usage chains from the event order itself,
/// keeping at most `depth` labels per kind.
pub fn rebuild_prior_chains(events: &mut [LabeledEvent], depth: usize) {
    let mut history: [Vec<String>; 3] = Default::default();
    for e in events.iter_mut() {
        for kind in UsageKind::ALL {
            e.context.prior_usage[kind.index()] = history[kind.index()].clone();
        }
        let h = &mut history[e.outcome.kind.index()];
        h.insert(0, e.outcome.label.clone());
        h.truncate(depth);
    }
}

/// The top labels of one usage kind, most frequent first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    pub kind: UsageKind,
    labels: Vec<String>,
    counts: Vec<u64>,
    /// Number of events of this kind seen while building, kept or not.
    total_events: u64,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    kind: UsageKind,
    labels: Vec<String>,
    counts: Vec<u64>,
    total_events: u64,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index = r
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Vocabulary {
            kind: r.kind,
            labels: r.labels,
            counts: r.counts,
            total_events: r.total_events,
            index,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            kind: v.kind,
            labels: v.labels,
            counts: v.counts,
            total_events: v.total_events,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Share of the building events whose label was kept.
    pub fn coverage(&self) -> f64 {
        if self.total_events == 0 {
            return 0.0;
        }
        self.counts.iter().sum::<u64>() as f64 / self.total_events as f64
    }

    /// Splits events into the in-vocabulary ones and the dropped fraction.
    pub fn retain<'a>(&self, events: &'a [LabeledEvent]) -> (Vec<&'a LabeledEvent>, f64) {
        let kept: Vec<&LabeledEvent> = events
            .iter()
            .filter(|e| e.outcome.kind == self.kind && self.id(&e.outcome.label).is_some())
            .collect();
        let of_kind = events.iter().filter(|e| e.outcome.kind == self.kind).count();
        let dropped = if of_kind == 0 {
            0.0
        } else {
            1.0 - kept.len() as f64 / of_kind as f64
        };
        (kept, dropped)
    }
}

/// Keeps the `cap` most frequent labels of `kind`; ties go to the
/// lexicographically smaller label.
pub fn build_vocabulary<'a>(
    events: impl IntoIterator<Item = &'a UsageEvent>,
    kind: UsageKind,
    cap: usize,
) -> Result<Vocabulary> {
    if cap == 0 {
        return Err(Error::invalid("vocabulary cap must be at least 1"));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut total = 0u64;
    for e in events.into_iter().filter(|e| e.kind == kind) {
        *counts.entry(e.label.as_str()).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyVocabulary(kind));
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    Ok(Vocabulary::from(VocabularyRepr {
        kind,
        labels: ranked.iter().map(|(l, _)| l.to_string()).collect(),
        counts: ranked.iter().map(|(_, c)| *c).collect(),
        total_events: total,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(user: &str, ts: u64, kind: UsageKind, label: &str) -> LabeledEvent {
        LabeledEvent {
            context: ContextSnapshot {
                time_of_cycle: 10.0,
                accel_log_power: 1.0,
                gps: None,
                cell_id: None,
                prior_usage: Default::default(),
            },
            outcome: UsageEvent {
                user_id: user.into(),
                timestamp: ts,
                kind,
                label: label.into(),
            },
        }
    }

    #[test]
    fn empty_input_is_empty_trace() {
        let t = parse_trace_from("".as_bytes()).unwrap();
        assert!(t.users.is_empty());
    }

    #[test]
    fn single_line() {
        let line = r#"{"user":"a","ts":5,"kind":"web","label":"x.com","tod":3.5,"alp":0.2}"#;
        let t = parse_trace_from(line.as_bytes()).unwrap();
        assert_eq!(t.users.len(), 1);
        assert_eq!(t.users[0].events.len(), 1);
        assert_eq!(t.users[0].events[0].outcome.label, "x.com");
        assert_eq!(t.header, TraceHeader::default());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"header\":true,\"depth\":1,\"epoch_weekday\":0}\n{not json}\n";
        match parse_trace_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_monotonic_timestamps_rejected() {
        let text = concat!(
            r#"{"user":"a","ts":9,"kind":"app","label":"m","tod":1,"alp":0}"#,
            "\n",
            r#"{"user":"b","ts":1,"kind":"app","label":"m","tod":1,"alp":0}"#,
            "\n",
            r#"{"user":"a","ts":3,"kind":"app","label":"m","tod":1,"alp":0,"prior_app":["m"]}"#,
            "\n"
        );
        assert!(matches!(
            parse_trace_from(text.as_bytes()),
            Err(Error::NonMonotonic { line: 3, .. })
        ));
    }

    #[test]
    fn broken_prior_chain_rejected() {
        let text = concat!(
            r#"{"user":"a","ts":1,"kind":"app","label":"m","tod":1,"alp":0}"#,
            "\n",
            r#"{"user":"a","ts":3,"kind":"app","label":"n","tod":1,"alp":0,"prior_app":["n"]}"#,
            "\n"
        );
        assert!(matches!(
            parse_trace_from(text.as_bytes()),
            Err(Error::PriorChain { line: 2, kind: UsageKind::App })
        ));
    }

    #[test]
    fn out_of_range_context_rejected() {
        let line = r#"{"user":"a","ts":5,"kind":"web","label":"x","tod":2880,"alp":0.2}"#;
        assert!(matches!(parse_trace_from(line.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let line = r#"{"user":"a","ts":5,"kind":"web","label":"x","tod":1,"alp":0.2,"lat":95,"lon":0}"#;
        assert!(parse_trace_from(line.as_bytes()).is_err());
    }

    #[test]
    fn unknown_fields_ignored_and_alp_clamped() {
        let line = r#"{"user":"a","ts":5,"kind":"phone","label":"h1","tod":1,"alp":50,"battery":3}"#;
        let t = parse_trace_from(line.as_bytes()).unwrap();
        let alp = t.users[0].events[0].context.accel_log_power;
        assert_eq!(alp, 10_000f64.ln());
    }

    #[test]
    fn cycle_mapping() {
        // epoch is a Friday (4): day 0 weekday, day 1 Saturday.
        assert_eq!(time_of_cycle(60, 4), 1.0);
        assert_eq!(time_of_cycle(86_400 + 120, 4), 1442.0);
        assert_eq!(time_of_cycle(3 * 86_400, 4), 0.0);
        assert_eq!(accel_log_power(0.0), 0.1f64.ln());
    }

    #[test]
    fn rebuilt_chains_are_lagged_labels() {
        let mut evs = vec![
            event("a", 1, UsageKind::Web, "x"),
            event("a", 2, UsageKind::App, "m"),
            event("a", 3, UsageKind::Web, "y"),
            event("a", 4, UsageKind::Web, "z"),
        ];
        rebuild_prior_chains(&mut evs, 2);
        assert!(evs[0].context.prior(UsageKind::Web).is_empty());
        assert_eq!(evs[2].context.prior(UsageKind::Web), ["x"]);
        assert_eq!(evs[2].context.prior(UsageKind::App), ["m"]);
        assert_eq!(evs[3].context.prior(UsageKind::Web), ["y", "x"]);
    }

    #[test]
    fn vocabulary_order_and_cap() {
        let mut evs = Vec::new();
        for (label, n) in [("c", 1), ("a", 5), ("b", 3)] {
            for i in 0..n {
                evs.push(event("u", i, UsageKind::Web, label).outcome);
            }
        }
        let v = build_vocabulary(&evs, UsageKind::Web, 2).unwrap();
        assert_eq!(v.labels(), ["a", "b"]);
        assert_eq!(v.id("c"), None);
        assert!((v.coverage() - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn vocabulary_ties_lexicographic() {
        let evs: Vec<UsageEvent> = ["q", "p", "r", "p", "q"]
            .iter()
            .map(|l| event("u", 0, UsageKind::App, l).outcome)
            .collect();
        let v = build_vocabulary(&evs, UsageKind::App, 100).unwrap();
        assert_eq!(v.labels(), ["p", "q", "r"]);
    }

    #[test]
    fn vocabulary_cap_not_binding() {
        let evs: Vec<UsageEvent> = (0..40)
            .map(|i| event("u", 0, UsageKind::Phone, &format!("n{i}")).outcome)
            .collect();
        assert_eq!(build_vocabulary(&evs, UsageKind::Phone, 100).unwrap().len(), 40);
    }

    #[test]
    fn vocabulary_errors() {
        let evs = vec![event("u", 0, UsageKind::Web, "a").outcome];
        assert!(matches!(
            build_vocabulary(&evs, UsageKind::App, 100),
            Err(Error::EmptyVocabulary(UsageKind::App))
        ));
        assert!(build_vocabulary(&evs, UsageKind::Web, 0).is_err());
    }

    #[test]
    fn vocabulary_serde_restores_index() {
        let evs: Vec<UsageEvent> = ["a", "b", "b"]
            .iter()
            .map(|l| event("u", 0, UsageKind::Web, l).outcome)
            .collect();
        let v = build_vocabulary(&evs, UsageKind::Web, 10).unwrap();
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("a"), Some(1));
    }
}
