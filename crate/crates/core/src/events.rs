//! Event-log ingestion, follower graph and per-(user, item) exposure series.
//!
//! Event logs are JSON-lines:
//!
//! ```text
//! {"kind":"exposure","user":"u1","item":"i9","time":1275000000,"exposer":"u4"}
//! {"kind":"response","user":"u1","item":"i9","time":1275000031}
//! ```
//!
//! Follow edges are JSON-lines `{"follower":"u1","friend":"u4"}`; the followed
//! user is the friend, and a user's friend count `n_f` is its out-degree.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default exposure cap: pairs exposed this many times or more are dropped.
pub const DEFAULT_MAX_EXPOSURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Post,
    Exposure,
    Response,
}

impl EventKind {
    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "post" => Some(EventKind::Post),
            "exposure" => Some(EventKind::Exposure),
            "response" => Some(EventKind::Response),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub user: String,
    pub item: String,
    /// Whole seconds since the epoch.
    pub time: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposer: Option<String>,
}

impl Event {
    pub fn post(user: impl Into<String>, item: impl Into<String>, time: i64) -> Self {
        Event {
            kind: EventKind::Post,
            user: user.into(),
            item: item.into(),
            time,
            exposer: None,
        }
    }

    pub fn exposure(
        user: impl Into<String>,
        item: impl Into<String>,
        time: i64,
        exposer: impl Into<String>,
    ) -> Self {
        Event {
            kind: EventKind::Exposure,
            user: user.into(),
            item: item.into(),
            time,
            exposer: Some(exposer.into()),
        }
    }

    pub fn response(user: impl Into<String>, item: impl Into<String>, time: i64) -> Self {
        Event {
            kind: EventKind::Response,
            user: user.into(),
            item: item.into(),
            time,
            exposer: None,
        }
    }
}

/// Wire form; `time` is read as a JSON number so fractional seconds can be truncated.
#[derive(Deserialize)]
struct RawEvent {
    kind: String,
    user: String,
    item: String,
    time: serde_json::Number,
    #[serde(default)]
    exposer: Option<String>,
}

fn parse_event_line(line: &str, line_no: usize) -> Result<Event> {
    let raw: RawEvent = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let kind = EventKind::parse(&raw.kind).ok_or_else(|| Error::Parse {
        line: line_no,
        message: format!("unknown kind tag `{}`", raw.kind),
    })?;
    let time = if let Some(t) = raw.time.as_i64() {
        t
    } else {
        let t = raw.time.as_f64().ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("time `{}` is not representable", raw.time),
        })?;
        t.trunc() as i64
    };
    if time < 0 || raw.time.as_f64().is_some_and(|t| t < 0.0) {
        return Err(Error::Parse {
            line: line_no,
            message: format!("negative time {}", raw.time),
        });
    }
    Ok(Event {
        kind,
        user: raw.user,
        item: raw.item,
        time,
        exposer: raw.exposer,
    })
}

/// Counts of what the exposure cap removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapReport {
    pub max_exposures: usize,
    pub dropped_pairs: usize,
    pub dropped_exposures: usize,
    pub dropped_other: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub cap: CapReport,
}

/// Reads a JSON-lines event log, sorts it by time and applies the exposure cap.
pub fn load_event_log(path: impl AsRef<Path>, max_exposures: usize) -> Result<EventLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_event_line(&line, idx + 1)?);
    }
    Ok(apply_exposure_cap(events, max_exposures))
}

/// Sorts events by time (stable) and drops every event of a (user, item) pair
/// that received `max_exposures` or more exposures.
pub fn apply_exposure_cap(mut events: Vec<Event>, max_exposures: usize) -> EventLog {
    events.sort_by_key(|e| e.time);
    let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::Exposure) {
        *counts.entry((e.user.as_str(), e.item.as_str())).or_default() += 1;
    }
    let capped: std::collections::HashSet<(String, String)> = counts
        .iter()
        .filter(|(_, &n)| n >= max_exposures)
        .map(|(&(u, i), _)| (u.to_owned(), i.to_owned()))
        .collect();
    let mut cap = CapReport {
        max_exposures,
        dropped_pairs: capped.len(),
        ..CapReport::default()
    };
    if capped.is_empty() {
        return EventLog { events, cap };
    }
    events.retain(|e| {
        let hit = capped.contains(&(e.user.clone(), e.item.clone()));
        if hit {
            if e.kind == EventKind::Exposure {
                cap.dropped_exposures += 1;
            } else {
                cap.dropped_other += 1;
            }
        }
        !hit
    });
    EventLog { events, cap }
}

pub fn write_event_log(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowEdge {
    pub follower: String,
    pub friend: String,
}

pub fn load_follow_edges(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let edge: FollowEdge = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        edges.push((edge.follower, edge.friend));
    }
    Ok(edges)
}

pub fn write_follow_edges(path: impl AsRef<Path>, graph: &FollowerGraph) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (follower, friend) in graph.edges() {
        let edge = FollowEdge {
            follower: follower.to_owned(),
            friend: friend.to_owned(),
        };
        serde_json::to_writer(&mut out, &edge)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Directed who-follows-whom graph over interned user ids.
///
/// Users are stored in sorted id order so indices are stable for a given user set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FollowerGraph {
    users: Vec<String>,
    index: HashMap<String, usize>,
    friends: Vec<Vec<usize>>,
    followers: Vec<Vec<usize>>,
}

impl FollowerGraph {
    /// Builds a graph from index-based adjacency. `friends[u]` lists the users `u` follows.
    pub fn from_adjacency(users: Vec<String>, friends: Vec<Vec<usize>>) -> Result<Self> {
        if users.len() != friends.len() {
            return Err(Error::InvalidInput(format!(
                "{} users but {} adjacency rows",
                users.len(),
                friends.len()
            )));
        }
        let index: HashMap<String, usize> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        if index.len() != users.len() {
            return Err(Error::InvalidInput("duplicate user ids".into()));
        }
        let mut followers = vec![Vec::new(); users.len()];
        let mut friends = friends;
        for (u, row) in friends.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &f in row.iter() {
                if f >= users.len() {
                    return Err(Error::InvalidInput(format!("friend index {f} out of range")));
                }
                if f == u {
                    return Err(Error::SelfEdge(users[u].clone()));
                }
                followers[f].push(u);
            }
        }
        Ok(FollowerGraph {
            users,
            index,
            friends,
            followers,
        })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn index_of(&self, user: &str) -> Option<usize> {
        self.index.get(user).copied()
    }

    pub fn contains(&self, user: &str) -> bool {
        self.index.contains_key(user)
    }

    /// `n_f`: number of users `user` follows; 0 for unknown users.
    pub fn friend_count(&self, user: &str) -> u32 {
        self.index_of(user)
            .map_or(0, |i| self.friends[i].len() as u32)
    }

    pub fn friends_of(&self, idx: usize) -> &[usize] {
        &self.friends[idx]
    }

    pub fn followers_of(&self, idx: usize) -> &[usize] {
        &self.followers[idx]
    }

    pub fn is_friend(&self, user: &str, friend: &str) -> bool {
        match (self.index_of(user), self.index_of(friend)) {
            (Some(u), Some(f)) => self.friends[u].binary_search(&f).is_ok(),
            _ => false,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.friends.iter().map(Vec::len).sum()
    }

    /// All `(follower, friend)` pairs in index order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.friends.iter().enumerate().flat_map(move |(u, row)| {
            row.iter()
                .map(move |&f| (self.users[u].as_str(), self.users[f].as_str()))
        })
    }
}

/// Builds the follower graph from follow edges plus every user mentioned in `events`.
/// Duplicate edges collapse; self-edges are rejected.
pub fn build_graph(events: &[Event], follow_edges: &[(String, String)]) -> Result<FollowerGraph> {
    let mut ids: BTreeSet<&str> = BTreeSet::new();
    for (a, b) in follow_edges {
        if a == b {
            return Err(Error::SelfEdge(a.clone()));
        }
        ids.insert(a);
        ids.insert(b);
    }
    for e in events {
        ids.insert(&e.user);
        if let Some(x) = &e.exposer {
            ids.insert(x);
        }
    }
    let users: Vec<String> = ids.into_iter().map(str::to_owned).collect();
    let index: HashMap<&str, usize> = users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let mut friends = vec![Vec::new(); users.len()];
    for (a, b) in follow_edges {
        friends[index[a.as_str()]].push(index[b.as_str()]);
    }
    FollowerGraph::from_adjacency(users, friends)
}

/// Exposure history of one user for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureSeries {
    pub user: String,
    pub item: String,
    pub n_f: u32,
    /// Non-decreasing; simultaneous exposures from distinct friends share a second.
    pub exposure_times: Vec<i64>,
    /// First response at or after the first exposure.
    pub response_time: Option<i64>,
    /// Time of the user's own post of the item, if it came after the first exposure.
    pub censor_time: Option<i64>,
    /// Last second covered by the log.
    pub observed_until: i64,
}

impl ExposureSeries {
    pub fn first_exposure(&self) -> i64 {
        self.exposure_times[0]
    }

    /// Last second at which the pair is at risk, inclusive. At-risk seconds
    /// start one second after the first exposure.
    pub fn at_risk_end(&self) -> i64 {
        let mut end = self.observed_until;
        if let Some(c) = self.censor_time {
            end = end.min(c - 1);
        }
        if let Some(r) = self.response_time {
            end = end.min(r);
        }
        end
    }

    /// Exposure times strictly before `t`: the messages visible at second `t`.
    pub fn exposures_before(&self, t: i64) -> &[i64] {
        let k = self.exposure_times.partition_point(|&x| x < t);
        &self.exposure_times[..k]
    }

    /// Exposures received while the pair was still at risk. A response in the
    /// same second as the first exposure still counts that exposure.
    pub fn at_risk_exposures(&self) -> &[i64] {
        let end = self.at_risk_end();
        let k = self
            .exposure_times
            .partition_point(|&x| x < end)
            .max(1);
        &self.exposure_times[..k]
    }

    /// Exposure count in effect when the user responded.
    pub fn exposures_at_response(&self) -> Option<usize> {
        self.response_time
            .map(|r| self.exposures_before(r).len().max(1))
    }
}

/// Bookkeeping from [`build_series`]. Every exposure event is accounted for:
/// `exposure_events == exposures_in_series + exposures_not_at_risk`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub exposure_events: usize,
    pub exposures_in_series: usize,
    pub exposures_not_at_risk: usize,
    pub responses_without_exposure: usize,
    pub duplicate_responses: usize,
    pub responses_after_post: usize,
    pub pairs_posted_before_exposure: usize,
    pub exposer_not_friend: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SeriesOptions {
    /// End of the observation window; defaults to the last event time.
    pub observed_until: Option<i64>,
}

#[derive(Default)]
struct PairAcc {
    exposures: Vec<i64>,
    response: Option<i64>,
    post: Option<i64>,
    responded_before_exposure: bool,
}

/// Assembles one series per (user, item) with at least one exposure.
///
/// `events` must be time-sorted (as produced by [`load_event_log`]).
pub fn build_series(
    events: &[Event],
    graph: &FollowerGraph,
    opts: &SeriesOptions,
) -> (Vec<ExposureSeries>, SeriesReport) {
    let mut report = SeriesReport::default();
    let observed_until = opts
        .observed_until
        .unwrap_or_else(|| events.iter().map(|e| e.time).max().unwrap_or(0));
    let mut pairs: HashMap<(&str, &str), PairAcc> = HashMap::new();

    for e in events {
        let acc = pairs.entry((e.user.as_str(), e.item.as_str())).or_default();
        match e.kind {
            EventKind::Exposure => {
                report.exposure_events += 1;
                if let Some(x) = &e.exposer {
                    if !graph.is_friend(&e.user, x) {
                        report.exposer_not_friend += 1;
                    }
                }
                acc.exposures.push(e.time);
            }
            EventKind::Response => {
                if acc.exposures.is_empty() {
                    if !acc.responded_before_exposure {
                        report.responses_without_exposure += 1;
                    } else {
                        report.duplicate_responses += 1;
                    }
                    acc.responded_before_exposure = true;
                } else if acc.response.is_some() || acc.responded_before_exposure {
                    report.duplicate_responses += 1;
                } else if acc.post.is_some() {
                    report.responses_after_post += 1;
                } else {
                    acc.response = Some(e.time);
                }
            }
            EventKind::Post => {
                if acc.post.is_none() {
                    acc.post = Some(e.time);
                }
            }
        }
    }

    let mut series = Vec::new();
    for ((user, item), acc) in pairs {
        if acc.exposures.is_empty() {
            continue;
        }
        let first = acc.exposures[0];
        let posted_first = acc.post.is_some_and(|p| p <= first);
        if acc.responded_before_exposure || posted_first {
            if posted_first {
                report.pairs_posted_before_exposure += 1;
            }
            report.exposures_not_at_risk += acc.exposures.len();
            continue;
        }
        report.exposures_in_series += acc.exposures.len();
        series.push(ExposureSeries {
            user: user.to_owned(),
            item: item.to_owned(),
            n_f: graph.friend_count(user),
            exposure_times: acc.exposures,
            response_time: acc.response,
            censor_time: acc.post,
            observed_until,
        });
    }
    series.sort_by(|a, b| (&a.item, &a.user).cmp(&(&b.item, &b.user)));
    (series, report)
}

/// Deterministic item-level train/test assignment: an item goes to the
/// training set when the first hash byte falls below `train_fraction · 256`.
pub fn is_training_item(item: &str, train_fraction: f64) -> bool {
    let digest = Sha256::digest(item.as_bytes());
    (digest[0] as f64) < train_fraction.clamp(0.0, 1.0) * 256.0
}

/// Splits series into (train, test) by item hash.
pub fn split_by_item(
    series: Vec<ExposureSeries>,
    train_fraction: f64,
) -> (Vec<ExposureSeries>, Vec<ExposureSeries>) {
    series
        .into_iter()
        .partition(|s| is_training_item(&s.item, train_fraction))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn parses_and_sorts_three_lines() {
        let f = write_lines(&[
            r#"{"kind":"response","user":"a","item":"x","time":30}"#,
            r#"{"kind":"exposure","user":"a","item":"x","time":10,"exposer":"b"}"#,
            r#"{"kind":"post","user":"b","item":"x","time":10}"#,
        ]);
        let log = load_event_log(f.path(), DEFAULT_MAX_EXPOSURES).unwrap();
        assert_eq!(log.events.len(), 3);
        let times: Vec<i64> = log.events.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![10, 10, 30]);
        assert_eq!(log.events[0].kind, EventKind::Exposure);
    }

    #[test]
    fn cap_drops_whole_pair() {
        let mut events: Vec<Event> = (0..25)
            .map(|t| Event::exposure("A", "X", t, "B"))
            .collect();
        events.push(Event::response("A", "X", 40));
        events.push(Event::exposure("A", "Y", 3, "B"));
        let log = apply_exposure_cap(events, 20);
        assert_eq!(log.events.len(), 1);
        assert_eq!(log.events[0].item, "Y");
        assert_eq!(log.cap.dropped_pairs, 1);
        assert_eq!(log.cap.dropped_exposures, 25);
        assert_eq!(log.cap.dropped_other, 1);
    }

    #[test]
    fn cap_boundary_keeps_pairs_below_limit() {
        let events: Vec<Event> = (0..19).map(|t| Event::exposure("A", "X", t, "B")).collect();
        assert_eq!(apply_exposure_cap(events, 20).events.len(), 19);
    }

    #[test]
    fn negative_time_names_line() {
        let f = write_lines(&[
            r#"{"kind":"post","user":"b","item":"x","time":1}"#,
            r#"{"kind":"post","user":"b","item":"x","time":-5}"#,
        ]);
        match load_event_log(f.path(), 20) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("negative"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_and_bad_json_are_errors() {
        let f = write_lines(&[r#"{"kind":"like","user":"b","item":"x","time":1}"#]);
        assert!(matches!(
            load_event_log(f.path(), 20),
            Err(Error::Parse { line: 1, .. })
        ));
        let f = write_lines(&["", r#"{"kind":"post","user":"b""#]);
        assert!(matches!(
            load_event_log(f.path(), 20),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn fractional_seconds_truncate() {
        let f = write_lines(&[r#"{"kind":"post","user":"b","item":"x","time":12.9}"#]);
        assert_eq!(load_event_log(f.path(), 20).unwrap().events[0].time, 12);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_event_log("/nonexistent/events.jsonl", 20),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn graph_friend_counts() {
        let edges = vec![
            ("a".to_string(), "b".to_string()),
            ("a".to_string(), "c".to_string()),
        ];
        let g = build_graph(&[], &edges).unwrap();
        assert_eq!(g.friend_count("a"), 2);
        assert_eq!(g.friend_count("b"), 0);
        assert!(g.is_friend("a", "c"));
        assert!(!g.is_friend("c", "a"));
    }

    #[test]
    fn graph_collapses_duplicates_and_rejects_self_edges() {
        let edges = vec![
            ("a".to_string(), "b".to_string()),
            ("a".to_string(), "b".to_string()),
        ];
        let g = build_graph(&[], &edges).unwrap();
        assert_eq!(g.friend_count("a"), 1);
        assert_eq!(g.edge_count(), 1);

        let edges = vec![("a".to_string(), "a".to_string())];
        assert!(matches!(build_graph(&[], &edges), Err(Error::SelfEdge(u)) if u == "a"));
    }

    #[test]
    fn graph_includes_event_only_users() {
        let g = build_graph(&[Event::post("z", "x", 0)], &[]).unwrap();
        assert!(g.contains("z"));
        assert_eq!(g.friend_count("z"), 0);
    }

    fn chain_graph() -> FollowerGraph {
        let edges = vec![
            ("a".to_string(), "b".to_string()),
            ("a".to_string(), "c".to_string()),
        ];
        build_graph(&[], &edges).unwrap()
    }

    #[test]
    fn series_direct_assembly() {
        let events = vec![
            Event::exposure("a", "x", 10, "b"),
            Event::exposure("a", "x", 20, "c"),
            Event::response("a", "x", 25),
        ];
        let (series, report) = build_series(&events, &chain_graph(), &SeriesOptions::default());
        assert_eq!(series.len(), 1);
        let s = &series[0];
        assert_eq!(s.exposure_times, vec![10, 20]);
        assert_eq!(s.response_time, Some(25));
        assert_eq!(s.n_f, 2);
        assert_eq!(s.at_risk_end(), 25);
        assert_eq!(report.exposures_in_series, 2);
    }

    #[test]
    fn response_before_exposure_is_dropped_and_counted() {
        let events = vec![Event::response("a", "x", 5)];
        let (series, report) = build_series(&events, &chain_graph(), &SeriesOptions::default());
        assert!(series.is_empty());
        assert_eq!(report.responses_without_exposure, 1);

        // a later exposure does not reopen the pair
        let events = vec![Event::response("a", "x", 5), Event::exposure("a", "x", 9, "b")];
        let (series, report) = build_series(&events, &chain_graph(), &SeriesOptions::default());
        assert!(series.is_empty());
        assert_eq!(report.exposures_not_at_risk, 1);
    }

    #[test]
    fn two_items_two_series() {
        let events = vec![
            Event::exposure("a", "x", 1, "b"),
            Event::exposure("a", "y", 2, "b"),
            Event::response("a", "y", 9),
        ];
        let (series, _) = build_series(&events, &chain_graph(), &SeriesOptions::default());
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].item, "x");
        assert_eq!(series[0].response_time, None);
        assert_eq!(series[1].response_time, Some(9));
    }

    #[test]
    fn duplicate_responses_keep_earliest() {
        let events = vec![
            Event::exposure("a", "x", 1, "b"),
            Event::response("a", "x", 4),
            Event::response("a", "x", 8),
        ];
        let (series, report) = build_series(&events, &chain_graph(), &SeriesOptions::default());
        assert_eq!(series[0].response_time, Some(4));
        assert_eq!(report.duplicate_responses, 1);
    }

    #[test]
    fn own_post_censors_at_risk_window() {
        let events = vec![
            Event::exposure("a", "x", 1, "b"),
            Event::post("a", "x", 50),
            Event::response("a", "x", 60),
            Event::exposure("a", "x", 70, "c"),
        ];
        let opts = SeriesOptions {
            observed_until: Some(100),
        };
        let (series, report) = build_series(&events, &chain_graph(), &opts);
        assert_eq!(series[0].censor_time, Some(50));
        assert_eq!(series[0].response_time, None);
        assert_eq!(series[0].at_risk_end(), 49);
        assert_eq!(series[0].at_risk_exposures(), &[1]);
        assert_eq!(report.responses_after_post, 1);

        let events = vec![Event::post("a", "x", 0), Event::exposure("a", "x", 0, "b")];
        let (series, report) = build_series(&events, &chain_graph(), &SeriesOptions::default());
        assert!(series.is_empty());
        assert_eq!(report.pairs_posted_before_exposure, 1);
    }

    #[test]
    fn exposures_after_response_are_retained_outside_risk_window() {
        let events = vec![
            Event::exposure("a", "x", 1, "b"),
            Event::response("a", "x", 5),
            Event::exposure("a", "x", 9, "c"),
        ];
        let (series, _) = build_series(&events, &chain_graph(), &SeriesOptions::default());
        let s = &series[0];
        assert_eq!(s.exposure_times, vec![1, 9]);
        assert_eq!(s.at_risk_exposures(), &[1]);
        assert_eq!(s.exposures_at_response(), Some(1));
    }

    #[test]
    fn exposer_not_friend_is_reported() {
        let events = vec![Event::exposure("a", "x", 1, "zz")];
        let (_, report) = build_series(&events, &chain_graph(), &SeriesOptions::default());
        assert_eq!(report.exposer_not_friend, 1);
    }

    #[test]
    fn split_is_deterministic_and_roughly_balanced() {
        let n = 2000;
        let train = (0..n)
            .filter(|i| is_training_item(&format!("item{i}"), 0.5))
            .count();
        assert!((900..1100).contains(&train), "train = {train}");
        assert_eq!(is_training_item("abc", 0.5), is_training_item("abc", 0.5));
        assert!(is_training_item("abc", 1.0));
        assert!(!is_training_item("abc", 0.0));
    }
}
