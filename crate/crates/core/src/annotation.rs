//! Merge-sort ranking annotation.
//!
//! The item list is cut into sub-lists of `sublist_size`; each sub-list is
//! ordered in one task, then adjacent lists are merged pairwise by asking
//! which of the two current heads is better. Merged lists are merged again
//! round after round until a single list remains.
//!
//! Every ordering in this module is best-first. A session is a plain value:
//! every transition returns a new state and the full response log is kept,
//! so a session can be replayed from scratch and undo is a replay of all but
//! the last response.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::spearman;
use crate::numerics::{sigmoid, RngStream};

pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_SUBLIST_SIZE: usize = 6;
pub const MAX_SUBLIST_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    InitialSort,
    Merging,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Order these ids best-first.
    SortSublist { ids: Vec<String> },
    /// Pick the better of the two heads.
    Compare { id_a: String, id_b: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    /// Upper bound on the tasks still to come.
    pub estimated_remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    #[serde(flatten)]
    pub kind: TaskKind,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    /// Full best-first ordering of a `SortSublist` task.
    Sort { order: Vec<String> },
    /// The chosen id of a `Compare` task.
    Compare { choice: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Sort { order: Vec<String>, timestamp: u64 },
    Compare { id_a: String, id_b: String, choice: String, timestamp: u64 },
}

impl LogEntry {
    fn response(&self) -> (Response, u64) {
        match self {
            LogEntry::Sort { order, timestamp } => (Response::Sort { order: order.clone() }, *timestamp),
            LogEntry::Compare { choice, timestamp, .. } => (Response::Compare { choice: choice.clone() }, *timestamp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frontier {
    /// Remaining items of the left list, head first.
    pub left: Vec<String>,
    pub right: Vec<String>,
    /// Items already emitted by this merge.
    pub output: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub session_id: String,
    pub item_ids: Vec<String>,
    pub sublist_size: usize,
    pub rng_seed: u64,
    pub phase: Phase,
    /// Initial partition; each entry is replaced by its ordering once sorted.
    pub sublists: Vec<Vec<String>>,
    next_unsorted: usize,
    pub round: usize,
    /// Lists of the current round not yet merged.
    pub pending: Vec<Vec<String>>,
    /// Lists produced by the current round.
    pub merged: Vec<Vec<String>>,
    pub frontier: Option<Frontier>,
    pub comparison_log: Vec<LogEntry>,
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl AnnotationSession {
    pub fn new(session_id: impl Into<String>, ids: Vec<String>, sublist_size: usize, seed: u64) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Session("no items to annotate".into()));
        }
        if !(2..=MAX_SUBLIST_SIZE).contains(&sublist_size) {
            return Err(Error::Session(format!(
                "sub-list size must lie in 2..={MAX_SUBLIST_SIZE}, got {sublist_size}"
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if id.is_empty() {
                return Err(Error::Session("empty item id".into()));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Session(format!("duplicate item id {id:?}")));
            }
        }
        let sublists: Vec<Vec<String>> = ids.chunks(sublist_size).map(<[String]>::to_vec).collect();
        let mut s = Self {
            session_id: session_id.into(),
            item_ids: ids,
            sublist_size,
            rng_seed: seed,
            phase: Phase::InitialSort,
            sublists,
            next_unsorted: 0,
            round: 0,
            pending: Vec::new(),
            merged: Vec::new(),
            frontier: None,
            comparison_log: Vec::new(),
        };
        s.skip_trivial_sorts();
        Ok(s)
    }

    /// Rebuilds a session by replaying `log` on a fresh one.
    pub fn replay(
        session_id: impl Into<String>,
        ids: Vec<String>,
        sublist_size: usize,
        seed: u64,
        log: &[LogEntry],
    ) -> Result<Self> {
        let mut s = Self::new(session_id, ids, sublist_size, seed)?;
        for entry in log {
            let (resp, ts) = entry.response();
            s.apply_response_at(&resp, ts)?;
        }
        Ok(s)
    }

    fn skip_trivial_sorts(&mut self) {
        while self.next_unsorted < self.sublists.len() && self.sublists[self.next_unsorted].len() < 2 {
            self.next_unsorted += 1;
        }
        if self.next_unsorted == self.sublists.len() {
            self.phase = Phase::Merging;
            self.pending = self.sublists.clone();
            self.advance_merge();
        }
    }

    /// Drains finished merges and starts the next one until a comparison is
    /// needed or everything is merged.
    fn advance_merge(&mut self) {
        loop {
            if let Some(fr) = &mut self.frontier {
                if !fr.left.is_empty() && !fr.right.is_empty() {
                    return;
                }
                let mut out = std::mem::take(&mut fr.output);
                out.append(&mut fr.left);
                out.append(&mut fr.right);
                self.merged.push(out);
                self.frontier = None;
            } else if self.pending.len() >= 2 {
                let left = self.pending.remove(0);
                let right = self.pending.remove(0);
                self.frontier = Some(Frontier { left, right, output: Vec::new() });
            } else if self.pending.len() == 1 {
                let carry = self.pending.remove(0);
                self.merged.push(carry);
            } else if self.merged.len() <= 1 {
                self.phase = Phase::Done;
                return;
            } else {
                self.pending = std::mem::take(&mut self.merged);
                self.round += 1;
            }
        }
    }

    pub fn progress(&self) -> Progress {
        let sorts_left = match self.phase {
            Phase::InitialSort => self.sublists[self.next_unsorted..].iter().filter(|l| l.len() >= 2).count(),
            _ => 0,
        };
        Progress { answered: self.comparison_log.len(), estimated_remaining: sorts_left + self.merge_bound() }
    }

    /// Worst-case number of comparisons left in the merge phase.
    fn merge_bound(&self) -> usize {
        fn rounds(mut sizes: Vec<usize>) -> usize {
            let mut total = 0;
            while sizes.len() > 1 {
                let next: Vec<usize> = sizes
                    .chunks(2)
                    .map(|c| {
                        if c.len() == 2 {
                            total += c[0] + c[1] - 1;
                        }
                        c.iter().sum()
                    })
                    .collect();
                sizes = next;
            }
            total
        }
        match self.phase {
            Phase::Done => 0,
            Phase::InitialSort => rounds(self.sublists.iter().map(Vec::len).collect()),
            Phase::Merging => {
                let mut total = 0;
                let mut sizes: Vec<usize> = self.merged.iter().map(Vec::len).collect();
                if let Some(fr) = &self.frontier {
                    total += fr.left.len() + fr.right.len() - 1;
                    sizes.push(fr.output.len() + fr.left.len() + fr.right.len());
                }
                for c in self.pending.chunks(2) {
                    if c.len() == 2 {
                        total += c[0].len() + c[1].len() - 1;
                    }
                    sizes.push(c.iter().map(Vec::len).sum());
                }
                total + rounds(sizes)
            }
        }
    }

    fn task_kind(&self) -> Result<TaskKind> {
        Ok(match self.phase {
            Phase::Done => return Err(Error::Session("session complete".into())),
            Phase::InitialSort => TaskKind::SortSublist { ids: self.sublists[self.next_unsorted].clone() },
            Phase::Merging => {
                let fr = self.frontier.as_ref().expect("merging phase always has a frontier");
                TaskKind::Compare { id_a: fr.left[0].clone(), id_b: fr.right[0].clone() }
            }
        })
    }

    pub fn current_task(&self) -> Result<Task> {
        Ok(Task { kind: self.task_kind()?, progress: self.progress() })
    }

    pub fn submit_response(&self, response: &Response) -> Result<Self> {
        self.submit_response_at(response, now_millis())
    }

    /// Applies `response` to the current task. The receiver is left
    /// untouched; on error no new state is produced.
    pub fn submit_response_at(&self, response: &Response, timestamp: u64) -> Result<Self> {
        let mut next = self.clone();
        next.apply_response_at(response, timestamp)?;
        Ok(next)
    }

    /// In-place [`submit_response_at`](Self::submit_response_at); the
    /// session is unchanged when an error is returned.
    pub fn apply_response_at(&mut self, response: &Response, timestamp: u64) -> Result<()> {
        match (self.task_kind()?, response) {
            (TaskKind::SortSublist { ids }, Response::Sort { order }) => {
                let mut want: Vec<&String> = ids.iter().collect();
                let mut got: Vec<&String> = order.iter().collect();
                want.sort();
                got.sort();
                if want != got {
                    return Err(Error::Session(format!(
                        "ordering {order:?} is not a permutation of the task ids {ids:?}"
                    )));
                }
                self.sublists[self.next_unsorted] = order.clone();
                self.comparison_log.push(LogEntry::Sort { order: order.clone(), timestamp });
                self.next_unsorted += 1;
                self.skip_trivial_sorts();
            }
            (TaskKind::Compare { id_a, id_b }, Response::Compare { choice }) => {
                let take_left = if *choice == id_a {
                    true
                } else if *choice == id_b {
                    false
                } else {
                    return Err(Error::Session(format!(
                        "choice {choice:?} is neither {id_a:?} nor {id_b:?}"
                    )));
                };
                let fr = self.frontier.as_mut().expect("compare task implies a frontier");
                let winner = if take_left { fr.left.remove(0) } else { fr.right.remove(0) };
                fr.output.push(winner);
                self.comparison_log.push(LogEntry::Compare { id_a, id_b, choice: choice.clone(), timestamp });
                self.advance_merge();
            }
            (kind, resp) => {
                return Err(Error::Session(format!("response {resp:?} does not match task {kind:?}")));
            }
        }
        Ok(())
    }

    pub fn can_undo(&self) -> bool {
        !self.comparison_log.is_empty()
    }

    /// Reverts the last response by replaying all earlier ones.
    pub fn undo(&self) -> Result<Self> {
        if self.comparison_log.is_empty() {
            return Err(Error::Session("nothing to undo".into()));
        }
        let keep = &self.comparison_log[..self.comparison_log.len() - 1];
        Self::replay(self.session_id.clone(), self.item_ids.clone(), self.sublist_size, self.rng_seed, keep)
    }

    /// Best-first final ordering, once done.
    pub fn final_order(&self) -> Option<&[String]> {
        match self.phase {
            Phase::Done => self.merged.first().map(Vec::as_slice),
            _ => None,
        }
    }

    /// `(id, rank)` best-first; the best item gets rank `n`.
    pub fn export_ranking(&self) -> Result<Vec<(String, usize)>> {
        let order = self
            .final_order()
            .ok_or_else(|| Error::Session("session is not complete".into()))?;
        let n = order.len();
        Ok(order.iter().enumerate().map(|(i, id)| (id.clone(), n - i)).collect())
    }

    pub fn to_snapshot_json(&self) -> String {
        serde_json::to_string(&SnapshotRef { version: SNAPSHOT_VERSION, session: self }).expect("session serialises")
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self> {
        let snap: SnapshotOwned =
            serde_json::from_str(text).map_err(|e| Error::Session(format!("bad snapshot: {e}")))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Session(format!("unsupported snapshot version {}", snap.version)));
        }
        Ok(snap.session)
    }

    /// Writes the snapshot to a temporary sibling and renames it into place.
    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_snapshot_json().as_bytes())
    }

    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_snapshot_json(&text)
    }
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    version: u32,
    #[serde(flatten)]
    session: &'a AnnotationSession,
}

#[derive(Deserialize)]
struct SnapshotOwned {
    version: u32,
    #[serde(flatten)]
    session: AnnotationSession,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("snapshot");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Simulated annotator choosing `a` over `b` with probability
/// `sigmoid(beta * (q_a - q_b))`. `beta = inf` never errs, `beta = 0` flips
/// fair coins.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    pub beta: f64,
    latent: HashMap<String, f64>,
    rng: RngStream,
    queries: usize,
}

impl NoisyOracle {
    pub fn new(beta: f64, latent: HashMap<String, f64>, seed: u64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self { beta, latent, rng: RngStream::derived(seed, "oracle", 0), queries: 0 })
    }

    pub fn perfect(latent: HashMap<String, f64>) -> Self {
        Self::new(f64::INFINITY, latent, 0).expect("infinite beta is valid")
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    fn quality(&self, id: &str) -> Result<f64> {
        self.latent
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("oracle has no latent quality for {id:?}")))
    }

    /// Does the annotator judge `a` better than `b`?
    pub fn prefers(&mut self, a: &str, b: &str) -> Result<bool> {
        let (qa, qb) = (self.quality(a)?, self.quality(b)?);
        self.queries += 1;
        if self.beta.is_infinite() {
            return Ok(qa > qb || (qa == qb && a < b));
        }
        let p = sigmoid(self.beta * (qa - qb));
        Ok(self.rng.bernoulli(p))
    }

    /// Best-first binary insertion sort through oracle queries.
    pub fn sort(&mut self, ids: &[String]) -> Result<Vec<String>> {
        let mut out: Vec<String> = Vec::with_capacity(ids.len());
        for id in ids {
            let (mut lo, mut hi) = (0, out.len());
            while lo < hi {
                let mid = (lo + hi) / 2;
                if self.prefers(id, &out[mid])? {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            out.insert(lo, id.clone());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    /// Oracle queries, including those spent sorting sub-lists.
    pub comparisons: usize,
    pub sort_tasks: usize,
    pub compare_tasks: usize,
    /// Spearman between the exported ranks and the latent order.
    pub spc: f64,
}

/// Drives a session to completion with `oracle`. Log timestamps are the
/// response index, so simulations are reproducible.
pub fn simulate(session: &AnnotationSession, oracle: &mut NoisyOracle) -> Result<(AnnotationSession, SimulationStats)> {
    for id in &session.item_ids {
        oracle.quality(id)?;
    }
    let start = oracle.queries();
    let mut s = session.clone();
    let (mut sorts, mut compares) = (0, 0);
    while s.phase != Phase::Done {
        let ts = s.comparison_log.len() as u64;
        let resp = match s.task_kind()? {
            TaskKind::SortSublist { ids } => {
                sorts += 1;
                Response::Sort { order: oracle.sort(&ids)? }
            }
            TaskKind::Compare { id_a, id_b } => {
                compares += 1;
                let choice = if oracle.prefers(&id_a, &id_b)? { id_a } else { id_b };
                Response::Compare { choice }
            }
        };
        s.apply_response_at(&resp, ts)?;
    }
    let ranking = s.export_ranking()?;
    let spc = if ranking.len() >= 2 {
        let latent: Vec<f64> = ranking.iter().map(|(id, _)| oracle.quality(id)).collect::<Result<_>>()?;
        let truth = crate::metrics::average_ranks(&latent).into_iter().map(|r| r as usize).collect::<Vec<_>>();
        let pred: Vec<f64> = ranking.iter().map(|(_, r)| *r as f64).collect();
        spearman(&truth, &pred)?
    } else {
        1.0
    };
    Ok((s, SimulationStats { comparisons: oracle.queries() - start, sort_tasks: sorts, compare_tasks: compares, spc }))
}

/// `n * ceil(log2 n) + n * ceil(log2 n_sub)`.
pub fn comparison_bound(n: usize, sublist_size: usize) -> usize {
    let clog2 = |x: usize| if x <= 1 { 0 } else { (usize::BITS - (x - 1).leading_zeros()) as usize };
    n * clog2(n) + n * clog2(sublist_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i:03}")).collect()
    }

    fn latent(n: usize, seed: u64) -> HashMap<String, f64> {
        let mut rng = RngStream::new(seed, 3);
        ids(n).into_iter().map(|id| (id, rng.next_f64())).collect()
    }

    #[test]
    fn partition_examples() {
        let s = AnnotationSession::new("s", ids(12), 6, 0).unwrap();
        assert_eq!(s.sublists.iter().map(Vec::len).collect::<Vec<_>>(), vec![6, 6]);
        assert_eq!(s.phase, Phase::InitialSort);
        assert_eq!(s.current_task().unwrap().kind, TaskKind::SortSublist { ids: ids(12)[..6].to_vec() });

        let s = AnnotationSession::new("s", ids(13), 6, 0).unwrap();
        assert_eq!(s.sublists.iter().map(Vec::len).collect::<Vec<_>>(), vec![6, 6, 1]);

        let s = AnnotationSession::new("s", ids(1), 6, 0).unwrap();
        assert_eq!(s.phase, Phase::Done);
        assert_eq!(s.export_ranking().unwrap(), vec![("i000".to_string(), 1)]);
        assert!(s.current_task().unwrap_err().to_string().contains("session complete"));
    }

    #[test]
    fn construction_errors() {
        let mut dup = ids(3);
        dup.push("i001".into());
        assert!(AnnotationSession::new("s", dup, 6, 0).is_err());
        assert!(AnnotationSession::new("s", vec![], 6, 0).is_err());
        assert!(AnnotationSession::new("s", ids(4), 1, 0).is_err());
        assert!(AnnotationSession::new("s", ids(4), 13, 0).is_err());
    }

    #[test]
    fn merge_flow_and_drain() {
        let all = ids(12);
        let s = AnnotationSession::new("s", all.clone(), 6, 0).unwrap();
        let s = s.submit_response_at(&Response::Sort { order: all[..6].to_vec() }, 0).unwrap();
        let s = s.submit_response_at(&Response::Sort { order: all[6..].to_vec() }, 1).unwrap();
        assert_eq!(s.phase, Phase::Merging);
        assert_eq!(
            s.current_task().unwrap().kind,
            TaskKind::Compare { id_a: "i000".into(), id_b: "i006".into() }
        );
        // left list wins every time: after 6 compares the right list drains
        let mut s = s;
        for (k, id) in all.iter().take(6).enumerate() {
            let before = s.progress().estimated_remaining;
            s = s.submit_response_at(&Response::Compare { choice: id.clone() }, 2 + k as u64).unwrap();
            assert!(s.progress().estimated_remaining < before);
        }
        assert_eq!(s.phase, Phase::Done);
        assert_eq!(s.final_order().unwrap(), all.as_slice());
        let ranks = s.export_ranking().unwrap();
        assert_eq!(ranks[0], ("i000".into(), 12));
        assert_eq!(ranks[11], ("i011".into(), 1));
    }

    #[test]
    fn twelve_items_need_at_most_eleven_compares() {
        for seed in 0..20 {
            let s = AnnotationSession::new("s", ids(12), 6, 0).unwrap();
            let mut o = NoisyOracle::new(1.0, latent(12, seed), seed).unwrap();
            let (_, st) = simulate(&s, &mut o).unwrap();
            assert_eq!(st.sort_tasks, 2);
            assert!(st.compare_tasks <= 11);
        }
    }

    #[test]
    fn invalid_responses_leave_state() {
        let all = ids(12);
        let s = AnnotationSession::new("s", all.clone(), 6, 0).unwrap();
        let bad = Response::Sort { order: all[1..7].to_vec() };
        assert!(s.submit_response_at(&bad, 0).is_err());
        assert!(s.submit_response_at(&Response::Compare { choice: "i000".into() }, 0).is_err());
        let s2 = s.submit_response_at(&Response::Sort { order: all[..6].to_vec() }, 0).unwrap();
        let s3 = s2.submit_response_at(&Response::Sort { order: all[6..].to_vec() }, 0).unwrap();
        assert!(s3.submit_response_at(&Response::Compare { choice: "i001".into() }, 0).is_err());
        let short = Response::Sort { order: all[..5].to_vec() };
        assert!(s.submit_response_at(&short, 0).is_err());
    }

    #[test]
    fn undo_restores_previous_state() {
        let s = AnnotationSession::new("s", ids(13), 3, 4).unwrap();
        let mut o = NoisyOracle::new(2.0, latent(13, 1), 1).unwrap();
        let mut states = vec![s.clone()];
        let mut cur = s;
        while cur.phase != Phase::Done {
            let ts = cur.comparison_log.len() as u64;
            let resp = match cur.current_task().unwrap().kind {
                TaskKind::SortSublist { ids } => Response::Sort { order: o.sort(&ids).unwrap() },
                TaskKind::Compare { id_a, id_b } => {
                    Response::Compare { choice: if o.prefers(&id_a, &id_b).unwrap() { id_a } else { id_b } }
                }
            };
            cur = cur.submit_response_at(&resp, ts).unwrap();
            states.push(cur.clone());
        }
        // undo all the way back, including across round boundaries
        for expected in states.iter().rev().skip(1) {
            cur = cur.undo().unwrap();
            assert_eq!(&cur, expected);
        }
        assert!(cur.undo().is_err());
    }

    #[test]
    fn perfect_oracle_sorts_exactly() {
        for n in [1, 2, 5, 13, 64, 100] {
            let lat = latent(n, n as u64);
            let s = AnnotationSession::new("s", ids(n), 6, 0).unwrap();
            let (done, st) = simulate(&s, &mut NoisyOracle::perfect(lat.clone())).unwrap();
            let mut expect = ids(n);
            expect.sort_by(|a, b| lat[b].total_cmp(&lat[a]));
            assert_eq!(done.final_order().unwrap(), expect.as_slice());
            assert!(st.comparisons <= comparison_bound(n, 6));
            if n >= 2 {
                assert_eq!(st.spc, 1.0);
            }
        }
    }

    #[test]
    fn coin_flip_oracle_has_no_signal() {
        let n = 60;
        let mean: f64 = (0..40)
            .map(|seed| {
                let s = AnnotationSession::new("s", ids(n), 6, 0).unwrap();
                let mut o = NoisyOracle::new(0.0, latent(n, 7), seed).unwrap();
                simulate(&s, &mut o).unwrap().1.spc
            })
            .sum::<f64>()
            / 40.0;
        assert!(mean.abs() < 0.1, "{mean}");
    }

    #[test]
    fn snapshot_round_trip_and_version() {
        let s = AnnotationSession::new("abc", ids(9), 4, 2).unwrap();
        let (done, _) = simulate(&s, &mut NoisyOracle::perfect(latent(9, 0))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.json");
        done.save_snapshot(&p).unwrap();
        assert_eq!(AnnotationSession::load_snapshot(&p).unwrap(), done);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("{\"version\":1,"));
        let bumped = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(AnnotationSession::from_snapshot_json(&bumped).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn oracle_requires_latent() {
        let s = AnnotationSession::new("s", ids(4), 2, 0).unwrap();
        let mut lat = latent(4, 0);
        lat.remove("i002");
        assert!(simulate(&s, &mut NoisyOracle::perfect(lat)).is_err());
        assert!(NoisyOracle::new(-1.0, HashMap::new(), 0).is_err());
    }

    #[test]
    fn bound_formula() {
        assert_eq!(comparison_bound(1, 6), 3);
        assert_eq!(comparison_bound(0, 6), 0);
        assert_eq!(comparison_bound(12, 6), 12 * 4 + 12 * 3);
        assert_eq!(comparison_bound(8, 2), 8 * 3 + 8);
    }
}
