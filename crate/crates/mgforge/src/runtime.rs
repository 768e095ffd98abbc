//! SPMD execution over a team of OS threads standing in for MPI ranks:
//! communicator collectives, subcommunicator split, halo exchange, and
//! per-rank stage timers.
//!
//! Ranks hold private data and interact only through mailbox messages, so
//! the communicator interface is shaped such that a message-passing
//! backend could replace the thread transport. Collectives are
//! synchronous, fan in to team rank 0 and fan out again; sum reductions
//! fold in team-rank order, which makes them deterministic for a fixed
//! team size.
//!
//! `MGFORGE_MAX_RANKS` caps the team size (CI guard);
//! `MGFORGE_CHECK_COLLECTIVES=1` enables collective-order assertions in
//! release builds (they are always on when debug assertions are).

use crate::error::{Error, Result};
use crate::la::RankVector;
use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
enum Tag {
    Barrier = 1,
    ReduceSum,
    ReduceMax,
    ReduceMin,
    Gather,
    Bcast,
    Halo,
    Dot,
    Rows,
}

#[derive(Debug, Clone)]
enum Payload {
    F64s(Vec<f64>),
    Usizes(Vec<usize>),
}

#[derive(Debug)]
struct Envelope {
    team: u64,
    src: usize,
    tag: u32,
    payload: Payload,
}

#[derive(Default)]
struct Mailbox {
    queue: Mutex<VecDeque<Envelope>>,
    cv: Condvar,
}

/// Marker panic used to unwind ranks blocked in a collective after the
/// team has aborted; never reported as the primary failure.
struct AbortSignal;

struct World {
    mailboxes: Vec<Mailbox>,
    abort: AtomicBool,
    abort_info: Mutex<Option<(usize, String)>>,
    team_registry: Mutex<HashMap<(u64, Vec<usize>), u64>>,
    next_team_id: AtomicU64,
    check_collectives: bool,
}

impl World {
    fn request_abort(&self) {
        self.abort.store(true, Ordering::SeqCst);
        for mb in &self.mailboxes {
            let _guard = mb.queue.lock().unwrap();
            mb.cv.notify_all();
        }
    }
}

/// Handle to a team of ranks. The world team has id 0; `split` derives
/// contiguously re-ranked subteams.
#[derive(Clone)]
pub struct Communicator {
    world: Arc<World>,
    team_id: u64,
    /// World ranks of the team members, ascending.
    members: Arc<Vec<usize>>,
    team_rank: usize,
}

impl Communicator {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn rank(&self) -> usize {
        self.team_rank
    }

    fn my_world_rank(&self) -> usize {
        self.members[self.team_rank]
    }

    fn send(&self, dst: usize, tag: Tag, payload: Payload) {
        let world_dst = self.members[dst];
        let mb = &self.world.mailboxes[world_dst];
        let mut q = mb.queue.lock().unwrap();
        q.push_back(Envelope {
            team: self.team_id,
            src: self.team_rank,
            tag: tag as u32,
            payload,
        });
        mb.cv.notify_all();
    }

    fn recv(&self, src: usize, tag: Tag) -> Result<Payload> {
        let mb = &self.world.mailboxes[self.my_world_rank()];
        let mut q = mb.queue.lock().unwrap();
        loop {
            if self.world.abort.load(Ordering::SeqCst) {
                drop(q);
                std::panic::panic_any(AbortSignal);
            }
            let mut found = None;
            for (i, env) in q.iter().enumerate() {
                if env.team == self.team_id && env.src == src {
                    if env.tag == tag as u32 {
                        found = Some(i);
                    } else if self.world.check_collectives {
                        let msg = format!(
                            "team {} rank {} expected tag {:?} from rank {src} but found tag {}",
                            self.team_id, self.team_rank, tag, env.tag
                        );
                        drop(q);
                        self.world.request_abort();
                        return Err(Error::CollectiveOrderViolation(msg));
                    }
                    break;
                }
            }
            if let Some(i) = found {
                return Ok(q.remove(i).unwrap().payload);
            }
            q = mb.cv.wait(q).unwrap();
        }
    }

    fn recv_f64s(&self, src: usize, tag: Tag) -> Result<Vec<f64>> {
        match self.recv(src, tag)? {
            Payload::F64s(v) => Ok(v),
            Payload::Usizes(_) => Err(Error::CollectiveOrderViolation(
                "payload type mismatch".into(),
            )),
        }
    }

    fn recv_usizes(&self, src: usize, tag: Tag) -> Result<Vec<usize>> {
        match self.recv(src, tag)? {
            Payload::Usizes(v) => Ok(v),
            Payload::F64s(_) => Err(Error::CollectiveOrderViolation(
                "payload type mismatch".into(),
            )),
        }
    }

    pub fn barrier(&self) -> Result<()> {
        if self.size() == 1 {
            return Ok(());
        }
        if self.team_rank == 0 {
            for src in 1..self.size() {
                self.recv_usizes(src, Tag::Barrier)?;
            }
            for dst in 1..self.size() {
                self.send(dst, Tag::Barrier, Payload::Usizes(Vec::new()));
            }
        } else {
            self.send(0, Tag::Barrier, Payload::Usizes(Vec::new()));
            self.recv_usizes(0, Tag::Barrier)?;
        }
        Ok(())
    }

    /// Sum/max/min over one value per rank. Sum folds in team-rank order
    /// at the root, so the result is identical on every rank and
    /// deterministic for a fixed team.
    pub fn allreduce_sum(&self, x: f64) -> Result<f64> {
        self.allreduce(x, Tag::ReduceSum, |a, b| a + b)
    }

    pub fn allreduce_max(&self, x: f64) -> Result<f64> {
        self.allreduce(x, Tag::ReduceMax, f64::max)
    }

    pub fn allreduce_min(&self, x: f64) -> Result<f64> {
        self.allreduce(x, Tag::ReduceMin, f64::min)
    }

    fn allreduce(&self, x: f64, tag: Tag, op: impl Fn(f64, f64) -> f64) -> Result<f64> {
        if self.size() == 1 {
            return Ok(x);
        }
        if self.team_rank == 0 {
            let mut acc = x;
            for src in 1..self.size() {
                let v = self.recv_f64s(src, tag)?;
                acc = op(acc, v[0]);
            }
            for dst in 1..self.size() {
                self.send(dst, Tag::Bcast, Payload::F64s(vec![acc]));
            }
            Ok(acc)
        } else {
            self.send(0, tag, Payload::F64s(vec![x]));
            Ok(self.recv_f64s(0, Tag::Bcast)?[0])
        }
    }

    /// Gathers variable-length slices to team rank 0 (rank order).
    pub fn gather_f64s(&self, data: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
        if self.team_rank == 0 {
            let mut out = Vec::with_capacity(self.size());
            out.push(data.to_vec());
            for src in 1..self.size() {
                out.push(self.recv_f64s(src, Tag::Gather)?);
            }
            Ok(Some(out))
        } else {
            self.send(0, Tag::Gather, Payload::F64s(data.to_vec()));
            Ok(None)
        }
    }

    pub fn gather_usizes(&self, data: &[usize]) -> Result<Option<Vec<Vec<usize>>>> {
        if self.team_rank == 0 {
            let mut out = Vec::with_capacity(self.size());
            out.push(data.to_vec());
            for src in 1..self.size() {
                out.push(self.recv_usizes(src, Tag::Gather)?);
            }
            Ok(Some(out))
        } else {
            self.send(0, Tag::Gather, Payload::Usizes(data.to_vec()));
            Ok(None)
        }
    }

    /// Broadcast from team rank 0; non-roots pass anything and receive
    /// the root's data.
    pub fn broadcast_f64s(&self, data: Vec<f64>) -> Result<Vec<f64>> {
        if self.team_rank == 0 {
            for dst in 1..self.size() {
                self.send(dst, Tag::Bcast, Payload::F64s(data.clone()));
            }
            Ok(data)
        } else {
            self.recv_f64s(0, Tag::Bcast)
        }
    }

    pub fn broadcast_usizes(&self, data: Vec<usize>) -> Result<Vec<usize>> {
        if self.team_rank == 0 {
            for dst in 1..self.size() {
                self.send(dst, Tag::Bcast, Payload::Usizes(data.clone()));
            }
            Ok(data)
        } else {
            self.recv_usizes(0, Tag::Bcast)
        }
    }

    /// Gather to everyone, rank order preserved.
    pub fn allgather_f64s(&self, data: &[f64]) -> Result<Vec<Vec<f64>>> {
        let gathered = self.gather_f64s(data)?;
        if self.team_rank == 0 {
            let all = gathered.unwrap();
            let mut flat = Vec::new();
            let mut lens = Vec::new();
            for part in &all {
                lens.push(part.len());
                flat.extend_from_slice(part);
            }
            self.broadcast_usizes(lens)?;
            self.broadcast_f64s(flat)?;
            Ok(all)
        } else {
            let lens = self.broadcast_usizes(Vec::new())?;
            let flat = self.broadcast_f64s(Vec::new())?;
            let mut out = Vec::with_capacity(lens.len());
            let mut at = 0;
            for l in lens {
                out.push(flat[at..at + l].to_vec());
                at += l;
            }
            Ok(out)
        }
    }

    pub fn allgather_usizes(&self, data: &[usize]) -> Result<Vec<Vec<usize>>> {
        let gathered = self.gather_usizes(data)?;
        if self.team_rank == 0 {
            let all = gathered.unwrap();
            let mut flat = Vec::new();
            let mut lens = Vec::new();
            for part in &all {
                lens.push(part.len());
                flat.extend_from_slice(part);
            }
            self.broadcast_usizes(lens)?;
            self.broadcast_usizes(flat)?;
            Ok(all)
        } else {
            let lens = self.broadcast_usizes(Vec::new())?;
            let flat = self.broadcast_usizes(Vec::new())?;
            let mut out = Vec::with_capacity(lens.len());
            let mut at = 0;
            for l in lens {
                out.push(flat[at..at + l].to_vec());
                at += l;
            }
            Ok(out)
        }
    }

    /// Point-to-point sends used by halo exchange and assembly; matched
    /// by (team, src, tag) FIFO.
    pub fn send_values(&self, dst: usize, data: Vec<f64>) {
        self.send(dst, Tag::Halo, Payload::F64s(data));
    }

    pub fn recv_values(&self, src: usize) -> Result<Vec<f64>> {
        self.recv_f64s(src, Tag::Halo)
    }

    pub fn send_indices(&self, dst: usize, data: Vec<usize>) {
        self.send(dst, Tag::Rows, Payload::Usizes(data));
    }

    pub fn recv_indices(&self, src: usize) -> Result<Vec<usize>> {
        self.recv_usizes(src, Tag::Rows)
    }

    pub(crate) fn send_dot_part(&self, dst: usize, data: Vec<f64>) {
        self.send(dst, Tag::Dot, Payload::F64s(data));
    }

    pub(crate) fn recv_dot_part(&self, src: usize) -> Result<Vec<f64>> {
        self.recv_f64s(src, Tag::Dot)
    }

    /// Ranks with equal color form a new team, re-ranked contiguously by
    /// old rank order.
    pub fn split(&self, color: usize) -> Result<Communicator> {
        let colors = self.allgather_usizes(&[color])?;
        let members: Vec<usize> = (0..self.size())
            .filter(|&r| colors[r][0] == color)
            .map(|r| self.members[r])
            .collect();
        let team_rank = members
            .iter()
            .position(|&w| w == self.my_world_rank())
            .expect("calling rank not in its own split group");
        let key = (self.team_id, members.clone());
        let team_id = {
            let mut reg = self.world.team_registry.lock().unwrap();
            *reg.entry(key).or_insert_with(|| {
                self.world.next_team_id.fetch_add(1, Ordering::SeqCst)
            })
        };
        Ok(Communicator {
            world: self.world.clone(),
            team_id,
            members: Arc::new(members),
            team_rank,
        })
    }
}

/// Refreshes the ghost entries of a vector per its layout plans.
pub fn halo_exchange(comm: &Communicator, v: &mut RankVector) -> Result<()> {
    let layout = v.layout.clone();
    if layout.ranks() != comm.size() {
        return Err(Error::LayoutMismatch(format!(
            "layout built for {} ranks used on a team of {}",
            layout.ranks(),
            comm.size()
        )));
    }
    for (nbr, locals) in &layout.send_plan {
        let data: Vec<f64> = locals.iter().map(|&i| v.owned()[i]).collect();
        comm.send_values(*nbr, data);
    }
    {
        let ghosts = v.ghosts_mut_and_mark_fresh();
        for (nbr, slots) in &layout.recv_plan {
            let data = comm.recv_values(*nbr)?;
            debug_assert_eq!(data.len(), slots.len());
            for (slot, value) in slots.iter().zip(data) {
                ghosts[*slot] = value;
            }
        }
    }
    Ok(())
}

/// Wall-clock stage timer with a strict nesting discipline per rank.
#[derive(Debug, Default, Clone)]
pub struct StageTimer {
    stack: Vec<(String, Instant)>,
    accum: std::collections::BTreeMap<String, (f64, u64)>,
}

impl StageTimer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self, stage: &str) {
        self.stack.push((stage.to_string(), Instant::now()));
    }

    pub fn stop(&mut self, stage: &str) {
        let (name, begun) = self
            .stack
            .pop()
            .unwrap_or_else(|| panic!("stage stop({stage}) with empty stage stack"));
        assert_eq!(
            name, stage,
            "stage nesting violation: stop({stage}) while {name} is open"
        );
        let entry = self.accum.entry(name).or_insert((0.0, 0));
        entry.0 += begun.elapsed().as_secs_f64();
        entry.1 += 1;
    }

    /// (stage, seconds, calls) in stage-name order.
    pub fn report(&self) -> Vec<(String, f64, u64)> {
        assert!(
            self.stack.is_empty(),
            "timer report with open stages: {:?}",
            self.stack.iter().map(|(n, _)| n).collect::<Vec<_>>()
        );
        self.accum
            .iter()
            .map(|(k, &(s, c))| (k.clone(), s, c))
            .collect()
    }

    pub fn seconds(&self, stage: &str) -> f64 {
        self.accum.get(stage).map_or(0.0, |&(s, _)| s)
    }
}

/// Per-rank execution context handed to SPMD programs.
pub struct Ctx {
    pub comm: Communicator,
    pub timer: StageTimer,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> Option<String> {
    if payload.is::<AbortSignal>() {
        return None;
    }
    if let Some(s) = payload.downcast_ref::<&str>() {
        return Some((*s).to_string());
    }
    if let Some(s) = payload.downcast_ref::<String>() {
        return Some(s.clone());
    }
    Some("unknown panic payload".to_string())
}

/// Launches `ranks` workers running `program` to completion and joins
/// them. A panic on any rank aborts the whole team with a diagnostic
/// naming the first failing rank; an `Err` from the program wins over the
/// abort diagnostics of ranks it cascaded into.
pub fn spmd_run<T: Send>(
    ranks: usize,
    program: impl Fn(&mut Ctx) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    assert!(ranks >= 1);
    if let Ok(cap) = std::env::var("MGFORGE_MAX_RANKS") {
        if let Ok(cap) = cap.parse::<usize>() {
            if ranks > cap {
                return Err(Error::InvalidValue {
                    key: "MGFORGE_MAX_RANKS".into(),
                    value: format!("{ranks} ranks requested"),
                    hint: format!("environment caps the team size at {cap}"),
                });
            }
        }
    }
    let check_collectives = cfg!(debug_assertions)
        || std::env::var("MGFORGE_CHECK_COLLECTIVES").map_or(false, |v| v == "1");
    let world = Arc::new(World {
        mailboxes: (0..ranks).map(|_| Mailbox::default()).collect(),
        abort: AtomicBool::new(false),
        abort_info: Mutex::new(None),
        team_registry: Mutex::new(HashMap::new()),
        next_team_id: AtomicU64::new(1),
        check_collectives,
    });
    let members = Arc::new((0..ranks).collect::<Vec<usize>>());

    let mut results: Vec<Option<Result<T>>> = (0..ranks).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for rank in 0..ranks {
            let world = world.clone();
            let members = members.clone();
            let program = &program;
            handles.push(scope.spawn(move || {
                let comm = Communicator {
                    world: world.clone(),
                    team_id: 0,
                    members,
                    team_rank: rank,
                };
                let mut ctx = Ctx {
                    comm,
                    timer: StageTimer::new(),
                };
                let outcome = catch_unwind(AssertUnwindSafe(|| program(&mut ctx)));
                match outcome {
                    Ok(res) => {
                        if res.is_err() {
                            // release peers blocked on this rank
                            world.request_abort();
                        }
                        res
                    }
                    Err(payload) => {
                        if let Some(msg) = panic_message(payload.as_ref()) {
                            let mut info = world.abort_info.lock().unwrap();
                            if info.is_none() {
                                *info = Some((rank, msg));
                            }
                        }
                        world.request_abort();
                        Err(Error::TeamAborted {
                            rank,
                            message: "panic".into(),
                        })
                    }
                }
            }));
        }
        for (rank, h) in handles.into_iter().enumerate() {
            results[rank] = Some(h.join().unwrap_or_else(|_| {
                Err(Error::TeamAborted {
                    rank,
                    message: "worker thread died".into(),
                })
            }));
        }
    });

    // a real panic names the failing rank; otherwise the lowest-rank
    // program error wins
    let panic_info = world.abort_info.lock().unwrap().take();
    let mut out = Vec::with_capacity(ranks);
    let mut first_err: Option<Error> = None;
    for r in results.into_iter().flatten() {
        match r {
            Ok(v) => out.push(v),
            Err(Error::TeamAborted { .. }) => {}
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    if let Some((rank, message)) = panic_info {
        return Err(Error::TeamAborted { rank, message });
    }
    if out.len() != ranks {
        return Err(Error::TeamAborted {
            rank: 0,
            message: "team lost members without a recorded failure".into(),
        });
    }
    Ok(out)
}
