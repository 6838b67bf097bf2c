//! Deterministic in-process backend: one bounded FIFO queue per ordered pair
//! of ranks, one OS thread per rank.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, select, Receiver, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LedgerSnapshot, Payload, Phase, TrafficLedger, Transport, TransportError, WorkerCtx};
use crate::error::{Error, Result};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InProcOptions {
    /// Messages a single `(src, dst)` queue holds before `send` blocks.
    pub capacity: usize,
    /// When set, each rank perturbs its own timing with a seeded RNG
    /// (yields and short sleeps around every send and receive).
    pub jitter_seed: Option<u64>,
}

impl Default for InProcOptions {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_QUEUE_CAPACITY,
            jitter_seed: None,
        }
    }
}

/// Shared kill switch for a run. Aborting wakes every rank blocked in the
/// in-process transport and is polled by the TCP transport.
#[derive(Clone)]
pub struct AbortHandle {
    flag: Arc<AtomicBool>,
    wake: Arc<Mutex<Option<Sender<()>>>>,
    signal: Receiver<()>,
}

impl AbortHandle {
    pub fn new() -> Self {
        let (tx, rx) = bounded(0);
        Self {
            flag: Arc::new(AtomicBool::new(false)),
            wake: Arc::new(Mutex::new(Some(tx))),
            signal: rx,
        }
    }

    pub fn abort(&self) {
        self.flag.store(true, Ordering::SeqCst);
        self.wake.lock().unwrap_or_else(|e| e.into_inner()).take();
    }

    pub fn is_aborted(&self) -> bool {
        self.flag.load(Ordering::SeqCst)
    }

    pub(crate) fn signal(&self) -> &Receiver<()> {
        &self.signal
    }
}

impl Default for AbortHandle {
    fn default() -> Self {
        Self::new()
    }
}

struct Envelope {
    phase: Phase,
    payload: Payload,
}

pub struct InProcTransport {
    rank: usize,
    world: usize,
    outboxes: Vec<Option<Sender<Envelope>>>,
    inboxes: Vec<Option<Receiver<Envelope>>>,
    stash: HashMap<(usize, Phase), VecDeque<Payload>>,
    abort: AbortHandle,
    jitter: Option<ChaCha8Rng>,
}

/// Builds the endpoints for `world` ranks, all sharing one abort handle.
pub fn inproc_fabric(world: usize, opts: InProcOptions) -> (Vec<InProcTransport>, AbortHandle) {
    assert!(world >= 1);
    let capacity = opts.capacity.max(1);
    let abort = AbortHandle::new();
    let mut outboxes: Vec<Vec<Option<Sender<Envelope>>>> = (0..world)
        .map(|_| (0..world).map(|_| None).collect())
        .collect();
    let mut inboxes: Vec<Vec<Option<Receiver<Envelope>>>> = (0..world)
        .map(|_| (0..world).map(|_| None).collect())
        .collect();
    for src in 0..world {
        for dst in 0..world {
            if src != dst {
                let (tx, rx) = bounded(capacity);
                outboxes[src][dst] = Some(tx);
                inboxes[dst][src] = Some(rx);
            }
        }
    }
    let transports = outboxes
        .into_iter()
        .zip(inboxes)
        .enumerate()
        .map(|(rank, (out, inb))| InProcTransport {
            rank,
            world,
            outboxes: out,
            inboxes: inb,
            stash: HashMap::new(),
            abort: abort.clone(),
            jitter: opts.jitter_seed.map(|s| {
                ChaCha8Rng::seed_from_u64(s ^ (rank as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            }),
        })
        .collect();
    (transports, abort)
}

impl InProcTransport {
    fn jitter(&mut self) {
        if let Some(rng) = self.jitter.as_mut() {
            match rng.random_range(0..8u32) {
                0..=3 => {}
                4..=6 => thread::yield_now(),
                _ => thread::sleep(Duration::from_micros(rng.random_range(1..40))),
            }
        }
    }
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn send(&mut self, dst: usize, phase: Phase, payload: Payload) -> Result<(), TransportError> {
        self.jitter();
        if self.abort.is_aborted() {
            return Err(TransportError::Aborted);
        }
        let tx = self.outboxes[dst]
            .as_ref()
            .ok_or(TransportError::Closed { peer: dst })?;
        let env = Envelope { phase, payload };
        select! {
            send(tx, env) -> res => res.map_err(|_| TransportError::Closed { peer: dst }),
            recv(self.abort.signal()) -> _ => Err(TransportError::Aborted),
        }
    }

    fn recv(&mut self, src: usize, phase: Phase) -> Result<Payload, TransportError> {
        self.jitter();
        if let Some(p) = self
            .stash
            .get_mut(&(src, phase))
            .and_then(|q| q.pop_front())
        {
            return Ok(p);
        }
        let rx = self.inboxes[src]
            .as_ref()
            .ok_or(TransportError::Closed { peer: src })?;
        loop {
            if self.abort.is_aborted() {
                return Err(TransportError::Aborted);
            }
            let env = select! {
                recv(rx) -> msg => msg.map_err(|_| TransportError::Closed { peer: src })?,
                recv(self.abort.signal()) -> _ => return Err(TransportError::Aborted),
            };
            if env.phase == phase {
                return Ok(env.payload);
            }
            self.stash
                .entry((src, env.phase))
                .or_default()
                .push_back(env.payload);
        }
    }
}

struct AbortOnDrop {
    handle: AbortHandle,
    armed: bool,
}

impl Drop for AbortOnDrop {
    fn drop(&mut self) {
        if self.armed {
            self.handle.abort();
        }
    }
}

fn is_collateral(e: &Error) -> bool {
    matches!(
        e,
        Error::Transport(TransportError::Aborted) | Error::Transport(TransportError::Closed { .. })
    )
}

/// Runs `f` once per transport, each on its own thread, and returns the
/// per-rank results in rank order together with the final ledger.
///
/// If any worker fails or panics the run is aborted so blocked peers unwind;
/// the reported error is the first root cause, attributed to its rank.
pub fn run_workers<T, F>(
    transports: Vec<Box<dyn Transport>>,
    abort: AbortHandle,
    f: F,
) -> Result<(Vec<T>, LedgerSnapshot)>
where
    T: Send,
    F: Fn(&mut WorkerCtx) -> Result<T> + Sync,
{
    let world = transports.len();
    let ledger = Arc::new(TrafficLedger::new(world));
    let joined: Vec<thread::Result<Result<T>>> = thread::scope(|s| {
        let handles: Vec<_> = transports
            .into_iter()
            .enumerate()
            .map(|(rank, t)| {
                let ledger = Arc::clone(&ledger);
                let abort = abort.clone();
                let f = &f;
                thread::Builder::new()
                    .name(format!("rank-{rank}"))
                    .spawn_scoped(s, move || {
                        let mut guard = AbortOnDrop {
                            handle: abort,
                            armed: true,
                        };
                        let mut ctx = WorkerCtx::new(t, ledger);
                        let out = f(&mut ctx);
                        guard.armed = out.is_err();
                        out
                    })
                    .expect("spawn worker thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });

    let mut results = Vec::with_capacity(world);
    let mut errors: Vec<(usize, Error)> = Vec::new();
    for (rank, r) in joined.into_iter().enumerate() {
        match r {
            Ok(Ok(v)) => results.push(v),
            Ok(Err(e)) => errors.push((rank, e)),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                errors.push((rank, Error::Protocol(format!("worker panicked: {msg}"))));
            }
        }
    }
    if !errors.is_empty() {
        let pos = errors
            .iter()
            .position(|(_, e)| !is_collateral(e))
            .unwrap_or(0);
        let (rank, source) = errors.swap_remove(pos);
        return Err(Error::Worker {
            rank,
            source: Box::new(source),
        });
    }
    Ok((results, ledger.snapshot()))
}

/// Runs `f` on `world` in-process workers.
pub fn run_inproc<T, F>(world: usize, opts: InProcOptions, f: F) -> Result<(Vec<T>, LedgerSnapshot)>
where
    T: Send,
    F: Fn(&mut WorkerCtx) -> Result<T> + Sync,
{
    if world == 0 {
        return Err(Error::invalid("world size must be >= 1"));
    }
    let (transports, abort) = inproc_fabric(world, opts);
    let boxed = transports
        .into_iter()
        .map(|t| Box::new(t) as Box<dyn Transport>)
        .collect();
    run_workers(boxed, abort, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize, base: u32) -> Payload {
        Payload {
            header: vec![],
            ints: (base..base + n as u32).collect(),
            reals: vec![],
        }
    }

    #[test]
    fn send_credits_sender_row() {
        let (_, ledger) = run_inproc(2, InProcOptions::default(), |ctx| {
            if ctx.rank() == 0 {
                ctx.send(1, Phase::Split, words(4, 0))?;
            } else {
                let p = ctx.recv(0, Phase::Split)?;
                assert_eq!(p.ints, vec![0, 1, 2, 3]);
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(ledger.get(0, Phase::Split).words_sent, 4);
        assert_eq!(ledger.get(1, Phase::Split).words_recv, 4);
        assert!(ledger.is_conserved());
    }

    #[test]
    fn same_channel_is_fifo() {
        let (out, _) = run_inproc(2, InProcOptions::default(), |ctx| {
            if ctx.rank() == 0 {
                for i in 0..10 {
                    ctx.send(1, Phase::Dense, words(1, i))?;
                }
                Ok(vec![])
            } else {
                (0..10)
                    .map(|_| ctx.recv(0, Phase::Dense).map(|p| p.ints[0]))
                    .collect()
            }
        })
        .unwrap();
        assert_eq!(out[1], (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn receives_match_on_phase() {
        let (out, _) = run_inproc(2, InProcOptions::default(), |ctx| {
            if ctx.rank() == 0 {
                ctx.send(1, Phase::Split, words(1, 10))?;
                ctx.send(1, Phase::Gather, words(1, 20))?;
                Ok((0, 0))
            } else {
                let g = ctx.recv(0, Phase::Gather)?.ints[0];
                let s = ctx.recv(0, Phase::Split)?.ints[0];
                Ok((g, s))
            }
        })
        .unwrap();
        assert_eq!(out[1], (20, 10));
    }

    #[test]
    fn recv_before_send_blocks_until_delivery() {
        let (out, _) = run_inproc(2, InProcOptions::default(), |ctx| {
            if ctx.rank() == 0 {
                thread::sleep(Duration::from_millis(20));
                ctx.send(1, Phase::Split, words(3, 7))?;
                Ok(vec![])
            } else {
                Ok(ctx.recv(0, Phase::Split)?.ints)
            }
        })
        .unwrap();
        assert_eq!(out[1], vec![7, 8, 9]);
    }

    #[test]
    fn all_to_all_counts() {
        let (_, ledger) = run_inproc(4, InProcOptions::default(), |ctx| {
            let me = ctx.rank();
            for d in 0..4 {
                if d != me {
                    ctx.send(d, Phase::Dense, words(10, 0))?;
                }
            }
            for s in 0..4 {
                if s != me {
                    ctx.recv(s, Phase::Dense)?;
                }
            }
            Ok(())
        })
        .unwrap();
        for r in 0..4 {
            assert_eq!(ledger.get(r, Phase::Dense).words_sent, 30);
            assert_eq!(ledger.get(r, Phase::Dense).words_recv, 30);
        }
    }

    #[test]
    fn jittered_all_to_all_delivers_each_payload_once() {
        for seed in 0..8u64 {
            let opts = InProcOptions {
                capacity: 3,
                jitter_seed: Some(seed),
            };
            let (got, ledger) = run_inproc(4, opts, |ctx| {
                let me = ctx.rank() as u32;
                for round in 0..3u32 {
                    for d in 0..4 {
                        if d != ctx.rank() {
                            ctx.send(d, Phase::Split, words(1, 100 * me + 10 * d as u32 + round))?;
                        }
                    }
                }
                let mut seen = Vec::new();
                for s in 0..4 {
                    if s != ctx.rank() {
                        for _ in 0..3 {
                            seen.push(ctx.recv(s, Phase::Split)?.ints[0]);
                        }
                    }
                }
                Ok(seen)
            })
            .unwrap();
            for (rank, seen) in got.iter().enumerate() {
                let mut expect: Vec<u32> = (0..4u32)
                    .filter(|&s| s as usize != rank)
                    .flat_map(|s| (0..3).map(move |r| 100 * s + 10 * rank as u32 + r))
                    .collect();
                expect.sort();
                let mut seen = seen.clone();
                seen.sort();
                assert_eq!(seen, expect);
            }
            assert!(ledger.is_conserved());
        }
    }

    #[test]
    fn bad_destination_is_invalid_argument() {
        let err = run_inproc(2, InProcOptions::default(), |ctx| {
            ctx.send(5, Phase::Split, Payload::default())?;
            Ok(())
        })
        .unwrap_err();
        let Error::Worker { source, .. } = err else {
            panic!()
        };
        assert!(matches!(*source, Error::InvalidArgument(_)));
    }

    #[test]
    fn self_send_is_rejected_and_not_recorded() {
        let res = run_inproc(1, InProcOptions::default(), |ctx| {
            Ok(ctx.send(0, Phase::Split, words(2, 0)).is_err())
        })
        .unwrap();
        assert!(res.0[0]);
        assert_eq!(res.1.get(0, Phase::Split), Default::default());
    }

    #[test]
    fn failure_unblocks_waiting_peers() {
        let err = run_inproc(3, InProcOptions::default(), |ctx| {
            match ctx.rank() {
                0 => Err(Error::Protocol("boom".into())),
                // both wait on rank 0, which never sends
                _ => ctx.recv(0, Phase::Split).map(|_| ()),
            }
        })
        .unwrap_err();
        match err {
            Error::Worker { rank, source } => {
                assert_eq!(rank, 0);
                assert!(matches!(*source, Error::Protocol(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn panics_are_attributed() {
        let err = run_inproc(2, InProcOptions::default(), |ctx| {
            if ctx.rank() == 1 {
                panic!("rank one exploded");
            }
            ctx.recv(1, Phase::Split).map(|_| ())
        })
        .unwrap_err();
        assert!(matches!(err, Error::Worker { rank: 1, .. }), "{err:?}");
    }

    #[test]
    fn closed_peer_is_a_transport_error() {
        let err = run_inproc(2, InProcOptions::default(), |ctx| {
            if ctx.rank() == 0 {
                Ok(())
            } else {
                ctx.recv(0, Phase::Split).map(|_| ())
            }
        })
        .unwrap_err();
        let Error::Worker { rank, source } = err else {
            panic!()
        };
        assert_eq!(rank, 1);
        assert!(matches!(
            *source,
            Error::Transport(TransportError::Closed { peer: 0 })
        ));
    }
}
