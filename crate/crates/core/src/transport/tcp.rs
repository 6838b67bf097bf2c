//! TCP backend.
//!
//! Every rank listens on the address given for it in a rank map file and
//! dials every other rank once, so each ordered pair `(src, dst)` owns one
//! connection carrying `src -> dst` traffic. Frames are a 4-byte
//! little-endian length followed by the body:
//!
//! ```text
//! [phase: u8] [header_len: u32] [ints_len: u32] [reals_len: u32]
//! [header: u32 x header_len] [ints: u32 x ints_len] [reals: f64 x reals_len]
//! ```
//!
//! A reader thread per inbound connection drains frames into a mailbox keyed
//! by `(src, phase)`, so writers never block on a peer that is itself busy
//! writing.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{AbortHandle, LedgerSnapshot, Payload, Phase, Transport, TransportError, WorkerCtx};
use crate::error::{Error, Result};

/// `rank -> host:port` table, one line per rank: `"<rank> <host>:<port>"`.
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMap {
    addrs: Vec<String>,
}

impl RankMap {
    pub fn new(addrs: Vec<String>) -> Self {
        Self { addrs }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(rank), Some(addr), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::invalid(format!(
                    "rank map line {}: expected \"rank host:port\"",
                    lineno + 1
                )));
            };
            let rank: usize = rank.parse().map_err(|_| {
                Error::invalid(format!("rank map line {}: bad rank {rank:?}", lineno + 1))
            })?;
            if !addr.contains(':') {
                return Err(Error::invalid(format!(
                    "rank map line {}: address {addr:?} has no port",
                    lineno + 1
                )));
            }
            entries.push((rank, addr.to_string()));
        }
        entries.sort();
        for (expect, (rank, _)) in entries.iter().enumerate() {
            if *rank != expect {
                return Err(Error::invalid(format!(
                    "rank map must list ranks 0..{} exactly once",
                    entries.len()
                )));
            }
        }
        if entries.is_empty() {
            return Err(Error::invalid("rank map is empty"));
        }
        Ok(Self {
            addrs: entries.into_iter().map(|(_, a)| a).collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.addrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addrs.is_empty()
    }

    pub fn addr(&self, rank: usize) -> &str {
        &self.addrs[rank]
    }
}

impl fmt::Display for RankMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (rank, addr) in self.addrs.iter().enumerate() {
            writeln!(f, "{rank} {addr}")?;
        }
        Ok(())
    }
}

/// Binds `world` listeners on ephemeral loopback ports and returns them with
/// the matching rank map.
pub fn bind_loopback(world: usize) -> Result<(Vec<TcpListener>, RankMap)> {
    let listeners = (0..world)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<io::Result<Vec<_>>>()?;
    let addrs = listeners
        .iter()
        .map(|l| l.local_addr().map(|a| a.to_string()))
        .collect::<io::Result<Vec<_>>>()?;
    Ok((listeners, RankMap::new(addrs)))
}

pub(crate) fn encode_frame(phase: Phase, p: &Payload) -> Vec<u8> {
    let body_len = 1 + 12 + 4 * (p.header.len() + p.ints.len()) + 8 * p.reals.len();
    let mut buf = Vec::with_capacity(4 + body_len);
    buf.extend_from_slice(&(body_len as u32).to_le_bytes());
    buf.push(phase.index() as u8);
    for len in [p.header.len(), p.ints.len(), p.reals.len()] {
        buf.extend_from_slice(&(len as u32).to_le_bytes());
    }
    for w in p.header.iter().chain(&p.ints) {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    for v in &p.reals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub(crate) fn decode_body(body: &[u8]) -> Result<(Phase, Payload), TransportError> {
    let bad = |m: &str| TransportError::Frame(m.to_string());
    if body.len() < 13 {
        return Err(bad("short frame"));
    }
    let phase = Phase::from_index(body[0] as usize).ok_or_else(|| bad("unknown phase"))?;
    let word = |at: usize| u32::from_le_bytes(body[at..at + 4].try_into().unwrap()) as usize;
    let (h, i, r) = (word(1), word(5), word(9));
    if body.len() != 13 + 4 * (h + i) + 8 * r {
        return Err(bad("length fields disagree with frame size"));
    }
    let mut at = 13;
    let mut u32s = |count: usize| {
        let out: Vec<u32> = (0..count).map(|j| word(at + 4 * j) as u32).collect();
        at += 4 * count;
        out
    };
    let header = u32s(h);
    let ints = u32s(i);
    let start = 13 + 4 * (h + i);
    let reals = body[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        phase,
        Payload {
            header,
            ints,
            reals,
        },
    ))
}

#[derive(Default)]
struct MailState {
    queues: HashMap<(usize, Phase), VecDeque<Payload>>,
    closed: Vec<bool>,
    fault: Option<String>,
}

type Mailbox = Arc<(Mutex<MailState>, Condvar)>;

fn read_loop(src: usize, mut stream: TcpStream, mailbox: Mailbox) {
    let finish = |fault: Option<String>| {
        let (lock, cv) = &*mailbox;
        let mut st = lock.lock().unwrap_or_else(|e| e.into_inner());
        st.closed[src] = true;
        if fault.is_some() {
            st.fault = fault;
        }
        cv.notify_all();
    };
    loop {
        let mut len = [0u8; 4];
        match stream.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return finish(None),
            Err(e) => return finish(Some(e.to_string())),
        }
        let mut body = vec![0u8; u32::from_le_bytes(len) as usize];
        if let Err(e) = stream.read_exact(&mut body) {
            return finish(Some(e.to_string()));
        }
        match decode_body(&body) {
            Ok((phase, payload)) => {
                let (lock, cv) = &*mailbox;
                let mut st = lock.lock().unwrap_or_else(|e| e.into_inner());
                st.queues
                    .entry((src, phase))
                    .or_default()
                    .push_back(payload);
                cv.notify_all();
            }
            Err(e) => return finish(Some(e.to_string())),
        }
    }
}

pub struct TcpTransport {
    rank: usize,
    world: usize,
    out: Vec<Option<TcpStream>>,
    mailbox: Mailbox,
    abort: AbortHandle,
}

impl TcpTransport {
    /// Establishes the full mesh for `rank`. Blocks until every peer has
    /// dialed in and every outbound connection is up, or `timeout` expires.
    pub fn connect(
        rank: usize,
        map: &RankMap,
        listener: TcpListener,
        abort: AbortHandle,
        timeout: Duration,
    ) -> Result<Self> {
        let world = map.len();
        if rank >= world {
            return Err(Error::invalid(format!(
                "rank {rank} not in rank map of {world}"
            )));
        }
        let mailbox: Mailbox = Arc::new((
            Mutex::new(MailState {
                closed: vec![false; world],
                ..MailState::default()
            }),
            Condvar::new(),
        ));

        let accept_box = Arc::clone(&mailbox);
        let acceptor = thread::spawn(move || -> io::Result<()> {
            for _ in 1..world {
                let (mut stream, _) = listener.accept()?;
                let mut hello = [0u8; 4];
                stream.read_exact(&mut hello)?;
                let src = u32::from_le_bytes(hello) as usize;
                if src >= world || src == rank {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        "bad handshake rank",
                    ));
                }
                let mb = Arc::clone(&accept_box);
                thread::spawn(move || read_loop(src, stream, mb));
            }
            Ok(())
        });

        let deadline = Instant::now() + timeout;
        let mut out: Vec<Option<TcpStream>> = (0..world).map(|_| None).collect();
        for (dst, slot) in out.iter_mut().enumerate() {
            if dst == rank {
                continue;
            }
            let addr = map
                .addr(dst)
                .to_socket_addrs()?
                .next()
                .ok_or_else(|| Error::invalid(format!("cannot resolve {}", map.addr(dst))))?;
            let mut stream = loop {
                match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() >= deadline => return Err(e.into()),
                    Err(_) => thread::sleep(Duration::from_millis(20)),
                }
            };
            stream.set_nodelay(true)?;
            stream.write_all(&(rank as u32).to_le_bytes())?;
            *slot = Some(stream);
        }
        acceptor
            .join()
            .map_err(|_| Error::Protocol("acceptor thread panicked".into()))??;
        Ok(Self {
            rank,
            world,
            out,
            mailbox,
            abort,
        })
    }
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn send(&mut self, dst: usize, phase: Phase, payload: Payload) -> Result<(), TransportError> {
        if self.abort.is_aborted() {
            return Err(TransportError::Aborted);
        }
        let stream = self.out[dst]
            .as_mut()
            .ok_or(TransportError::Closed { peer: dst })?;
        stream
            .write_all(&encode_frame(phase, &payload))
            .map_err(|e| match e.kind() {
                io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => {
                    TransportError::Closed { peer: dst }
                }
                _ => TransportError::Io(e),
            })
    }

    fn recv(&mut self, src: usize, phase: Phase) -> Result<Payload, TransportError> {
        let (lock, cv) = &*self.mailbox;
        let mut st = lock.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(p) = st.queues.get_mut(&(src, phase)).and_then(|q| q.pop_front()) {
                return Ok(p);
            }
            if let Some(fault) = st.fault.take() {
                return Err(TransportError::Frame(fault));
            }
            if st.closed[src] {
                return Err(TransportError::Closed { peer: src });
            }
            if self.abort.is_aborted() {
                return Err(TransportError::Aborted);
            }
            st = cv
                .wait_timeout(st, Duration::from_millis(25))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for s in self.out.iter().flatten() {
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

/// Runs `f` on every rank of `map` inside this process, with all traffic
/// going over loopback sockets bound to the mapped addresses.
pub fn run_tcp<T, F>(map: &RankMap, f: F) -> Result<(Vec<T>, LedgerSnapshot)>
where
    T: Send,
    F: Fn(&mut WorkerCtx) -> Result<T> + Sync,
{
    let listeners = (0..map.len())
        .map(|r| TcpListener::bind(map.addr(r)))
        .collect::<io::Result<Vec<_>>>()?;
    run_tcp_with(map, listeners, f)
}

pub fn run_tcp_with<T, F>(
    map: &RankMap,
    listeners: Vec<TcpListener>,
    f: F,
) -> Result<(Vec<T>, LedgerSnapshot)>
where
    T: Send,
    F: Fn(&mut WorkerCtx) -> Result<T> + Sync,
{
    let abort = AbortHandle::new();
    let transports: Vec<TcpTransport> = thread::scope(|s| {
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(rank, l)| {
                let abort = abort.clone();
                s.spawn(move || TcpTransport::connect(rank, map, l, abort, Duration::from_secs(10)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| Error::Protocol("connect thread panicked".into()))?
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let boxed = transports
        .into_iter()
        .map(|t| Box::new(t) as Box<dyn Transport>)
        .collect();
    super::run_workers(boxed, abort, f)
}
