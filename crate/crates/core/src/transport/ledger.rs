use std::sync::atomic::{AtomicU64, Ordering};

use super::Phase;

const PHASES: usize = Phase::ALL.len();

#[derive(Default)]
struct Cell {
    words_sent: AtomicU64,
    words_recv: AtomicU64,
    msgs_sent: AtomicU64,
    msgs_recv: AtomicU64,
}

/// Per `(rank, phase, direction)` counters of payload words and messages.
///
/// Each rank only ever updates its own row, so a rank can snapshot its row
/// mid-run without synchronizing with the others.
pub struct TrafficLedger {
    world: usize,
    cells: Vec<Cell>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTraffic {
    pub words_sent: u64,
    pub words_recv: u64,
    pub msgs_sent: u64,
    pub msgs_recv: u64,
}

impl PhaseTraffic {
    pub fn saturating_sub(self, earlier: PhaseTraffic) -> PhaseTraffic {
        PhaseTraffic {
            words_sent: self.words_sent.saturating_sub(earlier.words_sent),
            words_recv: self.words_recv.saturating_sub(earlier.words_recv),
            msgs_sent: self.msgs_sent.saturating_sub(earlier.msgs_sent),
            msgs_recv: self.msgs_recv.saturating_sub(earlier.msgs_recv),
        }
    }

    fn add(&mut self, other: PhaseTraffic) {
        self.words_sent += other.words_sent;
        self.words_recv += other.words_recv;
        self.msgs_sent += other.msgs_sent;
        self.msgs_recv += other.msgs_recv;
    }
}

/// One rank's counters for every phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankTraffic(pub [PhaseTraffic; PHASES]);

impl RankTraffic {
    pub fn phase(&self, phase: Phase) -> PhaseTraffic {
        self.0[phase.index()]
    }

    pub fn since(&self, earlier: &RankTraffic) -> RankTraffic {
        let mut out = RankTraffic::default();
        for i in 0..PHASES {
            out.0[i] = self.0[i].saturating_sub(earlier.0[i]);
        }
        out
    }

    pub fn sum_over(&self, phases: &[Phase]) -> PhaseTraffic {
        let mut total = PhaseTraffic::default();
        for &p in phases {
            total.add(self.phase(p));
        }
        total
    }
}

impl TrafficLedger {
    pub fn new(world: usize) -> Self {
        Self {
            world,
            cells: (0..world * PHASES).map(|_| Cell::default()).collect(),
        }
    }

    pub fn world_size(&self) -> usize {
        self.world
    }

    fn cell(&self, rank: usize, phase: Phase) -> &Cell {
        &self.cells[rank * PHASES + phase.index()]
    }

    pub fn record_send(&self, rank: usize, phase: Phase, words: u64) {
        let c = self.cell(rank, phase);
        c.words_sent.fetch_add(words, Ordering::Relaxed);
        c.msgs_sent.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_recv(&self, rank: usize, phase: Phase, words: u64) {
        let c = self.cell(rank, phase);
        c.words_recv.fetch_add(words, Ordering::Relaxed);
        c.msgs_recv.fetch_add(1, Ordering::Relaxed);
    }

    pub fn rank_snapshot(&self, rank: usize) -> RankTraffic {
        let mut out = RankTraffic::default();
        for p in Phase::ALL {
            let c = self.cell(rank, p);
            out.0[p.index()] = PhaseTraffic {
                words_sent: c.words_sent.load(Ordering::Relaxed),
                words_recv: c.words_recv.load(Ordering::Relaxed),
                msgs_sent: c.msgs_sent.load(Ordering::Relaxed),
                msgs_recv: c.msgs_recv.load(Ordering::Relaxed),
            };
        }
        out
    }

    /// Read all rows. Only meaningful once every worker has quiesced.
    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            ranks: (0..self.world).map(|r| self.rank_snapshot(r)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LedgerSnapshot {
    pub ranks: Vec<RankTraffic>,
}

impl LedgerSnapshot {
    pub fn get(&self, rank: usize, phase: Phase) -> PhaseTraffic {
        self.ranks[rank].phase(phase)
    }

    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            ranks: self
                .ranks
                .iter()
                .zip(&earlier.ranks)
                .map(|(now, then)| now.since(then))
                .collect(),
        }
    }

    pub fn phase_total(&self, phase: Phase) -> PhaseTraffic {
        let mut total = PhaseTraffic::default();
        for r in &self.ranks {
            total.add(r.phase(phase));
        }
        total
    }

    /// Words sent by `rank` summed over `phases`.
    pub fn words_sent(&self, rank: usize, phases: &[Phase]) -> u64 {
        self.ranks[rank].sum_over(phases).words_sent
    }

    pub fn words_recv(&self, rank: usize, phases: &[Phase]) -> u64 {
        self.ranks[rank].sum_over(phases).words_recv
    }

    /// True when every phase's sent totals equal its received totals.
    pub fn is_conserved(&self) -> bool {
        Phase::ALL.iter().all(|&p| {
            let t = self.phase_total(p);
            t.words_sent == t.words_recv && t.msgs_sent == t.msgs_recv
        })
    }
}
