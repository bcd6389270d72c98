//! Per-iteration batch selection.
//!
//! Both policies see the same candidate list (arrival order) and the same two
//! limits: a prefill token budget and the free VRAM. Requests already resident
//! from an earlier chunk cost no further VRAM and are always continued first.

use serde::{Deserialize, Serialize};

/// Exact search covers at most this many fill candidates per iteration.
pub const FILL_WINDOW: usize = 16;
/// The best-fit pass after the exact window looks at most this far down the queue.
pub const FILL_SCAN_LIMIT: usize = 256;

/// A schedulable request as seen by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub arrival_time: f64,
    /// Prefill tokens still to compute.
    pub remaining: u64,
    /// VRAM needed to admit the request; zero once resident.
    pub vram_cost: f64,
    pub resident: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pick {
    /// Position in the candidate slice.
    pub index: usize,
    pub tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub picks: Vec<Pick>,
}

impl Selection {
    pub fn tokens(&self) -> u64 {
        self.picks.iter().map(|p| p.tokens).sum()
    }

    pub fn vram(&self, candidates: &[Candidate]) -> f64 {
        self.picks
            .iter()
            .map(|p| candidates[p.index].vram_cost)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.index).collect()
    }
}

/// Wait-time priority for the utilization-aware policy.
///
/// A request's credit is `wait · credit_per_second · credit_weight`; once it
/// reaches 1 the request is promoted and served in credit order ahead of any
/// utilization-driven reordering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aging {
    pub credit_per_second: f64,
    pub credit_weight: f64,
}

impl Default for Aging {
    fn default() -> Self {
        Self {
            credit_per_second: 1.0,
            credit_weight: 1.0,
        }
    }
}

impl Aging {
    /// No aging: pure utilization maximization.
    pub const NONE: Aging = Aging {
        credit_per_second: 0.0,
        credit_weight: 0.0,
    };

    pub fn credit(&self, wait: f64) -> f64 {
        if wait <= 0.0 || self.credit_per_second == 0.0 || self.credit_weight == 0.0 {
            return 0.0;
        }
        wait * self.credit_per_second * self.credit_weight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Fifo,
    UtilizationAware { aging: Aging },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Fifo => "fifo",
            Policy::UtilizationAware { .. } => "utilization_aware",
        }
    }

    pub fn select(
        &self,
        candidates: &[Candidate],
        budget: u64,
        vram_free: f64,
        chunking: bool,
        now: f64,
    ) -> Selection {
        match *self {
            Policy::Fifo => schedule_fifo(candidates, budget, vram_free, chunking),
            Policy::UtilizationAware { aging } => {
                schedule_utilization_aware(candidates, budget, vram_free, chunking, now, aging)
            }
        }
    }
}

/// Running limits while a selection is assembled.
struct Filler {
    budget_left: u64,
    vram_left: f64,
    picks: Vec<Pick>,
}

impl Filler {
    fn new(budget: u64, vram_free: f64) -> Self {
        Self {
            budget_left: budget,
            vram_left: vram_free,
            picks: Vec::new(),
        }
    }

    /// Admits candidate `i` whole, or chunked when allowed. Returns false when it cannot go.
    fn try_take(&mut self, i: usize, c: &Candidate, chunking: bool) -> bool {
        if self.budget_left == 0 || c.vram_cost > self.vram_left {
            return false;
        }
        let tokens = c.remaining.min(self.budget_left);
        if tokens < c.remaining && !chunking {
            return false;
        }
        self.budget_left -= tokens;
        self.vram_left -= c.vram_cost;
        self.picks.push(Pick { index: i, tokens });
        true
    }

    fn tokens(&self) -> u64 {
        self.picks.iter().map(|p| p.tokens).sum()
    }

    fn finish(self) -> Selection {
        Selection { picks: self.picks }
    }
}

fn resident_first(candidates: &[Candidate]) -> impl Iterator<Item = usize> + '_ {
    let residents = (0..candidates.len()).filter(|&i| candidates[i].resident);
    let others = (0..candidates.len()).filter(|&i| !candidates[i].resident);
    residents.chain(others)
}

/// Arrival-order admission that stops at the first request that does not fit.
/// The last admitted request may be chunked when chunking is on.
pub fn schedule_fifo(
    candidates: &[Candidate],
    budget: u64,
    vram_free: f64,
    chunking: bool,
) -> Selection {
    let mut f = Filler::new(budget, vram_free);
    for i in resident_first(candidates) {
        if !f.try_take(i, &candidates[i], chunking) {
            break;
        }
    }
    f.finish()
}

/// Utilization-aware selection.
///
/// 1. Resident (partially prefilled) requests continue.
/// 2. Promoted requests (aging credit ≥ 1) are admitted in credit order; if one
///    is blocked, nothing else is admitted this iteration so it cannot starve.
/// 3. The remaining budget is filled by the subset that schedules the most
///    tokens: exact search over the first [`FILL_WINDOW`] candidates, then
///    best-fit over the next ones. Ties prefer unchunked sets, then earlier
///    arrivals. An arrival-order fill is kept instead if it schedules more.
pub fn schedule_utilization_aware(
    candidates: &[Candidate],
    budget: u64,
    vram_free: f64,
    chunking: bool,
    now: f64,
    aging: Aging,
) -> Selection {
    let mut f = Filler::new(budget, vram_free);
    for i in (0..candidates.len()).filter(|&i| candidates[i].resident) {
        if !f.try_take(i, &candidates[i], chunking) {
            return f.finish();
        }
    }

    let credit = |i: usize| aging.credit(now - candidates[i].arrival_time);
    let mut promoted: Vec<usize> = (0..candidates.len())
        .filter(|&i| !candidates[i].resident && credit(i) >= 1.0)
        .collect();
    promoted.sort_by(|&a, &b| credit(b).total_cmp(&credit(a)).then(a.cmp(&b)));
    for &i in &promoted {
        if !f.try_take(i, &candidates[i], chunking) {
            return f.finish();
        }
    }

    let rest: Vec<usize> = (0..candidates.len())
        .filter(|&i| !candidates[i].resident && credit(i) < 1.0)
        .collect();
    if rest.is_empty() || f.budget_left == 0 {
        return f.finish();
    }

    let window = &rest[..rest.len().min(FILL_WINDOW)];
    let mut packed = Filler::new(f.budget_left, f.vram_left);
    for (i, tokens) in exact_fill(candidates, window, f.budget_left, f.vram_left, chunking) {
        packed.budget_left -= tokens;
        packed.vram_left -= candidates[i].vram_cost;
        packed.picks.push(Pick { index: i, tokens });
    }
    let tail_end = rest.len().min(FILL_WINDOW + FILL_SCAN_LIMIT);
    best_fit(
        candidates,
        &rest[window.len()..tail_end],
        &mut packed,
        chunking,
    );

    let mut in_order = Filler::new(f.budget_left, f.vram_left);
    for &i in &rest {
        if !in_order.try_take(i, &candidates[i], chunking) {
            break;
        }
    }

    let chosen = if in_order.tokens() > packed.tokens() {
        in_order
    } else {
        packed
    };
    f.picks.extend(chosen.picks);
    f.finish()
}

fn best_fit(candidates: &[Candidate], pool: &[usize], f: &mut Filler, chunking: bool) {
    let mut used = vec![false; pool.len()];
    while f.budget_left > 0 {
        let whole = (0..pool.len())
            .filter(|&j| !used[j])
            .filter(|&j| {
                let c = &candidates[pool[j]];
                c.remaining <= f.budget_left && c.vram_cost <= f.vram_left
            })
            .max_by(|&a, &b| {
                candidates[pool[a]]
                    .remaining
                    .cmp(&candidates[pool[b]].remaining)
                    .then(b.cmp(&a))
            });
        let next = whole.or_else(|| {
            chunking
                .then(|| {
                    (0..pool.len())
                        .find(|&j| !used[j] && candidates[pool[j]].vram_cost <= f.vram_left)
                })
                .flatten()
        });
        let Some(j) = next else { break };
        used[j] = true;
        f.try_take(pool[j], &candidates[pool[j]], chunking);
    }
}

/// Lexicographic score of a fill: more tokens first, then unchunked.
type Score = (u64, bool);

struct Search<'a> {
    remaining: Vec<u64>,
    cost: Vec<f64>,
    suffix: Vec<u64>,
    budget: u64,
    vram: f64,
    chunking: bool,
    best: Score,
    best_set: Vec<usize>,
    chosen: Vec<usize>,
    done: bool,
    _c: std::marker::PhantomData<&'a ()>,
}

impl Search<'_> {
    fn score(&self, sum: u64) -> Score {
        if sum > self.budget {
            (self.budget, false)
        } else {
            (sum, true)
        }
    }

    fn visit(&mut self, pos: usize, sum: u64, vram: f64) {
        let here = self.score(sum);
        if here > self.best {
            self.best = here;
            self.best_set = self.chosen.clone();
            if here == (self.budget, true) {
                self.done = true;
                return;
            }
        }
        if sum >= self.budget {
            return;
        }
        let bound = self.score(sum + self.suffix[pos]);
        if (bound.0, true) <= self.best {
            return;
        }
        for j in pos..self.remaining.len() {
            let next_sum = sum + self.remaining[j];
            if vram + self.cost[j] > self.vram || (!self.chunking && next_sum > self.budget) {
                continue;
            }
            self.chosen.push(j);
            self.visit(j + 1, next_sum, vram + self.cost[j]);
            self.chosen.pop();
            if self.done {
                return;
            }
        }
    }
}

/// Exact token-maximizing subset of `pool`. Sets are explored in lexicographic
/// order and only strictly better ones replace the incumbent, so the earliest
/// arrivals win ties. When chunking, the latest member takes the partial chunk.
fn exact_fill(
    candidates: &[Candidate],
    pool: &[usize],
    budget: u64,
    vram: f64,
    chunking: bool,
) -> Vec<(usize, u64)> {
    let remaining: Vec<u64> = pool.iter().map(|&i| candidates[i].remaining).collect();
    let mut suffix = vec![0u64; pool.len() + 1];
    for j in (0..pool.len()).rev() {
        suffix[j] = suffix[j + 1] + remaining[j];
    }
    let mut s = Search {
        cost: pool.iter().map(|&i| candidates[i].vram_cost).collect(),
        remaining,
        suffix,
        budget,
        vram,
        chunking,
        best: (0, true),
        best_set: Vec::new(),
        chosen: Vec::new(),
        done: false,
        _c: std::marker::PhantomData,
    };
    s.visit(0, 0, 0.0);
    let mut left = budget;
    s.best_set
        .iter()
        .map(|&j| {
            let tokens = s.remaining[j].min(left);
            left -= tokens;
            (pool[j], tokens)
        })
        .collect()
}
