use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{backscatter_energy, dli_metric, solve, BeamformerSolution, BfOptions, Problem};
use crate::error::{invalid, Error, Result};
use crate::linalg::{db_to_pow, CVec};
use crate::scene::{ApId, ChannelSet, SceneChannels};

/// Role assignment of every AP to the carrier-emitter set or the reader set.
/// The reference AP is always a reader. Both sets are kept sorted by id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    ce: Vec<ApId>,
    readers: Vec<ApId>,
    #[serde(skip)]
    ref_id: Option<ApId>,
}

impl Partition {
    pub fn new(mut ce: Vec<ApId>, mut readers: Vec<ApId>, ref_id: ApId) -> Result<Self> {
        ce.sort();
        readers.sort();
        if !readers.contains(&ref_id) {
            return invalid(format!("reference AP {ref_id} must be a reader"));
        }
        if ce.is_empty() {
            return invalid("carrier-emitter set is empty");
        }
        if ce.windows(2).any(|w| w[0] == w[1]) || readers.windows(2).any(|w| w[0] == w[1]) {
            return invalid("duplicate AP id in partition");
        }
        if ce.iter().any(|id| readers.contains(id)) {
            return invalid("an AP cannot be both emitter and reader");
        }
        Ok(Self { ce, readers, ref_id: Some(ref_id) })
    }

    /// Builds a partition from the set of emitters; every other AP reads.
    pub fn from_ce(all: &[ApId], ce: &[ApId], ref_id: ApId) -> Result<Self> {
        let readers = all.iter().filter(|id| !ce.contains(id)).cloned().collect();
        Self::new(ce.to_vec(), readers, ref_id)
    }

    pub fn ce(&self) -> &[ApId] {
        &self.ce
    }

    pub fn readers(&self) -> &[ApId] {
        &self.readers
    }

    pub fn ref_id(&self) -> ApId {
        self.ref_id.expect("partition carries its reference AP")
    }

    pub fn all(&self) -> Vec<ApId> {
        let mut v: Vec<ApId> = self.ce.iter().chain(&self.readers).cloned().collect();
        v.sort();
        v
    }

    pub fn is_ce(&self, id: ApId) -> bool {
        self.ce.contains(&id)
    }

    /// Restores the reference id after deserialization.
    pub fn with_ref(self, ref_id: ApId) -> Result<Self> {
        Self::new(self.ce, self.readers, ref_id)
    }

    fn moved(&self, id: ApId) -> Result<Self> {
        let mut ce = self.ce.clone();
        let mut readers = self.readers.clone();
        if let Some(i) = ce.iter().position(|x| *x == id) {
            ce.remove(i);
            readers.push(id);
        } else if let Some(i) = readers.iter().position(|x| *x == id) {
            readers.remove(i);
            ce.push(id);
        } else {
            return invalid(format!("AP {id} not in partition"));
        }
        Self::new(ce, readers, self.ref_id())
    }

    /// Moves `id` to the other coalition.
    pub fn switched(&self, id: ApId) -> Result<Self> {
        if id == self.ref_id() {
            return invalid("the reference AP cannot switch");
        }
        self.moved(id)
    }

    /// Exchanges emitter `ce` with reader `reader`.
    pub fn swapped(&self, ce: ApId, reader: ApId) -> Result<Self> {
        if reader == self.ref_id() {
            return invalid("the reference AP cannot swap");
        }
        if !self.is_ce(ce) || self.is_ce(reader) {
            return invalid("swap needs one emitter and one reader");
        }
        self.moved(ce)?.moved(reader)
    }
}

/// Integer subset-sum table `OP(l, q)`: the largest total weight of a subset
/// of the first `l` items not exceeding `q`.
#[derive(Clone, Debug)]
pub struct DpTable {
    pub weights: Vec<u64>,
    pub budget: u64,
    op: Vec<u64>,
    take: Vec<bool>,
}

/// Cell limit of the table, about a gigabyte of state.
const MAX_DP_CELLS: u128 = 1 << 27;

impl DpTable {
    pub fn build(weights: &[u64], budget: u64) -> Result<Self> {
        let cols = budget as u128 + 1;
        if cols * (weights.len() as u128 + 1) > MAX_DP_CELLS {
            return Err(Error::InvalidInput(format!(
                "subset-sum table with budget {budget} is too large; use a smaller scale factor"
            )));
        }
        let w = cols as usize;
        let mut op = vec![0u64; (weights.len() + 1) * w];
        let mut take = vec![false; (weights.len() + 1) * w];
        for (i, &ql) in weights.iter().enumerate() {
            let l = i + 1;
            for q in 0..w {
                let skip = op[(l - 1) * w + q];
                let mut best = skip;
                if ql <= q as u64 {
                    let with = ql + op[(l - 1) * w + q - ql as usize];
                    if with > skip {
                        best = with;
                        take[l * w + q] = true;
                    }
                }
                op[l * w + q] = best;
            }
        }
        Ok(Self { weights: weights.to_vec(), budget, op, take })
    }

    pub fn op(&self, l: usize, q: u64) -> u64 {
        self.op[l * (self.budget as usize + 1) + q as usize]
    }

    /// Optimal value and chosen item indices; ties keep items out.
    pub fn solve(&self) -> (u64, Vec<usize>) {
        let w = self.budget as usize + 1;
        let mut q = self.budget as usize;
        let mut chosen = Vec::new();
        for l in (1..=self.weights.len()).rev() {
            if self.take[l * w + q] {
                chosen.push(l - 1);
                q -= self.weights[l - 1] as usize;
            }
        }
        chosen.reverse();
        (self.op(self.weights.len(), self.budget), chosen)
    }
}

/// Integer weights `floor(s g + 1/2)` with an overflow check.
pub fn dp_weights(gains: &[f64], scale: f64) -> Result<Vec<u64>> {
    if !(scale > 0.0) {
        return invalid("scale factor must be positive");
    }
    let mut total: u64 = 0;
    let mut out = Vec::with_capacity(gains.len());
    for g in gains {
        let v = (scale * g + 0.5).floor();
        if !(v >= 0.0) || v >= 2f64.powi(53) {
            return Err(Error::InvalidInput(format!("gain {g} overflows at scale {scale}; use a smaller scale factor")));
        }
        let q = v as u64;
        total = total
            .checked_add(q)
            .ok_or_else(|| Error::InvalidInput("weight sum overflows; use a smaller scale factor".into()))?;
        out.push(q);
    }
    Ok(out)
}

/// Balanced split of the per-AP gains `||h_l||^2`, the role assignment that
/// maximizes `||h_R||^2 ||h_C||^2`. The selected subset becomes the reader
/// set when it holds the reference AP and the emitter set otherwise.
pub fn dp_partition(gains: &[(ApId, f64)], scale: f64, ref_id: ApId) -> Result<Partition> {
    if gains.len() < 2 {
        return invalid("need at least two APs");
    }
    if !gains.iter().any(|(id, _)| *id == ref_id) {
        return invalid(format!("reference AP {ref_id} has no gain"));
    }
    let ids: Vec<ApId> = gains.iter().map(|(id, _)| *id).collect();
    let w = dp_weights(&gains.iter().map(|(_, g)| *g).collect::<Vec<_>>(), scale)?;
    let budget = w.iter().sum::<u64>() / 2;
    let (_, chosen) = DpTable::build(&w, budget)?.solve();
    let selected: Vec<ApId> = chosen.iter().map(|&i| ids[i]).collect();
    let rest: Vec<ApId> = ids.iter().filter(|id| !selected.contains(id)).cloned().collect();
    let (ce, readers) = if selected.contains(&ref_id) { (rest, selected) } else { (selected, rest) };
    if ce.is_empty() {
        let others = ids.iter().filter(|id| **id != ref_id).cloned().collect();
        return Partition::new(others, vec![ref_id], ref_id);
    }
    Partition::new(ce, readers, ref_id)
}

/// Everything needed to score a partition.
#[derive(Clone, Debug)]
pub struct UtilityContext<'a> {
    pub channels: &'a SceneChannels,
    pub problem: Problem,
    /// BDE indices served; the multi-device problem uses all of them.
    pub bdes: Vec<usize>,
    pub deltas: Vec<f64>,
    pub opts: BfOptions,
    /// Acceptance threshold on `C(S)`, linear; `None` when unconstrained.
    pub threshold: Option<f64>,
}

/// Comparison slack on the interference threshold of the SDR problems.
pub const DLI_SLACK_DB: f64 = 0.5;
/// Threshold standing in for full cancellation.
pub const NULL_THRESHOLD_DB: f64 = -100.0;

impl<'a> UtilityContext<'a> {
    /// Context with the default thresholds: `alpha + 0.5 dB` for the
    /// interference-constrained problems, `-100 dB` for the nullspace ones.
    pub fn new(channels: &'a SceneChannels, problem: Problem, opts: BfOptions) -> Self {
        let bdes: Vec<usize> = if problem == Problem::Multi { (0..channels.num_bdes()).collect() } else { vec![0] };
        let threshold = if problem.has_dli_constraint() {
            Some(opts.alpha * db_to_pow(DLI_SLACK_DB))
        } else if problem.nulls_dli() {
            Some(db_to_pow(NULL_THRESHOLD_DB))
        } else {
            None
        };
        Self { channels, problem, deltas: vec![opts.delta; bdes.len()], bdes, opts, threshold }
    }

    pub fn with_bde(mut self, bde: usize) -> Self {
        if self.problem != Problem::Multi {
            self.bdes = vec![bde];
        }
        self
    }

    pub fn constrained(&self) -> bool {
        self.threshold.is_some()
    }

    /// Scores a partition; APs missing from it are left out of the scene.
    pub fn evaluate(&self, partition: &Partition) -> Evaluation {
        let chs: Result<Vec<ChannelSet>> = self.bdes.iter().map(|&k| self.channels.for_partial(partition, k)).collect();
        let chs = match chs {
            Ok(c) => c,
            Err(e) => return Evaluation::failed(partition, e.to_string()),
        };
        let sol = match solve(self.problem, &chs, &self.deltas, &self.opts) {
            Ok(s) => s,
            Err(e) => return Evaluation::failed(partition, e.to_string()),
        };
        let u = if self.problem == Problem::Multi {
            sol.sinr.iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            backscatter_energy(&chs[0], &sol.x)
        };
        let c = chs.iter().map(|ch| dli_metric(ch, &sol.x)).fold(0.0, f64::max);
        let feasible = self.threshold.is_none_or(|t| c <= t);
        Evaluation { partition: partition.clone(), u, c, feasible, solution: Some(sol), error: None }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub partition: Partition,
    /// `||H_BL x||^2`, or the minimum SINR for the multi-device problem.
    pub u: f64,
    pub c: f64,
    /// Solver succeeded and `C(S)` meets the threshold.
    pub feasible: bool,
    pub solution: Option<BeamformerSolution>,
    pub error: Option<String>,
}

impl Evaluation {
    fn failed(partition: &Partition, msg: String) -> Self {
        Self { partition: partition.clone(), u: 0.0, c: f64::INFINITY, feasible: false, solution: None, error: Some(msg) }
    }

    /// Utility used in comparisons: zero when constraint-violating.
    pub fn score(&self) -> f64 {
        if self.feasible { self.u } else { 0.0 }
    }

    pub fn x(&self) -> Option<&CVec> {
        self.solution.as_ref().map(|s| &s.x)
    }
}

/// `utility(S)` as `(U, C, x)`; `x` is `None` when the inner problem failed.
pub fn utility(partition: &Partition, ctx: &UtilityContext) -> (f64, f64, Option<CVec>) {
    let e = ctx.evaluate(partition);
    (e.u, e.c, e.x().cloned())
}

struct Scorer<'c, 'a> {
    ctx: &'c UtilityContext<'a>,
    cache: HashMap<Vec<ApId>, Evaluation>,
    evaluations: usize,
}

impl<'c, 'a> Scorer<'c, 'a> {
    fn new(ctx: &'c UtilityContext<'a>) -> Self {
        Self { ctx, cache: HashMap::new(), evaluations: 0 }
    }

    fn eval(&mut self, p: &Partition) -> Evaluation {
        let key = p.ce().to_vec();
        if let Some(e) = self.cache.get(&key).filter(|e| e.partition == *p) {
            return e.clone();
        }
        self.evaluations += 1;
        let e = self.ctx.evaluate(p);
        self.cache.insert(key, e.clone());
        e
    }

    /// Acceptance rule of both moves.
    fn improves(&self, cand: &Evaluation, current: &Evaluation) -> bool {
        cand.feasible && cand.u > current.score()
    }
}

#[derive(Clone, Debug)]
pub struct GameOutcome {
    pub best: Evaluation,
    /// Utility after every accepted move, the start included.
    pub trace: Vec<f64>,
    pub accepted: usize,
    pub passes: usize,
}

fn coalition_with(scorer: &mut Scorer, init: &Partition, rng: &mut ChaCha8Rng) -> GameOutcome {
    let ref_id = init.ref_id();
    let mut cur = scorer.eval(init);
    let mut trace = vec![cur.score()];
    let mut accepted = 0;
    let mut passes = 0;
    loop {
        passes += 1;
        let prev = cur.partition.clone();
        let mut order: Vec<ApId> = prev.all().into_iter().filter(|id| *id != ref_id).collect();
        order.shuffle(rng);
        for l in order {
            let own = if cur.partition.is_ce(l) { cur.partition.ce().len() } else { cur.partition.readers().len() };
            if own == 1 {
                continue;
            }
            let cand = match cur.partition.switched(l) {
                Ok(p) => scorer.eval(&p),
                Err(_) => continue,
            };
            if scorer.improves(&cand, &cur) {
                cur = cand;
                trace.push(cur.score());
                accepted += 1;
            }
        }
        if cur.partition == prev {
            break;
        }
    }
    GameOutcome { best: cur, trace, accepted, passes }
}

/// Random-order switch dynamics until a full pass changes nothing. A switch
/// is kept iff it strictly raises `U` and the result is feasible.
pub fn coalition_game(init: &Partition, ctx: &UtilityContext, seed: u64) -> GameOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coalition_with(&mut Scorer::new(ctx), init, &mut rng)
}

fn swap_with(scorer: &mut Scorer, start: Evaluation) -> Evaluation {
    let ref_id = start.partition.ref_id();
    let mut cur = start;
    let n_ce = cur.partition.ce().len();
    let n_r = cur.partition.readers().len();
    for i in 0..n_ce {
        for j in 0..n_r {
            let (a, b) = (cur.partition.ce()[i], cur.partition.readers()[j]);
            if b == ref_id {
                continue;
            }
            let cand = match cur.partition.swapped(a, b) {
                Ok(p) => scorer.eval(&p),
                Err(_) => continue,
            };
            if scorer.improves(&cand, &cur) {
                cur = cand;
            }
        }
    }
    cur
}

/// One sweep over every (emitter, reader) index pair, keeping improving
/// feasible swaps. The reference AP never moves.
pub fn swap_refine(partition: &Partition, ctx: &UtilityContext) -> Evaluation {
    let mut scorer = Scorer::new(ctx);
    let start = scorer.eval(partition);
    swap_with(&mut scorer, start)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    pub zeta_init: usize,
    pub zeta_alg5: usize,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self { zeta_init: 30, zeta_alg5: 4, seed: 1 }
    }
}

impl GameConfig {
    /// Settings used for the problems with an iterative inner solver.
    pub fn single_pass(seed: u64) -> Self {
        Self { zeta_init: 1, zeta_alg5: 1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.zeta_init == 0 || self.zeta_alg5 == 0 {
            return Err(Error::Config("repetition limits must be at least one".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub best: Evaluation,
    /// Utility after the switch dynamics, before swapping.
    pub phase2_u: f64,
    pub rounds: usize,
    pub evaluations: usize,
}

/// Random role draw with the reference AP reading and at least one emitter.
pub fn random_partition(all: &[ApId], ref_id: ApId, rng: &mut ChaCha8Rng) -> Result<Partition> {
    let others: Vec<ApId> = all.iter().filter(|id| **id != ref_id).cloned().collect();
    if others.is_empty() {
        return invalid("need an AP besides the reference");
    }
    loop {
        let ce: Vec<ApId> = others.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
        if !ce.is_empty() {
            return Partition::from_ce(all, &ce, ref_id);
        }
    }
}

/// Random start, switch dynamics, restarts while infeasible (or a fixed
/// number of restarts keeping the best when unconstrained), then one swap
/// sweep. `init` replaces the first random start.
pub fn run_ap_selection(ctx: &UtilityContext, cfg: &GameConfig, init: Option<&Partition>) -> Result<Selection> {
    cfg.validate()?;
    let all = ctx.channels.ap_ids();
    let ref_id = ctx.channels.ref_id();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scorer = Scorer::new(ctx);
    let mut best: Option<GameOutcome> = None;
    let mut rounds = 0;
    for round in 0..cfg.zeta_alg5 {
        rounds += 1;
        let mut start = match (round, init) {
            (0, Some(p)) => p.clone(),
            _ => random_partition(&all, ref_id, &mut rng)?,
        };
        if ctx.constrained() {
            let mut draws = 1;
            while draws < cfg.zeta_init && !scorer.eval(&start).feasible {
                start = random_partition(&all, ref_id, &mut rng)?;
                draws += 1;
            }
        }
        let out = coalition_with(&mut scorer, &start, &mut rng);
        let better = match &best {
            None => true,
            Some(b) => (out.best.feasible, out.best.score()) > (b.best.feasible, b.best.score()),
        };
        if better {
            best = Some(out);
        }
        if ctx.constrained() && best.as_ref().is_some_and(|b| b.best.feasible) {
            break;
        }
    }
    let phase2 = best.expect("at least one round").best;
    let phase2_u = phase2.score();
    let final_eval = swap_with(&mut scorer, phase2);
    if !final_eval.feasible {
        log::warn!("AP selection for {} found no feasible partition", ctx.problem);
    }
    Ok(Selection { best: final_eval, phase2_u, rounds, evaluations: scorer.evaluations })
}

/// Reference reads, one random AP emits, and every other AP in random order
/// joins the side with the larger utility among feasible choices. APs with
/// no feasible side end up emitting.
pub fn greedy_partition(ctx: &UtilityContext, seed: u64) -> Result<Evaluation> {
    let all = ctx.channels.ap_ids();
    let ref_id = ctx.channels.ref_id();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut others: Vec<ApId> = all.iter().filter(|id| **id != ref_id).cloned().collect();
    if others.is_empty() {
        return invalid("need an AP besides the reference");
    }
    others.shuffle(&mut rng);
    let first = others.remove(0);
    let mut ce = vec![first];
    let mut readers = vec![ref_id];
    let mut unassigned = Vec::new();
    for l in others {
        let as_ce = Partition::new([ce.clone(), vec![l]].concat(), readers.clone(), ref_id)?;
        let as_r = Partition::new(ce.clone(), [readers.clone(), vec![l]].concat(), ref_id)?;
        let (ec, er) = (ctx.evaluate(&as_ce), ctx.evaluate(&as_r));
        match (ec.feasible, er.feasible) {
            (true, true) if er.u > ec.u => readers.push(l),
            (true, _) => ce.push(l),
            (false, true) => readers.push(l),
            (false, false) => unassigned.push(l),
        }
    }
    ce.extend(unassigned);
    Ok(ctx.evaluate(&Partition::new(ce, readers, ref_id)?))
}

/// Scores all `2^(L-1) - 1` role assignments with at least one emitter and
/// returns the best feasible one, ties going to the lexicographically
/// smallest emitter set.
pub fn exhaustive_partition(ctx: &UtilityContext) -> Result<Evaluation> {
    let all = ctx.channels.ap_ids();
    let ref_id = ctx.channels.ref_id();
    if all.len() > 20 {
        return invalid(format!("exhaustive search refused for {} APs", all.len()));
    }
    let others: Vec<ApId> = all.iter().filter(|id| **id != ref_id).cloned().collect();
    if others.is_empty() {
        return invalid("need an AP besides the reference");
    }
    let count = 1u64 << others.len();
    let best = (1..count)
        .into_par_iter()
        .map(|mask| {
            let ce: Vec<ApId> = others.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, id)| *id).collect();
            Partition::from_ce(&all, &ce, ref_id).map(|p| ctx.evaluate(&p))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|e| e.feasible)
        .fold(None, |acc: Option<Evaluation>, e| match acc {
            None => Some(e),
            Some(b) => {
                if e.u > b.u || (e.u == b.u && e.partition.ce() < b.partition.ce()) {
                    Some(e)
                } else {
                    Some(b)
                }
            }
        });
    best.ok_or_else(|| Error::Infeasible(format!("no feasible partition for {}", ctx.problem)))
}
