//! Empirical checks of the algorithm against the analysis.
//!
//! Monte Carlo runs are split into fixed chunks of [`CHUNK`] trials. Each
//! chunk is simulated on its own and the chunk summaries are merged in chunk
//! order, so the result does not depend on the number of worker threads.
//! Trial `t` of a run with master seed `s` uses the seed [`trial_seed`]`(s, t)`.
//!
//! Conditional estimates (given `i ∉ S`) use rejection: trials with `i ∈ S`
//! are simply not counted.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kicknext::{check_p, draw_dense, execute, opt_root_mask, ReferenceSets};
use crate::matroid::{brank_dense, greedy_dense, true_optima};
use crate::model::{ElementId, FSum, LaminarInstance, NodeId};
use crate::theory::{
    self, allkicked_bound, g_refined_bound, g_weak_bound, PenaltyTable, TheoryParams, TOLERANCE,
};

/// Trials per chunk of a Monte Carlo run.
pub const CHUNK: u64 = 1024;

/// Largest instance accepted by exhaustive enumeration.
pub const EXACT_LIMIT: usize = 8;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `index`-th output of a SplitMix64 stream started at `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Welford accumulator with Chan's merge.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / total as f64;
        self.count = total;
    }

    /// Sample standard deviation (n − 1 denominator).
    pub fn std_dev(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std_dev() / (self.count as f64).sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McConfig {
    pub padding: bool,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            padding: true,
            jobs: None,
        }
    }
}

/// Empirical `P(AllKicked(i, B) | i ∉ S)` next to its bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllKickedRow {
    pub element: ElementId,
    pub node: NodeId,
    /// `brank(i, B)` against the true optimum padded to `μ(B)`.
    pub brank: usize,
    pub conditioned: u64,
    pub kicked: u64,
    pub frequency: f64,
    pub std_err: f64,
    /// `α·c^(brank+1)/(1 − c)`; absent when `p >= 1/2`.
    pub bound: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
    /// Reported, not asserted.
    Info,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "true",
            CheckStatus::Fail => "false",
            CheckStatus::Skipped => "skipped",
            CheckStatus::Info => "info",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaCheck {
    pub name: String,
    /// The inequality this check instantiates.
    pub lemma: &'static str,
    pub status: CheckStatus,
    pub value: f64,
    pub bound: f64,
    pub std_err: Option<f64>,
    pub detail: String,
}

impl LemmaCheck {
    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub instance: String,
    pub p: f64,
    pub trials: u64,
    pub master_seed: u64,
    pub padding: bool,
    pub opt_weight: f64,
    /// Estimated `E[w(SOL)] / w(OPT)`.
    pub ratio: f64,
    pub std_err: f64,
    pub allkicked: Vec<AllKickedRow>,
    pub checks: Vec<LemmaCheck>,
}

/// One `(i, B)` pair tracked during a Monte Carlo run.
struct Slots {
    /// Element index -> first slot index; slots follow `F(i)` inner to outer.
    first: Vec<Option<usize>>,
    pairs: Vec<(usize, usize)>,
}

impl Slots {
    fn new(inst: &LaminarInstance, track: &[bool]) -> Self {
        let ix = inst.index();
        let mut first = vec![None; inst.len()];
        let mut pairs = Vec::new();
        // Slots ordered by element id so reports come out sorted.
        let mut elems: Vec<usize> = (0..inst.len()).filter(|&e| track[e]).collect();
        elems.sort_by_key(|&e| inst.elem_id(e));
        for e in elems {
            first[e] = Some(pairs.len());
            pairs.extend(ix.up[ix.home[e]].iter().map(|&b| (e, b)));
        }
        Slots { first, pairs }
    }
}

#[derive(Clone)]
struct ChunkSummary {
    ratio: RunningStats,
    conditioned: Vec<u64>,
    kicked: Vec<u64>,
}

struct McRun {
    ratio: RunningStats,
    slots: Slots,
    conditioned: Vec<u64>,
    kicked: Vec<u64>,
    opt_weight: f64,
}

fn simulate(
    inst: &LaminarInstance,
    p: f64,
    trials: u64,
    master_seed: u64,
    config: &McConfig,
) -> Result<McRun> {
    check_p(p)?;
    if trials == 0 {
        return Err(Error::OutOfRange {
            name: "trials",
            value: 0.0,
            expected: "trials >= 1",
        });
    }
    let ix = inst.index();
    let track = opt_root_mask(inst);
    let opt_weight: f64 = greedy_dense(ix, ix.root, |_| true)
        .iter()
        .map(|&e| ix.weight[e])
        .fsum();
    if opt_weight <= 0.0 {
        return Err(Error::DegenerateInstance);
    }
    let slots = Slots::new(inst, &track);
    let n_slots = slots.pairs.len();

    let run_chunk = |c: u64| -> ChunkSummary {
        let mut summary = ChunkSummary {
            ratio: RunningStats::default(),
            conditioned: vec![0; n_slots],
            kicked: vec![0; n_slots],
        };
        for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
            let dense = draw_dense(inst.len(), p, trial_seed(master_seed, t));
            let mut refs = ReferenceSets::build(inst, &dense.in_sample, config.padding);
            let raw = execute(ix, &mut refs, &dense.order, &track, false);
            let weight: f64 = raw.sol_root.iter().map(|&e| ix.weight[e]).fsum();
            summary.ratio.push(weight / opt_weight);
            for k in &raw.kicked {
                let base = slots.first[k.elem].expect("tracked element has slots");
                let chain = &ix.up[ix.home[k.elem]];
                for j in 0..chain.len() {
                    summary.conditioned[base + j] += 1;
                }
                for &b in &k.kicked_nodes {
                    let j = chain
                        .iter()
                        .position(|&x| x == b)
                        .expect("kicked node lies on the chain");
                    summary.kicked[base + j] += 1;
                }
            }
        }
        summary
    };

    let chunks = trials.div_ceil(CHUNK);
    let summaries: Vec<ChunkSummary> = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?
            .install(|| (0..chunks).into_par_iter().map(run_chunk).collect()),
        None => (0..chunks).into_par_iter().map(run_chunk).collect(),
    };

    let mut ratio = RunningStats::default();
    let mut conditioned = vec![0; n_slots];
    let mut kicked = vec![0; n_slots];
    for s in &summaries {
        ratio.merge(&s.ratio);
        for j in 0..n_slots {
            conditioned[j] += s.conditioned[j];
            kicked[j] += s.kicked[j];
        }
    }
    Ok(McRun {
        ratio,
        slots,
        conditioned,
        kicked,
        opt_weight,
    })
}

fn allkicked_rows(inst: &LaminarInstance, p: f64, run: &McRun) -> Vec<AllKickedRow> {
    let ix = inst.index();
    let params: Option<TheoryParams> = theory::theory_params(p).ok();
    let opt = true_optima(ix);
    run.slots
        .pairs
        .iter()
        .enumerate()
        .map(|(j, &(e, b))| {
            let d = brank_dense(ix, e, b, &opt[b], true);
            let cond = run.conditioned[j];
            let freq = if cond == 0 {
                0.0
            } else {
                run.kicked[j] as f64 / cond as f64
            };
            let se = if cond == 0 {
                0.0
            } else {
                (freq * (1.0 - freq) / cond as f64).sqrt()
            };
            AllKickedRow {
                element: inst.elem_id(e),
                node: inst.node_id(b),
                brank: d,
                conditioned: cond,
                kicked: run.kicked[j],
                frequency: freq,
                std_err: se,
                bound: params.as_ref().map(|t| allkicked_bound(t, d)),
            }
        })
        .collect()
}

/// Estimates `E[w(SOL(U))] / w(OPT)` over `trials` seeded trials. The
/// report also carries the `AllKicked` frequencies gathered on the way.
pub fn monte_carlo_ratio(
    inst: &LaminarInstance,
    p: f64,
    trials: u64,
    master_seed: u64,
    config: &McConfig,
) -> Result<ExperimentReport> {
    let run = simulate(inst, p, trials, master_seed, config)?;
    Ok(ExperimentReport {
        instance: inst.name().to_string(),
        p,
        trials,
        master_seed,
        padding: config.padding,
        opt_weight: run.opt_weight,
        ratio: run.ratio.mean,
        std_err: run.ratio.std_err(),
        allkicked: allkicked_rows(inst, p, &run),
        checks: Vec::new(),
    })
}

/// Per-`(i, B)` conditional `AllKicked` frequencies for `i ∈ OPT`, `B ∈ F(i)`.
pub fn allkicked_frequency(
    inst: &LaminarInstance,
    p: f64,
    trials: u64,
    master_seed: u64,
    config: &McConfig,
) -> Result<Vec<AllKickedRow>> {
    let run = simulate(inst, p, trials, master_seed, config)?;
    Ok(allkicked_rows(inst, p, &run))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactReport {
    pub ratio: f64,
    pub expected_weight: f64,
    pub opt_weight: f64,
    /// Sum of the enumerated probability weights; 1 up to rounding.
    pub total_probability: f64,
}

/// Visits every permutation of `items` (Heap's algorithm, iterative).
fn for_each_permutation(items: &mut [usize], mut f: impl FnMut(&[usize])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    f(items);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            f(items);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn check_exact_size(inst: &LaminarInstance) -> Result<()> {
    if inst.len() > EXACT_LIMIT {
        Err(Error::TooLarge {
            what: "instance",
            size: inst.len(),
            limit: EXACT_LIMIT,
        })
    } else {
        Ok(())
    }
}

/// `E[w(SOL(U))] / w(OPT)` by enumerating every sample set `S` (probability
/// `(1 − p)^|S|·p^|T|`) and every arrival order of `T` (uniform).
pub fn exact_ratio(inst: &LaminarInstance, p: f64, padding: bool) -> Result<ExactReport> {
    check_p(p)?;
    check_exact_size(inst)?;
    let ix = inst.index();
    let n = inst.len();
    let opt_weight: f64 = greedy_dense(ix, ix.root, |_| true)
        .iter()
        .map(|&e| ix.weight[e])
        .fsum();
    if opt_weight <= 0.0 {
        return Err(Error::DegenerateInstance);
    }
    let no_track = vec![false; n];
    let mut expected = 0.0;
    let mut total_probability = 0.0;
    for mask in 0u32..(1 << n) {
        let in_sample: Vec<bool> = (0..n).map(|e| mask >> e & 1 == 1).collect();
        let sampled = mask.count_ones() as i32;
        let prob = (1.0 - p).powi(sampled) * p.powi(n as i32 - sampled);
        total_probability += prob;
        let base = ReferenceSets::build(inst, &in_sample, padding);
        let mut arrivals: Vec<usize> = (0..n).filter(|&e| !in_sample[e]).collect();
        let mut sum = 0.0;
        let mut count = 0u64;
        for_each_permutation(&mut arrivals, |order| {
            let mut refs = base.clone();
            let raw = execute(ix, &mut refs, order, &no_track, false);
            sum += raw.sol_root.iter().map(|&e| ix.weight[e]).fsum();
            count += 1;
        });
        expected += prob * sum / count as f64;
    }
    Ok(ExactReport {
        ratio: expected / opt_weight,
        expected_weight: expected,
        opt_weight,
        total_probability,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateMode {
    Exact,
    MonteCarlo { trials: u64, seed: u64 },
}

/// Distribution of `(|N_1|, …, |N_m|)` given `i ∉ S`, where `a_1 < … < a_m`
/// is the padded `OPT_S(B)` (so `m = μ(B)`) and `N_j` holds the elements
/// `x ∈ T`, `x ≠ i`, qualifying for `B` with `a_j < x < a_(j+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QualifyingDistribution {
    pub node: NodeId,
    pub given: ElementId,
    pub m: usize,
    pub probabilities: BTreeMap<Vec<u32>, f64>,
    /// Trials used in Monte Carlo mode; `None` when exact.
    pub trials: Option<u64>,
}

impl QualifyingDistribution {
    pub fn probability(&self, counts: &[u32]) -> f64 {
        self.probabilities.get(counts).copied().unwrap_or(0.0)
    }

    pub fn std_err(&self, counts: &[u32]) -> Option<f64> {
        self.trials.map(|t| {
            let f = self.probability(counts);
            (f * (1.0 - f) / t as f64).sqrt()
        })
    }
}

fn qualifying_counts(
    inst: &LaminarInstance,
    refs: &ReferenceSets,
    node: usize,
    given: usize,
    in_sample: &[bool],
) -> Vec<u32> {
    let ix = inst.index();
    let set = &refs.sets[node];
    let mut counts = vec![0u32; set.len()];
    for (x, &sampled) in in_sample.iter().enumerate() {
        if x == given || sampled || !ix.elem_in(x, node) || !refs.qualifies_dense(ix, x, node) {
            continue;
        }
        // Qualifying implies at least one reference element lighter than x.
        let lighter = set.iter().filter(|&&k| k > ix.key[x]).count();
        counts[lighter - 1] += 1;
    }
    counts
}

pub fn qualifying_count_distribution(
    inst: &LaminarInstance,
    p: f64,
    node: NodeId,
    given: ElementId,
    mode: EstimateMode,
) -> Result<QualifyingDistribution> {
    check_p(p)?;
    let b = inst.node_idx(node)?;
    let i = inst.elem_idx(given)?;
    let n = inst.len();
    let m = inst.index().capacity[b] as usize;
    let mut probabilities: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let trials = match mode {
        EstimateMode::Exact => {
            check_exact_size(inst)?;
            let others: Vec<usize> = (0..n).filter(|&e| e != i).collect();
            for mask in 0u32..(1 << others.len()) {
                let mut in_sample = vec![false; n];
                for (j, &e) in others.iter().enumerate() {
                    in_sample[e] = mask >> j & 1 == 1;
                }
                let sampled = mask.count_ones() as i32;
                let prob = (1.0 - p).powi(sampled) * p.powi(others.len() as i32 - sampled);
                let refs = ReferenceSets::build(inst, &in_sample, true);
                *probabilities
                    .entry(qualifying_counts(inst, &refs, b, i, &in_sample))
                    .or_insert(0.0) += prob;
            }
            None
        }
        EstimateMode::MonteCarlo { trials, seed } => {
            if trials == 0 {
                return Err(Error::OutOfRange {
                    name: "trials",
                    value: 0.0,
                    expected: "trials >= 1",
                });
            }
            let mut hits: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
            for t in 0..trials {
                let mut dense = draw_dense(n, p, trial_seed(seed, t));
                dense.in_sample[i] = false;
                let refs = ReferenceSets::build(inst, &dense.in_sample, true);
                *hits
                    .entry(qualifying_counts(inst, &refs, b, i, &dense.in_sample))
                    .or_insert(0) += 1;
            }
            probabilities = hits
                .into_iter()
                .map(|(k, h)| (k, h as f64 / trials as f64))
                .collect();
            Some(trials)
        }
    };
    Ok(QualifyingDistribution {
        node,
        given,
        m,
        probabilities,
        trials,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualifyingCheck {
    pub probability: f64,
    /// `p^(n_1 + … + n_m)`.
    pub bound: f64,
    pub std_err: Option<f64>,
}

/// `P(|N_1| = n_1 ∧ … ∧ |N_m| = n_m | i ∉ S)` next to `p^(Σ n_j)`.
pub fn qualifying_joint_probability(
    inst: &LaminarInstance,
    p: f64,
    node: NodeId,
    given: ElementId,
    counts: &[u32],
    mode: EstimateMode,
) -> Result<QualifyingCheck> {
    let dist = qualifying_count_distribution(inst, p, node, given, mode)?;
    if counts.len() != dist.m {
        return Err(Error::OutOfRange {
            name: "counts",
            value: counts.len() as f64,
            expected: "one count per slot of the padded reference set (μ(B) entries)",
        });
    }
    let total: u32 = counts.iter().sum();
    Ok(QualifyingCheck {
        probability: dist.probability(counts),
        bound: p.powi(total as i32),
        std_err: dist.std_err(counts),
    })
}

const G_LEMMA: &str = "g(m,B) <= 2c_1+...+2c_(m-1)+c_m+c_m c_(k-m)";
const G_WEAK: &str = "refined bound <= 2c/(1-c) m";
const WEIGHTED_LEMMA: &str = "sum_OPT w(i) sum_F(i) c^(1+brank) <= 2c/(1-c) w(OPT)";
const TELESCOPING: &str = "direct penalty == sum_l (w(x_l)-w(x_(l+1))) g(l,U)";
const BRANK_DOMINANCE: &str = "brank_S(i,B) >= brank(i,B), +1 for i in OPT(B) \\ S";
const QUALIFYING: &str = "P(|N_1|=n_1,...,|N_m|=n_m | i not in S) <= p^(n_1+...+n_m)";
const BRANK_STRICT: &str = "brank_S(i,B) >= brank(i,B)+1 for every i in T";

/// Exact g-lemma, weighted-lemma and telescoping checks on the normalized
/// instance, plus backward-rank dominance over `trials` sampled trials.
pub fn verify_lemmas(
    inst: &LaminarInstance,
    p: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<LemmaCheck>> {
    let params = theory::theory_params(p)?;
    let inst = inst.normalize_family();
    let ix = inst.index();
    let c = params.c;
    let table = PenaltyTable::new(&inst, c);
    let mut checks = Vec::new();
    let check = |name: &str, lemma, ok: bool, value, bound, detail: String| LemmaCheck {
        name: name.to_string(),
        lemma,
        status: if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        value,
        bound,
        std_err: None,
        detail,
    };

    if c >= 0.5 {
        for (name, lemma) in [
            ("g_lemma", G_LEMMA),
            ("g_refined_le_weak", G_WEAK),
            ("weighted_lemma", WEIGHTED_LEMMA),
        ] {
            checks.push(LemmaCheck {
                name: name.to_string(),
                lemma,
                status: CheckStatus::Skipped,
                value: f64::NAN,
                bound: f64::NAN,
                std_err: None,
                detail: format!("hypothesis not met: c = {c} >= 1/2"),
            });
        }
    } else {
        // Track the pair with the least slack; any negative slack is a failure.
        let mut worst = (f64::INFINITY, 0.0, 0.0, String::new());
        let mut worst_weak = (f64::INFINITY, 0.0, 0.0, String::new());
        for b in 0..ix.capacity.len() {
            let k = ix.capacity[b] as usize;
            for m in 0..=table.opt(b).len() {
                let g = table.g(m, b);
                let refined = g_refined_bound(m, k, c)?;
                let weak = g_weak_bound(m, c);
                let witness = format!("B={} m={m}", inst.node_id(b));
                if refined - g < worst.0 {
                    worst = (refined - g, g, refined, witness.clone());
                }
                if weak - refined < worst_weak.0 {
                    worst_weak = (weak - refined, refined, weak, witness);
                }
            }
        }
        let tol = |x: f64| TOLERANCE * x.abs().max(1.0);
        checks.push(check(
            "g_lemma",
            G_LEMMA,
            worst.0 >= -tol(worst.2),
            worst.1,
            worst.2,
            worst.3,
        ));
        checks.push(check(
            "g_refined_le_weak",
            G_WEAK,
            worst_weak.0 >= -tol(worst_weak.2),
            worst_weak.1,
            worst_weak.2,
            worst_weak.3,
        ));

        let opt = table.opt(ix.root);
        let w_opt: f64 = opt.iter().map(|&e| ix.weight[e]).fsum();
        let penalty: f64 = opt
            .iter()
            .map(|&e| ix.weight[e] * table.chain_sum(e, ix.root))
            .fsum();
        let bound = 2.0 * c / (1.0 - c) * w_opt;
        checks.push(check(
            "weighted_lemma",
            WEIGHTED_LEMMA,
            penalty <= bound + tol(bound),
            penalty,
            bound,
            String::new(),
        ));
    }

    let opt = table.opt(ix.root);
    let direct: f64 = opt
        .iter()
        .map(|&e| ix.weight[e] * table.chain_sum(e, ix.root))
        .fsum();
    let telescoped: f64 = (1..=opt.len())
        .map(|l| {
            let next = opt.get(l).map_or(0.0, |&x| ix.weight[x]);
            (ix.weight[opt[l - 1]] - next) * table.g(l, ix.root)
        })
        .fsum();
    let rel = (telescoped - direct).abs() / direct.abs().max(f64::MIN_POSITIVE);
    checks.push(check(
        "telescoping",
        TELESCOPING,
        rel <= 1e-9,
        telescoped,
        direct,
        format!("relative difference {rel:e}"),
    ));

    let true_opt = true_optima(ix);
    let mut violations = 0u64;
    let mut strict_misses = 0u64;
    let mut first_violation = String::new();
    let mut first_strict = String::new();
    for t in 0..trials {
        let dense = draw_dense(inst.len(), p, trial_seed(seed, t));
        for (b, opt_b) in true_opt.iter().enumerate() {
            let sample_opt = greedy_dense(ix, b, |e| dense.in_sample[e]);
            for e in (0..inst.len()).filter(|&e| ix.elem_in(e, b)) {
                let rank_s = brank_dense(ix, e, b, &sample_opt, true);
                let rank_u = brank_dense(ix, e, b, opt_b, true);
                let in_t = !dense.in_sample[e];
                let required = rank_u + usize::from(in_t && opt_b.contains(&e));
                let witness = || {
                    format!(
                        "trial {t}: i={} B={} brank_S={rank_s} brank={rank_u}",
                        inst.elem_id(e),
                        inst.node_id(b)
                    )
                };
                if rank_s < required {
                    violations += 1;
                    if first_violation.is_empty() {
                        first_violation = witness();
                    }
                }
                if in_t && rank_s < rank_u + 1 {
                    strict_misses += 1;
                    if first_strict.is_empty() {
                        first_strict = witness();
                    }
                }
            }
        }
    }
    checks.push(check(
        "brank_dominance",
        BRANK_DOMINANCE,
        violations == 0,
        violations as f64,
        0.0,
        first_violation,
    ));
    checks.push(LemmaCheck {
        name: "brank_strict_all_t".to_string(),
        lemma: BRANK_STRICT,
        status: CheckStatus::Info,
        value: strict_misses as f64,
        bound: 0.0,
        std_err: None,
        detail: if strict_misses == 0 {
            String::new()
        } else {
            format!("counterexample: {first_strict}")
        },
    });
    checks.push(qualifying_check(&inst, p)?);
    Ok(checks)
}

/// Every exact joint probability `P(|N_1| = n_1, …, |N_m| = n_m | i ∉ S)`
/// against `p^(n_1 + … + n_m)`, over all nodes `B` and elements `i ∈ B`.
/// Skipped above [`EXACT_LIMIT`] elements.
pub fn qualifying_check(inst: &LaminarInstance, p: f64) -> Result<LemmaCheck> {
    check_p(p)?;
    if inst.len() > EXACT_LIMIT {
        return Ok(LemmaCheck {
            name: "qualifying_exact".to_string(),
            lemma: QUALIFYING,
            status: CheckStatus::Skipped,
            value: f64::NAN,
            bound: f64::NAN,
            std_err: None,
            detail: format!("more than {EXACT_LIMIT} elements"),
        });
    }
    // Least slack bound - probability over all events.
    let mut worst = (f64::INFINITY, 0.0, 0.0, String::new());
    for node in inst.nodes() {
        for given in inst.members(node.id)? {
            let dist = qualifying_count_distribution(inst, p, node.id, given, EstimateMode::Exact)?;
            for (counts, &prob) in &dist.probabilities {
                let bound = p.powi(counts.iter().sum::<u32>() as i32);
                if bound - prob < worst.0 {
                    worst = (
                        bound - prob,
                        prob,
                        bound,
                        format!("B={} i={given} n={counts:?}", node.id),
                    );
                }
            }
        }
    }
    let ok = worst.0 >= -1e-12;
    Ok(LemmaCheck {
        name: "qualifying_exact".to_string(),
        lemma: QUALIFYING,
        status: if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        value: worst.1,
        bound: worst.2,
        std_err: None,
        detail: worst.3,
    })
}

/// One CSV row of a report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub check_name: String,
    pub instance: String,
    pub p: f64,
    pub value: f64,
    pub bound_or_reference: Option<f64>,
    pub std_err: Option<f64>,
    pub pass: String,
}

/// One-sided statistical slack, in standard errors, for the ratio-vs-guarantee row.
pub const RATIO_SIGMAS: f64 = 3.0;
/// One-sided statistical slack, in standard errors, for `AllKicked` rows.
pub const ALLKICKED_SIGMAS: f64 = 4.0;

impl ExperimentReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        let bound = theory::ratio_lower_bound(self.p).ok();
        let status = match bound {
            Some(b) if self.padding => {
                if self.ratio >= b - RATIO_SIGMAS * self.std_err {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                }
            }
            _ => CheckStatus::Info,
        };
        rows.push(ReportRow {
            check_name: "ratio_vs_guarantee".to_string(),
            instance: self.instance.clone(),
            p: self.p,
            value: self.ratio,
            bound_or_reference: bound,
            std_err: Some(self.std_err),
            pass: status.to_string(),
        });
        for r in &self.allkicked {
            let status = match r.bound {
                Some(b) if r.conditioned > 0 => {
                    if r.frequency <= b + ALLKICKED_SIGMAS * r.std_err {
                        CheckStatus::Pass
                    } else {
                        CheckStatus::Fail
                    }
                }
                _ => CheckStatus::Info,
            };
            rows.push(ReportRow {
                check_name: format!("allkicked[i={},B={}]", r.element, r.node),
                instance: self.instance.clone(),
                p: self.p,
                value: r.frequency,
                bound_or_reference: r.bound,
                std_err: Some(r.std_err),
                pass: status.to_string(),
            });
        }
        rows.extend(lemma_rows(&self.instance, self.p, &self.checks));
        rows
    }

    pub fn passed(&self) -> bool {
        self.rows().iter().all(|r| r.pass != "false")
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "instance {}: p = {}, trials = {}, seed = {}, padding = {}\n  E[w(SOL)]/w(OPT) = {:.6} (SE {:.6})",
            self.instance, self.p, self.trials, self.master_seed, self.padding, self.ratio, self.std_err
        );
        if let Ok(b) = theory::ratio_lower_bound(self.p) {
            s += &format!(", guaranteed lower bound {b:.6}");
        }
        let failing = self.rows().iter().filter(|r| r.pass == "false").count();
        s += &format!(
            "\n  {} AllKicked pairs tracked, {failing} failing rows",
            self.allkicked.len()
        );
        s
    }
}

pub fn lemma_rows(instance: &str, p: f64, checks: &[LemmaCheck]) -> Vec<ReportRow> {
    checks
        .iter()
        .map(|c| ReportRow {
            check_name: c.name.clone(),
            instance: instance.to_string(),
            p,
            value: c.value,
            bound_or_reference: Some(c.bound).filter(|b| !b.is_nan()),
            std_err: c.std_err,
            pass: c.status.to_string(),
        })
        .collect()
}

/// CSV with columns `check_name,instance,p,value,bound_or_reference,std_err,pass`.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "check_name",
            "instance",
            "p",
            "value",
            "bound_or_reference",
            "std_err",
            "pass",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{four_element, path};
    use crate::model::{Element, FamilyNode};

    fn uniform(weights: &[f64], k: u32) -> LaminarInstance {
        let elements = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| Element::real(i as u64, w))
            .collect();
        let membership = (0..weights.len())
            .map(|i| (ElementId(i as u64), NodeId(0)))
            .collect();
        LaminarInstance::new(
            "uniform",
            elements,
            vec![FamilyNode::new(0, k, None)],
            membership,
        )
        .unwrap()
    }

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut whole = RunningStats::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut merged = RunningStats::default();
        for chunk in xs.chunks(64) {
            let mut part = RunningStats::default();
            chunk.iter().for_each(|&x| part.push(x));
            merged.merge(&part);
        }
        assert_eq!(merged.count, whole.count);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.std_dev() - whole.std_dev()).abs() < 1e-12);
    }

    #[test]
    fn heap_permutations_are_complete() {
        let mut items = vec![0, 1, 2, 3];
        let mut seen = std::collections::BTreeSet::new();
        for_each_permutation(&mut items, |p| {
            seen.insert(p.to_vec());
        });
        assert_eq!(seen.len(), 24);
        let mut empty: Vec<usize> = Vec::new();
        let mut calls = 0;
        for_each_permutation(&mut empty, |_| calls += 1);
        assert_eq!(calls, 1);
    }

    #[test]
    fn exact_single_element_is_p() {
        let inst = path(&[1]);
        for p in [0.05, 0.08, 0.5, 0.9] {
            let r = exact_ratio(&inst, p, true).unwrap();
            assert!((r.ratio - p).abs() < 1e-12);
            assert!((r.total_probability - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_two_element_rank_one_by_hand() {
        // Weights {1, 2}, rank 1, padding on. The heavy element h is selected iff h ∈ T and
        // not (l ∈ T, l arrives first, and R = {pad}). l is selected iff l ∈ T, R = {pad}, and
        // (h ∈ S impossible since then R = {h}) ... so only when both are in T and l arrives first.
        // E[w] = 2·p·((1 − p) + p/2) + 1·p²/2.
        let inst = uniform(&[1.0, 2.0], 1);
        for p in [0.05, 0.08, 0.2, 0.7] {
            let expect = (2.0 * p * ((1.0 - p) + p / 2.0) + p * p / 2.0) / 2.0;
            let r = exact_ratio(&inst, p, true).unwrap();
            assert!(
                (r.ratio - expect).abs() < 1e-12,
                "p={p}: {} vs {expect}",
                r.ratio
            );
        }
    }

    #[test]
    fn exact_guard() {
        let inst = uniform(&[1.0; 9], 2);
        assert!(matches!(
            exact_ratio(&inst, 0.1, true),
            Err(Error::TooLarge { size: 9, .. })
        ));
    }

    #[test]
    fn exact_near_one_is_first_arrival_behaviour() {
        // p -> 1: everything arrives, padding only; rank 1 keeps the first arrival.
        let inst = uniform(&[1.0, 2.0, 3.0], 1);
        let r = exact_ratio(&inst, 1.0 - 1e-12, true).unwrap();
        assert!((r.ratio - 2.0 / 3.0).abs() < 1e-9, "{}", r.ratio);
    }

    #[test]
    fn monte_carlo_is_reproducible_and_thread_independent() {
        let inst = four_element();
        let a = monte_carlo_ratio(
            &inst,
            0.3,
            5000,
            11,
            &McConfig {
                padding: true,
                jobs: Some(1),
            },
        )
        .unwrap();
        let b = monte_carlo_ratio(
            &inst,
            0.3,
            5000,
            11,
            &McConfig {
                padding: true,
                jobs: Some(4),
            },
        )
        .unwrap();
        assert_eq!(a, b);
        let one = monte_carlo_ratio(&inst, 0.3, 1, 5, &McConfig::default()).unwrap();
        assert_eq!(
            one,
            monte_carlo_ratio(&inst, 0.3, 1, 5, &McConfig::default()).unwrap()
        );
        assert_eq!(one.std_err, 0.0);
        assert!(monte_carlo_ratio(&inst, 0.3, 0, 5, &McConfig::default()).is_err());
    }

    #[test]
    fn monte_carlo_two_element_against_exact() {
        let inst = uniform(&[1.0, 2.0], 1);
        let exact = exact_ratio(&inst, 0.08, true).unwrap().ratio;
        let mc = monte_carlo_ratio(&inst, 0.08, 100_000, 3, &McConfig::default()).unwrap();
        assert!(
            (mc.ratio - exact).abs() <= 3.0 * mc.std_err,
            "{} vs {exact} (se {})",
            mc.ratio,
            mc.std_err
        );
    }

    #[test]
    fn allkicked_on_two_elements() {
        let inst = uniform(&[1.0, 2.0], 1);
        let rows = allkicked_frequency(&inst, 0.08, 100_000, 1, &McConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.element, ElementId(1));
        assert_eq!(r.brank, 0);
        // Only trials with the heavy element in T count: about p·trials of them.
        assert!(
            r.conditioned > 7_000 && r.conditioned < 9_000,
            "{}",
            r.conditioned
        );
        // Exact conditional probability: light element in T and earlier, p/2.
        assert!((r.frequency - 0.04).abs() <= 4.0 * r.std_err);
        assert!(r.frequency <= r.bound.unwrap() + 3.0 * r.std_err);
    }

    #[test]
    fn allkicked_bounds_shrink_with_brank() {
        let inst = uniform(&[1.0, 2.0, 3.0, 4.0], 3);
        let rows = allkicked_frequency(&inst, 0.08, 2000, 1, &McConfig::default()).unwrap();
        let c = theory::theory_params(0.08).unwrap().c;
        let by_rank: BTreeMap<usize, f64> =
            rows.iter().map(|r| (r.brank, r.bound.unwrap())).collect();
        assert_eq!(by_rank.len(), 3);
        for d in 0..2 {
            assert!((by_rank[&(d + 1)] - c * by_rank[&d]).abs() < 1e-15);
        }
    }

    #[test]
    fn qualifying_all_zero_counts() {
        let inst = uniform(&[1.0, 2.0, 3.0], 1);
        let q = qualifying_joint_probability(
            &inst,
            0.08,
            NodeId(0),
            ElementId(2),
            &[0],
            EstimateMode::Exact,
        )
        .unwrap();
        assert_eq!(q.bound, 1.0);
        assert!(q.probability <= 1.0);
    }

    #[test]
    fn qualifying_rank_one_three_elements() {
        let inst = uniform(&[1.0, 2.0, 3.0], 1);
        for given in 0..3 {
            let dist = qualifying_count_distribution(
                &inst,
                0.08,
                NodeId(0),
                ElementId(given),
                EstimateMode::Exact,
            )
            .unwrap();
            let total: f64 = dist.probabilities.values().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (counts, &prob) in &dist.probabilities {
                let bound = 0.08f64.powi(counts.iter().sum::<u32>() as i32);
                assert!(
                    prob <= bound + 1e-12,
                    "given {given}, counts {counts:?}: {prob} > {bound}"
                );
            }
            let q = qualifying_joint_probability(
                &inst,
                0.08,
                NodeId(0),
                ElementId(given),
                &[1],
                EstimateMode::Exact,
            )
            .unwrap();
            assert!(q.probability <= 0.08 + 1e-12);
        }
        assert!(qualifying_joint_probability(
            &inst,
            0.08,
            NodeId(0),
            ElementId(0),
            &[1, 0],
            EstimateMode::Exact
        )
        .is_err());
    }

    #[test]
    fn qualifying_monte_carlo_agrees_with_exact() {
        let inst = four_element();
        let exact =
            qualifying_count_distribution(&inst, 0.3, NodeId(0), ElementId(2), EstimateMode::Exact)
                .unwrap();
        let mc = qualifying_count_distribution(
            &inst,
            0.3,
            NodeId(0),
            ElementId(2),
            EstimateMode::MonteCarlo {
                trials: 50_000,
                seed: 9,
            },
        )
        .unwrap();
        for (counts, &p) in &exact.probabilities {
            let se = mc.std_err(counts).unwrap().max(1e-4);
            assert!((mc.probability(counts) - p).abs() <= 4.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn verify_on_documented_example() {
        let checks = verify_lemmas(&four_element(), 0.08, 200, 1).unwrap();
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
        assert!(checks
            .iter()
            .any(|c| c.name == "g_lemma" && c.status == CheckStatus::Pass));
    }

    #[test]
    fn verify_skips_when_c_too_large() {
        let checks = verify_lemmas(&four_element(), 0.2, 10, 1).unwrap();
        let g = checks.iter().find(|c| c.name == "g_lemma").unwrap();
        assert_eq!(g.status, CheckStatus::Skipped);
        assert!(g.detail.contains("hypothesis not met"));
        assert!(verify_lemmas(&four_element(), 0.5, 10, 1).is_err());
    }

    #[test]
    fn strict_brank_form_has_counterexamples() {
        // Rank 1, weights {1, 2}: S = {heavy}, light in T gives brank_S = 0 = brank.
        let inst = uniform(&[1.0, 2.0], 1);
        let checks = verify_lemmas(&inst, 0.4, 200, 3).unwrap();
        let strict = checks
            .iter()
            .find(|c| c.name == "brank_strict_all_t")
            .unwrap();
        assert_eq!(strict.status, CheckStatus::Info);
        assert!(strict.value > 0.0);
        assert!(checks
            .iter()
            .find(|c| c.name == "brank_dominance")
            .unwrap()
            .passed());
    }

    #[test]
    fn report_csv_layout() {
        let inst = four_element();
        let report = monte_carlo_ratio(&inst, 0.08, 2000, 1, &McConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&report.rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check_name,instance,p,value,bound_or_reference,std_err,pass\nratio_vs_guarantee,four,0.08,"));
        assert_eq!(text.lines().count(), 1 + 1 + report.allkicked.len());
    }

    #[test]
    fn trial_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> =
            (0..10_000).map(|t| trial_seed(42, t)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(trial_seed(1, 0), trial_seed(2, 0));
    }
}
