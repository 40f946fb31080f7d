//! The implication decision and its surrounding analyses.
//!
//! For a class pair `(i, j)`, [`bound_pair`] computes a certified
//! sandwich on the true log relative prediction ratio over the region:
//! the joint LP minimum is a lower bound, and the negated minimum with
//! the networks' roles swapped is an upper bound (the swapped program
//! minimizes the negated objective over the same feasible set, and both
//! directions of the relaxation only enlarge it).
//!
//! [`verify_implication`] applies the decision rule: the second network's
//! correct decisions imply the first's over the whole region when, for
//! the ground-truth class `c`, the lower bound is at or above the
//! threshold for every pair `(c, j)` - and every solve actually certified.
//! Bounds that failed to certify make the answer "not established",
//! never "established": all failure modes degrade toward refusing to
//! certify.
//!
//! [`compare_independent`] quantifies what the shared input columns buy
//! over analyzing each network alone, and [`chain_transitivity`] measures
//! - rather than assumes - whether established implications compose along
//! a chain of networks.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bounds::{propagate_intervals, refine_bounds_lp, BoundsMap, InputRegion};
use crate::lpsolve::{solve, verify_solution_with, LpStatus, SolveOptions};
use crate::model::{argmax, check_compatible, ClassPair, Network};
use crate::relax::{build_joint_lp_with, BuildOptions, ProblemVariant};
use crate::{Error, Result};

/// How per-neuron bounds are obtained before lowering to the LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// Interval propagation only.
    Interval,
    /// Interval propagation tightened by per-neuron LP solves.
    LpRefined,
}

/// Options shared by every bound computation.
#[derive(Debug, Clone)]
pub struct BoundOptions {
    pub method: BoundMethod,
    pub solve: SolveOptions,
    pub build: BuildOptions,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions {
            method: BoundMethod::Interval,
            solve: SolveOptions::default(),
            build: BuildOptions::default(),
        }
    }
}

impl BoundOptions {
    pub fn bounds_for(&self, net: &Network, region: &InputRegion) -> Result<BoundsMap> {
        let coarse = propagate_intervals(net, region)?;
        match self.method {
            BoundMethod::Interval => Ok(coarse),
            BoundMethod::LpRefined => Ok(refine_bounds_lp(net, region, &coarse)?.0),
        }
    }
}

/// Certified two-sided bound for one class pair. A side is `None` when
/// its solve did not certify (`status` tells why); a present value is a
/// sound bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBound {
    pub pair: ClassPair,
    /// Lower bound on the true log relative prediction ratio.
    pub lower: Option<f64>,
    /// Upper bound; meaningful for the joint-margin variant.
    pub upper: Option<f64>,
    pub forward_status: LpStatus,
    pub reverse_status: LpStatus,
    pub wall_ms: f64,
}

/// One direction of [`bound_pair`]: minimize the variant objective for
/// (`first`, `second`) and return the certified objective, if any.
fn solve_direction(
    first: &Network,
    second: &Network,
    region: &InputRegion,
    pair: ClassPair,
    variant: ProblemVariant,
    bounds_first: &BoundsMap,
    bounds_second: &BoundsMap,
    opts: &BoundOptions,
) -> Result<(Option<f64>, LpStatus)> {
    let (lp, _) = build_joint_lp_with(
        first,
        second,
        region,
        pair,
        bounds_first,
        bounds_second,
        variant,
        &opts.build,
    )?;
    let sol = solve(&lp, &opts.solve)?;
    let certified = sol.status == LpStatus::Optimal
        && verify_solution_with(&lp, &sol, opts.solve.feas_tol).bound_certified;
    Ok((certified.then_some(sol.objective), sol.status))
}

/// Bound the log relative prediction ratio of `net1` against `net2` over
/// the region for one class pair: `lower` from the (net1, net2) program,
/// `upper` as the negated optimum of the role-swapped program. Either side
/// may be unavailable; the other remains valid on its own.
pub fn bound_pair(
    net1: &Network,
    net2: &Network,
    region: &InputRegion,
    pair: ClassPair,
    variant: ProblemVariant,
    opts: &BoundOptions,
) -> Result<PairBound> {
    check_compatible(net1, net2)?;
    let bounds1 = opts.bounds_for(net1, region)?;
    let bounds2 = opts.bounds_for(net2, region)?;
    bound_pair_with_bounds(net1, net2, region, pair, variant, opts, &bounds1, &bounds2)
}

/// [`bound_pair`] with the per-network bounds precomputed, so callers
/// looping over class pairs propagate them once.
#[allow(clippy::too_many_arguments)]
pub fn bound_pair_with_bounds(
    net1: &Network,
    net2: &Network,
    region: &InputRegion,
    pair: ClassPair,
    variant: ProblemVariant,
    opts: &BoundOptions,
    bounds1: &BoundsMap,
    bounds2: &BoundsMap,
) -> Result<PairBound> {
    let started = Instant::now();
    let (lower, forward_status) =
        solve_direction(net1, net2, region, pair, variant, bounds1, bounds2, opts)?;
    let (reverse, reverse_status) =
        solve_direction(net2, net1, region, pair, variant, bounds2, bounds1, opts)?;
    Ok(PairBound {
        pair,
        lower,
        upper: reverse.map(|v| -v),
        forward_status,
        reverse_status,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Decision record for one sample. `implied` holds exactly when every
/// pair's lower bound certified at or above the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicationReport {
    pub sample_id: String,
    /// Ground-truth class; `None` when the sample carried no label and
    /// was therefore skipped.
    pub correct_class: Option<usize>,
    pub delta: f64,
    pub threshold: f64,
    pub variant: ProblemVariant,
    /// Set when the sample was not analyzed (center misclassified, or no
    /// label); `implied` is then false and `pair_bounds` empty.
    pub skipped: Option<String>,
    pub pair_bounds: Vec<PairBound>,
    pub implied: bool,
    pub wall_ms: f64,
}

/// Options for [`verify_implication`].
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Every pair's lower bound must reach this for `implied` (0 = the
    /// second network's correct decisions are never degraded).
    pub threshold: f64,
    pub variant: ProblemVariant,
    /// Analyze samples whose center either network misclassifies, instead
    /// of skipping them.
    pub allow_misclassified: bool,
    pub bound: BoundOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            threshold: 0.0,
            variant: ProblemVariant::JointMargin,
            allow_misclassified: false,
            bound: BoundOptions::default(),
        }
    }
}

/// Decide whether `net2`'s correct classifications imply `net1`'s over
/// the delta-region around `center`: for the true class `c`, bound every
/// pair `(c, j)` and require certified lower bounds at or above the
/// threshold. Samples misclassified at the center are skipped (not
/// analyzed, not implied) unless `allow_misclassified` is set.
pub fn verify_implication(
    net1: &Network,
    net2: &Network,
    sample_id: &str,
    center: &[f64],
    label: usize,
    delta: f64,
    opts: &VerifyOptions,
) -> Result<ImplicationReport> {
    let started = Instant::now();
    check_compatible(net1, net2)?;
    if label >= net1.num_classes() {
        return Err(Error::ClassPair(format!(
            "label {label} out of range for {} classes (sample `{sample_id}`)",
            net1.num_classes()
        )));
    }
    let region = InputRegion::new(center.to_vec(), delta)?;

    let mut report = ImplicationReport {
        sample_id: sample_id.to_string(),
        correct_class: Some(label),
        delta,
        threshold: opts.threshold,
        variant: opts.variant,
        skipped: None,
        pair_bounds: Vec::new(),
        implied: false,
        wall_ms: 0.0,
    };

    if !opts.allow_misclassified {
        for (name, net) in [("first", net1), ("second", net2)] {
            let predicted = argmax(&net.forward(center)?);
            if predicted != label {
                report.skipped = Some(format!(
                    "{name} network `{}` predicts class {predicted} at the center, label is {label}",
                    net.name
                ));
                report.wall_ms = started.elapsed().as_secs_f64() * 1e3;
                return Ok(report);
            }
        }
    }

    let bounds1 = opts.bound.bounds_for(net1, &region)?;
    let bounds2 = opts.bound.bounds_for(net2, &region)?;
    let mut implied = true;
    for j in 0..net1.num_classes() {
        if j == label {
            continue;
        }
        let pb = bound_pair_with_bounds(
            net1,
            net2,
            &region,
            ClassPair::new(label, j)?,
            opts.variant,
            &opts.bound,
            &bounds1,
            &bounds2,
        )?;
        implied &= pb.lower.is_some_and(|l| l >= opts.threshold);
        report.pair_bounds.push(pb);
    }
    report.implied = implied;
    report.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// Joint versus per-network analysis for one class pair. All four numbers
/// are certified bounds; `Err` if any solve fails to certify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentComparison {
    pub pair: ClassPair,
    pub min_joint: f64,
    pub max_joint: f64,
    /// Sum of the two single-network minima; never above `min_joint`.
    pub min_independent: f64,
    pub max_independent: f64,
    /// `(1 - range_joint / range_independent) * 100`; 0 when the
    /// independent range is degenerate.
    pub improvement_pct: f64,
}

/// How much the shared input columns tighten the bound sandwich compared
/// to bounding each network separately and adding the results.
pub fn compare_independent(
    net1: &Network,
    net2: &Network,
    region: &InputRegion,
    pair: ClassPair,
    opts: &BoundOptions,
) -> Result<IndependentComparison> {
    check_compatible(net1, net2)?;
    let bounds1 = opts.bounds_for(net1, region)?;
    let bounds2 = opts.bounds_for(net2, region)?;
    let run = |first: &Network,
               second: &Network,
               bf: &BoundsMap,
               bs: &BoundsMap,
               pair: ClassPair,
               variant: ProblemVariant|
     -> Result<f64> {
        let (value, status) = solve_direction(first, second, region, pair, variant, bf, bs, opts)?;
        value.ok_or_else(|| {
            Error::Solver(format!(
                "uncertified {variant:?} solve (status {status:?}) for pair ({}, {})",
                pair.i, pair.j
            ))
        })
    };

    let min_joint = run(net1, net2, &bounds1, &bounds2, pair, ProblemVariant::JointMargin)?;
    let max_joint = -run(
        net2,
        net1,
        &bounds2,
        &bounds1,
        pair,
        ProblemVariant::JointMargin,
    )?;
    let ind1 = run(
        net1,
        net2,
        &bounds1,
        &bounds2,
        pair,
        ProblemVariant::IndependentNet1,
    )?;
    let ind2 = run(
        net1,
        net2,
        &bounds1,
        &bounds2,
        pair,
        ProblemVariant::IndependentNet2,
    )?;
    let sw = pair.swapped();
    let ind1_up = run(
        net1,
        net2,
        &bounds1,
        &bounds2,
        sw,
        ProblemVariant::IndependentNet1,
    )?;
    let ind2_up = run(
        net1,
        net2,
        &bounds1,
        &bounds2,
        sw,
        ProblemVariant::IndependentNet2,
    )?;

    let min_independent = ind1 + ind2;
    let max_independent = -(ind1_up + ind2_up);
    let range_joint = max_joint - min_joint;
    let range_independent = max_independent - min_independent;
    let improvement_pct = if range_independent > 0.0 {
        (1.0 - range_joint / range_independent) * 100.0
    } else {
        0.0
    };
    Ok(IndependentComparison {
        pair,
        min_joint,
        max_joint,
        min_independent,
        max_independent,
        improvement_pct,
    })
}

/// One pair's transitivity audit over a chain of networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub pair: ClassPair,
    /// `adjacent_lowers[k]` bounds network k against network k+1.
    pub adjacent_lowers: Vec<Option<f64>>,
    /// Bound of the first network against the last.
    pub end_to_end_lower: Option<f64>,
    /// All adjacent lower bounds certified and non-negative. `None` when
    /// some adjacent bound is unavailable.
    pub premise_holds: Option<bool>,
    pub conclusion_holds: Option<bool>,
    /// Premise established but conclusion not: composition failed on
    /// relaxed bounds. Recorded, never asserted away.
    pub counterexample: bool,
}

/// Audit whether established adjacent implications compose: for each
/// pair, bound every adjacent network pair along the chain and the
/// end-to-end pair, and record whether non-negative adjacent bounds came
/// with a non-negative end-to-end bound. Composition provably holds for
/// the exact minima; for the relaxed bounds computed here it is an
/// empirical question, hence an audit rather than an assertion.
pub fn chain_transitivity(
    nets: &[Network],
    region: &InputRegion,
    pairs: &[ClassPair],
    opts: &BoundOptions,
) -> Result<Vec<ChainReport>> {
    if nets.len() < 3 {
        return Err(Error::Incompatible(format!(
            "a transitivity chain needs at least 3 networks, got {}",
            nets.len()
        )));
    }
    for w in nets.windows(2) {
        check_compatible(&w[0], &w[1])?;
    }
    let bounds: Vec<BoundsMap> = nets
        .iter()
        .map(|n| opts.bounds_for(n, region))
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(pairs.len());
    for &pair in pairs {
        let mut adjacent_lowers = Vec::with_capacity(nets.len() - 1);
        for k in 0..nets.len() - 1 {
            let (value, _) = solve_direction(
                &nets[k],
                &nets[k + 1],
                region,
                pair,
                ProblemVariant::JointMargin,
                &bounds[k],
                &bounds[k + 1],
                opts,
            )?;
            adjacent_lowers.push(value);
        }
        let (end_to_end_lower, _) = solve_direction(
            &nets[0],
            &nets[nets.len() - 1],
            region,
            pair,
            ProblemVariant::JointMargin,
            &bounds[0],
            &bounds[nets.len() - 1],
            opts,
        )?;
        let premise_holds = if adjacent_lowers.iter().any(|v| v.is_none()) {
            None
        } else {
            Some(adjacent_lowers.iter().all(|v| v.unwrap() >= 0.0))
        };
        let conclusion_holds = end_to_end_lower.map(|v| v >= 0.0);
        let counterexample =
            premise_holds == Some(true) && conclusion_holds == Some(false);
        reports.push(ChainReport {
            pair,
            adjacent_lowers,
            end_to_end_lower,
            premise_holds,
            conclusion_holds,
            counterexample,
        });
    }
    Ok(reports)
}
