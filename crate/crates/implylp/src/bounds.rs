//! Input regions and per-neuron activation bounds.
//!
//! An [`InputRegion`] is an l-infinity ball around a center point,
//! optionally clipped to a valid input domain. [`propagate_intervals`]
//! pushes the region's box through a network with interval arithmetic,
//! producing a [`BoundsMap`] with sound lower/upper bounds for every
//! neuron; these drive the phase decisions and relaxation coefficients of
//! the LP lowering. [`refine_bounds_lp`] optionally tightens the interval
//! bounds by minimizing/maximizing each pre-activation subject to the
//! relaxation of everything upstream.
//!
//! Phase classification applies a slack of [`PHASE_SLACK`] so that a bound
//! that is only positive (or negative) by roundoff is still treated as
//! unstable; misreading an unstable neuron as fixed-phase would make the
//! relaxation unsound, while the reverse only costs precision.

use crate::model::{Layer, Network};
use crate::{Error, Result};

/// Slack applied to propagated bounds before deciding a neuron's phase.
pub const PHASE_SLACK: f64 = 1e-9;

/// An l-infinity ball of radius `delta` around `center`, optionally
/// intersected with a per-coordinate domain box.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRegion {
    center: Vec<f64>,
    delta: f64,
    domain_low: Option<Vec<f64>>,
    domain_high: Option<Vec<f64>>,
}

impl InputRegion {
    /// Region with no domain clipping.
    pub fn new(center: Vec<f64>, delta: f64) -> Result<Self> {
        Self::with_domain(center, delta, None, None)
    }

    /// Region clipped to `[domain_low, domain_high]`. The center must lie
    /// inside the domain and the domain must be elementwise ordered.
    pub fn with_domain(
        center: Vec<f64>,
        delta: f64,
        domain_low: Option<Vec<f64>>,
        domain_high: Option<Vec<f64>>,
    ) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::Region("empty center".into()));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::Region("center has non-finite entries".into()));
        }
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::Region(format!(
                "radius must be finite and non-negative, got {delta}"
            )));
        }
        for (name, dom) in [("domain_low", &domain_low), ("domain_high", &domain_high)] {
            if let Some(d) = dom {
                if d.len() != center.len() {
                    return Err(Error::Region(format!(
                        "{name} has {} entries but center has {}",
                        d.len(),
                        center.len()
                    )));
                }
                if d.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Region(format!("{name} has non-finite entries")));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (&domain_low, &domain_high) {
            if lo.iter().zip(hi).any(|(l, h)| l > h) {
                return Err(Error::Region("domain_low exceeds domain_high".into()));
            }
        }
        for (i, c) in center.iter().enumerate() {
            let lo = domain_low.as_ref().map_or(f64::NEG_INFINITY, |d| d[i]);
            let hi = domain_high.as_ref().map_or(f64::INFINITY, |d| d[i]);
            if *c < lo || *c > hi {
                return Err(Error::Region(format!(
                    "center[{i}] = {c} lies outside the domain [{lo}, {hi}]"
                )));
            }
        }
        Ok(InputRegion {
            center,
            delta,
            domain_low,
            domain_high,
        })
    }

    /// The same region with a different radius.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::with_domain(
            self.center.clone(),
            delta,
            self.domain_low.clone(),
            self.domain_high.clone(),
        )
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// The concrete box: `center - delta` / `center + delta`, clipped to the
    /// domain. Construction guarantees the box is non-empty, but the result
    /// is re-checked defensively.
    pub fn region_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.center.len();
        let mut low = Vec::with_capacity(n);
        let mut high = Vec::with_capacity(n);
        for i in 0..n {
            let mut lo = self.center[i] - self.delta;
            let mut hi = self.center[i] + self.delta;
            if let Some(d) = &self.domain_low {
                lo = lo.max(d[i]);
            }
            if let Some(d) = &self.domain_high {
                hi = hi.min(d[i]);
            }
            if lo > hi {
                return Err(Error::Region(format!(
                    "coordinate {i} has empty range [{lo}, {hi}] after domain clipping"
                )));
            }
            low.push(lo);
            high.push(hi);
        }
        Ok((low, high))
    }
}

/// Phase of a ReLU input interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronPhase {
    /// The pre-activation is certainly non-negative: the unit is identity.
    Active,
    /// The pre-activation is certainly non-positive: the unit is zero.
    Inactive,
    /// The interval straddles zero (or is too close to call).
    Unstable,
}

/// Classify a pre-activation interval, applying [`PHASE_SLACK`].
pub fn classify_phase(low: f64, high: f64) -> NeuronPhase {
    if low >= PHASE_SLACK {
        NeuronPhase::Active
    } else if high <= -PHASE_SLACK {
        NeuronPhase::Inactive
    } else {
        NeuronPhase::Unstable
    }
}

/// Elementwise lower/upper bounds for one value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl LayerBounds {
    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    fn check_ordered(&self, what: &str) -> Result<()> {
        for (i, (l, h)) in self.low.iter().zip(&self.high).enumerate() {
            if !(l <= h) {
                return Err(Error::Numeric(format!(
                    "{what}: bounds inverted at neuron {i}: [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }
}

/// Sound per-layer bounds for one network over one region.
///
/// `layers[k]` bounds the *output* of layer `k`; the bounds on a layer's
/// input (its pre-activation, for ReLU and pooling layers) are the previous
/// layer's output bounds, exposed via [`BoundsMap::pre`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsMap {
    pub input: LayerBounds,
    pub layers: Vec<LayerBounds>,
}

impl BoundsMap {
    /// Bounds on the input of layer `k`.
    pub fn pre(&self, k: usize) -> &LayerBounds {
        if k == 0 {
            &self.input
        } else {
            &self.layers[k - 1]
        }
    }

    /// Bounds on the output of layer `k`.
    pub fn post(&self, k: usize) -> &LayerBounds {
        &self.layers[k]
    }

    /// Bounds on the logits.
    pub fn logits(&self) -> &LayerBounds {
        self.layers.last().expect("bounds for a validated network")
    }
}

/// Propagate the region's box through the network with interval
/// arithmetic. The returned bounds contain every exact execution of the
/// network on points of the region (up to roundoff; the phase slack absorbs
/// the difference where it matters).
pub fn propagate_intervals(net: &Network, region: &InputRegion) -> Result<BoundsMap> {
    if region.dim() != net.input_len() {
        return Err(Error::Shape(format!(
            "region has {} coordinates but network `{}` takes {}",
            region.dim(),
            net.name,
            net.input_len()
        )));
    }
    let (low, high) = region.region_box()?;
    let input = LayerBounds { low, high };
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut cur = &input;
    for layer in &net.layers {
        let next = interval_layer(layer, cur);
        layers.push(next);
        cur = layers.last().unwrap();
    }
    let map = BoundsMap { input, layers };
    for (k, lb) in map.layers.iter().enumerate() {
        lb.check_ordered(&format!("layer {k}"))?;
    }
    Ok(map)
}

/// Interval transfer function of a single layer. Affine layers accumulate
/// in the same order as [`Layer::forward`], so a zero-width input interval
/// propagates to the exact forward values bit for bit.
fn interval_layer(layer: &Layer, input: &LayerBounds) -> LayerBounds {
    let (ilo, ihi) = (&input.low, &input.high);
    match layer {
        Layer::Dense {
            weights,
            bias,
            in_features,
            out_features,
        } => {
            let mut low = Vec::with_capacity(*out_features);
            let mut high = Vec::with_capacity(*out_features);
            for i in 0..*out_features {
                let row = &weights[i * in_features..(i + 1) * in_features];
                let (mut lo, mut hi) = (bias[i], bias[i]);
                for (j, w) in row.iter().enumerate() {
                    if *w >= 0.0 {
                        lo += w * ilo[j];
                        hi += w * ihi[j];
                    } else {
                        lo += w * ihi[j];
                        hi += w * ilo[j];
                    }
                }
                low.push(lo);
                high.push(hi);
            }
            LayerBounds { low, high }
        }
        Layer::Conv2d {
            kernel,
            bias,
            input_shape,
            out_channels,
            kernel_h,
            kernel_w,
            stride_h,
            stride_w,
        } => {
            let [ci_n, h, w] = *input_shape;
            let oh = (h - kernel_h) / stride_h + 1;
            let ow = (w - kernel_w) / stride_w + 1;
            let mut low = Vec::with_capacity(out_channels * oh * ow);
            let mut high = Vec::with_capacity(out_channels * oh * ow);
            for co in 0..*out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (mut lo, mut hi) = (bias[co], bias[co]);
                        for ci in 0..ci_n {
                            for ky in 0..*kernel_h {
                                for kx in 0..*kernel_w {
                                    let k = ((co * ci_n + ci) * kernel_h + ky) * kernel_w + kx;
                                    let at = (ci * h + oy * stride_h + ky) * w
                                        + ox * stride_w
                                        + kx;
                                    let kv = kernel[k];
                                    if kv >= 0.0 {
                                        lo += kv * ilo[at];
                                        hi += kv * ihi[at];
                                    } else {
                                        lo += kv * ihi[at];
                                        hi += kv * ilo[at];
                                    }
                                }
                            }
                        }
                        low.push(lo);
                        high.push(hi);
                    }
                }
            }
            LayerBounds { low, high }
        }
        Layer::MaxPool2d {
            pool_size,
            input_shape,
        } => {
            let p = *pool_size;
            let [c_n, h, w] = *input_shape;
            let (oh, ow) = (h / p, w / p);
            let mut low = Vec::with_capacity(c_n * oh * ow);
            let mut high = Vec::with_capacity(c_n * oh * ow);
            for c in 0..c_n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                        for ky in 0..p {
                            for kx in 0..p {
                                let at = (c * h + oy * p + ky) * w + ox * p + kx;
                                lo = lo.max(ilo[at]);
                                hi = hi.max(ihi[at]);
                            }
                        }
                        low.push(lo);
                        high.push(hi);
                    }
                }
            }
            LayerBounds { low, high }
        }
        Layer::ZeroPad2d {
            padding,
            input_shape,
        } => {
            let [c_n, h, w] = *input_shape;
            let [top, bottom, left, right] = *padding;
            let (oh, ow) = (h + top + bottom, w + left + right);
            let mut low = vec![0.0; c_n * oh * ow];
            let mut high = vec![0.0; c_n * oh * ow];
            for c in 0..c_n {
                for y in 0..h {
                    for x in 0..w {
                        let to = (c * oh + y + top) * ow + x + left;
                        let from = (c * h + y) * w + x;
                        low[to] = ilo[from];
                        high[to] = ihi[from];
                    }
                }
            }
            LayerBounds { low, high }
        }
        Layer::Flatten { .. } => input.clone(),
        Layer::Relu { .. } => LayerBounds {
            low: ilo.iter().map(|v| v.max(0.0)).collect(),
            high: ihi.iter().map(|v| v.max(0.0)).collect(),
        },
    }
}

/// Counters from [`refine_bounds_lp`]: how many neuron sides were
/// tightened and how many fell back to the coarse value because the
/// solver gave no usable answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefineStats {
    pub tightened: usize,
    pub fallbacks: usize,
}

/// Tighten interval bounds layer by layer: each neuron of layer `k >= 1`
/// is re-bounded by minimizing and maximizing its column subject to the
/// relaxation of everything upstream (built from the bounds refined so
/// far). Interval arithmetic loses all dependency between neurons; the LP
/// recovers it, e.g. exact cancellation of `h - h` that intervals widen to
/// `[-2 delta, 2 delta]`.
///
/// The result is elementwise contained in `coarse` and stays sound: every
/// true execution is feasible for the relaxation, so the LP minimum never
/// exceeds a true value (a `feas_tol`-sized cushion absorbs solver
/// roundoff). A neuron side whose solve does not come back `Optimal`
/// keeps its coarse value and is counted in the stats.
pub fn refine_bounds_lp(
    net: &Network,
    region: &InputRegion,
    coarse: &BoundsMap,
) -> Result<(BoundsMap, RefineStats)> {
    use crate::lpsolve::{solve, LpStatus, SolveOptions};
    use crate::relax::{build_joint_lp_with, BuildOptions, NetworkSide, ProblemVariant};

    let mut refined = coarse.clone();
    let mut stats = RefineStats::default();
    let pair = crate::model::ClassPair::new(0, 1)?;
    let opts = SolveOptions::default();
    let cushion = opts.feas_tol;
    for k in 1..net.layers.len() {
        let (mut lp, layout) = build_joint_lp_with(
            net,
            net,
            region,
            pair,
            &refined,
            &refined,
            ProblemVariant::IndependentNet1,
            &BuildOptions::default(),
        )?;
        let width = net.layers[k].out_len();
        let mut low = refined.post(k).low.clone();
        let mut high = refined.post(k).high.clone();
        for i in 0..width {
            let col = layout.output(NetworkSide::Net1, k, i)?;
            for sign in [1.0, -1.0] {
                lp.objective = vec![(col, sign)];
                let sol = solve(&lp, &opts)?;
                if sol.status != LpStatus::Optimal {
                    stats.fallbacks += 1;
                    continue;
                }
                if sign > 0.0 {
                    let cand = (sol.objective - cushion).max(low[i]);
                    if cand > low[i] {
                        stats.tightened += 1;
                    }
                    low[i] = cand.min(high[i]);
                } else {
                    let cand = (-sol.objective + cushion).min(high[i]);
                    if cand < high[i] {
                        stats.tightened += 1;
                    }
                    high[i] = cand.max(low[i]);
                }
            }
        }
        refined.layers[k] = LayerBounds { low, high };
        refined.layers[k].check_ordered(&format!("refined layer {k}"))?;
    }
    Ok((refined, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_box_clips_to_domain() {
        let r = InputRegion::with_domain(vec![0.5], 0.1, Some(vec![0.0]), Some(vec![1.0])).unwrap();
        assert_eq!(r.region_box().unwrap(), (vec![0.4], vec![0.6]));

        let r = InputRegion::with_domain(vec![0.05], 0.1, Some(vec![0.0]), Some(vec![1.0])).unwrap();
        assert_eq!(r.region_box().unwrap(), (vec![0.0], vec![0.15000000000000002]));

        let r = InputRegion::new(vec![0.5, -1.0], 0.25).unwrap();
        assert_eq!(
            r.region_box().unwrap(),
            (vec![0.25, -1.25], vec![0.75, -0.75])
        );
    }

    #[test]
    fn region_rejects_bad_parameters() {
        assert!(InputRegion::new(vec![0.0], -0.1).is_err());
        assert!(InputRegion::new(vec![0.0], f64::INFINITY).is_err());
        assert!(InputRegion::new(vec![], 0.1).is_err());
        assert!(InputRegion::new(vec![f64::NAN], 0.1).is_err());
        // Center outside the domain.
        assert!(
            InputRegion::with_domain(vec![2.0], 0.1, Some(vec![0.0]), Some(vec![1.0])).is_err()
        );
        // Inverted domain.
        assert!(
            InputRegion::with_domain(vec![0.5], 0.1, Some(vec![1.0]), Some(vec![0.0])).is_err()
        );
        // Mismatched domain length.
        assert!(InputRegion::with_domain(vec![0.5], 0.1, Some(vec![0.0, 0.0]), None).is_err());
    }

    #[test]
    fn dense_interval_uses_weight_signs() {
        let net = Network::new(
            "signs",
            vec![Layer::Dense {
                weights: vec![1.0, -1.0, 2.0, 3.0],
                bias: vec![0.0, -1.0],
                in_features: 2,
                out_features: 2,
            }],
        )
        .unwrap();
        let region = InputRegion::with_domain(
            vec![0.5, 0.5],
            1.0,
            Some(vec![0.0, 0.0]),
            Some(vec![1.0, 1.0]),
        )
        .unwrap();
        let map = propagate_intervals(&net, &region).unwrap();
        // First output: x0 - x1 over [0,1]^2 spans [-1, 1].
        assert_eq!(map.post(0).low[0], -1.0);
        assert_eq!(map.post(0).high[0], 1.0);
        // Second output: 2 x0 + 3 x1 - 1 spans [-1, 4].
        assert_eq!(map.post(0).low[1], -1.0);
        assert_eq!(map.post(0).high[1], 4.0);
    }

    #[test]
    fn relu_clamps_bounds_and_pool_takes_window_maxima() {
        let net = Network::new(
            "pool",
            vec![
                Layer::Relu {
                    input_shape: vec![1, 2, 2],
                },
                Layer::MaxPool2d {
                    pool_size: 2,
                    input_shape: [1, 2, 2],
                },
                Layer::Flatten {
                    input_shape: vec![1, 1, 1],
                },
                Layer::Dense {
                    weights: vec![1.0, -1.0],
                    bias: vec![0.0, 0.0],
                    in_features: 1,
                    out_features: 2,
                },
            ],
        )
        .unwrap();
        let region = InputRegion::new(vec![-0.5, 0.25, 2.0, -3.0], 0.5).unwrap();
        let map = propagate_intervals(&net, &region).unwrap();
        assert_eq!(map.post(0).low, vec![0.0, 0.0, 1.5, 0.0]);
        assert_eq!(map.post(0).high, vec![0.0, 0.75, 2.5, 0.0]);
        // Pool output: max over the window.
        assert_eq!(map.post(1).low, vec![1.5]);
        assert_eq!(map.post(1).high, vec![2.5]);
    }

    #[test]
    fn phase_classification_applies_slack() {
        assert_eq!(classify_phase(1e-8, 2.0), NeuronPhase::Active);
        assert_eq!(classify_phase(-2.0, -1e-8), NeuronPhase::Inactive);
        assert_eq!(classify_phase(-1.0, 1.0), NeuronPhase::Unstable);
        // Values inside the slack band are never classified as fixed-phase.
        assert_eq!(classify_phase(1e-12, 2.0), NeuronPhase::Unstable);
        assert_eq!(classify_phase(-2.0, -1e-12), NeuronPhase::Unstable);
        assert_eq!(classify_phase(0.0, 0.0), NeuronPhase::Unstable);
    }

    #[test]
    fn intervals_contain_ten_thousand_sampled_executions() {
        // Brute-force containment: every layer value of every sampled
        // execution must lie inside the propagated interval, up to a 1e-9
        // roundoff slack.
        for seed in [3u64, 17, 91] {
            let fixture =
                crate::oracle::make_fixture(crate::oracle::FixtureKind::RandomSmall, seed).unwrap();
            for net in &fixture.networks {
                let center = vec![0.05; net.input_len()];
                let region = InputRegion::new(center, 0.3).unwrap();
                let map = propagate_intervals(net, &region).unwrap();
                let points = crate::oracle::sample_points(&region, 10_000, seed ^ 0xabcd).unwrap();
                for x in &points {
                    let trace = net.forward_trace(x).unwrap();
                    for (k, values) in trace.iter().enumerate() {
                        let lb = map.post(k);
                        for (i, v) in values.iter().enumerate() {
                            assert!(
                                *v >= lb.low[i] - 1e-9 && *v <= lb.high[i] + 1e-9,
                                "seed {seed} net `{}` layer {k} neuron {i}: \
                                 value {v} escapes [{}, {}]",
                                net.name,
                                lb.low[i],
                                lb.high[i]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn shrinking_the_radius_nests_the_bounds() {
        let fixture =
            crate::oracle::make_fixture(crate::oracle::FixtureKind::RandomSmall, 42).unwrap();
        let net = &fixture.networks[0];
        let center = vec![0.1; net.input_len()];
        let deltas = [0.0, 0.01, 0.05, 0.2, 1.0];
        let maps: Vec<BoundsMap> = deltas
            .iter()
            .map(|d| {
                propagate_intervals(net, &InputRegion::new(center.clone(), *d).unwrap()).unwrap()
            })
            .collect();
        for w in maps.windows(2) {
            let (small, large) = (&w[0], &w[1]);
            for k in 0..small.layers.len() {
                for i in 0..small.post(k).len() {
                    assert!(
                        small.post(k).low[i] >= large.post(k).low[i]
                            && small.post(k).high[i] <= large.post(k).high[i],
                        "layer {k} neuron {i} not nested"
                    );
                }
            }
        }
    }

    #[test]
    fn refinement_recovers_cancellation_intervals_cannot_see() {
        // Layer 0 duplicates x into (h, h); layer 1 computes (h - h, h).
        // Intervals bound the first output by [-2 delta, 2 delta]; the LP
        // knows both inputs are the same column and recovers ~0 width.
        let net = Network::new(
            "cancel",
            vec![
                Layer::Dense {
                    weights: vec![1.0, 1.0],
                    bias: vec![0.0, 0.0],
                    in_features: 1,
                    out_features: 2,
                },
                Layer::Dense {
                    weights: vec![1.0, -1.0, 0.0, 1.0],
                    bias: vec![0.0, 0.0],
                    in_features: 2,
                    out_features: 2,
                },
            ],
        )
        .unwrap();
        let region = InputRegion::new(vec![0.0], 1.0).unwrap();
        let coarse = propagate_intervals(&net, &region).unwrap();
        assert_eq!(coarse.post(1).low[0], -2.0);
        assert_eq!(coarse.post(1).high[0], 2.0);
        let (refined, stats) = refine_bounds_lp(&net, &region, &coarse).unwrap();
        assert!(refined.post(1).low[0] >= -1e-8 && refined.post(1).high[0] <= 1e-8);
        assert!(stats.tightened >= 2);
        assert_eq!(stats.fallbacks, 0);
        // The untouched neuron keeps its (already tight) box.
        assert!((refined.post(1).low[1] - -1.0).abs() <= 2e-9);
        assert!((refined.post(1).high[1] - 1.0).abs() <= 2e-9);
    }

    #[test]
    fn single_layer_refinement_is_the_identity() {
        let net = Network::new(
            "one",
            vec![Layer::Dense {
                weights: vec![1.0, -2.0, 0.5, 0.25],
                bias: vec![0.1, -0.1],
                in_features: 2,
                out_features: 2,
            }],
        )
        .unwrap();
        let region = InputRegion::new(vec![0.2, -0.3], 0.4).unwrap();
        let coarse = propagate_intervals(&net, &region).unwrap();
        let (refined, stats) = refine_bounds_lp(&net, &region, &coarse).unwrap();
        assert_eq!(refined, coarse);
        assert_eq!(stats, RefineStats::default());
    }

    #[test]
    fn refined_bounds_nest_in_coarse_and_still_contain_executions() {
        for seed in [12u64, 34] {
            let fixture =
                crate::oracle::make_fixture(crate::oracle::FixtureKind::RandomSmall, seed).unwrap();
            let net = &fixture.networks[0];
            let region = InputRegion::new(vec![0.1; net.input_len()], 0.5).unwrap();
            let coarse = propagate_intervals(net, &region).unwrap();
            let (refined, _) = refine_bounds_lp(net, &region, &coarse).unwrap();
            for k in 0..net.layers.len() {
                for i in 0..refined.post(k).len() {
                    assert!(
                        refined.post(k).low[i] >= coarse.post(k).low[i]
                            && refined.post(k).high[i] <= coarse.post(k).high[i],
                        "refined must nest in coarse at layer {k} neuron {i}"
                    );
                }
            }
            let points = crate::oracle::sample_points(&region, 10_000, seed ^ 0x77).unwrap();
            for x in &points {
                let trace = net.forward_trace(x).unwrap();
                for (k, values) in trace.iter().enumerate() {
                    let lb = refined.post(k);
                    for (i, v) in values.iter().enumerate() {
                        assert!(
                            *v >= lb.low[i] - 1e-9 && *v <= lb.high[i] + 1e-9,
                            "refined bounds lost a true value at layer {k} neuron {i}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zero_radius_intervals_are_exactly_the_forward_values() {
        let fixture =
            crate::oracle::make_fixture(crate::oracle::FixtureKind::RandomSmall, 8).unwrap();
        for net in &fixture.networks {
            let center = vec![0.21; net.input_len()];
            let region = InputRegion::new(center.clone(), 0.0).unwrap();
            let map = propagate_intervals(net, &region).unwrap();
            let trace = net.forward_trace(&center).unwrap();
            for (k, values) in trace.iter().enumerate() {
                // Bit-exact: the interval transfer accumulates in forward order.
                assert_eq!(map.post(k).low, *values, "layer {k} low");
                assert_eq!(map.post(k).high, *values, "layer {k} high");
            }
        }
    }

    #[test]
    fn pre_accessor_returns_previous_layer_output() {
        let net = Network::new(
            "two",
            vec![
                Layer::Dense {
                    weights: vec![1.0, 1.0],
                    bias: vec![0.5, -0.5],
                    in_features: 1,
                    out_features: 2,
                },
                Layer::Relu {
                    input_shape: vec![2],
                },
            ],
        )
        .unwrap();
        let region = InputRegion::new(vec![0.0], 1.0).unwrap();
        let map = propagate_intervals(&net, &region).unwrap();
        assert_eq!(map.pre(0).low, vec![-1.0]);
        assert_eq!(map.pre(1), map.post(0));
        assert_eq!(map.logits(), map.post(1));
    }
}
