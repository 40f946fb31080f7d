//! Lowering a pair of networks over a region to a joint linear program.
//!
//! Both networks read the *same* input columns, so the program reasons
//! about every input of the region once, not about two independent copies.
//! Affine layers become sparse equality rows. ReLU units with a fixed
//! phase (per the propagated bounds) become equalities; unstable units get
//! the triangle relaxation, the tightest convex outer bound of the ReLU
//! graph over the pre-activation interval. Max-pool outputs get the
//! standard `|window| + 1` inequalities. The feasible set therefore
//! contains the exact joint execution of both networks at every region
//! point, which makes the LP minimum of the margin-difference objective a
//! sound lower bound on the true log relative prediction ratio.
//!
//! The relaxation only ever *adds* feasible points, so minima can
//! underestimate but never overestimate; soundness of downstream
//! implication decisions rests on exactly this direction.

use crate::bounds::{classify_phase, BoundsMap, InputRegion, NeuronPhase};
use crate::model::{check_compatible, ClassPair, Layer, Network};
use crate::{Error, Result};

/// Which side of the differential analysis a variable belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkSide {
    Net1,
    Net2,
}

impl NetworkSide {
    fn prefix(self) -> &'static str {
        match self {
            NetworkSide::Net1 => "n1",
            NetworkSide::Net2 => "n2",
        }
    }
}

/// A layer value viewed from a layer boundary: `Pre` is the input of the
/// layer (the previous layer's output, or the shared input for layer 0),
/// `Post` is the layer's own output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pre,
    Post,
}

/// Symbolic reference to one LP column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRef {
    /// Coordinate of the shared input block.
    SharedInput { index: usize },
    /// Value at a layer boundary of one network.
    Neuron {
        network: NetworkSide,
        layer: usize,
        stage: Stage,
        index: usize,
    },
}

/// Constraint sense. Rows are either `coeffs . x <= rhs` or `= rhs`;
/// greater-equal rows are stored negated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
}

/// One sparse constraint row.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A bounded-variable linear program, minimize sense. Every variable
/// carries finite lower and upper bounds; this is what lets the solver
/// dispense with unboundedness handling entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub var_low: Vec<f64>,
    pub var_high: Vec<f64>,
    pub var_names: Vec<String>,
    pub constraints: Vec<Constraint>,
    /// Sparse objective, minimize.
    pub objective: Vec<(usize, f64)>,
}

impl LinearProgram {
    /// Structural checks: index ranges, finiteness, ordered bounds, and no
    /// duplicate column within a single row or the objective (the builder
    /// never emits duplicates, and the solver relies on that).
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        if self.var_low.len() != n || self.var_high.len() != n || self.var_names.len() != n {
            return Err(Error::Solver("variable metadata lengths disagree".into()));
        }
        for i in 0..n {
            let (lo, hi) = (self.var_low[i], self.var_high[i]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Solver(format!(
                    "variable {} has non-finite bounds [{lo}, {hi}]",
                    self.var_names[i]
                )));
            }
            if lo > hi {
                return Err(Error::Solver(format!(
                    "variable {} has inverted bounds [{lo}, {hi}]",
                    self.var_names[i]
                )));
            }
        }
        let check_row = |what: &str, coeffs: &[(usize, f64)], rhs: f64| -> Result<()> {
            let mut cols: Vec<usize> = Vec::with_capacity(coeffs.len());
            for &(col, v) in coeffs {
                if col >= n {
                    return Err(Error::Solver(format!("{what}: column {col} out of range")));
                }
                if !v.is_finite() {
                    return Err(Error::Solver(format!("{what}: non-finite coefficient")));
                }
                cols.push(col);
            }
            cols.sort_unstable();
            if cols.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Solver(format!("{what}: duplicate column")));
            }
            if !rhs.is_finite() {
                return Err(Error::Solver(format!("{what}: non-finite rhs")));
            }
            Ok(())
        };
        for c in &self.constraints {
            check_row(&c.name, &c.coeffs, c.rhs)?;
        }
        check_row("objective", &self.objective, 0.0)
    }

    pub fn eval_objective(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(col, v)| v * x[col]).sum()
    }

    /// Largest amount by which `x` breaks any constraint row (0 if none).
    pub fn constraint_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|&(col, v)| v * x[col]).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Largest amount by which `x` escapes the variable bounds (0 if none).
    pub fn bounds_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.num_vars {
            worst = worst.max(self.var_low[i] - x[i]).max(x[i] - self.var_high[i]);
        }
        worst
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraint_violation(x).max(self.bounds_violation(x))
    }
}

/// Which program to build for a class pair `(i, j)` with net1 logits `x`
/// and net2 logits `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemVariant {
    /// Minimize `(x_i - x_j) - (y_i - y_j)` over both networks jointly.
    JointMargin,
    /// Minimize `x_i - x_j` subject to `y_i - y_j >= epsilon_margin`:
    /// "wherever net2 prefers i over j, how bad can net1 get".
    JointPureImplication,
    /// Minimize `x_i - x_j` with the net2 block omitted.
    IndependentNet1,
    /// Minimize `-(y_i - y_j)` with the net1 block omitted.
    IndependentNet2,
}

impl ProblemVariant {
    pub fn includes_net1(self) -> bool {
        !matches!(self, ProblemVariant::IndependentNet2)
    }

    pub fn includes_net2(self) -> bool {
        !matches!(self, ProblemVariant::IndependentNet1)
    }
}

/// Knobs for the lowering.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Stand-in for the strict inequality of the pure-implication variant
    /// (`y_i - y_j > 0` becomes `>= epsilon_margin`).
    pub epsilon_margin: f64,
    /// Self-audit hook: encode *unstable* ReLUs as active-phase equalities.
    /// This deliberately breaks soundness (the feasible set no longer
    /// contains executions whose unit lands inactive) and exists so the
    /// audit's negative control can demonstrate that the sampling harness
    /// catches a broken relaxation. Never set outside the audit.
    pub unsound_active_relu: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            epsilon_margin: 1e-6,
            unsound_active_relu: false,
        }
    }
}

/// Column layout of a built program: the shared input block first, then
/// one block per layer per included network, in layer order (each block
/// holds that layer's *outputs*).
#[derive(Debug, Clone)]
pub struct VarLayout {
    pub input_len: usize,
    net1_blocks: Vec<(usize, usize)>,
    net2_blocks: Vec<(usize, usize)>,
    pub num_vars: usize,
}

impl VarLayout {
    fn blocks(&self, side: NetworkSide) -> Result<&[(usize, usize)]> {
        let blocks = match side {
            NetworkSide::Net1 => &self.net1_blocks,
            NetworkSide::Net2 => &self.net2_blocks,
        };
        if blocks.is_empty() {
            return Err(Error::Solver(format!(
                "variant omits the {} block",
                side.prefix()
            )));
        }
        Ok(blocks)
    }

    pub fn input(&self, index: usize) -> Result<usize> {
        if index >= self.input_len {
            return Err(Error::Solver(format!(
                "input index {index} out of range (dim {})",
                self.input_len
            )));
        }
        Ok(index)
    }

    /// Column of layer `layer`'s output neuron `index`.
    pub fn output(&self, side: NetworkSide, layer: usize, index: usize) -> Result<usize> {
        let blocks = self.blocks(side)?;
        let &(offset, len) = blocks.get(layer).ok_or_else(|| {
            Error::Solver(format!("layer {layer} out of range for {}", side.prefix()))
        })?;
        if index >= len {
            return Err(Error::Solver(format!(
                "neuron {index} out of range in {} layer {layer} (len {len})",
                side.prefix()
            )));
        }
        Ok(offset + index)
    }

    /// Column of layer `layer`'s input neuron `index` (the previous
    /// layer's output, or the shared input for layer 0).
    pub fn input_of(&self, side: NetworkSide, layer: usize, index: usize) -> Result<usize> {
        if layer == 0 {
            self.input(index)
        } else {
            self.output(side, layer - 1, index)
        }
    }

    pub fn column(&self, var: &VarRef) -> Result<usize> {
        match *var {
            VarRef::SharedInput { index } => self.input(index),
            VarRef::Neuron {
                network,
                layer,
                stage: Stage::Post,
                index,
            } => self.output(network, layer, index),
            VarRef::Neuron {
                network,
                layer,
                stage: Stage::Pre,
                index,
            } => self.input_of(network, layer, index),
        }
    }

    /// Column of a final logit.
    pub fn logit(&self, side: NetworkSide, class: usize) -> Result<usize> {
        let blocks = self.blocks(side)?;
        self.output(side, blocks.len() - 1, class)
    }
}

/// Build the program for one class pair. See the module docs for what each
/// layer contributes. `bounds1`/`bounds2` must have been propagated for
/// `region` (layer shapes are cross-checked, the region identity cannot
/// be).
pub fn build_joint_lp(
    net1: &Network,
    net2: &Network,
    region: &InputRegion,
    pair: ClassPair,
    bounds1: &BoundsMap,
    bounds2: &BoundsMap,
    variant: ProblemVariant,
) -> Result<LinearProgram> {
    build_joint_lp_with(
        net1,
        net2,
        region,
        pair,
        bounds1,
        bounds2,
        variant,
        &BuildOptions::default(),
    )
    .map(|(lp, _)| lp)
}

/// [`build_joint_lp`] with explicit options, also returning the column
/// layout for callers that need to address individual variables.
#[allow(clippy::too_many_arguments)]
pub fn build_joint_lp_with(
    net1: &Network,
    net2: &Network,
    region: &InputRegion,
    pair: ClassPair,
    bounds1: &BoundsMap,
    bounds2: &BoundsMap,
    variant: ProblemVariant,
    opts: &BuildOptions,
) -> Result<(LinearProgram, VarLayout)> {
    check_compatible(net1, net2)?;
    pair.check_range(net1.num_classes())?;
    if region.dim() != net1.input_len() {
        return Err(Error::Shape(format!(
            "region has {} coordinates but the networks take {}",
            region.dim(),
            net1.input_len()
        )));
    }
    if !(opts.epsilon_margin.is_finite() && opts.epsilon_margin > 0.0) {
        return Err(Error::Config(format!(
            "epsilon_margin must be finite and positive, got {}",
            opts.epsilon_margin
        )));
    }
    check_bounds_shape(net1, bounds1)?;
    check_bounds_shape(net2, bounds2)?;

    let (in_low, in_high) = region.region_box()?;
    let input_len = in_low.len();

    let mut layout = VarLayout {
        input_len,
        net1_blocks: Vec::new(),
        net2_blocks: Vec::new(),
        num_vars: input_len,
    };
    let mut var_low = in_low;
    let mut var_high = in_high;
    let mut var_names: Vec<String> = (0..input_len).map(|i| format!("in_{i}")).collect();

    let mut sides: Vec<(NetworkSide, &Network, &BoundsMap)> = Vec::new();
    if variant.includes_net1() {
        sides.push((NetworkSide::Net1, net1, bounds1));
    }
    if variant.includes_net2() {
        sides.push((NetworkSide::Net2, net2, bounds2));
    }

    for (side, net, bounds) in &sides {
        let blocks = match side {
            NetworkSide::Net1 => &mut layout.net1_blocks,
            NetworkSide::Net2 => &mut layout.net2_blocks,
        };
        for (k, layer) in net.layers.iter().enumerate() {
            let len = layer.out_len();
            blocks.push((layout.num_vars, len));
            layout.num_vars += len;
            let lb = bounds.post(k);
            var_low.extend_from_slice(&lb.low);
            var_high.extend_from_slice(&lb.high);
            let tag = if layer.is_affine() { "pre" } else { "post" };
            let prefix = side.prefix();
            var_names.extend((0..len).map(|i| format!("{prefix}_l{k}_{tag}_{i}")));
        }
    }

    let mut constraints = Vec::new();
    for (side, net, bounds) in &sides {
        for (k, layer) in net.layers.iter().enumerate() {
            emit_layer(&mut constraints, &layout, *side, k, layer, bounds, opts)?;
        }
    }

    let objective = match variant {
        ProblemVariant::JointMargin => vec![
            (layout.logit(NetworkSide::Net1, pair.i)?, 1.0),
            (layout.logit(NetworkSide::Net1, pair.j)?, -1.0),
            (layout.logit(NetworkSide::Net2, pair.i)?, -1.0),
            (layout.logit(NetworkSide::Net2, pair.j)?, 1.0),
        ],
        ProblemVariant::JointPureImplication => {
            constraints.push(Constraint {
                name: "implier_margin".into(),
                coeffs: vec![
                    (layout.logit(NetworkSide::Net2, pair.i)?, -1.0),
                    (layout.logit(NetworkSide::Net2, pair.j)?, 1.0),
                ],
                relation: Relation::Le,
                rhs: -opts.epsilon_margin,
            });
            vec![
                (layout.logit(NetworkSide::Net1, pair.i)?, 1.0),
                (layout.logit(NetworkSide::Net1, pair.j)?, -1.0),
            ]
        }
        ProblemVariant::IndependentNet1 => vec![
            (layout.logit(NetworkSide::Net1, pair.i)?, 1.0),
            (layout.logit(NetworkSide::Net1, pair.j)?, -1.0),
        ],
        ProblemVariant::IndependentNet2 => vec![
            (layout.logit(NetworkSide::Net2, pair.j)?, 1.0),
            (layout.logit(NetworkSide::Net2, pair.i)?, -1.0),
        ],
    };

    let lp = LinearProgram {
        num_vars: layout.num_vars,
        var_low,
        var_high,
        var_names,
        constraints,
        objective,
    };
    lp.validate()?;
    Ok((lp, layout))
}

fn check_bounds_shape(net: &Network, bounds: &BoundsMap) -> Result<()> {
    if bounds.layers.len() != net.layers.len() {
        return Err(Error::Shape(format!(
            "bounds cover {} layers but network `{}` has {}",
            bounds.layers.len(),
            net.name,
            net.layers.len()
        )));
    }
    if bounds.input.len() != net.input_len() {
        return Err(Error::Shape(format!(
            "bounds input block has {} entries but network `{}` takes {}",
            bounds.input.len(),
            net.name,
            net.input_len()
        )));
    }
    for (k, (layer, lb)) in net.layers.iter().zip(&bounds.layers).enumerate() {
        if lb.len() != layer.out_len() {
            return Err(Error::Shape(format!(
                "bounds layer {k} has {} entries but the layer outputs {}",
                lb.len(),
                layer.out_len()
            )));
        }
    }
    Ok(())
}

fn emit_layer(
    constraints: &mut Vec<Constraint>,
    layout: &VarLayout,
    side: NetworkSide,
    k: usize,
    layer: &Layer,
    bounds: &BoundsMap,
    opts: &BuildOptions,
) -> Result<()> {
    let prefix = side.prefix();
    let out = |i: usize| layout.output(side, k, i);
    let inp = |i: usize| layout.input_of(side, k, i);
    match layer {
        Layer::Dense {
            weights,
            bias,
            in_features,
            out_features,
        } => {
            for i in 0..*out_features {
                let row = &weights[i * in_features..(i + 1) * in_features];
                let mut coeffs = vec![(out(i)?, 1.0)];
                for (j, w) in row.iter().enumerate() {
                    if *w != 0.0 {
                        coeffs.push((inp(j)?, -w));
                    }
                }
                constraints.push(Constraint {
                    name: format!("{prefix}_l{k}_aff_{i}"),
                    coeffs,
                    relation: Relation::Eq,
                    rhs: bias[i],
                });
            }
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
            for co in 0..*out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let o = (co * oh + oy) * ow + ox;
                        let mut coeffs = vec![(out(o)?, 1.0)];
                        for ci in 0..ci_n {
                            for ky in 0..*kernel_h {
                                for kx in 0..*kernel_w {
                                    let kv =
                                        kernel[((co * ci_n + ci) * kernel_h + ky) * kernel_w + kx];
                                    if kv != 0.0 {
                                        let at = (ci * h + oy * stride_h + ky) * w
                                            + ox * stride_w
                                            + kx;
                                        coeffs.push((inp(at)?, -kv));
                                    }
                                }
                            }
                        }
                        constraints.push(Constraint {
                            name: format!("{prefix}_l{k}_aff_{o}"),
                            coeffs,
                            relation: Relation::Eq,
                            rhs: bias[co],
                        });
                    }
                }
            }
        }
        Layer::ZeroPad2d {
            padding,
            input_shape,
        } => {
            let [c_n, h, w] = *input_shape;
            let [top, bottom, left, right] = *padding;
            let (oh, ow) = (h + top + bottom, w + left + right);
            for c in 0..c_n {
                for y in 0..oh {
                    for x in 0..ow {
                        let o = (c * oh + y) * ow + x;
                        let interior =
                            y >= top && y < top + h && x >= left && x < left + w;
                        let mut coeffs = vec![(out(o)?, 1.0)];
                        if interior {
                            let from = (c * h + (y - top)) * w + (x - left);
                            coeffs.push((inp(from)?, -1.0));
                        }
                        constraints.push(Constraint {
                            name: format!("{prefix}_l{k}_aff_{o}"),
                            coeffs,
                            relation: Relation::Eq,
                            rhs: 0.0,
                        });
                    }
                }
            }
        }
        Layer::Flatten { .. } => {
            for i in 0..layer.out_len() {
                constraints.push(Constraint {
                    name: format!("{prefix}_l{k}_aff_{i}"),
                    coeffs: vec![(out(i)?, 1.0), (inp(i)?, -1.0)],
                    relation: Relation::Eq,
                    rhs: 0.0,
                });
            }
        }
        Layer::Relu { .. } => {
            let pre = bounds.pre(k);
            for i in 0..layer.out_len() {
                let (lo, hi) = (pre.low[i], pre.high[i]);
                match classify_phase(lo, hi) {
                    NeuronPhase::Active => constraints.push(relu_equality(
                        format!("{prefix}_l{k}_relu_eq_{i}"),
                        out(i)?,
                        Some(inp(i)?),
                    )),
                    NeuronPhase::Inactive => constraints.push(relu_equality(
                        format!("{prefix}_l{k}_relu_eq_{i}"),
                        out(i)?,
                        None,
                    )),
                    NeuronPhase::Unstable if opts.unsound_active_relu => {
                        constraints.push(relu_equality(
                            format!("{prefix}_l{k}_relu_eq_{i}"),
                            out(i)?,
                            Some(inp(i)?),
                        ))
                    }
                    NeuronPhase::Unstable => emit_unstable_relu(
                        constraints,
                        &format!("{prefix}_l{k}_relu"),
                        i,
                        out(i)?,
                        inp(i)?,
                        lo,
                        hi,
                    ),
                }
            }
        }
        Layer::MaxPool2d {
            pool_size,
            input_shape,
        } => {
            let pre = bounds.pre(k);
            let p = *pool_size;
            let [c_n, h, w] = *input_shape;
            let (oh, ow) = (h / p, w / p);
            for c in 0..c_n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let o = (c * oh + oy) * ow + ox;
                        let mut window = Vec::with_capacity(p * p);
                        for ky in 0..p {
                            for kx in 0..p {
                                let at = (c * h + oy * p + ky) * w + ox * p + kx;
                                window.push((inp(at)?, pre.low[at]));
                            }
                        }
                        emit_pool_output(
                            constraints,
                            &format!("{prefix}_l{k}_pool"),
                            o,
                            out(o)?,
                            &window,
                        );
                    }
                }
            }
        }
    }
    Ok(())
}

/// `post = pre` (active) or `post = 0` (inactive).
fn relu_equality(name: String, post: usize, pre: Option<usize>) -> Constraint {
    let mut coeffs = vec![(post, 1.0)];
    if let Some(pre) = pre {
        coeffs.push((pre, -1.0));
    }
    Constraint {
        name,
        coeffs,
        relation: Relation::Eq,
        rhs: 0.0,
    }
}

/// Triangle relaxation of `post = max(0, pre)` over `pre in [lo, hi]`:
///
/// ```text
/// post <= s (pre - lo)   with s = hi / (hi - lo)   (chord)
/// post >= pre
/// post >= 0
/// ```
///
/// The chord is only sound when the interval straddles zero, so the bounds
/// are widened to `[min(lo,0), max(hi,0)]` first; a phase call that was
/// blocked only by the classification slack thereby stays sound at the
/// cost of a sliver of area. A zero-width interval after widening means
/// `lo = hi = 0`, where the unit is exactly the identity.
fn emit_unstable_relu(
    constraints: &mut Vec<Constraint>,
    prefix: &str,
    i: usize,
    post: usize,
    pre: usize,
    lo: f64,
    hi: f64,
) {
    let lo = lo.min(0.0);
    let hi = hi.max(0.0);
    if hi - lo <= 0.0 {
        constraints.push(relu_equality(format!("{prefix}_eq_{i}"), post, Some(pre)));
        return;
    }
    let slope = hi / (hi - lo);
    constraints.push(Constraint {
        name: format!("{prefix}_up_{i}"),
        coeffs: vec![(post, 1.0), (pre, -slope)],
        relation: Relation::Le,
        rhs: -slope * lo,
    });
    constraints.push(Constraint {
        name: format!("{prefix}_lb_{i}"),
        coeffs: vec![(pre, 1.0), (post, -1.0)],
        relation: Relation::Le,
        rhs: 0.0,
    });
    constraints.push(Constraint {
        name: format!("{prefix}_nn_{i}"),
        coeffs: vec![(post, -1.0)],
        relation: Relation::Le,
        rhs: 0.0,
    });
}

/// Rows for one max-pool output over `window = [(input column, input
/// lower bound); |J|]`:
///
/// ```text
/// in_j <= post                        for every j in J
/// sum_j in_j >= post + sum_j low_j - max_j low_j
/// ```
///
/// The sum row is the only upper pressure on `post`; it is exact when all
/// but the largest window entry sit at their lower bounds.
fn emit_pool_output(
    constraints: &mut Vec<Constraint>,
    prefix: &str,
    o: usize,
    post: usize,
    window: &[(usize, f64)],
) {
    for (idx, &(col, _)) in window.iter().enumerate() {
        constraints.push(Constraint {
            name: format!("{prefix}_ge_{o}_{idx}"),
            coeffs: vec![(col, 1.0), (post, -1.0)],
            relation: Relation::Le,
            rhs: 0.0,
        });
    }
    let sum_low: f64 = window.iter().map(|&(_, l)| l).sum();
    let max_low = window
        .iter()
        .map(|&(_, l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut coeffs = vec![(post, 1.0)];
    coeffs.extend(window.iter().map(|&(col, _)| (col, -1.0)));
    constraints.push(Constraint {
        name: format!("{prefix}_sum_{o}"),
        coeffs,
        relation: Relation::Le,
        rhs: max_low - sum_low,
    });
}

/// Assemble the full variable vector for an exact execution of the built
/// program's networks at input `x`: input block, then every included
/// network's per-layer values. The result must be feasible for the LP up
/// to roundoff; tests lean on this, and it doubles as a warm-start point.
pub fn embed_execution(
    layout: &VarLayout,
    variant: ProblemVariant,
    net1: &Network,
    net2: &Network,
    x: &[f64],
) -> Result<Vec<f64>> {
    let mut point = vec![0.0; layout.num_vars];
    point[..x.len()].copy_from_slice(x);
    let mut fill = |side: NetworkSide, net: &Network| -> Result<()> {
        let trace = net.forward_trace(x)?;
        for (k, values) in trace.iter().enumerate() {
            for (i, v) in values.iter().enumerate() {
                point[layout.output(side, k, i)?] = *v;
            }
        }
        Ok(())
    };
    if variant.includes_net1() {
        fill(NetworkSide::Net1, net1)?;
    }
    if variant.includes_net2() {
        fill(NetworkSide::Net2, net2)?;
    }
    Ok(point)
}

/// Write the program in the standard textual LP format (minimize
/// objective, `Subject To` rows, explicit `Bounds`, `End`), readable by
/// common external solvers. Output is deterministic: same program, same
/// bytes.
pub fn export_lp(lp: &LinearProgram, path: &std::path::Path) -> Result<()> {
    let text = render_lp(lp);
    std::fs::write(path, text).map_err(|e| Error::Save {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// The textual LP body; see [`export_lp`].
pub fn render_lp(lp: &LinearProgram) -> String {
    let mut out = String::new();
    out.push_str("Minimize\n obj:");
    render_terms(&mut out, lp, &lp.objective);
    out.push_str("\nSubject To\n");
    for c in &lp.constraints {
        out.push(' ');
        out.push_str(&c.name);
        out.push(':');
        render_terms(&mut out, lp, &c.coeffs);
        let rel = match c.relation {
            Relation::Le => "<=",
            Relation::Eq => "=",
        };
        out.push_str(&format!(" {rel} {}\n", c.rhs));
    }
    out.push_str("Bounds\n");
    for i in 0..lp.num_vars {
        out.push_str(&format!(
            " {} <= {} <= {}\n",
            lp.var_low[i], lp.var_names[i], lp.var_high[i]
        ));
    }
    out.push_str("End\n");
    out
}

fn render_terms(out: &mut String, lp: &LinearProgram, terms: &[(usize, f64)]) {
    for (n, &(col, v)) in terms.iter().enumerate() {
        let (sign, mag) = if v < 0.0 { ('-', -v) } else { ('+', v) };
        if n == 0 && sign == '+' {
            out.push_str(&format!(" {mag} {}", lp.var_names[col]));
        } else {
            out.push_str(&format!(" {sign} {mag} {}", lp.var_names[col]));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::propagate_intervals;
    use crate::model::log_rpr;
    use crate::oracle::{make_fixture, sample_points, FixtureKind, SplitMix64};

    fn relu_net(weights: Vec<f64>, bias: Vec<f64>, inputs: usize, outputs: usize) -> Network {
        Network::new(
            "relu-net",
            vec![
                Layer::Dense {
                    weights,
                    bias,
                    in_features: inputs,
                    out_features: outputs,
                },
                Layer::Relu {
                    input_shape: vec![outputs],
                },
                Layer::Dense {
                    weights: vec![1.0, 0.0, 0.0, 1.0],
                    bias: vec![0.0, 0.0],
                    in_features: 2,
                    out_features: 2,
                },
            ],
        )
        .unwrap()
    }

    fn build_pair(
        net1: &Network,
        net2: &Network,
        region: &InputRegion,
        variant: ProblemVariant,
    ) -> (LinearProgram, VarLayout) {
        let b1 = propagate_intervals(net1, region).unwrap();
        let b2 = propagate_intervals(net2, region).unwrap();
        build_joint_lp_with(
            net1,
            net2,
            region,
            ClassPair::new(0, 1).unwrap(),
            &b1,
            &b2,
            variant,
            &BuildOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn unstable_relu_gets_the_three_triangle_rows() {
        // First hidden unit spans [-1, 1]: chord slope 1/2, intercept 1/2.
        let net1 = relu_net(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 3.0], 2, 2);
        let net2 = net1.clone();
        let region = InputRegion::new(vec![0.0, 0.0], 1.0).unwrap();
        let (lp, layout) = build_pair(&net1, &net2, &region, ProblemVariant::JointMargin);

        let pre = layout.output(NetworkSide::Net1, 0, 0).unwrap();
        let post = layout.output(NetworkSide::Net1, 1, 0).unwrap();
        let up = lp
            .constraints
            .iter()
            .find(|c| c.name == "n1_l1_relu_up_0")
            .expect("chord row");
        assert_eq!(up.relation, Relation::Le);
        assert_eq!(up.rhs, 0.5);
        assert_eq!(up.coeffs, vec![(post, 1.0), (pre, -0.5)]);
        let lb = lp
            .constraints
            .iter()
            .find(|c| c.name == "n1_l1_relu_lb_0")
            .expect("post >= pre row");
        assert_eq!(lb.coeffs, vec![(pre, 1.0), (post, -1.0)]);
        assert_eq!(lb.rhs, 0.0);
        let nn = lp
            .constraints
            .iter()
            .find(|c| c.name == "n1_l1_relu_nn_0")
            .expect("post >= 0 row");
        assert_eq!(nn.coeffs, vec![(post, -1.0)]);

        // Second hidden unit spans [2, 4]: always active, one equality.
        assert!(lp.constraints.iter().any(|c| c.name == "n1_l1_relu_eq_1"
            && c.relation == Relation::Eq
            && c.coeffs.len() == 2));
    }

    #[test]
    fn pool_rows_match_the_window_inequalities() {
        // Formula-level check with a two-entry window and lows (0.2, 0.5):
        // the sum row must read  post - in_1 - in_2 <= -0.2.
        let mut rows = Vec::new();
        emit_pool_output(&mut rows, "t", 0, 9, &[(3, 0.2), (4, 0.5)]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].coeffs, vec![(3, 1.0), (9, -1.0)]);
        assert_eq!(rows[1].coeffs, vec![(4, 1.0), (9, -1.0)]);
        let sum = &rows[2];
        assert_eq!(sum.coeffs, vec![(9, 1.0), (3, -1.0), (4, -1.0)]);
        assert!((sum.rhs - -0.2).abs() < 1e-15, "rhs {}", sum.rhs);

        // End to end through a real pool layer: window lows sum to 1.05,
        // max 0.5, so the sum row's rhs is -0.55.
        let net = Network::new(
            "pool",
            vec![
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
        let region =
            InputRegion::new(vec![0.3, 0.6, 0.15, 0.4], 0.1).unwrap();
        let (lp, _) = build_pair(&net, &net, &region, ProblemVariant::JointMargin);
        let sum = lp
            .constraints
            .iter()
            .find(|c| c.name == "n1_l0_pool_sum_0")
            .expect("sum row");
        assert!((sum.rhs - -0.55).abs() < 1e-12, "rhs {}", sum.rhs);
        assert_eq!(
            lp.constraints
                .iter()
                .filter(|c| c.name.starts_with("n1_l0_pool_ge_0_"))
                .count(),
            4
        );
    }

    #[test]
    fn variable_count_is_inputs_plus_all_layer_outputs() {
        for seed in [1u64, 2, 3] {
            let fixture = make_fixture(FixtureKind::RandomSmall, seed).unwrap();
            let (a, b) = (&fixture.networks[0], &fixture.networks[1]);
            let region = InputRegion::new(vec![0.0; a.input_len()], 0.1).unwrap();
            let (lp, layout) = build_pair(a, b, &region, ProblemVariant::JointMargin);
            let expect: usize = a.input_len()
                + a.layers.iter().map(|l| l.out_len()).sum::<usize>()
                + b.layers.iter().map(|l| l.out_len()).sum::<usize>();
            assert_eq!(lp.num_vars, expect);
            assert_eq!(layout.num_vars, expect);

            let (ind, _) = build_pair(a, b, &region, ProblemVariant::IndependentNet1);
            assert_eq!(
                ind.num_vars,
                a.input_len() + a.layers.iter().map(|l| l.out_len()).sum::<usize>()
            );
        }
    }

    #[test]
    fn true_executions_are_feasible_and_objective_matches() {
        // The relaxation must contain every exact joint execution, and the
        // margin objective evaluated there must equal the true log
        // relative prediction ratio.
        let pair = ClassPair::new(0, 1).unwrap();
        for seed in [5u64, 6, 7] {
            let fixture = make_fixture(FixtureKind::RandomSmall, seed).unwrap();
            let (a, b) = (&fixture.networks[0], &fixture.networks[1]);
            let region = InputRegion::new(vec![0.1; a.input_len()], 0.25).unwrap();
            let b1 = propagate_intervals(a, &region).unwrap();
            let b2 = propagate_intervals(b, &region).unwrap();
            let (lp, layout) = build_joint_lp_with(
                a,
                b,
                &region,
                pair,
                &b1,
                &b2,
                ProblemVariant::JointMargin,
                &BuildOptions::default(),
            )
            .unwrap();
            for x in sample_points(&region, 400, seed ^ 0x51).unwrap() {
                let point =
                    embed_execution(&layout, ProblemVariant::JointMargin, a, b, &x).unwrap();
                let viol = lp.max_violation(&point);
                assert!(viol <= 1e-9, "seed {seed}: execution infeasible by {viol}");
                let want = log_rpr(&a.forward(&x).unwrap(), &b.forward(&x).unwrap(), pair).unwrap();
                let got = lp.eval_objective(&point);
                assert!((got - want).abs() <= 1e-9, "objective {got} vs {want}");
            }
        }
    }

    #[test]
    fn conv_pad_pool_lowering_keeps_true_executions_feasible() {
        let net = Network::new(
            "conv",
            vec![
                Layer::ZeroPad2d {
                    padding: [0, 1, 0, 1],
                    input_shape: [1, 3, 3],
                },
                Layer::Conv2d {
                    kernel: vec![1.0, -0.5, 0.25, 0.75],
                    bias: vec![0.1],
                    input_shape: [1, 4, 4],
                    out_channels: 1,
                    kernel_h: 2,
                    kernel_w: 2,
                    stride_h: 1,
                    stride_w: 1,
                },
                Layer::Relu {
                    input_shape: vec![1, 3, 3],
                },
                Layer::ZeroPad2d {
                    padding: [0, 1, 0, 1],
                    input_shape: [1, 3, 3],
                },
                Layer::MaxPool2d {
                    pool_size: 2,
                    input_shape: [1, 4, 4],
                },
                Layer::Flatten {
                    input_shape: vec![1, 2, 2],
                },
                Layer::Dense {
                    weights: vec![0.5, -1.0, 0.3, 0.2, -0.25, 0.5, 1.0, -0.6],
                    bias: vec![0.0, 0.2],
                    in_features: 4,
                    out_features: 2,
                },
            ],
        )
        .unwrap();
        let region = InputRegion::new(vec![0.1; 9], 0.4).unwrap();
        let pair = ClassPair::new(1, 0).unwrap();
        let b = propagate_intervals(&net, &region).unwrap();
        let (lp, layout) = build_joint_lp_with(
            &net,
            &net,
            &region,
            pair,
            &b,
            &b,
            ProblemVariant::JointMargin,
            &BuildOptions::default(),
        )
        .unwrap();
        for x in sample_points(&region, 300, 77).unwrap() {
            let point = embed_execution(&layout, ProblemVariant::JointMargin, &net, &net, &x)
                .unwrap();
            let viol = lp.max_violation(&point);
            assert!(viol <= 1e-9, "execution infeasible by {viol}");
            // Identical networks: the joint margin objective is identically 0.
            assert!(lp.eval_objective(&point).abs() <= 1e-12);
        }
    }

    #[test]
    fn pure_implication_adds_the_margin_row() {
        let fixture = make_fixture(FixtureKind::DesignedOneWay, 0).unwrap();
        let (implied, implier) = (&fixture.networks[0], &fixture.networks[1]);
        let region = fixture.region.unwrap();
        let (lp, layout) = build_pair(
            implied,
            implier,
            &region,
            ProblemVariant::JointPureImplication,
        );
        let row = lp
            .constraints
            .iter()
            .find(|c| c.name == "implier_margin")
            .expect("margin row");
        assert_eq!(row.relation, Relation::Le);
        assert_eq!(row.rhs, -1e-6);
        let yi = layout.logit(NetworkSide::Net2, 0).unwrap();
        let yj = layout.logit(NetworkSide::Net2, 1).unwrap();
        let mut coeffs = row.coeffs.clone();
        coeffs.sort_by_key(|&(c, _)| c);
        let mut want = vec![(yi, -1.0), (yj, 1.0)];
        want.sort_by_key(|&(c, _)| c);
        assert_eq!(coeffs, want);
        // The objective only references net1 logits.
        assert_eq!(lp.objective.len(), 2);
    }

    #[test]
    fn independent_variants_omit_the_other_block() {
        let fixture = make_fixture(FixtureKind::RandomSmall, 9).unwrap();
        let (a, b) = (&fixture.networks[0], &fixture.networks[1]);
        let region = InputRegion::new(vec![0.0; a.input_len()], 0.1).unwrap();
        let (lp2, layout2) = build_pair(a, b, &region, ProblemVariant::IndependentNet2);
        assert!(layout2.output(NetworkSide::Net1, 0, 0).is_err());
        assert!(lp2.var_names.iter().all(|n| !n.starts_with("n1_")));
        // Objective is -(y_i - y_j) = y_j - y_i.
        let yi = layout2.logit(NetworkSide::Net2, 0).unwrap();
        let yj = layout2.logit(NetworkSide::Net2, 1).unwrap();
        let mut obj = lp2.objective.clone();
        obj.sort_by_key(|&(c, _)| c);
        let mut want = vec![(yj, 1.0), (yi, -1.0)];
        want.sort_by_key(|&(c, _)| c);
        assert_eq!(obj, want);
    }

    #[test]
    fn zero_width_unstable_interval_degrades_to_equality() {
        // A dense layer with zero weights and zero bias pins the
        // pre-activation to exactly [0, 0]; the phase slack keeps it
        // Unstable, and the widened triangle would divide by zero. The
        // lowering must fall back to the identity equality.
        let net = relu_net(vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0], 2, 2);
        let region = InputRegion::new(vec![0.0, 0.0], 1.0).unwrap();
        let (lp, _) = build_pair(&net, &net, &region, ProblemVariant::JointMargin);
        for c in &lp.constraints {
            for &(_, v) in &c.coeffs {
                assert!(v.is_finite(), "row {} has non-finite coefficient", c.name);
            }
        }
        assert!(lp.constraints.iter().any(|c| c.name == "n1_l1_relu_eq_0"));
        assert!(!lp.constraints.iter().any(|c| c.name == "n1_l1_relu_up_0"));
    }

    #[test]
    fn unsound_audit_hook_replaces_triangles_with_equalities() {
        let net = relu_net(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2);
        let region = InputRegion::new(vec![0.0, 0.0], 1.0).unwrap();
        let b = propagate_intervals(&net, &region).unwrap();
        let opts = BuildOptions {
            unsound_active_relu: true,
            ..BuildOptions::default()
        };
        let (lp, _) = build_joint_lp_with(
            &net,
            &net,
            &region,
            ClassPair::new(0, 1).unwrap(),
            &b,
            &b,
            ProblemVariant::JointMargin,
            &opts,
        )
        .unwrap();
        assert!(lp.constraints.iter().all(|c| !c.name.contains("_relu_up_")));
        assert!(lp.constraints.iter().any(|c| c.name == "n1_l1_relu_eq_0"));
    }

    #[test]
    fn export_is_deterministic_and_reparses() {
        let fixture = make_fixture(FixtureKind::RandomSmall, 4).unwrap();
        let (a, b) = (&fixture.networks[0], &fixture.networks[1]);
        let region = InputRegion::new(vec![0.05; a.input_len()], 0.2).unwrap();
        let (lp, _) = build_pair(a, b, &region, ProblemVariant::JointMargin);
        let once = render_lp(&lp);
        let twice = render_lp(&lp);
        assert_eq!(once, twice, "export must be byte-stable");

        // Sections appear in order and every row/bound line is present.
        assert!(once.starts_with("Minimize\n obj:"));
        let rows = once
            .lines()
            .skip_while(|l| *l != "Subject To")
            .skip(1)
            .take_while(|l| *l != "Bounds")
            .count();
        assert_eq!(rows, lp.constraints.len());
        let bounds = once
            .lines()
            .skip_while(|l| *l != "Bounds")
            .skip(1)
            .take_while(|l| *l != "End")
            .count();
        assert_eq!(bounds, lp.num_vars);

        // Round-trip the numbers of one affine row through the text.
        let line = once
            .lines()
            .find(|l| l.trim_start().starts_with("n1_l0_aff_0:"))
            .expect("first affine row");
        let (_, body) = line.split_once(':').unwrap();
        let (terms, rhs) = body.rsplit_once('=').unwrap();
        let rhs: f64 = rhs.trim().parse().unwrap();
        let row = &lp.constraints[0];
        assert_eq!(row.name, "n1_l0_aff_0");
        assert_eq!(rhs, row.rhs, "rhs must round-trip exactly");
        // Reconstruct coefficient magnitudes from the term list.
        let mut toks = terms.split_whitespace().peekable();
        let mut parsed: Vec<f64> = Vec::new();
        let mut sign = 1.0;
        while let Some(t) = toks.next() {
            match t {
                "+" => sign = 1.0,
                "-" => sign = -1.0,
                _ => {
                    if let Ok(mag) = t.parse::<f64>() {
                        parsed.push(sign * mag);
                        sign = 1.0;
                        toks.next();
                    }
                }
            }
        }
        let want: Vec<f64> = row.coeffs.iter().map(|&(_, v)| v).collect();
        assert_eq!(parsed, want, "coefficients must round-trip exactly");
    }

    #[test]
    fn trivial_lp_exports_bounds_only() {
        let lp = LinearProgram {
            num_vars: 1,
            var_low: vec![0.0],
            var_high: vec![1.0],
            var_names: vec!["x".into()],
            constraints: vec![],
            objective: vec![(0, 1.0)],
        };
        let text = render_lp(&lp);
        assert_eq!(
            text,
            "Minimize\n obj: 1 x\nSubject To\nBounds\n 0 <= x <= 1\nEnd\n"
        );
    }

    #[test]
    fn relu_as_first_layer_reads_the_shared_input() {
        let net = Network::new(
            "leading-relu",
            vec![
                Layer::Relu {
                    input_shape: vec![2],
                },
                Layer::Dense {
                    weights: vec![1.0, 1.0, 0.0, 0.0],
                    bias: vec![0.0, 0.0],
                    in_features: 2,
                    out_features: 2,
                },
            ],
        )
        .unwrap();
        let region = InputRegion::new(vec![0.0, 0.0], 1.0).unwrap();
        let (lp, layout) = build_pair(&net, &net, &region, ProblemVariant::JointMargin);
        // The triangle rows of layer 0 reference input columns directly.
        let up = lp
            .constraints
            .iter()
            .find(|c| c.name == "n1_l0_relu_up_0")
            .expect("chord row");
        assert!(up.coeffs.iter().any(|&(c, _)| c == layout.input(0).unwrap()));

        // Feasibility still holds.
        let pair = ClassPair::new(0, 1).unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..200 {
            let x = vec![rng.next_range(-1.0, 1.0), rng.next_range(-1.0, 1.0)];
            let point =
                embed_execution(&layout, ProblemVariant::JointMargin, &net, &net, &x).unwrap();
            assert!(lp.max_violation(&point) <= 1e-9);
            let want = log_rpr(&net.forward(&x).unwrap(), &net.forward(&x).unwrap(), pair).unwrap();
            assert!((lp.eval_objective(&point) - want).abs() <= 1e-12);
        }
    }
}
