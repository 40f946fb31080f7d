//! Ground-truth oracles and deterministic fixtures.
//!
//! The analytic machinery (interval bounds, LP relaxation, simplex) is
//! falsifiable against brute force: [`sample_extrema`] and [`grid_extrema`]
//! evaluate the exact log relative prediction ratio at many points of a
//! region and report the observed extrema, which a sound lower/upper bound
//! must bracket. [`make_fixture`] builds small networks with known analytic
//! behavior for the same purpose.
//!
//! Everything is seeded. The generator is SplitMix64 (Steele, Lea &
//! Flood's 64-bit mix: state advances by 0x9E3779B97F4A7C15, output is the
//! xor-shift/multiply finalizer with constants 0xBF58476D1CE4E5B9 and
//! 0x94D049BB133111EB), with doubles drawn as the top 53 bits scaled by
//! 2^-53. It is reproduced in a dozen lines from this description, so
//! recorded oracle results can be regenerated by any implementation.

use crate::bounds::InputRegion;
use crate::model::{log_rpr, ClassPair, Layer, Network};
use crate::{Error, Result};

/// SplitMix64: tiny, fast, and stable across platforms. See the module
/// docs for the exact algorithm.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. The modulo bias is below 2^-50 for the
    /// small `n` used here.
    pub fn next_below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Latin hypercube sample of `n` points inside the region's box: each
/// coordinate is stratified into `n` equal slices and the slices are
/// permuted independently per dimension, so every 1-D projection is evenly
/// covered. Deterministic in `seed`.
pub fn sample_points(region: &InputRegion, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let (low, high) = region.region_box()?;
    let dim = low.len();
    let mut rng = SplitMix64::new(seed);
    let mut points = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.next_below(i + 1));
        }
        for (s, point) in points.iter_mut().enumerate() {
            let t = (perm[s] as f64 + rng.next_f64()) / n as f64;
            point[d] = low[d] + (high[d] - low[d]) * t;
        }
    }
    Ok(points)
}

/// Observed extrema of the exact log relative prediction ratio over a
/// point set, together with the witnesses.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrema {
    pub min: f64,
    pub max: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
    pub evaluated: usize,
}

/// Estimate the extrema of `log_rpr(net1(x), net2(x), pair)` over the
/// region by exact evaluation at `n_samples` Latin hypercube points, the
/// center, and - when the dimension is at most 12 - every corner of the
/// box. Corners matter because the objective is affine within each fixed
/// activation pattern, so box extrema are often attained there.
///
/// The result underestimates the true range (it is a sample), which is the
/// correct direction for falsifying claimed sound bounds.
pub fn sample_extrema(
    net1: &Network,
    net2: &Network,
    region: &InputRegion,
    pair: ClassPair,
    n_samples: usize,
    seed: u64,
) -> Result<Extrema> {
    if n_samples == 0 {
        return Err(Error::Oracle("need at least one sample".into()));
    }
    crate::model::check_compatible(net1, net2)?;
    let mut points = sample_points(region, n_samples, seed)?;
    points.push(region.center().to_vec());
    let (low, high) = region.region_box()?;
    let dim = low.len();
    if dim <= 12 {
        for mask in 0u64..(1 << dim) {
            let corner: Vec<f64> = (0..dim)
                .map(|d| if mask >> d & 1 == 1 { high[d] } else { low[d] })
                .collect();
            points.push(corner);
        }
    }
    evaluate_extrema(net1, net2, pair, &points)
}

/// Exhaustive grid evaluation of the exact log relative prediction ratio.
/// Only for dimension at most 4; higher dimensions must use
/// [`sample_extrema`].
pub fn grid_extrema(
    net1: &Network,
    net2: &Network,
    region: &InputRegion,
    pair: ClassPair,
    points_per_dim: usize,
) -> Result<Extrema> {
    crate::model::check_compatible(net1, net2)?;
    let (low, high) = region.region_box()?;
    let dim = low.len();
    if dim > 4 {
        return Err(Error::Oracle(format!(
            "grid enumeration over {dim} dimensions is infeasible; use sample_extrema"
        )));
    }
    if points_per_dim < 2 {
        return Err(Error::Oracle("need at least 2 points per dimension".into()));
    }
    let total = points_per_dim.pow(dim as u32);
    let mut points = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut point = Vec::with_capacity(dim);
        for d in 0..dim {
            let i = idx % points_per_dim;
            idx /= points_per_dim;
            let t = i as f64 / (points_per_dim - 1) as f64;
            point.push(low[d] + (high[d] - low[d]) * t);
        }
        points.push(point);
    }
    evaluate_extrema(net1, net2, pair, &points)
}

fn evaluate_extrema(
    net1: &Network,
    net2: &Network,
    pair: ClassPair,
    points: &[Vec<f64>],
) -> Result<Extrema> {
    let mut best: Option<Extrema> = None;
    for point in points {
        let v = log_rpr(&net1.forward(point)?, &net2.forward(point)?, pair)?;
        match &mut best {
            None => {
                best = Some(Extrema {
                    min: v,
                    max: v,
                    argmin: point.clone(),
                    argmax: point.clone(),
                    evaluated: 1,
                })
            }
            Some(b) => {
                b.evaluated += 1;
                if v < b.min {
                    b.min = v;
                    b.argmin = point.clone();
                }
                if v > b.max {
                    b.max = v;
                    b.argmax = point.clone();
                }
            }
        }
    }
    best.ok_or_else(|| Error::Oracle("no evaluation points".into()))
}

/// Fixture families with known analytic behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// A hand-analyzable 2-input, 2-class pair. The first network's margin
    /// for class 0 dominates the second's by a fixed gap over the fixture
    /// region, while the second network misclassifies part of the region:
    /// agreement holds one way, fails the other way, and the implier is
    /// provably non-robust.
    DesignedOneWay,
    /// A seeded pair of compatible random dense/ReLU networks with at most
    /// 3 weight layers, hidden widths up to 8, 2-4 inputs and 2-3 classes.
    RandomSmall,
    /// A single network whose logits are identically zero: differential
    /// analysis against it must collapse to single-network analysis.
    UniformConstant { inputs: usize, classes: usize },
}

/// A fixture: one or two networks plus, when the family defines them, the
/// region and ground-truth label the fixture's guarantees refer to.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub networks: Vec<Network>,
    pub region: Option<InputRegion>,
    pub label: Option<usize>,
}

/// Build a fixture. `seed` only matters for [`FixtureKind::RandomSmall`];
/// the other families are fully deterministic.
pub fn make_fixture(kind: FixtureKind, seed: u64) -> Result<Fixture> {
    match kind {
        FixtureKind::DesignedOneWay => designed_one_way_fixture(),
        FixtureKind::RandomSmall => random_small_fixture(seed),
        FixtureKind::UniformConstant { inputs, classes } => {
            if inputs == 0 || classes < 2 {
                return Err(Error::Oracle(format!(
                    "uniform-constant fixture needs inputs >= 1 and classes >= 2, \
                     got {inputs} and {classes}"
                )));
            }
            Ok(Fixture {
                networks: vec![Network::new(
                    "uniform-constant",
                    vec![Layer::Dense {
                        weights: vec![0.0; inputs * classes],
                        bias: vec![0.0; classes],
                        in_features: inputs,
                        out_features: classes,
                    }],
                )?],
                region: None,
                label: None,
            })
        }
    }
}

/// See [`FixtureKind::DesignedOneWay`]. Both networks share the hidden layer
/// `h = relu(z + 2)`, which stays strictly active on the fixture box
/// (inputs are within 0.5 of the origin, so the pre-activation is at least
/// 1.5). Their class-0 margins are therefore exactly affine on the box:
///
/// * implied network: `z0 + 0.5`, non-negative everywhere on the box;
/// * implier network: `z0 + 0.2`, negative for `z0 < -0.2` - a concrete
///   robustness violation - yet 0.3 below the implied margin everywhere.
///
/// So the implied network is correct at every box point where the implier
/// is (gap 0.3 > 0), while the converse fails (gap -0.3 < 0).
fn designed_one_way_fixture() -> Result<Fixture> {
    let hidden = |name: &str, final_bias: f64| {
        Network::new(
            name,
            vec![
                Layer::Dense {
                    weights: vec![1.0, 0.0, 0.0, 1.0],
                    bias: vec![2.0, 2.0],
                    in_features: 2,
                    out_features: 2,
                },
                Layer::Relu {
                    input_shape: vec![2],
                },
                Layer::Dense {
                    weights: vec![1.0, 0.0, 0.0, 0.0],
                    bias: vec![final_bias, 0.0],
                    in_features: 2,
                    out_features: 2,
                },
            ],
        )
    };
    Ok(Fixture {
        networks: vec![hidden("implied", -1.5)?, hidden("implier", -1.8)?],
        region: Some(InputRegion::new(vec![0.0, 0.0], 0.5)?),
        label: Some(0),
    })
}

fn random_small_fixture(seed: u64) -> Result<Fixture> {
    let mut rng = SplitMix64::new(seed);
    let inputs = 2 + rng.next_below(3);
    let classes = 2 + rng.next_below(2);
    let mut networks = Vec::with_capacity(2);
    for which in 0..2 {
        let depth = 1 + rng.next_below(3);
        let mut layers = Vec::new();
        let mut cur = inputs;
        for d in 0..depth {
            let out = if d + 1 == depth {
                classes
            } else {
                2 + rng.next_below(7)
            };
            let weights = (0..cur * out).map(|_| rng.next_range(-1.0, 1.0)).collect();
            let bias = (0..out).map(|_| rng.next_range(-0.5, 0.5)).collect();
            layers.push(Layer::Dense {
                weights,
                bias,
                in_features: cur,
                out_features: out,
            });
            if d + 1 < depth {
                layers.push(Layer::Relu {
                    input_shape: vec![out],
                });
            }
            cur = out;
        }
        networks.push(Network::new(format!("random-{seed}-{which}"), layers)?);
    }
    Ok(Fixture {
        networks,
        region: None,
        label: None,
    })
}
