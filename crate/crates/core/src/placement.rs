//! QUBO → unit-disk atom placement.
//!
//! QUBO entries are read as logits of edge appearance probabilities
//! (`p(v, w) ∝ exp(-Q_vw / 2)`), and atoms repel each other in proportion to
//! those probabilities whenever they come closer than the minimum spacing.
//! The resulting geometry defines a blockade graph whose independent sets are
//! the states a neutral-atom device can reach; [`sample_blockade_states`] is
//! a classical sampler over those sets.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::boltzmann::{sigmoid, GibbsConfig, Qubo, SampleBatch};
use crate::encoding::BitVector;
use crate::{seeded_rng, Error, Result};

const METERS_PER_MICRON: f64 = 1e-6;

/// Geometry limits of the device, in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceConstraints {
    pub x_extent_max: f64,
    pub y_extent_max: f64,
    pub min_distance: f64,
    /// Nonzero y-differences must exceed this.
    pub y_gap: f64,
    pub blockade_radius: f64,
}

impl Default for DeviceConstraints {
    fn default() -> Self {
        Self {
            x_extent_max: 75.0,
            y_extent_max: 76.0,
            min_distance: 4.0,
            y_gap: 4.0,
            blockade_radius: 4.0,
        }
    }
}

impl DeviceConstraints {
    fn validate(&self) -> Result<()> {
        let all = [
            self.x_extent_max,
            self.y_extent_max,
            self.min_distance,
            self.y_gap,
            self.blockade_radius,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "device constraints must be positive: {self:?}"
            )))
        }
    }
}

/// Softmax of `-Q_ij / 2` over the unordered pairs `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbabilities {
    n: usize,
    p: Vec<f64>,
}

impl EdgeProbabilities {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, v: usize, w: usize) -> f64 {
        self.p[v * self.n + w]
    }

    /// Sum over the pairs `i < j`.
    pub fn total(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| (i + 1..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .sum()
    }
}

pub fn edge_probabilities(qubo: &Qubo) -> EdgeProbabilities {
    let n = qubo.n();
    let pairs = || (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    let shift = pairs()
        .map(|(i, j)| -0.5 * qubo.get(i, j))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p = vec![0.0; n * n];
    let mut total = 0.0;
    for (i, j) in pairs() {
        let w = (-0.5 * qubo.get(i, j) - shift).exp();
        p[i * n + j] = w;
        p[j * n + i] = w;
        total += w;
    }
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    }
    EdgeProbabilities { n, p }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    pub iterations: usize,
    /// Step size in the SI units of the force loop (positions in meters).
    pub step_size: f64,
    /// The initial circle has radius `1 / c` meters.
    pub c: f64,
    /// Only used to pick a direction for atoms that coincide exactly.
    pub seed: u64,
}

impl PlacementParams {
    /// `c` whose initial circle has diameter `0.9 * min(x_extent, y_extent)`.
    pub fn default_c(constraints: &DeviceConstraints) -> f64 {
        let diameter_um = 0.9 * constraints.x_extent_max.min(constraints.y_extent_max);
        1.0 / (0.5 * diameter_um * METERS_PER_MICRON)
    }

    pub fn new(
        iterations: usize,
        step_size: f64,
        constraints: &DeviceConstraints,
        seed: u64,
    ) -> Self {
        Self {
            iterations,
            step_size,
            c: Self::default_c(constraints),
            seed,
        }
    }
}

/// Outcome of one geometric check, listing every offending pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub passed: bool,
    pub violations: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintRecord {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Atoms involved in at least one violation.
    pub fn offending_atoms(&self, n: usize) -> Vec<bool> {
        let mut bad = vec![false; n];
        for (a, b) in self.checks.iter().flat_map(|c| &c.violations) {
            bad[*a] = true;
            bad[*b] = true;
        }
        bad
    }
}

pub const CHECK_X_EXTENT: &str = "x_extent";
pub const CHECK_Y_EXTENT: &str = "y_extent";
pub const CHECK_MIN_DISTANCE: &str = "min_distance";
pub const CHECK_Y_SEPARATION: &str = "y_separation";

/// Atom coordinates in micrometers plus their last validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub coordinates_um: Vec<[f64; 2]>,
    pub constraints: DeviceConstraints,
    pub record: ConstraintRecord,
}

impl Placement {
    pub fn new(coordinates_um: Vec<[f64; 2]>, constraints: DeviceConstraints) -> Self {
        let record = validate_constraints(&coordinates_um, &constraints);
        Self {
            coordinates_um,
            constraints,
            record,
        }
    }

    pub fn len(&self) -> usize {
        self.coordinates_um.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates_um.is_empty()
    }

    /// Whether every atom lies in the centred `x_extent × y_extent` box.
    pub fn inside_area(&self) -> bool {
        self.coordinates_um
            .iter()
            .all(|&[x, y]| in_area(x, y, &self.constraints))
    }
}

fn in_area(x: f64, y: f64, c: &DeviceConstraints) -> bool {
    x.abs() <= 0.5 * c.x_extent_max && y.abs() <= 0.5 * c.y_extent_max
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Initial circle layout in micrometers: vertex `v` (1-based) at angle `-2πv/n`.
pub fn circle_layout(n: usize, c: f64) -> Vec<[f64; 2]> {
    circle_layout_m(n, c).into_iter().map(to_microns).collect()
}

fn circle_layout_m(n: usize, c: f64) -> Vec<[f64; 2]> {
    (1..=n)
        .map(|v| {
            let angle = -2.0 * v as f64 * PI / n as f64;
            [angle.cos() / c, angle.sin() / c]
        })
        .collect()
}

fn to_microns([x, y]: [f64; 2]) -> [f64; 2] {
    [x / METERS_PER_MICRON, y / METERS_PER_MICRON]
}

/// Repulsive force-directed placement.
///
/// Positions start on a circle of radius `1/c` and are updated
/// synchronously: every pair closer than `min_distance` pushes its atoms
/// apart with weight `p(v, w) (1 + |N(v)|) / d`, where `N(v)` are the atoms
/// within `min_distance` of `v`. Moves that would leave the centred device
/// area are rejected. Constraint violations are recorded, never fatal.
pub fn force_placement(
    qubo: &Qubo,
    constraints: &DeviceConstraints,
    params: &PlacementParams,
) -> Result<Placement> {
    constraints.validate()?;
    if params.c.is_nan() || params.c <= 0.0 || params.step_size.is_nan() || params.step_size < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need c > 0 and step_size >= 0, got {params:?}"
        )));
    }
    let n = qubo.n();
    let probs = edge_probabilities(qubo);
    let trigger = constraints.min_distance * METERS_PER_MICRON;
    let half_x = 0.5 * constraints.x_extent_max * METERS_PER_MICRON;
    let half_y = 0.5 * constraints.y_extent_max * METERS_PER_MICRON;
    let mut rng = seeded_rng(params.seed, 0);

    let mut pos = circle_layout_m(n, params.c);
    let mut next = pos.clone();
    let mut close: Vec<(usize, f64)> = Vec::with_capacity(n);

    for _ in 0..params.iterations {
        let mut moved = false;
        let mut random = false;
        for v in 0..n {
            close.clear();
            close.extend((0..n).filter(|&w| w != v).filter_map(|w| {
                let d = distance(pos[v], pos[w]);
                (d <= trigger).then_some((w, d))
            }));
            next[v] = pos[v];
            if close.is_empty() {
                continue;
            }
            let crowd = 1.0 + close.len() as f64;
            let (mut dx, mut dy) = (0.0, 0.0);
            for &(w, d) in &close {
                let (ux, uy, d) = if d > 0.0 {
                    ((pos[v][0] - pos[w][0]) / d, (pos[v][1] - pos[w][1]) / d, d)
                } else {
                    random = true;
                    let angle = rng.gen_range(0.0..2.0 * PI);
                    (angle.cos(), angle.sin(), 1e-9)
                };
                let gamma = probs.get(v, w) * crowd / d;
                dx += gamma * ux;
                dy += gamma * uy;
            }
            let candidate = [
                pos[v][0] + params.step_size * dx,
                pos[v][1] + params.step_size * dy,
            ];
            if candidate[0].abs() <= half_x && candidate[1].abs() <= half_y {
                next[v] = candidate;
                moved = true;
            }
        }
        // A frozen layout without random tie-breaks stays frozen.
        if !moved && !random {
            break;
        }
        std::mem::swap(&mut pos, &mut next);
    }

    Ok(Placement::new(
        pos.into_iter().map(to_microns).collect(),
        *constraints,
    ))
}

/// Replaces every cluster of transitively `epsilon`-close y-values by its mean.
pub fn pin_y_coordinates(placement: &Placement, epsilon: f64) -> Result<Placement> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must be >= 0"
        )));
    }
    let mut coords = placement.coordinates_um.clone();
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&a, &b| coords[a][1].total_cmp(&coords[b][1]));
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && coords[order[end]][1] - coords[order[end - 1]][1] <= epsilon {
            end += 1;
        }
        let cluster = &order[start..end];
        if cluster
            .iter()
            .any(|&i| coords[i][1] != coords[cluster[0]][1])
        {
            let mean = cluster.iter().map(|&i| coords[i][1]).sum::<f64>() / cluster.len() as f64;
            for &i in cluster {
                coords[i][1] = mean;
            }
        }
        start = end;
    }
    Ok(Placement::new(coords, placement.constraints))
}

/// Checks x/y extents, minimum spacing and the rows rule for y-differences.
pub fn validate_constraints(coords: &[[f64; 2]], c: &DeviceConstraints) -> ConstraintRecord {
    let mut x_extent = Vec::new();
    let mut y_extent = Vec::new();
    let mut spacing = Vec::new();
    let mut rows = Vec::new();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let (a, b) = (coords[i], coords[j]);
            let dy = (a[1] - b[1]).abs();
            if (a[0] - b[0]).abs() > c.x_extent_max {
                x_extent.push((i, j));
            }
            if dy > c.y_extent_max {
                y_extent.push((i, j));
            }
            if distance(a, b) < c.min_distance {
                spacing.push((i, j));
            }
            if dy != 0.0 && dy <= c.y_gap {
                rows.push((i, j));
            }
        }
    }
    let check = |name: &str, violations: Vec<(usize, usize)>| ConstraintCheck {
        name: name.to_string(),
        passed: violations.is_empty(),
        violations,
    };
    ConstraintRecord {
        checks: vec![
            check(CHECK_X_EXTENT, x_extent),
            check(CHECK_Y_EXTENT, y_extent),
            check(CHECK_MIN_DISTANCE, spacing),
            check(CHECK_Y_SEPARATION, rows),
        ],
    }
}

/// Unit-disk graph: atoms closer than the blockade radius are adjacent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockadeGraph {
    adjacency: Vec<Vec<usize>>,
}

impl BlockadeGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidArgument(format!(
                    "bad edge ({a}, {b}) for {n} vertices"
                )));
            }
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        adjacency.iter_mut().for_each(|l| l.sort_unstable());
        Ok(Self { adjacency })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, l)| l.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    /// Whether no two adjacent vertices are both set.
    pub fn is_independent(&self, z: &BitVector) -> bool {
        let bits = z.as_slice();
        self.edges()
            .iter()
            .all(|&(a, b)| !(bits[a] == 1 && bits[b] == 1))
    }
}

pub fn blockade_graph(coords_um: &[[f64; 2]], radius: f64) -> Result<BlockadeGraph> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blockade radius {radius} must be positive"
        )));
    }
    let mut edges = Vec::new();
    for i in 0..coords_um.len() {
        for j in i + 1..coords_um.len() {
            let d = distance(coords_um[i], coords_um[j]);
            if d > 0.0 && d <= radius {
                edges.push((i, j));
            }
        }
    }
    BlockadeGraph::from_edges(coords_um.len(), &edges)
}

/// Weight `exp(λ |x|)` restricted to independent sets of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockadeSamplerConfig {
    pub lambda: f64,
    pub burn_in: usize,
    pub thinning: usize,
}

impl Default for BlockadeSamplerConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            burn_in: 100,
            thinning: 10,
        }
    }
}

/// Gibbs sampler over independent sets, started from the empty set.
///
/// A vertex with an occupied neighbour is forced to 0; otherwise it is 1
/// with probability `σ(λ)`. Every state visited is independent.
pub fn sample_blockade_states(
    graph: &BlockadeGraph,
    count: usize,
    config: &BlockadeSamplerConfig,
    seed: u64,
) -> SampleBatch {
    let n = graph.len();
    let mut rng = seeded_rng(seed, 0);
    let p_one = sigmoid(config.lambda);
    let mut z = vec![0u8; n];
    let mut occupied = vec![0usize; n];
    let mut sweep = |z: &mut [u8], occupied: &mut [usize]| {
        for v in 0..n {
            let bit = u8::from(occupied[v] == 0 && rng.gen::<f64>() < p_one);
            if bit != z[v] {
                z[v] = bit;
                for &w in graph.neighbors(v) {
                    if bit == 1 {
                        occupied[w] += 1;
                    } else {
                        occupied[w] -= 1;
                    }
                }
            }
        }
    };
    for _ in 0..config.burn_in {
        sweep(&mut z, &mut occupied);
    }
    let mut vectors = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..config.thinning.max(1) {
            sweep(&mut z, &mut occupied);
        }
        vectors.push(BitVector::from_bits(z.iter().copied()));
    }
    SampleBatch {
        vectors,
        seed,
        config: GibbsConfig {
            burn_in: config.burn_in,
            thinning: config.thinning,
            chains: 1,
        },
    }
}

/// SVG drawing: atoms as dots, blockade edges as lines, offending atoms in red.
pub fn render_svg(placement: &Placement, graph: &BlockadeGraph) -> String {
    const SCALE: f64 = 6.0;
    const MARGIN: f64 = 40.0;
    let c = &placement.constraints;
    let (half_x, half_y) = (0.5 * c.x_extent_max, 0.5 * c.y_extent_max);
    let width = 2.0 * half_x * SCALE + 2.0 * MARGIN;
    let height = 2.0 * half_y * SCALE + 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x + half_x) * SCALE;
    let py = |y: f64| MARGIN + (half_y - y) * SCALE;
    let failed = !placement.record.all_passed();
    let bad = placement.record.offending_atoms(placement.len());

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let frame = if failed { "#c62828" } else { "#444" };
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="{frame}"/>"#,
        2.0 * half_x * SCALE,
        2.0 * half_y * SCALE
    );
    let mut tick = (-half_x / 10.0).ceil() * 10.0;
    while tick <= half_x {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{tick:.0}</text>"#,
            px(tick),
            height - MARGIN + 14.0
        );
        tick += 10.0;
    }
    let mut tick = (-half_y / 10.0).ceil() * 10.0;
    while tick <= half_y {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{tick:.0}</text>"#,
            MARGIN - 6.0,
            py(tick) + 3.0
        );
        tick += 10.0;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">x (µm)</text>"#,
        width / 2.0,
        height - 6.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="12" y="{:.1}" font-size="11" transform="rotate(-90 12 {:.1})">y (µm)</text>"#,
        height / 2.0,
        height / 2.0
    );
    for (a, b) in graph.edges() {
        let (pa, pb) = (placement.coordinates_um[a], placement.coordinates_um[b]);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-width="1"/>"##,
            px(pa[0]),
            py(pa[1]),
            px(pb[0]),
            py(pb[1])
        );
    }
    for (i, &[x, y]) in placement.coordinates_um.iter().enumerate() {
        let fill = if bad[i] { "#c62828" } else { "#1565c0" };
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{fill}"/>"#,
            px(x),
            py(y)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
