//! Vietoris-Rips persistent homology in dimensions 0 to 2 over Z/2.
//!
//! H0 comes from a union-find pass over the edges. Higher dimensions use the
//! cohomology reduction with clearing: columns are `d`-simplices in reverse
//! filtration order, their coboundaries are generated on the fly from the
//! combinatorial number system, and a column whose smallest cofacet has the
//! same diameter and is still unpaired is paired at once.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TdaError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("points have inconsistent dimension or non-finite coordinates")]
    InvalidCloud,
    #[error("{points} points exceed the limit of {limit}")]
    TooManyPoints { points: usize, limit: usize },
    #[error("{simplices} triangles exceed the budget of {budget}; try about {suggested_k} landmarks")]
    SimplexBudget {
        simplices: usize,
        budget: usize,
        suggested_k: usize,
    },
    #[error("empty persistence diagram")]
    EmptyDiagram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub dim: usize,
    /// Row-major.
    pub points: Vec<f64>,
    pub label: String,
}

impl PointCloud {
    pub fn new(dim: usize, points: Vec<f64>, label: &str) -> Result<Self, TdaError> {
        if dim == 0 || !points.len().is_multiple_of(dim) || points.iter().any(|v| !v.is_finite()) {
            return Err(TdaError::InvalidCloud);
        }
        if points.is_empty() {
            return Err(TdaError::EmptyCloud);
        }
        Ok(PointCloud {
            dim,
            points,
            label: label.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Centers the cloud and divides by the largest resulting norm.
    pub fn normalized(&self) -> PointCloud {
        let n = self.len();
        let mut mean = vec![0.0; self.dim];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(self.point(i)) {
                *m += v / n as f64;
            }
        }
        let mut points: Vec<f64> = (0..n)
            .flat_map(|i| self.point(i).iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
            .collect();
        let max_norm = points
            .chunks(self.dim)
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if max_norm > 0.0 {
            points.iter_mut().for_each(|v| *v /= max_norm);
        }
        PointCloud {
            dim: self.dim,
            points,
            label: self.label.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            dim: self.dim,
            points: indices.iter().flat_map(|&i| self.point(i).to_vec()).collect(),
            label: self.label.clone(),
        }
    }
}

/// A landmark subsample and whether the cloud was too small to subsample.
#[derive(Clone, Debug, PartialEq)]
pub struct Landmarks {
    pub cloud: PointCloud,
    pub indices: Vec<usize>,
    pub undersized: bool,
}

/// Farthest-point subsample of `k` points; the first point comes from the
/// `landmark` substream of `seed`, ties go to the lowest index.
pub fn maxmin_landmarks(cloud: &PointCloud, k: usize, seed: u64) -> Landmarks {
    let n = cloud.len();
    if n < k {
        return Landmarks {
            cloud: cloud.clone(),
            indices: (0..n).collect(),
            undersized: true,
        };
    }
    let mut rng = seeds::rng(seed, "landmark", 0);
    let first = rng.gen_range(0..n);
    let mut indices = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| cloud.distance(first, i)).collect();
    while indices.len() < k {
        let mut best = 0;
        for i in 1..n {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        indices.push(best);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(cloud.distance(best, i));
        }
    }
    Landmarks {
        cloud: cloud.subset(&indices),
        indices,
        undersized: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub birth: f64,
    /// `f64::INFINITY` for essential classes.
    pub death: f64,
}

impl Bar {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }

    pub fn alive_at(&self, t: f64) -> bool {
        self.birth <= t && t < self.death
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    /// `bars[k]` holds dimension `k`.
    pub bars: Vec<Vec<Bar>>,
    /// Largest filtration value considered.
    pub max_radius: f64,
}

impl PersistenceDiagram {
    pub fn dimension(&self, k: usize) -> &[Bar] {
        self.bars.get(k).map_or(&[], |v| v.as_slice())
    }

    /// Betti numbers of the Rips complex at scale `t`.
    pub fn betti_at(&self, t: f64) -> Vec<usize> {
        self.bars.iter().map(|b| b.iter().filter(|x| x.alive_at(t)).count()).collect()
    }

    /// `dim,birth,death` rows with `inf` for essential classes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim,birth,death\n");
        for (k, bars) in self.bars.iter().enumerate() {
            for b in bars {
                out.push_str(&format!("{k},{:.10},{}\n", b.birth, fmt_death(b.death)));
            }
        }
        out
    }
}

fn fmt_death(d: f64) -> String {
    if d.is_finite() {
        format!("{d:.10}")
    } else {
        "inf".into()
    }
}

/// Smallest over points of the largest distance to any other point. Beyond it
/// the Rips complex is a cone and has no homology above dimension 0.
pub fn enclosing_radius(dist: &DistanceMatrix) -> f64 {
    (0..dist.n)
        .map(|i| (0..dist.n).map(|j| dist.get(i, j)).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        let n = cloud.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = cloud.distance(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RipsOptions {
    pub max_dim: usize,
    /// `None` uses the enclosing radius.
    pub max_radius: Option<f64>,
    pub max_points: usize,
    pub triangle_budget: usize,
}

impl Default for RipsOptions {
    fn default() -> Self {
        RipsOptions {
            max_dim: 2,
            max_radius: None,
            max_points: 400,
            triangle_budget: 12_000_000,
        }
    }
}

struct Binomial {
    table: Vec<Vec<u64>>,
}

impl Binomial {
    fn new(n: usize, k: usize) -> Self {
        let mut table = vec![vec![0u64; k + 1]; n + 1];
        for i in 0..=n {
            table[i][0] = 1;
            for j in 1..=k.min(i) {
                table[i][j] = table[i - 1][j - 1] + if j < i { table[i - 1][j] } else { 0 };
            }
        }
        Binomial { table }
    }

    fn get(&self, n: usize, k: usize) -> u64 {
        if k > n {
            0
        } else {
            self.table[n][k]
        }
    }
}

/// Column-heap entry; the heap top is the smallest diameter, then the largest
/// index, i.e. the earliest simplex in the filtration order used here.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    diam: f64,
    index: u64,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.diam.total_cmp(&self.diam).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Rips<'a> {
    dist: &'a DistanceMatrix,
    binom: Binomial,
    threshold: f64,
}

impl Rips<'_> {
    /// Vertices of simplex `index` of dimension `dim`, in decreasing order.
    fn vertices(&self, mut index: u64, dim: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut hi = self.dist.n; // exclusive bound on the next vertex
        for k in (1..=dim + 1).rev() {
            // largest v < hi with C(v, k) <= index
            let (mut lo, mut top) = (k - 1, hi - 1);
            while lo < top {
                let mid = (lo + top).div_ceil(2);
                if self.binom.get(mid, k) <= index {
                    lo = mid;
                } else {
                    top = mid - 1;
                }
            }
            out.push(lo);
            index -= self.binom.get(lo, k);
            hi = lo;
        }
    }

    fn index_of(&self, desc: &[usize]) -> u64 {
        let k = desc.len();
        desc.iter().enumerate().map(|(j, &v)| self.binom.get(v, k - j)).sum()
    }

    /// The earliest cofacet if it has diameter exactly `diam`. `scratch`
    /// must already hold the vertices of the simplex.
    fn zero_cofacet(&self, dim: usize, diam: f64, scratch: &[usize]) -> Option<u64> {
        let k = dim + 2;
        let mut above = 0u64;
        let mut below: u64 = scratch.iter().enumerate().map(|(j, &v)| self.binom.get(v, dim + 1 - j)).sum();
        let mut pos = 0;
        for w in (0..self.dist.n).rev() {
            if pos < scratch.len() && scratch[pos] == w {
                above += self.binom.get(w, k - pos);
                below -= self.binom.get(w, dim + 1 - pos);
                pos += 1;
                continue;
            }
            if scratch.iter().all(|&v| self.dist.get(v, w) <= diam) {
                return Some(above + self.binom.get(w, k - pos) + below);
            }
        }
        None
    }

    /// Cofacets within the threshold, as heap entries.
    fn cofacets(&self, index: u64, dim: usize, diam: f64, scratch: &mut Vec<usize>, out: &mut Vec<Entry>) {
        self.vertices(index, dim, scratch);
        out.clear();
        let k = dim + 2;
        // walk the new vertex w from high to low; vertices above w shift one
        // place in the combinatorial number system
        let mut above = 0u64; // contribution of vertices greater than w, at shifted positions
        let mut below: u64 = scratch.iter().enumerate().map(|(j, &v)| self.binom.get(v, dim + 1 - j)).sum();
        let mut pos = 0;
        for w in (0..self.dist.n).rev() {
            if pos < scratch.len() && scratch[pos] == w {
                above += self.binom.get(w, k - pos);
                below -= self.binom.get(w, dim + 1 - pos);
                pos += 1;
                continue;
            }
            let mut d = diam;
            for &v in scratch.iter() {
                d = d.max(self.dist.get(v, w));
            }
            if d <= self.threshold {
                let index = above + self.binom.get(w, k - pos) + below;
                out.push(Entry { diam: d, index });
            }
        }
    }
}

fn pop_pivot(heap: &mut BinaryHeap<Entry>) -> Option<Entry> {
    while let Some(p) = heap.pop() {
        if heap.peek().is_some_and(|q| q.index == p.index) {
            heap.pop();
            continue;
        }
        return Some(p);
    }
    None
}

/// Sorts by index and drops entries that occur an even number of times.
fn cancel_pairs(mut v: Vec<Entry>) -> Vec<Entry> {
    v.sort_by_key(|e| e.index);
    let mut out: Vec<Entry> = Vec::with_capacity(v.len());
    for e in v {
        if out.last().is_some_and(|l| l.index == e.index) {
            out.pop();
        } else {
            out.push(e);
        }
    }
    out
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Persistence diagram of the Rips filtration up to `options.max_dim`.
pub fn rips_persistence(cloud: &PointCloud, options: &RipsOptions) -> Result<PersistenceDiagram, TdaError> {
    let n = cloud.len();
    if n == 0 {
        return Err(TdaError::EmptyCloud);
    }
    if n > options.max_points {
        return Err(TdaError::TooManyPoints {
            points: n,
            limit: options.max_points,
        });
    }
    let dist = DistanceMatrix::from_cloud(cloud);
    rips_persistence_from_distances(&dist, options)
}

pub fn rips_persistence_from_distances(dist: &DistanceMatrix, options: &RipsOptions) -> Result<PersistenceDiagram, TdaError> {
    let n = dist.n;
    assert!(options.max_dim <= 2, "dimensions above 2 are not supported");
    let threshold = options.max_radius.unwrap_or_else(|| enclosing_radius(dist));
    let rips = Rips {
        dist,
        binom: Binomial::new(n + 1, options.max_dim + 2),
        threshold,
    };
    let mut bars = vec![Vec::new(); options.max_dim + 1];

    // edges in filtration order: diameter ascending, index descending
    let mut edges: Vec<Entry> = Vec::new();
    for i in 0..n {
        for j in 0..i {
            let d = dist.get(i, j);
            if d <= threshold {
                edges.push(Entry {
                    diam: d,
                    index: rips.index_of(&[i, j]),
                });
            }
        }
    }
    edges.sort_by(|a, b| b.cmp(a));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut columns: Vec<Entry> = Vec::new();
    let mut verts = Vec::new();
    for e in &edges {
        rips.vertices(e.index, 1, &mut verts);
        let (u, v) = (find(&mut parent, verts[0]), find(&mut parent, verts[1]));
        if u != v {
            // all vertices are born at 0; the younger class dies
            bars[0].push(Bar { birth: 0.0, death: e.diam });
            parent[u.max(v)] = u.min(v);
        } else {
            columns.push(*e);
        }
    }
    let components = (0..n).filter(|&i| find(&mut parent, i) == i).count();
    for _ in 0..components {
        bars[0].push(Bar {
            birth: 0.0,
            death: f64::INFINITY,
        });
    }

    for dim in 1..=options.max_dim {
        // reverse filtration order
        columns.sort();
        let mut pivot_of: FxHashMap<u64, usize> = FxHashMap::default();
        // reduction columns: the column itself plus the simplices added to it
        let mut owners: Vec<Entry> = Vec::new();
        let mut reductions: Vec<Vec<Entry>> = Vec::new();
        let mut scratch = Vec::new();
        let mut cof = Vec::new();
        for &col in &columns {
            rips.vertices(col.index, dim, &mut scratch);
            // emergent pair: the earliest cofacet has the column's diameter
            // and is not claimed yet
            if let Some(first) = rips.zero_cofacet(dim, col.diam, &scratch) {
                if let std::collections::hash_map::Entry::Vacant(slot) = pivot_of.entry(first) {
                    slot.insert(owners.len());
                    owners.push(col);
                    reductions.push(Vec::new());
                    continue;
                }
            }
            rips.cofacets(col.index, dim, col.diam, &mut scratch, &mut cof);
            let mut heap: BinaryHeap<Entry> = cof.iter().copied().collect();
            let mut reduction = Vec::new();
            loop {
                let Some(pivot) = pop_pivot(&mut heap) else {
                    bars[dim].push(Bar {
                        birth: col.diam,
                        death: f64::INFINITY,
                    });
                    break;
                };
                match pivot_of.get(&pivot.index) {
                    Some(&j) => {
                        heap.push(pivot);
                        for &s in std::iter::once(&owners[j]).chain(&reductions[j]) {
                            reduction.push(s);
                            rips.cofacets(s.index, dim, s.diam, &mut scratch, &mut cof);
                            heap.extend(cof.iter().copied());
                        }
                    }
                    None => {
                        if pivot.diam > col.diam {
                            bars[dim].push(Bar {
                                birth: col.diam,
                                death: pivot.diam,
                            });
                        }
                        pivot_of.insert(pivot.index, owners.len());
                        owners.push(col);
                        reductions.push(cancel_pairs(reduction));
                        break;
                    }
                }
            }
        }
        if dim == options.max_dim {
            break;
        }
        // next columns: triangles within the threshold, minus pivots
        let mut next = Vec::new();
        for i in 0..n {
            for j in 0..i {
                let dij = dist.get(i, j);
                if dij > threshold {
                    continue;
                }
                for k in 0..j {
                    let diam = dij.max(dist.get(i, k)).max(dist.get(j, k));
                    if diam > threshold {
                        continue;
                    }
                    let index = rips.index_of(&[i, j, k]);
                    if !pivot_of.contains_key(&index) {
                        next.push(Entry { diam, index });
                    }
                }
            }
            if next.len() > options.triangle_budget {
                break;
            }
        }
        if next.len() > options.triangle_budget {
            let ratio = (options.triangle_budget as f64 / next.len() as f64).cbrt();
            return Err(TdaError::SimplexBudget {
                simplices: next.len(),
                budget: options.triangle_budget,
                suggested_k: ((n as f64) * ratio).floor() as usize,
            });
        }
        columns = next;
    }
    for b in &mut bars {
        b.sort_by(|x, y| x.birth.total_cmp(&y.birth).then(x.death.total_cmp(&y.death)));
    }
    Ok(PersistenceDiagram {
        bars,
        max_radius: threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BettiVector(pub usize, pub usize, pub usize);

impl BettiVector {
    pub const DISC: BettiVector = BettiVector(1, 0, 0);
    pub const CIRCLE: BettiVector = BettiVector(1, 1, 0);
    pub const TORUS: BettiVector = BettiVector(1, 2, 1);

    pub fn shape(self) -> Shape {
        match self {
            BettiVector::DISC => Shape::Disc,
            BettiVector::CIRCLE => Shape::Circle,
            BettiVector::TORUS => Shape::Torus,
            _ => Shape::Other,
        }
    }
}

impl std::fmt::Display for BettiVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.0, self.1, self.2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Shape {
    Disc,
    Circle,
    Torus,
    Other,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Disc, Shape::Circle, Shape::Torus, Shape::Other];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disc => "disc",
            Shape::Circle => "circle",
            Shape::Torus => "torus",
            Shape::Other => "other",
        }
    }
}

/// Projects each row of a `[n*n, n]` logits grid onto the frequency-`f`
/// Fourier pair over output classes, giving one point in the plane per input
/// pair.
pub fn logits_fourier_cloud(logits: &Tensor, n: usize, f: usize) -> Result<PointCloud, TdaError> {
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|c| {
            let t = std::f64::consts::TAU * (f * c % n) as f64 / n as f64;
            (t.cos(), t.sin())
        })
        .unzip();
    let points = (0..logits.rows())
        .flat_map(|r| {
            let row = logits.row(r);
            let dot = |w: &[f64]| row.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
            [dot(&cos), dot(&sin)]
        })
        .collect();
    PointCloud::new(2, points, "logits")
}

/// Default relative bar length for [`betti_from_diagram`].
pub const DEFAULT_BAR_THRESHOLD: f64 = 0.3;

/// Bars at least `relative_threshold * scale` long count as features, where
/// `scale` is the filtration cap of the diagram (the enclosing radius by
/// default). `b0` counts the components still separate at that length.
pub fn betti_from_diagram(diagram: &PersistenceDiagram, relative_threshold: f64) -> Result<BettiVector, TdaError> {
    if diagram.bars.iter().all(|b| b.is_empty()) {
        return Err(TdaError::EmptyDiagram);
    }
    let cut = relative_threshold * diagram.max_radius;
    let b0 = diagram.dimension(0).iter().filter(|b| b.death > cut).count();
    let count = |k: usize| diagram.dimension(k).iter().filter(|b| b.persistence() >= cut).count();
    Ok(BettiVector(b0, count(1), count(2)))
}

/// Tally of Betti vectors per key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BettiDistribution {
    pub counts: std::collections::BTreeMap<String, std::collections::BTreeMap<Shape, usize>>,
}

impl BettiDistribution {
    pub fn add(&mut self, key: &str, betti: BettiVector) {
        *self.counts.entry(key.to_string()).or_default().entry(betti.shape()).or_default() += 1;
    }

    /// Most frequent shape for `key`; ties resolve in `Shape::ALL` order.
    pub fn majority(&self, key: &str) -> Option<(Shape, usize, usize)> {
        let tally = self.counts.get(key)?;
        let total = tally.values().sum();
        Shape::ALL
            .into_iter()
            .map(|s| (s, tally.get(&s).copied().unwrap_or(0)))
            .fold(None, |best: Option<(Shape, usize)>, (s, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((s, c)),
            })
            .map(|(s, c)| (s, c, total))
    }

    /// `key,disc,circle,torus,other` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,disc,circle,torus,other\n");
        for (key, tally) in &self.counts {
            let c = |s: Shape| tally.get(&s).copied().unwrap_or(0);
            out.push_str(&format!(
                "{key},{},{},{},{}\n",
                c(Shape::Disc),
                c(Shape::Circle),
                c(Shape::Torus),
                c(Shape::Other)
            ));
        }
        out
    }
}

/// Pass count of one synthetic shape over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeCheck {
    pub shape: Shape,
    pub trials: usize,
    pub passes: usize,
    /// Betti vectors that missed, with their seed.
    pub misses: Vec<(u64, BettiVector)>,
}

/// Circles of `points` points and landmark subsamples of the 59 x 59 flat
/// torus, each expected to come out as its own shape.
pub fn synthetic_oracle(trials: usize, points: usize, relative_threshold: f64, master_seed: u64) -> Result<Vec<ShapeCheck>, TdaError> {
    let torus = synthetic::flat_torus_grid(59);
    let mut out = Vec::new();
    for shape in [Shape::Circle, Shape::Torus] {
        let mut check = ShapeCheck {
            shape,
            trials,
            passes: 0,
            misses: Vec::new(),
        };
        for t in 0..trials as u64 {
            let seed = seeds::substream(master_seed, &format!("tda-oracle/{}", shape.name()), t);
            let cloud = match shape {
                Shape::Circle => synthetic::circle(points, 0.0, &mut seeds::rng(seed, "circle", 0)),
                _ => maxmin_landmarks(&torus, points, seed).cloud,
            };
            let diagram = rips_persistence(&cloud.normalized(), &RipsOptions::default())?;
            let betti = betti_from_diagram(&diagram, relative_threshold)?;
            if betti.shape() == shape {
                check.passes += 1;
            } else {
                check.misses.push((t, betti));
            }
        }
        out.push(check);
    }
    Ok(out)
}

/// Synthetic samples used by the oracle checks.
pub mod synthetic {
    use super::PointCloud;
    use rand::Rng;
    use std::f64::consts::PI;

    pub fn circle(count: usize, noise: f64, rng: &mut impl Rng) -> PointCloud {
        let pts = (0..count)
            .flat_map(|_| {
                let t = rng.gen_range(0.0..2.0 * PI);
                let (dx, dy) = if noise > 0.0 {
                    (rng.gen_range(-noise..noise), rng.gen_range(-noise..noise))
                } else {
                    (0.0, 0.0)
                };
                [t.cos() + dx, t.sin() + dy]
            })
            .collect();
        PointCloud::new(2, pts, "circle").expect("finite points")
    }

    /// The flat torus `(cos a, sin a, cos b, sin b)` on an `n x n` grid of
    /// angles.
    pub fn flat_torus_grid(n: usize) -> PointCloud {
        let pts = (0..n * n)
            .flat_map(|k| {
                let a = 2.0 * PI * (k / n) as f64 / n as f64;
                let b = 2.0 * PI * (k % n) as f64 / n as f64;
                [a.cos(), a.sin(), b.cos(), b.sin()]
            })
            .collect();
        PointCloud::new(4, pts, "torus").expect("finite points")
    }

    /// Points filling the unit disc.
    pub fn disc(count: usize, rng: &mut impl Rng) -> PointCloud {
        let pts = (0..count)
            .flat_map(|_| {
                let r = rng.gen_range(0.0f64..1.0).sqrt();
                let t = rng.gen_range(0.0..2.0 * PI);
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        PointCloud::new(2, pts, "disc").expect("finite points")
    }
}
