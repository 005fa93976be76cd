//! Fixed-radius, k-capped neighbour search over 3-D point sets.
//!
//! Results are the `cap` nearest targets inside the closed ball of the query
//! radius, ordered by `(distance, target index)`. The uniform-grid index and
//! the brute-force scan share the same predicate and ordering, so the two
//! modes agree element for element.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Finite 3-D coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    positions: Vec<Point>,
}

impl PointSet {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { positions })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn get(&self, i: usize) -> Point {
        self.positions[i]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
        }
    }

    /// Concatenation, preserving order.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a PointSet>) -> Self {
        Self {
            positions: sets
                .into_iter()
                .flat_map(|s| s.positions.iter().copied())
                .collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|p| [p[0] * factor, p[1] * factor, p[2] * factor])
                .collect(),
        }
    }
}

/// One `(radius, cap)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub radius: f64,
    pub cap: usize,
}

/// Ordered list of ball-query scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Scale>", into = "Vec<Scale>")]
pub struct MultiScaleSchedule {
    scales: Vec<Scale>,
}

impl MultiScaleSchedule {
    pub fn new(scales: Vec<Scale>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidArgument(
                "schedule needs at least one scale".into(),
            ));
        }
        for (i, s) in scales.iter().enumerate() {
            if !(s.radius > 0.0) || !s.radius.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "scale {i}: radius must be positive, got {}",
                    s.radius
                )));
            }
            if s.cap == 0 {
                return Err(Error::InvalidArgument(format!(
                    "scale {i}: cap must be >= 1"
                )));
            }
        }
        Ok(Self { scales })
    }

    pub fn from_pairs(pairs: &[(f64, usize)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(radius, cap)| Scale { radius, cap })
                .collect(),
        )
    }

    /// Named presets `1scale` .. `4scale`, radii growing from local to global.
    pub fn preset(name: &str) -> Result<Self> {
        const LADDER: [(f64, usize); 4] = [(0.25, 8), (0.6, 16), (1.25, 16), (2.5, 32)];
        let n = match name {
            "1scale" => 1,
            "2scale" => 2,
            "3scale" => 3,
            "4scale" => 4,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown schedule preset `{other}` (expected 1scale..4scale)"
                )))
            }
        };
        let picks: &[usize] = match n {
            1 => &[1],
            2 => &[0, 2],
            3 => &[0, 1, 2],
            _ => &[0, 1, 2, 3],
        };
        Self::from_pairs(&picks.iter().map(|&i| LADDER[i]).collect::<Vec<_>>())
    }

    pub fn scales(&self) -> &[Scale] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

impl TryFrom<Vec<Scale>> for MultiScaleSchedule {
    type Error = Error;
    fn try_from(v: Vec<Scale>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MultiScaleSchedule> for Vec<Scale> {
    fn from(s: MultiScaleSchedule) -> Self {
        s.scales
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// `target − query`.
    pub offset: Point,
    pub distance: f64,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.index.cmp(&b.index))
}

/// Per-query neighbour lists stored contiguously; query `q` owns
/// `entries[offsets[q]..offsets[q + 1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    entries: Vec<Neighbor>,
    offsets: Vec<usize>,
}

impl NeighborList {
    pub fn neighbors(&self, q: usize) -> &[Neighbor] {
        &self.entries[self.offsets[q]..self.offsets[q + 1]]
    }

    pub fn num_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Neighbor] {
        &self.entries
    }

    /// Group boundaries, length `num_queries() + 1`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Neighbor]> {
        self.offsets.windows(2).map(|w| &self.entries[w[0]..w[1]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Indexed,
    Brute,
}

type Cell = [i64; 3];

/// Uniform-grid hash over a borrowed target set.
#[derive(Clone, Debug)]
pub struct SpatialIndex<'a> {
    cell_size: f64,
    cells: HashMap<Cell, Vec<usize>>,
    targets: &'a PointSet,
}

impl<'a> SpatialIndex<'a> {
    pub fn build(targets: &'a PointSet, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cell_size must be positive, got {cell_size}"
            )));
        }
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, &p) in targets.positions().iter().enumerate() {
            cells.entry(cell_of(p, cell_size)).or_default().push(i);
        }
        Ok(Self {
            cell_size,
            cells,
            targets,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn targets(&self) -> &PointSet {
        self.targets
    }

    fn candidates(&self, q: Point, radius: f64, out: &mut Vec<Neighbor>) {
        let lo = cell_of(
            [q[0] - radius, q[1] - radius, q[2] - radius],
            self.cell_size,
        );
        let hi = cell_of(
            [q[0] + radius, q[1] + radius, q[2] + radius],
            self.cell_size,
        );
        let span: i128 = (0..3).map(|d| (hi[d] - lo[d] + 1) as i128).product();
        let push = |idx: &[usize], out: &mut Vec<Neighbor>| {
            for &i in idx {
                if let Some(n) = make_neighbor(q, i, self.targets.get(i), radius) {
                    out.push(n);
                }
            }
        };
        if span > self.cells.len() as i128 {
            for (c, idx) in &self.cells {
                if (0..3).all(|d| c[d] >= lo[d] && c[d] <= hi[d]) {
                    push(idx, out);
                }
            }
            return;
        }
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(idx) = self.cells.get(&[x, y, z]) {
                        push(idx, out);
                    }
                }
            }
        }
    }
}

fn cell_of(p: Point, cell_size: f64) -> Cell {
    [
        (p[0] / cell_size).floor() as i64,
        (p[1] / cell_size).floor() as i64,
        (p[2] / cell_size).floor() as i64,
    ]
}

fn make_neighbor(q: Point, index: usize, t: Point, radius: f64) -> Option<Neighbor> {
    let offset = sub(t, q);
    let distance = norm(offset);
    (distance <= radius).then_some(Neighbor {
        index,
        offset,
        distance,
    })
}

fn keep_nearest(cands: &mut Vec<Neighbor>, cap: usize) {
    if cands.len() > cap {
        cands.select_nth_unstable_by(cap - 1, neighbor_order);
        cands.truncate(cap);
    }
    cands.sort_unstable_by(neighbor_order);
}

/// Up to `cap` nearest targets within `radius` of every query.
pub fn ball_query(
    index: &SpatialIndex<'_>,
    queries: &PointSet,
    radius: f64,
    cap: usize,
    mode: QueryMode,
) -> Result<NeighborList> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be >= 1".into()));
    }
    let mut entries = Vec::new();
    let mut offsets = Vec::with_capacity(queries.len() + 1);
    offsets.push(0);
    let mut cands = Vec::new();
    for &q in queries.positions() {
        cands.clear();
        match mode {
            QueryMode::Indexed => index.candidates(q, radius, &mut cands),
            QueryMode::Brute => {
                for (i, &t) in index.targets.positions().iter().enumerate() {
                    if let Some(n) = make_neighbor(q, i, t, radius) {
                        cands.push(n);
                    }
                }
            }
        }
        keep_nearest(&mut cands, cap);
        entries.extend_from_slice(&cands);
        offsets.push(entries.len());
    }
    Ok(NeighborList { entries, offsets })
}

/// One [`NeighborList`] per scale, in schedule order.
pub fn query_all_scales(
    index: &SpatialIndex<'_>,
    queries: &PointSet,
    schedule: &MultiScaleSchedule,
) -> Result<Vec<NeighborList>> {
    schedule
        .scales()
        .iter()
        .map(|s| ball_query(index, queries, s.radius, s.cap, QueryMode::Indexed))
        .collect()
}
