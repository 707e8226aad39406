//! Volume-driven aggregation of fine hexagonal cells into connected groups.
//!
//! Cells live on an axial hex lattice at the finest resolution. Starting from
//! the busiest cell, each group absorbs adjacent free cells until it carries a
//! configured fraction of all orders, or until growing further would push its
//! footprint past the coarsest allowed resolution.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FINEST_RESOLUTION: u8 = 10;
pub const COARSEST_RESOLUTION: u8 = 4;
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.02;

/// Axial directions, clockwise starting from +q.
const CLOCKWISE: [(i32, i32); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HexCell {
    pub q: i32,
    pub r: i32,
    pub resolution: u8,
}

impl HexCell {
    /// A cell at the finest resolution.
    pub fn new(q: i32, r: i32) -> Self {
        Self { q, r, resolution: FINEST_RESOLUTION }
    }

    pub fn at_resolution(q: i32, r: i32, resolution: u8) -> Result<Self> {
        if !(COARSEST_RESOLUTION..=FINEST_RESOLUTION).contains(&resolution) {
            return Err(Error::InvalidConfig(format!(
                "resolution {resolution} outside [{COARSEST_RESOLUTION}, {FINEST_RESOLUTION}]"
            )));
        }
        Ok(Self { q, r, resolution })
    }

    /// The six adjacent cells in clockwise order from +q.
    pub fn neighbors(&self) -> [HexCell; 6] {
        CLOCKWISE.map(|(dq, dr)| HexCell { q: self.q + dq, r: self.r + dr, resolution: self.resolution })
    }

    fn distance_unchecked(&self, other: &HexCell) -> u32 {
        let dq = (self.q - other.q) as i64;
        let dr = (self.r - other.r) as i64;
        ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u32
    }
}

pub fn hex_distance(a: &HexCell, b: &HexCell) -> Result<u32> {
    if a.resolution != b.resolution {
        return Err(Error::ResolutionMismatch(a.resolution, b.resolution));
    }
    Ok(a.distance_unchecked(b))
}

/// Position of `neighbor` around `center`, 0 for +q, increasing clockwise.
pub fn clockwise_rank(center: &HexCell, neighbor: &HexCell) -> Result<u8> {
    if center.resolution != neighbor.resolution {
        return Err(Error::ResolutionMismatch(center.resolution, neighbor.resolution));
    }
    let d = (neighbor.q - center.q, neighbor.r - center.r);
    CLOCKWISE
        .iter()
        .position(|&dir| dir == d)
        .map(|p| p as u8)
        .ok_or(Error::NotAdjacent(center.q, center.r, neighbor.q, neighbor.r))
}

/// Resolution whose cell area a group of the given hex diameter roughly spans.
///
/// A hex disk of radius `R` holds `3R(R+1) + 1` cells; with `R = d / 2` that is
/// `0.75 d^2 + 1.5 d + 1`. Each coarser level holds about seven times more finest cells.
pub fn resolution_for_diameter(diameter: u32) -> u8 {
    raw_resolution_for_diameter(diameter).clamp(COARSEST_RESOLUTION as i64, FINEST_RESOLUTION as i64) as u8
}

/// Unclamped variant used to detect when growth would pass the coarsest level.
fn raw_resolution_for_diameter(diameter: u32) -> i64 {
    let d = diameter as f64;
    let cells = 0.75 * d * d + 1.5 * d + 1.0;
    FINEST_RESOLUTION as i64 - (cells.ln() / 7f64.ln() + 1e-12).floor() as i64
}

fn diameter(cells: &[HexCell]) -> u32 {
    let mut d = 0;
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            d = d.max(a.distance_unchecked(b));
        }
    }
    d
}

/// Monthly order volume per finest-resolution cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInventory {
    cells: BTreeMap<HexCell, u64>,
    total_orders: u64,
}

impl GridInventory {
    pub fn new(entries: impl IntoIterator<Item = (HexCell, u64)>) -> Result<Self> {
        let mut cells = BTreeMap::new();
        let mut total_orders = 0u64;
        let mut resolution = None;
        for (cell, volume) in entries {
            if *resolution.get_or_insert(cell.resolution) != cell.resolution {
                return Err(Error::ResolutionMismatch(resolution.unwrap(), cell.resolution));
            }
            if cells.insert(cell, volume).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate cell ({}, {})", cell.q, cell.r)));
            }
            total_orders += volume;
        }
        Ok(Self { cells, total_orders })
    }

    pub fn cells(&self) -> &BTreeMap<HexCell, u64> {
        &self.cells
    }

    pub fn total_orders(&self) -> u64 {
        self.total_orders
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn volume(&self, cell: &HexCell) -> Option<u64> {
        self.cells.get(cell).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibleGrid {
    /// Member cells in merge order; the first one seeded the group.
    pub cells: Vec<HexCell>,
    pub aggregate_volume: u64,
    pub effective_resolution: u8,
    /// False for leftovers that could not reach the volume threshold.
    pub meets_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexiblePartition {
    pub grids: Vec<FlexibleGrid>,
    pub assignment: BTreeMap<HexCell, usize>,
    pub threshold_fraction: f64,
}

impl FlexiblePartition {
    pub fn flagged(&self) -> impl Iterator<Item = (usize, &FlexibleGrid)> {
        self.grids.iter().enumerate().filter(|(_, g)| !g.meets_threshold)
    }
}

fn meets(volume: u64, total: u64, fraction: f64) -> bool {
    volume as f64 >= fraction * total as f64 * (1.0 - 1e-12)
}

/// Greedy flexible aggregation.
///
/// Cells are visited by descending volume (equal volumes in seeded random
/// order). Each unvisited cell seeds a group that absorbs free adjacent cells,
/// preferring the candidate nearest the seed, then the lowest clockwise rank
/// around the earliest member it touches, then the larger volume, then a
/// seeded random key. Groups stop once they hold `threshold_fraction` of all
/// orders; groups that run out of free neighbours or would exceed the
/// coarsest resolution are kept and flagged.
pub fn flexible_partition(inv: &GridInventory, threshold_fraction: f64, seed: u64) -> Result<FlexiblePartition> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("threshold fraction must lie in (0, 1), got {threshold_fraction}")));
    }
    if inv.is_empty() {
        return Err(Error::InvalidConfig("empty inventory".into()));
    }
    let total = inv.total_orders;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tie: HashMap<HexCell, u64> = inv.cells.keys().map(|&c| (c, rng.random())).collect();

    let mut order: Vec<HexCell> = inv.cells.keys().copied().collect();
    order.sort_by(|a, b| inv.cells[b].cmp(&inv.cells[a]).then(tie[a].cmp(&tie[b])));

    let mut assignment: BTreeMap<HexCell, usize> = BTreeMap::new();
    let mut grids = Vec::new();
    for seed_cell in order {
        if assignment.contains_key(&seed_cell) {
            continue;
        }
        let gid = grids.len();
        let mut members = vec![seed_cell];
        let mut volume = inv.cells[&seed_cell];
        let mut diam = 0u32;
        assignment.insert(seed_cell, gid);

        while !meets(volume, total, threshold_fraction) {
            // candidate -> (anchor member position, rank around anchor)
            let mut candidates: BTreeMap<HexCell, (usize, u8)> = BTreeMap::new();
            for (pos, m) in members.iter().enumerate() {
                for (rank, nb) in m.neighbors().iter().enumerate() {
                    if inv.cells.contains_key(nb) && !assignment.contains_key(nb) {
                        candidates.entry(*nb).or_insert((pos, rank as u8));
                    }
                }
            }
            let best = candidates.iter().min_by(|(a, (_, ra)), (b, (_, rb))| {
                seed_cell
                    .distance_unchecked(a)
                    .cmp(&seed_cell.distance_unchecked(b))
                    .then(ra.cmp(rb))
                    .then(inv.cells[b].cmp(&inv.cells[a]))
                    .then(tie[a].cmp(&tie[b]))
            });
            let Some((&next, _)) = best else { break };
            let grown = members.iter().map(|m| m.distance_unchecked(&next)).max().unwrap_or(0).max(diam);
            if raw_resolution_for_diameter(grown) < COARSEST_RESOLUTION as i64 {
                break;
            }
            diam = grown;
            members.push(next);
            volume += inv.cells[&next];
            assignment.insert(next, gid);
        }
        grids.push(FlexibleGrid {
            effective_resolution: resolution_for_diameter(diam),
            meets_threshold: meets(volume, total, threshold_fraction),
            cells: members,
            aggregate_volume: volume,
        });
    }
    Ok(FlexiblePartition { grids, assignment, threshold_fraction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Overlap { q: i32, r: i32, grids: Vec<usize> },
    Uncovered { q: i32, r: i32 },
    UnknownCell { q: i32, r: i32, grid: usize },
    AssignmentMismatch { q: i32, r: i32 },
    EmptyGrid { grid: usize },
    Disconnected { grid: usize, components: usize },
    VolumeMismatch { grid: usize, recorded: u64, actual: u64 },
    BelowThreshold { grid: usize, volume: u64, required: f64 },
    ResolutionBelowMinimum { grid: usize, resolution: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub threshold_fraction: f64,
    pub grid_count: usize,
    pub flagged_count: usize,
    pub violations: Vec<Violation>,
}

fn components(cells: &[HexCell]) -> usize {
    let set: HashSet<HexCell> = cells.iter().copied().collect();
    let mut seen: HashSet<HexCell> = HashSet::new();
    let mut count = 0;
    for &start in cells {
        if !seen.insert(start) {
            continue;
        }
        count += 1;
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for nb in c.neighbors() {
                if set.contains(&nb) && seen.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
    }
    count
}

/// Checks disjointness, coverage, connectivity, volumes, the threshold for
/// unflagged grids and the resolution bound.
pub fn validate_partition(part: &FlexiblePartition, inv: &GridInventory, threshold_fraction: f64) -> ValidationReport {
    let mut violations = Vec::new();
    let mut owners: BTreeMap<HexCell, Vec<usize>> = BTreeMap::new();
    for (gid, grid) in part.grids.iter().enumerate() {
        if grid.cells.is_empty() {
            violations.push(Violation::EmptyGrid { grid: gid });
            continue;
        }
        let mut actual = 0u64;
        for c in &grid.cells {
            owners.entry(*c).or_default().push(gid);
            match inv.volume(c) {
                Some(v) => actual += v,
                None => violations.push(Violation::UnknownCell { q: c.q, r: c.r, grid: gid }),
            }
        }
        let parts = components(&grid.cells);
        if parts > 1 {
            violations.push(Violation::Disconnected { grid: gid, components: parts });
        }
        if actual != grid.aggregate_volume {
            violations.push(Violation::VolumeMismatch { grid: gid, recorded: grid.aggregate_volume, actual });
        }
        if grid.meets_threshold && !meets(actual, inv.total_orders(), threshold_fraction) {
            violations.push(Violation::BelowThreshold {
                grid: gid,
                volume: actual,
                required: threshold_fraction * inv.total_orders() as f64,
            });
        }
        let resolution = resolution_for_diameter(diameter(&grid.cells));
        if raw_resolution_for_diameter(diameter(&grid.cells)) < COARSEST_RESOLUTION as i64
            || grid.effective_resolution < COARSEST_RESOLUTION
        {
            violations.push(Violation::ResolutionBelowMinimum { grid: gid, resolution });
        }
    }
    for (cell, gids) in &owners {
        if gids.len() > 1 {
            violations.push(Violation::Overlap { q: cell.q, r: cell.r, grids: gids.clone() });
        }
        if part.assignment.get(cell) != gids.first() {
            violations.push(Violation::AssignmentMismatch { q: cell.q, r: cell.r });
        }
    }
    for cell in inv.cells().keys() {
        if !owners.contains_key(cell) {
            violations.push(Violation::Uncovered { q: cell.q, r: cell.r });
        }
    }
    ValidationReport {
        valid: violations.is_empty(),
        threshold_fraction,
        grid_count: part.grids.len(),
        flagged_count: part.grids.iter().filter(|g| !g.meets_threshold).count(),
        violations,
    }
}
