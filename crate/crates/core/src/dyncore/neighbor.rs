use serde::{Deserialize, Serialize};

use super::Vec2;
use crate::math;
use crate::prelude::*;
use crate::{Error, Result};

/// Open distance band `d_min < d < d_max`, optionally on a periodic square box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusBand {
    pub d_min: f64,
    pub d_max: f64,
    /// Side length of the periodic box, if positions wrap.
    pub periodic: Option<f64>,
}

impl RadiusBand {
    pub fn new(d_min: f64, d_max: f64, periodic: Option<f64>) -> Self {
        RadiusBand {
            d_min,
            d_max,
            periodic,
        }
    }

    /// `to - from`, reduced by the minimum-image convention on periodic boxes.
    #[inline]
    pub fn displacement(&self, from: Vec2, to: Vec2) -> Vec2 {
        let d = to - from;
        match self.periodic {
            Some(l) => Vec2::new(math::min_image(d.x, l), math::min_image(d.y, l)),
            None => d,
        }
    }

    #[inline]
    pub fn contains(&self, d: f64) -> bool {
        d > self.d_min && d < self.d_max
    }

    fn validate(&self) -> Result<()> {
        if !(self.d_min >= 0.0 && self.d_max > self.d_min && self.d_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "radius band requires 0 <= d_min < d_max, got ({}, {})",
                self.d_min, self.d_max
            )));
        }
        if let Some(l) = self.periodic {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidInput(format!("periodic box must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// How a neighborhood was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NeighborRule {
    Radius(RadiusBand),
    GridMesh { side: usize },
    Matrix,
}

/// Directed edge: `sender` belongs to the neighborhood of `receiver`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub receiver: usize,
    pub sender: usize,
}

impl Edge {
    #[inline]
    pub const fn new(receiver: usize, sender: usize) -> Self {
        Edge { receiver, sender }
    }
}

/// A connectivity rule together with the edge list it produced.
///
/// Edges are ordered by receiver, then sender.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub rule: NeighborRule,
    pub edges: Vec<Edge>,
}

impl Neighborhood {
    /// Number of incoming edges per node.
    pub fn in_degree(&self, n: usize) -> Vec<usize> {
        let mut deg = vec![0; n];
        for e in &self.edges {
            deg[e.receiver] += 1;
        }
        deg
    }
}

/// Sparse uniform-cell index over a point set. Cells are at least `d_max` wide, so a
/// query only visits the 3x3 block around the query cell. Occupied cells are kept
/// in a sorted key list, so memory stays O(n) even for widely scattered points.
struct CellIndex {
    cell: f64,
    wrap_cells: Option<i64>,
    keys: Vec<(i64, i64)>,
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl CellIndex {
    fn new(points: &[Vec2], band: &RadiusBand) -> Self {
        let (cell, wrap_cells) = match band.periodic {
            Some(l) => {
                let n = math::floor(l / band.d_max).max(1.0);
                (l / n, Some(n as i64))
            }
            None => (band.d_max, None),
        };
        let mut index = CellIndex {
            cell,
            wrap_cells,
            keys: Vec::new(),
            starts: Vec::new(),
            order: Vec::new(),
        };
        let mut keyed: Vec<((i64, i64), usize)> =
            points.iter().enumerate().map(|(i, &p)| (index.key(p), i)).collect();
        keyed.sort_unstable();
        for (k, (key, i)) in keyed.into_iter().enumerate() {
            if index.keys.last() != Some(&key) {
                index.keys.push(key);
                index.starts.push(k);
            }
            index.order.push(i);
        }
        index.starts.push(index.order.len());
        index
    }

    fn key(&self, p: Vec2) -> (i64, i64) {
        let cx = math::floor(p.x / self.cell) as i64;
        let cy = math::floor(p.y / self.cell) as i64;
        match self.wrap_cells {
            Some(n) => (cx.clamp(0, n - 1), cy.clamp(0, n - 1)),
            None => (cx, cy),
        }
    }

    fn for_each_candidate(&self, p: Vec2, mut visit: impl FnMut(usize)) {
        let (cx, cy) = self.key(p);
        let mut cells = [(0i64, 0i64); 9];
        let mut count = 0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let mut c = (cx + dx, cy + dy);
                if let Some(n) = self.wrap_cells {
                    c = (c.0.rem_euclid(n), c.1.rem_euclid(n));
                }
                if !cells[..count].contains(&c) {
                    cells[count] = c;
                    count += 1;
                }
            }
        }
        for c in &cells[..count] {
            if let Ok(k) = self.keys.binary_search(c) {
                for &j in &self.order[self.starts[k]..self.starts[k + 1]] {
                    visit(j);
                }
            }
        }
    }
}

fn check_points(points: &[Vec2], band: &RadiusBand) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite position at node {i}")));
        }
        if let Some(l) = band.periodic {
            if !(p.x >= 0.0 && p.x < l && p.y >= 0.0 && p.y < l) {
                return Err(Error::InvalidInput(format!(
                    "node {i} at ({}, {}) lies outside the periodic box [0, {l})",
                    p.x, p.y
                )));
            }
        }
    }
    Ok(())
}

/// All ordered pairs `(i, j)`, `i != j`, with `d_min < d_ij < d_max`.
pub fn build_radius_neighborhood(positions: &[Vec2], band: RadiusBand) -> Result<Neighborhood> {
    band.validate()?;
    check_points(positions, &band)?;
    let index = CellIndex::new(positions, &band);
    let mut edges = Vec::new();
    let mut row = Vec::new();
    for (i, &xi) in positions.iter().enumerate() {
        row.clear();
        index.for_each_candidate(xi, |j| {
            if j != i && band.contains(band.displacement(xi, positions[j]).norm()) {
                row.push(j);
            }
        });
        row.sort_unstable();
        edges.extend(row.iter().map(|&j| Edge::new(i, j)));
    }
    Ok(Neighborhood {
        rule: NeighborRule::Radius(band),
        edges,
    })
}

/// Edges from a separate sender set into a receiver set (e.g. hidden-field nodes
/// into moving particles). Indices refer to the respective input slices.
pub fn radius_edges_between(
    receivers: &[Vec2],
    senders: &[Vec2],
    band: RadiusBand,
) -> Result<Vec<Edge>> {
    band.validate()?;
    check_points(receivers, &band)?;
    check_points(senders, &band)?;
    let index = CellIndex::new(senders, &band);
    let mut edges = Vec::new();
    let mut row = Vec::new();
    for (i, &xi) in receivers.iter().enumerate() {
        row.clear();
        index.for_each_candidate(xi, |j| {
            if band.contains(band.displacement(xi, senders[j]).norm()) {
                row.push(j);
            }
        });
        row.sort_unstable();
        edges.extend(row.iter().map(|&j| Edge::new(i, j)));
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[Vec2], band: &RadiusBand) -> Vec<Edge> {
        let mut edges = Vec::new();
        for i in 0..points.len() {
            for j in 0..points.len() {
                if i != j && band.contains(band.displacement(points[i], points[j]).norm()) {
                    edges.push(Edge::new(i, j));
                }
            }
        }
        edges
    }

    #[test]
    fn two_particles_inside_band() {
        let pts = [Vec2::new(0.1, 0.1), Vec2::new(0.15, 0.1)];
        let nb = build_radius_neighborhood(&pts, RadiusBand::new(0.002, 0.075, None)).unwrap();
        assert_eq!(nb.edges, vec![Edge::new(0, 1), Edge::new(1, 0)]);
    }

    #[test]
    fn periodic_minimum_image() {
        let pts = [Vec2::new(0.01, 0.5), Vec2::new(0.99, 0.5)];
        let nb = build_radius_neighborhood(&pts, RadiusBand::new(0.002, 0.075, Some(1.0))).unwrap();
        assert_eq!(nb.edges.len(), 2);
        let open = build_radius_neighborhood(&pts, RadiusBand::new(0.002, 0.075, None)).unwrap();
        assert!(open.edges.is_empty());
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &periodic in &[None, Some(1.0)] {
            let pts: Vec<Vec2> = (0..1000)
                .map(|_| Vec2::new(rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            let band = RadiusBand::new(0.002, 0.075, periodic);
            let nb = build_radius_neighborhood(&pts, band).unwrap();
            assert_eq!(nb.edges, brute_force(&pts, &band));
        }
    }

    #[test]
    fn small_periodic_box_has_no_duplicate_edges() {
        // Fewer than three cells per side: neighbor cells alias onto each other.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec2> = (0..50)
            .map(|_| Vec2::new(rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let band = RadiusBand::new(0.0, 0.45, Some(1.0));
        let nb = build_radius_neighborhood(&pts, band).unwrap();
        assert_eq!(nb.edges, brute_force(&pts, &band));
    }

    #[test]
    fn rejects_non_finite_and_out_of_box() {
        let band = RadiusBand::new(0.0, 0.1, None);
        let err = build_radius_neighborhood(&[Vec2::new(f64::NAN, 0.0)], band);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        let band = RadiusBand::new(0.0, 0.1, Some(1.0));
        let err = build_radius_neighborhood(&[Vec2::new(1.0, 0.0)], band);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bipartite_edges_cover_all_in_range_senders() {
        let recv = [Vec2::new(0.5, 0.5)];
        let send = [Vec2::new(0.52, 0.5), Vec2::new(0.7, 0.5), Vec2::new(0.5, 0.45)];
        let e = radius_edges_between(&recv, &send, RadiusBand::new(0.0, 0.1, None)).unwrap();
        assert_eq!(e, vec![Edge::new(0, 0), Edge::new(0, 2)]);
    }
}
