use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use crate::geometry::Pose2;

use super::grid::OccupancyGrid;

/// Obstacle-aware cost-to-go: an 8-connected Dijkstra field grown backward
/// from the goal cell, combined with the straight-line distance.
#[derive(Debug, Clone)]
pub struct HeuristicField {
    grid: OccupancyGrid,
    dist: Vec<f64>,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl HeuristicField {
    pub fn build(grid: &OccupancyGrid, goal: &Pose2) -> Self {
        let (w, h) = (grid.width(), grid.height());
        let mut dist = vec![f64::INFINITY; w * h];
        let res = grid.resolution();
        if let Some((gx, gy)) = grid.cell_of([goal.x, goal.y]) {
            let start = gy * w + gx;
            dist[start] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(Item(0.0, start));
            while let Some(Item(d, idx)) = heap.pop() {
                if d > dist[idx] {
                    continue;
                }
                let (ix, iy) = ((idx % w) as i64, (idx / w) as i64);
                for (dx, dy) in [
                    (1, 0),
                    (-1, 0),
                    (0, 1),
                    (0, -1),
                    (1, 1),
                    (1, -1),
                    (-1, 1),
                    (-1, -1),
                ] {
                    let (nx, ny) = (ix + dx, iy + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if grid.is_occupied(nx, ny) {
                        continue;
                    }
                    let step = if dx != 0 && dy != 0 { SQRT_2 * res } else { res };
                    let n = ny * w + nx;
                    let nd = d + step;
                    if nd < dist[n] {
                        dist[n] = nd;
                        heap.push(Item(nd, n));
                    }
                }
            }
        }
        Self {
            grid: grid.clone(),
            dist,
        }
    }

    /// Grid distance from the cell containing `p` to the goal cell.
    pub fn grid_distance(&self, p: [f64; 2]) -> f64 {
        match self.grid.cell_of(p) {
            Some((ix, iy)) => self.dist[iy * self.grid.width() + ix],
            None => f64::INFINITY,
        }
    }

    /// `max(euclidean, grid distance)`; zero at the goal itself.
    pub fn estimate(&self, pose: &Pose2, goal: &Pose2) -> f64 {
        let euclid = pose.distance_to(goal);
        if euclid == 0.0 {
            return 0.0;
        }
        euclid.max(self.grid_distance([pose.x, pose.y]))
    }
}

/// One-shot heuristic query; builds the field for `goal` on `grid`.
pub fn heuristic(grid: &OccupancyGrid, pose: &Pose2, goal: &Pose2) -> f64 {
    HeuristicField::build(grid, goal).estimate(pose, goal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_goal() {
        let g = OccupancyGrid::empty(10, 10, 1.0);
        let goal = Pose2::new(5.5, 5.5, 0.0);
        assert_eq!(heuristic(&g, &goal, &goal), 0.0);
    }

    #[test]
    fn euclidean_lower_bound_on_empty_grid() {
        let g = OccupancyGrid::empty(20, 20, 0.5);
        let goal = Pose2::new(2.25, 2.25, 0.0);
        let pose = Pose2::new(7.25, 2.25, 1.0);
        assert!(heuristic(&g, &pose, &goal) >= 5.0);
    }

    #[test]
    fn unreachable_cells_are_infinite() {
        let g = OccupancyGrid::from_ascii(".#.\n.#.\n.#.\n", 1.0, Pose2::origin()).unwrap();
        let f = HeuristicField::build(&g, &Pose2::new(0.5, 0.5, 0.0));
        assert!(f.grid_distance([2.5, 0.5]).is_infinite());
        assert_eq!(f.grid_distance([0.5, 2.5]), 2.0);
    }
}
