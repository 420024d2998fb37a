//! The admissible input set: per component, `|u_k| ≤ b` and
//! `|u_k − u_{k−1}| ≤ a` with `u_{−1}` fixed to the previous command.
//!
//! Each component is an independent chain, so projection and face
//! bookkeeping work one component at a time.

use crate::geometry::ControlInput;

#[derive(Debug, Clone, Copy)]
struct Piece {
    start: f64,
    end: f64,
    // derivative is `slope * x + offset` on [start, end]
    slope: f64,
    offset: f64,
}

fn piece_argmin(pieces: &[Piece]) -> f64 {
    for p in pieces {
        if p.slope * p.start + p.offset >= 0.0 {
            return p.start;
        }
        if p.slope * p.end + p.offset > 0.0 {
            return (-p.offset / p.slope).clamp(p.start, p.end);
        }
    }
    pieces.last().map_or(0.0, |p| p.end)
}

/// Interval admissible for the first stage. When `prev` lies more than one
/// step outside the box, the box wins and the interval collapses.
fn first_interval(prev: f64, b: f64, a: f64) -> (f64, f64) {
    let lo = (-b).max(prev - a);
    let hi = b.min(prev + a);
    if lo > hi {
        let v = prev.clamp(-b, b);
        (v, v)
    } else {
        (lo, hi)
    }
}

/// Euclidean projection of one chain `y` onto the admissible set, in place.
///
/// Dynamic programming over the cost-to-go, whose derivative stays a
/// nondecreasing piecewise-linear function.
pub(crate) fn project_chain(y: &mut [f64], prev: f64, b: f64, a: f64) {
    let n = y.len();
    if n == 0 {
        return;
    }
    let (lo, hi) = first_interval(prev, b, a);
    let mut pieces = vec![Piece {
        start: lo,
        end: hi,
        slope: 1.0,
        offset: -y[0],
    }];
    let mut minimizers = Vec::with_capacity(n);
    minimizers.push(piece_argmin(&pieces));
    let mut next = Vec::new();
    for k in 1..n {
        let z = minimizers[k - 1];
        next.clear();
        for p in pieces.iter().filter(|p| p.start < z) {
            next.push(Piece {
                start: p.start - a,
                end: p.end.min(z) - a,
                slope: p.slope,
                offset: p.offset + p.slope * a,
            });
        }
        next.push(Piece {
            start: z - a,
            end: z + a,
            slope: 0.0,
            offset: 0.0,
        });
        for p in pieces.iter().filter(|p| p.end > z) {
            next.push(Piece {
                start: p.start.max(z) + a,
                end: p.end + a,
                slope: p.slope,
                offset: p.offset - p.slope * a,
            });
        }
        pieces.clear();
        for p in &next {
            if p.end < -b || p.start > b {
                continue;
            }
            pieces.push(Piece {
                start: p.start.max(-b),
                end: p.end.min(b),
                slope: p.slope + 1.0,
                offset: p.offset - y[k],
            });
        }
        minimizers.push(piece_argmin(&pieces));
    }
    y[n - 1] = minimizers[n - 1];
    for k in (1..n).rev() {
        y[k - 1] = minimizers[k - 1].clamp(y[k] - a, y[k] + a);
    }
}

/// Forward sequential clamp. Leaves an admissible chain unchanged up to
/// rounding and makes the bounds hold exactly.
pub(crate) fn clamp_chain(y: &mut [f64], prev: f64, b: f64, a: f64) {
    let mut last = prev;
    for (k, v) in y.iter_mut().enumerate() {
        let (lo, hi) = if k == 0 {
            first_interval(prev, b, a)
        } else {
            ((-b).max(last - a), b.min(last + a))
        };
        *v = v.clamp(lo, hi);
        last = *v;
    }
}

/// The feasible set for a flattened `4 T` input sequence.
#[derive(Debug, Clone, Copy)]
pub(crate) struct InputSet {
    pub prev: [f64; 4],
    pub bound: [f64; 4],
    pub rate: [f64; 4],
}

impl InputSet {
    fn component(&self, u: &[f64], c: usize) -> Vec<f64> {
        u.iter().skip(c).step_by(4).copied().collect()
    }

    fn write(u: &mut [f64], c: usize, chain: &[f64]) {
        for (k, v) in chain.iter().enumerate() {
            u[4 * k + c] = *v;
        }
    }

    pub fn project(&self, u: &mut [f64]) {
        for c in 0..4 {
            let mut chain = self.component(u, c);
            project_chain(&mut chain, self.prev[c], self.bound[c], self.rate[c]);
            clamp_chain(&mut chain, self.prev[c], self.bound[c], self.rate[c]);
            Self::write(u, c, &chain);
        }
    }

    /// Makes the bounds hold exactly on a nearly admissible sequence.
    /// Returns whether anything changed.
    pub fn tighten(&self, u: &mut [f64]) -> bool {
        let mut changed = false;
        for c in 0..4 {
            let mut chain = self.component(u, c);
            let before = chain.clone();
            clamp_chain(&mut chain, self.prev[c], self.bound[c], self.rate[c]);
            if chain != before {
                changed = true;
                Self::write(u, c, &chain);
            }
        }
        changed
    }

    /// Largest `α ∈ [0, 1]` keeping `u + α d` admissible, for admissible `u`.
    pub fn max_step(&self, u: &[f64], d: &[f64]) -> f64 {
        let steps = u.len() / 4;
        let mut alpha: f64 = 1.0;
        let mut limit = |value: f64, rate: f64, bound: f64| {
            if rate > 0.0 {
                alpha = alpha.min(((bound - value) / rate).max(0.0));
            } else if rate < 0.0 {
                alpha = alpha.min(((-bound - value) / rate).max(0.0));
            }
        };
        for c in 0..4 {
            for k in 0..steps {
                let i = 4 * k + c;
                limit(u[i], d[i], self.bound[c]);
                let (last, dlast) = if k == 0 { (self.prev[c], 0.0) } else { (u[i - 4], d[i - 4]) };
                limit(u[i] - last, d[i] - dlast, self.rate[c]);
            }
        }
        alpha
    }

    /// Groups of indices that can move together without leaving the face of
    /// the set that contains `u`. Indices in no group are fixed.
    pub fn free_blocks(&self, u: &[f64]) -> Vec<Vec<usize>> {
        let steps = u.len() / 4;
        let mut blocks = Vec::new();
        for c in 0..4 {
            let (b, a) = (self.bound[c], self.rate[c]);
            let tol = 1e-10 * (a + b);
            let mut current: Vec<usize> = Vec::new();
            let mut pinned = false;
            for k in 0..steps {
                let i = 4 * k + c;
                let last = if k == 0 { self.prev[c] } else { u[i - 4] };
                let linked = (u[i] - last).abs() >= a - tol;
                if k > 0 && !linked {
                    if !pinned {
                        blocks.push(std::mem::take(&mut current));
                    }
                    current.clear();
                    pinned = false;
                }
                if k == 0 && linked {
                    pinned = true;
                }
                if u[i].abs() >= b - tol {
                    pinned = true;
                }
                current.push(i);
            }
            if !pinned && !current.is_empty() {
                blocks.push(current);
            }
        }
        blocks
    }
}

/// Maps an arbitrary flattened input sequence onto the admissible set by
/// Euclidean projection.
///
/// If `u_prev` itself lies more than one step outside a velocity bound, the
/// velocity bound wins at the first stage.
pub fn project_inputs(y: &mut [f64], u_prev: &ControlInput, box_b: [f64; 4], rate: [f64; 4]) {
    InputSet {
        prev: u_prev.to_array(),
        bound: box_b,
        rate,
    }
    .project(y);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn admissible(x: &[f64], prev: f64, b: f64, a: f64) -> bool {
        let mut last = prev;
        x.iter().all(|&v| {
            let ok = v.abs() <= b && (v - last).abs() <= a + 1e-12;
            last = v;
            ok
        })
    }

    fn dist2(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
    }

    #[test]
    fn two_stage_projection_matches_grid_search() {
        let cases = [
            ([0.9, -0.9], 0.0),
            ([0.05, 0.5], 0.3),
            ([-0.7, 0.7], -0.55),
            ([0.3, 0.3], 0.3),
        ];
        let (b, a) = (0.6, 0.1);
        for (y, prev) in cases {
            let mut x = y.to_vec();
            project_chain(&mut x, prev, b, a);
            assert!(admissible(&x, prev, b, a));
            let mut best = f64::INFINITY;
            let n = 2400;
            for i in 0..=n {
                for j in 0..=n {
                    let c = [-b + 2.0 * b * i as f64 / n as f64, -b + 2.0 * b * j as f64 / n as f64];
                    if admissible(&c, prev, b, a) {
                        best = best.min(dist2(&c, &y));
                    }
                }
            }
            let got = dist2(&x, &y);
            assert!(got <= best + 1e-12, "{y:?}: {got} > {best}");
            assert!(best - got < 1e-3);
        }
    }

    #[test]
    fn previous_outside_box_pins_first_stage() {
        let mut y = vec![0.0; 4];
        project_inputs(&mut y, &ControlInput::new(0.9, 0.0, 0.0, 0.0), [0.6, 1.0, 0.7, 1.0], [0.1; 4]);
        assert_eq!(y[0], 0.6);
        let mut y = vec![0.0; 4];
        project_inputs(&mut y, &ControlInput::new(0.65, 0.0, 0.0, 0.0), [0.6, 1.0, 0.7, 1.0], [0.1; 4]);
        assert!((y[0] - 0.55).abs() < 1e-15);
    }

    #[test]
    fn blocks_follow_active_links() {
        let set = InputSet {
            prev: [0.0; 4],
            bound: [1.0; 4],
            rate: [0.1; 4],
        };
        // component 0: 0.1 (linked to prev), 0.2 (linked), 0.25, 0.35 (linked)
        let mut u = vec![0.0; 16];
        for (k, v) in [0.1, 0.2, 0.25, 0.35].into_iter().enumerate() {
            u[4 * k] = v;
        }
        let blocks = set.free_blocks(&u);
        assert!(blocks.contains(&vec![8, 12]));
        assert!(!blocks.iter().any(|b| b.contains(&0) || b.contains(&4)));
    }

    proptest! {
        #[test]
        fn projection_is_feasible_idempotent_and_nonexpansive(
            y in prop::collection::vec(-2.0f64..2.0, 1..25),
            z in prop::collection::vec(-2.0f64..2.0, 25),
            prev in -0.8f64..0.8,
            b in 0.2f64..1.0,
            a in 0.02f64..0.5,
        ) {
            let mut x = y.clone();
            project_chain(&mut x, prev, b, a);
            clamp_chain(&mut x, prev, b, a);
            let prev_in = prev.clamp(-b, b);
            if (prev - prev_in).abs() <= a {
                prop_assert!(admissible(&x, prev, b, a));
            }
            let mut again = x.clone();
            project_chain(&mut again, prev, b, a);
            prop_assert!(dist2(&again, &x).sqrt() < 1e-9);

            let w: Vec<f64> = z[..y.len()].to_vec();
            let mut c = w.clone();
            clamp_chain(&mut c, prev, b, a);
            let vi: f64 = y.iter().zip(&x).zip(&c).map(|((y, x), c)| (y - x) * (c - x)).sum();
            prop_assert!(vi <= 1e-9, "not the closest point: {vi}");

            let mut pw = w.clone();
            project_chain(&mut pw, prev, b, a);
            prop_assert!(dist2(&x, &pw).sqrt() <= dist2(&y, &w).sqrt() + 1e-9);
        }
    }
}
