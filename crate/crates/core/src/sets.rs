//! Projectable convex sets.
//!
//! Three shapes cover every set the solvers need: a box, the nonnegative
//! orthant, and a box cut by one halfspace. Each has an exact Euclidean
//! projection.

use rand::Rng as _;

use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;
use crate::rng::Rng;

/// Sweep limit for [`ConvexSet::project_dykstra`].
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;
/// Stop Dykstra once successive iterates move less than this.
pub const DYKSTRA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    NonnegOrthant {
        dim: usize,
    },
    BoxHalfspace {
        lower: Vec<f64>,
        upper: Vec<f64>,
        normal: Vec<f64>,
        offset: f64,
    },
}

/// A nonempty closed convex set with an exact projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSet {
    shape: Shape,
}

fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<()> {
    check_dim("upper bound", lower.len(), upper.len())?;
    if lower.is_empty() {
        return Err(Error::InvalidParameter("set dimension must be positive".into()));
    }
    for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
        if l.is_nan() || u.is_nan() || l > u {
            return Err(Error::EmptySet(format!(
                "box bounds at index {i} are not ordered ({l} > {u})"
            )));
        }
    }
    Ok(())
}

impl ConvexSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_bounds(&lower, &upper)?;
        Ok(Self {
            shape: Shape::Box { lower, upper },
        })
    }

    pub fn nonneg_orthant(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("set dimension must be positive".into()));
        }
        Ok(Self {
            shape: Shape::NonnegOrthant { dim },
        })
    }

    /// `{ z : lower <= z <= upper, normal . z <= offset }`.
    ///
    /// Fails when the halfspace misses the box entirely.
    pub fn box_halfspace(
        lower: Vec<f64>,
        upper: Vec<f64>,
        normal: Vec<f64>,
        offset: f64,
    ) -> Result<Self> {
        check_bounds(&lower, &upper)?;
        check_dim("halfspace normal", lower.len(), normal.len())?;
        if !offset.is_finite() || normal.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("halfspace data must be finite".into()));
        }
        let min_over_box = min_linear_over_box(&lower, &upper, &normal);
        if min_over_box > offset {
            return Err(Error::EmptySet(format!(
                "halfspace misses the box: min a.z over the box is {min_over_box} > {offset}"
            )));
        }
        Ok(Self {
            shape: Shape::BoxHalfspace {
                lower,
                upper,
                normal,
                offset,
            },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Box { lower, .. } | Shape::BoxHalfspace { lower, .. } => lower.len(),
            Shape::NonnegOrthant { dim } => *dim,
        }
    }

    /// Componentwise bounds of the enclosing box (`+inf` for the orthant).
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Box { lower, upper } | Shape::BoxHalfspace { lower, upper, .. } => {
                (lower.clone(), upper.clone())
            }
            Shape::NonnegOrthant { dim } => (vec![0.0; *dim], vec![f64::INFINITY; *dim]),
        }
    }

    pub fn is_box(&self) -> bool {
        matches!(self.shape, Shape::Box { .. })
    }

    /// `sup ||z - w||` over the set, infinite for the orthant.
    pub fn diameter(&self) -> f64 {
        let (lower, upper) = self.bounds();
        lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        if z.len() != self.dim() {
            return false;
        }
        let (lower, upper) = self.bounds();
        let in_box = z
            .iter()
            .zip(lower.iter().zip(&upper))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol);
        match &self.shape {
            Shape::BoxHalfspace { normal, offset, .. } => in_box && dot(normal, z) <= offset + tol,
            _ => in_box,
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("point", self.dim(), z.len())?;
        Ok(match &self.shape {
            Shape::Box { lower, upper } => clamp_box(z, lower, upper),
            Shape::NonnegOrthant { .. } => z.iter().map(|v| v.max(0.0)).collect(),
            Shape::BoxHalfspace {
                lower,
                upper,
                normal,
                offset,
            } => project_box_halfspace(z, lower, upper, normal, *offset),
        })
    }

    /// Projection by Dykstra's alternating scheme between the box and the
    /// halfspace. Other shapes project directly.
    ///
    /// Runs until successive iterates move less than [`DYKSTRA_TOL`] or
    /// [`DYKSTRA_MAX_SWEEPS`] sweeps have been made.
    pub fn project_dykstra(&self, z: &[f64]) -> Result<Vec<f64>> {
        let Shape::BoxHalfspace {
            lower,
            upper,
            normal,
            offset,
        } = &self.shape
        else {
            return self.project(z);
        };
        check_dim("point", self.dim(), z.len())?;
        let n = z.len();
        let nn = dot(normal, normal);
        let mut x = z.to_vec();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for _ in 0..DYKSTRA_MAX_SWEEPS {
            let prev = x.clone();
            let shifted: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
            let y = clamp_box(&shifted, lower, upper);
            for i in 0..n {
                p[i] = shifted[i] - y[i];
            }
            let shifted: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
            x = project_halfspace(&shifted, normal, nn, *offset);
            for i in 0..n {
                q[i] = shifted[i] - x[i];
            }
            // x may pause for a sweep while the corrections still change, so
            // also require the two projections to agree.
            let moved = crate::linalg::dist(&x, &prev);
            if moved < DYKSTRA_TOL && crate::linalg::dist(&x, &y) < DYKSTRA_TOL {
                break;
            }
        }
        Ok(x)
    }

    /// Draws a point of the set. Unbounded coordinates are sampled from
    /// `[0, unbounded_cap]`. Box-halfspace draws are uniform on the box with
    /// rejection; after 64 misses the last draw is projected.
    pub fn sample(&self, rng: &mut Rng, unbounded_cap: f64) -> Vec<f64> {
        let (lower, upper) = self.bounds();
        let draw = |rng: &mut Rng| -> Vec<f64> {
            lower
                .iter()
                .zip(&upper)
                .map(|(l, u)| {
                    let hi = if u.is_finite() { *u } else { l + unbounded_cap };
                    if hi > *l {
                        rng.random_range(*l..=hi)
                    } else {
                        *l
                    }
                })
                .collect()
        };
        match &self.shape {
            Shape::BoxHalfspace { normal, offset, .. } => {
                let mut z = draw(rng);
                for _ in 0..64 {
                    if dot(normal, &z) <= *offset {
                        return z;
                    }
                    z = draw(rng);
                }
                self.project(&z).expect("dimension matches")
            }
            _ => draw(rng),
        }
    }
}

fn clamp_box(z: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, u))| v.clamp(*l, *u))
        .collect()
}

fn project_halfspace(z: &[f64], normal: &[f64], nn: f64, offset: f64) -> Vec<f64> {
    let excess = dot(normal, z) - offset;
    if excess <= 0.0 || nn == 0.0 {
        return z.to_vec();
    }
    let t = excess / nn;
    z.iter().zip(normal).map(|(v, a)| v - t * a).collect()
}

pub(crate) fn min_linear_over_box(lower: &[f64], upper: &[f64], a: &[f64]) -> f64 {
    a.iter()
        .zip(lower.iter().zip(upper))
        .map(|(ai, (l, u))| {
            if *ai > 0.0 {
                ai * l
            } else if *ai < 0.0 {
                ai * u
            } else {
                0.0
            }
        })
        .sum()
}

/// Projection onto `box ∩ {a.z <= b}`.
///
/// The minimizer is `clamp(z - tau a)` for the smallest `tau >= 0` that
/// satisfies the halfspace. `phi(tau) = a . clamp(z - tau a)` is piecewise
/// linear and nonincreasing, so we walk its sorted breakpoints and solve the
/// crossing segment exactly.
fn project_box_halfspace(z: &[f64], lower: &[f64], upper: &[f64], a: &[f64], b: f64) -> Vec<f64> {
    let x0 = clamp_box(z, lower, upper);
    let mut phi = dot(a, &x0);
    if phi <= b {
        return x0;
    }

    // (tau, index, entering free range?)
    let mut events: Vec<(f64, usize, bool)> = Vec::with_capacity(2 * z.len());
    let mut slope = 0.0;
    for i in 0..z.len() {
        let ai = a[i];
        if ai == 0.0 {
            continue;
        }
        let t1 = (z[i] - upper[i]) / ai;
        let t2 = (z[i] - lower[i]) / ai;
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        if lo <= 0.0 && hi > 0.0 {
            slope -= ai * ai;
        }
        if lo > 0.0 {
            events.push((lo, i, true));
        }
        if hi > 0.0 {
            events.push((hi, i, false));
        }
    }
    events.sort_by(|p, q| p.0.total_cmp(&q.0));

    let mut tau = 0.0;
    let mut root = None;
    for &(t_event, i, entering) in &events {
        let phi_event = phi + slope * (t_event - tau);
        if phi_event <= b && slope < 0.0 {
            root = Some(tau + (b - phi) / slope);
            break;
        }
        phi = phi_event;
        tau = t_event;
        if entering {
            slope -= a[i] * a[i];
        } else {
            slope += a[i] * a[i];
        }
    }
    // Past the last breakpoint every coordinate sits at its minimizing bound,
    // which satisfies the halfspace because the set is nonempty.
    let tau = root.unwrap_or(tau);
    z.iter()
        .zip(a)
        .zip(lower.iter().zip(upper))
        .map(|((zi, ai), (l, u))| (zi - tau * ai).clamp(*l, *u))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;

    fn cut_square() -> ConvexSet {
        ConvexSet::box_halfspace(vec![0.0, 0.0], vec![5.0, 5.0], vec![1.0, 1.0], 4.0).unwrap()
    }

    /// Nearest point by scanning a grid of the feasible region.
    fn grid_nearest(set: &ConvexSet, z: &[f64], step: f64) -> Vec<f64> {
        let (lo, hi) = set.bounds();
        let nx = ((hi[0] - lo[0]) / step).round() as usize;
        let ny = ((hi[1] - lo[1]) / step).round() as usize;
        let mut best = (f64::INFINITY, vec![0.0, 0.0]);
        for i in 0..=nx {
            for j in 0..=ny {
                let p = [lo[0] + i as f64 * step, lo[1] + j as f64 * step];
                if !set.contains(&p, 1e-12) {
                    continue;
                }
                let d = dist(&p, z);
                if d < best.0 {
                    best = (d, p.to_vec());
                }
            }
        }
        best.1
    }

    #[test]
    fn box_clamps_to_upper() {
        let set = ConvexSet::boxed(vec![0.0], vec![5.0]).unwrap();
        assert_eq!(set.project(&[7.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn orthant_takes_positive_part() {
        let set = ConvexSet::nonneg_orthant(2).unwrap();
        assert_eq!(set.project(&[-1.0, 3.0]).unwrap(), vec![0.0, 3.0]);
    }

    #[test]
    fn box_halfspace_corner_projects_to_diagonal() {
        let set = cut_square();
        let p = set.project(&[5.0, 5.0]).unwrap();
        let oracle = grid_nearest(&set, &[5.0, 5.0], 1e-3);
        assert_abs_diff_eq!(oracle[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(oracle[1], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn box_halfspace_matches_grid_oracle() {
        let mut rng = stream(11, Stream::Monotonicity);
        for _ in 0..25 {
            let lower = vec![rng.random_range(-2.0..0.0), rng.random_range(-2.0..0.0)];
            let upper = vec![rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)];
            let normal = vec![rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0)];
            let offset = rng.random_range(-0.5..1.5);
            let Ok(set) = ConvexSet::box_halfspace(lower, upper, normal, offset) else {
                continue;
            };
            let z = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let p = set.project(&z).unwrap();
            let g = grid_nearest(&set, &z, 1e-3);
            // The grid point is feasible, so it can never beat the projection,
            // and its distance exceeds the optimum by at most one cell.
            let (dp, dg) = (dist(&p, &z), dist(&g, &z));
            assert!(dp <= dg + 1e-12, "set={set:?} z={z:?} p={p:?} grid={g:?}");
            assert!(dg - dp <= 2e-3, "set={set:?} z={z:?} p={p:?} grid={g:?}");
            assert!(set.contains(&p, 1e-12));
        }
    }

    #[test]
    fn dykstra_agrees_with_exact_projection() {
        let set = ConvexSet::box_halfspace(
            vec![0.0, 0.0, 0.0],
            vec![5.0, 2.0, 5.0],
            vec![1.0, 2.0, -0.5],
            3.0,
        )
        .unwrap();
        let mut rng = stream(5, Stream::Monotonicity);
        for _ in 0..200 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-6.0..8.0)).collect();
            let exact = set.project(&z).unwrap();
            let alt = set.project_dykstra(&z).unwrap();
            assert!(dist(&exact, &alt) < 1e-8, "z={z:?} {exact:?} {alt:?}");
        }
    }

    #[test]
    fn empty_box_halfspace_rejected() {
        let err = ConvexSet::box_halfspace(vec![0.0], vec![1.0], vec![1.0], -0.5).unwrap_err();
        assert!(matches!(err, Error::EmptySet(_)));
        assert!(ConvexSet::boxed(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let set = cut_square();
        assert!(matches!(
            set.project(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn samples_lie_in_the_set() {
        let mut rng = stream(3, Stream::GapSampling);
        let set = cut_square();
        for _ in 0..500 {
            assert!(set.contains(&set.sample(&mut rng, 10.0), 1e-12));
        }
    }
}
