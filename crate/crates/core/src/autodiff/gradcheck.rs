//! Central finite-difference verification of backprop gradients.
//!
//! The oracle only ever evaluates the *forward* pass: it perturbs one
//! coordinate at a time and recomputes the scalar loss, so it shares no
//! code path with [`super::Graph::backward`].

use rand::Rng;

/// Step used by the difference quotient.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Maximum tolerated relative error between backprop and the oracle.
pub const REL_TOL: f64 = 1e-4;

/// Denominator floor: coordinates whose gradient magnitude falls below this
/// are compared absolutely (at `REL_TOL * GRAD_FLOOR`), which keeps the
/// check immune to finite-difference round-off on near-zero gradients.
pub const GRAD_FLOOR: f64 = 1e-3;

/// Central difference `(f(x+h·e_i) − f(x−h·e_i)) / 2h` for each probed
/// coordinate `i`.
pub fn central_diff<F>(mut f: F, point: &[f64], coords: &[usize], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    coords
        .iter()
        .map(|&i| central_diff_at(&mut f, point, i, h))
        .collect()
}

/// Central difference at a single coordinate.
pub fn central_diff_at<F>(f: &mut F, point: &[f64], coord: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut buf = point.to_vec();
    let orig = buf[coord];
    buf[coord] = orig + h;
    let fp = f(&buf);
    buf[coord] = orig - h;
    let fm = f(&buf);
    (fp - fm) / (2.0 * h)
}

/// Central difference at step `h` with a two-scale validity check.
///
/// For a smooth function, shrinking the step to `h/4` moves the estimate
/// by at most the O(h^2) truncation term. A material change means the
/// `h`-probe straddles relu or maxpool crossings, where difference
/// quotients do not estimate the derivative backprop computes (shrinking
/// `h` makes such estimates converge to it again — the crossings are an
/// artifact of the probe width, not of backprop). Contaminated
/// coordinates return `None` and callers draw a replacement; accepted
/// ones return the `h`-step estimate.
pub fn smooth_central_diff<F>(f: &mut F, point: &[f64], coord: usize, h: f64) -> Option<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let d1 = central_diff_at(f, point, coord, h);
    let d4 = central_diff_at(f, point, coord, h / 4.0);
    let tol = (d1.abs().max(d4.abs()) * 5e-5).max(5e-8);
    if (d1 - d4).abs() <= tol {
        Some(d1)
    } else {
        None
    }
}

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)` for one coordinate pair.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Worst relative error across paired coordinates.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// Draw `count` probe coordinates (with replacement) from `0..len`.
pub fn sample_coords<R: Rng>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.gen_range(0..len)).collect()
}
