use rand::seq::index;
use rand::Rng;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const GRAD_FLOOR: f64 = 1e-2;

/// Central-difference check of `analytic` against `loss` around `params`.
///
/// Samples up to `coords` distinct coordinates. The error of a coordinate is
/// `|g_a - g_fd| / max(|g_a|, |g_fd|, GRAD_FLOOR)`.
pub fn finite_difference_check<F, R>(
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    coords: usize,
    step: f64,
    tol: f64,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let n = coords.min(params.len());
    let picked = index::sample(rng, params.len(), n);
    let mut probe = params.to_vec();
    let mut worst = (0.0_f64, 0usize);
    for i in picked.iter() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe);
        probe[i] = orig - step;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        if !(err <= worst.0) {
            worst = (err, i);
        }
    }
    GradCheckReport {
        coords_checked: n,
        max_rel_error: worst.0,
        worst_coord: worst.1,
        tol,
        passed: worst.0 < tol,
    }
}
