//! Random matrix and frame samplers shared by the property campaigns and
//! the test suites. All samplers are driven by a caller-supplied RNG so
//! campaigns stay reproducible.

use crate::sl2::UnimodularMatrix;
use rand::Rng;

/// Hyperbolic unimodular matrix from explicit spectral data: |trace|,
/// unstable eigen-direction angle, signed angle gap to the stable
/// direction, and an overall sign flip.
pub fn hyperbolic_from_parts(
    abs_trace: f64,
    u_angle: f64,
    gap: f64,
    negate: bool,
) -> UnimodularMatrix {
    let sigma = 0.5 * (abs_trace + (abs_trace * abs_trace - 4.0).sqrt());
    let (su, cu) = u_angle.sin_cos();
    let (ss, cs) = (u_angle + gap).sin_cos();
    // V = [v_u | v_s], M = V diag(sigma, 1/sigma) V^{-1}.
    let det_v = cu * ss - su * cs;
    let v_inv = [[ss / det_v, -cs / det_v], [-su / det_v, cu / det_v]];
    let lam = [sigma, 1.0 / sigma];
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = cu * lam[0] * v_inv[0][j] * [1.0, 0.0][i]
                + su * lam[0] * v_inv[0][j] * [0.0, 1.0][i]
                + cs * lam[1] * v_inv[1][j] * [1.0, 0.0][i]
                + ss * lam[1] * v_inv[1][j] * [0.0, 1.0][i];
        }
    }
    let sign = if negate { -1.0 } else { 1.0 };
    UnimodularMatrix::new(sign * m[0][0], sign * m[0][1], sign * m[1][0], sign * m[1][1])
}

/// Random hyperbolic matrix with |trace| in `trace_range` and eigen-angle
/// at least `min_gap` (both orientations and both trace signs occur).
pub fn random_hyperbolic<R: Rng>(
    rng: &mut R,
    trace_range: (f64, f64),
    min_gap: f64,
) -> UnimodularMatrix {
    let abs_trace = rng.gen_range(trace_range.0..trace_range.1);
    let u_angle = rng.gen_range(0.0..std::f64::consts::PI);
    let gap_mag = rng.gen_range(min_gap..(std::f64::consts::PI / 2.0));
    let gap = if rng.gen::<bool>() { gap_mag } else { -gap_mag };
    hyperbolic_from_parts(abs_trace, u_angle, gap, rng.gen::<bool>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sl2::classify;

    #[test]
    fn constructed_matrix_has_requested_spectrum() {
        let m = hyperbolic_from_parts(3.0, 0.4, 0.8, false);
        assert!((m.det() - 1.0).abs() < 1e-12);
        assert!((m.trace() - 3.0).abs() < 1e-12);
        assert!(classify(&m).is_hyperbolic());
        let flipped = hyperbolic_from_parts(3.0, 0.4, 0.8, true);
        assert!((flipped.trace() + 3.0).abs() < 1e-12);
    }
}
