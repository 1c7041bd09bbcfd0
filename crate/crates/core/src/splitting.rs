//! Periodic cocycle diagnostics: monodromy, the invariant splitting along
//! the period, angle profiles, m-domination ratios, and the upper Lyapunov
//! exponent.
//!
//! The unstable direction is propagated forward around the period and the
//! stable one backward (each is attracting in that direction of time), with
//! per-step log-stretch accumulation on the fine integration grid. All
//! restriction norms on the one-dimensional subbundles are plain vector
//! stretch factors.

use crate::cocycle::{
    integrate_direction, integrate_matrix, CocycleError, CoefficientPath, DEFAULT_STEP,
};
use crate::sl2::{
    classify, eigen_splitting, signed_angle_gap, Direction, Sl2Error, SpectralKind,
    TracelessMatrix, UnimodularMatrix,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default frame/ratio sampling density per unit time.
pub const DEFAULT_SAMPLES_PER_UNIT: u32 = 64;
/// Angular tolerance for the frame closure checks.
pub const TOL_FRAME_ANGULAR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplittingError {
    #[error("monodromy is not hyperbolic (trace = {trace:.9})")]
    NotHyperbolic { trace: f64 },
    #[error("splitting consistency failure: {what} (angular error {error:.3e})")]
    ConsistencyFailure { what: String, error: f64 },
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
    #[error(transparent)]
    Sl2(#[from] Sl2Error),
}

/// A coefficient path understood cyclically: A(t + tau) = A(t).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PeriodicCocycle {
    path: CoefficientPath,
    samples_per_unit: u32,
}

impl PeriodicCocycle {
    pub fn new(path: CoefficientPath, samples_per_unit: u32) -> Self {
        assert!(samples_per_unit > 0);
        Self { path, samples_per_unit }
    }

    pub fn with_default_sampling(path: CoefficientPath) -> Self {
        Self::new(path, DEFAULT_SAMPLES_PER_UNIT)
    }

    pub fn path(&self) -> &CoefficientPath {
        &self.path
    }

    pub fn period(&self) -> f64 {
        self.path.duration()
    }

    pub fn samples_per_unit(&self) -> u32 {
        self.samples_per_unit
    }

    /// Replace the underlying path, keeping the sampling density.
    pub fn with_path(&self, path: CoefficientPath) -> Self {
        Self { path, samples_per_unit: self.samples_per_unit }
    }

    /// Coefficient value with the time wrapped into [0, tau).
    pub fn value_wrapped(&self, t: f64) -> TracelessMatrix {
        self.path.value_clamped(wrap(t, self.period()))
    }

    /// Phi(t, s) with wrapped coefficient evaluation; s and t are times on
    /// the universal cover, so spans beyond one period are allowed.
    pub fn fundamental_wrapped(
        &self,
        s: f64,
        t: f64,
        step: f64,
    ) -> Result<UnimodularMatrix, CocycleError> {
        integrate_matrix(&|r| self.value_wrapped(r), s, t, step)
    }

    /// Monodromy based at time 0.
    pub fn monodromy(&self, step: f64) -> Result<UnimodularMatrix, CocycleError> {
        self.fundamental_wrapped(0.0, self.period(), step)
    }

    /// Monodromy based at time q: Phi(q + tau, q).
    pub fn monodromy_based_at(&self, q: f64, step: f64) -> Result<UnimodularMatrix, CocycleError> {
        self.fundamental_wrapped(q, q + self.period(), step)
    }

    /// Propagate a line from s to t (wrapped), returning the arrival
    /// direction and the log-stretch along the way.
    pub fn propagate_wrapped(&self, d: &Direction, s: f64, t: f64, step: f64) -> (Direction, f64) {
        integrate_direction(&|r| self.value_wrapped(r), s, t, step, d)
    }

    /// Upper Lyapunov exponent: log(sigma)/tau for hyperbolic monodromy,
    /// zero otherwise (conservative one-dimensional symmetry).
    pub fn upper_lyapunov(&self, step: f64) -> Result<f64, CocycleError> {
        let m = self.monodromy(step)?;
        match classify(&m).kind {
            SpectralKind::Hyperbolic => {
                let (_, _, sigma) = eigen_splitting(&m).expect("hyperbolic by classification");
                Ok(sigma.ln() / self.period())
            }
            _ => Ok(0.0),
        }
    }
}

fn wrap(t: f64, period: f64) -> f64 {
    let mut r = t % period;
    if r < 0.0 {
        r += period;
    }
    r
}

// ---------------------------------------------------------------------------
// Splitting frame
// ---------------------------------------------------------------------------

/// Invariant splitting data along one period of a hyperbolic cocycle.
///
/// Directions and angles are reported on the sample grid; cumulative
/// log-stretches of the two invariant lines are kept on the fine
/// integration grid so root-finding on them stays accurate.
#[derive(Debug, Clone)]
pub struct SplittingFrame {
    pub period: f64,
    pub sigma: f64,
    pub monodromy: UnimodularMatrix,
    pub sample_times: Vec<f64>,
    pub nu: Vec<Direction>,
    pub ns: Vec<Direction>,
    pub angles: Vec<f64>,
    fine_step: f64,
    nu_fine: Vec<f64>,
    ns_fine: Vec<f64>,
    psi_u: Vec<f64>,
    psi_s: Vec<f64>,
}

impl SplittingFrame {
    pub fn min_angle(&self) -> f64 {
        self.angles.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn fine_step(&self) -> f64 {
        self.fine_step
    }

    /// Log-stretch of the unstable line from time 0 to t (t may exceed the
    /// period; full turns add psi_u(tau)).
    pub fn psi_u_at(&self, t: f64) -> f64 {
        self.psi_at(&self.psi_u, t)
    }

    /// Log-stretch of the stable line from time 0 to t.
    pub fn psi_s_at(&self, t: f64) -> f64 {
        self.psi_at(&self.psi_s, t)
    }

    pub fn psi_u_period(&self) -> f64 {
        *self.psi_u.last().unwrap()
    }

    pub fn psi_s_period(&self) -> f64 {
        *self.psi_s.last().unwrap()
    }

    fn psi_at(&self, table: &[f64], t: f64) -> f64 {
        let per_period = *table.last().unwrap();
        let turns = (t / self.period).floor();
        let local = t - turns * self.period;
        let x = local / self.fine_step;
        let k = (x.floor() as usize).min(table.len() - 2);
        let frac = x - k as f64;
        turns * per_period + table[k] + frac * (table[k + 1] - table[k])
    }

    /// Unstable direction at an arbitrary time, interpolated on the fine grid.
    pub fn nu_at(&self, t: f64) -> Direction {
        self.direction_at(&self.nu_fine, t)
    }

    /// Stable direction at an arbitrary time.
    pub fn ns_at(&self, t: f64) -> Direction {
        self.direction_at(&self.ns_fine, t)
    }

    pub fn angle_at(&self, t: f64) -> f64 {
        self.nu_at(t).angle_to(&self.ns_at(t))
    }

    fn direction_at(&self, table: &[f64], t: f64) -> Direction {
        let local = wrap(t, self.period);
        let x = local / self.fine_step;
        let k = (x.floor() as usize).min(table.len() - 2);
        let frac = x - k as f64;
        let gap = signed_angle_gap(table[k], table[k + 1]);
        Direction::from_angle(table[k] + frac * gap)
    }
}

/// Compute the invariant splitting along the period.
///
/// The monodromy eigen-splitting at time 0 is propagated: unstable
/// forward, stable backward. Closure around the loop is checked to
/// `TOL_FRAME_ANGULAR`, plus rebased eigen-direction spot checks at two
/// interior times.
pub fn hyperbolic_splitting(
    cocycle: &PeriodicCocycle,
    step: f64,
) -> Result<SplittingFrame, SplittingError> {
    let tau = cocycle.period();
    let monodromy = cocycle.monodromy(step)?;
    let cls = classify(&monodromy);
    if cls.kind != SpectralKind::Hyperbolic {
        return Err(SplittingError::NotHyperbolic { trace: cls.trace });
    }
    let (nu0, ns0, sigma) = eigen_splitting(&monodromy)?;

    let n_fine = (tau / step).ceil().max(1.0) as usize;
    let h = tau / n_fine as f64;
    let eval = |r: f64| cocycle.value_wrapped(r);

    // Forward pass: unstable line.
    let mut nu_fine = Vec::with_capacity(n_fine + 1);
    let mut psi_u = Vec::with_capacity(n_fine + 1);
    let mut d = nu0;
    let mut acc = 0.0;
    nu_fine.push(d.angle());
    psi_u.push(0.0);
    for k in 0..n_fine {
        let (next, ls) = integrate_direction(&eval, k as f64 * h, (k + 1) as f64 * h, h, &d);
        d = next;
        acc += ls;
        nu_fine.push(d.angle());
        psi_u.push(acc);
    }
    let closure_u = d.angle_to(&nu0);
    if closure_u > TOL_FRAME_ANGULAR {
        return Err(SplittingError::ConsistencyFailure {
            what: "unstable direction does not close up around the period".into(),
            error: closure_u,
        });
    }

    // Backward pass: stable line. Accumulated backward stretch from tau
    // down to t equals psi_s(t) - psi_s(tau).
    let mut ns_fine = vec![0.0; n_fine + 1];
    let mut bs = vec![0.0; n_fine + 1];
    let mut d = ns0;
    let mut acc = 0.0;
    ns_fine[n_fine] = d.angle();
    bs[n_fine] = 0.0;
    for k in (0..n_fine).rev() {
        let (next, ls) = integrate_direction(&eval, (k + 1) as f64 * h, k as f64 * h, h, &d);
        d = next;
        acc += ls;
        ns_fine[k] = d.angle();
        bs[k] = acc;
    }
    let closure_s = d.angle_to(&ns0);
    if closure_s > TOL_FRAME_ANGULAR {
        return Err(SplittingError::ConsistencyFailure {
            what: "stable direction does not close up around the period".into(),
            error: closure_s,
        });
    }
    let psi_s: Vec<f64> = bs.iter().map(|v| v - bs[0]).collect();

    let mut frame = SplittingFrame {
        period: tau,
        sigma,
        monodromy,
        sample_times: Vec::new(),
        nu: Vec::new(),
        ns: Vec::new(),
        angles: Vec::new(),
        fine_step: h,
        nu_fine,
        ns_fine,
        psi_u,
        psi_s,
    };

    let n_samples = (tau * cocycle.samples_per_unit() as f64).ceil().max(1.0) as usize;
    for k in 0..n_samples {
        let t = tau * k as f64 / n_samples as f64;
        let nu = frame.nu_at(t);
        let ns = frame.ns_at(t);
        frame.sample_times.push(t);
        frame.angles.push(nu.angle_to(&ns));
        frame.nu.push(nu);
        frame.ns.push(ns);
    }

    // Rebased spot checks: the propagated unstable direction must be an
    // eigen-direction of the monodromy based there.
    for frac in [0.25, 0.65] {
        let q = frac * tau;
        let rebased = cocycle.monodromy_based_at(q, step)?;
        if let Ok((nu_q, _, _)) = eigen_splitting(&rebased) {
            let err = frame.nu_at(q).angle_to(&nu_q);
            if err > TOL_FRAME_ANGULAR {
                return Err(SplittingError::ConsistencyFailure {
                    what: format!("rebased eigen-direction mismatch at t = {q:.3}"),
                    error: err,
                });
            }
        }
    }

    Ok(frame)
}

// ---------------------------------------------------------------------------
// Domination
// ---------------------------------------------------------------------------

/// Per-sample ratio profile r_m(t) = ||P^m | Ns(t)|| / ||P^m | Nu(t)||.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationReport {
    pub m: u32,
    pub sample_times: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Uniform verdict: r_m(t) <= 1/2 at every sample.
    pub dominated: bool,
    /// Times witnessing membership in Delta_m (r_m(t) >= 1/2).
    pub witnesses: Vec<f64>,
}

/// Ratio profile of the m-step restriction norms along the invariant
/// splitting. Restriction norms are stretch factors of the invariant
/// lines, read off the cumulative profiles.
pub fn domination_report(frame: &SplittingFrame, m: u32) -> DominationReport {
    let mf = m as f64;
    let mut ratios = Vec::with_capacity(frame.sample_times.len());
    let mut witnesses = Vec::new();
    let mut dominated = true;
    for &t in &frame.sample_times {
        let stretch_s = frame.psi_s_at(t + mf) - frame.psi_s_at(t);
        let stretch_u = frame.psi_u_at(t + mf) - frame.psi_u_at(t);
        let r = (stretch_s - stretch_u).exp();
        if r > 0.5 {
            dominated = false;
        }
        if r >= 0.5 {
            witnesses.push(t);
        }
        ratios.push(r);
    }
    DominationReport { m, sample_times: frame.sample_times.clone(), ratios, dominated, witnesses }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DominationTime {
    Dominated(u32),
    NotDominatedUpTo(u32),
}

/// Smallest m <= m_max with a uniform ratio bound of 1/2.
pub fn min_domination_time(frame: &SplittingFrame, m_max: u32) -> DominationTime {
    for m in 1..=m_max {
        if domination_report(frame, m).dominated {
            return DominationTime::Dominated(m);
        }
    }
    DominationTime::NotDominatedUpTo(m_max)
}

/// Minimum of the angle profile over the sample grid.
pub fn min_angle(frame: &SplittingFrame) -> f64 {
    frame.min_angle()
}

/// Angle and ratio profiles as CSV (columns t, angle, r_m).
pub fn profile_csv(frame: &SplittingFrame, report: &DominationReport) -> String {
    let mut out = String::from("t,angle,r_m\n");
    for (k, &t) in frame.sample_times.iter().enumerate() {
        out.push_str(&format!("{:.9},{:.12},{:.12e}\n", t, frame.angles[k], report.ratios[k]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{fundamental_solution, Segment, TrigEntry, TrigTerm};
    use crate::sl2::{log_unimodular_unchecked, op_norm2, rotation};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn diag_path(lambda: f64, tau: f64) -> PeriodicCocycle {
        PeriodicCocycle::with_default_sampling(CoefficientPath::constant(
            tau,
            TracelessMatrix::new(lambda, 0.0, 0.0),
        ))
    }

    /// A(t) = omega J + R_{omega t} D R_{-omega t}: the cocycle
    /// Phi(t) = R_{omega t} e^{t D}, whose frame rotates with the
    /// conjugation.
    fn conjugated_path(lambda: f64, omega: f64, tau: f64) -> PeriodicCocycle {
        let path = CoefficientPath::new(
            tau,
            vec![Segment {
                t0: 0.0,
                t1: tau,
                matrix: TracelessMatrix::new(0.0, -omega, omega),
            }],
            vec![
                TrigTerm { entry: TrigEntry::A, freq: 2.0 * omega, amp: lambda, phase: PI / 2.0 },
                TrigTerm { entry: TrigEntry::B, freq: 2.0 * omega, amp: lambda, phase: 0.0 },
                TrigTerm { entry: TrigEntry::C, freq: 2.0 * omega, amp: lambda, phase: 0.0 },
            ],
        );
        PeriodicCocycle::with_default_sampling(path)
    }

    #[test]
    fn monodromy_examples() {
        let zero = PeriodicCocycle::with_default_sampling(CoefficientPath::zero(2.0));
        assert!(zero.monodromy(DEFAULT_STEP).unwrap().dist_to_identity() <= 1e-12);

        let hyp = diag_path(0.7, 2.0);
        let m = hyp.monodromy(DEFAULT_STEP).unwrap();
        assert_abs_diff_eq!(m.m[0][0], (1.4f64).exp(), epsilon = 1e-9);

        let tau = 4.0;
        let rot = PeriodicCocycle::with_default_sampling(CoefficientPath::constant(
            tau,
            TracelessMatrix::rotation_generator(2.0 * PI / tau),
        ));
        let half = fundamental_solution(rot.path(), 0.0, tau / 2.0, DEFAULT_STEP).unwrap();
        assert!(op_norm2(&half.sub_matrix(&rotation(PI))) <= 1e-8);
        assert!(rot.monodromy(DEFAULT_STEP).unwrap().dist_to_identity() <= 1e-8);
    }

    #[test]
    fn splitting_of_constant_diagonal() {
        let cocycle = diag_path(0.5, 3.0);
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        assert_abs_diff_eq!(frame.sigma, (1.5f64).exp(), epsilon = 1e-8);
        for k in 0..frame.sample_times.len() {
            assert!(frame.nu[k].angle_to(&Direction::from_angle(0.0)) < 1e-9);
            assert!(frame.ns[k].angle_to(&Direction::from_angle(PI / 2.0)) < 1e-9);
            assert_abs_diff_eq!(frame.angles[k], PI / 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn splitting_rotates_with_conjugation() {
        let (lambda, tau) = (0.4, 6.0);
        let omega = PI / tau;
        let cocycle = conjugated_path(lambda, omega, tau);
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        // Conjugation covariance oracle: Nu(t) at angle omega t, Ns at
        // omega t + pi/2; the angle profile is identically pi/2.
        for (k, &t) in frame.sample_times.iter().enumerate() {
            assert!(
                frame.nu[k].angle_to(&Direction::from_angle(omega * t)) < 1e-6,
                "nu at t = {t}"
            );
            assert!((frame.angles[k] - PI / 2.0).abs() < 1e-6, "angle at t = {t}");
        }
    }

    #[test]
    fn splitting_of_golden_mean_generator() {
        let cat = UnimodularMatrix::new(2.0, 1.0, 1.0, 1.0);
        let generator = log_unimodular_unchecked(&cat);
        let cocycle =
            PeriodicCocycle::with_default_sampling(CoefficientPath::constant(1.0, generator));
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        let (nu, ns, sigma) = eigen_splitting(&cat).unwrap();
        assert_abs_diff_eq!(frame.sigma, sigma, epsilon = 1e-8);
        for k in 0..frame.sample_times.len() {
            assert!(frame.nu[k].angle_to(&nu) < 1e-7);
            assert!(frame.ns[k].angle_to(&ns) < 1e-7);
        }
    }

    #[test]
    fn splitting_rejects_elliptic() {
        let rot = PeriodicCocycle::with_default_sampling(CoefficientPath::constant(
            2.0,
            TracelessMatrix::rotation_generator(0.3),
        ));
        assert!(matches!(
            hyperbolic_splitting(&rot, DEFAULT_STEP),
            Err(SplittingError::NotHyperbolic { .. })
        ));
    }

    #[test]
    fn domination_ratio_closed_form() {
        // r_m = e^{-2 lambda m} for the constant diagonal path.
        let cocycle = diag_path(0.05, 20.0);
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        let r6 = domination_report(&frame, 6);
        assert!(!r6.dominated);
        assert_eq!(r6.witnesses.len(), r6.sample_times.len());
        for &r in &r6.ratios {
            assert_abs_diff_eq!(r, (-0.6f64).exp(), epsilon = 1e-8);
        }
        let r7 = domination_report(&frame, 7);
        assert!(r7.dominated);
        assert!(r7.witnesses.is_empty());
        for &r in &r7.ratios {
            assert_abs_diff_eq!(r, (-0.7f64).exp(), epsilon = 1e-8);
        }
        assert_eq!(min_domination_time(&frame, 10), DominationTime::Dominated(7));
    }

    #[test]
    fn domination_time_strongly_hyperbolic() {
        let cocycle = diag_path(2.0, 10.0);
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        assert_eq!(min_domination_time(&frame, 5), DominationTime::Dominated(1));
    }

    #[test]
    fn domination_fails_for_oscillating_ratio() {
        // Expansion on [0,1), contraction on [1,2): the one-step ratio
        // oscillates around one and no m <= 6 dominates.
        let path = CoefficientPath::new(
            2.0,
            vec![
                Segment { t0: 0.0, t1: 1.0, matrix: TracelessMatrix::new(0.4, 0.0, 0.0) },
                Segment { t0: 1.0, t1: 2.0, matrix: TracelessMatrix::new(-0.3, 0.0, 0.0) },
            ],
            Vec::new(),
        );
        let cocycle = PeriodicCocycle::with_default_sampling(path);
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        assert_eq!(min_domination_time(&frame, 6), DominationTime::NotDominatedUpTo(6));
        let r1 = domination_report(&frame, 1);
        assert!(r1.ratios.iter().cloned().fold(0.0f64, f64::max) > 1.0);
    }

    #[test]
    fn upper_lyapunov_examples() {
        assert_abs_diff_eq!(
            diag_path(0.7, 5.0).upper_lyapunov(DEFAULT_STEP).unwrap(),
            0.7,
            epsilon = 1e-9
        );
        let rot = PeriodicCocycle::with_default_sampling(CoefficientPath::constant(
            2.0,
            TracelessMatrix::rotation_generator(0.3),
        ));
        assert_eq!(rot.upper_lyapunov(DEFAULT_STEP).unwrap(), 0.0);
        let cat = UnimodularMatrix::new(2.0, 1.0, 1.0, 1.0);
        let tau = 2.0;
        let cocycle = PeriodicCocycle::with_default_sampling(CoefficientPath::constant(
            tau,
            log_unimodular_unchecked(&cat) * (1.0 / tau),
        ));
        let want = (0.5 * (3.0 + 5.0f64.sqrt())).ln() / tau;
        assert_abs_diff_eq!(cocycle.upper_lyapunov(DEFAULT_STEP).unwrap(), want, epsilon = 1e-9);
    }

    #[test]
    fn lyapunov_matches_iterated_norm_growth() {
        let cocycle = conjugated_path(0.4, PI / 6.0, 6.0);
        let lam = cocycle.upper_lyapunov(DEFAULT_STEP).unwrap();
        let m = cocycle.monodromy(DEFAULT_STEP).unwrap();
        let mut power = UnimodularMatrix::IDENTITY;
        for _ in 0..16 {
            power = m * power;
        }
        let estimate = power.op_norm().ln() / (16.0 * cocycle.period());
        assert_abs_diff_eq!(lam, estimate, epsilon = 1e-6);
    }

    #[test]
    fn min_angle_small_for_near_parabolic() {
        // Constant generator with eigen-angle 0.01 and trace slightly
        // above 2: the frame angle equals the eigen-angle everywhere.
        let m = crate::sampling::hyperbolic_from_parts(2.0001, 0.3, 0.01, false);
        let cocycle = PeriodicCocycle::with_default_sampling(CoefficientPath::constant(
            4.0,
            log_unimodular_unchecked(&m) * 0.25,
        ));
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        assert_abs_diff_eq!(frame.min_angle(), 0.01, epsilon = 1e-6);
    }

    #[test]
    fn invariance_and_conservative_symmetry() {
        let cocycle = conjugated_path(0.5, PI / 8.0, 8.0);
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        // Invariance: propagating the frame directions between sample
        // times lands on the frame directions.
        for &(i, j) in &[(0usize, 13usize), (7, 101), (50, 200)] {
            let (s, t) = (frame.sample_times[i], frame.sample_times[j]);
            let (arrived, _) = cocycle.propagate_wrapped(&frame.nu[i], s, t, DEFAULT_STEP);
            assert!(arrived.angle_to(&frame.nu[j]) < 1e-6);
            let (arrived, _) = cocycle.propagate_wrapped(&frame.ns[i], s, t, DEFAULT_STEP);
            assert!(arrived.angle_to(&frame.ns[j]) < 1e-6);
        }
        // Conservative symmetry: the period stretches multiply to one.
        assert!((frame.psi_u_period() + frame.psi_s_period()).abs() < 1e-6);
        // And the unstable period stretch is log sigma.
        assert_abs_diff_eq!(frame.psi_u_period(), frame.sigma.ln(), epsilon = 1e-6);
    }

    #[test]
    fn ratio_monotonicity_closed_form() {
        let cocycle = diag_path(0.3, 12.0);
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        let mut previous = f64::INFINITY;
        for m in 1..=6 {
            let report = domination_report(&frame, m);
            let want = (-2.0 * 0.3 * m as f64).exp();
            for &r in &report.ratios {
                assert_abs_diff_eq!(r, want, epsilon = 1e-8);
            }
            assert!(want < previous);
            previous = want;
        }
    }

    #[test]
    fn profile_csv_has_header_and_rows() {
        let cocycle = diag_path(0.3, 2.0);
        let frame = hyperbolic_splitting(&cocycle, DEFAULT_STEP).unwrap();
        let report = domination_report(&frame, 1);
        let csv = profile_csv(&frame, &report);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,angle,r_m"));
        assert_eq!(lines.count(), frame.sample_times.len());
    }
}
