//! Time-dependent traceless coefficient paths and their unimodular
//! fundamental solutions.
//!
//! A [`CoefficientPath`] is a layered description of a linear variational
//! equation u' = A(t) u with A(t) traceless: an analytic base layer
//! (piecewise-constant segments plus trigonometric terms) and an ordered
//! list of [`WindowModifier`]s, each supported on a unit-length window.
//! Windows are pairwise disjoint, so the flow "below" any modifier inside
//! its own window is the base-layer flow; each modifier carries a
//! precomputed table of that flow.
//!
//! Integration is classical fixed-step RK4 with the determinant rescaled
//! to one after every step, which realizes exact unimodularity instead of
//! merely approximating it.

use crate::sl2::{exp_traceless, op_norm2, Direction, TracelessMatrix, UnimodularMatrix};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// Default integrator step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Cocycle-identity tolerance (relative, on grid nodes).
pub const TOL_COC: f64 = 1e-7;
/// Maximum tolerated determinant drift in a single step before renormalization.
pub const MAX_DET_DRIFT: f64 = 1e-4;
/// Resolution of the per-modifier base-flow tables.
const TABLE_NODES: usize = 1024;
/// Grid density (samples per unit time) for sup-norm estimates.
const BOUND_SAMPLES_PER_UNIT: usize = 256;
/// Slack for domain checks at interval endpoints.
const DOMAIN_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CocycleError {
    #[error("time {t} outside path domain [0, {duration}]")]
    OutOfDomain { t: f64, duration: f64 },
    #[error("determinant drift {drift:.3e} at t = {t:.6} exceeds {MAX_DET_DRIFT:.0e}; refine the step")]
    StepTooCoarse { t: f64, drift: f64 },
    #[error("modifier window [{s0}, {s0} + 1] overlaps an existing window or leaves the domain")]
    WindowOverlap { s0: f64 },
}

// ---------------------------------------------------------------------------
// Bump function
// ---------------------------------------------------------------------------

/// Quintic smoothstep ramp on [0, 1]: alpha(t) = 10 t^3 - 15 t^4 + 6 t^5,
/// clamped outside. alpha(0) = 0, alpha(1) = 1, alpha'(0) = alpha'(1) = 0,
/// and max alpha' = 15/8 < 2.
#[derive(Debug, Clone, Copy, Default)]
pub struct BumpFunction;

impl BumpFunction {
    pub fn value(t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            1.0
        } else {
            t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
        }
    }

    pub fn derivative(t: f64) -> f64 {
        if t <= 0.0 || t >= 1.0 {
            0.0
        } else {
            30.0 * t * t * (1.0 - t) * (1.0 - t)
        }
    }
}

// ---------------------------------------------------------------------------
// Base layer
// ---------------------------------------------------------------------------

pub mod traceless_as_array {
    use super::TracelessMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &TracelessMatrix, s: S) -> Result<S::Ok, S::Error> {
        [m.a, m.b, m.c].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TracelessMatrix, D::Error> {
        let [a, b, c] = <[f64; 3]>::deserialize(d)?;
        Ok(TracelessMatrix::new(a, b, c))
    }
}

/// Piecewise-constant contribution: `matrix` on [t0, t1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    #[serde(with = "traceless_as_array")]
    pub matrix: TracelessMatrix,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TrigEntry {
    A,
    B,
    C,
}

/// Sinusoidal contribution `amp * sin(freq * t + phase)` added to one entry
/// of the traceless representation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TrigTerm {
    pub entry: TrigEntry,
    pub freq: f64,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

// ---------------------------------------------------------------------------
// Window modifiers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModifierKind {
    /// Multiplies the window flow by `exp(Q)` on the right:
    /// A(t) += alpha'(t - s0) Phi(t, s0) Q Phi(t, s0)^{-1}.
    RightFactor,
    /// Multiplies the window flow by `exp(Q)` on the left:
    /// A(t) is replaced by alpha' Q + e^{alpha Q} A(t) e^{-alpha Q}.
    LeftFactor,
    /// Right factor with generator `t_scale * Q`; the common scale is the
    /// bisection parameter of the long-orbit pipeline.
    HyperbolicFactor,
}

/// Base-layer flow Phi(t, s0) tabulated across one window.
#[derive(Debug)]
struct FlowTable {
    s0: f64,
    h: f64,
    nodes: Vec<UnimodularMatrix>,
}

#[derive(Debug, Clone)]
pub struct WindowModifier {
    pub s0: f64,
    pub kind: ModifierKind,
    pub generator: TracelessMatrix,
    pub t_scale: f64,
    table: Option<Arc<FlowTable>>,
}

impl PartialEq for WindowModifier {
    fn eq(&self, other: &Self) -> bool {
        self.s0 == other.s0
            && self.kind == other.kind
            && self.generator == other.generator
            && self.t_scale == other.t_scale
    }
}

impl WindowModifier {
    fn effective_generator(&self) -> TracelessMatrix {
        match self.kind {
            ModifierKind::HyperbolicFactor => self.generator * self.t_scale,
            _ => self.generator,
        }
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.s0 && t <= self.s0 + 1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct ModifierRepr {
    s0: f64,
    kind: ModifierKind,
    #[serde(with = "traceless_as_array")]
    generator: TracelessMatrix,
    #[serde(default = "one")]
    t_scale: f64,
}

fn one() -> f64 {
    1.0
}

// ---------------------------------------------------------------------------
// Coefficient path
// ---------------------------------------------------------------------------

/// Wire representation matching the path JSON schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PathRepr {
    duration: f64,
    #[serde(default)]
    segments: Vec<Segment>,
    #[serde(default)]
    trig: Vec<TrigTerm>,
    #[serde(default)]
    modifiers: Vec<ModifierRepr>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(from = "PathRepr", into = "PathRepr")]
pub struct CoefficientPath {
    duration: f64,
    segments: Vec<Segment>,
    trig: Vec<TrigTerm>,
    modifiers: Vec<WindowModifier>,
    /// sup_t ||A(t)|| estimated on a sampling grid, kept current across
    /// modifier insertions.
    cached_bound: f64,
}

impl From<PathRepr> for CoefficientPath {
    fn from(r: PathRepr) -> Self {
        let mut path = CoefficientPath::new(r.duration, r.segments, r.trig);
        for m in r.modifiers {
            path = path
                .with_modifier(m.kind, m.s0, m.generator, m.t_scale)
                .expect("serialized modifier windows must be disjoint and in-domain");
        }
        path
    }
}

impl From<CoefficientPath> for PathRepr {
    fn from(p: CoefficientPath) -> Self {
        PathRepr {
            duration: p.duration,
            segments: p.segments,
            trig: p.trig,
            modifiers: p
                .modifiers
                .iter()
                .map(|m| ModifierRepr {
                    s0: m.s0,
                    kind: m.kind,
                    generator: m.generator,
                    t_scale: m.t_scale,
                })
                .collect(),
        }
    }
}

impl CoefficientPath {
    pub fn new(duration: f64, segments: Vec<Segment>, trig: Vec<TrigTerm>) -> Self {
        assert!(duration > 0.0, "path duration must be positive");
        let mut path = Self {
            duration,
            segments,
            trig,
            modifiers: Vec::new(),
            cached_bound: 0.0,
        };
        path.cached_bound = path.estimate_bound();
        path
    }

    pub fn constant(duration: f64, matrix: TracelessMatrix) -> Self {
        Self::new(
            duration,
            vec![Segment { t0: 0.0, t1: duration, matrix }],
            Vec::new(),
        )
    }

    pub fn zero(duration: f64) -> Self {
        Self::new(duration, Vec::new(), Vec::new())
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn modifiers(&self) -> &[WindowModifier] {
        &self.modifiers
    }

    /// sup ||A(t)|| over the sampling grid (includes modifier layers).
    pub fn coefficient_bound(&self) -> f64 {
        self.cached_bound
    }

    /// sup ||base(t)|| over the sampling grid, ignoring modifiers.
    pub fn base_bound(&self) -> f64 {
        let n = (self.duration * BOUND_SAMPLES_PER_UNIT as f64).ceil() as usize + 1;
        let mut sup: f64 = 0.0;
        for k in 0..=n {
            let t = self.duration * k as f64 / n as f64;
            sup = sup.max(self.base_value(t).op_norm());
        }
        sup
    }

    fn estimate_bound(&self) -> f64 {
        let n = (self.duration * BOUND_SAMPLES_PER_UNIT as f64).ceil() as usize + 1;
        let mut sup: f64 = 0.0;
        for k in 0..=n {
            let t = self.duration * k as f64 / n as f64;
            sup = sup.max(self.value_clamped(t).op_norm());
        }
        sup
    }

    /// Base layer value: sum of covering segments plus trigonometric terms.
    pub fn base_value(&self, t: f64) -> TracelessMatrix {
        let mut v = TracelessMatrix::ZERO;
        for seg in &self.segments {
            let covers = t >= seg.t0 && (t < seg.t1 || (t == seg.t1 && seg.t1 >= self.duration));
            if covers {
                v = v + seg.matrix;
            }
        }
        for term in &self.trig {
            let x = term.amp * (term.freq * t + term.phase).sin();
            match term.entry {
                TrigEntry::A => v.a += x,
                TrigEntry::B => v.b += x,
                TrigEntry::C => v.c += x,
            }
        }
        v
    }

    /// Coefficient matrix at time t, with the window correction of the
    /// (unique, windows being disjoint) modifier containing t.
    pub fn evaluate(&self, t: f64) -> Result<TracelessMatrix, CocycleError> {
        if t < -DOMAIN_EPS || t > self.duration + DOMAIN_EPS {
            return Err(CocycleError::OutOfDomain { t, duration: self.duration });
        }
        Ok(self.value_clamped(t))
    }

    pub fn value_clamped(&self, t: f64) -> TracelessMatrix {
        let t = t.clamp(0.0, self.duration);
        let base = self.base_value(t);
        let Some(modifier) = self.modifiers.iter().find(|m| m.contains(t)) else {
            return base;
        };
        let local = t - modifier.s0;
        match modifier.kind {
            ModifierKind::RightFactor | ModifierKind::HyperbolicFactor => {
                let da = BumpFunction::derivative(local);
                if da == 0.0 {
                    return base;
                }
                let phi = modifier
                    .table
                    .as_ref()
                    .expect("modifier tables are built at insertion")
                    .query(t, self);
                base + modifier.effective_generator().conjugate_by(&phi) * da
            }
            ModifierKind::LeftFactor => {
                let da = BumpFunction::derivative(local);
                let al = BumpFunction::value(local);
                let conj = exp_traceless(&(modifier.generator * al));
                base.conjugate_by(&conj) + modifier.generator * da
            }
        }
    }

    /// Add a modifier on the window [s0, s0 + 1]. The window must lie in
    /// the domain and be disjoint from every existing window.
    pub fn with_modifier(
        &self,
        kind: ModifierKind,
        s0: f64,
        generator: TracelessMatrix,
        t_scale: f64,
    ) -> Result<Self, CocycleError> {
        if s0 < -DOMAIN_EPS || s0 + 1.0 > self.duration + DOMAIN_EPS {
            return Err(CocycleError::WindowOverlap { s0 });
        }
        if self
            .modifiers
            .iter()
            .any(|m| s0 < m.s0 + 1.0 - DOMAIN_EPS && m.s0 < s0 + 1.0 - DOMAIN_EPS)
        {
            return Err(CocycleError::WindowOverlap { s0 });
        }
        let table = match kind {
            ModifierKind::RightFactor | ModifierKind::HyperbolicFactor => {
                Some(Arc::new(FlowTable::build(self, s0)))
            }
            ModifierKind::LeftFactor => None,
        };
        let mut path = self.clone();
        path.modifiers.push(WindowModifier { s0, kind, generator, t_scale, table });
        path.modifiers.sort_by(|x, y| x.s0.total_cmp(&y.s0));
        path.cached_bound = path.estimate_bound();
        Ok(path)
    }

    /// Copy of the path with the common scale of every hyperbolic-factor
    /// modifier set to `t`. Flow tables are shared, so this is cheap.
    pub fn with_hyperbolic_scale(&self, t: f64) -> Self {
        let mut path = self.clone();
        for m in &mut path.modifiers {
            if m.kind == ModifierKind::HyperbolicFactor {
                m.t_scale = t;
            }
        }
        path
    }

    /// Copy with the generator of the modifier at `index` replaced. The
    /// flow table depends only on the base layer, so it is shared.
    pub fn with_generator_at(&self, index: usize, generator: TracelessMatrix) -> Self {
        let mut path = self.clone();
        path.modifiers[index].generator = generator;
        path
    }

    /// Copy with the modifier whose window starts at `s0` removed.
    pub fn without_modifier_at(&self, s0: f64) -> Self {
        let mut path = self.clone();
        path.modifiers.retain(|m| (m.s0 - s0).abs() > 1e-12);
        path.cached_bound = path.estimate_bound();
        path
    }

    /// Largest pointwise coefficient distance to `other` on a dense grid.
    pub fn sup_distance(&self, other: &Self, samples_per_unit: usize) -> f64 {
        let n = (self.duration * samples_per_unit as f64).ceil() as usize + 1;
        let mut sup: f64 = 0.0;
        for k in 0..=n {
            let t = self.duration * k as f64 / n as f64;
            let d = self.value_clamped(t) - other.value_clamped(t);
            sup = sup.max(d.op_norm());
        }
        sup
    }
}

impl FlowTable {
    /// Tabulate the base-layer flow Phi(s0 + k h, s0) across the window.
    fn build(path: &CoefficientPath, s0: f64) -> Self {
        let h = 1.0 / TABLE_NODES as f64;
        let mut nodes = Vec::with_capacity(TABLE_NODES + 1);
        let mut u = UnimodularMatrix::IDENTITY;
        nodes.push(u);
        for k in 0..TABLE_NODES {
            let t = s0 + k as f64 * h;
            let p = rk4_matrix_step(&|r| path.base_value(r), t, h, &UnimodularMatrix::IDENTITY);
            u = p.renormalize_det() * u;
            nodes.push(u);
        }
        Self { s0, h, nodes }
    }

    /// Phi(t, s0): stored node below t plus one short exact step.
    fn query(&self, t: f64, path: &CoefficientPath) -> UnimodularMatrix {
        let local = (t - self.s0).clamp(0.0, 1.0);
        let k = ((local / self.h).floor() as usize).min(self.nodes.len() - 1);
        let node_t = self.s0 + k as f64 * self.h;
        let rem = t - node_t;
        if rem <= 1e-15 {
            return self.nodes[k];
        }
        let p = rk4_matrix_step(&|r| path.base_value(r), node_t, rem, &UnimodularMatrix::IDENTITY);
        p.renormalize_det() * self.nodes[k]
    }
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

fn traceless_times(a: &TracelessMatrix, u: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a.a * u[0][0] + a.b * u[1][0], a.a * u[0][1] + a.b * u[1][1]],
        [a.c * u[0][0] - a.a * u[1][0], a.c * u[0][1] - a.a * u[1][1]],
    ]
}

fn mat_axpy(u: &[[f64; 2]; 2], s: f64, k: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [u[0][0] + s * k[0][0], u[0][1] + s * k[0][1]],
        [u[1][0] + s * k[1][0], u[1][1] + s * k[1][1]],
    ]
}

/// One classical RK4 step of U' = A(t) U.
fn rk4_matrix_step(
    eval: &impl Fn(f64) -> TracelessMatrix,
    t: f64,
    h: f64,
    u: &UnimodularMatrix,
) -> UnimodularMatrix {
    let a1 = eval(t);
    let a2 = eval(t + 0.5 * h);
    let a3 = eval(t + h);
    let u0 = u.entries();
    let k1 = traceless_times(&a1, &u0);
    let k2 = traceless_times(&a2, &mat_axpy(&u0, 0.5 * h, &k1));
    let k3 = traceless_times(&a2, &mat_axpy(&u0, 0.5 * h, &k2));
    let k4 = traceless_times(&a3, &mat_axpy(&u0, h, &k3));
    let mut out = u0;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += h / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
        }
    }
    UnimodularMatrix::from_entries(out)
}

fn rk4_vector_step(
    eval: &impl Fn(f64) -> TracelessMatrix,
    t: f64,
    h: f64,
    v: (f64, f64),
) -> (f64, f64) {
    let a1 = eval(t);
    let a2 = eval(t + 0.5 * h);
    let a3 = eval(t + h);
    let k1 = a1.apply(v);
    let k2 = a2.apply((v.0 + 0.5 * h * k1.0, v.1 + 0.5 * h * k1.1));
    let k3 = a2.apply((v.0 + 0.5 * h * k2.0, v.1 + 0.5 * h * k2.1));
    let k4 = a3.apply((v.0 + h * k3.0, v.1 + h * k3.1));
    (
        v.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        v.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Integrate U' = A(t) U from s to t (either order) with determinant
/// renormalization after every step.
///
/// Each step is taken as a one-step flow matrix P from the identity and
/// renormalized by det(P) before composing. The step matrix has O(1)
/// entries, so its determinant carries no cancellation noise even when the
/// accumulated solution is badly conditioned; renormalizing by det(U)
/// directly would inject noise of order eps * ||U||^2.
pub fn integrate_matrix(
    eval: &impl Fn(f64) -> TracelessMatrix,
    s: f64,
    t: f64,
    step: f64,
) -> Result<UnimodularMatrix, CocycleError> {
    let span = t - s;
    if span == 0.0 {
        return Ok(UnimodularMatrix::IDENTITY);
    }
    let n = (span.abs() / step).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut u = UnimodularMatrix::IDENTITY;
    for k in 0..n {
        let tk = s + k as f64 * h;
        let p = rk4_matrix_step(eval, tk, h, &UnimodularMatrix::IDENTITY);
        let drift = (p.det() - 1.0).abs();
        if drift > MAX_DET_DRIFT {
            return Err(CocycleError::StepTooCoarse { t: tk, drift });
        }
        u = p.renormalize_det() * u;
    }
    Ok(u)
}

/// Propagate a unit vector under u' = A(t) u, renormalizing each step;
/// returns the final direction and the accumulated log-stretch of the line.
pub fn integrate_direction(
    eval: &impl Fn(f64) -> TracelessMatrix,
    s: f64,
    t: f64,
    step: f64,
    d: &Direction,
) -> (Direction, f64) {
    let span = t - s;
    let mut v = d.unit_vector();
    let mut log_stretch = 0.0;
    if span == 0.0 {
        return (*d, 0.0);
    }
    let n = (span.abs() / step).ceil().max(1.0) as usize;
    let h = span / n as f64;
    for k in 0..n {
        let tk = s + k as f64 * h;
        let w = rk4_vector_step(eval, tk, h, v);
        let norm = (w.0 * w.0 + w.1 * w.1).sqrt();
        log_stretch += norm.ln();
        v = (w.0 / norm, w.1 / norm);
    }
    (Direction::from_vector(v.0, v.1), log_stretch)
}

/// Fundamental solution Phi(t, s) of the path: solves U' = A(r) U with
/// U(s) = I, evaluated at t. Requires 0 <= s <= t <= duration.
pub fn fundamental_solution(
    path: &CoefficientPath,
    s: f64,
    t: f64,
    step: f64,
) -> Result<UnimodularMatrix, CocycleError> {
    if s < -DOMAIN_EPS || t > path.duration() + DOMAIN_EPS || s > t {
        return Err(CocycleError::OutOfDomain {
            t: if s > t { s } else { t },
            duration: path.duration(),
        });
    }
    integrate_matrix(&|r| path.value_clamped(r), s, t, step)
}

/// Direction of Phi(t, s) v for any representative v of d.
pub fn propagate_direction(
    path: &CoefficientPath,
    d: &Direction,
    s: f64,
    t: f64,
    step: f64,
) -> Result<Direction, CocycleError> {
    if s < -DOMAIN_EPS || t > path.duration() + DOMAIN_EPS || s > t {
        return Err(CocycleError::OutOfDomain {
            t: if s > t { s } else { t },
            duration: path.duration(),
        });
    }
    Ok(integrate_direction(&|r| path.value_clamped(r), s, t, step, d).0)
}

// ---------------------------------------------------------------------------
// Fundamental solution cache
// ---------------------------------------------------------------------------

/// Grid of Phi(t_k, 0) values with dense output by one short step from the
/// nearest node below.
#[derive(Debug)]
pub struct FundamentalSolutionCache {
    grid_step: f64,
    nodes: Vec<UnimodularMatrix>,
}

impl FundamentalSolutionCache {
    pub fn build(
        path: &CoefficientPath,
        grid_step: f64,
        integrator_step: f64,
    ) -> Result<Self, CocycleError> {
        let n = (path.duration() / grid_step).ceil() as usize;
        let mut nodes = Vec::with_capacity(n + 1);
        let mut u = UnimodularMatrix::IDENTITY;
        nodes.push(u);
        for k in 0..n {
            let t0 = k as f64 * grid_step;
            let t1 = ((k + 1) as f64 * grid_step).min(path.duration());
            let hop = integrate_matrix(&|r| path.value_clamped(r), t0, t1, integrator_step)?;
            u = hop * u;
            nodes.push(u);
        }
        Ok(Self { grid_step, nodes })
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn node(&self, k: usize) -> &UnimodularMatrix {
        &self.nodes[k]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Phi(t, 0).
    pub fn value(&self, path: &CoefficientPath, t: f64, step: f64) -> UnimodularMatrix {
        let k = ((t / self.grid_step).floor() as usize).min(self.nodes.len() - 1);
        let node_t = k as f64 * self.grid_step;
        if (t - node_t).abs() <= 1e-15 {
            return self.nodes[k];
        }
        let hop = integrate_matrix(&|r| path.value_clamped(r), node_t, t, step)
            .expect("dense output stays inside the tabulated domain");
        hop * self.nodes[k]
    }

    /// Largest relative violation of Phi(t, 0) = Phi(t, s) Phi(s, 0) over
    /// the given node pairs, normalized by the operator norm of Phi(t, 0).
    pub fn cocycle_identity_residual(
        &self,
        path: &CoefficientPath,
        pairs: &[(usize, usize)],
        step: f64,
    ) -> Result<f64, CocycleError> {
        let mut worst: f64 = 0.0;
        for &(i, j) in pairs {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            let j = j.min(self.nodes.len() - 1);
            let s = i as f64 * self.grid_step;
            let t = (j as f64 * self.grid_step).min(path.duration());
            let hop = integrate_matrix(&|r| path.value_clamped(r), s, t, step)?;
            let composed = hop * self.nodes[i];
            let direct = &self.nodes[j];
            let res = op_norm2(&composed.sub_matrix(direct)) / direct.op_norm().max(1.0);
            worst = worst.max(res);
        }
        Ok(worst)
    }
}
