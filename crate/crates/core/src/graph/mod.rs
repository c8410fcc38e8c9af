//! Offline SE(2) pose-graph smoother.
//!
//! One node per processed frame. Factor families:
//! - origin prior on node 0 (σ = 0.01, effectively exact),
//! - odometry between consecutive nodes (σ = ½(σ_fwd + σ_lat) on position),
//! - a lateral-only non-holonomic factor between consecutive nodes (σ = 1 m),
//! - a prior at every accepted fix (σ = ½(σ_fwd,w + σ_lat,w)),
//! - loop closures between fix nodes that pass the chord/gap/path-ratio vetting.

mod dump;
mod lm;
mod sparse;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{between, BodyIncrement, Pose2};
use crate::scalar::{lit, Real};

pub use dump::{dump_graph, load_graph};
pub use lm::{optimize, optimize_with, total_cost, LmOptions, OptimizeReport};
pub use sparse::{SkylineCholesky, SkylineMatrix};

pub const ORIGIN_PRIOR_SIGMA: f64 = 0.01;
pub const NONHOLONOMIC_SIGMA: f64 = 1.0;
pub const ODOMETRY_THETA_SIGMA: f64 = 0.05;
pub const FIX_PRIOR_THETA_SIGMA: f64 = 0.05;
pub const LOOP_SIGMA_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    OriginPrior,
    Odometry,
    NonHolonomic,
    FixPrior,
    LoopClosure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor<T> {
    /// Absolute pose prior, per-channel sigmas (x, y, θ).
    Prior {
        kind: FactorKind,
        node: usize,
        measurement: Pose2<T>,
        sigma: [T; 3],
    },
    /// Relative pose between two nodes, per-channel sigmas (fwd, lat, θ).
    Between {
        kind: FactorKind,
        from: usize,
        to: usize,
        measurement: BodyIncrement<T>,
        sigma: [T; 3],
    },
    /// Penalises only the lateral component of the relative motion.
    NonHolonomic { from: usize, to: usize, sigma: T },
}

impl<T: Real> Factor<T> {
    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::Prior { kind, .. } | Factor::Between { kind, .. } => *kind,
            Factor::NonHolonomic { .. } => FactorKind::NonHolonomic,
        }
    }

    pub fn nodes(&self) -> (usize, Option<usize>) {
        match *self {
            Factor::Prior { node, .. } => (node, None),
            Factor::Between { from, to, .. } | Factor::NonHolonomic { from, to, .. } => (from, Some(to)),
        }
    }

    fn sigmas_valid(&self) -> bool {
        let ok = |s: T| s > T::zero() && s.is_finite();
        match self {
            Factor::NonHolonomic { sigma, .. } => ok(*sigma),
            Factor::Prior { sigma, .. } | Factor::Between { sigma, .. } => sigma.iter().all(|s| ok(*s)),
        }
    }

    /// Whitened residual and Jacobians w.r.t. the `(x, y, θ)` of each node.
    pub fn linearize(&self, poses: &[Pose2<T>]) -> Linearization<T> {
        match *self {
            Factor::Prior {
                node,
                measurement,
                sigma,
                ..
            } => {
                let p = &poses[node];
                let (s, c) = measurement.theta().sin_cos();
                let dx = p.x() - measurement.x();
                let dy = p.y() - measurement.y();
                let r = [
                    c * dx + s * dy,
                    -s * dx + c * dy,
                    crate::geometry::wrap_angle(p.theta() - measurement.theta()),
                ];
                let z = T::zero();
                let j = [[c, s, z], [-s, c, z], [z, z, T::one()]];
                let mut out = Linearization::new(3);
                for row in 0..3 {
                    out.r[row] = r[row] / sigma[row];
                    for col in 0..3 {
                        out.ja[row][col] = j[row][col] / sigma[row];
                    }
                }
                out
            }
            Factor::Between {
                from,
                to,
                measurement,
                sigma,
                ..
            } => {
                let (r, ja, jb) = between_residual(&poses[from], &poses[to], &measurement);
                let mut out = Linearization::new(3);
                for row in 0..3 {
                    out.r[row] = r[row] / sigma[row];
                    for col in 0..3 {
                        out.ja[row][col] = ja[row][col] / sigma[row];
                        out.jb[row][col] = jb[row][col] / sigma[row];
                    }
                }
                out
            }
            Factor::NonHolonomic { from, to, sigma } => {
                let (r, ja, jb) = between_residual(&poses[from], &poses[to], &BodyIncrement::zero());
                let mut out = Linearization::new(1);
                out.r[0] = r[1] / sigma;
                for col in 0..3 {
                    out.ja[0][col] = ja[1][col] / sigma;
                    out.jb[0][col] = jb[1][col] / sigma;
                }
                out
            }
        }
    }

    /// Whitened squared error of this factor.
    pub fn cost(&self, poses: &[Pose2<T>]) -> T {
        let l = self.linearize(poses);
        l.r[..l.dim].iter().map(|v| *v * *v).sum()
    }
}

/// Residual rows, valid up to `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization<T> {
    pub dim: usize,
    pub r: [T; 3],
    pub ja: [[T; 3]; 3],
    pub jb: [[T; 3]; 3],
}

impl<T: Real> Linearization<T> {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            r: [T::zero(); 3],
            ja: [[T::zero(); 3]; 3],
            jb: [[T::zero(); 3]; 3],
        }
    }
}

type Jac3<T> = [[T; 3]; 3];

/// `r = between(m, between(a, b))` with analytic Jacobians.
fn between_residual<T: Real>(a: &Pose2<T>, b: &Pose2<T>, m: &BodyIncrement<T>) -> ([T; 3], Jac3<T>, Jac3<T>) {
    let (s, c) = a.theta().sin_cos();
    let dx = b.x() - a.x();
    let dy = b.y() - a.y();
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    let phi = crate::geometry::wrap_angle(b.theta() - a.theta());

    let (ms, mc) = m.d_theta().sin_cos();
    let du = u - m.d_fwd();
    let dv = v - m.d_lat();
    let r = [
        mc * du + ms * dv,
        -ms * du + mc * dv,
        crate::geometry::wrap_angle(phi - m.d_theta()),
    ];

    let z = T::zero();
    let one = T::one();
    // d(u, v, φ)/d(a), d(u, v, φ)/d(b)
    let dza = [[-c, -s, v], [s, -c, -u], [z, z, -one]];
    let dzb = [[c, s, z], [-s, c, z], [z, z, one]];
    let rot = [[mc, ms, z], [-ms, mc, z], [z, z, one]];
    let mut ja = [[z; 3]; 3];
    let mut jb = [[z; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                ja[i][j] += rot[i][k] * dza[k][j];
                jb[i][j] += rot[i][k] * dzb[k][j];
            }
        }
    }
    (r, ja, jb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph<T> {
    pub initial: Vec<Pose2<T>>,
    pub factors: Vec<Factor<T>>,
}

impl<T: Real> FactorGraph<T> {
    pub fn new(initial: Vec<Pose2<T>>) -> Self {
        Self {
            initial,
            factors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }

    pub fn add(&mut self, f: Factor<T>) -> Result<()> {
        let (a, b) = f.nodes();
        let n = self.initial.len();
        if a >= n || b.is_some_and(|b| b >= n) {
            return Err(Error::invalid(format!("factor references node outside 0..{n}")));
        }
        if b == Some(a) {
            return Err(Error::invalid("binary factor connects a node to itself"));
        }
        if !f.sigmas_valid() {
            return Err(Error::invalid("factor sigmas must be finite and > 0"));
        }
        self.factors.push(f);
        Ok(())
    }

    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind() == kind).count()
    }

    /// Every node must be tied to a prior through priors and full relative
    /// factors; non-holonomic factors alone do not fix a node.
    pub fn check_determined(&self) -> Result<()> {
        let n = self.initial.len();
        if n == 0 {
            return Err(Error::invalid("graph has no nodes"));
        }
        let mut parent: Vec<usize> = (0..=n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let ground = n;
        for f in &self.factors {
            let (a, b) = match *f {
                Factor::Prior { node, .. } => (node, ground),
                Factor::Between { from, to, .. } => (from, to),
                Factor::NonHolonomic { .. } => continue,
            };
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let g = find(&mut parent, ground);
        if let Some(free) = (0..n).find(|&i| find(&mut parent, i) != g) {
            return Err(Error::RankDeficient(format!("node {free} is not anchored to any prior")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopClosureConfig {
    /// m
    pub max_chord: f64,
    /// frames
    pub min_gap: usize,
    pub min_path_ratio: f64,
}

impl Default for LoopClosureConfig {
    fn default() -> Self {
        Self {
            max_chord: 50.0,
            min_gap: 30,
            min_path_ratio: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopClosureCandidate<T> {
    pub i: usize,
    pub j: usize,
    /// Straight-line distance between the two fixes, m.
    pub chord: T,
    /// Odometry path length from `i` to `j`, m.
    pub path_length: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopRejection {
    Chord,
    Gap,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopVerdict {
    Accepted,
    Rejected(LoopRejection),
}

/// Chord ≤ 50 m, frame gap ≥ 30 and path/chord ≥ 5, checked in that order.
pub fn vet_loop_closure<T: Real>(c: &LoopClosureCandidate<T>, cfg: &LoopClosureConfig) -> LoopVerdict {
    if !(c.chord <= lit(cfg.max_chord)) {
        return LoopVerdict::Rejected(LoopRejection::Chord);
    }
    if c.j < c.i || c.j - c.i < cfg.min_gap {
        return LoopVerdict::Rejected(LoopRejection::Gap);
    }
    let ratio_ok = if c.chord == T::zero() {
        c.path_length > T::zero()
    } else {
        c.path_length / c.chord >= lit(cfg.min_path_ratio)
    };
    if ratio_ok {
        LoopVerdict::Accepted
    } else {
        LoopVerdict::Rejected(LoopRejection::Ratio)
    }
}

/// `max(√(σ_i² + σ_j²), 0.5)`.
pub fn loop_sigma<T: Real>(sigma_fwd_i: T, sigma_fwd_j: T) -> Result<T> {
    if !(sigma_fwd_i > T::zero() && sigma_fwd_j > T::zero()) {
        return Err(Error::invalid("loop-closure endpoint sigmas must be > 0"));
    }
    Ok(sigma_fwd_i.hypot(sigma_fwd_j).max(lit(LOOP_SIGMA_FLOOR)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryEdge<T> {
    pub increment: BodyIncrement<T>,
    /// Process sigmas in effect over this step.
    pub sigma_fwd: T,
    pub sigma_lat: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixObservation<T> {
    pub node: usize,
    pub pose: Pose2<T>,
    pub sigma_fwd_w: T,
    pub sigma_lat_w: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BuildOptions {
    pub loops: LoopClosureConfig,
    pub disable_loop_closures: bool,
}

/// All fix pairs that survive the vetting, with chords between the fix poses.
pub fn find_loop_closures<T: Real>(
    fixes: &[FixObservation<T>],
    odometry: &[OdometryEdge<T>],
    cfg: &LoopClosureConfig,
) -> Vec<(usize, usize)> {
    let at: Vec<Pose2<T>> = fixes.iter().map(|f| f.pose).collect();
    find_loop_closures_at(&at, fixes, odometry, cfg)
}

/// As [`find_loop_closures`], with chords measured between `positions[k]`
/// (one per fix) instead of the raw fix poses. Chords are floored at the
/// pair's [`loop_sigma`]. Pairs are found through a chord-sized spatial hash.
pub fn find_loop_closures_at<T: Real>(
    positions: &[Pose2<T>],
    fixes: &[FixObservation<T>],
    odometry: &[OdometryEdge<T>],
    cfg: &LoopClosureConfig,
) -> Vec<(usize, usize)> {
    let mut path = Vec::with_capacity(odometry.len() + 1);
    let mut acc = T::zero();
    path.push(acc);
    for e in odometry {
        acc += e.increment.norm();
        path.push(acc);
    }
    let cell = cfg.max_chord.max(1e-6);
    let key = |p: &Pose2<T>| {
        (
            (p.x().to_f64_lossy() / cell).floor() as i64,
            (p.y().to_f64_lossy() / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, p) in positions.iter().enumerate() {
        grid.entry(key(p)).or_default().push(k);
    }
    let mut out = Vec::new();
    for (a, fa) in fixes.iter().enumerate() {
        let (cx, cy) = key(&positions[a]);
        for gx in (cx - 1)..=(cx + 1) {
            for gy in (cy - 1)..=(cy + 1) {
                let Some(bucket) = grid.get(&(gx, gy)) else { continue };
                for &b in bucket {
                    let fb = &fixes[b];
                    if fb.node <= fa.node {
                        continue;
                    }
                    // A chord below the loop sigma is not resolved, so the
                    // ratio test cannot mistake jitter at a stop for a detour.
                    let floor = loop_sigma(fa.sigma_fwd_w, fb.sigma_fwd_w).unwrap_or(lit(LOOP_SIGMA_FLOOR));
                    let cand = LoopClosureCandidate {
                        i: fa.node,
                        j: fb.node,
                        chord: positions[a].distance(&positions[b]).max(floor),
                        path_length: path[fb.node] - path[fa.node],
                    };
                    if vet_loop_closure(&cand, cfg) == LoopVerdict::Accepted {
                        out.push((a, b));
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Relative-pose factor between two fix nodes, measured from the fix poses.
pub fn loop_closure_factor<T: Real>(fa: &FixObservation<T>, fb: &FixObservation<T>) -> Result<Factor<T>> {
    let s = loop_sigma(fa.sigma_fwd_w, fb.sigma_fwd_w)?;
    Ok(Factor::Between {
        kind: FactorKind::LoopClosure,
        from: fa.node,
        to: fb.node,
        measurement: between(&fa.pose, &fb.pose),
        sigma: [s; 3],
    })
}

pub fn build_graph<T: Real>(
    initial: Vec<Pose2<T>>,
    odometry: &[OdometryEdge<T>],
    fixes: &[FixObservation<T>],
    origin: Pose2<T>,
    opts: &BuildOptions,
) -> Result<FactorGraph<T>> {
    let n = initial.len();
    if n == 0 {
        return Err(Error::invalid("no nodes"));
    }
    if odometry.len() != n - 1 {
        return Err(Error::LengthMismatch {
            what: "odometry edges",
            expected: n - 1,
            got: odometry.len(),
        });
    }
    let mut g = FactorGraph::new(initial);
    g.add(Factor::Prior {
        kind: FactorKind::OriginPrior,
        node: 0,
        measurement: origin,
        sigma: [lit(ORIGIN_PRIOR_SIGMA); 3],
    })?;
    let half = lit::<T>(0.5);
    for (k, e) in odometry.iter().enumerate() {
        let s = half * (e.sigma_fwd + e.sigma_lat);
        g.add(Factor::Between {
            kind: FactorKind::Odometry,
            from: k,
            to: k + 1,
            measurement: e.increment,
            sigma: [s, s, lit(ODOMETRY_THETA_SIGMA)],
        })?;
        g.add(Factor::NonHolonomic {
            from: k,
            to: k + 1,
            sigma: lit(NONHOLONOMIC_SIGMA),
        })?;
    }
    for f in fixes {
        let s = half * (f.sigma_fwd_w + f.sigma_lat_w);
        g.add(Factor::Prior {
            kind: FactorKind::FixPrior,
            node: f.node,
            measurement: f.pose,
            sigma: [s, s, lit(FIX_PRIOR_THETA_SIGMA)],
        })?;
    }
    if !opts.disable_loop_closures {
        for (a, b) in find_loop_closures(fixes, odometry, &opts.loops) {
            g.add(loop_closure_factor(&fixes[a], &fixes[b])?)?;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cand(chord: f64, gap: usize, path: f64) -> LoopClosureCandidate<f64> {
        LoopClosureCandidate {
            i: 10,
            j: 10 + gap,
            chord,
            path_length: path,
        }
    }

    #[test]
    fn vetting_examples() {
        let cfg = LoopClosureConfig::default();
        assert_eq!(vet_loop_closure(&cand(30.0, 50, 200.0), &cfg), LoopVerdict::Accepted);
        assert_eq!(
            vet_loop_closure(&cand(30.0, 50, 45.0), &cfg),
            LoopVerdict::Rejected(LoopRejection::Ratio)
        );
        assert_eq!(
            vet_loop_closure(&cand(60.0, 100, 600.0), &cfg),
            LoopVerdict::Rejected(LoopRejection::Chord)
        );
        assert_eq!(
            vet_loop_closure(&cand(10.0, 29, 600.0), &cfg),
            LoopVerdict::Rejected(LoopRejection::Gap)
        );
        // chord first, then gap
        assert_eq!(
            vet_loop_closure(&cand(60.0, 5, 1.0), &cfg),
            LoopVerdict::Rejected(LoopRejection::Chord)
        );
        assert_eq!(vet_loop_closure(&cand(0.0, 40, 3.0), &cfg), LoopVerdict::Accepted);
        assert_eq!(
            vet_loop_closure(&cand(0.0, 40, 0.0), &cfg),
            LoopVerdict::Rejected(LoopRejection::Ratio)
        );
    }

    #[test]
    fn loop_sigma_examples() {
        assert_eq!(loop_sigma(0.1, 0.1).unwrap(), 0.5);
        assert_abs_diff_eq!(loop_sigma(3.0, 4.0).unwrap(), 5.0, epsilon = 1e-12);
        assert!(loop_sigma(0.5, 0.0).is_err());
    }

    fn straight(n: usize) -> (Vec<Pose2<f64>>, Vec<OdometryEdge<f64>>) {
        let poses = (0..n).map(|k| Pose2::new(k as f64, 0.0, 0.0)).collect();
        let odo = (0..n.saturating_sub(1))
            .map(|_| OdometryEdge {
                increment: BodyIncrement::new(1.0, 0.0, 0.0),
                sigma_fwd: 1.0,
                sigma_lat: 1.5,
            })
            .collect();
        (poses, odo)
    }

    #[test]
    fn factor_counts() {
        let (p, o) = straight(1);
        let g = build_graph(p, &o, &[], Pose2::identity(), &BuildOptions::default()).unwrap();
        assert_eq!(g.factors.len(), 1);
        assert_eq!(g.count(FactorKind::OriginPrior), 1);

        let (p, o) = straight(3);
        let fix = FixObservation {
            node: 2,
            pose: Pose2::new(2.0, 0.0, 0.0),
            sigma_fwd_w: 1.5,
            sigma_lat_w: 3.0,
        };
        let g = build_graph(p, &o, &[fix], Pose2::identity(), &BuildOptions::default()).unwrap();
        assert_eq!(g.factors.len(), 6);
        assert_eq!(g.count(FactorKind::Odometry), 2);
        assert_eq!(g.count(FactorKind::NonHolonomic), 2);
        assert_eq!(g.count(FactorKind::FixPrior), 1);
        match g.factors.last().unwrap() {
            Factor::Prior { sigma, .. } => assert_eq!(*sigma, [2.25, 2.25, FIX_PRIOR_THETA_SIGMA]),
            f => panic!("unexpected {f:?}"),
        }
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let (p, mut o) = straight(3);
        o.pop();
        assert!(matches!(
            build_graph(p, &o, &[], Pose2::identity(), &BuildOptions::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn undetermined_graph_detected() {
        let mut g = FactorGraph::new(vec![Pose2::<f64>::identity(); 3]);
        g.add(Factor::Between {
            kind: FactorKind::Odometry,
            from: 0,
            to: 1,
            measurement: BodyIncrement::new(1.0, 0.0, 0.0),
            sigma: [1.0; 3],
        })
        .unwrap();
        assert!(matches!(g.check_determined(), Err(Error::RankDeficient(_))));
        g.add(Factor::Prior {
            kind: FactorKind::OriginPrior,
            node: 0,
            measurement: Pose2::identity(),
            sigma: [0.01; 3],
        })
        .unwrap();
        // node 2 tied only by a non-holonomic factor
        g.add(Factor::NonHolonomic { from: 1, to: 2, sigma: 1.0 }).unwrap();
        assert!(g.check_determined().is_err());
        assert!(g.add(Factor::NonHolonomic { from: 1, to: 1, sigma: 1.0 }).is_err());
        assert!(g.add(Factor::NonHolonomic { from: 1, to: 7, sigma: 1.0 }).is_err());
        assert!(g.add(Factor::NonHolonomic { from: 1, to: 2, sigma: 0.0 }).is_err());
    }

    /// Central differences of the whitened residual, step 1e-6.
    fn numeric_jacobians(f: &Factor<f64>, poses: &[Pose2<f64>]) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let h = 1e-6;
        let (a, b) = f.nodes();
        let dim = f.linearize(poses).dim;
        let mut ja = vec![[0.0; 3]; dim];
        let mut jb = vec![[0.0; 3]; dim];
        for (node, out) in [(Some(a), &mut ja), (b, &mut jb)] {
            let Some(node) = node else { continue };
            for col in 0..3 {
                let mut plus = poses.to_vec();
                let mut minus = poses.to_vec();
                let p = poses[node];
                let bump = |p: &Pose2<f64>, d: f64| {
                    let mut v = [p.x(), p.y(), p.theta()];
                    v[col] += d;
                    Pose2::new(v[0], v[1], v[2])
                };
                plus[node] = bump(&p, h);
                minus[node] = bump(&p, -h);
                let rp = f.linearize(&plus);
                let rm = f.linearize(&minus);
                for row in 0..dim {
                    let mut d = rp.r[row] - rm.r[row];
                    if row == 2 {
                        d = crate::geometry::wrap_angle(d);
                    }
                    out[row][col] = d / (2.0 * h);
                }
            }
        }
        (ja, jb)
    }

    pub(crate) fn check_jacobians(seed: u64, points: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let rp = |rng: &mut ChaCha8Rng| {
                Pose2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-3.0..3.0))
            };
            let poses = vec![rp(&mut rng), rp(&mut rng)];
            let m = BodyIncrement::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0));
            let factors = [
                Factor::Prior { kind: FactorKind::FixPrior, node: 0, measurement: rp(&mut rng), sigma: [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), rng.random_range(0.05..1.0)] },
                Factor::Between { kind: FactorKind::Odometry, from: 0, to: 1, measurement: m, sigma: [1.2, 0.7, 0.05] },
                Factor::Between { kind: FactorKind::LoopClosure, from: 0, to: 1, measurement: m, sigma: [2.0; 3] },
                Factor::NonHolonomic { from: 0, to: 1, sigma: 1.0 },
            ];
            for f in &factors {
                let lin = f.linearize(&poses);
                let (na, nb) = numeric_jacobians(f, &poses);
                for row in 0..lin.dim {
                    for col in 0..3 {
                        for (an, nu) in [(lin.ja[row][col], na[row][col]), (lin.jb[row][col], nb[row][col])] {
                            let err = (an - nu).abs() / an.abs().max(nu.abs()).max(1.0);
                            worst = worst.max(err);
                        }
                    }
                }
            }
        }
        worst
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let worst = check_jacobians(17, 100);
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn block_revisit_pair_is_found() {
        // out 100 m, around a 100 m block, back past the start
        let mut poses = Vec::new();
        let mut p = Pose2::<f64>::identity();
        let mut odo = Vec::new();
        for _ in 0..4 {
            for _ in 0..100 {
                poses.push(p);
                let inc = BodyIncrement::new(1.0, 0.0, 0.0);
                odo.push(OdometryEdge { increment: inc, sigma_fwd: 1.0, sigma_lat: 1.5 });
                p = p.compose(&inc);
            }
            p = Pose2::new(p.x(), p.y(), p.theta() + std::f64::consts::FRAC_PI_2);
        }
        poses.push(p);
        let fixes: Vec<_> = [0usize, 200, 399]
            .iter()
            .map(|&k| FixObservation { node: k, pose: poses[k], sigma_fwd_w: 1.5, sigma_lat_w: 3.0 })
            .collect();
        let pairs = find_loop_closures(&fixes, &odo, &LoopClosureConfig::default());
        assert_eq!(pairs, vec![(0, 2)]);
    }

    #[test]
    fn jitter_at_a_stop_is_not_a_loop() {
        // 0.26 m of creep over 40 frames, fixes 0.05 m apart: ratio 5.2 on
        // the raw chord, but the chord is below the 0.5 m loop sigma floor
        let inc = BodyIncrement::new(0.0065, 0.0, 0.0);
        let odo = vec![OdometryEdge { increment: inc, sigma_fwd: 1.0, sigma_lat: 1.5 }; 40];
        let fix = |node, x| FixObservation { node, pose: Pose2::new(x, 0.0, 0.0), sigma_fwd_w: 0.1, sigma_lat_w: 1.0 };
        let fixes = [fix(0, 0.0), fix(40, 0.05)];
        assert!(find_loop_closures(&fixes, &odo, &LoopClosureConfig::default()).is_empty());
        let long = vec![OdometryEdge { increment: BodyIncrement::new(0.1, 0.0, 0.0), ..odo[0] }; 40];
        assert_eq!(find_loop_closures(&fixes, &long, &LoopClosureConfig::default()), vec![(0, 1)]);
    }
}
