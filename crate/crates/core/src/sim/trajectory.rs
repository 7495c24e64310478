use super::SimError;
use crate::geometry::Position3D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `n` positions starting at `start`, each displaced from the previous one
/// by an independent Gaussian step with per-axis standard deviation `sigma`.
pub fn gen_random_walk(start: Position3D, sigma: [f64; 3], n: usize, seed: u64) -> Result<Vec<Position3D>, SimError> {
    gen_random_walk_with(start, sigma, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gen_random_walk_with<R: Rng + ?Sized>(
    start: Position3D,
    sigma: [f64; 3],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Position3D>, SimError> {
    if n == 0 {
        return Err(SimError::Validation("random walk needs at least one point".into()));
    }
    if sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(SimError::Validation(format!("random walk sigma must be non-negative, got {sigma:?}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut p = start;
    out.push(p);
    for _ in 1..n {
        let mut step = [0.0; 3];
        for (s, sd) in step.iter_mut().zip(sigma) {
            let z: f64 = StandardNormal.sample(rng);
            *s = sd * z;
        }
        p = Position3D::new(p.x + step[0], p.y + step[1], p.z + step[2]);
        out.push(p);
    }
    Ok(out)
}

/// Positions along a polyline traversed at constant speed, sampled every
/// `interval` seconds. The final waypoint is always included.
pub fn sample_waypoints(waypoints: &[Position3D], speed: f64, interval: f64) -> Result<Vec<Position3D>, SimError> {
    if waypoints.is_empty() {
        return Err(SimError::Validation("trajectory has no waypoints".into()));
    }
    if !(speed > 0.0) || !(interval > 0.0) {
        return Err(SimError::Validation("trajectory speed and interval must be positive".into()));
    }
    let step = speed * interval;
    let total: f64 = waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum();
    let n = (total / step).floor() as usize;
    let mut out = Vec::with_capacity(n + 2);
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    for k in 0..=n {
        let s = k as f64 * step;
        while seg + 1 < waypoints.len() - 1 && s > seg_start + waypoints[seg].distance(&waypoints[seg + 1]) {
            seg_start += waypoints[seg].distance(&waypoints[seg + 1]);
            seg += 1;
        }
        if waypoints.len() == 1 {
            out.push(waypoints[0]);
            continue;
        }
        let (a, b) = (waypoints[seg], waypoints[seg + 1]);
        let len = a.distance(&b);
        let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(Position3D::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)));
    }
    let last = *waypoints.last().expect("non-empty");
    if out.last().is_none_or(|p| p.distance(&last) > 1e-9) {
        out.push(last);
    }
    Ok(out)
}
