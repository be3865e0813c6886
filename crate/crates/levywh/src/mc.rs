//! Monte Carlo ground truth: direct simulation of the jump diffusion over
//! a phase-type horizon with an exactly sampled running maximum.
//!
//! The path is simulated in real time (not through the fluid embedding):
//! event times are the union of horizon phase changes and Poisson jump
//! epochs, the process is Brownian between events, and within every
//! Brownian segment the segment maximum is drawn exactly from the
//! Brownian-bridge maximum law given the endpoints,
//! `P(M ≥ m | a, b) = exp(−2(m−a)(m−b)/(σ²Δt))` for `m ≥ max(a, b)`.
//! Jumps are instantaneous: the pre-jump value closes the previous
//! segment, the post-jump value opens the next one.
//!
//! Randomness comes from a counter-based generator with one substream per
//! path, derived from `(seed, path_index)`, so results are reproducible
//! and independent of how paths are partitioned across threads.

use nalgebra::DVector;
use rand::distributions::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fluid::JumpDiffusionModel;
use crate::ph::PhaseTypeRep;
use crate::{real, Scalar};

/// One simulated path, reduced to the factorization's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample<T: Scalar> {
    pub tau: T,
    /// Running maximum; exact within each Brownian segment.
    pub sup: T,
    pub x_tau: T,
    /// Horizon phase in which the maximum was attained (left limit at
    /// phase-change instants, earliest segment on ties).
    pub phase_at_sup: usize,
    /// Horizon phase just before absorption.
    pub phase_at_end: usize,
    /// Approximate time of the maximum: the arg-max segment is refined by
    /// ten bridge bisections (resolution `Δt/2¹⁰`); the maximum itself
    /// stays exact.
    pub sigma_bar: T,
}

/// Holding interval of one horizon phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSegment<T: Scalar> {
    pub phase: usize,
    pub start: T,
    pub end: T,
}

/// Histogram request: seed, path count, and the cell edges.
#[derive(Debug, Clone)]
pub struct SimConfig<T: Scalar> {
    pub seed: u64,
    pub n_paths: usize,
    pub bin_edges_x: Vec<T>,
    pub bin_edges_y: Vec<T>,
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Domain("n_paths must be at least 1".into()));
        }
        for (name, edges) in [("x", &self.bin_edges_x), ("y", &self.bin_edges_y)] {
            if edges.len() < 2 {
                return Err(Error::Domain(format!(
                    "{name} bin edges need at least 2 entries"
                )));
            }
            for w in edges.windows(2) {
                if !(w[0] < w[1]) {
                    return Err(Error::Domain(format!(
                        "{name} bin edges must be strictly increasing"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Joint frequencies of `(X̄_τ, X_τ, J_σ̄, J_τ−)` over the configured
/// cells, as exact integer counts. Out-of-range paths land in `outside`,
/// so cell counts plus `outside` always add to `n_paths`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram<T: Scalar> {
    pub x_edges: Vec<T>,
    pub y_edges: Vec<T>,
    pub horizon_phases: usize,
    pub counts: Vec<u64>,
    pub phase_at_sup_counts: Vec<u64>,
    pub phase_at_end_counts: Vec<u64>,
    pub outside: u64,
    pub n_paths: u64,
}

impl<T: Scalar> JointHistogram<T> {
    pub fn x_bins(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn y_bins(&self) -> usize {
        self.y_edges.len() - 1
    }

    fn index(&self, ix: usize, iy: usize, k: usize, j: usize) -> usize {
        ((ix * self.y_bins() + iy) * self.horizon_phases + k) * self.horizon_phases + j
    }

    pub fn count(&self, ix: usize, iy: usize, k: usize, j: usize) -> u64 {
        self.counts[self.index(ix, iy, k, j)]
    }

    pub fn frequency(&self, ix: usize, iy: usize, k: usize, j: usize) -> T {
        real::<T>(self.count(ix, iy, k, j) as f64) / real::<T>(self.n_paths as f64)
    }

    /// Binomial standard error of a cell with success probability `p`.
    pub fn std_error(&self, p: T) -> T {
        (p * (T::one() - p) / real::<T>(self.n_paths as f64)).sqrt()
    }

    pub fn phase_at_sup_frequency(&self, k: usize) -> T {
        real::<T>(self.phase_at_sup_counts[k] as f64) / real::<T>(self.n_paths as f64)
    }

    pub fn phase_at_end_frequency(&self, j: usize) -> T {
        real::<T>(self.phase_at_end_counts[j] as f64) / real::<T>(self.n_paths as f64)
    }
}

/// The per-path generator: one ChaCha stream per `(seed, path_index)`.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

fn exp_draw<T, R>(rate: T, rng: &mut R) -> T
where
    T: Scalar,
    R: Rng + ?Sized,
    Open01: Distribution<T>,
{
    let u: T = rng.sample(Open01);
    -u.ln() / rate
}

fn pick_index<T, R>(weights: &DVector<T>, rng: &mut R) -> usize
where
    T: Scalar,
    R: Rng + ?Sized,
    Open01: Distribution<T>,
{
    let u: T = rng.sample(Open01);
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Simulates the horizon phase process to absorption: the life time and
/// the contiguous holding segments covering `[0, tau]`.
pub fn sample_phase_path<T, R>(horizon: &PhaseTypeRep<T>, rng: &mut R) -> (T, Vec<PhaseSegment<T>>)
where
    T: Scalar,
    R: Rng + ?Sized,
    Open01: Distribution<T>,
{
    let n = horizon.dim();
    let gen = horizon.generator();
    let mut phase = pick_index(horizon.initial(), rng);
    let mut t = T::zero();
    let mut segments = Vec::new();
    loop {
        let total = -gen[(phase, phase)];
        let hold = exp_draw(total, rng);
        segments.push(PhaseSegment {
            phase,
            start: t,
            end: t + hold,
        });
        t += hold;
        // destination: a transition with probability T[p][q]/total each,
        // absorption with the remaining mass
        let u: T = rng.sample(Open01);
        let target = u * total;
        let mut acc = T::zero();
        let mut next = None;
        for q in 0..n {
            if q != phase {
                acc += gen[(phase, q)];
                if target < acc {
                    next = Some(q);
                    break;
                }
            }
        }
        match next {
            Some(q) => phase = q,
            None => return (t, segments),
        }
    }
}

/// Absorption time only, for jump sizes.
fn sample_ph_value<T, R>(rep: &PhaseTypeRep<T>, rng: &mut R) -> T
where
    T: Scalar,
    R: Rng + ?Sized,
    Open01: Distribution<T>,
{
    let n = rep.dim();
    let gen = rep.generator();
    let mut phase = pick_index(rep.initial(), rng);
    let mut t = T::zero();
    loop {
        let total = -gen[(phase, phase)];
        t += exp_draw(total, rng);
        let u: T = rng.sample(Open01);
        let target = u * total;
        let mut acc = T::zero();
        let mut next = None;
        for q in 0..n {
            if q != phase {
                acc += gen[(phase, q)];
                if target < acc {
                    next = Some(q);
                    break;
                }
            }
        }
        match next {
            Some(q) => phase = q,
            None => return t,
        }
    }
}

/// Exact draw of the segment maximum given both endpoints: inverse
/// transform of the bridge tail `exp(−2(m−a)(m−b)/(σ²Δt))`.
pub fn bridge_max<T, R>(a: T, b: T, sigma2: T, dt: T, rng: &mut R) -> T
where
    T: Scalar,
    R: Rng + ?Sized,
    Open01: Distribution<T>,
{
    let u: T = rng.sample(Open01);
    let w = -sigma2 * dt * u.ln() * real::<T>(0.5);
    (a + b + ((a - b) * (a - b) + real::<T>(4.0) * w).sqrt()) * real::<T>(0.5)
}

enum Event<T> {
    PhaseChange,
    Jump(T),
}

/// Simulates one path of `(X, J)` to the horizon and reduces it to the
/// quantities entering the factorization.
pub fn sample_path<T, R>(
    model: &JumpDiffusionModel<T>,
    horizon: &PhaseTypeRep<T>,
    rng: &mut R,
) -> PathSample<T>
where
    T: Scalar,
    R: Rng + ?Sized,
    Open01: Distribution<T>,
    StandardNormal: Distribution<T>,
{
    let (tau, segments) = sample_phase_path(horizon, rng);

    let mut events: Vec<(T, Event<T>)> = Vec::new();
    for seg in segments.iter().skip(1) {
        events.push((seg.start, Event::PhaseChange));
    }
    if let Some((lam, ph)) = model.up_jumps() {
        let mut t = exp_draw(lam, rng);
        while t < tau {
            let size = sample_ph_value(ph, rng);
            events.push((t, Event::Jump(size)));
            t += exp_draw(lam, rng);
        }
    }
    if let Some((lam, ph)) = model.down_jumps() {
        let mut t = exp_draw(lam, rng);
        while t < tau {
            let size = sample_ph_value(ph, rng);
            events.push((t, Event::Jump(-size)));
            t += exp_draw(lam, rng);
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite event times"));

    let mu = model.mu();
    let sigma2 = model.sigma2();
    let mut cur_t = T::zero();
    let mut cur_x = T::zero();
    let mut seg_idx = 0usize;
    let mut best = -T::one() / T::zero(); // -inf; first segment max is >= 0
    let mut best_phase = segments[0].phase;
    let mut best_span = (T::zero(), tau, T::zero(), T::zero());

    let advance = |to: T,
                   cur_t: &mut T,
                   cur_x: &mut T,
                   rng: &mut R,
                   best: &mut T,
                   best_phase: &mut usize,
                   best_span: &mut (T, T, T, T),
                   seg_idx: usize| {
        let dt = to - *cur_t;
        if dt > T::zero() {
            let z: T = rng.sample(StandardNormal);
            let b = *cur_x + mu * dt + (sigma2 * dt).sqrt() * z;
            let m = bridge_max(*cur_x, b, sigma2, dt, rng);
            if m > *best {
                *best = m;
                *best_phase = segments[seg_idx].phase;
                *best_span = (*cur_t, to, *cur_x, b);
            }
            *cur_x = b;
        }
        *cur_t = to;
    };

    for (time, ev) in &events {
        advance(
            *time,
            &mut cur_t,
            &mut cur_x,
            rng,
            &mut best,
            &mut best_phase,
            &mut best_span,
            seg_idx,
        );
        match ev {
            Event::PhaseChange => seg_idx += 1,
            Event::Jump(s) => cur_x += *s,
        }
    }
    advance(
        tau,
        &mut cur_t,
        &mut cur_x,
        rng,
        &mut best,
        &mut best_phase,
        &mut best_span,
        seg_idx,
    );

    // refine the time of the maximum by bridge bisection; ten levels give
    // the resolution of 2^10 subintervals of the arg-max segment
    let (mut lo, mut hi, mut va, mut vb) = best_span;
    let half = real::<T>(0.5);
    for _ in 0..10 {
        let len = (hi - lo) * half;
        if !(len > T::zero()) {
            break;
        }
        let mid = lo + len;
        let z: T = rng.sample(StandardNormal);
        let vm = (va + vb) * half + (sigma2 * len * half).sqrt() * z;
        let ml = bridge_max(va, vm, sigma2, len, rng);
        let mr = bridge_max(vm, vb, sigma2, len, rng);
        if ml >= mr {
            hi = mid;
            vb = vm;
        } else {
            lo = mid;
            va = vm;
        }
    }

    PathSample {
        tau,
        sup: best,
        x_tau: cur_x,
        phase_at_sup: best_phase,
        phase_at_end: segments.last().expect("at least one segment").phase,
        sigma_bar: (lo + hi) * half,
    }
}

fn bin_of<T: Scalar>(edges: &[T], v: T) -> Option<usize> {
    if v < edges[0] || v >= edges[edges.len() - 1] {
        return None;
    }
    // half-open cells [e_i, e_{i+1})
    let mut lo = 0usize;
    let mut hi = edges.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if v < edges[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(lo)
}

/// Estimates the joint law on the configured cells from `cfg.n_paths`
/// independent paths, split across `threads` workers. Counts are exact
/// integers and the per-path substreams make the result identical for any
/// thread count.
pub fn estimate_joint<T>(
    model: &JumpDiffusionModel<T>,
    horizon: &PhaseTypeRep<T>,
    cfg: &SimConfig<T>,
    threads: usize,
) -> Result<JointHistogram<T>>
where
    T: Scalar + Send + Sync,
    Open01: Distribution<T>,
    StandardNormal: Distribution<T>,
{
    cfg.validate()?;
    let n = horizon.dim();
    let nx = cfg.bin_edges_x.len() - 1;
    let ny = cfg.bin_edges_y.len() - 1;
    let cells = nx * ny * n * n;
    let workers = threads.max(1).min(cfg.n_paths);

    let run_chunk = |from: usize, to: usize| -> (Vec<u64>, Vec<u64>, Vec<u64>, u64) {
        let mut counts = vec![0u64; cells];
        let mut phase_counts = vec![0u64; n];
        let mut end_counts = vec![0u64; n];
        let mut outside = 0u64;
        for path in from..to {
            let mut rng = path_rng(cfg.seed, path as u64);
            let sample = sample_path(model, horizon, &mut rng);
            phase_counts[sample.phase_at_sup] += 1;
            end_counts[sample.phase_at_end] += 1;
            match (
                bin_of(&cfg.bin_edges_x, sample.sup),
                bin_of(&cfg.bin_edges_y, sample.x_tau),
            ) {
                (Some(ix), Some(iy)) => {
                    let idx = ((ix * ny + iy) * n + sample.phase_at_sup) * n + sample.phase_at_end;
                    counts[idx] += 1;
                }
                _ => outside += 1,
            }
        }
        (counts, phase_counts, end_counts, outside)
    };

    let chunk = cfg.n_paths.div_ceil(workers);
    let results: Vec<(Vec<u64>, Vec<u64>, Vec<u64>, u64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let from = w * chunk;
                let to = ((w + 1) * chunk).min(cfg.n_paths);
                scope.spawn(move || run_chunk(from, to.max(from)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    let mut counts = vec![0u64; cells];
    let mut phase_counts = vec![0u64; n];
    let mut end_counts = vec![0u64; n];
    let mut outside = 0u64;
    for (c, p, e, o) in results {
        for (dst, src) in counts.iter_mut().zip(c) {
            *dst += src;
        }
        for (dst, src) in phase_counts.iter_mut().zip(p) {
            *dst += src;
        }
        for (dst, src) in end_counts.iter_mut().zip(e) {
            *dst += src;
        }
        outside += o;
    }
    Ok(JointHistogram {
        x_edges: cfg.bin_edges_x.clone(),
        y_edges: cfg.bin_edges_y.clone(),
        horizon_phases: n,
        counts,
        phase_at_sup_counts: phase_counts,
        phase_at_end_counts: end_counts,
        outside,
        n_paths: cfg.n_paths as u64,
    })
}

/// Kolmogorov–Smirnov statistic of a sorted sample against a CDF.
pub fn ks_statistic<T: Scalar>(sorted: &[T], cdf: impl Fn(T) -> T) -> T {
    let n = real::<T>(sorted.len() as f64);
    let mut d = T::zero();
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = f - real::<T>(i as f64) / n;
        let hi = real::<T>((i + 1) as f64) / n - f;
        if lo > d {
            d = lo;
        }
        if hi > d {
            d = hi;
        }
    }
    d
}
