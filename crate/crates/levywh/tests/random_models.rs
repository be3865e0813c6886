//! Fixed-seed randomized soak of the full pipeline: many horizon shapes
//! (dense, cyclic, Coxian) and jump structures through build_tables, with
//! the normalization identities as the oracle. Cyclic horizons give the
//! passage problem genuinely complex spectra, which exercises the
//! conjugate-pair handling end to end.

use levywh::factorization::{build_tables, ReversalChoice};
use levywh::fluid::JumpDiffusionModel;
use levywh::mc::path_rng;
use levywh::ph::PhaseTypeRep;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_alpha(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let mut v = DVector::from_fn(n, |_, _| 0.05 + rng.gen::<f64>());
    let s = v.sum();
    v /= s;
    v
}

fn random_rep(rng: &mut ChaCha8Rng, n: usize) -> PhaseTypeRep<f64> {
    match rng.gen_range(0..3u8) {
        0 => {
            let mut gen = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    if i != j {
                        let r = 0.1 + 1.9 * rng.gen::<f64>();
                        gen[(i, j)] = r;
                        row += r;
                    }
                }
                let exit = if rng.gen::<f64>() < 0.6 || i == n - 1 {
                    0.1 + rng.gen::<f64>()
                } else {
                    0.0
                };
                gen[(i, i)] = -(row + exit);
            }
            PhaseTypeRep::new(random_alpha(rng, n), gen).unwrap()
        }
        1 => {
            // strong cycle: complex phase spectrum
            let mut gen = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                let fwd = 1.0 + 2.0 * rng.gen::<f64>();
                let exit = if i == 0 { 0.1 + 0.4 * rng.gen::<f64>() } else { 0.0 };
                if n > 1 {
                    gen[(i, (i + 1) % n)] = fwd;
                }
                gen[(i, i)] = -(if n > 1 { fwd } else { 0.0 } + exit + if n == 1 { 1.0 } else { 0.0 });
            }
            PhaseTypeRep::new(random_alpha(rng, n), gen).unwrap()
        }
        _ => {
            let rates: Vec<f64> = (0..n).map(|_| 0.4 + 1.6 * rng.gen::<f64>()).collect();
            let ps: Vec<f64> = (0..n)
                .map(|i| if i == n - 1 { 1.0 } else { 0.5 * rng.gen::<f64>() })
                .collect();
            PhaseTypeRep::coxian(&rates, &ps).unwrap()
        }
    }
}

#[test]
fn pipeline_soak_over_random_models() {
    let mut rng = path_rng(0xab5e_55ed, 0);
    let mut built = 0usize;
    let mut degenerate = 0usize;
    for trial in 0..120 {
        let n = 1 + rng.gen_range(0..6usize);
        let horizon = random_rep(&mut rng, n);
        let n_plus = rng.gen_range(0..4usize);
        let n_minus = rng.gen_range(0..4usize);
        let mu = -0.6 + 1.2 * rng.gen::<f64>();
        let sigma2 = 0.5 + 1.2 * rng.gen::<f64>();
        let up = (n_plus > 0).then(|| (0.1 + 0.6 * rng.gen::<f64>(), random_rep(&mut rng, n_plus)));
        let down =
            (n_minus > 0).then(|| (0.1 + 0.6 * rng.gen::<f64>(), random_rep(&mut rng, n_minus)));
        let model = JumpDiffusionModel::new(mu, sigma2, up, down).unwrap();
        let delta = match trial % 3 {
            0 => 0.0,
            1 => 0.07,
            _ => 0.6,
        };
        let choice = match trial % 4 {
            0 | 1 => ReversalChoice::Standard,
            2 => ReversalChoice::General(random_alpha(&mut rng, n)),
            _ => ReversalChoice::Stationary,
        };
        let wants_stationary = matches!(choice, ReversalChoice::Stationary);
        let tables = match build_tables(&model, &horizon, delta, choice) {
            Ok(t) => t,
            // sparse horizons legitimately reject the stationary reversal
            Err(levywh::Error::Reducible(_)) if wants_stationary => {
                degenerate += 1;
                continue;
            }
            Err(e) => panic!("trial {trial}: unexpected failure: {e}"),
        };
        built += 1;

        let c_sum: f64 = tables.c().sum();
        assert!((c_sum - 1.0).abs() < 1e-8, "trial {trial}: c mass {c_sum}");
        let law = tables.phase_at_sup_distribution();
        assert!((law.sum() - 1.0).abs() < 1e-8, "trial {trial}: sup law");
        assert!(law.iter().all(|&p| p >= 0.0));

        let target = if delta > 0.0 {
            horizon.laplace(delta).unwrap()
        } else {
            1.0
        };
        let mass = tables.total_mass().unwrap();
        assert!(
            (mass - target).abs() < 1e-6,
            "trial {trial}: joint mass {mass} vs {target} (delta {delta})"
        );
    }
    assert!(built >= 100, "only {built} models built ({degenerate} degenerate)");
    println!("soak: {built} models built, {degenerate} stationary-reversal rejections");
}
