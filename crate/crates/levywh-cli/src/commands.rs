//! Command implementations and their CSV outputs.
//!
//! Every file starts with a header row; floats are printed in Rust's
//! shortest round-trip form, so identical runs produce byte-identical
//! output.

use std::fmt::Write as _;
use std::path::Path;

use levywh::bm_erlang::compute_weights;
use levywh::factorization::{build_tables, FactorizationTables, ReversalChoice};
use levywh::mc::{self, SimConfig};
use levywh::ph::PhaseTypeRep;

use crate::config::{Command, RunConfig};
use crate::CliError;

pub fn dispatch(cfg: &RunConfig, out_dir: &Path, threads: usize) -> Result<i32, CliError> {
    std::fs::create_dir_all(out_dir)?;
    match cfg.command {
        Command::Reverse => run_reverse(cfg, out_dir),
        Command::Factorize => run_factorize(cfg, out_dir),
        Command::Density => run_density(cfg, out_dir),
        Command::BmErlang => run_bm_erlang(cfg, out_dir),
        Command::Simulate => run_simulate(cfg, out_dir, threads),
        Command::Verify => run_verify(cfg, out_dir, threads),
    }
}

fn write_file(out_dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::write(out_dir.join(name), content)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn tables_for(cfg: &RunConfig, delta: f64) -> Result<FactorizationTables<f64>, CliError> {
    let model = cfg
        .model
        .as_ref()
        .expect("command validation guarantees a model");
    Ok(build_tables(
        model,
        &cfg.horizon,
        delta,
        cfg.reversal.clone(),
    )?)
}

fn run_reverse(cfg: &RunConfig, out_dir: &Path) -> Result<i32, CliError> {
    let rev = match &cfg.reversal {
        ReversalChoice::Standard => cfg.horizon.reverse_standard()?,
        ReversalChoice::General(hat) => cfg.horizon.reverse_general(hat)?,
        ReversalChoice::Stationary => cfg.horizon.reverse_stationary()?,
    };
    let n = cfg.horizon.dim();
    let mut csv = String::from("block,i,j,value\n");
    for i in 0..n {
        let _ = writeln!(csv, "alpha_star,{i},0,{}", fmt(rev.alpha_star()[i]));
    }
    for i in 0..n {
        for j in 0..n {
            let _ = writeln!(csv, "T_star,{i},{j},{}", fmt(rev.generator_star()[(i, j)]));
        }
    }
    write_file(out_dir, "reverse.csv", &csv)?;
    Ok(0)
}

fn run_factorize(cfg: &RunConfig, out_dir: &Path) -> Result<i32, CliError> {
    let t = tables_for(cfg, cfg.delta)?;
    let mut csv = String::from("block,i,j,value\n");
    for k in 0..t.up().dim() {
        let _ = writeln!(csv, "c,{k},0,{}", fmt(t.c()[k]));
    }
    for k in 0..t.up().dim() {
        let _ = writeln!(csv, "r,{k},0,{}", fmt(t.r_constants()[k]));
    }
    for k in 0..t.up().dim() {
        let _ = writeln!(csv, "u,{k},0,{}", fmt(t.up().exit_rates()[k]));
    }
    for k in 0..t.down().dim() {
        let _ = writeln!(csv, "u_star,{k},0,{}", fmt(t.down().exit_rates()[k]));
    }
    for j in 0..cfg.horizon.dim() {
        let _ = writeln!(
            csv,
            "alpha_star,{j},0,{}",
            fmt(t.reversal().alpha_star()[j])
        );
    }
    for i in 0..t.up().dim() {
        for j in 0..t.up().dim() {
            let _ = writeln!(csv, "U,{i},{j},{}", fmt(t.up().matrix()[(i, j)]));
        }
    }
    for i in 0..t.down().dim() {
        for j in 0..t.down().dim() {
            let _ = writeln!(csv, "U_star,{i},{j},{}", fmt(t.down().matrix()[(i, j)]));
        }
    }
    write_file(out_dir, "factorization.csv", &csv)?;
    Ok(0)
}

fn run_density(cfg: &RunConfig, out_dir: &Path) -> Result<i32, CliError> {
    let t = tables_for(cfg, cfg.delta)?;
    let n = cfg.horizon.dim();
    let xs = cfg.x_grid.as_ref().expect("validated");
    let ys = cfg.y_grid.as_ref().expect("validated");
    let alpha_star = t.reversal().alpha_star();
    let mut csv = String::from("x,y,k,j,value\n");
    for &x in xs {
        if !(x > 0.0) {
            return Err(CliError::Config(
                "run.x_grid: density grid requires x > 0".into(),
            ));
        }
        // kernels are shared across the (k, j) cells of a grid point;
        // the value matches joint_density_mixed term for term
        let row = t.alpha_ext().transpose() * t.up().kernel(x);
        for &y in ys {
            if y >= x {
                continue;
            }
            let down = t.down().kernel(x - y);
            for k in 0..n {
                for j in 0..n {
                    let v = if t.c()[k] == 0.0 {
                        0.0
                    } else {
                        t.r_constants()[k] * alpha_star[j] * row[k] * down[(j, k)]
                    };
                    let _ = writeln!(csv, "{},{},{k},{j},{}", fmt(x), fmt(y), fmt(v));
                }
            }
        }
    }
    write_file(out_dir, "density.csv", &csv)?;

    let total = t.total_mass()?;
    let mut summary = String::from("delta,total_mass\n");
    let _ = writeln!(summary, "{},{}", fmt(cfg.delta), fmt(total));
    write_file(out_dir, "density_summary.csv", &summary)?;
    Ok(0)
}

fn run_bm_erlang(cfg: &RunConfig, out_dir: &Path) -> Result<i32, CliError> {
    let model = cfg.model.as_ref().expect("validated");
    let stages = cfg.stages.expect("validated");
    let rate = cfg.rate.expect("validated");
    let w = compute_weights(stages, rate, model.mu(), model.sigma2())?;

    let mut weights = String::from("block,i,k,value\n");
    for k in 0..stages {
        for i in 0..=k {
            let _ = writeln!(weights, "p_bar,{i},{k},{}", fmt(w.p_bar(i, k)));
        }
    }
    for k in 0..stages {
        for i in 0..=k {
            let _ = writeln!(weights, "p_under,{i},{k},{}", fmt(w.p_under(i, k)));
        }
    }
    for k in 0..stages {
        let _ = writeln!(weights, "q_bar,0,{k},{}", fmt(w.q_bar(k)));
    }
    for k in 0..stages {
        let _ = writeln!(weights, "q_under,0,{k},{}", fmt(w.q_under(k)));
    }
    for k in 0..stages {
        let _ = writeln!(weights, "phase_at_sup,0,{k},{}", fmt(w.phase_at_sup(k)?));
    }
    write_file(out_dir, "bm_erlang_weights.csv", &weights)?;

    let xs = cfg.x_grid.as_ref().expect("validated");
    let mut density = String::from("kind,x,k,value\n");
    for &x in xs {
        for k in 0..stages {
            let _ = writeln!(density, "sup,{},{k},{}", fmt(x), fmt(w.sup_density(x, k)?));
        }
    }
    for &x in xs {
        for k in 0..stages {
            let _ = writeln!(density, "inf,{},{k},{}", fmt(x), fmt(w.inf_density(x, k)?));
        }
    }
    write_file(out_dir, "bm_erlang_density.csv", &density)?;

    let mut joint = String::from("x,y,k,value\n");
    for &x in xs {
        for &y in xs {
            for k in 0..stages {
                let _ = writeln!(
                    joint,
                    "{},{},{k},{}",
                    fmt(x),
                    fmt(y),
                    fmt(w.joint_density(x, y, k)?)
                );
            }
        }
    }
    write_file(out_dir, "bm_erlang_joint.csv", &joint)?;
    Ok(0)
}

fn run_simulate(cfg: &RunConfig, out_dir: &Path, threads: usize) -> Result<i32, CliError> {
    let model = cfg.model.as_ref().expect("validated");
    let sim = cfg.sim.as_ref().expect("validated");
    let mc_cfg = SimConfig {
        seed: sim.seed,
        n_paths: sim.n_paths,
        bin_edges_x: sim.bin_edges_x.clone(),
        bin_edges_y: sim.bin_edges_y.clone(),
    };
    let hist = mc::estimate_joint(model, &cfg.horizon, &mc_cfg, threads)?;
    let n = cfg.horizon.dim();

    let mut csv = String::from("x_lo,x_hi,y_lo,y_hi,k,j,count,frequency,std_error\n");
    for ix in 0..hist.x_bins() {
        for iy in 0..hist.y_bins() {
            for k in 0..n {
                for j in 0..n {
                    let freq: f64 = hist.frequency(ix, iy, k, j);
                    let se = hist.std_error(freq);
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{k},{j},{},{},{}",
                        fmt(hist.x_edges[ix]),
                        fmt(hist.x_edges[ix + 1]),
                        fmt(hist.y_edges[iy]),
                        fmt(hist.y_edges[iy + 1]),
                        hist.count(ix, iy, k, j),
                        fmt(freq),
                        fmt(se),
                    );
                }
            }
        }
    }
    write_file(out_dir, "histogram.csv", &csv)?;

    let mut phase = String::from("k,count,frequency\n");
    for k in 0..n {
        let _ = writeln!(
            phase,
            "{k},{},{}",
            hist.phase_at_sup_counts[k],
            fmt(hist.phase_at_sup_frequency(k))
        );
    }
    write_file(out_dir, "phase_at_sup.csv", &phase)?;

    let mut summary = String::from("n_paths,outside_count,seed\n");
    let _ = writeln!(summary, "{},{},{}", hist.n_paths, hist.outside, sim.seed);
    write_file(out_dir, "sim_summary.csv", &summary)?;
    Ok(0)
}

struct Report {
    rows: Vec<(String, f64, f64, bool)>,
}

impl Report {
    fn new() -> Self {
        Report { rows: Vec::new() }
    }

    fn check(&mut self, name: &str, tolerance: f64, observed: f64) {
        self.rows
            .push((name.to_string(), tolerance, observed, observed <= tolerance));
    }

    fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.3)
    }

    fn to_csv(&self) -> String {
        let mut csv = String::from("check,tolerance,observed,status\n");
        for (name, tol, obs, ok) in &self.rows {
            let status = if *ok { "pass" } else { "FAIL" };
            let _ = writeln!(csv, "{name},{},{},{status}", fmt(*tol), fmt(*obs));
        }
        csv
    }
}

/// Detects an Erlang horizon (`α = e₀`, common rate, pure chain) and
/// returns its rate.
fn erlang_rate(horizon: &PhaseTypeRep<f64>) -> Option<f64> {
    let n = horizon.dim();
    let lam = -horizon.generator()[(0, 0)];
    let tol = 1e-12 * lam.max(1.0);
    if (horizon.initial()[0] - 1.0).abs() > 1e-12 {
        return None;
    }
    for i in 0..n {
        for j in 0..n {
            let want = if i == j {
                -lam
            } else if j == i + 1 {
                lam
            } else {
                0.0
            };
            if (horizon.generator()[(i, j)] - want).abs() > tol {
                return None;
            }
        }
        if i > 0 && horizon.initial()[i].abs() > 1e-12 {
            return None;
        }
    }
    Some(lam)
}

fn run_verify(cfg: &RunConfig, out_dir: &Path, threads: usize) -> Result<i32, CliError> {
    let model = cfg.model.as_ref().expect("validated");
    let horizon = &cfg.horizon;
    let mut report = Report::new();

    // reversal identities
    let rev = match &cfg.reversal {
        ReversalChoice::Standard => horizon.reverse_standard()?,
        ReversalChoice::General(hat) => horizon.reverse_general(hat)?,
        ReversalChoice::Stationary => horizon.reverse_stationary()?,
    };
    let rev_rep = rev.to_rep()?;
    let back = rev_rep.reverse_standard()?;
    let involution = if matches!(cfg.reversal, ReversalChoice::Standard) {
        (back.alpha_star() - horizon.initial())
            .amax()
            .max((back.generator_star() - horizon.generator()).amax())
    } else {
        // for non-standard choices the involution closes on the reversed pair
        let again = back.to_rep()?.reverse_standard()?;
        (again.alpha_star() - rev.alpha_star())
            .amax()
            .max((again.generator_star() - rev.generator_star()).amax())
    };
    report.check("reversal_involution", 1e-12, involution);

    let mean = horizon.mean()?;
    let mut cdf_dev = 0.0f64;
    for i in 1..=20 {
        let x = 5.0 * mean * i as f64 / 20.0;
        cdf_dev = cdf_dev.max((horizon.cdf(x)? - rev_rep.cdf(x)?).abs());
    }
    report.check("reversal_cdf", 1e-10, cdf_dev);

    let zero = |v: f64| v.abs() <= 1e-14;
    let mut sparsity_mismatches = 0usize;
    for i in 0..horizon.dim() {
        if zero(horizon.exit()[i]) != zero(rev.alpha_star()[i]) {
            sparsity_mismatches += 1;
        }
        for j in 0..horizon.dim() {
            if i != j && zero(horizon.generator()[(i, j)]) != zero(rev.generator_star()[(j, i)]) {
                sparsity_mismatches += 1;
            }
        }
    }
    report.check(
        "reversal_sparsity_mismatches",
        0.0,
        sparsity_mismatches as f64,
    );

    // undiscounted tables carry the constants
    let t0 = build_tables(model, horizon, 0.0, cfg.reversal.clone())?;
    report.check("c_total_mass", 1e-8, (t0.c().sum() - 1.0).abs());

    let up_profile = {
        let lu = nalgebra::linalg::LU::new(t0.up().matrix().transpose());
        lu.solve(&(-t0.base_ext())).expect("stable passage matrix")
    };
    let down_profile = {
        let lu = nalgebra::linalg::LU::new(t0.down().matrix().transpose());
        lu.solve(&(-t0.alpha_star_ext()))
            .expect("stable passage matrix")
    };
    let mut r_dev = 0.0f64;
    for k in 0..horizon.dim() {
        if t0.c()[k] == 0.0 {
            continue;
        }
        let r_up_form = t0.down().exit_rates()[k] / up_profile[k];
        let r_down_form = t0.up().exit_rates()[k] / down_profile[k];
        r_dev = r_dev.max((r_up_form - r_down_form).abs() / r_up_form.abs().max(1.0));
    }
    report.check("r_closed_forms", 1e-8, r_dev);

    report.check(
        "crossing_mass",
        1e-8,
        (up_profile.dot(t0.up().exit_rates()) - 1.0).abs(),
    );

    let mut semigroup = 0.0f64;
    for (x, y) in [(0.4, 0.9), (1.3, 0.6)] {
        let lhs = t0.up().kernel(x + y);
        let rhs = t0.up().kernel(x) * t0.up().kernel(y);
        semigroup = semigroup.max((lhs - rhs).amax());
    }
    report.check("kernel_semigroup", 1e-10, semigroup);

    // total joint mass at the configured delta
    let (t_run, mass_target) = if cfg.delta > 0.0 {
        (
            build_tables(model, horizon, cfg.delta, cfg.reversal.clone())?,
            horizon.laplace(cfg.delta)?,
        )
    } else {
        (t0, 1.0)
    };
    report.check(
        "joint_total_mass",
        1e-6,
        (t_run.total_mass()? - mass_target).abs(),
    );

    // closed-form cross-check when the inputs are in the BM-Erlang family
    if model.up_jumps().is_none() && model.down_jumps().is_none() {
        if let Some(rate) = erlang_rate(horizon) {
            let n = horizon.dim();
            let w = compute_weights(n, rate, model.mu(), model.sigma2())?;
            let scale = (model.sigma2() * n as f64 / rate).sqrt() + 0.5;
            let mut dev = 0.0f64;
            for k in 0..n {
                for i in 1..=30 {
                    let x = 4.0 * scale * i as f64 / 30.0;
                    dev = dev.max((t_run.sup_density(0, x, k)? - w.sup_density(x, k)?).abs());
                }
            }
            report.check("bm_erlang_cross_check", 1e-8, dev);
        }
    }

    // Monte Carlo spot checks when a [sim] section is present
    if let Some(sim) = &cfg.sim {
        let mc_cfg = SimConfig {
            seed: sim.seed,
            n_paths: sim.n_paths,
            bin_edges_x: sim.bin_edges_x.clone(),
            bin_edges_y: sim.bin_edges_y.clone(),
        };
        let hist = mc::estimate_joint(model, horizon, &mc_cfg, threads)?;
        let law = t_run.phase_at_sup_distribution();
        let mut worst_z = 0.0f64;
        for k in 0..horizon.dim() {
            let p = law[k];
            let se = hist.std_error(p).max(1e-300);
            worst_z = worst_z.max((hist.phase_at_sup_frequency(k) - p).abs() / se);
        }
        report.check("mc_phase_at_sup_z", 4.0, worst_z);

        let mut taus: Vec<f64> = (0..sim.n_paths)
            .map(|i| {
                mc::sample_phase_path(horizon, &mut mc::path_rng(sim.seed ^ 0x9e37, i as u64)).0
            })
            .collect();
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = mc::ks_statistic(&taus, |x| horizon.cdf(x).unwrap());
        report.check(
            "mc_horizon_ks_scaled",
            1.6276,
            d * (sim.n_paths as f64).sqrt(),
        );
    }

    write_file(out_dir, "verify_report.csv", &report.to_csv())?;
    for (name, tol, obs, ok) in &report.rows {
        println!(
            "{:<28} tolerance {:<10} observed {:<24} {}",
            name,
            fmt(*tol),
            fmt(*obs),
            if *ok { "pass" } else { "FAIL" }
        );
    }
    Ok(if report.all_pass() { 0 } else { 1 })
}
