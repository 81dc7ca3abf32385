//! Acceptance run: one pass/fail line per criterion, nonzero exit on any failure.
//!
//! Expensive estimates are computed once and shared between criteria.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as NormalDist};

use qtps::analysis::{arrhenius_constrained, arrhenius_fit};
use qtps::dynamics::{qsd_euler_step, sse_euler_step, ClassicalState, QuarticWell, SimParams, SseOps};
use qtps::fock::{build_position_momentum, build_potential, BasisConfig, QuantumState};
use qtps::pathprob::{
    classical_step_log_prob, lindblad_rk4_propagate, lindblad_superoperator_for, projected_increment,
    qsd_step_log_prob, sse_step_log_prob,
};
use qtps::rng::{Purpose, SeedInfo};
use qtps::stats::{chi2_two_histograms, integrated_autocorr_time, kolmogorov_pvalue, ks_statistic};
use qtps::system::{ClassicalLangevin, SseDynamics, Stepper};
use qtps::tps::{apply_transform, Transform};
use qtps_cli::config::ExperimentConfig;
use qtps_cli::experiment::{coherent_transfer, mfpt_estimate, stationary_summary, tis_estimate, tps_classical};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config(sets: &[String]) -> ExperimentConfig {
    ExperimentConfig::parse("", sets).expect("acceptance configuration is valid")
}

fn sets(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Rate with its standard error.
#[derive(Clone, Copy, Debug)]
struct Rate {
    k: f64,
    se: f64,
}

impl Rate {
    fn ln(&self) -> (f64, f64) {
        (self.k.ln(), self.se / self.k)
    }
}

struct TisPoint {
    rate: Rate,
    flux: f64,
}

fn tis_point(system: &str, t_b: f64, extra: &[&str]) -> TisPoint {
    let mut s = sets(&[&format!("system=\"{system}\""), &format!("bath.t_b={t_b}"), "seed=11"]);
    s.extend(extra.iter().map(|x| x.to_string()));
    let o = tis_estimate(&config(&s)).expect("TIS run");
    TisPoint { rate: Rate { k: o.rate.rate, se: o.rate.stderr }, flux: o.flux.flux }
}

fn classical_tis(t_b: f64) -> TisPoint {
    let flux_steps = if t_b < 0.15 {
        "tis.flux_steps=100000000"
    } else if t_b < 0.25 {
        "tis.flux_steps=50000000"
    } else {
        "tis.flux_steps=20000000"
    };
    tis_point("classical", t_b, &[flux_steps])
}

const SSE_TIS: [&str; 3] = ["tis.moves_per_interface=1000", "tis.pilot_moves=300", "tis.flux_steps=10000000"];

fn sse_tis(t_b: f64, dim: usize, flux_steps: u64) -> TisPoint {
    let dim = format!("basis.dim={dim}");
    let flux = format!("tis.flux_steps={flux_steps}");
    tis_point("sse", t_b, &[SSE_TIS[0], SSE_TIS[1], &flux, &dim])
}

fn mfpt(system: &str, t_b: f64, dim: usize, trajectories: usize) -> Option<Rate> {
    let s = sets(&[
        &format!("system=\"{system}\""),
        &format!("bath.t_b={t_b}"),
        &format!("basis.dim={dim}"),
        &format!("mfpt.trajectories={trajectories}"),
        "mfpt.cutoff=5000.0",
        "seed=13",
    ]);
    let m = mfpt_estimate(&config(&s)).expect("MFPT run");
    Some(Rate { k: m.rate?, se: m.stderr? })
}

fn within_factor(x: f64, target: f64, f: f64) -> bool {
    x > 0.0 && x / target <= f && target / x <= f
}

fn agree(a: Rate, b: Rate, n_sigma: f64) -> bool {
    (a.k - b.k).abs() < n_sigma * (a.se * a.se + b.se * b.se).sqrt()
}

// ---- criteria ----

fn c1_potential() -> Verdict {
    let w = QuarticWell::new(0.01, 0.35);
    let analytic_min = (0.35f64 / 0.02).sqrt();
    let analytic_barrier = 0.35f64 * 0.35 / 0.04;
    // Roots of V'(x) / (4 c4) = x^3 - (c2 / 2 c4) x from the companion matrix.
    let a = 0.35 / (2.0 * 0.01);
    let companion = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, a, 0.0, 1.0, 0.0]);
    let roots = companion.complex_eigenvalues();
    let matrix_min = roots.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let matrix_barrier = w.value(0.0) - w.value(matrix_min);
    // Potential matrix against the spectral function of a much larger position operator.
    let small = BasisConfig::for_well(40, 0.35);
    let v = build_potential(&small, 0.01, 0.35).unwrap();
    let (x_big, _) = build_position_momentum(&BasisConfig::for_well(200, 0.35)).unwrap();
    let oracle = x_big.hermitian_spectrum().function(|x| nalgebra::Complex::new(w.value(x), 0.0));
    let block_err = (v.matrix() - oracle.view((0, 0), (40, 40))).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let pass = (w.minimum().abs() - 4.183).abs() < 1e-3
        && (w.barrier_height() - 3.0625).abs() < 1e-3
        && (analytic_min - matrix_min).abs() < 1e-3
        && (analytic_barrier - matrix_barrier).abs() < 1e-3
        && (w.minimum().abs() - analytic_min).abs() < 1e-12
        && (w.barrier_height() - analytic_barrier).abs() < 1e-12
        && block_err < 1e-3;
    verdict(
        pass,
        format!(
            "minima ±{:.4}, barrier {:.4}, companion-matrix minimum {:.6}, potential matrix vs spectral oracle {:.1e}",
            w.minimum().abs(),
            w.barrier_height(),
            matrix_min,
            block_err
        ),
    )
}

fn standard_normal_cdf() -> impl Fn(f64) -> f64 {
    let n = NormalDist::new(0.0, 1.0).unwrap();
    move |x| n.cdf(x)
}

fn c2_step_densities() -> Verdict {
    const N: usize = 100_000;
    let mut out = Vec::new();
    let mut pass = true;

    for (k, dt) in [1e-3, 1e-4].into_iter().enumerate() {
        let stream = |j: u64| SeedInfo::new(0, Purpose::Test, 3 * k as u64 + j).rng();
        let mut rng = stream(0);
        // Classical: signed noise coordinate from the density formula.
        let params = SimParams::at_barrier_temperature(0.25, 0.3, dt);
        let d = ClassicalLangevin::new(params.clone()).unwrap();
        let mut s = ClassicalState::new(-4.0, 0.0);
        let mut z = Vec::with_capacity(N);
        for _ in 0..N {
            let next = d.step(&s, &mut rng).unwrap();
            let lp = classical_step_log_prob(&s, &next, &params).unwrap();
            let drift = qtps::dynamics::langevin_step(&s, &params, 0.0);
            z.push((next.p - drift.p).signum() * (-2.0 * lp).sqrt());
            s = next;
        }
        let p_c = kolmogorov_pvalue(ks_statistic(&z, standard_normal_cdf()), N as f64);

        // SSE and QSD at dim 30.
        let params = SimParams::at_barrier_temperature(0.25, 0.3, dt);
        let cfg = BasisConfig::for_well(30, params.c2);
        let ops = SseOps::from_params(&cfg, &params).unwrap();
        let mut rng = stream(1);
        let mut psi = QuantumState::coherent(&cfg, -3.5, 0.0);
        let mut z = Vec::with_capacity(N);
        for _ in 0..N {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let next = sse_euler_step(&psi, &ops, dt, xi).unwrap();
            let lp = sse_step_log_prob(&psi, &next, &ops, dt).unwrap();
            let (w, _) = projected_increment(&psi, &next, &ops, dt, false).unwrap();
            z.push(w.re.signum() * (-2.0 * lp).sqrt());
            psi = next;
        }
        let p_s = kolmogorov_pvalue(ks_statistic(&z, standard_normal_cdf()), N as f64);

        // QSD: -log density is exponentially distributed with unit mean.
        let mut rng = stream(2);
        let mut psi = QuantumState::coherent(&cfg, -3.5, 0.0);
        let mut e = Vec::with_capacity(N);
        for _ in 0..N {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let next = qsd_euler_step(&psi, &ops, dt, a, b).unwrap();
            e.push(-qsd_step_log_prob(&psi, &next, &ops, dt).unwrap());
            psi = next;
        }
        let p_q = kolmogorov_pvalue(ks_statistic(&e, |x| 1.0 - (-x.max(0.0)).exp()), N as f64);
        pass &= p_c > 0.01 && p_s > 0.01 && p_q > 0.01;
        out.push(format!("dt {dt:.0e}: classical p {p_c:.3}, SSE p {p_s:.3}, QSD p {p_q:.3}"));
    }
    verdict(pass, out.join("; "))
}

fn c3_stationary() -> Verdict {
    let cfg = config(&sets(&["system=\"sse\"", "basis.dim=40", "bath.t_b=0.2", "bath.gamma=0.25"]));
    let (_, s) = stationary_summary(&cfg).unwrap();
    let ops = SseOps::from_params(&cfg.basis_config(), &cfg.sim_params()).unwrap();
    let snorm = lindblad_superoperator_for(&ops).norm();
    let pass = s.residual < 1e-8 * snorm
        && (s.trace_re - 1.0).abs() < 1e-10
        && s.trace_im.abs() < 1e-10
        && s.min_eigenvalue > -1e-6
        && s.gibbs_fidelity > 0.95;
    verdict(
        pass,
        format!(
            "residual {:.2e} (bound {:.2e}), trace {:.12}, min eigenvalue {:.2e}, Gibbs fidelity {:.4}",
            s.residual,
            1e-8 * snorm,
            s.trace_re,
            s.min_eigenvalue,
            s.gibbs_fidelity
        ),
    )
}

fn c4_classical_tis(p: &TisPoint) -> Verdict {
    let pass = within_factor(p.rate.k, 5.90e-6, 2.0) && within_factor(p.flux, 4.30e-3, 2.0);
    verdict(pass, format!("k {:.3e} ± {:.1e} (target 5.90e-6), flux {:.3e} (target 4.30e-3)", p.rate.k, p.rate.se, p.flux))
}

fn c5_sse_tis(p: &TisPoint, dim: usize, seconds: f64) -> Verdict {
    let pass = within_factor(p.rate.k, 9.30e-5, 3.0) && within_factor(p.flux, 1.30e-3, 3.0);
    verdict(
        pass,
        format!(
            "dim {dim}: k {:.3e} ± {:.1e} (target 9.30e-5), flux {:.3e} (target 1.30e-3), {:.0} s",
            p.rate.k, p.rate.se, p.flux, seconds
        ),
    )
}

fn c6_cross_method(rows: &[(&str, f64, Rate, Option<Rate>)]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (system, t_b, tis, mfpt) in rows {
        let ok = mfpt.is_some_and(|m| agree(*tis, m, 2.0));
        pass &= ok;
        let m = mfpt.map_or("bound only".to_string(), |m| format!("{:.3e} ± {:.1e}", m.k, m.se));
        parts.push(format!(
            "{system} T_B {t_b}: TIS {:.3e} ± {:.1e} vs iMFPT {m} [{}]",
            tis.k,
            tis.se,
            if ok { "ok" } else { "differ" }
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c7_tunneling() -> Verdict {
    let cfg = config(&sets(&["system=\"sse\"", "basis.dim=60", "wigner.dt=100.0", "wigner.time=450000.0"]));
    let curve = coherent_transfer(&cfg).unwrap();
    match curve.full_transfer_time {
        Some(t) => verdict(
            ((t - 2.76e5) / 2.76e5).abs() < 0.15,
            format!("full transfer at {t:.4e} (target 2.76e5), rate {:.3e}", curve.rate().unwrap_or(f64::NAN)),
        ),
        None => verdict(false, "no full transfer within the window".into()),
    }
}

fn c8_arrhenius(classical: &[(f64, Rate)], sse_low: (f64, Rate)) -> Verdict {
    let barrier = QuarticWell::new(0.01, 0.35).barrier_height();
    let kt = |t_b: f64| t_b * barrier;
    let pts: Vec<(f64, f64)> = classical.iter().map(|(t_b, r)| (kt(*t_b), r.k)).collect();
    let free = arrhenius_fit(&pts).unwrap();
    let line = arrhenius_constrained(&pts, barrier).unwrap();
    let n = classical.len() as f64;
    let intercept_se = (classical.iter().map(|(_, r)| r.ln().1.powi(2)).sum::<f64>()).sqrt() / n;
    let (ln_k, ln_se) = sse_low.1.ln();
    let residual = ln_k - (line.intercept + line.slope / kt(sse_low.0));
    let sigma = (ln_se * ln_se + intercept_se * intercept_se).sqrt();
    let slope_ok = ((free.slope + 3.06) / 3.06).abs() < 0.15;
    let residual_ok = residual > 2.0 * sigma;
    verdict(
        slope_ok && residual_ok,
        format!(
            "classical free slope {:.3} ± {:.2} over {} temperatures (target -3.06); SSE residual at T_B {} is {:.2} ± {:.2}",
            free.slope,
            free.slope_stderr,
            classical.len(),
            sse_low.0,
            residual,
            sigma
        ),
    )
}

fn histogram_pvalue(a: &[f64], b: &[f64], bins: usize) -> (f64, f64, f64) {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|k| pooled[k * pooled.len() / bins]).collect();
    let bin = |x: f64| edges.iter().take_while(|&&e| x >= e).count();
    let count = |xs: &[f64]| {
        let mut c = vec![0u64; bins];
        for &x in xs {
            c[bin(x)] += 1;
        }
        c
    };
    let (ta, tb) = (integrated_autocorr_time(a).max(1.0), integrated_autocorr_time(b).max(1.0));
    let eff = |c: Vec<u64>, tau: f64| c.into_iter().map(|n| (n as f64 / tau).round() as u64).collect::<Vec<_>>();
    let (chi2, dof) = chi2_two_histograms(&eff(count(a), ta), &eff(count(b), tb));
    (1.0 - ChiSquared::new(dof.max(1) as f64).unwrap().cdf(chi2), ta, tb)
}

fn c9_mirror() -> Verdict {
    let base = ["bath.t_b=0.5", "bath.dt=0.01", "tps.path_time=10.0", "tps.moves=20000", "tps.init_attempts=10000000"];
    let run = |mirror: &str, seed: &str| {
        let mut s = sets(&base);
        s.push(mirror.into());
        s.push(seed.into());
        tps_classical(&config(&s)).expect("TPS chain")
    };
    let plain = run("tps.mirror_fraction=0.0", "seed=31");
    let mirror = run("tps.mirror_fraction=0.5", "seed=32");
    let burn = 1000;
    let durations = |o: &qtps_cli::experiment::TpsOutcome<ClassicalState>| {
        o.observables.transition_time[burn..].iter().map(|t| t.expect("reactive path")).collect::<Vec<f64>>()
    };
    let means = |o: &qtps_cli::experiment::TpsOutcome<ClassicalState>| o.observables.mean_order[burn..].to_vec();
    let (p_len, ta, tb) = histogram_pvalue(&durations(&plain), &durations(&mirror), 8);
    let (p_mean, _, _) = histogram_pvalue(&means(&plain), &means(&mirror), 8);

    let classical_path = plain.chain.current.slices.clone();
    let d = ClassicalLangevin::new(SimParams::at_barrier_temperature(0.25, 0.5, 0.01)).unwrap();
    let params = SimParams::at_barrier_temperature(0.25, 0.5, 1e-3);
    let bcfg = BasisConfig::for_well(16, params.c2);
    let q = SseDynamics::new(SseOps::from_params(&bcfg, &params).unwrap(), 1e-3);
    let mut rng = SeedInfo::new(33, Purpose::Test, 0).rng();
    let mut qpath = vec![QuantumState::coherent(&bcfg, -3.0, 0.5)];
    for _ in 0..50 {
        let n = q.step(qpath.last().unwrap(), &mut rng).unwrap();
        qpath.push(n);
    }
    let mut involutions = true;
    for t in Transform::default_set() {
        involutions &= apply_transform(&d, &apply_transform(&d, &classical_path, t), t) == classical_path;
        let back = apply_transform(&q, &apply_transform(&q, &qpath, t), t);
        involutions &= back.iter().zip(&qpath).all(|(a, b)| a.amplitudes() == b.amplitudes());
    }
    let mirror_acc = mirror.chain.acceptance_rate(Some(qtps::tps::MoveKind::Mirror));
    verdict(
        p_len > 0.01 && p_mean > 0.01 && involutions,
        format!(
            "duration histogram p {p_len:.3} (tau {ta:.1}/{tb:.1}), mean-position histogram p {p_mean:.3}, mirror acceptance {mirror_acc:.3}, involutions {}",
            if involutions { "exact" } else { "BROKEN" }
        ),
    )
}

fn c10_sse_lindblad() -> Verdict {
    let params = SimParams::at_barrier_temperature(0.25, 0.3, 1e-3);
    let cfg = BasisConfig::for_well(20, params.c2);
    let ops = SseOps::from_params(&cfg, &params).unwrap();
    let d = SseDynamics::new(ops.clone(), 1e-3);
    let psi0 = QuantumState::coherent(&cfg, -3.0, 0.5);
    let n_steps = 1000;
    let n_traj = 2000;
    let (x, p) = build_position_momentum(&cfg).unwrap();
    let v = build_potential(&cfg, params.c4, params.c2).unwrap();
    let x2 = x.mul(&x);
    let observables = [("X", &x), ("P", &p), ("X^2", &x2), ("V", &v)];
    let mut samples = vec![Vec::with_capacity(n_traj); observables.len()];
    for k in 0..n_traj {
        let mut rng = SeedInfo::new(41, Purpose::Test, k as u64).rng();
        let mut psi = psi0.clone();
        for _ in 0..n_steps {
            psi = d.step(&psi, &mut rng).unwrap();
        }
        for (j, (_, op)) in observables.iter().enumerate() {
            samples[j].push(op.expectation(&psi).re);
        }
    }
    let a = psi0.amplitudes();
    let rho0 = a * a.adjoint();
    let rho = lindblad_rk4_propagate(&rho0, &ops.h_gamma, &ops.l, cfg.hbar, 1e-4, n_steps * 10);
    let mut pass = true;
    let mut parts = Vec::new();
    for (j, (name, op)) in observables.iter().enumerate() {
        let exact = (op.matrix() * &rho).trace().re;
        let mean = qtps::stats::mean(&samples[j]);
        let se = (qtps::stats::variance(&samples[j]) / n_traj as f64).sqrt();
        let z = (mean - exact) / se;
        pass &= z.abs() < 3.0;
        parts.push(format!("<{name}> {mean:.4} vs {exact:.4} ({z:+.2} SE)"));
    }
    verdict(pass, format!("dim 20, t = 1: {}", parts.join(", ")))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(u32, Verdict)> = Vec::new();
    let mut report = |n: u32, v: Verdict| {
        println!("criterion {n:>2}: {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, v));
    };

    report(1, c1_potential());
    report(2, c2_step_densities());
    report(3, c3_stationary());

    let classical: Vec<(f64, TisPoint)> = [0.1, 0.2, 0.3, 0.4, 0.5].iter().map(|&t| (t, classical_tis(t))).collect();
    report(4, c4_classical_tis(&classical[0].1));

    let t0 = Instant::now();
    let sse_low = sse_tis(0.1, 60, 80_000_000);
    report(5, c5_sse_tis(&sse_low, 60, t0.elapsed().as_secs_f64()));

    let c03 = classical[2].1.rate;
    let c05 = classical[4].1.rate;
    let s03 = sse_tis(0.3, 40, 10_000_000).rate;
    let s05 = sse_tis(0.5, 40, 10_000_000).rate;
    let rows = [
        ("classical", 0.3, c03, mfpt("classical", 0.3, 40, 400)),
        ("classical", 0.5, c05, mfpt("classical", 0.5, 40, 400)),
        ("SSE", 0.3, s03, mfpt("sse", 0.3, 40, 300)),
        ("SSE", 0.5, s05, mfpt("sse", 0.5, 40, 300)),
    ];
    report(6, c6_cross_method(&rows));
    report(7, c7_tunneling());
    let rates: Vec<(f64, Rate)> = classical.iter().map(|(t, p)| (*t, p.rate)).collect();
    report(8, c8_arrhenius(&rates, (0.1, sse_low.rate)));
    report(9, c9_mirror());
    report(10, c10_sse_lindblad());

    let failed: Vec<u32> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} of {} criteria pass ({:.0} s){}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
