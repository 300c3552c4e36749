//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test -p kur-core --test acceptance -- algebra determinism`.

use std::f64::consts::FRAC_PI_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use kur_core::activity::{exact_activity, ExactGrid};
use kur_core::dicke::{build_operators, spin_coherent_state, DickeSpace, QuantumState};
use kur_core::harness::{
    check_inequality_chain, run_size_sweep, run_time_sweep, run_verification, InitialState,
    SizeSweepConfig, TimeSweepConfig, VerificationConfig,
};
use kur_core::lindblad::{evolve_density, LiouvillianContext};
use kur_core::mean_field::{
    integrate_mean_field, stationary_fixed_point, Magnetization, ModelParams,
};
use kur_core::trajectories::{max_stable_dt, run_ensemble};
use nalgebra::DMatrix;
use num_complex::Complex64;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria = [
        Criterion {
            name: "algebra",
            budget: Duration::from_secs(10),
            run: algebra,
        },
        Criterion {
            name: "mean_field",
            budget: Duration::from_secs(30),
            run: mean_field,
        },
        Criterion {
            name: "oracle_equivalence",
            budget: Duration::from_secs(5 * 60),
            run: oracle_equivalence,
        },
        Criterion {
            name: "j0_limits",
            budget: Duration::from_secs(2 * 60),
            run: j0_limits,
        },
        Criterion {
            name: "bound_ordering",
            budget: Duration::from_secs(30 * 60),
            run: bound_ordering,
        },
        Criterion {
            name: "kur_time_sweep",
            budget: Duration::from_secs(30 * 60),
            run: kur_time_sweep,
        },
        Criterion {
            name: "size_scaling",
            budget: Duration::from_secs(60 * 60),
            run: size_scaling,
        },
        Criterion {
            name: "determinism",
            budget: Duration::from_secs(10 * 60),
            run: determinism,
        },
    ];

    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".to_string()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > c.budget => Err(format!(
                "{msg}; runtime {:.1}s exceeds {}s",
                elapsed.as_secs_f64(),
                c.budget.as_secs()
            )),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS {} ({:.1}s): {msg}", c.name, elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} ({:.1}s): {msg}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn params(n: usize, omega: f64, kappa: f64, tau: f64, dt: f64) -> ModelParams {
    ModelParams {
        omega,
        kappa,
        n_spins: n,
        tau,
        dt,
    }
}

fn algebra() -> Outcome {
    const TOL: f64 = 1e-8;
    let i = Complex64::new(0.0, 1.0);
    let mut worst: f64 = 0.0;
    for n in [1, 2, 10, 40, 100] {
        let space = DickeSpace::new(n).map_err(|e| e.to_string())?;
        let ops = build_operators(space);
        let (sx, sy, sz) = (ops.sx.matrix(), ops.sy.matrix(), ops.sz.matrix());
        let comm = |a: &DMatrix<Complex64>, b: &DMatrix<Complex64>| a * b - b * a;
        let j = space.j();
        let identity = DMatrix::<Complex64>::identity(space.dim(), space.dim());
        let checks = [
            max_abs(&(comm(sx, sy) - sz * i)),
            max_abs(&(comm(sy, sz) - sx * i)),
            max_abs(&(comm(sz, sx) - sy * i)),
            max_abs(
                &(ops.sp.matrix() * ops.sm.matrix()
                    - (&identity * Complex64::new(j * (j + 1.0), 0.0) - sz * sz + sz)),
            ),
            max_abs(&(ops.sp.matrix() - (sx + sy * i))),
        ];
        for (k, v) in checks.iter().enumerate() {
            worst = worst.max(*v);
            ensure(*v < TOL, || {
                format!("N={n}: operator identity {k} off by {v:e}")
            })?;
        }
        for (theta, phi) in [(0.0, 0.0), (0.7, 1.9), (FRAC_PI_2, FRAC_PI_2), (2.6, -0.4)] {
            let psi = spin_coherent_state(space, theta, phi);
            let m = Magnetization::from_angles(theta, phi);
            for (alpha, op) in ops.components().iter().enumerate() {
                let mean = psi.expect_matrix(op.matrix()).re;
                let var = psi.expect_matrix(&(op.matrix() * op.matrix())).re - mean * mean;
                let dm = (mean - j * m.component(alpha)).abs();
                let dv = (var - n as f64 / 4.0 * (1.0 - m.component(alpha).powi(2))).abs();
                worst = worst.max(dm).max(dv);
                ensure(dm < TOL && dv < TOL, || {
                    format!("N={n} theta={theta} phi={phi} alpha={alpha}: mean {dm:e}, var {dv:e}")
                })?;
            }
        }
    }
    Ok(format!(
        "N in {{1,2,10,40,100}}, worst residual {worst:.1e}"
    ))
}

fn mean_field() -> Outcome {
    let err = |e: kur_core::KurError| e.to_string();
    let mut worst_norm: f64 = 0.0;
    for omega in [0.5, 1.0, 1.5] {
        let traj = integrate_mean_field(
            Magnetization::new(0.0, 1.0, 0.0).map_err(err)?,
            &params(1, omega, 1.0, 50.0, 1e-3),
        )
        .map_err(err)?;
        worst_norm = worst_norm.max(traj.max_norm_defect());
    }
    ensure(worst_norm <= 1e-9, || format!("norm defect {worst_norm:e}"))?;

    let p = params(1, 0.5, 1.0, 50.0, 1e-3);
    let traj =
        integrate_mean_field(Magnetization::new(0.0, 1.0, 0.0).map_err(err)?, &p).map_err(err)?;
    let fp = stationary_fixed_point(&p).ok_or("no fixed point")?;
    let d_fp = traj.last().distance(&fp);
    ensure(d_fp < 1e-6, || format!("fixed point missed by {d_fp:e}"))?;

    let btc = integrate_mean_field(
        Magnetization::new(0.0, 1.0, 0.0).map_err(err)?,
        &params(1, 1.5, 1.0, 50.0, 1e-3),
    )
    .map_err(err)?;
    let (t0, t1) = btc
        .find_recurrence(1e-4, 1.0, 0.0)
        .ok_or("no recurrence in the time-crystal phase")?;

    let m0 = Magnetization::from_angles(1.0, 0.5);
    let end = |dt: f64| -> Result<Magnetization, String> {
        Ok(integrate_mean_field(m0, &params(1, 1.4, 1.0, 4.0, dt))
            .map_err(err)?
            .last())
    };
    let reference = end(1e-4)?;
    let ratio = end(0.04)?.distance(&reference) / end(0.02)?.distance(&reference);
    ensure((ratio - 16.0).abs() <= 2.0, || {
        format!("convergence ratio {ratio}")
    })?;
    Ok(format!(
        "norm defect {worst_norm:.1e}, fixed-point distance {d_fp:.1e}, period {:.4}, dt ratio {ratio:.2}",
        t1 - t0
    ))
}

fn oracle_equivalence() -> Outcome {
    let err = |e: kur_core::KurError| e.to_string();
    let ctx = LiouvillianContext::new(params(20, 1.5, 1.0, 10.0, 1e-3)).map_err(err)?;
    let psi = spin_coherent_state(ctx.space(), FRAC_PI_2, FRAC_PI_2);
    let checks = [1.0, 5.0, 10.0];
    let dt = 1.0 / (1.0 / max_stable_dt(&ctx, 0.005)).ceil();
    let stats =
        run_ensemble(&psi, &ctx, 10.0, dt, &checks, 1000, 20_240_601, false).map_err(err)?;
    let log = evolve_density(&ctx, &psi.to_density(), 10.0, 1e-3, &checks, false).map_err(err)?;
    let mut parts = Vec::new();
    for (k, &t) in checks.iter().enumerate() {
        let z = (stats.mean[k] - log.activity[k]) / stats.se_mean[k];
        parts.push(format!(
            "t={t}: {:.3} vs {:.3} ({z:+.2} SE)",
            stats.mean[k], log.activity[k]
        ));
        ensure(z.abs() <= 3.0, || parts.join("; "))?;
    }
    Ok(parts.join("; "))
}

fn j0_limits() -> Outcome {
    let err = |e: kur_core::KurError| e.to_string();
    let grid = ExactGrid {
        dt: 1e-3,
        stride: 20,
    };

    let ctx = LiouvillianContext::new(params(10, 0.0, 1.0, 5.0, 1e-3)).map_err(err)?;
    let psi = spin_coherent_state(ctx.space(), 1.0, 0.3);
    let ex = exact_activity(&ctx, &psi, 5.0, grid, true).map_err(err)?;
    let mut rel_undriven: f64 = 0.0;
    for (j0, a) in ex.j0.iter().zip(&ex.a).skip(1) {
        rel_undriven = rel_undriven.max((j0 - a).abs() / a);
    }
    ensure(rel_undriven <= 1e-6, || {
        format!("omega=0: |J0-A|/A = {rel_undriven:e}")
    })?;

    let tau = 2.0;
    let ctx = LiouvillianContext::new(params(10, 1.0, 1e-6, tau, 1e-3)).map_err(err)?;
    let psi = spin_coherent_state(ctx.space(), 1.0, 0.3);
    let ex = exact_activity(&ctx, &psi, tau, grid, true).map_err(err)?;
    let h = ctx.hamiltonian();
    let mean = psi.expect_matrix(h).re;
    let var = psi.expect_matrix(&(h * h)).re - mean * mean;
    let target = 4.0 * tau * tau * var;
    let got = *ex.j0.last().unwrap();
    let rel_unitary = (got - target).abs() / target;
    ensure(rel_unitary <= 1e-3, || {
        format!("kappa->0: J0 = {got}, 4 tau^2 Var(H) = {target}")
    })?;
    Ok(format!(
        "omega=0 max rel {rel_undriven:.1e}; kappa=1e-6 rel {rel_unitary:.1e}"
    ))
}

fn bound_ordering() -> Outcome {
    let mut problems = Vec::new();
    let mut deviations = Vec::new();
    for n in [10, 20, 40] {
        let cfg = VerificationConfig {
            n_spins: n,
            kappa: 1.0,
            omegas: vec![0.5, 1.0, 1.5],
            tau: 10.0,
            initial: InitialState {
                theta_bloch: FRAC_PI_2,
                phi: FRAC_PI_2,
            },
            exact: ExactGrid {
                dt: 2e-3,
                stride: 25,
            },
            mean_field_dt: 1e-3,
            deviation_at: vec![5.0],
        };
        let cells = run_verification(&cfg).map_err(|e| e.to_string())?;
        for cell in cells {
            let v = cell.report.ordering_violations();
            if !v.is_empty() {
                problems.push(format!(
                    "N={n} omega={}: {} ordering violations, first: {}",
                    cell.omega,
                    v.len(),
                    v[0]
                ));
            }
            deviations.push((n, cell.omega, cell.deviation[0].1));
        }
    }
    let mut table = Vec::new();
    for omega in [0.5, 1.0, 1.5] {
        let devs: Vec<f64> = deviations
            .iter()
            .filter(|d| d.1 == omega)
            .map(|d| d.2)
            .collect();
        table.push(format!(
            "omega={omega}: {:.3}/{:.3}/{:.3}",
            devs[0], devs[1], devs[2]
        ));
        if !(devs[0] > devs[1] && devs[1] > devs[2]) {
            problems.push(format!(
                "omega={omega}: |Bmb-J0|/J0 at tau=5 not decreasing in N (N=10/20/40: {:.3}/{:.3}/{:.3})",
                devs[0], devs[1], devs[2]
            ));
        }
    }
    let summary = format!("deviation at tau=5 for N=10/20/40: {}", table.join(", "));
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", problems.join("; ")))
    }
}

fn kur_time_sweep() -> Outcome {
    let cfg = TimeSweepConfig {
        n_spins: 100,
        kappa: 1.0,
        omegas: vec![0.5, 1.0, 1.5],
        tau: 10.0,
        checkpoint_spacing: 0.1,
        n_traj: 1000,
        master_seed: 2024,
        initial: InitialState::default(),
        dt: None,
        density_dt: None,
        mean_field_dt: 1e-3,
        floor: 0.1,
    };
    let cells = run_time_sweep(&cfg).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    let mut notes = Vec::new();
    let mut final_fluct = Vec::new();
    for cell in &cells {
        let rep = check_inequality_chain(&cell.rows, cfg.kappa, cfg.floor);
        let (tk, mk) = rep.worst_kur.unwrap_or((f64::NAN, f64::NAN));
        let (tb, mb) = rep.worst_bound.unwrap_or((f64::NAN, f64::NAN));
        notes.push(format!(
            "omega={}: worst KUR margin {mk:+.3} at tau={tk:.1}, worst bound margin {mb:+.3} at tau={tb:.1}",
            cell.omega
        ));
        if !rep.passed() {
            problems.push(format!(
                "omega={}: {} violations (first at tau={:.1}, {:?})",
                cell.omega,
                rep.violations.len(),
                rep.violations[0].tau,
                rep.violations[0].kind
            ));
        }
        final_fluct.push((cell.omega, cell.rows.last().unwrap().relative_fluctuation));
    }
    let best = final_fluct
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|b| b.0)
        .unwrap();
    notes.push(format!(
        "fluctuation at tau=10: {}",
        final_fluct
            .iter()
            .map(|(w, f)| format!("{w}: {f:.3e}"))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    if best != 1.0 {
        problems.push(format!(
            "fluctuation at tau=10 minimal at omega={best}, not 1.0"
        ));
    }
    if problems.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("{}; {}", problems.join("; "), notes.join("; ")))
    }
}

fn size_scaling() -> Outcome {
    let cfg = SizeSweepConfig {
        n_list: vec![10, 20, 30, 40, 60, 80, 100],
        kappa: 1.0,
        omegas: vec![0.5, 1.0, 1.5],
        tau: 10.0,
        n_traj: 1000,
        master_seed: 7,
        initial: InitialState::default(),
        dt: None,
        density_dt: None,
        mean_field_dt: 1e-3,
        exact_j0_max_n: 0,
        exact: None,
    };
    let sweep = run_size_sweep(&cfg).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    let mut notes = Vec::new();
    for s in &sweep.slopes {
        notes.push(format!(
            "omega={}: MC slope {:.3} +- {:.3}, 1/Bmb slope {:.12}",
            s.omega, s.fluctuation.slope, s.fluctuation.slope_se, s.inv_bmb.slope
        ));
        if (s.inv_bmb.slope + 1.0).abs() > 1e-9 {
            problems.push(format!(
                "omega={}: 1/Bmb slope {}",
                s.omega, s.inv_bmb.slope
            ));
        }
        if !(-1.15..=-0.85).contains(&s.fluctuation.slope) {
            problems.push(format!(
                "omega={}: MC slope {:.3} outside [-1.15, -0.85]",
                s.omega, s.fluctuation.slope
            ));
        }
    }
    if problems.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("{}; {}", problems.join("; "), notes.join("; ")))
    }
}

fn csv_bytes(threads: usize) -> Result<Vec<u8>, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let err = |e: kur_core::KurError| e.to_string();
        let mut out = Vec::new();
        let time = TimeSweepConfig {
            n_spins: 12,
            kappa: 1.0,
            omegas: vec![0.5, 1.5],
            tau: 2.0,
            checkpoint_spacing: 0.1,
            n_traj: 300,
            master_seed: 99,
            initial: InitialState::default(),
            dt: None,
            density_dt: None,
            mean_field_dt: 1e-3,
            floor: 0.1,
        };
        for cell in run_time_sweep(&time).map_err(err)? {
            out = cell.write_csv(out).map_err(err)?;
            out = cell.ensemble.write_raw_csv(out).map_err(err)?;
        }
        let size = SizeSweepConfig {
            n_list: vec![4, 8],
            kappa: 1.0,
            omegas: vec![1.0],
            tau: 1.0,
            n_traj: 200,
            master_seed: 5,
            initial: InitialState::default(),
            dt: None,
            density_dt: None,
            mean_field_dt: 1e-3,
            exact_j0_max_n: 8,
            exact: Some(ExactGrid {
                dt: 2e-3,
                stride: 25,
            }),
        };
        let sweep = run_size_sweep(&size).map_err(err)?;
        out = sweep.write_csv(out).map_err(err)?;
        out = sweep.write_slopes_csv(out).map_err(err)?;
        let verify = VerificationConfig {
            n_spins: 6,
            kappa: 1.0,
            omegas: vec![1.5],
            tau: 1.0,
            initial: InitialState {
                theta_bloch: FRAC_PI_2,
                phi: FRAC_PI_2,
            },
            exact: ExactGrid {
                dt: 2e-3,
                stride: 25,
            },
            mean_field_dt: 1e-3,
            deviation_at: vec![],
        };
        for cell in run_verification(&verify).map_err(err)? {
            out = cell.report.write_csv(out).map_err(err)?;
        }
        Ok(out)
    })
}

fn determinism() -> Outcome {
    let one = csv_bytes(1)?;
    let two = csv_bytes(2)?;
    let again = csv_bytes(2)?;
    ensure(one == two, || {
        "output differs between 1 and 2 threads".into()
    })?;
    ensure(two == again, || {
        "output differs between identical runs".into()
    })?;
    Ok(format!(
        "{} bytes identical across 1/2/2 threads",
        one.len()
    ))
}
