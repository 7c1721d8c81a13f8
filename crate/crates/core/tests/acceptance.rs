//! End-to-end acceptance checks, one per criterion.
//!
//! All criteria run inside a single test so that the runtime measurement
//! is not disturbed by sibling tests, and every criterion reports even if an
//! earlier one failed. Set `EIGENCC_FULL_HORIZON=1` to run the long-horizon
//! false-alarm check at τ = 10⁴ instead of the scaled τ = 10³.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use eigencc::calibration::{
    covariance, nu_roots, random_orthogonal_pair, solve_calibration,
    var_function, CalibrationTarget, Convexity, Polynomial,
};
use eigencc::chart::ChartConfig;
use eigencc::corr::{
    build_bank, expected_r, init_window, sample_replacement_indices, substitute,
};
use eigencc::eigen::{
    block_eigenvector, perturbation_statistic, power_iteration_detector, random_unit_vector, xi,
    ExitReason,
};
use eigencc::linalg::{dot, SquareMatrix};
use eigencc::profile_model::{add_noise, table2_catalog, ProfileFunction, ResponseVector};
use eigencc::rng::stream;
use eigencc::sim::{
    in_control_run, prepare_trial, run_cell, runtime_probe, Cell, ForcingCache, SimOptions,
    Study1Grid, TrialSpec,
};
use eigencc::Error;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

// ---------------------------------------------------------------- 1

fn c1_study1() -> Outcome {
    let opts = SimOptions { trials: 100, max_after: 100, ..SimOptions::default() };
    let mut cache = ForcingCache::default();
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for cell in Study1Grid::default().cells() {
        let r = run_cell(&cell, &opts, &mut cache).map_err(err)?;
        let far = r.far.ok_or("no FAR")?;
        let arl = r.arl1.unwrap_or(f64::INFINITY);
        let label = format!("{}@snr{}", cell.pair.as_deref().unwrap_or("?"), cell.snr);
        summary.push(format!("{label}: FAR {far:.3} ARL1 {arl:.2}"));
        if far > 0.01 || arl > 1.05 || r.censored > 0 {
            failures.push(format!("{label} (FAR {far:.3}, ARL1 {arl:.2}, {} censored)", r.censored));
        }
    }
    if failures.is_empty() {
        Ok(format!("8 cells x 100 trials [{}]", summary.join(", ")))
    } else {
        Err(format!("{} of 8 cells out of tolerance: {} [all: {}]", failures.len(), failures.join("; "), summary.join(", ")))
    }
}

// ---------------------------------------------------------------- 2

fn c2_long_horizon_far() -> Outcome {
    let full = std::env::var("EIGENCC_FULL_HORIZON").is_ok_and(|v| v == "1");
    let tau = if full { 10_000 } else { 1_000 };
    let cell = Cell {
        id: format!("acceptance/long-far/tau{tau}"),
        study: "study2".into(),
        tau,
        n: 512,
        m: 40,
        w: 20,
        d: 25,
        snr: 5.0,
        pair: None,
        var_f: Some(4.0),
        rho: Some(0.75),
        convexity: Some(Convexity::Nonconvex),
    };
    let opts = SimOptions { trials: 20, max_after: 50, ..SimOptions::default() };
    let r = run_cell(&cell, &opts, &mut ForcingCache::default()).map_err(err)?;
    check(r.feasible, "cell unexpectedly infeasible")?;
    let far = r.far.ok_or("no FAR")?;
    check(far <= 0.01, format!("FAR {far} ({} false alarms) at tau={tau}", r.n_false_alarms))?;
    Ok(format!("tau={tau}, 20 trials: {} false alarms, FAR {far:.3}", r.n_false_alarms))
}

// ---------------------------------------------------------------- 3

fn quadratic_in_control_spec(n: usize, m: usize, w: usize) -> TrialSpec {
    let pair = table2_catalog().remove(1);
    TrialSpec {
        in_control: pair.in_control.clone(),
        out_of_control: pair.in_control,
        d: 3,
        n,
        m,
        tau: 0,
        sigma: 1.0,
        chart: SimOptions::default().chart_config(w),
        max_after: 0,
    }
}

fn c3_arl0_scaled() -> Outcome {
    let spec = quadratic_in_control_spec(256, 20, 10);
    let horizon = 100_000;
    let mut total = 0;
    let mut per_run = Vec::new();
    for run in 0..5u64 {
        let mut prepared = prepare_trial(&spec, 3_000 + run).map_err(err)?;
        let mut rng = stream(4_000 + run, &[]);
        let alarms = in_control_run(&mut prepared.chart, &prepared.f_mean, 1.0, horizon, &mut rng).map_err(err)?;
        total += alarms.len();
        per_run.push(alarms.len());
    }
    check(total <= 1, format!("{total} alarms in 5 x {horizon} steps ({per_run:?})"))?;
    Ok(format!("5 x {horizon} in-control steps: {total} alarm(s) {per_run:?}"))
}

// ---------------------------------------------------------------- 4

fn dense_leading(m: &SquareMatrix) -> (f64, Vec<f64>) {
    let w = m.dim();
    let e = SymmetricEigen::new(DMatrix::from_row_slice(w, w, m.as_slice()));
    let i = (0..w).max_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b])).unwrap();
    (e.eigenvalues[i], e.eigenvectors.column(i).iter().copied().collect())
}

fn dense_all(m: &SquareMatrix) -> Vec<f64> {
    let w = m.dim();
    let e = SymmetricEigen::new(DMatrix::from_row_slice(w, w, m.as_slice()));
    let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn c4_eigen_oracle() -> Outcome {
    let mut count = 0;
    let mut worst = 0.0_f64;
    for k1 in [1usize, 2, 3, 5, 8] {
        for k2 in [1usize, 2, 4, 7] {
            for g1 in [0.2, 0.5, 0.8] {
                for g2 in [0.1, 0.6] {
                    for frac in [-0.9, -0.3, 0.3, 0.9] {
                        let g12 = frac * f64::min(g1, g2);
                        let e = xi(k1, k2, g1, g2, g12).map_err(err)?;
                        let m = expected_r(g1, g2, g12, k1, k2).map_err(err)?;
                        let (lam, vec) = dense_leading(&m);
                        let v = block_eigenvector(k1, k2, e.xi_plus);
                        let plus = v.iter().zip(&vec).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        let minus = v.iter().zip(&vec).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
                        let dv = plus.min(minus);
                        let dl = (lam - e.lambda_plus).abs();
                        // λ₋ is also an eigenvalue of the same matrix.
                        let all = dense_all(&m);
                        let dm = all.iter().map(|x| (x - e.lambda_minus).abs()).fold(f64::INFINITY, f64::min);
                        worst = worst.max(dv).max(dl).max(dm);
                        check(
                            dv <= 1e-10 && dl <= 1e-10 && dm <= 1e-10,
                            format!("k1={k1} k2={k2} g=({g1},{g2},{g12}): dv={dv:e} dl={dl:e} dm={dm:e}"),
                        )?;
                        count += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{count} tuples, max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------- 5

/// Monomial terms `(coefficient, variable indices)`.
fn terms(p: &Polynomial) -> Vec<(f64, Vec<usize>)> {
    let d = p.dim();
    let mut t = vec![(p.constant, vec![])];
    t.extend(p.lin.iter().enumerate().map(|(i, &a)| (a, vec![i])));
    if let Some(q) = &p.quad {
        for i in 0..d {
            for j in 0..d {
                t.push((q[(i, j)], vec![i, j]));
            }
        }
    }
    t
}

/// `E[Π x_idx]` for independent uniforms: `Π 1/(r+1)` over multiplicities.
fn monomial_mean(idx: &[usize]) -> f64 {
    let mut sorted = idx.to_vec();
    sorted.sort_unstable();
    let mut out = 1.0;
    let mut k = 0;
    while k < sorted.len() {
        let r = sorted[k..].iter().take_while(|&&v| v == sorted[k]).count();
        out /= (r + 1) as f64;
        k += r;
    }
    out
}

/// Covariance by enumerating every pair of monomials.
fn enumeration_cov(p: &Polynomial, q: &Polynomial) -> f64 {
    let (tp, tq) = (terms(p), terms(q));
    let mean = |t: &[(f64, Vec<usize>)]| t.iter().map(|(c, i)| c * monomial_mean(i)).sum::<f64>();
    let mut cross = 0.0;
    for (a, i) in &tp {
        for (b, j) in &tq {
            let mut idx = i.clone();
            idx.extend(j);
            cross += a * b * monomial_mean(&idx);
        }
    }
    cross - mean(&tp) * mean(&tq)
}

/// Gauss–Legendre nodes and weights on [0, 1].
fn gauss_legendre(k: usize) -> Vec<(f64, f64)> {
    (1..=k)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (k as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for n in 2..=k {
                    let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = k as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            ((x + 1.0) / 2.0, w / 2.0)
        })
        .collect()
}

fn quadrature_cov(f: &ProfileFunction, g: &ProfileFunction, d: usize) -> f64 {
    let nodes = gauss_legendre(6);
    let mut points: Vec<(Vec<f64>, f64)> = vec![(vec![], 1.0)];
    for _ in 0..d {
        points = points
            .into_iter()
            .flat_map(|(x, w)| {
                nodes.iter().map(move |&(xi, wi)| {
                    let mut y = x.clone();
                    y.push(xi);
                    (y, w * wi)
                })
            })
            .collect();
    }
    let (mut ef, mut eg, mut efg) = (0.0, 0.0, 0.0);
    for (x, w) in &points {
        let (a, b) = (f.eval_point(x), g.eval_point(x));
        ef += w * a;
        eg += w * b;
        efg += w * a * b;
    }
    efg - ef * eg
}

fn random_poly<R: Rng>(d: usize, quadratic: bool, rng: &mut R) -> ProfileFunction {
    if quadratic {
        let matrix = SquareMatrix::from_fn(d, |_, _| StandardNormal.sample(rng));
        let coeffs = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        ProfileFunction::quadratic(matrix, coeffs).unwrap()
    } else {
        let coeffs = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        ProfileFunction::linear(coeffs, StandardNormal.sample(rng))
    }
}

fn c5_moments() -> Outcome {
    let mut rng = stream(55, &[]);
    let samples = 10_000_000usize;
    let (mut n_poly, mut worst_enum, mut worst_quad, mut worst_z) = (0, 0.0_f64, 0.0_f64, 0.0_f64);
    for d in [1usize, 2, 3, 5] {
        for k in 0..25 {
            let f = random_poly(d, k % 4 != 3, &mut rng);
            let g = random_poly(d, k % 3 != 2, &mut rng);
            let (pf, pg) = (Polynomial::from_function(&f).unwrap(), Polynomial::from_function(&g).unwrap());
            let vf = var_function(&f).map_err(err)?;
            let cfg = covariance(&f, &g).map_err(err)?;
            let (ev, ec) = (enumeration_cov(&pf, &pf), enumeration_cov(&pf, &pg));
            let scale = 1.0 + vf.abs();
            let de = ((vf - ev).abs().max((cfg - ec).abs())) / scale;
            worst_enum = worst_enum.max(de);
            check(de <= 1e-12, format!("d={d}: enumeration mismatch {de:e}"))?;
            if d <= 2 {
                let dq = (vf - quadrature_cov(&f, &f, d)).abs().max((cfg - quadrature_cov(&f, &g, d)).abs());
                worst_quad = worst_quad.max(dq);
                check(dq <= 1e-8, format!("d={d}: quadrature mismatch {dq:e}"))?;
            }
            // Monte Carlo, centred at the exact means.
            let (mf, mg) = (pf.mean(), pg.mean());
            let mut x = vec![0.0; d];
            let (mut s_v, mut s_v2, mut s_c, mut s_c2) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..samples {
                x.iter_mut().for_each(|v| *v = rng.random());
                let a = f.eval_point(&x) - mf;
                let b = g.eval_point(&x) - mg;
                let (v, c) = (a * a, a * b);
                s_v += v;
                s_v2 += v * v;
                s_c += c;
                s_c2 += c * c;
            }
            let n = samples as f64;
            let z = |s: f64, s2: f64, exact: f64| {
                let mean = s / n;
                let se = ((s2 / n - mean * mean).max(0.0) / n).sqrt();
                (mean - exact).abs() / se
            };
            let zv = z(s_v, s_v2, vf);
            let zc = z(s_c, s_c2, cfg);
            worst_z = worst_z.max(zv).max(zc);
            check(zv <= 4.0 && zc <= 4.0, format!("d={d}: Monte Carlo z = {zv:.2}, {zc:.2}"))?;
            n_poly += 1;
        }
    }
    Ok(format!(
        "{n_poly} polynomial pairs; enumeration rel dev {worst_enum:.1e}, quadrature dev {worst_quad:.1e}, max MC |z| {worst_z:.2}"
    ))
}

// ---------------------------------------------------------------- 6

/// Textbook two-pass Pearson correlation.
fn two_pass(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn scratch(ys: &[&[f64]]) -> SquareMatrix {
    SquareMatrix::from_fn(ys.len(), |i, j| if i == j { 1.0 } else { two_pass(ys[i], ys[j]) })
}

fn c6_incremental() -> Outcome {
    let mut worst = 0.0_f64;
    let sequences = 1000;
    for s in 0..sequences {
        let mut rng = stream(66, &[s]);
        let n = rng.random_range(3..40);
        let w = rng.random_range(2..10);
        let m = w + rng.random_range(0..8);
        let mean: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
        let sigma = rng.random_range(0.1..2.0);
        let hist: Vec<ResponseVector> = (0..m as i64).map(|k| add_noise(&mean, sigma, k + 1 - m as i64, &mut rng)).collect();
        let bank = build_bank(hist.clone()).map_err(err)?;
        let mut win = init_window(&bank, w).map_err(err)?;
        let mut buffer: Vec<Vec<f64>> = hist[m - w..].iter().map(|r| r.y.clone()).collect();
        let steps = rng.random_range(0..3 * w);
        for t in 1..=steps as i64 {
            let y = add_noise(&mean, sigma, t, &mut rng);
            win.push(&y).map_err(err)?;
            buffer.remove(0);
            buffer.push(y.y);
            let refs: Vec<&[f64]> = buffer.iter().map(Vec::as_slice).collect();
            worst = worst.max(win.matrix().max_abs_diff(&scratch(&refs)));
            let k1 = rng.random_range(1..w);
            let idx = sample_replacement_indices(win.time(), w, k1, m, &mut rng).map_err(err)?;
            let sub = substitute(&win, &bank, k1, &idx).map_err(err)?;
            let mut composed: Vec<&[f64]> = idx.iter().map(|&j| hist[j].y.as_slice()).collect();
            composed.extend(buffer[k1..].iter().map(Vec::as_slice));
            worst = worst.max(sub.matrix.max_abs_diff(&scratch(&composed)));
            check(sub.matrix.is_symmetric(), "asymmetric R(k1)")?;
        }
    }
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("{sequences} random push/substitute sequences, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 7

/// Independent feasibility: scan ν over the range where `C_h` is real for
/// a root of `ρ(ν) = ν / sqrt(2ν − 1 + r)` in the requested convexity range.
fn scan_feasible(var_f: f64, snr: f64, rho: f64, cx: Convexity) -> bool {
    let r = snr / var_f;
    let (lo, hi) = (1.0 - r.sqrt(), 1.0 + r.sqrt());
    let rho_of = |nu: f64| {
        let den = 2.0 * nu - 1.0 + r;
        if den > 0.0 {
            Some(nu / den.sqrt())
        } else {
            None
        }
    };
    let admits = |nu: f64| match cx {
        Convexity::Convex => (0.0..1.0).contains(&nu),
        Convexity::Nonconvex => !(0.0..=1.0).contains(&nu),
    };
    // ν = 0 is the exact root for ρ = 0; a grid would only bracket it.
    if rho == 0.0 {
        return lo <= 0.0 && 0.0 <= hi && rho_of(0.0).is_some() && admits(0.0);
    }
    let steps = 200_000;
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..=steps {
        let nu = lo + (hi - lo) * k as f64 / steps as f64;
        let Some(val) = rho_of(nu) else {
            prev = None;
            continue;
        };
        let diff = val - rho;
        if admits(nu) && diff.abs() < 1e-9 {
            return true;
        }
        if let Some((pn, pd)) = prev {
            if pd * diff < 0.0 {
                // Bisect within the bracket for the crossing point.
                let (mut a, mut b) = (pn, nu);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    let dm = rho_of(mid).unwrap() - rho;
                    if dm * pd > 0.0 {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                if admits(0.5 * (a + b)) {
                    return true;
                }
            }
        }
        prev = Some((nu, diff));
    }
    false
}

fn c7_calibration_roundtrip() -> Outcome {
    let mut rng = stream(77, &[]);
    let (f0, h0) = random_orthogonal_pair(3, 2, &mut rng).map_err(err)?;
    let mut rhos = vec![0.75, 0.9];
    rhos.extend([-1.0, -0.75, -0.5, -0.3, 0.0, 0.3, 0.5]);
    let (mut feasible, mut infeasible, mut worst) = (0, 0, 0.0_f64);
    for var_f in [2.0, 4.0, 6.0] {
        for snr in [3.0, 5.0] {
            for &rho in &rhos {
                for cx in [Convexity::Convex, Convexity::Nonconvex] {
                    let target = CalibrationTarget::new(var_f, snr, rho, cx);
                    let oracle = scan_feasible(var_f, snr, rho, cx);
                    let label = format!("Var f={var_f} SNR={snr} rho={rho} {cx:?}");
                    match solve_calibration(&target, &f0, &h0) {
                        Ok(pair) => {
                            check(oracle, format!("{label}: solved but oracle finds no root"))?;
                            let (vd, r) = pair.realized().map_err(err)?;
                            let dev = (vd - snr).abs().max((r - rho).abs());
                            worst = worst.max(dev);
                            check(dev <= 1e-8, format!("{label}: deviation {dev:e}"))?;
                            feasible += 1;
                        }
                        Err(Error::Infeasible(_)) => {
                            check(!oracle, format!("{label}: rejected but oracle finds a root"))?;
                            // Rejections come from the minimum-correlation
                            // bound or from root placement.
                            let r = snr / var_f;
                            let bound = r < 1.0 && rho.abs() < (1.0 - r).sqrt();
                            let roots_ok = nu_roots(rho, r).is_some_and(|(a, b)| {
                                [a, b].iter().any(|&nu| {
                                    let sign_ok = if rho == 0.0 { nu == 0.0 } else { nu.signum() == rho.signum() };
                                    let admits = match cx {
                                        Convexity::Convex => (0.0..1.0).contains(&nu),
                                        Convexity::Nonconvex => !(0.0..=1.0).contains(&nu),
                                    };
                                    sign_ok && admits && (1.0 - nu).powi(2) <= r * (1.0 + 1e-12)
                                })
                            });
                            check(bound || !roots_ok, format!("{label}: rejected for another reason"))?;
                            infeasible += 1;
                        }
                        Err(e) => return Err(format!("{label}: {e:?}")),
                    }
                }
            }
        }
    }
    Ok(format!("{feasible} feasible cells within {worst:.1e}; {infeasible} infeasible cells match the oracle"))
}

// ---------------------------------------------------------------- 8

fn c8_detector() -> Outcome {
    let mut rng = stream(88, &[]);
    let zeta = 1e-3;
    let mut counts = [0usize; 3];
    for k in 0..3000 {
        let w = rng.random_range(2..25);
        // Sample correlation matrices of random data, near and far from the
        // rank-one structure.
        let n = rng.random_range(w + 2..80);
        let base: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let noise = [0.1, 1.0, 5.0][k % 3];
        let ys: Vec<Vec<f64>> = (0..w).map(|_| base.iter().map(|b| b + noise * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let refs: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let m = scratch(&refs);
        let v = vec![1.0 / (w as f64).sqrt(); w];
        let max_iter = [5, 50, 1000][k % 3];
        let e = power_iteration_detector(&m, &v, zeta, max_iter, &mut rng).map_err(err)?;
        let q_norm = dot(&e.q, &e.q).sqrt();
        check((q_norm - 1.0).abs() <= 1e-12, format!("|q| = {q_norm}"))?;
        let ok = match e.exit_reason {
            ExitReason::RayleighExceeded => m.bilinear(&e.q, &e.q).abs() > m.bilinear(&v, &v).abs(),
            ExitReason::ConvergedToReference => dot(&v, &e.q).powi(2) >= 1.0 - zeta,
            ExitReason::MaxIter => e.iterations == max_iter,
        };
        check(ok, format!("exit predicate {:?} violated", e.exit_reason))?;
        counts[e.exit_reason as usize] += 1;
    }
    for _ in 0..10_000 {
        let w = rng.random_range(2..40);
        let q = random_unit_vector(w, &mut rng);
        let neg: Vec<f64> = q.iter().map(|x| -x).collect();
        let (a, b) = (perturbation_statistic(&q), perturbation_statistic(&neg));
        check(a == b, format!("statistic {a} vs {b} under sign flip"))?;
    }
    Ok(format!(
        "3000 detector calls (rayleigh {}, converged {}, max_iter {}); 10000 sign flips invariant",
        counts[0], counts[1], counts[2]
    ))
}

// ---------------------------------------------------------------- 9

fn c9_runtime() -> Outcome {
    let spec = quadratic_in_control_spec(256, 20, 10);
    let mut prepared = prepare_trial(&spec, 9).map_err(err)?;
    let mut rng = stream(99, &[]);
    let profiles: Vec<ResponseVector> = (1..=1000).map(|t| add_noise(&prepared.f_mean, 1.0, t, &mut rng)).collect();
    runtime_probe(&mut prepared.chart, &profiles, 3).map_err(err)?;
    let s = runtime_probe(&mut prepared.chart, &profiles, 31).map_err(err)?;
    check(s.median <= 0.010, format!("median {:.4} s per 100 steps", s.median))?;
    Ok(format!(
        "per 100 monitor_step calls: min {:.2} ms, median {:.2} ms, max {:.2} ms",
        s.min * 1e3,
        s.median * 1e3,
        s.max * 1e3
    ))
}

// ---------------------------------------------------------------- 10

fn c10_low_correlation() -> Outcome {
    let opts = SimOptions { trials: 20, max_after: 100, ..SimOptions::default() };
    let mut summary = Vec::new();
    for (rho, cx) in [
        (-1.0, Convexity::Nonconvex),
        (-0.5, Convexity::Nonconvex),
        (0.0, Convexity::Convex),
        (0.5, Convexity::Convex),
    ] {
        let cell = Cell {
            id: format!("acceptance/low-rho/{rho}"),
            study: "study2".into(),
            tau: 30,
            n: 256,
            m: 20,
            w: 10,
            d: 25,
            snr: 5.0,
            pair: None,
            var_f: Some(4.0),
            rho: Some(rho),
            convexity: Some(cx),
        };
        let r = run_cell(&cell, &opts, &mut ForcingCache::default()).map_err(err)?;
        check(r.feasible, format!("rho={rho}: infeasible ({:?})", r.infeasible_reason))?;
        let delays: Vec<Option<i64>> = r.trials.iter().map(|t| t.true_alarm_time.map(|a| a - t.tau as i64)).collect();
        check(delays.iter().all(|d| *d == Some(1)), format!("rho={rho}: delays {delays:?}"))?;
        summary.push(format!("rho={rho}: nu={:.4}", r.nu.unwrap_or(f64::NAN)));
    }
    Ok(format!("all 80 trials detected at tau+1 [{}]", summary.join(", ")))
}

#[test]
fn acceptance_criteria() {
    let _ = ChartConfig::new(10, 0);
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 study-1 reproduction", c1_study1),
        ("2 long-horizon FAR", c2_long_horizon_far),
        ("3 ARL0 magnitude (scaled)", c3_arl0_scaled),
        ("4 eigenstructure oracle", c4_eigen_oracle),
        ("5 moment closed forms", c5_moments),
        ("6 incremental correlation", c6_incremental),
        ("7 calibration roundtrip", c7_calibration_roundtrip),
        ("8 detector postcondition", c8_detector),
        ("9 runtime", c9_runtime),
        ("10 low/negative correlation", c10_low_correlation),
    ];
    // The runtime probe goes first, before the heavy criteria warm the
    // allocator and fill caches with unrelated data.
    let order = [8usize, 0, 1, 2, 3, 4, 5, 6, 7, 9];
    let mut results = vec![None; criteria.len()];
    for &i in &order {
        let (name, f) = criteria[i];
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        results[i] = Some((name, outcome, secs));
    }
    let mut failed = Vec::new();
    for (name, outcome, secs) in results.into_iter().flatten() {
        match outcome {
            Ok(msg) => println!("PASS criterion {name} ({secs:.1}s): {msg}"),
            Err(msg) => {
                println!("FAIL criterion {name} ({secs:.1}s): {msg}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
