//! Acceptance gate. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the binary exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use polyexp::decompose::{joint_eigenvectors, multiplication_matrices, numerical_rank, recover_weights};
use polyexp::experiment::{run_experiment, ExperimentSpec, PointParams, SweepPoint, SweepVar};
use polyexp::linalg::svd;
use polyexp::metrics::min_cost_assignment;
use polyexp::newton::{gradient_and_jacobian, NewtonState};
use polyexp::{
    build_hankel, build_shifted_hankel, decompose, generate_moments, hankel_on, match_and_score, perturb,
    sample_instance, Complex64, DecomposeOptions, InstanceSpec, MomentSequence, MultiIndex, PerturbationSpec,
    PolyExpModel, RescaleMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    id: &'static str,
    ok: bool,
    detail: String,
}

fn verdict(id: &'static str, ok: bool, detail: String) -> Verdict {
    println!("{} [{id}] {detail}", if ok { "PASS" } else { "FAIL" });
    Verdict { id, ok, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn hankel_cols(n: usize, d: usize) -> usize {
    let (_, d2) = polyexp::degree_split(d).unwrap();
    polyexp::enumerate_monomials(n, d2).len()
}

fn exact_recovery() -> Verdict {
    // (n, r) pairs the d = 8 Hankel matrix can resolve; n = 1 has 4 columns
    let pairs: Vec<(usize, usize)> = (1..=3)
        .flat_map(|n| (1..=5).map(move |r| (n, r)))
        .filter(|&(n, r)| r <= hankel_cols(n, 8))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut good = 0;
    let mut slowest = Duration::ZERO;
    for seed in 0..100u64 {
        let (n, r) = pairs[rng.random_range(0..pairs.len())];
        let truth = sample_instance(&InstanceSpec { n, r, d: 8, amplitude: 1.0, seed }).unwrap();
        let seq = generate_moments(&truth, 8);
        let start = Instant::now();
        let res = decompose(&seq, &DecomposeOptions { seed, ..Default::default() });
        slowest = slowest.max(start.elapsed());
        if let Ok(res) = res {
            if res.rank == r && match_and_score(&truth, &res.model).unwrap().err < 1e-8 {
                good += 1;
            }
        }
    }
    verdict(
        "1",
        good >= 95 && slowest < Duration::from_secs(1),
        format!("exact recovery: {good}/100 with err < 1e-8 (need 95), slowest {slowest:?} (limit 1s)"),
    )
}

fn hankel_fixture() -> Verdict {
    let vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
    let mut it = vals.iter();
    let seq = MomentSequence::from_fn(2, 3, |_| Complex64::new(*it.next().unwrap(), 0.0));
    let idx = |v: &[[u32; 2]]| v.iter().map(|e| MultiIndex::new(e.to_vec())).collect::<Vec<_>>();
    let h = hankel_on(&seq, &idx(&[[0, 0], [1, 0], [0, 1]]), &idx(&[[0, 0], [1, 0], [0, 1], [2, 0]])).unwrap();
    let expect = [[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 5.0, 7.0], [3.0, 5.0, 6.0, 8.0]];
    let ok = h.shape() == (3, 4)
        && expect
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| h[(i, j)] == Complex64::new(v, 0.0)));
    verdict("2", ok, format!("hankel fixture: bit-exact 3x4 assembly {}", if ok { "matches" } else { "differs" }))
}

fn sweep_spec(sweep: SweepVar, values: Vec<f64>, fixed: PointParams) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(sweep, values, fixed);
    spec.trials = 10;
    spec.base_seed = 1;
    spec
}

fn noise_tracking() -> Verdict {
    let start = Instant::now();
    let fixed = PointParams { n: 3, d: 10, r: 5, amplitude: 1.0, e: 0.0 };
    let mut spec = sweep_spec(SweepVar::E, vec![2.0, 4.0, 6.0, 8.0, 10.0], fixed);
    // above the rank threshold the numerical rank tracks the noise, not r
    spec.oracle_rank = true;
    let points = run_experiment(&spec).unwrap();
    let xs: Vec<f64> = points.iter().map(|p| -p.value).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_err().log10()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let drop = ys[0] - ys[4];
    let elapsed = start.elapsed();
    let ok = (0.6..=1.4).contains(&slope) && drop >= 4.0 && elapsed < Duration::from_secs(300) && ys.iter().all(|y| y.is_finite());
    verdict(
        "3",
        ok,
        format!(
            "noise tracking: slope {slope:.3} (need [0.6, 1.4]), drop e=2..10 {drop:.2} decades (need 4), mean err {:?}, {elapsed:?}",
            points.iter().map(|p| format!("{:.2e}", p.mean_err())).collect::<Vec<_>>()
        ),
    )
}

fn rescaling_efficacy() -> Verdict {
    let fixed = PointParams { n: 3, d: 10, r: 5, amplitude: 1.0, e: 6.0 };
    let mut auto = sweep_spec(SweepVar::M, vec![1e2, 1e4, 1e6], fixed);
    auto.pipeline.rescale = RescaleMode::Auto;
    let auto_pts = run_experiment(&auto).unwrap();
    let mut off = sweep_spec(SweepVar::M, vec![1e4], fixed);
    off.pipeline.rescale = RescaleMode::Off;
    let off_pts = run_experiment(&off).unwrap();

    let auto_ok = auto_pts.iter().all(|p| p.failures() <= 2 && p.mean_rel_err() <= 1e-2);
    let auto_1e4 = &auto_pts[1];
    let off_ok = off_pts[0].failures() > auto_1e4.failures();
    let summary = |p: &SweepPoint| format!("M={:e}: failures {}, rel_err {:.2e}", p.value, p.failures(), p.mean_rel_err());
    println!("     auto: {}", auto_pts.iter().map(summary).collect::<Vec<_>>().join("; "));
    println!("     off:  {}", summary(&off_pts[0]));
    verdict(
        "4",
        auto_ok && off_ok,
        format!(
            "rescaling efficacy: auto within limits {auto_ok}; off failures at M=1e4 {} vs auto {} (need strictly more) {off_ok}",
            off_pts[0].failures(),
            auto_1e4.failures()
        ),
    )
}

fn newton_efficacy() -> Verdict {
    let fixed = PointParams { n: 3, d: 10, r: 5, amplitude: 1.0, e: 4.0 };
    let mut spec = sweep_spec(SweepVar::E, vec![4.0], fixed);
    spec.oracle_rank = true;
    spec.pipeline.newton.max_iters = 5;
    let point = run_experiment(&spec).unwrap().remove(0);
    let before: Vec<f64> = point.successes().map(|t| t.err).collect();
    let after: Vec<f64> = point.successes().filter_map(|t| t.err_after_newton).collect();
    let ok_runs = before.len() == 10 && after.len() == 10;
    let (mb, ma) = (median(before), median(after));
    let factor = mb / ma;
    verdict(
        "5",
        ok_runs && factor >= 10.0,
        format!("newton efficacy: median err {mb:.3e} -> {ma:.3e}, factor {factor:.2} (need 10)"),
    )
}

/// `E` summed directly from the model definition.
fn misfit(params: &[Complex64], n: usize, seq: &MomentSequence) -> f64 {
    seq.monomials()
        .iter()
        .zip(seq.values())
        .map(|(alpha, &sigma)| {
            let mut model = Complex64::new(0.0, 0.0);
            for c in params.chunks(n + 1) {
                let mut term = c[0];
                for (x, &a) in c[1..].iter().zip(alpha.entries()) {
                    for _ in 0..a {
                        term *= x;
                    }
                }
                model += term;
            }
            0.5 * (model - sigma).norm_sqr()
        })
        .sum()
}

fn gradient_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-6;
    let mut worst_rel: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for k in 0..50u64 {
        let n = rng.random_range(1..=3);
        let r = rng.random_range(1..=5);
        let d = if n == 1 { 12 } else { 6 };
        let truth = sample_instance(&InstanceSpec { n, r, d, amplitude: 1.0, seed: k }).unwrap();
        let seq = perturb(&generate_moments(&truth, d), &PerturbationSpec::from_exponent(3.0, k)).unwrap();
        let fit = seq.monomials().indices().to_vec();
        let guess = truth.map_terms(|t| polyexp::Term {
            weight: t.weight + Complex64::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
            freq: t
                .freq
                .iter()
                .map(|x| x + Complex64::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
                .collect(),
        });
        let (g, jac) = gradient_and_jacobian(&guess, &seq, &fit).unwrap();
        let x = NewtonState::from_model(&guess).to_real();
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let ep = misfit(&NewtonState::from_real(n, &xp).params, n, &seq);
            let em = misfit(&NewtonState::from_real(n, &xm).params, n, &seq);
            let fd = (ep - em) / (2.0 * h);
            worst_rel = worst_rel.max((g[i] - fd).abs() / g[i].abs());
        }
        worst_sym = worst_sym.max((&jac - jac.transpose()).norm() / jac.norm());
    }
    verdict(
        "6",
        worst_rel <= 1e-5 && worst_sym <= 1e-10,
        format!("gradient correctness: worst component relative error {worst_rel:.2e} (limit 1e-5), Hessian asymmetry {worst_sym:.2e} (limit 1e-10)"),
    )
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn oracle_suites() -> Verdict {
    let mut worst_comm: f64 = 0.0;
    let mut worst_weight: f64 = 0.0;
    let mut kronecker_misses = Vec::new();
    for n in 1..=3 {
        for r in 1..=5 {
            for seed in 0..5u64 {
                let truth = sample_instance(&InstanceSpec { n, r, d: 10, amplitude: 1.0, seed }).unwrap();
                let seq = generate_moments(&truth, 10);
                let (d1, d2) = polyexp::degree_split(10).unwrap();
                let h = build_hankel(&seq, d1, d2).unwrap();
                let dec = svd(&h.entries).unwrap();
                let rank = numerical_rank(&dec.s, 1e-6).unwrap();
                if rank != r {
                    kronecker_misses.push((n, r, seed, rank));
                    continue;
                }
                let shifted: Vec<_> = (0..n).map(|i| build_shifted_hankel(&seq, d1, d2, i).unwrap()).collect();
                let ms = multiplication_matrices(&shifted, &dec, r).unwrap();
                worst_comm = worst_comm.max(polyexp::decompose::max_commutator(&ms));
                let je = joint_eigenvectors(&ms, seed).unwrap();
                let vr = dec.right(r);
                let base = recover_weights(&h, &vr, &je.vectors, &je.freqs).unwrap();
                for c in [Complex64::new(-2.5, 0.75), Complex64::new(1e-5, 0.0), Complex64::new(0.0, 3e4)] {
                    let scaled = recover_weights(&h, &vr, &(&je.vectors * c), &je.freqs).unwrap();
                    for (a, b) in base.iter().zip(&scaled) {
                        worst_weight = worst_weight.max((a - b).norm() / a.norm());
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut assignment_ok = true;
    for r in 1..=6 {
        let perms = permutations(r);
        for _ in 0..20 {
            let a: Vec<Complex64> = (0..r).map(|_| Complex64::new(rng.random(), rng.random())).collect();
            let b: Vec<Complex64> = (0..r).map(|_| Complex64::new(rng.random(), rng.random())).collect();
            let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (x - y).norm()).collect()).collect();
            let got: f64 = min_cost_assignment(&cost).iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assignment_ok &= (got - best).abs() <= 1e-12 * best.max(1.0);
        }
    }
    // matching is also exercised through full models
    let m = sample_instance(&InstanceSpec { n: 2, r: 6, d: 1, amplitude: 1.0, seed: 3 }).unwrap();
    let mut terms = m.terms().to_vec();
    terms.rotate_left(2);
    assignment_ok &= match_and_score(&m, &PolyExpModel::new(2, terms).unwrap()).unwrap().err == 0.0;

    let ok = worst_comm <= 1e-8 && worst_weight <= 1e-10 && assignment_ok && kronecker_misses.is_empty();
    verdict(
        "7",
        ok,
        format!(
            "oracle suites: commutator {worst_comm:.2e} (limit 1e-8), weight scale drift {worst_weight:.2e}, assignment optimal {assignment_ok}, rank misses {kronecker_misses:?}"
        ),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags; a name filter other than ours skips the suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let verdicts = [
        exact_recovery(),
        hankel_fixture(),
        noise_tracking(),
        rescaling_efficacy(),
        newton_efficacy(),
        gradient_correctness(),
        oracle_suites(),
    ];
    let failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.ok).collect();
    println!("acceptance: {} of {} criteria pass", verdicts.len() - failed.len(), verdicts.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for v in &failed {
            println!("failed [{}]: {}", v.id, v.detail);
        }
        ExitCode::FAILURE
    }
}
