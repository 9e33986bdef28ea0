//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and fails
//! if any criterion fails.

use dgsiac::bspline::{kernel_coefficients, SiacKernel, TensorKernel};
use dgsiac::estimators::{estimate, EstimatorReport};
use dgsiac::filter::SiacFilter;
use dgsiac::harness::{csv_header, write_csv, TableRow};
use dgsiac::mesh::{l2_project, CartesianMesh, TensorBasis};
use dgsiac::poly::GaussRule;
use dgsiac::problems::{problem_by_id, DiffusivePSystem, ProblemDefinition, ViscousBurgers, PROBLEM_IDS};
use dgsiac::reconstruction::{DerivativeRequest, SpaceTimeReconstruction};
use dgsiac::residual::{point_state, PipelineOptions, PointState, ResidualEvaluator};
use dgsiac::temporal::build_temporal;
use dgsiac::time::{run_trajectory, TrajectoryConfig};
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;
use std::time::Instant;

type Key = (&'static str, usize, String, usize);

#[derive(Default)]
struct Runs {
    done: BTreeMap<Key, EstimatorReport>,
}

impl Runs {
    fn get(&mut self, id: &'static str, q: usize, eps: f64, n: usize) -> &EstimatorReport {
        let key = (id, q, format!("{eps:e}"), n);
        self.done.entry(key).or_insert_with(|| {
            let start = Instant::now();
            let p = problem_by_id(id, eps).unwrap();
            let (rep, _) = estimate(p.as_ref(), &TrajectoryConfig::new(q, n), &PipelineOptions::default())
                .unwrap_or_else(|e| panic!("{id} q={q} eps={eps} N={n}: {e}"));
            eprintln!("  ran {id} q={q} eps={eps:e} N={n} in {:.1}s", start.elapsed().as_secs_f64());
            rep
        })
    }
}

struct Outcome {
    ok: bool,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            ok: true,
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, note: String) {
        if !ok {
            self.ok = false;
            self.notes.push(format!("FAILED {note}"));
        } else {
            self.notes.push(note);
        }
    }

    /// `|got - want| <= tol * |want|`
    fn rel(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        let r = (got - want).abs() / want.abs();
        self.check(r <= tol, format!("{what} {got:.4e} vs {want:.4e} ({:+.1}%)", 100.0 * (got - want) / want));
    }

    fn eoc(&mut self, what: &str, coarse: f64, fine: f64, want: f64, tol: f64) {
        let e = (coarse / fine).log2();
        self.check((e - want).abs() <= tol, format!("EoC {what} {e:.3} vs {want:.3}"));
    }
}

fn table_pair(
    runs: &mut Runs,
    out: &mut Outcome,
    id: &'static str,
    q: usize,
    eps: f64,
    what: &str,
    pick: fn(&EstimatorReport) -> f64,
    want: [f64; 2],
    tol: f64,
) -> [f64; 2] {
    let a = pick(runs.get(id, q, eps, 16));
    let b = pick(runs.get(id, q, eps, 32));
    out.rel(&format!("{what} N=16"), a, want[0], tol);
    out.rel(&format!("{what} N=32"), b, want[1], tol);
    [a, b]
}

fn criterion_1(runs: &mut Runs) -> Outcome {
    let mut o = Outcome::new();
    let cols: [(&str, fn(&EstimatorReport) -> f64, [f64; 2], f64); 3] = [
        ("L2L2", |r| r.norms.err_l2l2_temporal, [6.834e-03, 1.670e-03], 2.033),
        ("LinfL2", |r| r.norms.err_linf_l2, [4.118e-03, 5.076e-04], 3.020),
        ("r1", |r| r.norms.r1_l1l2, [4.231e-03, 5.387e-04], 2.973),
    ];
    for (name, pick, want, eoc) in cols {
        let [a, b] = table_pair(runs, &mut o, "linadv", 1, 0.0, name, pick, want, 0.05);
        o.eoc(name, a, b, eoc, 0.15);
    }
    o
}

fn criterion_2(runs: &mut Runs) -> Outcome {
    let mut o = Outcome::new();
    table_pair(runs, &mut o, "linadv", 1, 1e-2, "H1", |r| r.norms.err_l2h1.unwrap(), [1.928e-02, 4.004e-03], 0.10);
    let [a, b] = table_pair(runs, &mut o, "linadv", 1, 1e-2, "E_r2", |r| r.norms.e_r2.unwrap(), [1.280e-03, 1.439e-04], 0.10);
    o.eoc("E_r2", a, b, 3.153, 0.2);
    o
}

fn criterion_3(runs: &mut Runs) -> Outcome {
    let mut o = Outcome::new();
    let [a, b] = table_pair(runs, &mut o, "burgers", 1, 1e-4, "r1", |r| r.norms.r1_l1l2, [2.368e-04, 2.853e-05], 0.10);
    o.eoc("r1", a, b, 3.053, 0.2);
    o
}

fn criterion_4(runs: &mut Runs) -> Outcome {
    let mut o = Outcome::new();
    let [a, b] = table_pair(runs, &mut o, "psystem", 1, 0.0, "LinfL2", |r| r.norms.err_linf_l2, [1.307e-04, 1.247e-05], 0.10);
    o.eoc("LinfL2", a, b, 3.389, 0.3);
    o
}

fn criterion_5(runs: &mut Runs) -> Outcome {
    let mut o = Outcome::new();
    let [a, b] = table_pair(runs, &mut o, "linadv", 2, 0.0, "r1", |r| r.norms.r1_l1l2, [6.933e-06, 2.185e-07], 0.15);
    o.eoc("r1", a, b, 4.988, 0.3);
    o
}

/// `(K_h * x^p)(x)` by Gauss quadrature over the kernel pieces.
fn convolve_monomial(k: &SiacKernel, p: i32, x: f64) -> f64 {
    let pw = k.piecewise();
    let rule = GaussRule::new(12);
    let mut acc = 0.0;
    for w in pw.breakpoints.windows(2) {
        for (z, wt) in rule.nodes.iter().zip(&rule.weights) {
            let s = w[0] + (w[1] - w[0]) * z;
            acc += wt * (w[1] - w[0]) * k.eval(s) * (x - s).powi(p);
        }
    }
    acc
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = rand::rngs::StdRng::seed_from_u64(6);
    let c = kernel_coefficients(1).unwrap();
    let want = [-1.0 / 12.0, 7.0 / 6.0, -1.0 / 12.0];
    let dc = c.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    o.check(dc <= 1e-12, format!("q=1 coefficients off by {dc:.1e}"));
    for q in 1..=2 {
        let h = 0.1;
        let k = SiacKernel::scaled(q, h, None).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let x = rng.gen_range(-1.0..1.0);
            for p in 0..=(2 * q as i32) {
                let got = convolve_monomial(&k, p, x);
                worst = worst.max((got - x.powi(p)).abs() / (1.0 + x.abs().powi(p)));
            }
        }
        o.check(worst <= 1e-10, format!("q={q} reproduction error {worst:.1e}"));
        let (lo, hi) = k.piecewise().support();
        let half = (3 * q + 1) as f64 * h / 2.0;
        o.check(
            (lo + half).abs() < 1e-12 && (hi - half).abs() < 1e-12,
            format!("q={q} support [{lo:.4}, {hi:.4}]"),
        );
        for r in [q + 1, q + 2] {
            let k = SiacKernel::scaled(q, h, Some(r)).unwrap();
            let pw = k.piecewise();
            let mut jump = 0.0f64;
            for b in 1..pw.breakpoints.len() - 1 {
                for d in 0..=(r - 2) {
                    let (l, rr) = pw.one_sided(b, d);
                    jump = jump.max((l - rr).abs() * h.powi(d as i32 + 1));
                }
            }
            o.check(jump <= 1e-10, format!("q={q} r={r} C^{} jump {jump:.1e}", r - 2));
            let sym = (0..20)
                .map(|i| {
                    let x = -hi + 2.0 * hi * i as f64 / 19.0;
                    (k.eval(x) - k.eval(-x)).abs()
                })
                .fold(0.0, f64::max);
            o.check(sym <= 1e-12, format!("q={q} r={r} symmetry {sym:.1e}"));
        }
    }
    o
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    let problem = ViscousBurgers::new(1e-3);
    let mut cfg = TrajectoryConfig::new(1, 4);
    cfg.t_final = Some(0.0173);
    let rec = run_trajectory(&problem, &cfg).unwrap();
    for p in 0..=1 {
        let r = build_temporal(&rec, p).unwrap();
        let res = r.interpolation_residual().unwrap();
        o.check(res <= 1e-11, format!("Hermite p={p} interpolation residual {res:.1e}"));
    }
    let mesh = CartesianMesh::new(2, 4).unwrap();
    for q in 1..=2 {
        let f = l2_project(mesh, TensorBasis::new(2, q), 1, q + 3, |x, out| {
            out[0] = (x[0] * 9.0).cos() + (x[1] * 5.0).sin() * x[0]
        })
        .unwrap();
        let bound = 2 * q + 1;
        let kern = TensorKernel::main(q, mesh.h(), 2).unwrap();
        let ff = SiacFilter::with_degree(mesh, q, &kern, bound + 2).unwrap().apply(&f).unwrap();
        let d = ff.degree() + 1;
        let scale = ff.coeffs().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tail = ff
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let mode = k % (d * d);
                mode % d > bound || mode / d > bound
            })
            .fold(0.0f64, |a, (_, v)| a.max(v.abs()));
        o.check(tail <= 1e-12 * scale, format!("q={q} degree tail {:.1e}", tail / scale));
        let mean = (ff.integral()[0] - f.integral()[0]).abs();
        o.check(mean <= 1e-12, format!("q={q} mean change {mean:.1e}"));
    }
    let st = SpaceTimeReconstruction::from_record(&rec, 0, false).unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let tf = *st.times().last().unwrap();
    let (dx, mut worst, mut checked) = (1e-5, 0.0f64, 0);
    while checked < 20 {
        let t = tf * rng.gen_range(0.05..0.95);
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        if x.iter().any(|v| !(0.01..0.99).contains(&(v * 8.0).fract())) {
            continue;
        }
        checked += 1;
        let g = st.eval(t, &x, DerivativeRequest { time: false, space_order: 1 }).unwrap().grad.unwrap();
        let v = |p: [f64; 2]| st.eval(t, &p, DerivativeRequest::default()).unwrap().u[0];
        for a in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[a] += dx;
            xm[a] -= dx;
            let fd = (v(xp) - v(xm)) / (2.0 * dx);
            worst = worst.max((fd - g[a]).abs() / (1.0 + g[a].abs()));
        }
    }
    o.check(worst <= 1e-7, format!("gradient vs finite differences {worst:.1e}"));
    o
}

fn criterion_8() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = rand::rngs::StdRng::seed_from_u64(8);
    let problems: [Box<dyn ProblemDefinition>; 2] = [Box::new(DiffusivePSystem::new(0.05)), Box::new(ViscousBurgers::new(0.02))];
    for problem in problems {
        let mut cfg = TrajectoryConfig::new(1, 4);
        cfg.t_final = Some(0.004);
        let rec = run_trajectory(problem.as_ref(), &cfg).unwrap();
        let st = SpaceTimeReconstruction::from_record(&rec, 0, true).unwrap();
        let ev = ResidualEvaluator::new(problem.as_ref()).unwrap();
        let m = problem.n_components();
        let eps = problem.eps();
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let t = 0.004 * rng.gen::<f64>();
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let ps = point_state(&st, t, &x).unwrap();
            let mut s = vec![0.0; m];
            problem.source(t, &x, &mut s);
            let (mut r, mut r1, mut r2) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
            ev.full_residual(&ps, &s, &mut r);
            ev.r1(&ps, &s, &mut r1);
            ev.gap_divergence(&ps, &mut r2);
            for c in 0..m {
                worst = worst.max((r[c] - r1[c] - eps * r2[c]).abs() / (1.0 + r[c].abs()));
            }
        }
        o.check(worst <= 1e-9, format!("{} identity {worst:.1e}", problem.id()));
    }
    for id in PROBLEM_IDS {
        let p = problem_by_id(id, 1e-2).unwrap();
        let ev = ResidualEvaluator::new(p.as_ref()).unwrap();
        let m = p.n_components();
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let t = p.final_time() * rng.gen::<f64>();
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let st = PointState::from_exact(&p.exact(t, &x));
            let mut s = vec![0.0; m];
            p.source(t, &x, &mut s);
            let (mut r1, mut r, mut g) = (vec![0.0; m], vec![0.0; m], vec![0.0; 2 * m]);
            ev.r1(&st, &s, &mut r1);
            ev.full_residual(&st, &s, &mut r);
            ev.flux_gap(&st, &mut g);
            worst = r1.iter().chain(&r).chain(&g).fold(worst, |a, v| a.max(v.abs()));
        }
        o.check(worst <= 1e-9, format!("{id} annihilation {worst:.1e}"));
    }
    o
}

fn criterion_9(runs: &Runs) -> Outcome {
    let mut o = Outcome::new();
    for ((id, q, eps, n), rep) in &runs.done {
        o.check(
            rep.ratio.is_finite() && rep.ratio >= 1.0 && rep.constants.box_violation.is_none(),
            format!("{id} q={q} eps={eps} N={n} bound/lhs {:.3e}", rep.ratio),
        );
    }
    o
}

fn criterion_10(runs: &mut Runs) -> Outcome {
    let mut o = Outcome::new();
    let dir = tempfile::tempdir().unwrap();
    for eps in [0.0, 1e-4, 1e-3] {
        let rep = runs.get("burgers", 1, eps, 16).clone();
        let nm = &rep.norms;
        let mut finite = vec![rep.bound, rep.lhs, rep.ratio, rep.constants.lambda, nm.r1_l1l2, nm.err_linf_l2];
        finite.extend(nm.err_l2h1);
        finite.extend(nm.e_r2);
        o.check(finite.iter().all(|v| v.is_finite()), format!("eps={eps:e} components finite"));
        let present = nm.err_l2h1.is_some() && nm.e_r2.is_some();
        o.check(present == (eps > 0.0), format!("eps={eps:e} diffusion columns present: {present}"));
        let row: TableRow = serde_json::from_value(serde_json::json!({
            "eps": eps, "n": 16,
            "values": [nm.err_l2h1, nm.err_linf_l2, nm.r1_l1l2, nm.err_l2h1, nm.e_r2],
            "eocs": [null, null, null, null, null],
            "indicator": null, "bound": null, "lhs": null, "ratio": null, "error": null
        }))
        .unwrap();
        let path = dir.path().join("row.csv");
        write_csv(&path, &[row]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cells: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        let h = csv_header();
        let dashes = ["err_L2H1", "E_r2"]
            .iter()
            .all(|c| cells[h.iter().position(|x| x == c).unwrap()] == "--");
        o.check(dashes == (eps == 0.0), format!("eps={eps:e} '--' rendering: {dashes}"));
    }
    o
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let mut runs = Runs::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "linadv q=1 eps=0 table values and EoCs", criterion_1(&mut runs)));
    results.push((2, "linadv q=1 eps=1e-2 diffusive columns", criterion_2(&mut runs)));
    results.push((3, "burgers q=1 eps=1e-4 r1", criterion_3(&mut runs)));
    results.push((4, "psystem q=1 eps=0 LinfL2", criterion_4(&mut runs)));
    results.push((5, "linadv q=2 eps=0 r1", criterion_5(&mut runs)));
    results.push((6, "kernel properties", criterion_6()));
    results.push((7, "reconstruction properties", criterion_7()));
    results.push((8, "residual identity and annihilation", criterion_8()));
    results.push((9, "reliability of the assembled bounds", criterion_9(&runs)));
    results.push((10, "eps -> 0 robustness", criterion_10(&mut runs)));
    let mut failed = 0;
    for (k, name, o) in &results {
        println!("criterion {k:>2} {}: {name}", if o.ok { "PASS" } else { "FAIL" });
        for n in &o.notes {
            println!("    {n}");
        }
        failed += usize::from(!o.ok);
    }
    println!("acceptance finished in {:.0}s", start.elapsed().as_secs_f64());
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
