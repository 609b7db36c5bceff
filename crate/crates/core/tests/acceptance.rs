//! Acceptance suite. One sequential test prints a PASS/FAIL line per
//! criterion and fails at the end if any criterion failed.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use pmsm_iga::adjoint::{DesignSpace, ThdProblem};
use pmsm_iga::assembly::{assemble_source, assemble_stiffness, l2_error};
use pmsm_iga::commands::{cmd_solve, cmd_sweep};
use pmsm_iga::config::{MachineConfig, OptimizerConfig, RunConfig};
use pmsm_iga::coupling::{solve_full, CoupledProblem, CouplingPrecomp};
use pmsm_iga::fourier::{default_index_set, dft, emf_spectrum, thd};
use pmsm_iga::geometry::{
    build_dof_map, check_mesh_validity, Edge, EdgeRef, MultipatchModel, RegionTag, Side,
};
use pmsm_iga::linalg::{factorize, norm2};
use pmsm_iga::optimizer::{run_optimization, Termination};
use pmsm_iga::spline::{eval_curve, nurbs_basis, KnotVector, NurbsPatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Demo-machine THD at refinement 0 with 60 angles, before and after
/// optimization with default settings, locked from the first verified run.
const LOCKED_THD_INITIAL: f64 = 0.3345113556173032;
const LOCKED_THD_FINAL: f64 = 0.1805357625719005;
const LOCK_REL_TOL: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = f();
    let dt = t0.elapsed();
    let in_time = dt <= limit;
    let pass = o.pass && in_time;
    println!(
        "{} {id}. {name}: {} [{:.2?} of {:?}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        dt,
        limit
    );
    pass
}

fn schur_vs_full() -> Outcome {
    let cfg = MachineConfig {
        n_harmonics: 12,
        ..Default::default()
    };
    let prob = CoupledProblem::from_config(&cfg).unwrap();
    let pre = CouplingPrecomp::new(&prob).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..8 {
        let alpha = j as f64 * 2.0 * PI / (cfg.pole_pairs as f64 * 8.0);
        let full = solve_full(&prob, alpha).unwrap();
        let schur = pre.solve_at_angle(alpha).unwrap();
        let uf: Vec<f64> = full.u_st.iter().chain(&full.u_rt).copied().collect();
        let d: Vec<f64> = schur
            .u_st
            .iter()
            .chain(&schur.u_rt)
            .zip(&uf)
            .map(|(a, b)| a - b)
            .collect();
        worst = worst.max(norm2(&d) / norm2(&uf));
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("max relative difference {worst:e} over 8 angles (< 1e-10)"),
    }
}

fn gradient_fd() -> Outcome {
    let cfg = MachineConfig {
        n_angles: 12,
        ..Default::default()
    };
    let tp = ThdProblem::new(&cfg).unwrap();
    let model = tp.rotor_model().clone();
    let dm = tp.rotor_dofmap();
    let design = DesignSpace::new(&model, dm, false).unwrap();
    let ev = tp.evaluate(&model, true).unwrap();
    let g = tp.gradient(&ev, &design).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let m = rng.gen_range(0..design.len());
        let mut w = vec![0.0; design.len()];
        w[m] = 1.0;
        let mut best = f64::INFINITY;
        for e in 4..=8 {
            let h = 10f64.powi(-e) * cfg.interface_radius;
            let jp = tp
                .objective(&dm.displace(&model, &design.displacement(&w, h)))
                .unwrap();
            let jm = tp
                .objective(&dm.displace(&model, &design.displacement(&w, -h)))
                .unwrap();
            let fd = (jp - jm) / (2.0 * h);
            best = best.min((fd - g[m]).abs() / g[m].abs());
        }
        worst = worst.max(best);
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("worst best-step relative error {worst:e} over 5 directions (< 1e-4)"),
    }
}

fn convergence_rate() -> Outcome {
    let exact = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let f = |x: [f64; 2]| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin();
    let mut errs = Vec::new();
    for ne in [8, 16, 32] {
        let kv = KnotVector::uniform(2, 1).unwrap();
        // Square with non-unit weights in the interior so the basis is rational.
        let pts: Vec<[f64; 2]> = (0..9)
            .map(|k| [(k % 3) as f64 / 2.0, (k / 3) as f64 / 2.0])
            .collect();
        let mut w = vec![1.0; 9];
        w[4] = 0.8;
        let base = NurbsPatch::new(kv.clone(), kv, pts, w).unwrap();
        let ins: Vec<f64> = (1..ne).map(|i| i as f64 / ne as f64).collect();
        let patch = base.insert_knots(&ins, &ins).unwrap();
        let model = MultipatchModel {
            side: Side::Rotor,
            patches: vec![patch],
            tags: vec![RegionTag::RotorIron],
            magnetization: vec![None],
            interface_radius: 1.0,
            interface_edges: vec![],
            dirichlet_edges: [Edge::UMin, Edge::UMax, Edge::VMin, Edge::VMax]
                .into_iter()
                .map(|e| EdgeRef::new(0, e))
                .collect(),
            connectivity: vec![],
        };
        let dm = build_dof_map(&model).unwrap();
        let k = assemble_stiffness(&model, &dm, &[1.0]).unwrap();
        let b = assemble_source(&model, &dm, &f).unwrap();
        let u = factorize(&k).unwrap().solve(&b).unwrap();
        errs.push(l2_error(&model, &dm, &dm.expand(&u), &exact, 6).unwrap());
    }
    let rates: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Outcome {
        pass: rates.iter().all(|r| (r - 3.0).abs() <= 0.2),
        detail: format!(
            "L2 errors {:.3e} {:.3e} {:.3e}, rates {rates:.3?} (3.0 +- 0.2)",
            errs[0], errs[1], errs[2]
        ),
    }
}

fn online_cost_scaling() -> Outcome {
    const BATCH: u32 = 50;
    let pres: Vec<(CoupledProblem, CouplingPrecomp)> = (0..3)
        .map(|level| {
            let cfg = MachineConfig {
                refinement: level,
                n_harmonics: 20,
                ..Default::default()
            };
            let prob = CoupledProblem::from_config(&cfg).unwrap();
            let pre = CouplingPrecomp::new(&prob).unwrap();
            (prob, pre)
        })
        .collect();
    let mut interface = vec![Vec::new(); 3];
    let mut full = vec![Vec::new(); 3];
    // Round-robin over levels so drift affects all levels alike.
    for rep in 0..7 {
        let alpha = 0.1 + 0.01 * rep as f64;
        for (l, (prob, pre)) in pres.iter().enumerate() {
            let t0 = Instant::now();
            for _ in 0..BATCH {
                std::hint::black_box(pre.solve_interface(alpha).unwrap());
            }
            interface[l].push(t0.elapsed() / BATCH);
            let t0 = Instant::now();
            std::hint::black_box(solve_full(prob, alpha).unwrap());
            full[l].push(t0.elapsed());
        }
    }
    let med = |mut v: Vec<Duration>| {
        v.sort_unstable();
        v[v.len() / 2].as_secs_f64()
    };
    let ti: Vec<f64> = interface.into_iter().map(med).collect();
    let tf: Vec<f64> = full.into_iter().map(med).collect();
    let dofs: Vec<usize> = pres.iter().map(|(p, _)| p.total_dofs()).collect();
    let ratio =
        ti.iter().cloned().fold(0.0, f64::max) / ti.iter().cloned().fold(f64::INFINITY, f64::min);
    let increasing = tf.windows(2).all(|w| w[1] > w[0]);
    Outcome {
        pass: ratio < 2.0 && increasing,
        detail: format!(
            "dofs {dofs:?}: interface {:.1?} us (max/min {ratio:.2} < 2), full {:.2?} ms (strictly increasing: {increasing})",
            ti.iter().map(|t| t * 1e6).collect::<Vec<_>>(),
            tf.iter().map(|t| t * 1e3).collect::<Vec<_>>()
        ),
    }
}

fn fourier_units() -> Outcome {
    let n = 64;
    let t: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
    let pure: Vec<f64> = t.iter().map(|x| (x - 0.7).sin()).collect();
    let thd_pure = thd(&emf_spectrum(&pure).unwrap(), &default_index_set(n)).unwrap();
    // EMF = cos t + 0.1 sin 5t.
    let two: Vec<f64> = t.iter().map(|x| x.sin() - 0.02 * (5.0 * x).cos()).collect();
    let thd_two = thd(&emf_spectrum(&two).unwrap(), &[1, 5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c = dft(&s);
    let parseval = (s.iter().map(|v| v * v).sum::<f64>() / n as f64
        - c.iter().map(|z| z.norm_sqr()).sum::<f64>())
    .abs();
    let e = emf_spectrum(&s).unwrap();
    let mag = (0..e.len())
        .map(|k| (e.magnitude(k) - (k as f64 * c[k]).norm()).abs())
        .fold(0.0, f64::max);
    let pass =
        thd_pure <= 1e-14 && (thd_two - 0.1).abs() <= 1e-12 && parseval <= 1e-12 && mag <= 1e-12;
    Outcome {
        pass,
        detail: format!(
            "pure THD {thd_pure:e}, two-harmonic |THD-0.1| {:e}, Parseval {parseval:e}, |c_n| {mag:e}",
            (thd_two - 0.1).abs()
        ),
    }
}

fn optimization_behavior() -> Outcome {
    let cfg = MachineConfig {
        n_angles: 60,
        ..Default::default()
    };
    let tp = ThdProblem::new(&cfg).unwrap();
    let initial = tp.rotor_model().clone();
    let dm = tp.rotor_dofmap().clone();
    let mut models = Vec::new();
    let res = run_optimization(&tp, &OptimizerConfig::default(), |_, m| {
        models.push(m.clone());
        Ok(())
    })
    .unwrap();
    let thds: Vec<f64> = res.history.iter().map(|r| r.thd).collect();
    let decreasing = thds.windows(2).all(|w| w[1] < w[0]);
    let valid = models.iter().all(|m| check_mesh_validity(m, res.eps_j).0)
        && res.history.iter().skip(1).all(|r| r.min_det > res.eps_j);
    let p0 = dm.global_points(&initial);
    let fixed = models.iter().all(|m| {
        let p = dm.global_points(m);
        let magnets = (0..initial.patches.len())
            .filter(|&k| initial.magnetization[k].is_some())
            .all(|k| m.patches[k].control_points == initial.patches[k].control_points);
        magnets && dm.interface_globals.iter().all(|&g| p[g] == p0[g])
    });
    let terminated = matches!(
        res.termination,
        Termination::Tolerance | Termination::NoProgress
    ) && res.history.len() <= 101;
    let (first, last) = (thds[0], *thds.last().unwrap());
    let locked = (first - LOCKED_THD_INITIAL).abs() <= LOCK_REL_TOL * LOCKED_THD_INITIAL
        && (last - LOCKED_THD_FINAL).abs() <= LOCK_REL_TOL * LOCKED_THD_FINAL;
    Outcome {
        pass: decreasing && valid && fixed && terminated && locked,
        detail: format!(
            "THD {first:.6} -> {last:.6} ({:.1}% reduction) in {} iterations via {}; decreasing {decreasing}, valid {valid}, fixed {fixed}, locked {locked}",
            100.0 * (1.0 - last / first),
            thds.len() - 1,
            res.termination.as_str()
        ),
    }
}

fn spline_kernels() -> Outcome {
    let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 0.2, 0.5, 0.5, 0.8, 1.0, 1.0, 1.0], 2).unwrap();
    let w: Vec<f64> = (0..kv.dim()).map(|i| 0.6 + 0.1 * i as f64).collect();
    let mut pou: f64 = 0.0;
    let mut dfd: f64 = 0.0;
    for k in 0..=200 {
        let x = k as f64 / 200.0;
        let b = nurbs_basis(&kv, &w, x).unwrap();
        pou = pou.max((b.values.iter().sum::<f64>() - 1.0).abs());
        let h = 1e-6;
        if x > h && x < 1.0 - h {
            let bp = nurbs_basis(&kv, &w, x + h).unwrap();
            let bm = nurbs_basis(&kv, &w, x - h).unwrap();
            if bp.span == b.span && bm.span == b.span {
                for r in 0..b.values.len() {
                    let fd = (bp.values[r] - bm.values[r]) / (2.0 * h);
                    dfd = dfd.max((fd - b.derivs[r]).abs());
                }
            }
        }
    }
    // Quarter circle: three control points, middle weight 1/sqrt(2).
    let q = KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap();
    let qw = [1.0, 0.5f64.sqrt(), 1.0];
    let qp = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let radius = (0..=100)
        .map(|k| {
            let x = eval_curve(&q, &qw, &qp, k as f64 / 100.0).unwrap();
            (x[0].hypot(x[1]) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    // Knot insertion keeps the patch map.
    let cfg = MachineConfig::default();
    let (_, rotor) = pmsm_iga::geometry::build_demo_machine(&cfg).unwrap();
    let p = &rotor.patches[5];
    let refined = p.insert_knots(&[0.3, 0.3, 0.71], &[0.12, 0.5]).unwrap();
    let mut ins: f64 = 0.0;
    for i in 0..=20 {
        for j in 0..=20 {
            let (a, _) = p.eval(i as f64 / 20.0, j as f64 / 20.0).unwrap();
            let (b, _) = refined.eval(i as f64 / 20.0, j as f64 / 20.0).unwrap();
            ins = ins.max((a[0] - b[0]).abs().max((a[1] - b[1]).abs()) / cfg.stator_outer_radius);
        }
    }
    let pass = pou <= 1e-14 && dfd <= 1e-5 && ins <= 1e-12 && radius <= 1e-14;
    Outcome {
        pass,
        detail: format!("partition {pou:e}, derivative vs FD {dfd:e}, insertion {ins:e}, circle radius {radius:e}"),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output_dir: Some(dir.path().to_str().unwrap().to_string()),
        machine: MachineConfig {
            n_angles: 24,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let mut files = cmd_sweep(&cfg).unwrap().files;
        files.extend(cmd_solve(&cfg).unwrap().files);
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        outputs.push(bytes);
    }
    let same = outputs[0] == outputs[1];
    Outcome {
        pass: same,
        detail: format!(
            "{} output files byte-identical across runs: {same}",
            outputs[0].len()
        ),
    }
}

#[test]
fn acceptance() {
    let s = Duration::from_secs;
    let results = [
        report(1, "Schur/full oracle equivalence", s(30), schur_vs_full),
        report(2, "Gradient correctness", s(300), gradient_fd),
        report(3, "Convergence order", s(60), convergence_rate),
        report(4, "Online-cost scaling", s(300), online_cost_scaling),
        report(5, "Fourier/THD unit properties", s(1), fourier_units),
        report(6, "Optimization behavior", s(600), optimization_behavior),
        report(7, "Spline kernel suite", s(1), spline_kernels),
        report(8, "Determinism", s(300), determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    assert!(results.iter().all(|&p| p));
}
