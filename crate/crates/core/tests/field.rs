use num_complex::Complex64;
use pmsm_iga::assembly::eval_field;
use pmsm_iga::config::MachineConfig;
use pmsm_iga::coupling::{AngleSolution, CoupledProblem, CouplingPrecomp, SideData};
use pmsm_iga::geometry::{build_demo_machine, Magnetization};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn solved(alpha: f64) -> (CoupledProblem, AngleSolution) {
    let prob = CoupledProblem::from_config(&MachineConfig {
        n_angles: 12,
        ..Default::default()
    })
    .unwrap();
    let sol = CouplingPrecomp::new(&prob)
        .unwrap()
        .solve_at_angle(alpha)
        .unwrap();
    (prob, sol)
}

fn rotate(x: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// `(patch, u, grad u)` at a point in the side's own frame.
fn eval(side: &SideData, u: &[f64], x: [f64; 2]) -> Option<(usize, f64, [f64; 2])> {
    let (k, xi, eta) = side.model.locate(x)?;
    let (v, g) = eval_field(&side.model, &side.dofmap, u, k, xi, eta).unwrap();
    Some((k, v, g))
}

#[test]
fn induction_is_divergence_free_inside_patches() {
    let (prob, sol) = solved(0.13);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (side, u) in [(&prob.stator, &sol.u_st), (&prob.rotor, &sol.u_rt)] {
        let u = side.dofmap.expand(u);
        let r_max = side
            .model
            .patches
            .iter()
            .flat_map(|p| p.control_points.iter())
            .map(|c| c[0].hypot(c[1]))
            .fold(0.0, f64::max);
        let h = 1e-6 * r_max;
        let mut ratios = Vec::new();
        while ratios.len() < 400 {
            let x = [rng.gen_range(-r_max..r_max), rng.gen_range(-r_max..r_max)];
            let Some((k, _, _)) = eval(side, &u, x) else {
                continue;
            };
            let nb: Vec<_> = [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]]
                .iter()
                .map(|d| eval(side, &u, [x[0] + d[0], x[1] + d[1]]))
                .collect();
            if nb.iter().any(|p| p.map(|p| p.0) != Some(k)) {
                continue;
            }
            let b = |i: usize| {
                let g = nb[i].unwrap().2;
                [g[1], -g[0]]
            };
            let dbx = (b(0)[0] - b(1)[0]) / (2.0 * h);
            let dby = (b(2)[1] - b(3)[1]) / (2.0 * h);
            let scale = dbx.abs() + dby.abs();
            if scale > 0.0 {
                ratios.push((dbx + dby).abs() / scale);
            }
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios[ratios.len() / 2];
        let p95 = ratios[ratios.len() * 95 / 100];
        println!("{:?}: median {median:e}, p95 {p95:e}", side.model.side);
        assert!(median < 1e-7 && p95 < 1e-5, "median {median}, p95 {p95}");
    }
}

#[test]
fn coupled_harmonics_of_the_interface_jump_vanish() {
    let alpha = 0.4;
    let (prob, sol) = solved(alpha);
    let ust = prob.stator.dofmap.expand(&sol.u_st);
    let urt = prob.rotor.dofmap.expand(&sol.u_rt);
    let r = prob.rotor.model.interface_radius;
    // Trapezoid sampling of the C^1 traces converges like m^-2.
    let m = 8192;
    let mut jump = Vec::with_capacity(m);
    let mut trace = Vec::with_capacity(m);
    for i in 0..m {
        let t = 2.0 * PI * (i as f64 + 0.5) / m as f64;
        let (s, c) = t.sin_cos();
        let (_, us, _) = eval(
            &prob.stator,
            &ust,
            [r * (1.0 + 1e-12) * c, r * (1.0 + 1e-12) * s],
        )
        .unwrap();
        let xr = rotate([r * (1.0 - 1e-12) * c, r * (1.0 - 1e-12) * s], -alpha);
        let (_, ur, _) = eval(&prob.rotor, &urt, xr).unwrap();
        jump.push((t, us - ur));
        trace.push((t, us));
    }
    let coef = |f: &[(f64, f64)], l: i64| -> f64 {
        f.iter()
            .map(|&(t, v)| v * Complex64::from_polar(1.0, -(l as f64) * t))
            .sum::<Complex64>()
            .norm()
            / m as f64
    };
    let ref_mag = prob
        .orders
        .iter()
        .map(|&l| coef(&trace, l))
        .fold(0.0, f64::max);
    let worst = prob
        .orders
        .iter()
        .map(|&l| coef(&jump, l))
        .fold(0.0, f64::max);
    println!("largest coupled jump harmonic {worst:e}, largest trace harmonic {ref_mag:e}");
    assert!(ref_mag > 0.0);
    assert!(worst < 1e-6 * ref_mag, "{worst} vs {ref_mag}");
}

#[test]
fn uniformly_magnetized_rotor_gives_a_two_pole_gap_field() {
    let cfg = MachineConfig {
        n_angles: 12,
        ..Default::default()
    };
    let (stator, mut rotor) = build_demo_machine(&cfg).unwrap();
    for m in rotor.magnetization.iter_mut().flatten() {
        *m = Magnetization::Uniform { m: [8e5, 0.0] };
    }
    let prob = CoupledProblem::from_models(&cfg, stator, rotor).unwrap();
    let sol = CouplingPrecomp::new(&prob)
        .unwrap()
        .solve_at_angle(0.0)
        .unwrap();
    let ust = prob.stator.dofmap.expand(&sol.u_st);
    let urt = prob.rotor.dofmap.expand(&sol.u_rt);
    let r_gamma = prob.rotor.model.interface_radius;
    let gap = cfg.stator_inner_radius - cfg.magnet_radius;
    let mut corrs = Vec::new();
    for (side, u, r) in [
        (&prob.rotor, &urt, r_gamma - 0.25 * gap),
        (&prob.stator, &ust, r_gamma + 0.25 * gap),
    ] {
        let n = 360;
        let (mut dot, mut norm) = (0.0, 0.0);
        for i in 0..n {
            let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
            let (s, c) = t.sin_cos();
            let (_, _, g) = eval(side, u, [r * c, r * s]).unwrap();
            // B = (du/dy, -du/dx), radial component.
            let br = g[1] * c - g[0] * s;
            // Flux leaves the rotor on the +x side and enters the stator there.
            dot += br * c;
            norm += br * br;
        }
        let corr = dot / (norm * n as f64 / 2.0).sqrt();
        println!(
            "{:?}: correlation of B_r with cos(theta) {corr}",
            side.model.side
        );
        // The magnet arcs and inter-pole iron add higher orders, so only the
        // sign and rough agreement across the gap are pinned.
        assert!(corr > 0.5, "{corr}");
        corrs.push(corr);
    }
    assert!((corrs[0] - corrs[1]).abs() < 0.1, "{corrs:?}");
}
