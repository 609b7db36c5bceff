//! Harmonic stator-rotor coupling across the air-gap circle.
//!
//! The coupled system at rotor angle `alpha` is
//!
//! ```text
//! [ K_st    0      G_st R ] [u_st]   [j_st]
//! [ 0       K_rt   G_rt   ] [u_rt] = [j_rt]
//! [ R^H G_st^H  G_rt^H  0 ] [lam ]   [ 0  ]
//! ```
//!
//! with `R = diag(e^{i l_k alpha})`. The last row tests the jump of the
//! traces against every harmonic; the matrix is Hermitian, so the same
//! elimination serves forward and adjoint solves. Eliminating `u` gives the
//! small interface problem `K_int lam = f_int` with
//! `K_int = G_rt^H X_rt + R^H (G_st^H X_st) R`, `X = K^{-1} G`.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::assembly::{
    assemble_coupling, free_index, magnet_rhs_from_elements, model_elements, patch_reluctivity,
    stiffness_from_elements, winding_from_elements,
};
use crate::config::MachineConfig;
use crate::error::{Error, Result};
use crate::geometry::{build_demo_machine, build_dof_map, DofMap, ElementQuad, MultipatchModel};
use crate::linalg::{
    cnorm2, factorize, norm2, solve_multi, solve_multi_complex, ComplexDense, ComplexLu,
    SparseMatrix, SymmetricFactor,
};

type C = Complex64;

/// Diagonal of `R(alpha)`: `e^{i l_k alpha}`.
pub fn rotation_matrix(orders: &[i64], alpha: f64) -> Vec<C> {
    orders
        .iter()
        .map(|&l| C::from_polar(1.0, l as f64 * alpha))
        .collect()
}

/// Assembled blocks of one side.
#[derive(Debug, Clone)]
pub struct SideData {
    pub model: MultipatchModel,
    pub dofmap: DofMap,
    pub nu: Vec<f64>,
    pub elements: Vec<Vec<ElementQuad>>,
    pub k: SparseMatrix,
    pub g: ComplexDense,
    /// Fixed load (magnets); zero on the stator.
    pub load: Vec<f64>,
}

impl SideData {
    pub fn assemble(model: MultipatchModel, cfg: &MachineConfig, orders: &[i64]) -> Result<Self> {
        let dofmap = build_dof_map(&model)?;
        Self::assemble_with(model, dofmap, cfg, orders, None)
    }

    /// Reassembles after a geometry change with unchanged topology. A supplied
    /// coupling matrix is reused.
    pub fn assemble_with(
        model: MultipatchModel,
        dofmap: DofMap,
        cfg: &MachineConfig,
        orders: &[i64],
        coupling: Option<ComplexDense>,
    ) -> Result<Self> {
        let nu = patch_reluctivity(&model, cfg);
        let elements = model_elements(&model)?;
        let idx = free_index(&dofmap);
        let n = dofmap.n_free();
        let k = stiffness_from_elements(&elements, &idx, n, &nu);
        let load = magnet_rhs_from_elements(&model, &elements, &idx, n);
        let g = match coupling {
            Some(g) => g,
            None => assemble_coupling(&model, &dofmap, orders, cfg.interface_radius)?,
        };
        Ok(Self {
            model,
            dofmap,
            nu,
            elements,
            k,
            g,
            load,
        })
    }

    pub fn n(&self) -> usize {
        self.dofmap.n_free()
    }
}

/// Three-phase drive: `i_k(t) = I cos(t + phi - 2 pi (k-1)/3)`, `t = N_p alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub amplitude: f64,
    pub phase: f64,
    pub pole_pairs: usize,
}

impl Drive {
    pub fn currents(&self, alpha: f64) -> [f64; 3] {
        let t = self.pole_pairs as f64 * alpha;
        let tp = 2.0 * std::f64::consts::PI / 3.0;
        [0, 1, 2].map(|k| self.amplitude * (t + self.phase - tp * k as f64).cos())
    }
}

/// Both sides, harmonic orders and winding data of the coupled problem.
#[derive(Debug, Clone)]
pub struct CoupledProblem {
    pub orders: Vec<i64>,
    pub stator: SideData,
    pub rotor: SideData,
    /// Winding vectors of phases 1..=3 on the stator free dofs.
    pub windings: Vec<Vec<f64>>,
    pub drive: Drive,
    pub pole_pairs: usize,
    pub axial_length: f64,
}

impl CoupledProblem {
    pub fn from_config(cfg: &MachineConfig) -> Result<Self> {
        let (stator, rotor) = build_demo_machine(cfg)?;
        Self::from_models(cfg, stator, rotor)
    }

    pub fn from_models(
        cfg: &MachineConfig,
        stator: MultipatchModel,
        rotor: MultipatchModel,
    ) -> Result<Self> {
        let orders = cfg.orders()?;
        let (st, rt) = rayon::join(
            || SideData::assemble(stator, cfg, &orders),
            || SideData::assemble(rotor, cfg, &orders),
        );
        let (stator, rotor) = (st?, rt?);
        let idx = free_index(&stator.dofmap);
        let windings = (1..=3u8)
            .map(|ph| {
                winding_from_elements(
                    &stator.model,
                    &stator.elements,
                    &idx,
                    stator.n(),
                    ph,
                    cfg.turns,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            orders,
            stator,
            rotor,
            windings,
            drive: Drive {
                amplitude: cfg.current_amplitude,
                phase: cfg.current_phase,
                pole_pairs: cfg.pole_pairs,
            },
            pole_pairs: cfg.pole_pairs,
            axial_length: cfg.axial_length,
        })
    }

    /// Stator coil load at angle `alpha`.
    pub fn stator_load(&self, alpha: f64) -> Vec<f64> {
        let i = self.drive.currents(alpha);
        let mut j = self.stator.load.clone();
        for (w, ik) in self.windings.iter().zip(i) {
            if ik != 0.0 {
                for (a, b) in j.iter_mut().zip(w) {
                    *a += ik * b;
                }
            }
        }
        j
    }

    /// `N_p l_z`, the factor between `chi^T u` and flux linkage.
    pub fn flux_scale(&self) -> f64 {
        self.pole_pairs as f64 * self.axial_length
    }

    pub fn n_harmonics(&self) -> usize {
        self.orders.len()
    }

    pub fn total_dofs(&self) -> usize {
        self.stator.n() + self.rotor.n()
    }
}

/// Solution at one rotor angle.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSolution {
    pub alpha: f64,
    pub lambda: Vec<C>,
    pub u_st: Vec<f64>,
    pub u_rt: Vec<f64>,
}

/// Real-split system of the full complex saddle problem, unknown order
/// `[Re u_st, Re u_rt, Im u_st, Im u_rt, Re lam, Im lam]`.
pub fn full_saddle_matrix(prob: &CoupledProblem, alpha: f64) -> SparseMatrix {
    let (ns, nr, m) = (prob.stator.n(), prob.rotor.n(), prob.n_harmonics());
    let nu = ns + nr;
    let rot = rotation_matrix(&prob.orders, alpha);
    let mut t = Vec::new();
    for copy in 0..2 {
        let off = copy * nu;
        for (k, base) in [(&prob.stator.k, 0), (&prob.rotor.k, ns)] {
            for i in 0..k.n_rows {
                for (j, v) in k.row(i) {
                    t.push((off + base + i, off + base + j, v));
                }
            }
        }
    }
    let lr = 2 * nu;
    let li = 2 * nu + m;
    let mut couple = |row: usize, k: usize, c: C| {
        if c == C::new(0.0, 0.0) {
            return;
        }
        let (ur, ui) = (row, nu + row);
        t.push((ur, lr + k, c.re));
        t.push((lr + k, ur, c.re));
        t.push((ur, li + k, -c.im));
        t.push((li + k, ur, -c.im));
        t.push((ui, lr + k, c.im));
        t.push((lr + k, ui, c.im));
        t.push((ui, li + k, c.re));
        t.push((li + k, ui, c.re));
    };
    for i in 0..ns {
        for k in 0..m {
            couple(i, k, prob.stator.g[(i, k)] * rot[k]);
        }
    }
    for i in 0..nr {
        for k in 0..m {
            couple(ns + i, k, prob.rotor.g[(i, k)]);
        }
    }
    let n = 2 * nu + 2 * m;
    SparseMatrix::from_triplets(n, n, t)
}

fn split_rhs(prob: &CoupledProblem, js: &[f64], jr: &[f64]) -> Vec<f64> {
    let n = 2 * prob.total_dofs() + 2 * prob.n_harmonics();
    let mut b = vec![0.0; n];
    b[..js.len()].copy_from_slice(js);
    b[js.len()..js.len() + jr.len()].copy_from_slice(jr);
    b
}

fn unsplit(prob: &CoupledProblem, alpha: f64, x: &[f64]) -> Result<AngleSolution> {
    let (ns, nr, m) = (prob.stator.n(), prob.rotor.n(), prob.n_harmonics());
    let nu = ns + nr;
    let re = &x[..nu];
    let im = &x[nu..2 * nu];
    let scale = norm2(re).max(f64::MIN_POSITIVE);
    if norm2(im) > 1e-9 * scale {
        return Err(Error::Stability(format!(
            "full solution has imaginary part {:e} relative",
            norm2(im) / scale
        )));
    }
    let lambda = (0..m)
        .map(|k| C::new(x[2 * nu + k], x[2 * nu + m + k]))
        .collect();
    Ok(AngleSolution {
        alpha,
        lambda,
        u_st: re[..ns].to_vec(),
        u_rt: re[ns..].to_vec(),
    })
}

/// Direct solve of the full saddle system by `L D L^T`.
pub fn solve_full(prob: &CoupledProblem, alpha: f64) -> Result<AngleSolution> {
    let a = full_saddle_matrix(prob, alpha);
    let f = SymmetricFactor::ldlt_with_trailing(&a, 2 * prob.n_harmonics()).map_err(|e| {
        Error::Stability(format!(
            "full saddle system is singular ({e}); check n_harmonics against the mesh"
        ))
    })?;
    let b = split_rhs(prob, &prob.stator_load(alpha), &prob.rotor.load);
    unsplit(prob, alpha, &f.solve(&b)?)
}

/// Relative residuals of the three block rows for a complex candidate
/// solution, with right-hand sides `js`, `jr` and zero.
pub fn block_residuals(
    prob: &CoupledProblem,
    sol: &AngleSolution,
    js: &[f64],
    jr: &[f64],
) -> [f64; 3] {
    let rot = rotation_matrix(&prob.orders, sol.alpha);
    let rl: Vec<C> = rot.iter().zip(&sol.lambda).map(|(r, l)| r * l).collect();
    let gs = prob.stator.g.mul_vec(&rl);
    let ks = prob.stator.k.mul_vec(&sol.u_st);
    let r1: Vec<C> = (0..ks.len())
        .map(|i| C::new(ks[i] - js[i], 0.0) + gs[i])
        .collect();
    let gr = prob.rotor.g.mul_vec(&sol.lambda);
    let kr = prob.rotor.k.mul_vec(&sol.u_rt);
    let r2: Vec<C> = (0..kr.len())
        .map(|i| C::new(kr[i] - jr[i], 0.0) + gr[i])
        .collect();
    let t_st = prob.stator.g.adjoint_mul_real(&sol.u_st);
    let t_rt = prob.rotor.g.adjoint_mul_real(&sol.u_rt);
    let r3: Vec<C> = (0..t_st.len())
        .map(|k| rot[k].conj() * t_st[k] + t_rt[k])
        .collect();
    let ref1 = norm2(js).max(norm2(&ks)).max(f64::MIN_POSITIVE);
    let ref2 = norm2(jr).max(norm2(&kr)).max(f64::MIN_POSITIVE);
    let ref3 = cnorm2(&t_st).max(cnorm2(&t_rt)).max(f64::MIN_POSITIVE);
    [cnorm2(&r1) / ref1, cnorm2(&r2) / ref2, cnorm2(&r3) / ref3]
}

/// Factorization and products of one side.
#[derive(Debug, Clone)]
pub struct SidePrecomp {
    pub factor: SymmetricFactor,
    /// `K^{-1} G`.
    pub x: ComplexDense,
    /// `K^{-1} j`.
    pub y: Vec<f64>,
    /// `G^H K^{-1} G`.
    pub h: ComplexDense,
    /// `G^H K^{-1} j`.
    pub f: Vec<C>,
}

impl SidePrecomp {
    pub fn new(side: &SideData) -> Result<Self> {
        let factor = factorize(&side.k)?;
        let m = side.g.n_cols;
        let cols: Vec<Vec<C>> = (0..m).map(|k| side.g.col(k)).collect();
        let x = ComplexDense::from_cols(&solve_multi_complex(&factor, &cols)?);
        let y = factor.solve(&side.load)?;
        let h = side.g.adjoint_mul(&x);
        let f = side.g.adjoint_mul_real(&y);
        Ok(Self { factor, x, y, h, f })
    }
}

/// Winding data of one phase: `z = K_st^{-1} chi`, `G_st^H z`, `X_st^T chi`.
#[derive(Debug, Clone)]
pub struct PhasePrecomp {
    pub z: Vec<f64>,
    pub gz: Vec<C>,
    pub chi_x: Vec<C>,
    /// `chi^T z_m` for each phase `m`.
    pub chi_z: [f64; 3],
    pub chi_y: f64,
}

/// The angle-independent offline data.
#[derive(Debug, Clone)]
pub struct CouplingPrecomp {
    pub orders: Vec<i64>,
    pub stator: SidePrecomp,
    pub rotor: SidePrecomp,
    pub phases: Vec<PhasePrecomp>,
    pub drive: Drive,
    pub flux_scale: f64,
    pub elapsed: Duration,
}

impl CouplingPrecomp {
    pub fn new(prob: &CoupledProblem) -> Result<Self> {
        let t0 = Instant::now();
        let (st, rt) = rayon::join(
            || SidePrecomp::new(&prob.stator),
            || SidePrecomp::new(&prob.rotor),
        );
        let stator = st?;
        let rotor = rt?;
        let phases = Self::phase_data(prob, &stator)?;
        Ok(Self {
            orders: prob.orders.clone(),
            stator,
            rotor,
            phases,
            drive: prob.drive,
            flux_scale: prob.flux_scale(),
            elapsed: t0.elapsed(),
        })
    }

    fn phase_data(prob: &CoupledProblem, stator: &SidePrecomp) -> Result<Vec<PhasePrecomp>> {
        let zs = solve_multi(&stator.factor, &prob.windings)?;
        let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        Ok(prob
            .windings
            .iter()
            .zip(&zs)
            .map(|(chi, z)| {
                let m = stator.x.n_cols;
                let mut chi_x = vec![C::new(0.0, 0.0); m];
                for (i, &c) in chi.iter().enumerate() {
                    if c != 0.0 {
                        for (k, o) in chi_x.iter_mut().enumerate() {
                            *o += stator.x[(i, k)] * c;
                        }
                    }
                }
                PhasePrecomp {
                    z: z.clone(),
                    gz: prob.stator.g.adjoint_mul_real(z),
                    chi_x,
                    chi_z: [dotp(chi, &zs[0]), dotp(chi, &zs[1]), dotp(chi, &zs[2])],
                    chi_y: dotp(chi, &stator.y),
                }
            })
            .collect())
    }

    /// Same stator data with a new rotor side.
    pub fn with_rotor(&self, rotor: SidePrecomp) -> Self {
        Self {
            rotor,
            ..self.clone()
        }
    }

    pub fn n_harmonics(&self) -> usize {
        self.orders.len()
    }

    /// `K_int(alpha)`.
    pub fn interface_matrix(&self, alpha: f64) -> ComplexDense {
        let rot = rotation_matrix(&self.orders, alpha);
        let m = self.orders.len();
        let mut k = self.rotor.h.clone();
        for a in 0..m {
            let ra = rot[a].conj();
            for b in 0..m {
                k[(a, b)] += ra * self.stator.h[(a, b)] * rot[b];
            }
        }
        k
    }

    /// `G_st^H K_st^{-1} j_st(alpha)`.
    fn stator_moment(&self, alpha: f64) -> Vec<C> {
        let mut f = self.stator.f.clone();
        for (p, ik) in self.phases.iter().zip(self.drive.currents(alpha)) {
            if ik != 0.0 {
                for (a, b) in f.iter_mut().zip(&p.gz) {
                    *a += b * ik;
                }
            }
        }
        f
    }

    /// `f_int(alpha)`.
    pub fn interface_rhs(&self, alpha: f64) -> Vec<C> {
        let rot = rotation_matrix(&self.orders, alpha);
        let fs = self.stator_moment(alpha);
        (0..self.orders.len())
            .map(|k| self.rotor.f[k] + rot[k].conj() * fs[k])
            .collect()
    }

    /// Factors `K_int(alpha)` and solves for the multiplier.
    pub fn solve_interface(&self, alpha: f64) -> Result<(Vec<C>, ComplexLu)> {
        let lu = ComplexLu::new(&self.interface_matrix(alpha)).map_err(|e| {
            Error::Stability(format!(
                "interface matrix at alpha = {alpha} is singular ({e})"
            ))
        })?;
        let lambda = lu.solve(&self.interface_rhs(alpha))?;
        Ok((lambda, lu))
    }

    fn stator_y(&self, alpha: f64) -> Vec<f64> {
        let mut y = self.stator.y.clone();
        for (p, ik) in self.phases.iter().zip(self.drive.currents(alpha)) {
            if ik != 0.0 {
                for (a, b) in y.iter_mut().zip(&p.z) {
                    *a += ik * b;
                }
            }
        }
        y
    }

    /// Interior states from the multiplier.
    pub fn reconstruct(&self, alpha: f64, lambda: &[C]) -> Result<AngleSolution> {
        let rot = rotation_matrix(&self.orders, alpha);
        let rl: Vec<C> = rot.iter().zip(lambda).map(|(r, l)| r * l).collect();
        let xs = self.stator.x.mul_vec(&rl);
        let xr = self.rotor.x.mul_vec(lambda);
        let ys = self.stator_y(alpha);
        let u_st: Vec<C> = ys
            .iter()
            .zip(&xs)
            .map(|(y, x)| C::new(*y, 0.0) - x)
            .collect();
        let u_rt: Vec<C> = self
            .rotor
            .y
            .iter()
            .zip(&xr)
            .map(|(y, x)| C::new(*y, 0.0) - x)
            .collect();
        let re = |v: &[C]| -> Result<Vec<f64>> {
            let scale = cnorm2(v).max(f64::MIN_POSITIVE);
            let im = v.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
            if im > 1e-9 * scale {
                return Err(Error::Stability(format!(
                    "reconstructed state has imaginary part {:e} relative; harmonic orders must be closed under negation",
                    im / scale
                )));
            }
            Ok(v.iter().map(|z| z.re).collect())
        };
        Ok(AngleSolution {
            alpha,
            lambda: lambda.to_vec(),
            u_st: re(&u_st)?,
            u_rt: re(&u_rt)?,
        })
    }

    pub fn solve_at_angle(&self, alpha: f64) -> Result<AngleSolution> {
        let (lambda, _) = self.solve_interface(alpha)?;
        self.reconstruct(alpha, &lambda)
    }

    /// `chi_phase^T u_st` from the multiplier alone.
    pub fn winding_moment(&self, phase: usize, alpha: f64, lambda: &[C]) -> f64 {
        let p = &self.phases[phase];
        let rot = rotation_matrix(&self.orders, alpha);
        let mut s = p.chi_y;
        for (m, ik) in self.drive.currents(alpha).into_iter().enumerate() {
            s += ik * p.chi_z[m];
        }
        let x: C = p
            .chi_x
            .iter()
            .zip(rot.iter().zip(lambda))
            .map(|(c, (r, l))| c * r * l)
            .sum();
        s - x.re
    }

    /// Flux linkage `N_p l_z chi^T u_st` of a phase.
    pub fn flux_linkage(&self, phase: usize, alpha: f64, lambda: &[C]) -> f64 {
        self.flux_scale * self.winding_moment(phase, alpha, lambda)
    }
}

/// Uniform angles over one electrical period: `alpha_j = j 2 pi / (N_p N_alpha)`.
pub fn sweep_angles(pole_pairs: usize, n_angles: usize) -> Vec<f64> {
    let step = 2.0 * std::f64::consts::PI / (pole_pairs as f64 * n_angles as f64);
    (0..n_angles).map(|j| j as f64 * step).collect()
}

/// Result of a rotation sweep; `states` is empty in low-memory mode.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub angles: Vec<f64>,
    /// Phase-1 flux linkage per angle.
    pub psi: Vec<f64>,
    pub lambdas: Vec<Vec<C>>,
    pub states: Vec<AngleSolution>,
    pub solve_times: Vec<Duration>,
}

/// Solves at every angle in parallel; results are ordered by angle index.
pub fn rotation_sweep(
    pre: &CouplingPrecomp,
    angles: &[f64],
    low_memory: bool,
) -> Result<SweepResult> {
    let out: Vec<(f64, Vec<C>, Option<AngleSolution>, Duration)> = angles
        .par_iter()
        .map(|&a| {
            let t0 = Instant::now();
            let (lambda, _) = pre.solve_interface(a)?;
            let dt = t0.elapsed();
            let psi = pre.flux_linkage(0, a, &lambda);
            let state = if low_memory {
                None
            } else {
                Some(pre.reconstruct(a, &lambda)?)
            };
            Ok((psi, lambda, state, dt))
        })
        .collect::<Result<_>>()?;
    let mut res = SweepResult {
        angles: angles.to_vec(),
        psi: Vec::with_capacity(out.len()),
        lambdas: Vec::with_capacity(out.len()),
        states: Vec::new(),
        solve_times: Vec::with_capacity(out.len()),
    };
    for (psi, l, s, dt) in out {
        res.psi.push(psi);
        res.lambdas.push(l);
        res.solve_times.push(dt);
        if let Some(s) = s {
            res.states.push(s);
        }
    }
    Ok(res)
}

/// `N_p l_z chi^T u`.
pub fn flux_linkage(u_st: &[f64], winding: &[f64], pole_pairs: usize, axial_length: f64) -> f64 {
    pole_pairs as f64 * axial_length * u_st.iter().zip(winding).map(|(a, b)| a * b).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small_cfg() -> MachineConfig {
        MachineConfig {
            n_harmonics: 12,
            n_angles: 12,
            ..Default::default()
        }
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn rotation_examples() {
        assert!(rotation_matrix(&[1, 2, -3], 0.0)
            .iter()
            .all(|z| *z == C::new(1.0, 0.0)));
        let r = rotation_matrix(&[1, 2], PI);
        assert!(
            (r[0] - C::new(-1.0, 0.0)).norm() < 1e-15 && (r[1] - C::new(1.0, 0.0)).norm() < 1e-15
        );
        let (a, b) = (0.3, -1.1);
        let ra = rotation_matrix(&[1, 5, -7], a);
        let rb = rotation_matrix(&[1, 5, -7], b);
        let rab = rotation_matrix(&[1, 5, -7], a + b);
        let rm = rotation_matrix(&[1, 5, -7], -a);
        for k in 0..3 {
            assert!((ra[k] * rb[k] - rab[k]).norm() < 1e-15);
            assert!((ra[k] * rm[k] - C::new(1.0, 0.0)).norm() < 1e-15);
            assert!((ra[k].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn schur_matches_full_and_residuals_vanish() {
        let prob = CoupledProblem::from_config(&small_cfg()).unwrap();
        let pre = CouplingPrecomp::new(&prob).unwrap();
        for alpha in [0.0, 0.21, 1.3] {
            let full = solve_full(&prob, alpha).unwrap();
            let schur = pre.solve_at_angle(alpha).unwrap();
            let uf: Vec<f64> = full.u_st.iter().chain(&full.u_rt).copied().collect();
            let us: Vec<f64> = schur.u_st.iter().chain(&schur.u_rt).copied().collect();
            assert!(rel(&us, &uf) < 1e-10, "alpha {alpha}: {}", rel(&us, &uf));
            let r = block_residuals(&prob, &schur, &prob.stator_load(alpha), &prob.rotor.load);
            assert!(r.iter().all(|&v| v < 1e-9), "{r:?}");
        }
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let mut prob = CoupledProblem::from_config(&small_cfg()).unwrap();
        prob.rotor.load.iter_mut().for_each(|v| *v = 0.0);
        let pre = CouplingPrecomp::new(&prob).unwrap();
        let s = pre.solve_at_angle(0.4).unwrap();
        assert!(s.lambda.iter().all(|z| z.norm() == 0.0));
        assert!(s.u_st.iter().chain(&s.u_rt).all(|&v| v == 0.0));
        let f = solve_full(&prob, 0.4).unwrap();
        assert!(f.u_st.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn precomp_products_match_recomputation() {
        let prob = CoupledProblem::from_config(&small_cfg()).unwrap();
        let pre = CouplingPrecomp::new(&prob).unwrap();
        for k in [0, 5] {
            let xk = pre.stator.x.col(k);
            let re: Vec<f64> = xk.iter().map(|z| z.re).collect();
            let im: Vec<f64> = xk.iter().map(|z| z.im).collect();
            let (kr, ki) = (prob.stator.k.mul_vec(&re), prob.stator.k.mul_vec(&im));
            let g = prob.stator.g.col(k);
            let err: f64 = (0..g.len())
                .map(|i| (C::new(kr[i], ki[i]) - g[i]).norm())
                .fold(0.0, f64::max);
            let gmax = g.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err < 1e-10 * gmax);
        }
        let h = prob.rotor.g.adjoint_mul(&pre.rotor.x);
        let hmax = h.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(h.max_abs_diff(&pre.rotor.h) <= 1e-12 * hmax);
    }

    #[test]
    fn flux_symmetries() {
        let cfg = small_cfg();
        let prob = CoupledProblem::from_config(&cfg).unwrap();
        let pre = CouplingPrecomp::new(&prob).unwrap();
        let psi = |a: f64| {
            let (l, _) = pre.solve_interface(a).unwrap();
            pre.flux_linkage(0, a, &l)
        };
        let np = cfg.pole_pairs as f64;
        for a in [0.0, 0.17] {
            let p0 = psi(a);
            assert!((psi(a + 2.0 * PI / np) - p0).abs() < 1e-8 * p0.abs());
            assert!((psi(a + PI / np) + p0).abs() < 1e-8 * p0.abs());
        }
        // Flux through the winding vector directly.
        let s = pre.solve_at_angle(0.17).unwrap();
        let direct = flux_linkage(&s.u_st, &prob.windings[0], cfg.pole_pairs, cfg.axial_length);
        assert!((direct - psi(0.17)).abs() < 1e-10 * direct.abs());
    }

    #[test]
    fn sweep_modes_agree() {
        let cfg = small_cfg();
        let prob = CoupledProblem::from_config(&cfg).unwrap();
        let pre = CouplingPrecomp::new(&prob).unwrap();
        let angles = sweep_angles(cfg.pole_pairs, cfg.n_angles);
        let a = rotation_sweep(&pre, &angles, true).unwrap();
        let b = rotation_sweep(&pre, &angles, false).unwrap();
        assert_eq!(a.psi, b.psi);
        assert!(a.states.is_empty() && b.states.len() == angles.len());
        let mean = a.psi.iter().sum::<f64>() / a.psi.len() as f64;
        let max = a.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(mean.abs() < 1e-8 * max);
        let one = rotation_sweep(&pre, &angles[..1], false).unwrap();
        assert_eq!(one.states[0], pre.solve_at_angle(angles[0]).unwrap());
    }

    #[test]
    fn loaded_machine_schur_matches_full() {
        let cfg = MachineConfig {
            current_amplitude: 5.0,
            current_phase: 0.3,
            ..small_cfg()
        };
        let prob = CoupledProblem::from_config(&cfg).unwrap();
        let pre = CouplingPrecomp::new(&prob).unwrap();
        let alpha = 0.5;
        let full = solve_full(&prob, alpha).unwrap();
        let schur = pre.solve_at_angle(alpha).unwrap();
        assert!(rel(&schur.u_st, &full.u_st) < 1e-10);
        let direct = flux_linkage(
            &schur.u_st,
            &prob.windings[0],
            cfg.pole_pairs,
            cfg.axial_length,
        );
        let fast = pre.flux_linkage(0, alpha, &schur.lambda);
        assert!((direct - fast).abs() < 1e-10 * direct.abs());
    }
}
