//! Adjoint states of the distortion objective and the shape gradient over
//! rotor control-point displacements.
//!
//! With the objective `J(Psi_1..Psi_N)` and `Psi_i = N_p l_z chi^T u_st,i`,
//! the adjoint at angle `i` solves the coupled system (which is Hermitian)
//! with stator load `-s_i N_p l_z chi` where `s_i = dJ/dPsi_i`. The gradient
//! for the field `W = R_a e_c` is
//!
//! ```text
//! sum_i int nu (div W grad u_i . grad p_i - grad u_i . (DW + DW^T) grad p_i)
//!   - sum_i int_pm ((div W - DW^T) grad p_i) . M_perp + (DM W)_perp . grad p_i
//! ```
//!
//! with `M_perp = (-M_2, M_1)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::MachineConfig;
use crate::coupling::{
    rotation_matrix, rotation_sweep, sweep_angles, CoupledProblem, CouplingPrecomp, SideData,
    SidePrecomp, SweepResult,
};
use crate::error::{Error, Result};
use crate::fourier::{
    build_derivative_dft, emf_spectrum, thd, thd_sensitivity, DerivativeDft, EmfSpectrum,
};
use crate::geometry::{DofMap, MultipatchModel};
use crate::linalg::ComplexLu;

type C = Complex64;

/// `s_i = dJ/dPsi_i` for every sample.
pub fn thd_state_sensitivity(
    spec: &EmfSpectrum,
    index_set: &[usize],
    m: &DerivativeDft,
) -> Result<Vec<f64>> {
    thd_sensitivity(spec, index_set, m)
}

/// Movable rotor control points. Design dof `2d + c` is component `c` of
/// global control point `globals[d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    pub design_of_global: Vec<Option<usize>>,
    pub globals: Vec<usize>,
}

impl DesignSpace {
    /// Everything except the interface, Dirichlet boundaries and (unless
    /// `move_magnets`) magnet patches.
    pub fn new(model: &MultipatchModel, dofmap: &DofMap, move_magnets: bool) -> Result<Self> {
        let mut fixed = dofmap.dirichlet.clone();
        for &g in &dofmap.interface_globals {
            fixed[g] = true;
        }
        if !move_magnets {
            for (k, l2g) in dofmap.local_to_global.iter().enumerate() {
                if model.magnetization[k].is_some() {
                    for &g in l2g {
                        fixed[g] = true;
                    }
                }
            }
        }
        let mask: Vec<bool> = fixed.iter().map(|f| !f).collect();
        let space = Self::from_mask(&mask);
        if space.globals.is_empty() {
            return Err(Error::config(
                "optimizer",
                "no movable rotor control points",
            ));
        }
        Ok(space)
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        let mut design_of_global = vec![None; mask.len()];
        let mut globals = Vec::new();
        for (g, &m) in mask.iter().enumerate() {
            if m {
                design_of_global[g] = Some(globals.len());
                globals.push(g);
            }
        }
        Self {
            design_of_global,
            globals,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.globals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.globals.is_empty()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.design_of_global.iter().map(Option::is_some).collect()
    }

    /// Per-global displacement `scale * w`.
    pub fn displacement(&self, w: &[f64], scale: f64) -> Vec<[f64; 2]> {
        let mut d = vec![[0.0; 2]; self.design_of_global.len()];
        for (k, &g) in self.globals.iter().enumerate() {
            d[g] = [scale * w[2 * k], scale * w[2 * k + 1]];
        }
        d
    }
}

/// Adjoint states per angle.
#[derive(Debug, Clone)]
pub struct AdjointSet {
    pub mu: Vec<Vec<C>>,
    pub p_st: Vec<Vec<f64>>,
    pub p_rt: Vec<Vec<f64>>,
}

/// Adjoint solves for phase-1 flux sensitivities `sens` at `angles`.
pub fn solve_adjoints(pre: &CouplingPrecomp, sens: &[f64], angles: &[f64]) -> Result<AdjointSet> {
    if sens.len() != angles.len() {
        return Err(Error::DimensionMismatch {
            expected: angles.len(),
            found: sens.len(),
        });
    }
    let ph = &pre.phases[0];
    let out: Vec<(Vec<C>, Vec<f64>, Vec<f64>)> = angles
        .par_iter()
        .zip(sens)
        .map(|(&alpha, &s)| {
            let c = -s * pre.flux_scale;
            let m = pre.n_harmonics();
            if c == 0.0 {
                return Ok((
                    vec![C::new(0.0, 0.0); m],
                    vec![0.0; ph.z.len()],
                    vec![0.0; pre.rotor.y.len()],
                ));
            }
            let rot = rotation_matrix(&pre.orders, alpha);
            let lu = ComplexLu::new(&pre.interface_matrix(alpha)).map_err(|e| {
                Error::Stability(format!("adjoint interface matrix at alpha = {alpha}: {e}"))
            })?;
            let rhs: Vec<C> = (0..m).map(|k| rot[k].conj() * ph.gz[k] * c).collect();
            let mu = lu.solve(&rhs)?;
            let rm: Vec<C> = rot.iter().zip(&mu).map(|(r, u)| r * u).collect();
            let xs = pre.stator.x.mul_vec(&rm);
            let p_st = ph.z.iter().zip(&xs).map(|(z, x)| c * z - x.re).collect();
            let p_rt = pre.rotor.x.mul_vec(&mu).iter().map(|x| -x.re).collect();
            Ok((mu, p_st, p_rt))
        })
        .collect::<Result<_>>()?;
    let mut set = AdjointSet {
        mu: Vec::new(),
        p_st: Vec::new(),
        p_rt: Vec::new(),
    };
    for (mu, ps, pr) in out {
        set.mu.push(mu);
        set.p_st.push(ps);
        set.p_rt.push(pr);
    }
    Ok(set)
}

/// Shape gradient over the design space from rotor states and adjoints
/// (free-dof vectors, one per angle).
pub fn assemble_shape_gradient(
    rotor: &SideData,
    states: &[Vec<f64>],
    adjoints: &[Vec<f64>],
    design: &DesignSpace,
) -> Result<Vec<f64>> {
    if states.len() != adjoints.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            found: adjoints.len(),
        });
    }
    let dm = &rotor.dofmap;
    let u: Vec<Vec<f64>> = states.iter().map(|s| dm.expand(s)).collect();
    let p: Vec<Vec<f64>> = adjoints.iter().map(|s| dm.expand(s)).collect();
    let n = design.len();
    let parts: Vec<Vec<f64>> = rotor
        .elements
        .par_iter()
        .enumerate()
        .map(|(k, elems)| {
            let mut g = vec![0.0; n];
            let l2g = &dm.local_to_global[k];
            let nu = rotor.nu[k];
            let mag = rotor.model.magnetization[k];
            for e in elems {
                let rows: Vec<Option<usize>> = e
                    .indices
                    .iter()
                    .map(|&l| design.design_of_global[l2g[l]])
                    .collect();
                if rows.iter().all(Option::is_none) {
                    continue;
                }
                let glob: Vec<usize> = e.indices.iter().map(|&l| l2g[l]).collect();
                for q in &e.points {
                    // S_bc = sum_i d_b u_i d_c p_i and grad P = sum_i grad p_i.
                    let mut s = [[0.0; 2]; 2];
                    let mut gp_sum = [0.0; 2];
                    for (ui, pi) in u.iter().zip(&p) {
                        let (mut gu, mut gp) = ([0.0; 2], [0.0; 2]);
                        for (a, &gl) in glob.iter().enumerate() {
                            let ga = q.grads[a];
                            gu[0] += ui[gl] * ga[0];
                            gu[1] += ui[gl] * ga[1];
                            gp[0] += pi[gl] * ga[0];
                            gp[1] += pi[gl] * ga[1];
                        }
                        for b in 0..2 {
                            for c in 0..2 {
                                s[b][c] += gu[b] * gp[c];
                            }
                        }
                        gp_sum[0] += gp[0];
                        gp_sum[1] += gp[1];
                    }
                    let tr = s[0][0] + s[1][1];
                    let pm = mag.map(|m| {
                        let mv = m.at(q.x);
                        (m.jacobian(q.x), [-mv[1], mv[0]])
                    });
                    for (a, row) in rows.iter().enumerate() {
                        let Some(d) = *row else { continue };
                        let ga = q.grads[a];
                        for c in 0..2 {
                            let mut v = nu
                                * (ga[c] * tr
                                    - ga[0] * (s[0][c] + s[c][0])
                                    - ga[1] * (s[1][c] + s[c][1]));
                            if let Some((dm_, mperp)) = pm {
                                let gp_m = gp_sum[0] * mperp[0] + gp_sum[1] * mperp[1];
                                let ga_m = ga[0] * mperp[0] + ga[1] * mperp[1];
                                // (dM/dx_c R_a)_perp . grad P
                                let dmc = [dm_[0][c], dm_[1][c]];
                                let trans =
                                    q.values[a] * (-dmc[1] * gp_sum[0] + dmc[0] * gp_sum[1]);
                                v -= ga[c] * gp_m - gp_sum[c] * ga_m + trans;
                            }
                            g[2 * d + c] += q.weight * v;
                        }
                    }
                }
            }
            g
        })
        .collect();
    let mut g = vec![0.0; n];
    for part in parts {
        for (a, b) in g.iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok(g)
}

/// Objective and its data for one rotor geometry.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rotor: SideData,
    pub pre: CouplingPrecomp,
    pub sweep: SweepResult,
    pub spectrum: EmfSpectrum,
    pub thd: f64,
}

/// Distortion objective as a function of the rotor geometry. The stator,
/// its factorization and the coupling matrices stay fixed.
#[derive(Debug, Clone)]
pub struct ThdProblem {
    pub cfg: MachineConfig,
    pub problem: CoupledProblem,
    pub pre: CouplingPrecomp,
    pub angles: Vec<f64>,
    pub index_set: Vec<usize>,
    pub dft: DerivativeDft,
}

impl ThdProblem {
    pub fn new(cfg: &MachineConfig) -> Result<Self> {
        Self::from_problem(cfg, CoupledProblem::from_config(cfg)?)
    }

    pub fn from_problem(cfg: &MachineConfig, problem: CoupledProblem) -> Result<Self> {
        let pre = CouplingPrecomp::new(&problem)?;
        let index_set = cfg.index_set()?;
        let rows = index_set.iter().max().copied().unwrap_or(1) + 1;
        Ok(Self {
            cfg: cfg.clone(),
            angles: sweep_angles(cfg.pole_pairs, cfg.n_angles),
            dft: build_derivative_dft(cfg.n_angles, rows)?,
            index_set,
            problem,
            pre,
        })
    }

    pub fn rotor_model(&self) -> &MultipatchModel {
        &self.problem.rotor.model
    }

    pub fn rotor_dofmap(&self) -> &DofMap {
        &self.problem.rotor.dofmap
    }

    /// Forward sweep and THD. `keep_states` retains the per-angle states
    /// needed for the gradient.
    pub fn evaluate(&self, rotor_model: &MultipatchModel, keep_states: bool) -> Result<Evaluation> {
        let rotor = SideData::assemble_with(
            rotor_model.clone(),
            self.problem.rotor.dofmap.clone(),
            &self.cfg,
            &self.problem.orders,
            Some(self.problem.rotor.g.clone()),
        )?;
        let pre = self.pre.with_rotor(SidePrecomp::new(&rotor)?);
        let sweep = rotation_sweep(&pre, &self.angles, !keep_states)?;
        let spectrum = emf_spectrum(&sweep.psi)?;
        let thd = thd(&spectrum, &self.index_set)?;
        Ok(Evaluation {
            rotor,
            pre,
            sweep,
            spectrum,
            thd,
        })
    }

    pub fn objective(&self, rotor_model: &MultipatchModel) -> Result<f64> {
        Ok(self.evaluate(rotor_model, false)?.thd)
    }

    /// Sensitivities, adjoints and shape gradient at an evaluation that kept
    /// its states.
    pub fn gradient(&self, eval: &Evaluation, design: &DesignSpace) -> Result<Vec<f64>> {
        if eval.sweep.states.len() != self.angles.len() {
            return Err(Error::InvalidInput(
                "gradient needs the per-angle states".into(),
            ));
        }
        let sens = thd_state_sensitivity(&eval.spectrum, &self.index_set, &self.dft)?;
        let adj = solve_adjoints(&eval.pre, &sens, &self.angles)?;
        let states: Vec<Vec<f64>> = eval.sweep.states.iter().map(|s| s.u_rt.clone()).collect();
        assemble_shape_gradient(&eval.rotor, &states, &adj.p_rt, design)
    }
}
