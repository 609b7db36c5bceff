//! Galerkin assembly on multipatch models: stiffness, magnet and source
//! loads, winding vectors, air-gap coupling matrices and the vector metric.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{MachineConfig, MU0};
use crate::error::{Error, Result};
use crate::geometry::{patch_elements, DofMap, ElementQuad, MultipatchModel, RegionTag, Side};
use crate::linalg::{ComplexDense, SparseMatrix};
use crate::quadrature::GaussRule;
use crate::spline::Point;

/// Reluctivity `1 / (mu0 mu_r)` of a region.
pub fn reluctivity(tag: RegionTag, cfg: &MachineConfig) -> f64 {
    let mu_r = match tag {
        RegionTag::RotorIron | RegionTag::StatorIron => cfg.mu_r_iron,
        RegionTag::MagnetPositive | RegionTag::MagnetNegative => cfg.mu_r_magnet,
        _ => 1.0,
    };
    1.0 / (MU0 * mu_r)
}

fn gauss_points(model: &MultipatchModel, patch: usize) -> usize {
    let p = &model.patches[patch];
    p.knots_u.degree().max(p.knots_v.degree()) + 1
}

/// Elements of every patch, computed in parallel and returned in patch order.
pub fn model_elements(model: &MultipatchModel) -> Result<Vec<Vec<ElementQuad>>> {
    (0..model.patches.len())
        .into_par_iter()
        .map(|k| {
            let elems = patch_elements(&model.patches[k], gauss_points(model, k))?;
            for e in &elems {
                if let Some(q) = e.points.iter().find(|q| !(q.det > 0.0)) {
                    return Err(Error::Assembly(format!(
                        "patch {k}: Jacobian determinant {} at {:?}",
                        q.det, q.x
                    )));
                }
            }
            Ok(elems)
        })
        .collect()
}

/// Dof index of every local basis function of every patch.
pub type DofIndex = Vec<Vec<Option<usize>>>;

pub fn free_index(dofmap: &DofMap) -> DofIndex {
    (0..dofmap.local_to_global.len())
        .map(|k| dofmap.free_local(k))
        .collect()
}

pub fn global_index(dofmap: &DofMap) -> DofIndex {
    dofmap
        .local_to_global
        .iter()
        .map(|l| l.iter().map(|&g| Some(g)).collect())
        .collect()
}

/// `int nu grad w_i . grad w_j` with a per-patch coefficient.
pub fn stiffness_from_elements(
    elements: &[Vec<ElementQuad>],
    index: &DofIndex,
    n: usize,
    coef: &[f64],
) -> SparseMatrix {
    let parts: Vec<Vec<(usize, usize, f64)>> = elements
        .par_iter()
        .enumerate()
        .map(|(k, elems)| {
            let mut t = Vec::new();
            let nu = coef[k];
            for e in elems {
                let nl = e.indices.len();
                let mut ke = vec![0.0; nl * nl];
                for q in &e.points {
                    let w = nu * q.weight;
                    for a in 0..nl {
                        let ga = q.grads[a];
                        for b in a..nl {
                            let gb = q.grads[b];
                            ke[a * nl + b] += w * (ga[0] * gb[0] + ga[1] * gb[1]);
                        }
                    }
                }
                for a in 0..nl {
                    let Some(ra) = index[k][e.indices[a]] else {
                        continue;
                    };
                    for b in a..nl {
                        let Some(rb) = index[k][e.indices[b]] else {
                            continue;
                        };
                        let v = ke[a * nl + b];
                        t.push((ra, rb, v));
                        if ra != rb || a != b {
                            t.push((rb, ra, v));
                        }
                    }
                }
            }
            t
        })
        .collect();
    SparseMatrix::from_triplets(n, n, parts.into_iter().flatten().collect())
}

/// Per-patch reluctivities.
pub fn patch_reluctivity(model: &MultipatchModel, cfg: &MachineConfig) -> Vec<f64> {
    model.tags.iter().map(|&t| reluctivity(t, cfg)).collect()
}

/// Stiffness matrix on the free dofs.
pub fn assemble_stiffness(
    model: &MultipatchModel,
    dofmap: &DofMap,
    nu: &[f64],
) -> Result<SparseMatrix> {
    check_coefficients(model, nu)?;
    let elements = model_elements(model)?;
    Ok(stiffness_from_elements(
        &elements,
        &free_index(dofmap),
        dofmap.n_free(),
        nu,
    ))
}

/// Stiffness matrix on all globals, Dirichlet dofs included.
pub fn assemble_stiffness_global(
    model: &MultipatchModel,
    dofmap: &DofMap,
    nu: &[f64],
) -> Result<SparseMatrix> {
    check_coefficients(model, nu)?;
    let elements = model_elements(model)?;
    Ok(stiffness_from_elements(
        &elements,
        &global_index(dofmap),
        dofmap.n_global,
        nu,
    ))
}

fn check_coefficients(model: &MultipatchModel, nu: &[f64]) -> Result<()> {
    if nu.len() != model.patches.len() {
        return Err(Error::DimensionMismatch {
            expected: model.patches.len(),
            found: nu.len(),
        });
    }
    if let Some(v) = nu.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "reluctivity must be positive, got {v}"
        )));
    }
    Ok(())
}

/// Load vector `int g(x, grad w) ` where `g` maps a point, basis value and
/// gradient of one basis function to the integrand.
fn load_from_elements(
    elements: &[Vec<ElementQuad>],
    index: &DofIndex,
    n: usize,
    patches: &[usize],
    integrand: &(dyn Fn(usize, Point, f64, [f64; 2]) -> f64 + Sync),
) -> Vec<f64> {
    let parts: Vec<Vec<(usize, f64)>> = patches
        .par_iter()
        .map(|&k| {
            let mut out = Vec::new();
            for e in &elements[k] {
                let mut fe = vec![0.0; e.indices.len()];
                for q in &e.points {
                    for (a, f) in fe.iter_mut().enumerate() {
                        *f += q.weight * integrand(k, q.x, q.values[a], q.grads[a]);
                    }
                }
                for (a, f) in fe.into_iter().enumerate() {
                    if let Some(r) = index[k][e.indices[a]] {
                        out.push((r, f));
                    }
                }
            }
            out
        })
        .collect();
    let mut v = vec![0.0; n];
    for (r, f) in parts.into_iter().flatten() {
        v[r] += f;
    }
    v
}

/// `int f w_i` on the free dofs.
pub fn assemble_source(
    model: &MultipatchModel,
    dofmap: &DofMap,
    f: &(dyn Fn(Point) -> f64 + Sync),
) -> Result<Vec<f64>> {
    let elements = model_elements(model)?;
    let all: Vec<usize> = (0..model.patches.len()).collect();
    Ok(load_from_elements(
        &elements,
        &free_index(dofmap),
        dofmap.n_free(),
        &all,
        &|_, x, w, _| f(x) * w,
    ))
}

/// Magnet load `int (-M_2, M_1) . grad w_i` on the free dofs.
pub fn magnet_rhs_from_elements(
    model: &MultipatchModel,
    elements: &[Vec<ElementQuad>],
    index: &DofIndex,
    n: usize,
) -> Vec<f64> {
    let magnets: Vec<usize> = (0..model.patches.len())
        .filter(|&k| model.magnetization[k].is_some())
        .collect();
    load_from_elements(elements, index, n, &magnets, &|k, x, _, g| {
        let m = model.magnetization[k].unwrap().at(x);
        -m[1] * g[0] + m[0] * g[1]
    })
}

pub fn assemble_magnet_rhs(model: &MultipatchModel, dofmap: &DofMap) -> Result<Vec<f64>> {
    let elements = model_elements(model)?;
    Ok(magnet_rhs_from_elements(
        model,
        &elements,
        &free_index(dofmap),
        dofmap.n_free(),
    ))
}

/// Winding density of phase `k`: `±turns / A_slot` on its coil patches.
pub fn winding_density(model: &MultipatchModel, phase: u8, turns: f64) -> Result<Vec<f64>> {
    model
        .tags
        .iter()
        .enumerate()
        .map(|(k, t)| match *t {
            RegionTag::Coil {
                phase: ph,
                positive,
            } if ph == phase => {
                let n = gauss_points(model, k);
                let area = crate::geometry::patch_area(&model.patches[k], n)?;
                let s = if positive { 1.0 } else { -1.0 };
                Ok(s * turns / area)
            }
            _ => Ok(0.0),
        })
        .collect()
}

/// `(chi_k)_j = int chi_k w_j` on the free dofs.
pub fn assemble_winding_vector(
    model: &MultipatchModel,
    dofmap: &DofMap,
    phase: u8,
    turns: f64,
) -> Result<Vec<f64>> {
    let elements = model_elements(model)?;
    winding_from_elements(
        model,
        &elements,
        &free_index(dofmap),
        dofmap.n_free(),
        phase,
        turns,
    )
}

pub fn winding_from_elements(
    model: &MultipatchModel,
    elements: &[Vec<ElementQuad>],
    index: &DofIndex,
    n: usize,
    phase: u8,
    turns: f64,
) -> Result<Vec<f64>> {
    let chi = winding_density(model, phase, turns)?;
    let patches: Vec<usize> = (0..chi.len()).filter(|&k| chi[k] != 0.0).collect();
    Ok(load_from_elements(
        elements,
        index,
        n,
        &patches,
        &|k, _, w, _| chi[k] * w,
    ))
}

/// Interface rule size for harmonic orders up to `max_order`.
pub fn interface_points(degree: usize, max_order: u64) -> usize {
    (degree + 1).max((max_order as usize).div_ceil(2) + 2)
}

/// Harmonic coupling matrix `∓ int e^{-i l_k theta} w_j R dtheta` (minus on the
/// stator), rows over the free dofs.
pub fn assemble_coupling(
    model: &MultipatchModel,
    dofmap: &DofMap,
    orders: &[i64],
    radius: f64,
) -> Result<ComplexDense> {
    let sign = match model.side {
        Side::Stator => -1.0,
        Side::Rotor => 1.0,
    };
    let max_order = orders.iter().map(|l| l.unsigned_abs()).max().unwrap_or(0);
    let mut g = ComplexDense::zeros(dofmap.n_free(), orders.len());
    let tol = 1e-10;
    for e in &model.interface_edges {
        let patch = &model.patches[e.patch];
        let kv = patch.edge_knots(e.edge);
        let rule = GaussRule::new(interface_points(kv.degree(), max_order));
        let on_edge = |s: f64| -> Result<(Point, [f64; 2])> {
            let (xi, eta) = patch.edge_param(e.edge, s);
            let (x, j) = patch.eval(xi, eta)?;
            let c = match e.edge {
                crate::geometry::Edge::UMin | crate::geometry::Edge::UMax => 1,
                _ => 0,
            };
            Ok((x, [j[0][c], j[1][c]]))
        };
        for w in kv.breaks().windows(2) {
            let (sa, sb) = (w[0], w[1]);
            let (xa, _) = on_edge(sa)?;
            let (xb, _) = on_edge(sb)?;
            let ta = xa[1].atan2(xa[0]);
            let mut dt = xb[1].atan2(xb[0]) - ta;
            dt -= (dt / (2.0 * std::f64::consts::PI)).round() * 2.0 * std::f64::consts::PI;
            for (theta, wt) in rule.on(ta, ta + dt) {
                // Parameter with polar angle theta, by Newton from linear interpolation.
                let mut s = sa + (sb - sa) * (theta - ta) / dt;
                for _ in 0..50 {
                    let (x, d) = on_edge(s)?;
                    let mut err = x[1].atan2(x[0]) - theta;
                    err -=
                        (err / (2.0 * std::f64::consts::PI)).round() * 2.0 * std::f64::consts::PI;
                    let dtheta = (x[0] * d[1] - x[1] * d[0]) / (x[0] * x[0] + x[1] * x[1]);
                    let step = err / dtheta;
                    s = (s - step).clamp(sa, sb);
                    if step.abs() < 1e-15 {
                        break;
                    }
                }
                let (xi, eta) = patch.edge_param(e.edge, s);
                let basis = patch.basis_at(xi, eta)?;
                let (x, _) = patch.map_with(&basis);
                let r = x[0].hypot(x[1]);
                if (r - radius).abs() > tol {
                    return Err(Error::Geometry(format!(
                        "interface point {x:?} at distance {r} from the origin, expected {radius}"
                    )));
                }
                let meas = sign * radius * wt.abs();
                for (loc, &val) in basis.indices.iter().zip(&basis.values) {
                    if val == 0.0 {
                        continue;
                    }
                    let gl = dofmap.local_to_global[e.patch][*loc];
                    let Some(row) = dofmap.free_of_global[gl] else {
                        continue;
                    };
                    for (k, &l) in orders.iter().enumerate() {
                        let ph = Complex64::from_polar(1.0, -(l as f64) * theta);
                        g[(row, k)] += ph * (meas * val);
                    }
                }
            }
        }
    }
    Ok(g)
}

/// Scalar `H^1` matrix `int grad R_a . grad R_b + R_a R_b` over the given
/// dof index, from precomputed elements.
pub fn h1_from_elements(elements: &[Vec<ElementQuad>], index: &DofIndex, n: usize) -> SparseMatrix {
    let parts: Vec<Vec<(usize, usize, f64)>> = elements
        .par_iter()
        .enumerate()
        .map(|(k, elems)| {
            let mut t = Vec::new();
            for e in elems {
                let nl = e.indices.len();
                let rows: Vec<Option<usize>> = e.indices.iter().map(|&l| index[k][l]).collect();
                if rows.iter().all(|r| r.is_none()) {
                    continue;
                }
                let mut me = vec![0.0; nl * nl];
                for q in &e.points {
                    for a in 0..nl {
                        for b in a..nl {
                            let (ga, gb) = (q.grads[a], q.grads[b]);
                            me[a * nl + b] += q.weight
                                * (ga[0] * gb[0] + ga[1] * gb[1] + q.values[a] * q.values[b]);
                        }
                    }
                }
                for a in 0..nl {
                    let Some(ra) = rows[a] else { continue };
                    for b in a..nl {
                        let Some(rb) = rows[b] else { continue };
                        let v = me[a * nl + b];
                        t.push((ra, rb, v));
                        if a != b {
                            t.push((rb, ra, v));
                        }
                    }
                }
            }
            t
        })
        .collect();
    SparseMatrix::from_triplets(n, n, parts.into_iter().flatten().collect())
}

/// Metric `b(W, Z) = int DW : DZ + W . Z` over vector fields whose two
/// components live on the masked globals. Design dof `2d + c` is component
/// `c` of the `d`-th masked global.
pub fn assemble_vector_metric(
    model: &MultipatchModel,
    dofmap: &DofMap,
    mask: &[bool],
) -> Result<SparseMatrix> {
    let elements = model_elements(model)?;
    vector_metric_from_elements(&elements, dofmap, mask)
}

pub fn vector_metric_from_elements(
    elements: &[Vec<ElementQuad>],
    dofmap: &DofMap,
    mask: &[bool],
) -> Result<SparseMatrix> {
    if mask.len() != dofmap.n_global {
        return Err(Error::DimensionMismatch {
            expected: dofmap.n_global,
            found: mask.len(),
        });
    }
    let mut design = vec![None; dofmap.n_global];
    let mut n = 0;
    for (g, &m) in mask.iter().enumerate() {
        if m {
            design[g] = Some(n);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::config("optimizer", "design mask is empty"));
    }
    let index: DofIndex = dofmap
        .local_to_global
        .iter()
        .map(|l| l.iter().map(|&g| design[g]).collect())
        .collect();
    let scalar = h1_from_elements(elements, &index, n);
    let mut t = Vec::with_capacity(2 * scalar.nnz());
    for i in 0..n {
        for (j, v) in scalar.row(i) {
            t.push((2 * i, 2 * j, v));
            t.push((2 * i + 1, 2 * j + 1, v));
        }
    }
    Ok(SparseMatrix::from_triplets(2 * n, 2 * n, t))
}

/// Field value and physical gradient at a parametric point from global coefficients.
pub fn eval_field(
    model: &MultipatchModel,
    dofmap: &DofMap,
    u_global: &[f64],
    patch: usize,
    xi: f64,
    eta: f64,
) -> Result<(f64, [f64; 2])> {
    let p = &model.patches[patch];
    let basis = p.basis_at(xi, eta)?;
    let (_, jac) = p.map_with(&basis);
    let (_, grads) = crate::geometry::physical_grads(&basis, &jac);
    let mut u = 0.0;
    let mut g = [0.0; 2];
    for (k, &loc) in basis.indices.iter().enumerate() {
        let c = u_global[dofmap.local_to_global[patch][loc]];
        u += c * basis.values[k];
        g[0] += c * grads[k][0];
        g[1] += c * grads[k][1];
    }
    Ok((u, g))
}

/// `||u_h - u||_{L^2}` with an `n_pts` Gauss rule per direction.
pub fn l2_error(
    model: &MultipatchModel,
    dofmap: &DofMap,
    u_global: &[f64],
    exact: &dyn Fn(Point) -> f64,
    n_pts: usize,
) -> Result<f64> {
    let mut err = 0.0;
    for (k, p) in model.patches.iter().enumerate() {
        for e in patch_elements(p, n_pts)? {
            for q in &e.points {
                let uh: f64 = e
                    .indices
                    .iter()
                    .zip(&q.values)
                    .map(|(&l, v)| u_global[dofmap.local_to_global[k][l]] * v)
                    .sum();
                let d = uh - exact(q.x);
                err += q.weight * d * d;
            }
        }
    }
    Ok(err.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_demo_machine, build_dof_map, Edge, EdgeRef, Magnetization};
    use crate::linalg::factorize;
    use crate::spline::{KnotVector, NurbsPatch};
    use std::f64::consts::PI;

    fn square_model(p: usize, elements: usize, dirichlet: bool) -> MultipatchModel {
        let kv = KnotVector::uniform(p, 1).unwrap();
        let n = p + 1;
        let mut pts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                pts.push([i as f64 / p as f64, j as f64 / p as f64]);
            }
        }
        let base = NurbsPatch::new(kv.clone(), kv, pts, vec![1.0; n * n]).unwrap();
        let ins: Vec<f64> = (1..elements).map(|i| i as f64 / elements as f64).collect();
        let patch = base.insert_knots(&ins, &ins).unwrap();
        let edges = if dirichlet {
            [Edge::UMin, Edge::UMax, Edge::VMin, Edge::VMax]
                .iter()
                .map(|&e| EdgeRef::new(0, e))
                .collect()
        } else {
            vec![]
        };
        MultipatchModel {
            side: Side::Rotor,
            patches: vec![patch],
            tags: vec![RegionTag::RotorIron],
            magnetization: vec![None],
            interface_radius: 1.0,
            interface_edges: vec![],
            dirichlet_edges: edges,
            connectivity: vec![],
        }
    }

    #[test]
    fn bilinear_element_matrix() {
        let m = square_model(1, 1, false);
        let d = build_dof_map(&m).unwrap();
        let k = assemble_stiffness(&m, &d, &[1.0]).unwrap().to_dense();
        // Local order (0,0), (1,0), (0,1), (1,1).
        let exact = [
            [4.0, -1.0, -1.0, -2.0],
            [-1.0, 4.0, -2.0, -1.0],
            [-1.0, -2.0, 4.0, -1.0],
            [-2.0, -1.0, -1.0, 4.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[i][j] - exact[i][j] / 6.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_linear_in_nu() {
        let m = square_model(2, 3, true);
        let d = build_dof_map(&m).unwrap();
        let k1 = assemble_stiffness(&m, &d, &[1.0]).unwrap();
        let k3 = assemble_stiffness(&m, &d, &[3.0]).unwrap();
        for (a, b) in k1.values.iter().zip(&k3.values) {
            assert!((3.0 * a - b).abs() <= 1e-15 * b.abs());
        }
        assert!(matches!(
            assemble_stiffness(&m, &d, &[-1.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn linear_field_patch_test() {
        let m = square_model(2, 3, true);
        let d = build_dof_map(&m).unwrap();
        let k = assemble_stiffness_global(&m, &d, &[1.0]).unwrap();
        // Greville interpolation reproduces u = x exactly.
        let pts = d.global_points(&m);
        let u: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let r = k.mul_vec(&u);
        for g in 0..d.n_global {
            if !d.dirichlet[g] {
                assert!(r[g].abs() < 1e-13, "{}", r[g]);
            }
        }
    }

    #[test]
    fn demo_stiffness_spd_and_symmetric() {
        let cfg = MachineConfig::default();
        let (st, rt) = build_demo_machine(&cfg).unwrap();
        for m in [&st, &rt] {
            let d = build_dof_map(m).unwrap();
            let k = assemble_stiffness(m, &d, &patch_reluctivity(m, &cfg)).unwrap();
            assert_eq!(k.asymmetry(), 0.0);
            let f = factorize(&k).unwrap();
            let b: Vec<f64> = (0..k.n_rows).map(|i| (i as f64 * 0.7).cos()).collect();
            let x = f.solve(&b).unwrap();
            let r: Vec<f64> = k.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
            assert!(crate::linalg::norm2(&r) < 1e-10 * crate::linalg::norm2(&b));
            for s in 0..20 {
                let x: Vec<f64> = (0..k.n_rows)
                    .map(|i| ((i * (s + 3)) as f64).sin())
                    .collect();
                let kx = k.mul_vec(&x);
                assert!(x.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>() > 0.0);
            }
        }
    }

    #[test]
    fn no_load_and_sign_flip() {
        let cfg = MachineConfig::default();
        let (_, rt) = build_demo_machine(&cfg).unwrap();
        let d = build_dof_map(&rt).unwrap();
        let j = assemble_magnet_rhs(&rt, &d).unwrap();
        let mut flipped = rt.clone();
        for m in flipped.magnetization.iter_mut().flatten() {
            *m = m.scaled(-1.0);
        }
        let jf = assemble_magnet_rhs(&flipped, &d).unwrap();
        assert!(j.iter().zip(&jf).all(|(a, b)| *a == -*b));
        assert!(j.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn constant_magnetization_against_fine_quadrature() {
        let mut m = square_model(2, 2, false);
        // Curve the patch slightly so the map is not affine.
        m.patches[0].control_points[4][0] += 0.1;
        m.patches[0].weights[4] = 0.8;
        let mm = [0.3, -1.2];
        m.magnetization[0] = Some(Magnetization::Uniform { m: mm });
        let d = build_dof_map(&m).unwrap();
        let j = assemble_magnet_rhs(&m, &d).unwrap();
        let fine = patch_elements(&m.patches[0], 12).unwrap();
        let mut oracle = vec![0.0; d.n_global];
        for e in &fine {
            for q in &e.points {
                for (a, &l) in e.indices.iter().enumerate() {
                    let g = q.grads[a];
                    oracle[d.local_to_global[0][l]] += q.weight * (-mm[1] * g[0] + mm[0] * g[1]);
                }
            }
        }
        // The rational map makes the integrand non-polynomial; the p+1 rule is
        // close but not exact, so compare at the quadrature level of accuracy.
        let scale = oracle.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in j.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-3 * scale);
        }
        // With an affine map the default rule is exact.
        let mut flat = square_model(2, 2, false);
        flat.magnetization[0] = Some(Magnetization::Uniform { m: mm });
        let j = assemble_magnet_rhs(&flat, &d).unwrap();
        let fine = patch_elements(&flat.patches[0], 12).unwrap();
        let mut oracle = vec![0.0; d.n_global];
        for e in &fine {
            for q in &e.points {
                for (a, &l) in e.indices.iter().enumerate() {
                    let g = q.grads[a];
                    oracle[d.local_to_global[0][l]] += q.weight * (-mm[1] * g[0] + mm[0] * g[1]);
                }
            }
        }
        for (a, b) in j.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn winding_vector_properties() {
        let cfg = MachineConfig::default();
        let (st, _) = build_demo_machine(&cfg).unwrap();
        let d = build_dof_map(&st).unwrap();
        let ones = vec![1.0; d.n_free()];
        for phase in 1..=3 {
            let chi = assemble_winding_vector(&st, &d, phase, cfg.turns).unwrap();
            let s: f64 = chi.iter().zip(&ones).map(|(a, b)| a * b).sum();
            assert!(s.abs() < 1e-10 * cfg.turns, "phase {phase}: {s}");
            let chi2 = assemble_winding_vector(&st, &d, phase, 2.0 * cfg.turns).unwrap();
            assert!(chi
                .iter()
                .zip(&chi2)
                .all(|(a, b)| (2.0 * a - b).abs() <= 1e-15 * b.abs()));
        }
        // Single slot: u = 1 everywhere gives N_t.
        let k = st
            .tags
            .iter()
            .position(|t| matches!(t, RegionTag::Coil { .. }))
            .unwrap();
        let mut single = st.clone();
        for (i, t) in single.tags.iter_mut().enumerate() {
            if i != k {
                *t = RegionTag::StatorIron;
            }
        }
        let RegionTag::Coil { phase, positive } = st.tags[k] else {
            unreachable!()
        };
        let g = build_dof_map(&single).unwrap();
        let elements = model_elements(&single).unwrap();
        let chi = winding_from_elements(
            &single,
            &elements,
            &global_index(&g),
            g.n_global,
            phase,
            7.0,
        )
        .unwrap();
        let s: f64 = chi.iter().sum();
        let expect = if positive { 7.0 } else { -7.0 };
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn coupling_zero_order_column_sums() {
        let cfg = MachineConfig::default();
        let (st, rt) = build_demo_machine(&cfg).unwrap();
        let orders = [0i64, 1, -1, 5];
        for (m, sign) in [(&rt, 1.0), (&st, -1.0)] {
            let d = build_dof_map(m).unwrap();
            let g = assemble_coupling(m, &d, &orders, cfg.interface_radius).unwrap();
            let s: Complex64 = g.col(0).iter().sum();
            let exact = sign * 2.0 * PI * cfg.interface_radius;
            assert!((s.re - exact).abs() < 1e-12 && s.im.abs() < 1e-12, "{s}");
            for row in 0..d.n_free() {
                let on = d.interface_globals.contains(&d.free_to_global[row]);
                if !on {
                    assert!((0..orders.len()).all(|k| g[(row, k)] == Complex64::new(0.0, 0.0)));
                }
            }
            // Conjugate symmetry of +-l columns.
            for row in 0..d.n_free() {
                assert!((g[(row, 1)] - g[(row, 2)].conj()).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn coupling_orthogonality_improves_under_refinement() {
        let mut errs = Vec::new();
        for level in 0..3 {
            let cfg = MachineConfig {
                refinement: level,
                ..Default::default()
            };
            let (_, rt) = build_demo_machine(&cfg).unwrap();
            let d = build_dof_map(&rt).unwrap();
            let orders = [3i64, 6, 9];
            let g = assemble_coupling(&rt, &d, &orders, cfg.interface_radius).unwrap();
            // Control-point interpolant of e^{-i 3 theta}.
            let pts = d.global_points(&rt);
            let u: Vec<Complex64> = d
                .free_to_global
                .iter()
                .map(|&gl| {
                    let p = pts[gl];
                    Complex64::from_polar(1.0, -3.0 * p[1].atan2(p[0]))
                })
                .collect();
            let proj = g.adjoint_mul_vec(&u);
            let r = 2.0 * PI * cfg.interface_radius;
            let e0 = (proj[0] - r).norm() / r;
            let e1 = proj[1].norm() / r;
            errs.push(e0.max(e1));
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn vector_metric_properties() {
        let cfg = MachineConfig::default();
        let (_, rt) = build_demo_machine(&cfg).unwrap();
        let d = build_dof_map(&rt).unwrap();
        let mask: Vec<bool> = (0..d.n_global)
            .map(|g| !d.dirichlet[g] && !d.interface_globals.contains(&g))
            .collect();
        let b = assemble_vector_metric(&rt, &d, &mask).unwrap();
        assert_eq!(b.asymmetry(), 0.0);
        for i in 0..b.n_rows {
            for (j, v) in b.row(i) {
                assert!(i % 2 == j % 2 || v == 0.0);
            }
        }
        for s in 0..20 {
            let x: Vec<f64> = (0..b.n_rows)
                .map(|i| ((i * (s + 1)) as f64 * 0.37).sin())
                .collect();
            let bx = b.mul_vec(&x);
            assert!(x.iter().zip(&bx).map(|(a, c)| a * c).sum::<f64>() > 0.0);
        }
        assert!(matches!(
            assemble_vector_metric(&rt, &d, &vec![false; d.n_global]),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn constant_field_metric_is_area() {
        let m = square_model(2, 2, false);
        let d = build_dof_map(&m).unwrap();
        let mask = vec![true; d.n_global];
        let b = assemble_vector_metric(&m, &d, &mask).unwrap();
        let mut w = vec![0.0; b.n_rows];
        for i in 0..d.n_global {
            w[2 * i] = 1.0;
        }
        let bw = b.mul_vec(&w);
        let val: f64 = w.iter().zip(&bw).map(|(a, c)| a * c).sum();
        assert!((val - 1.0).abs() < 1e-13);
    }

    #[test]
    fn manufactured_solution_rate() {
        let exact = |x: Point| (PI * x[0]).sin() * (PI * x[1]).sin();
        let f = |x: Point| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin();
        let mut errs = Vec::new();
        for ne in [4, 8, 16] {
            let m = square_model(2, ne, true);
            let d = build_dof_map(&m).unwrap();
            let k = assemble_stiffness(&m, &d, &[1.0]).unwrap();
            let b = assemble_source(&m, &d, &f).unwrap();
            let u = factorize(&k).unwrap().solve(&b).unwrap();
            errs.push(l2_error(&m, &d, &d.expand(&u), &exact, 6).unwrap());
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 3.0).abs() < 0.2, "rate {rate}");
        }
    }
}
