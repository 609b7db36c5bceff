//! B-spline and NURBS kernels: knot vectors, Cox-de Boor evaluation with first
//! derivatives, rational tensor-product patches and Boehm knot insertion.
//!
//! Indexing is 0-based. Basis function `i` here is `B_{i+1,p}` in the usual
//! 1-based notation. Parameters live in `[0, 1]`; `xi = 1` is evaluated in the
//! last nonempty span.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Open (clamped) knot vector on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KnotVectorRepr", into = "KnotVectorRepr")]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

#[derive(Serialize, Deserialize)]
struct KnotVectorRepr {
    degree: usize,
    knots: Vec<f64>,
}

impl TryFrom<KnotVectorRepr> for KnotVector {
    type Error = Error;
    fn try_from(r: KnotVectorRepr) -> Result<Self> {
        KnotVector::new(r.knots, r.degree)
    }
}

impl From<KnotVector> for KnotVectorRepr {
    fn from(k: KnotVector) -> Self {
        KnotVectorRepr {
            degree: k.degree,
            knots: k.knots,
        }
    }
}

impl KnotVector {
    /// Validates and, if needed, rescales `knots` to `[0, 1]`.
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        let p = degree;
        let m = knots.len();
        if m < 2 * (p + 1) {
            return Err(Error::InvalidInput(format!(
                "knot vector of length {m} too short for degree {p}"
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidInput("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("knots must be nondecreasing".into()));
        }
        let (lo, hi) = (knots[0], knots[m - 1]);
        if hi <= lo {
            return Err(Error::InvalidInput("empty parameter range".into()));
        }
        let knots: Vec<f64> = if lo == 0.0 && hi == 1.0 {
            knots
        } else {
            knots
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    if i + 1 == m || k == hi {
                        1.0
                    } else {
                        (k - lo) / (hi - lo)
                    }
                })
                .collect()
        };
        if knots[..=p].iter().any(|&k| k != 0.0) || knots[m - 1 - p..].iter().any(|&k| k != 1.0) {
            return Err(Error::InvalidInput(format!(
                "knot vector is not clamped (end multiplicity must be {})",
                p + 1
            )));
        }
        let mut i = p + 1;
        while i < m - p - 1 {
            let mut j = i;
            while j + 1 < m - p - 1 && knots[j + 1] == knots[i] {
                j += 1;
            }
            if j - i + 1 > p.max(1) {
                return Err(Error::InvalidInput(format!(
                    "interior knot {} has multiplicity {} > degree {p}",
                    knots[i],
                    j - i + 1
                )));
            }
            i = j + 1;
        }
        Ok(Self { knots, degree })
    }

    /// Uniform open knot vector with `elements` spans.
    pub fn uniform(degree: usize, elements: usize) -> Result<Self> {
        let elements = elements.max(1);
        let mut k = vec![0.0; degree + 1];
        k.extend((1..elements).map(|i| i as f64 / elements as f64));
        k.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(k, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Basis dimension `n`.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct knot values, i.e. element boundaries.
    pub fn breaks(&self) -> Vec<f64> {
        let mut b: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if b.last() != Some(&k) {
                b.push(k);
            }
        }
        b
    }

    /// Index `i` with `knots[i] <= xi < knots[i+1]`; `xi = 1` maps to `n - 1`.
    pub fn find_span(&self, xi: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::Domain { value: xi });
        }
        let n = self.dim();
        let p = self.degree;
        if xi >= self.knots[n] {
            return Ok(n - 1);
        }
        let (mut lo, mut hi) = (p, n);
        let mut mid = (lo + hi) / 2;
        while xi < self.knots[mid] || xi >= self.knots[mid + 1] {
            if xi < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        Ok(mid)
    }

    /// Nonzero basis values and first derivatives at `xi`.
    pub fn basis(&self, xi: f64) -> Result<BasisValues> {
        let span = self.find_span(xi)?;
        let (values, derivs) = self.basis_in_span(span, xi);
        Ok(BasisValues {
            span,
            values,
            derivs,
        })
    }

    /// Cox-de Boor triangle with first derivatives for a known span.
    pub(crate) fn basis_in_span(&self, span: usize, xi: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.degree;
        let u = &self.knots;
        // ndu[j][r]: upper triangle holds basis values, lower triangle knot differences.
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - u[span + 1 - j];
            right[j] = u[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = if ndu[j][r] == 0.0 {
                    0.0
                } else {
                    ndu[r][j - 1] / ndu[j][r]
                };
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let values: Vec<f64> = (0..=p).map(|j| ndu[j][p]).collect();
        let mut derivs = vec![0.0; p + 1];
        if p > 0 {
            for (r, d) in derivs.iter_mut().enumerate() {
                let mut acc = 0.0;
                if r >= 1 {
                    let denom = ndu[p][r - 1];
                    if denom != 0.0 {
                        acc += ndu[r - 1][p - 1] / denom;
                    }
                }
                if r < p {
                    let denom = ndu[p][r];
                    if denom != 0.0 {
                        acc -= ndu[r][p - 1] / denom;
                    }
                }
                *d = acc * p as f64;
            }
        }
        (values, derivs)
    }

    /// Inserts a single interior knot, returning the new vector and the span used.
    fn with_knot(&self, xi: f64) -> Result<(KnotVector, usize)> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::InvalidInput(format!(
                "inserted knot {xi} must lie strictly inside (0, 1)"
            )));
        }
        let span = self.find_span(xi)?;
        let mut k = self.knots.clone();
        k.insert(span + 1, xi);
        Ok((KnotVector::new(k, self.degree)?, span))
    }

    /// Greville abscissae (control point parameters).
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.dim())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }
}

/// Nonzero basis functions on one span: entry `r` belongs to basis `span - p + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisValues {
    pub span: usize,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl BasisValues {
    pub fn first_index(&self) -> usize {
        self.span + 1 - self.values.len()
    }
}

/// Cox-de Boor values and first derivatives at `xi`.
pub fn bspline_basis(kv: &KnotVector, xi: f64) -> Result<BasisValues> {
    kv.basis(xi)
}

/// Rational basis `w_i B_i / sum_k w_k B_k` with first derivatives.
pub fn nurbs_basis(kv: &KnotVector, weights: &[f64], xi: f64) -> Result<BasisValues> {
    if weights.len() != kv.dim() {
        return Err(Error::DimensionMismatch {
            expected: kv.dim(),
            found: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::InvalidInput(format!("nonpositive weight {w}")));
    }
    let b = kv.basis(xi)?;
    let first = b.first_index();
    let w = &weights[first..first + b.values.len()];
    let (mut sw, mut dsw) = (0.0, 0.0);
    for r in 0..b.values.len() {
        sw += w[r] * b.values[r];
        dsw += w[r] * b.derivs[r];
    }
    let values = (0..b.values.len())
        .map(|r| w[r] * b.values[r] / sw)
        .collect();
    let derivs = (0..b.values.len())
        .map(|r| w[r] * (b.derivs[r] * sw - b.values[r] * dsw) / (sw * sw))
        .collect();
    Ok(BasisValues {
        span: b.span,
        values,
        derivs,
    })
}

/// Evaluates a planar NURBS curve.
pub fn eval_curve(kv: &KnotVector, weights: &[f64], points: &[Point], xi: f64) -> Result<Point> {
    let b = nurbs_basis(kv, weights, xi)?;
    let first = b.first_index();
    let mut out = [0.0; 2];
    for (r, v) in b.values.iter().enumerate() {
        out[0] += v * points[first + r][0];
        out[1] += v * points[first + r][1];
    }
    Ok(out)
}

/// Tensor-product rational patch. Control points are stored with the `u`
/// index running fastest: `index = i + n_u * j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NurbsPatch {
    pub knots_u: KnotVector,
    pub knots_v: KnotVector,
    pub control_points: Vec<Point>,
    pub weights: Vec<f64>,
}

/// Rational basis on a patch at one parametric point: local control point
/// indices, values and parametric derivatives.
#[derive(Debug, Clone)]
pub struct PatchBasis {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub d_xi: Vec<f64>,
    pub d_eta: Vec<f64>,
}

impl NurbsPatch {
    pub fn new(
        knots_u: KnotVector,
        knots_v: KnotVector,
        control_points: Vec<Point>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = knots_u.dim() * knots_v.dim();
        if control_points.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: control_points.len(),
            });
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidInput(format!("nonpositive weight {w}")));
        }
        Ok(Self {
            knots_u,
            knots_v,
            control_points,
            weights,
        })
    }

    pub fn n_u(&self) -> usize {
        self.knots_u.dim()
    }

    pub fn n_v(&self) -> usize {
        self.knots_v.dim()
    }

    pub fn len(&self) -> usize {
        self.control_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control_points.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n_u() * j
    }

    /// Combines univariate B-spline values into the rational bivariate basis.
    pub fn rational_basis(&self, bu: &BasisValues, bv: &BasisValues) -> PatchBasis {
        let (fu, fv) = (bu.first_index(), bv.first_index());
        let nloc = bu.values.len() * bv.values.len();
        let mut indices = Vec::with_capacity(nloc);
        let mut values = Vec::with_capacity(nloc);
        let mut d_xi = Vec::with_capacity(nloc);
        let mut d_eta = Vec::with_capacity(nloc);
        let (mut w, mut wu, mut wv) = (0.0, 0.0, 0.0);
        for (b, (&nv, &dv)) in bv.values.iter().zip(&bv.derivs).enumerate() {
            for (a, (&nu, &du)) in bu.values.iter().zip(&bu.derivs).enumerate() {
                let idx = self.index(fu + a, fv + b);
                let wt = self.weights[idx];
                indices.push(idx);
                values.push(wt * nu * nv);
                d_xi.push(wt * du * nv);
                d_eta.push(wt * nu * dv);
                w += wt * nu * nv;
                wu += wt * du * nv;
                wv += wt * nu * dv;
            }
        }
        let w2 = w * w;
        for k in 0..nloc {
            let v = values[k];
            d_xi[k] = (d_xi[k] * w - v * wu) / w2;
            d_eta[k] = (d_eta[k] * w - v * wv) / w2;
            values[k] = v / w;
        }
        PatchBasis {
            indices,
            values,
            d_xi,
            d_eta,
        }
    }

    pub fn basis_at(&self, xi: f64, eta: f64) -> Result<PatchBasis> {
        let bu = self.knots_u.basis(xi)?;
        let bv = self.knots_v.basis(eta)?;
        Ok(self.rational_basis(&bu, &bv))
    }

    /// Maps a local basis to the physical point and the Jacobian `dF/d(xi, eta)`.
    pub fn map_with(&self, basis: &PatchBasis) -> (Point, Mat2) {
        let mut x = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for (k, &idx) in basis.indices.iter().enumerate() {
            let p = self.control_points[idx];
            for c in 0..2 {
                x[c] += basis.values[k] * p[c];
                jac[c][0] += basis.d_xi[k] * p[c];
                jac[c][1] += basis.d_eta[k] * p[c];
            }
        }
        (x, jac)
    }

    /// Physical point `F(xi, eta)` and Jacobian.
    pub fn eval(&self, xi: f64, eta: f64) -> Result<(Point, Mat2)> {
        Ok(self.map_with(&self.basis_at(xi, eta)?))
    }

    /// Refines by knot insertion without changing the geometry.
    pub fn insert_knots(&self, new_u: &[f64], new_v: &[f64]) -> Result<NurbsPatch> {
        let mut out = self.clone();
        let mut us = new_u.to_vec();
        us.sort_by(f64::total_cmp);
        let mut vs = new_v.to_vec();
        vs.sort_by(f64::total_cmp);
        for &xi in &us {
            out = out.insert_one(xi, true)?;
        }
        for &eta in &vs {
            out = out.insert_one(eta, false)?;
        }
        Ok(out)
    }

    fn insert_one(&self, t: f64, along_u: bool) -> Result<NurbsPatch> {
        let kv = if along_u {
            &self.knots_u
        } else {
            &self.knots_v
        };
        let (new_kv, span) = kv.with_knot(t)?;
        let p = kv.degree();
        let knots = kv.knots();
        let n = kv.dim();
        let (n_u, n_v) = (self.n_u(), self.n_v());
        let lines = if along_u { n_v } else { n_u };
        let (new_nu, new_nv) = if along_u {
            (n_u + 1, n_v)
        } else {
            (n_u, n_v + 1)
        };
        let mut pts = vec![[0.0; 2]; new_nu * new_nv];
        let mut wts = vec![0.0; new_nu * new_nv];
        for line in 0..lines {
            let old = |i: usize| {
                if along_u {
                    i + n_u * line
                } else {
                    line + n_u * i
                }
            };
            let new = |i: usize| {
                if along_u {
                    i + new_nu * line
                } else {
                    line + new_nu * i
                }
            };
            // Homogeneous coordinates (w x, w y, w).
            let hom = |i: usize| {
                let k = old(i);
                let w = self.weights[k];
                let c = self.control_points[k];
                [w * c[0], w * c[1], w]
            };
            for i in 0..=n {
                let q = if i + p <= span {
                    hom(i)
                } else if i > span {
                    hom(i - 1)
                } else {
                    let a = (t - knots[i]) / (knots[i + p] - knots[i]);
                    let (hi, lo) = (hom(i), hom(i - 1));
                    [
                        a * hi[0] + (1.0 - a) * lo[0],
                        a * hi[1] + (1.0 - a) * lo[1],
                        a * hi[2] + (1.0 - a) * lo[2],
                    ]
                };
                let k = new(i);
                wts[k] = q[2];
                pts[k] = [q[0] / q[2], q[1] / q[2]];
            }
        }
        let (ku, kv2) = if along_u {
            (new_kv, self.knots_v.clone())
        } else {
            (self.knots_u.clone(), new_kv)
        };
        NurbsPatch::new(ku, kv2, pts, wts)
    }
}

/// `F(xi, eta)` and its Jacobian.
pub fn eval_patch(patch: &NurbsPatch, xi: f64, eta: f64) -> Result<(Point, Mat2)> {
    patch.eval(xi, eta)
}

/// Knot insertion preserving the mapped geometry.
pub fn insert_knots(patch: &NurbsPatch, new_u: &[f64], new_v: &[f64]) -> Result<NurbsPatch> {
    patch.insert_knots(new_u, new_v)
}

pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}
