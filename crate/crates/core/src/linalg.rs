//! Sparse storage, envelope Cholesky and LDL^T factorizations with reverse
//! Cuthill-McKee ordering, and dense complex LU.

use std::collections::VecDeque;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Sums duplicate entries in insertion order, so the result depends only
    /// on the triplet sequence.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last = None;
        for (r, c, v) in t {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n_cols = a.first().map_or(0, |r| r.len());
        let t = a
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(j, &v)| (i, j, v))
            })
            .collect();
        Self::from_triplets(a.len(), n_cols, t)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Largest `|A_ij - A_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Symmetric permutation `B[i][j] = A[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut t = Vec::with_capacity(self.nnz());
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, v) in self.row(old_i) {
                t.push((new_i, inv[old_j], v));
            }
        }
        Self::from_triplets(self.n_rows, self.n_cols, t)
    }
}

fn check_square(a: &SparseMatrix) -> Result<()> {
    if a.n_rows != a.n_cols {
        return Err(Error::DimensionMismatch {
            expected: a.n_rows,
            found: a.n_cols,
        });
    }
    Ok(())
}

/// Reverse Cuthill-McKee ordering of the leading `n` rows/columns of a
/// structurally symmetric matrix. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &SparseMatrix, n: usize) -> Vec<usize> {
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            a.row(i)
                .map(|(j, _)| j)
                .filter(|&j| j != i && j < n)
                .collect()
        })
        .collect();
    let deg: Vec<usize> = adj.iter().map(|v| v.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, mark: &mut Vec<bool>| -> Vec<Vec<usize>> {
        let mut levels = vec![vec![start]];
        let mut seen = mark.clone();
        seen[start] = true;
        loop {
            let mut next = Vec::new();
            for &u in levels.last().unwrap() {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        levels
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start: restart from a min-degree node of the last
        // level while the eccentricity grows.
        let mut start = seed;
        let mut levels = bfs(start, &mut visited);
        loop {
            let cand = *levels
                .last()
                .unwrap()
                .iter()
                .min_by_key(|&&v| (deg[v], v))
                .unwrap();
            let l2 = bfs(cand, &mut visited);
            if l2.len() > levels.len() {
                start = cand;
                levels = l2;
            } else {
                break;
            }
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        let comp_start = order.len();
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (deg[w], w));
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
        order[comp_start..].reverse();
    }
    order
}

/// Lower-triangular envelope storage of a symmetric matrix in a given order.
#[derive(Debug, Clone)]
struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl Envelope {
    fn build(a: &SparseMatrix, perm: &[usize]) -> Self {
        let n = perm.len();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, _) in a.row(old_i) {
                let new_j = inv[old_j];
                // Use both triangles so a slightly asymmetric pattern is still covered.
                let (hi, lo) = (new_i.max(new_j), new_i.min(new_j));
                first[hi] = first[hi].min(lo);
            }
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut vals = vec![0.0; start[n]];
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, v) in a.row(old_i) {
                let new_j = inv[old_j];
                if new_j <= new_i {
                    vals[start[new_i] + new_j - first[new_i]] = v;
                }
            }
        }
        Self { first, start, vals }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vals[self.start[i]..self.start[i + 1]]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Factorization of a symmetric matrix with reusable solves. `d` is `None`
/// for Cholesky (`L L^T`) and holds the pivots for `L D L^T` with unit `L`.
#[derive(Debug, Clone)]
pub struct SymmetricFactor {
    n: usize,
    perm: Vec<usize>,
    env: Envelope,
    d: Option<Vec<f64>>,
}

pub type SpdFactorization = SymmetricFactor;

impl SymmetricFactor {
    /// Envelope Cholesky under reverse Cuthill-McKee ordering.
    pub fn cholesky(a: &SparseMatrix) -> Result<Self> {
        check_square(a)?;
        let perm = rcm_ordering(a, a.n_rows);
        let mut env = Envelope::build(a, &perm);
        let n = a.n_rows;
        for i in 0..n {
            let fi = env.first[i];
            for j in fi..=i {
                let fj = env.first[j];
                let k0 = fi.max(fj);
                let s = {
                    let ri = &env.vals[env.start[i]..env.start[i + 1]];
                    let rj = &env.vals[env.start[j]..env.start[j + 1]];
                    dot(&ri[k0 - fi..j - fi], &rj[k0 - fj..j - fj])
                };
                let idx = env.start[i] + j - fi;
                if j < i {
                    let ljj = env.vals[env.start[j + 1] - 1];
                    env.vals[idx] = (env.vals[idx] - s) / ljj;
                } else {
                    let piv = env.vals[idx] - s;
                    if !(piv > 0.0) || !piv.is_finite() {
                        return Err(Error::Factorization {
                            index: perm[i],
                            pivot: piv,
                        });
                    }
                    env.vals[idx] = piv.sqrt();
                }
            }
        }
        Ok(Self {
            n,
            perm,
            env,
            d: None,
        })
    }

    /// `L D L^T` without pivoting. The leading `n - n_last` unknowns are
    /// reordered by reverse Cuthill-McKee; the trailing `n_last` stay last in
    /// natural order. Suited to quasi-definite saddle systems.
    pub fn ldlt_with_trailing(a: &SparseMatrix, n_last: usize) -> Result<Self> {
        check_square(a)?;
        let n = a.n_rows;
        let lead = n - n_last;
        let sub: Vec<(usize, usize, f64)> = (0..lead)
            .flat_map(|i| {
                a.row(i)
                    .filter(|&(j, _)| j < lead)
                    .map(move |(j, v)| (i, j, v))
            })
            .collect();
        let mut perm = rcm_ordering(&SparseMatrix::from_triplets(lead, lead, sub), lead);
        perm.extend(lead..n);
        let mut env = Envelope::build(a, &perm);
        let mut d = vec![0.0; n];
        for i in 0..n {
            let fi = env.first[i];
            let si = env.start[i];
            // Row entries become u_ij = L_ij d_j first, then L_ij.
            for j in fi..i {
                let fj = env.first[j];
                let k0 = fi.max(fj);
                let s = {
                    let ri = &env.vals[si..env.start[i + 1]];
                    let rj = &env.vals[env.start[j]..env.start[j + 1]];
                    dot(&ri[k0 - fi..j - fi], &rj[k0 - fj..j - fj])
                };
                env.vals[si + j - fi] -= s;
            }
            let mut piv = env.vals[si + i - fi];
            let mut scale = piv.abs();
            for j in fi..i {
                let u = env.vals[si + j - fi];
                let l = u / d[j];
                piv -= u * l;
                scale += (u * l).abs();
                env.vals[si + j - fi] = l;
            }
            // Relative to the magnitudes that formed the pivot, so blocks of
            // very different scale are handled alike.
            if !piv.is_finite() || piv.abs() <= 1e-13 * scale {
                return Err(Error::Factorization {
                    index: perm[i],
                    pivot: piv,
                });
            }
            d[i] = piv;
            env.vals[si + i - fi] = 1.0;
        }
        Ok(Self {
            n,
            perm,
            env,
            d: Some(d),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored envelope size, a proxy for factorization cost.
    pub fn envelope_len(&self) -> usize {
        self.env.vals.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        let unit = self.d.is_some();
        for i in 0..n {
            let fi = self.env.first[i];
            let r = self.env.row(i);
            let s = dot(&r[..i - fi], &y[fi..i]);
            y[i] -= s;
            if !unit {
                y[i] /= r[i - fi];
            }
        }
        if let Some(d) = &self.d {
            for i in 0..n {
                y[i] /= d[i];
            }
        }
        for i in (0..n).rev() {
            let fi = self.env.first[i];
            let r = self.env.row(i);
            if !unit {
                y[i] /= r[i - fi];
            }
            let yi = y[i];
            for (k, &l) in r[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

/// Envelope Cholesky of a symmetric positive definite matrix.
pub fn factorize(k: &SparseMatrix) -> Result<SpdFactorization> {
    SymmetricFactor::cholesky(k)
}

/// Column-wise solves, parallel over columns with ordered results.
pub fn solve_multi(f: &SymmetricFactor, cols: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    cols.par_iter().map(|c| f.solve(c)).collect()
}

/// Complex columns solved as separate real and imaginary solves.
pub fn solve_multi_complex(
    f: &SymmetricFactor,
    cols: &[Vec<Complex64>],
) -> Result<Vec<Vec<Complex64>>> {
    cols.par_iter()
        .map(|c| {
            let re: Vec<f64> = c.iter().map(|z| z.re).collect();
            let im: Vec<f64> = c.iter().map(|z| z.im).collect();
            let (xr, xi) = (f.solve(&re)?, f.solve(&im)?);
            Ok(xr
                .into_iter()
                .zip(xi)
                .map(|(a, b)| Complex64::new(a, b))
                .collect())
        })
        .collect()
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexDense {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexDense {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![Complex64::new(0.0, 0.0); n_rows * n_cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let data = rows.into_iter().flatten().collect();
        Self {
            n_rows,
            n_cols,
            data,
        }
    }

    /// Builds from columns.
    pub fn from_cols(cols: &[Vec<Complex64>]) -> Self {
        let n_cols = cols.len();
        let n_rows = cols.first().map_or(0, |c| c.len());
        let mut m = Self::zeros(n_rows, n_cols);
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn col(&self, j: usize) -> Vec<Complex64> {
        (0..self.n_rows).map(|i| self[(i, j)]).collect()
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n_cols);
        self.data
            .chunks(self.n_cols.max(1))
            .take(self.n_rows)
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `A^H x`.
    pub fn adjoint_mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n_rows);
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_cols];
        for (i, xi) in x.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self[(i, j)].conj() * xi;
            }
        }
        out
    }

    /// `A^H x` for a real vector.
    pub fn adjoint_mul_real(&self, x: &[f64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n_rows);
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.n_cols..(i + 1) * self.n_cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * xi;
            }
        }
        out
    }

    /// `A^H B`.
    pub fn adjoint_mul(&self, b: &ComplexDense) -> ComplexDense {
        assert_eq!(self.n_rows, b.n_rows);
        let mut out = ComplexDense::zeros(self.n_cols, b.n_cols);
        for k in 0..self.n_rows {
            let ra = &self.data[k * self.n_cols..(k + 1) * self.n_cols];
            let rb = &b.data[k * b.n_cols..(k + 1) * b.n_cols];
            for (i, a) in ra.iter().enumerate() {
                if *a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let ac = a.conj();
                let row = &mut out.data[i * b.n_cols..(i + 1) * b.n_cols];
                for (o, v) in row.iter_mut().zip(rb) {
                    *o += ac * v;
                }
            }
        }
        out
    }

    /// Infinity norm (max row sum of moduli).
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks(self.n_cols.max(1))
            .take(self.n_rows)
            .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ComplexDense) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for ComplexDense {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.n_cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexDense {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.n_cols + j]
    }
}

/// LU factors with partial pivoting.
#[derive(Debug, Clone)]
pub struct ComplexLu {
    lu: ComplexDense,
    piv: Vec<usize>,
}

impl ComplexLu {
    pub fn new(a: &ComplexDense) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::DimensionMismatch {
                expected: a.n_rows,
                found: a.n_cols,
            });
        }
        let n = a.n_rows;
        let tol = 1e-14 * a.norm_inf();
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |b, c| if c.1 > b.1 { c } else { b });
            if !(pmax > tol) || !pmax.is_finite() {
                return Err(Error::Singular {
                    index: k,
                    pivot: pmax,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in k + 1..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= f * v;
                }
            }
        }
        Ok(Self { lu, piv })
    }

    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.piv.len();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let mut x: Vec<Complex64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }
}

pub fn complex_lu_solve(a: &ComplexDense, b: &[Complex64]) -> Result<Vec<Complex64>> {
    ComplexLu::new(a)?.solve(b)
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cnorm2(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}
