use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::chol::{
    cholesky_with_tol, inverse_from_chol, logdet_from_chol, solve_matrix_with_chol,
    solve_with_chol,
};
use super::{Scope, VarId};

/// Pivot tolerance for positive-definiteness checks.
pub const PD_PIVOT_TOL: f64 = 1e-10;

/// Tolerance within which precision/covariance matrices are considered
/// symmetric; construction symmetrizes, so this is only a diagnostic bound.
pub const SYMMETRY_TOL: f64 = 1e-9;

const LN_2PI: f64 = 1.837877066409345483560659472811235279722794947275566825634;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GaussError {
    #[error("matrix or vector dimensions do not match the scope")]
    DimMismatch,
    #[error("variable {0} appears with two different dimensions")]
    ConflictingDims(u32),
    #[error("operand scope is not contained in the factor scope")]
    ScopeViolation,
    #[error("eliminated block is not positive definite, cannot integrate over it")]
    NotIntegrable,
    #[error("precision matrix is not positive definite, not a proper density")]
    NotNormalizable,
    #[error("noise variance must be strictly positive")]
    InvalidNoise,
    #[error("evidence assignment does not cover the requested variables")]
    BadEvidence,
}

/// Values assigned to a set of variables, used for conditioning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    values: BTreeMap<VarId, DVector<f64>>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_scalar(&mut self, var: VarId, value: f64) {
        assert_eq!(var.dim(), 1, "scalar assignment to a vector variable");
        self.values.insert(var, DVector::from_element(1, value));
    }

    pub fn set(&mut self, var: VarId, value: DVector<f64>) {
        assert_eq!(var.dim(), value.len(), "assignment dimension mismatch");
        self.values.insert(var, value);
    }

    pub fn get(&self, var: VarId) -> Option<&DVector<f64>> {
        self.values.get(&var)
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.values.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A Gaussian factor in information form: `exp(-1/2 x'Px + h'x + g)` over the
/// variables of its scope, where `P` is the precision matrix and `h` the
/// information vector.
///
/// The representation is closed under multiplication, division,
/// marginalization, and conditioning, and it can express improper factors
/// (likelihoods, ratios) whose precision is not positive definite. The scale
/// term `g` is carried through every operation but deliberately excluded from
/// distribution equality: two factors that differ only in `g` describe the
/// same distribution after normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFactor {
    scope: Scope,
    prec: DMatrix<f64>,
    info: DVector<f64>,
    log_scale: f64,
}

impl GaussianFactor {
    /// The factor that is identically one: zero information over `scope`.
    pub fn uniform(scope: Scope) -> Self {
        let d = scope.total_dim();
        Self {
            scope,
            prec: DMatrix::zeros(d, d),
            info: DVector::zeros(d),
            log_scale: 0.0,
        }
    }

    pub fn from_information(
        scope: Scope,
        prec: DMatrix<f64>,
        info: DVector<f64>,
        log_scale: f64,
    ) -> Result<Self, GaussError> {
        let d = scope.total_dim();
        if prec.nrows() != d || prec.ncols() != d || info.len() != d {
            return Err(GaussError::DimMismatch);
        }
        let prec = symmetrize(prec);
        Ok(Self {
            scope,
            prec,
            info,
            log_scale,
        })
    }

    /// Build a normalized density from mean and covariance. The covariance
    /// must be positive definite.
    pub fn from_moments(
        scope: Scope,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    ) -> Result<Self, GaussError> {
        let d = scope.total_dim();
        if cov.nrows() != d || cov.ncols() != d || mean.len() != d {
            return Err(GaussError::DimMismatch);
        }
        let cov = symmetrize(cov);
        let l = cholesky_with_tol(&cov, PD_PIVOT_TOL).ok_or(GaussError::NotNormalizable)?;
        let prec = symmetrize(inverse_from_chol(&l));
        let info = &prec * &mean;
        // Chosen so the factor integrates to one.
        let log_scale =
            -0.5 * mean.dot(&info) - 0.5 * (d as f64 * LN_2PI + logdet_from_chol(&l));
        Ok(Self {
            scope,
            prec,
            info,
            log_scale,
        })
    }

    /// The conditional density of a linear-Gaussian measurement
    /// `out = sum(coeff_i * parent_i) + offset + noise`, as a factor over
    /// `{out} ∪ parents`. All variables must be scalar.
    pub fn linear_gaussian(
        out: VarId,
        parents: &[(VarId, f64)],
        offset: f64,
        noise_var: f64,
    ) -> Result<Self, GaussError> {
        if !(noise_var > 0.0) {
            return Err(GaussError::InvalidNoise);
        }
        if out.dim() != 1 || parents.iter().any(|(v, _)| v.dim() != 1) {
            return Err(GaussError::DimMismatch);
        }
        let mut vars: Vec<VarId> = parents.iter().map(|(v, _)| *v).collect();
        vars.push(out);
        let scope = Scope::new(vars);
        if scope.len() != parents.len() + 1 {
            return Err(GaussError::ConflictingDims(out.id()));
        }
        let d = scope.total_dim();
        // Residual weights: +1 on the output, -coeff on each parent.
        let mut w = DVector::zeros(d);
        w[scope.offset_of(out).unwrap()] = 1.0;
        for (v, c) in parents {
            w[scope.offset_of(*v).unwrap()] = -c;
        }
        let j = 1.0 / noise_var;
        let prec = symmetrize(j * &w * w.transpose());
        let info = (offset * j) * &w;
        let log_scale = -offset * offset * j / 2.0 - 0.5 * (LN_2PI + noise_var.ln());
        Ok(Self {
            scope,
            prec,
            info,
            log_scale,
        })
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.prec
    }

    pub fn information(&self) -> &DVector<f64> {
        &self.info
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Total dimension of the underlying matrix.
    pub fn dim(&self) -> usize {
        self.scope.total_dim()
    }

    /// Pointwise product: information parameters add over the union scope.
    pub fn multiply(&self, other: &Self) -> Result<Self, GaussError> {
        let scope = checked_union(&self.scope, &other.scope)?;
        let d = scope.total_dim();
        let mut prec = DMatrix::zeros(d, d);
        let mut info = DVector::zeros(d);
        scatter_add(&mut prec, &mut info, self, &scope, 1.0);
        scatter_add(&mut prec, &mut info, other, &scope, 1.0);
        Ok(Self {
            scope,
            prec,
            info,
            log_scale: self.log_scale + other.log_scale,
        })
    }

    /// Pointwise quotient. The divisor's scope must be contained in this
    /// factor's scope.
    pub fn divide(&self, other: &Self) -> Result<Self, GaussError> {
        if !other.scope.is_subset_of(&self.scope) {
            return Err(GaussError::ScopeViolation);
        }
        let mut out = self.clone();
        let mut prec = std::mem::take(&mut out.prec);
        let mut info = std::mem::take(&mut out.info);
        scatter_add(&mut prec, &mut info, other, &out.scope, -1.0);
        out.prec = prec;
        out.info = info;
        out.log_scale -= other.log_scale;
        Ok(out)
    }

    /// Integrate out all variables not in `keep`. Fails unless the
    /// eliminated block of the precision matrix is positive definite.
    pub fn marginalize(&self, keep: &Scope) -> Result<Self, GaussError> {
        if !keep.is_subset_of(&self.scope) {
            return Err(GaussError::ScopeViolation);
        }
        let elim = self.scope.difference(keep);
        if elim.is_empty() {
            return Ok(self.clone());
        }
        let (ki, ei) = self.partition_indices(keep);
        let p_kk = gather_matrix(&self.prec, &ki, &ki);
        let p_ke = gather_matrix(&self.prec, &ki, &ei);
        let p_ee = gather_matrix(&self.prec, &ei, &ei);
        let h_k = gather_vector(&self.info, &ki);
        let h_e = gather_vector(&self.info, &ei);

        let l = cholesky_with_tol(&p_ee, PD_PIVOT_TOL).ok_or(GaussError::NotIntegrable)?;
        let sol_he = solve_with_chol(&l, &h_e);
        let sol_pek = solve_matrix_with_chol(&l, &p_ke.transpose());
        let prec = symmetrize(&p_kk - &p_ke * &sol_pek);
        let info = &h_k - &p_ke * &sol_he;
        let de = ei.len() as f64;
        let log_scale = self.log_scale
            + 0.5 * (de * LN_2PI - logdet_from_chol(&l) + h_e.dot(&sol_he));
        Ok(Self {
            scope: keep.clone(),
            prec,
            info,
            log_scale,
        })
    }

    /// Marginalization that tolerates non-definite eliminated blocks by
    /// using an eigenvalue pseudo-inverse. Returns the result and a flag
    /// that is true when the elimination was exact (block positive
    /// definite), false when the pseudo-inverse fallback was engaged.
    pub fn marginalize_generalized(&self, keep: &Scope) -> Result<(Self, bool), GaussError> {
        match self.marginalize(keep) {
            Ok(f) => Ok((f, true)),
            Err(GaussError::ScopeViolation) => Err(GaussError::ScopeViolation),
            Err(_) => {
                let (ki, ei) = self.partition_indices(keep);
                let p_kk = gather_matrix(&self.prec, &ki, &ki);
                let p_ke = gather_matrix(&self.prec, &ki, &ei);
                let p_ee = gather_matrix(&self.prec, &ei, &ei);
                let h_k = gather_vector(&self.info, &ki);
                let h_e = gather_vector(&self.info, &ei);

                let eig = p_ee.symmetric_eigen();
                let mut pinv = DMatrix::zeros(ei.len(), ei.len());
                for (i, ev) in eig.eigenvalues.iter().enumerate() {
                    if ev.abs() > PD_PIVOT_TOL {
                        let q = eig.eigenvectors.column(i);
                        pinv += (1.0 / ev) * &q * q.transpose();
                    }
                }
                let prec = symmetrize(&p_kk - &p_ke * &pinv * p_ke.transpose());
                let info = &h_k - &p_ke * &pinv * &h_e;
                // The normalization constant diverges here; keep the scale
                // untouched and rely on the caller treating the result as an
                // improper summary.
                Ok((
                    Self {
                        scope: keep.clone(),
                        prec,
                        info,
                        log_scale: self.log_scale,
                    },
                    false,
                ))
            }
        }
    }

    /// Fix the listed variables to their assigned values, producing a factor
    /// over the remaining variables.
    pub fn condition(&self, evidence: &Assignment) -> Result<Self, GaussError> {
        let fixed: Scope = evidence
            .vars()
            .filter(|v| self.scope.contains(*v))
            .collect();
        if fixed.is_empty() {
            return Ok(self.clone());
        }
        let keep = self.scope.difference(&fixed);
        let (ki, ei) = self.partition_indices(&keep);
        let mut x = DVector::zeros(ei.len());
        let mut at = 0;
        for v in fixed.iter() {
            let val = evidence.get(v).ok_or(GaussError::BadEvidence)?;
            for k in 0..v.dim() {
                x[at + k] = val[k];
            }
            at += v.dim();
        }
        let p_kk = gather_matrix(&self.prec, &ki, &ki);
        let p_ke = gather_matrix(&self.prec, &ki, &ei);
        let p_ee = gather_matrix(&self.prec, &ei, &ei);
        let h_k = gather_vector(&self.info, &ki);
        let h_e = gather_vector(&self.info, &ei);
        let info = &h_k - &p_ke * &x;
        let log_scale = self.log_scale + h_e.dot(&x) - 0.5 * (&x.transpose() * &p_ee * &x)[0];
        Ok(Self {
            scope: keep,
            prec: p_kk,
            info,
            log_scale,
        })
    }

    /// True when the factor is a proper (integrable) density: its precision
    /// matrix is positive definite within the pivot tolerance.
    pub fn is_normalizable(&self) -> bool {
        cholesky_with_tol(&self.prec, PD_PIVOT_TOL).is_some()
    }

    /// Mean and covariance. Fails when the factor is not normalizable.
    pub fn moment_stats(&self) -> Result<(DVector<f64>, DMatrix<f64>), GaussError> {
        let l = cholesky_with_tol(&self.prec, PD_PIVOT_TOL).ok_or(GaussError::NotNormalizable)?;
        let cov = symmetrize(inverse_from_chol(&l));
        let mean = solve_with_chol(&l, &self.info);
        Ok((mean, cov))
    }

    /// Log of the factor's total integral.
    pub fn log_mass(&self) -> Result<f64, GaussError> {
        let l = cholesky_with_tol(&self.prec, PD_PIVOT_TOL).ok_or(GaussError::NotNormalizable)?;
        let mu = solve_with_chol(&l, &self.info);
        Ok(self.log_scale
            + 0.5 * (self.dim() as f64 * LN_2PI - logdet_from_chol(&l) + self.info.dot(&mu)))
    }

    /// Same distribution with the scale adjusted to integrate to one.
    pub fn normalized(&self) -> Result<Self, GaussError> {
        let mass = self.log_mass()?;
        let mut out = self.clone();
        out.log_scale -= mass;
        Ok(out)
    }

    /// Largest absolute difference in distribution parameters (precision and
    /// information vector; the scale term is excluded). Infinite when the
    /// scopes differ.
    pub fn dist_param_delta(&self, other: &Self) -> f64 {
        if self.scope != other.scope {
            return f64::INFINITY;
        }
        let dp = (&self.prec - &other.prec).abs().max();
        let dh = (&self.info - &other.info).abs().max();
        dp.max(dh)
    }

    /// Distribution equality within an absolute tolerance on the information
    /// parameters; the scale term is excluded.
    pub fn approx_eq_dist(&self, other: &Self, tol: f64) -> bool {
        self.dist_param_delta(other) <= tol
    }

    /// Matrix index lists for (kept, eliminated) variables.
    fn partition_indices(&self, keep: &Scope) -> (Vec<usize>, Vec<usize>) {
        let mut ki = Vec::new();
        let mut ei = Vec::new();
        let mut at = 0;
        for v in self.scope.iter() {
            let idx = at..at + v.dim();
            if keep.contains(v) {
                ki.extend(idx);
            } else {
                ei.extend(idx);
            }
            at += v.dim();
        }
        (ki, ei)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (&m + m.transpose())
}

fn checked_union(a: &Scope, b: &Scope) -> Result<Scope, GaussError> {
    for v in b.iter() {
        if let Some(w) = a.vars().iter().find(|w| w.id() == v.id()) {
            if w.dim() != v.dim() {
                return Err(GaussError::ConflictingDims(v.id()));
            }
        }
    }
    Ok(a.union(b))
}

/// Add `weight` times `src`'s parameters into the target arrays laid out for
/// `dst_scope`.
fn scatter_add(
    prec: &mut DMatrix<f64>,
    info: &mut DVector<f64>,
    src: &GaussianFactor,
    dst_scope: &Scope,
    weight: f64,
) {
    let map = embed_map(&src.scope, dst_scope);
    for (i, &ti) in map.iter().enumerate() {
        info[ti] += weight * src.info[i];
        for (j, &tj) in map.iter().enumerate() {
            prec[(ti, tj)] += weight * src.prec[(i, j)];
        }
    }
}

/// For each matrix index of `src`, the corresponding index in `dst`.
fn embed_map(src: &Scope, dst: &Scope) -> Vec<usize> {
    let mut map = Vec::with_capacity(src.total_dim());
    for v in src.iter() {
        let off = dst
            .offset_of(v)
            .expect("embedding scope must contain source variables");
        map.extend(off..off + v.dim());
    }
    map
}

fn gather_matrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn gather_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}
