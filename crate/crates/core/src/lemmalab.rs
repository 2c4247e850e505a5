//! Finite-sample checks of the feature-sharing lemmas.
//!
//! Features are drawn as Gaussian vectors, which satisfies the
//! absolute-continuity assumption. Target logits follow the sign construction
//! `z = 2 M(y, n) - 1`. "Arbitrarily small loss" is read as hitting those
//! targets exactly, so each check reduces to the residual of a linear
//! least-squares problem.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::annealer;
use crate::codebook::CodeMatrix;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};

/// Residual below which a system counts as solved.
pub const SOLVED_TOL: f64 = 1e-8;
/// Residual above which an infeasible system counts as bounded away from 0.
pub const INFEASIBLE_TOL: f64 = 1e-3;

/// Principal features `f^y_n`, noise level and optional per-branch
/// permutations `S_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    /// Indexed `[y][n]`, each of length `F`.
    pub principal_features: Vec<Vec<Vec<f64>>>,
    pub noise_sigma: f64,
    pub permutations: Option<Vec<Vec<usize>>>,
}

impl FeatureModel {
    pub fn validate(&self) -> Result<()> {
        let f = self
            .principal_features
            .first()
            .and_then(|r| r.first())
            .map_or(0, Vec::len);
        if f == 0 {
            return Err(invalid("feature model needs at least one non-empty vector"));
        }
        let n = self.principal_features[0].len();
        if self.principal_features.iter().any(|r| r.len() != n || r.iter().any(|v| v.len() != f)) {
            return Err(invalid("principal features must be an M x N grid of F-vectors"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma must be >= 0"));
        }
        if let Some(perms) = &self.permutations {
            if perms.len() != n {
                return Err(invalid("one permutation per branch required"));
            }
            for p in perms {
                let mut seen = vec![false; f];
                if p.len() != f || p.iter().any(|&i| i >= f || std::mem::replace(&mut seen[i], true)) {
                    return Err(invalid("permutation is not a bijection on the feature indices"));
                }
            }
        }
        Ok(())
    }
}

fn gaussian(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
}

/// Least-squares solution by normal equations and by SVD.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: DVector<f64>,
    /// `||A x - b|| / ||b||` of the SVD solution.
    pub residual: f64,
    /// Relative difference between the two solver paths, when the normal
    /// equations were positive definite.
    pub agreement: Option<f64>,
}

/// Minimum-norm least squares of `A x = b`.
///
/// The primary path solves the normal equations with a Cholesky factor
/// (`A^T A` for tall systems, `A A^T` for wide ones); the second path uses the
/// SVD pseudo-inverse. Rank-deficient systems only have the SVD path.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LstsqSolution> {
    if a.nrows() != b.len() || a.nrows() == 0 || a.ncols() == 0 {
        return Err(invalid("system shape mismatch"));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let x = svd.solve(b, tol).map_err(|e| invalid(e.to_string()))?;
    let normal = if a.nrows() >= a.ncols() {
        (a.transpose() * a).cholesky().map(|c| c.solve(&(a.transpose() * b)))
    } else {
        (a * a.transpose()).cholesky().map(|c| a.transpose() * c.solve(b))
    };
    let agreement = normal.map(|xn| (&xn - &x).norm() / x.norm().max(1.0));
    let bn = b.norm();
    let r = (a * &x - b).norm();
    let residual = if bn > 0.0 { r / bn } else { r };
    Ok(LstsqSolution { x, residual, agreement })
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let cols = rows[0].len();
    DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied())
}

fn sign_target(bit: usize) -> f64 {
    if bit == 1 {
        1.0
    } else {
        -1.0
    }
}

fn trial_code(m: usize, n: usize, rng: &mut Rng) -> Result<CodeMatrix> {
    annealer::random_matrix(m, n, 2, rng)
}

/// Track of the worst solver disagreement seen.
fn merge_agreement(acc: &mut f64, s: &LstsqSolution) {
    if let Some(a) = s.agreement {
        *acc = acc.max(a);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Report {
    pub trials: usize,
    pub feature_dim: usize,
    pub samples: usize,
    pub branches: usize,
    pub classes: usize,
    /// `K <= F`.
    pub a_feasible_regime: bool,
    /// Fraction of trials where every per-branch `phi_n` hit its targets.
    pub a_pass_rate: f64,
    pub a_max_residual: f64,
    pub a_min_residual: f64,
    /// `N K <= F`.
    pub b_feasible_regime: bool,
    pub b_pass_rate: f64,
    pub b_max_residual: f64,
    pub b_min_residual: f64,
    /// Every trial produced identical inputs with different targets and a
    /// residual above the infeasibility threshold.
    pub c_witnessed: bool,
    pub c_min_residual: f64,
    pub max_solver_disagreement: f64,
}

struct L1Trial {
    a_res: f64,
    b_res: f64,
    c_res: f64,
    c_witness: bool,
    agreement: f64,
}

/// Lemma 1: shared features with per-branch heads (a), shared head with
/// per-branch features (b), and both shared (c).
pub fn verify_lemma1(f: usize, k: usize, n: usize, m: usize, trials: usize, seed: u64) -> Result<Lemma1Report> {
    if f == 0 || k == 0 || n == 0 || m < 2 || trials == 0 {
        return Err(invalid("dimensions and trial count must be positive, with at least two classes"));
    }
    let results: Vec<L1Trial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, &format!("lemma1-{t}"));
            let code = trial_code(m, n, &mut r)?;
            let labels: Vec<usize> = (0..k).map(|i| i % m).collect();
            let target = |i: usize, j: usize| sign_target(code.get(labels[i], j));
            let mut agreement = 0.0f64;

            let shared: Vec<Vec<f64>> = (0..k).map(|_| gaussian(f, &mut r)).collect();
            let a_mat = rows_to_matrix(&shared);
            let mut a_res = 0.0f64;
            for j in 0..n {
                let b = DVector::from_iterator(k, (0..k).map(|i| target(i, j)));
                let s = lstsq(&a_mat, &b)?;
                merge_agreement(&mut agreement, &s);
                a_res = a_res.max(s.residual);
            }

            let mut rows = Vec::with_capacity(n * k);
            let mut rhs = Vec::with_capacity(n * k);
            for j in 0..n {
                for i in 0..k {
                    rows.push(gaussian(f, &mut r));
                    rhs.push(target(i, j));
                }
            }
            let s = lstsq(&rows_to_matrix(&rows), &DVector::from_vec(rhs))?;
            merge_agreement(&mut agreement, &s);
            let b_res = s.residual;

            let mut rows = Vec::with_capacity(n * k);
            let mut rhs = Vec::with_capacity(n * k);
            for j in 0..n {
                for i in 0..k {
                    rows.push(shared[i].clone());
                    rhs.push(target(i, j));
                }
            }
            let s = lstsq(&rows_to_matrix(&rows), &DVector::from_vec(rhs))?;
            let c_witness = (0..k).any(|i| {
                let row = code.row(labels[i]);
                row.contains(&0) && row.contains(&1)
            });
            Ok(L1Trial { a_res, b_res, c_res: s.residual, c_witness, agreement })
        })
        .collect::<Result<_>>()?;
    let frac = |pred: &dyn Fn(&L1Trial) -> bool| results.iter().filter(|t| pred(t)).count() as f64 / trials as f64;
    let max = |g: &dyn Fn(&L1Trial) -> f64| results.iter().map(g).fold(0.0, f64::max);
    let min = |g: &dyn Fn(&L1Trial) -> f64| results.iter().map(g).fold(f64::INFINITY, f64::min);
    Ok(Lemma1Report {
        trials,
        feature_dim: f,
        samples: k,
        branches: n,
        classes: m,
        a_feasible_regime: k <= f,
        a_pass_rate: frac(&|t| t.a_res < SOLVED_TOL),
        a_max_residual: max(&|t| t.a_res),
        a_min_residual: min(&|t| t.a_res),
        b_feasible_regime: n * k <= f,
        b_pass_rate: frac(&|t| t.b_res < SOLVED_TOL),
        b_max_residual: max(&|t| t.b_res),
        b_min_residual: min(&|t| t.b_res),
        c_witnessed: n > 1 && results.iter().all(|t| t.c_witness && t.c_res > INFEASIBLE_TOL),
        c_min_residual: min(&|t| t.c_res),
        max_solver_disagreement: max(&|t| t.agreement),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma2Report {
    pub trials: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub branches: usize,
    /// Fraction of trials where every per-branch `phi_n` hit its targets.
    pub a_pass_rate: f64,
    pub a_max_residual: f64,
    /// `N M >= F (M + 1)`.
    pub b_regime: bool,
    /// Fraction of trials where the shared head left residual above 1e-6.
    pub b_infeasible_rate: f64,
    pub b_min_residual: f64,
    /// Shared head, identity permutations, one branch.
    pub control_pass_rate: f64,
    pub max_solver_disagreement: f64,
}

/// Lemma 2: branch features are permutations `S_n f^y` of common principal
/// features.
pub fn verify_lemma2(f: usize, m: usize, n: usize, trials: usize, seed: u64) -> Result<Lemma2Report> {
    if f == 0 || m < 2 || n == 0 || trials == 0 {
        return Err(invalid("dimensions and trial count must be positive, with at least two classes"));
    }
    let results: Vec<(f64, f64, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, &format!("lemma2-{t}"));
            let code = trial_code(m, n, &mut r)?;
            let principal: Vec<Vec<f64>> = (0..m).map(|_| gaussian(f, &mut r)).collect();
            let perms: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    let mut p: Vec<usize> = (0..f).collect();
                    p.shuffle(&mut r);
                    p
                })
                .collect();
            let model = FeatureModel {
                principal_features: principal.iter().map(|v| vec![v.clone(); n]).collect(),
                noise_sigma: 0.0,
                permutations: Some(perms.clone()),
            };
            model.validate()?;
            let permuted = |j: usize, y: usize| -> Vec<f64> { perms[j].iter().map(|&i| principal[y][i]).collect() };
            let mut agreement = 0.0f64;

            let mut a_res = 0.0f64;
            for j in 0..n {
                let rows: Vec<Vec<f64>> = (0..m).map(|y| permuted(j, y)).collect();
                let b = DVector::from_iterator(m, (0..m).map(|y| sign_target(code.get(y, j))));
                let s = lstsq(&rows_to_matrix(&rows), &b)?;
                merge_agreement(&mut agreement, &s);
                a_res = a_res.max(s.residual);
            }

            let mut rows = Vec::with_capacity(n * m);
            let mut rhs = Vec::with_capacity(n * m);
            for j in 0..n {
                for y in 0..m {
                    rows.push(permuted(j, y));
                    rhs.push(sign_target(code.get(y, j)));
                }
            }
            let s = lstsq(&rows_to_matrix(&rows), &DVector::from_vec(rhs))?;
            merge_agreement(&mut agreement, &s);
            let b_res = s.residual;

            let b = DVector::from_iterator(m, (0..m).map(|y| sign_target(code.get(y, 0))));
            let s = lstsq(&rows_to_matrix(&principal), &b)?;
            merge_agreement(&mut agreement, &s);
            Ok((a_res, b_res, s.residual, agreement))
        })
        .collect::<Result<_>>()?;
    let t = trials as f64;
    Ok(Lemma2Report {
        trials,
        feature_dim: f,
        classes: m,
        branches: n,
        a_pass_rate: results.iter().filter(|r| r.0 < SOLVED_TOL).count() as f64 / t,
        a_max_residual: results.iter().map(|r| r.0).fold(0.0, f64::max),
        b_regime: n * m >= f * (m + 1),
        b_infeasible_rate: results.iter().filter(|r| r.1 > 1e-6).count() as f64 / t,
        b_min_residual: results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
        control_pass_rate: results.iter().filter(|r| r.2 < SOLVED_TOL).count() as f64 / t,
        max_solver_disagreement: results.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaPoint {
    pub sigma: f64,
    pub samples: usize,
    pub meta_accuracy: f64,
    /// Samples with `||n|| ||phi_0 - phi_1|| < margin`.
    pub below_bound: usize,
    pub below_bound_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma3Report {
    pub feature_dim: usize,
    pub classes: usize,
    pub branches: usize,
    pub fit_residual: f64,
    /// `||phi_0 - phi_1||`.
    pub head_gap: f64,
    pub min_margin: f64,
    pub curve: Vec<SigmaPoint>,
    /// Accuracy over every sample below the Cauchy-Schwarz threshold.
    pub below_bound_accuracy: f64,
    pub max_solver_disagreement: f64,
}

/// Lemma 3: a shared two-logit head fitted on linearly independent principal
/// features keeps every meta-classifier correct while
/// `||n|| ||phi_0 - phi_1|| < |z(0) - z(1)|`.
pub fn verify_lemma3(f: usize, m: usize, n: usize, sigma_grid: &[f64], trials: usize, seed: u64) -> Result<Lemma3Report> {
    if f == 0 || m < 2 || n == 0 || trials == 0 || sigma_grid.is_empty() {
        return Err(invalid("dimensions, trial count and sigma grid must be non-empty"));
    }
    if sigma_grid.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(invalid("sigma values must be finite and >= 0"));
    }
    if m * n > f {
        return Err(invalid(format!("need M N <= F for independent principal features, got {} > {f}", m * n)));
    }
    let mut r = rng::stream(seed, "lemma3");
    let code = trial_code(m, n, &mut r)?;
    let principal: Vec<Vec<Vec<f64>>> = (0..m).map(|_| (0..n).map(|_| gaussian(f, &mut r)).collect()).collect();
    let model = FeatureModel { principal_features: principal.clone(), noise_sigma: 0.0, permutations: None };
    model.validate()?;
    let rows: Vec<Vec<f64>> = principal.iter().flatten().cloned().collect();
    let a = rows_to_matrix(&rows);
    let rank = a.clone().svd(false, false).rank(1e-10);
    if rank < m * n {
        return Err(Error::RankDeficient { rank, expected: m * n });
    }
    // logit k targets +1 when k is the meta-label, -1 otherwise
    let mut phi = Vec::with_capacity(2);
    let mut fit_residual = 0.0f64;
    let mut agreement = 0.0f64;
    for k in 0..2 {
        let b = DVector::from_iterator(
            m * n,
            (0..m).flat_map(|y| (0..n).map(move |j| (y, j))).map(|(y, j)| if code.get(y, j) == k { 1.0 } else { -1.0 }),
        );
        let s = lstsq(&a, &b)?;
        merge_agreement(&mut agreement, &s);
        fit_residual = fit_residual.max(s.residual);
        phi.push(s.x);
    }
    let diff = &phi[0] - &phi[1];
    let head_gap = diff.norm();
    let clean_margin = |y: usize, j: usize| -> f64 {
        let v = DVector::from_column_slice(&principal[y][j]);
        (phi[0].dot(&v) - phi[1].dot(&v)).abs()
    };
    let min_margin = (0..m)
        .flat_map(|y| (0..n).map(move |j| (y, j)))
        .map(|(y, j)| clean_margin(y, j))
        .fold(f64::INFINITY, f64::min);

    let curve: Vec<SigmaPoint> = sigma_grid
        .par_iter()
        .enumerate()
        .map(|(si, &sigma)| {
            let mut r = rng::stream(seed, &format!("lemma3-sigma-{si}"));
            let mut correct = 0;
            let mut below = 0;
            let mut below_ok = 0;
            let mut total = 0;
            for _ in 0..trials {
                for y in 0..m {
                    for j in 0..n {
                        let noise: Vec<f64> = gaussian(f, &mut r).into_iter().map(|v| sigma * v).collect();
                        let x: Vec<f64> = principal[y][j].iter().zip(&noise).map(|(p, e)| p + e).collect();
                        let xv = DVector::from_vec(x);
                        let z0 = phi[0].dot(&xv);
                        let z1 = phi[1].dot(&xv);
                        let predicted = usize::from(z1 > z0);
                        let ok = predicted == code.get(y, j);
                        let nn = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
                        total += 1;
                        correct += usize::from(ok);
                        if nn * head_gap < clean_margin(y, j) {
                            below += 1;
                            below_ok += usize::from(ok);
                        }
                    }
                }
            }
            SigmaPoint { sigma, samples: total, meta_accuracy: correct as f64 / total as f64, below_bound: below, below_bound_correct: below_ok }
        })
        .collect();
    let below: usize = curve.iter().map(|p| p.below_bound).sum();
    let below_ok: usize = curve.iter().map(|p| p.below_bound_correct).sum();
    Ok(Lemma3Report {
        feature_dim: f,
        classes: m,
        branches: n,
        fit_residual,
        head_gap,
        min_margin,
        curve,
        below_bound_accuracy: if below == 0 { 1.0 } else { below_ok as f64 / below as f64 },
        max_solver_disagreement: agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_paths_agree_on_tall_and_wide_systems() {
        let mut r = rng::seeded(1);
        for (rows, cols) in [(12, 5), (5, 12), (7, 7)] {
            let a = DMatrix::from_fn(rows, cols, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r));
            let b = DVector::from_fn(rows, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r));
            let s = lstsq(&a, &b).unwrap();
            assert!(s.agreement.unwrap() < 1e-8);
            if rows <= cols {
                assert!(s.residual < SOLVED_TOL);
            }
        }
    }

    #[test]
    fn lemma1_examples() {
        let rep = verify_lemma1(16, 8, 4, 3, 20, 7).unwrap();
        assert!(rep.a_feasible_regime && !rep.b_feasible_regime);
        assert_eq!(rep.a_pass_rate, 1.0);
        assert!(rep.b_min_residual > INFEASIBLE_TOL);
        assert!(rep.c_witnessed);
        assert!(rep.max_solver_disagreement < 1e-8);
        let feasible = verify_lemma1(32, 4, 4, 3, 20, 8).unwrap();
        assert!(feasible.b_feasible_regime);
        assert_eq!(feasible.b_pass_rate, 1.0);
        assert_eq!(verify_lemma1(16, 8, 4, 3, 5, 9).unwrap(), verify_lemma1(16, 8, 4, 3, 5, 9).unwrap());
    }

    #[test]
    fn lemma2_examples() {
        let rep = verify_lemma2(4, 3, 8, 50, 3).unwrap();
        assert!(rep.b_regime);
        assert_eq!(rep.b_infeasible_rate, 1.0);
        assert_eq!(rep.a_pass_rate, 1.0);
        assert_eq!(rep.control_pass_rate, 1.0);
        assert!(rep.max_solver_disagreement < 1e-8);
    }

    #[test]
    fn lemma3_examples() {
        let rep = verify_lemma3(24, 3, 4, &[0.0, 0.05, 0.2, 0.5, 1.0, 2.0], 40, 5).unwrap();
        assert!(rep.fit_residual < SOLVED_TOL);
        assert_eq!(rep.curve[0].meta_accuracy, 1.0);
        assert_eq!(rep.below_bound_accuracy, 1.0);
        for w in rep.curve.windows(2) {
            assert!(w[1].meta_accuracy <= w[0].meta_accuracy + 0.02);
        }
        assert!(matches!(verify_lemma3(8, 3, 4, &[0.1], 5, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rank_deficient_features_rejected() {
        let p = vec![vec![vec![1.0, 0.0]], vec![vec![2.0, 0.0]]];
        let a = rows_to_matrix(&p.iter().flatten().cloned().collect::<Vec<_>>());
        assert_eq!(a.svd(false, false).rank(1e-10), 1);
        let bad = FeatureModel { principal_features: p, noise_sigma: 0.0, permutations: Some(vec![vec![0, 0]]) };
        assert!(bad.validate().is_err());
    }
}
