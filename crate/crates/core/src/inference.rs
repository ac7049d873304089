//! Efficient score, efficient information and standard errors.
//!
//! With the parameter split into an interest block (1) and a nuisance block (2),
//! the efficient information is the Schur complement
//!
//! ```text
//! I* = I11 − I12 I22⁻¹ I21
//! ```
//!
//! of the information matrix `Σ`, and the efficient score is the residual of
//! the least-squares projection of `ℓ̇₁ᶜ` on `ℓ̇₂ᶜ`. The blocks either come from
//! the observed Hessian, `−n⁻¹ ∂²ℓ_n`, or from weighted second moments of the
//! within-sample centered scores, `Σ_s w_s Ê_s(ℓ̇ᵢᶜ ℓ̇ⱼᶜᵀ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{MultisampleDataset, Weights};
use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, max_abs, select_block, SymFactor, PIVOT_RTOL};
use crate::model::{symmetrize, LogDensityModel, Order, ParamLayout, Params};
use crate::optimizer::FitResult;

/// Condition number of `I22` above which the projection is refused.
pub const MAX_NUISANCE_CONDITION: f64 = 1e14;
/// Information matrices with a larger condition number are flagged.
pub const ILL_CONDITIONED: f64 = 1e10;
/// Eigenvalues of `I*` within this fraction of the largest one are treated as
/// zero; coordinates loading on them are reported as unidentified.
pub const NULL_EIGEN_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoSource {
    ObservedHessian,
    CenteredMoments,
}

/// The 2×2 block information matrix, interest block first.
#[derive(Debug, Clone)]
pub struct InfoBlocks {
    pub i11: DMatrix<f64>,
    pub i12: DMatrix<f64>,
    pub i22: DMatrix<f64>,
    pub n: f64,
    pub source: InfoSource,
}

impl InfoBlocks {
    pub fn new(i11: DMatrix<f64>, i12: DMatrix<f64>, i22: DMatrix<f64>, n: f64, source: InfoSource) -> Result<Self> {
        if i11.nrows() != i12.nrows() || i22.nrows() != i12.ncols() || !i11.is_square() || !i22.is_square() {
            return Err(Error::Dimension(format!(
                "inconsistent information blocks {:?} {:?} {:?}",
                i11.shape(),
                i12.shape(),
                i22.shape()
            )));
        }
        Ok(Self {
            i11,
            i12,
            i22,
            n,
            source,
        })
    }

    pub fn interest_dim(&self) -> usize {
        self.i11.nrows()
    }

    pub fn nuisance_dim(&self) -> usize {
        self.i22.nrows()
    }

    /// `Σ` assembled with the interest coordinates first.
    pub fn full(&self) -> DMatrix<f64> {
        let a = self.interest_dim();
        let b = self.nuisance_dim();
        let mut m = DMatrix::zeros(a + b, a + b);
        m.view_mut((0, 0), (a, a)).copy_from(&self.i11);
        m.view_mut((0, a), (a, b)).copy_from(&self.i12);
        m.view_mut((a, 0), (b, a)).copy_from(&self.i12.transpose());
        m.view_mut((a, a), (b, b)).copy_from(&self.i22);
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        is_symmetric(&self.i11, tol) && is_symmetric(&self.i22, tol)
    }
}

/// Within-sample centered interest and nuisance scores for one observation.
#[derive(Debug, Clone)]
pub struct CenteredScore {
    pub sample: usize,
    pub multiplicity: f64,
    pub interest: DVector<f64>,
    pub nuisance: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct CenteredScores {
    pub rows: Vec<CenteredScore>,
    pub sample_sizes: Vec<f64>,
}

impl CenteredScores {
    /// Subtracts the multiplicity-weighted sample mean from raw per-row vectors.
    pub fn center(raw: Vec<CenteredScore>, n_samples: usize) -> Self {
        let mut sizes = vec![0.0; n_samples];
        let (a, b) = raw
            .first()
            .map(|r| (r.interest.len(), r.nuisance.len()))
            .unwrap_or((0, 0));
        let mut m1 = vec![DVector::zeros(a); n_samples];
        let mut m2 = vec![DVector::zeros(b); n_samples];
        for r in &raw {
            let s = r.sample - 1;
            sizes[s] += r.multiplicity;
            m1[s].axpy(r.multiplicity, &r.interest, 1.0);
            m2[s].axpy(r.multiplicity, &r.nuisance, 1.0);
        }
        for s in 0..n_samples {
            if sizes[s] > 0.0 {
                m1[s] /= sizes[s];
                m2[s] /= sizes[s];
            }
        }
        let rows = raw
            .into_iter()
            .map(|r| {
                let s = r.sample - 1;
                CenteredScore {
                    interest: r.interest - &m1[s],
                    nuisance: r.nuisance - &m2[s],
                    ..r
                }
            })
            .collect();
        Self {
            rows,
            sample_sizes: sizes,
        }
    }

    /// `Σ_s w_s Ê_s(a bᵀ)` for per-row vectors `a`, `b`.
    pub fn weighted_moment(&self, weights: &Weights, a: impl Fn(&CenteredScore) -> DVector<f64>, b: impl Fn(&CenteredScore) -> DVector<f64>) -> DMatrix<f64> {
        let Some(first) = self.rows.first() else {
            return DMatrix::zeros(0, 0);
        };
        let mut out = DMatrix::zeros(a(first).len(), b(first).len());
        for r in &self.rows {
            let c = weights.get(r.sample) * r.multiplicity / self.sample_sizes[r.sample - 1];
            out += a(r) * b(r).transpose() * c;
        }
        out
    }
}

/// Per-observation scores split by the model layout and centered within sample.
pub fn centered_scores<M: LogDensityModel + ?Sized>(model: &M, params: &Params, dataset: &MultisampleDataset) -> Result<CenteredScores> {
    let layout = model.layout();
    let raw = dataset
        .observations()
        .iter()
        .map(|obs| {
            let g = model
                .evaluate(obs, &params.values, Order::Gradient)?
                .gradient
                .expect("gradient");
            Ok(CenteredScore {
                sample: obs.sample,
                multiplicity: obs.multiplicity as f64,
                interest: g.select_rows(&layout.interest),
                nuisance: g.select_rows(&layout.nuisance),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CenteredScores::center(raw, dataset.n_samples()))
}

/// Blocks of `−n⁻¹ ∂²ℓ_n` at a converged fit.
pub fn info_blocks_observed(fit: &FitResult, n: f64) -> Result<InfoBlocks> {
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
        });
    }
    observed_blocks(&fit.hessian, &fit.params.layout, n)
}

/// Blocks of `−n⁻¹ H` under `layout`.
pub fn observed_blocks(hessian: &DMatrix<f64>, layout: &ParamLayout, n: f64) -> Result<InfoBlocks> {
    let info = hessian * (-1.0 / n);
    InfoBlocks::new(
        select_block(&info, &layout.interest, &layout.interest),
        select_block(&info, &layout.interest, &layout.nuisance),
        select_block(&info, &layout.nuisance, &layout.nuisance),
        n,
        InfoSource::ObservedHessian,
    )
}

/// `block(i, j) = Σ_s w_s Ê_s(ℓ̇ᵢᶜ ℓ̇ⱼᶜᵀ)`.
pub fn info_blocks_moments(scores: &CenteredScores, weights: &Weights) -> Result<InfoBlocks> {
    let mut i11 = scores.weighted_moment(weights, |r| r.interest.clone(), |r| r.interest.clone());
    let i12 = scores.weighted_moment(weights, |r| r.interest.clone(), |r| r.nuisance.clone());
    let mut i22 = scores.weighted_moment(weights, |r| r.nuisance.clone(), |r| r.nuisance.clone());
    symmetrize(&mut i11);
    symmetrize(&mut i22);
    InfoBlocks::new(i11, i12, i22, scores.sample_sizes.iter().sum(), InfoSource::CenteredMoments)
}

#[derive(Debug, Clone)]
pub struct EfficientInformation {
    pub matrix: DMatrix<f64>,
    /// `I12 I22⁻¹`, the projection coefficients of the interest scores.
    pub projection: DMatrix<f64>,
    pub nuisance_condition: f64,
}

/// `I* = I11 − I12 I22⁻¹ I21`.
pub fn efficient_information(blocks: &InfoBlocks) -> Result<EfficientInformation> {
    let (i22_inv, cond) = if blocks.nuisance_dim() == 0 {
        (DMatrix::zeros(0, 0), 1.0)
    } else {
        let f = SymFactor::new(&blocks.i22, PIVOT_RTOL);
        let cond = f.condition_number();
        if !(cond <= MAX_NUISANCE_CONDITION) {
            let i = f
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            return Err(Error::SingularNuisance {
                cond,
                direction: f.eigenvectors.column(i).iter().copied().collect(),
            });
        }
        (f.pseudo_inverse(), cond)
    };
    let projection = &blocks.i12 * &i22_inv;
    let mut matrix = &blocks.i11 - &projection * blocks.i12.transpose();
    symmetrize(&mut matrix);
    Ok(EfficientInformation {
        matrix,
        projection,
        nuisance_condition: cond,
    })
}

/// `ℓ̇* = ℓ̇₁ᶜ − I12 I22⁻¹ ℓ̇₂ᶜ` for every row of `scores`.
pub fn efficient_score(scores: &CenteredScores, blocks: &InfoBlocks) -> Result<Vec<DVector<f64>>> {
    let eff = efficient_information(blocks)?;
    Ok(scores
        .rows
        .iter()
        .map(|r| &r.interest - &eff.projection * &r.nuisance)
        .collect())
}

#[derive(Debug, Clone)]
pub struct StandardErrors {
    /// `None` marks a coordinate that loads on a null direction of `I*`.
    pub se: Vec<Option<f64>>,
    /// `(I*)⁻¹`, a pseudo-inverse when `I*` is singular.
    pub covariance: DMatrix<f64>,
    pub condition_number: f64,
    pub identified: Vec<bool>,
    pub warnings: Vec<String>,
}

/// `se_i = sqrt(((I*)⁻¹)_ii / n)`.
pub fn standard_errors(istar: &DMatrix<f64>, n: f64) -> Result<StandardErrors> {
    let f = SymFactor::new(istar, NULL_EIGEN_RTOL);
    let min = f.min_eigenvalue();
    if min < -f.tol {
        return Err(Error::Indefinite(min));
    }
    let cond = f.condition_number();
    let mut warnings = Vec::new();
    if cond > ILL_CONDITIONED {
        warnings.push(format!("ill-conditioned efficient information (condition number {cond:.3e})"));
    }
    let inv = f.pseudo_inverse();
    let identified = f.identified_coordinates();
    let se = identified
        .iter()
        .enumerate()
        .map(|(i, &ok)| ok.then(|| (inv[(i, i)] / n).sqrt()))
        .collect();
    Ok(StandardErrors {
        se,
        covariance: inv,
        condition_number: cond,
        identified,
        warnings,
    })
}

/// Largest relative gap between the interest block of `Σ⁻¹` and `(I*)⁻¹`,
/// over coordinates identified in both.
pub fn schur_identity_gap(blocks: &InfoBlocks, istar: &DMatrix<f64>) -> f64 {
    let a = blocks.interest_dim();
    let full = SymFactor::new(&blocks.full(), NULL_EIGEN_RTOL);
    let star = SymFactor::new(istar, NULL_EIGEN_RTOL);
    let full_inv = full.pseudo_inverse();
    let star_inv = star.pseudo_inverse();
    let ok_full = full.identified_coordinates();
    let ok_star = star.identified_coordinates();
    let keep: Vec<usize> = (0..a).filter(|&i| ok_full[i] && ok_star[i]).collect();
    let lhs = select_block(&full_inv, &keep, &keep);
    let rhs = select_block(&star_inv, &keep, &keep);
    let scale = max_abs(&rhs).max(f64::MIN_POSITIVE);
    max_abs(&(lhs - rhs)) / scale
}

/// How relative efficiency is computed from two standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReDefinition {
    /// `Var_ref / Var_a = (se_ref / se_a)²`.
    #[default]
    VarianceRatio,
    /// `se_ref / se_a`.
    SeRatio,
}

/// Estimates and standard errors of one fitted method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub method: String,
    pub labels: Vec<String>,
    pub coef: Vec<Option<f64>>,
    pub se: Vec<Option<f64>>,
    /// Rows whose estimate or SE is not identified.
    #[serde(default)]
    pub unreliable: Vec<bool>,
    pub loglik: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
    /// `None` when the observed information is exactly singular.
    pub cond_number: Option<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Per-coefficient efficiency of `report` relative to `reference`.
pub fn relative_efficiency(report: &EfficiencyReport, reference: &EfficiencyReport, definition: ReDefinition) -> Result<Vec<Option<f64>>> {
    if report.labels != reference.labels {
        return Err(Error::LabelMismatch(report.labels.clone(), reference.labels.clone()));
    }
    Ok(report
        .se
        .iter()
        .zip(&reference.se)
        .map(|(a, r)| match (a, r) {
            (Some(a), Some(r)) if *a > 0.0 => Some(match definition {
                ReDefinition::VarianceRatio => (r / a).powi(2),
                ReDefinition::SeRatio => r / a,
            }),
            _ => None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn blocks(i11: DMatrix<f64>, i12: DMatrix<f64>, i22: DMatrix<f64>) -> InfoBlocks {
        InfoBlocks::new(i11, i12, i22, 1.0, InfoSource::CenteredMoments).unwrap()
    }

    #[test]
    fn schur_complement_arithmetic() {
        let b = blocks(m(1, 1, &[2.0]), m(1, 1, &[1.0]), m(1, 1, &[2.0]));
        let e = efficient_information(&b).unwrap();
        assert!((e.matrix[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_nuisance_leaves_i11() {
        let i11 = m(2, 2, &[3.0, 0.5, 0.5, 1.0]);
        let b = blocks(i11.clone(), DMatrix::zeros(2, 1), m(1, 1, &[4.0]));
        assert_eq!(efficient_information(&b).unwrap().matrix, i11);
    }

    #[test]
    fn singular_nuisance_names_direction() {
        let b = blocks(m(1, 1, &[1.0]), m(1, 2, &[0.0, 0.0]), m(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        match efficient_information(&b) {
            Err(Error::SingularNuisance { direction, .. }) => {
                assert!((direction[0] + direction[1]).abs() < 1e-12);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn se_from_efficient_information() {
        let se = standard_errors(&m(1, 1, &[4.0]), 100.0).unwrap();
        assert!((se.se[0].unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(
            standard_errors(&m(2, 2, &[1.0, 0.0, 0.0, -1.0]), 1.0),
            Err(Error::Indefinite(_))
        ));
    }

    #[test]
    fn null_directions_are_unidentified() {
        let se = standard_errors(&m(2, 2, &[0.0, 0.0, 0.0, 2.0]), 2.0).unwrap();
        assert_eq!(se.se[0], None);
        assert!((se.se[1].unwrap() - 0.5).abs() < 1e-15);
        assert!(!se.warnings.is_empty());
    }

    #[test]
    fn centering_removes_sample_means() {
        let raw = vec![
            CenteredScore {
                sample: 1,
                multiplicity: 3.0,
                interest: DVector::from_element(1, 2.0),
                nuisance: DVector::from_element(1, 5.0),
            },
            CenteredScore {
                sample: 1,
                multiplicity: 1.0,
                interest: DVector::from_element(1, 6.0),
                nuisance: DVector::from_element(1, 5.0),
            },
            CenteredScore {
                sample: 2,
                multiplicity: 2.0,
                interest: DVector::from_element(1, -1.0),
                nuisance: DVector::from_element(1, 0.5),
            },
        ];
        let c = CenteredScores::center(raw, 2);
        for s in 1..=2 {
            let (mut a, mut b) = (0.0, 0.0);
            for r in c.rows.iter().filter(|r| r.sample == s) {
                a += r.multiplicity * r.interest[0];
                b += r.multiplicity * r.nuisance[0];
            }
            assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
        }
        // constant scores vanish entirely after centering
        assert!(c.rows.iter().all(|r| r.nuisance[0] == 0.0));
    }

    #[test]
    fn moment_blocks_of_plus_minus_one() {
        let raw = [1.0, -1.0]
            .iter()
            .map(|&v| CenteredScore {
                sample: 1,
                multiplicity: 5.0,
                interest: DVector::from_element(1, v),
                nuisance: DVector::zeros(0),
            })
            .collect();
        let c = CenteredScores::center(raw, 1);
        let b = info_blocks_moments(&c, &Weights::new(vec![1.0]).unwrap()).unwrap();
        assert!((b.i11[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(efficient_information(&b).unwrap().matrix, b.i11);
    }

    #[test]
    fn relative_efficiency_definitions() {
        let a = EfficiencyReport {
            method: "a".into(),
            labels: vec!["x".into(), "y".into()],
            coef: vec![Some(1.0), None],
            se: vec![Some(0.5), None],
            unreliable: vec![false, true],
            loglik: 0.0,
            iterations: 1,
            runtime_ms: 0.0,
            cond_number: Some(1.0),
            converged: true,
            warnings: vec![],
        };
        let mut r = a.clone();
        assert_eq!(relative_efficiency(&a, &r, ReDefinition::VarianceRatio).unwrap(), vec![Some(1.0), None]);
        r.se[0] = Some(0.25);
        assert_eq!(relative_efficiency(&a, &r, ReDefinition::VarianceRatio).unwrap()[0], Some(0.25));
        assert_eq!(relative_efficiency(&a, &r, ReDefinition::SeRatio).unwrap()[0], Some(0.5));
        r.labels[1] = "z".into();
        assert!(relative_efficiency(&a, &r, ReDefinition::SeRatio).is_err());
    }
}
