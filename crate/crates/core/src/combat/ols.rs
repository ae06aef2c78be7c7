//! Pooled least-squares fit with site indicators.
//!
//! The regression is run on `[site indicators | covariates]` with no separate
//! intercept. The grand intercept is the subject-weighted mean of the site
//! coefficients, which makes the site offsets satisfy `Σ_i J_i γ_i = 0`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::combat::GlobalFit;
use crate::data::{CohortTable, DesignMatrix};
use crate::error::{Error, Result};

/// Features whose pooled scale falls below this fraction of their RMS are
/// treated as constant.
const CONSTANT_RELATIVE_SCALE: f64 = 1e-12;
const RANK_TOLERANCE: f64 = 1e-10;

pub fn fit_global(table: &CohortTable, design: &DesignMatrix) -> Result<GlobalFit> {
    let n = table.len();
    if design.nrows() != n {
        return Err(Error::Argument(format!(
            "design has {} rows but the table has {n}",
            design.nrows()
        )));
    }
    let sites = table.sites();
    let site_of: Vec<usize> = table
        .rows()
        .iter()
        .map(|r| sites.binary_search(&r.site).expect("site listed"))
        .collect();
    let mut counts = vec![0usize; sites.len()];
    for &s in &site_of {
        counts[s] += 1;
    }

    let p = design.ncols() - 1;
    let k = sites.len() + p;
    if n <= k {
        return Err(Error::Underdetermined {
            subjects: n,
            columns: k,
        });
    }

    let x = design.matrix();
    let augmented = DMatrix::from_fn(n, k, |i, j| {
        if j < sites.len() {
            f64::from(u8::from(site_of[i] == j))
        } else {
            x[(i, j - sites.len() + 1)]
        }
    });
    let mut labels: Vec<String> = sites.iter().map(|s| format!("site[{s}]")).collect();
    labels.extend(design.column_labels()[1..].iter().cloned());
    let collinear = collinear_columns(&augmented, &labels);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }

    let v_count = table.n_features();
    let y = DMatrix::from_fn(n, v_count, |i, v| table.rows()[i].features[v]);

    let qr = augmented.clone().qr();
    let rhs = qr.q().transpose() * &y;
    let coef = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Numerical("singular triangular factor in least squares".into()))?;
    let residuals = &y - &augmented * &coef;

    let mut alpha = Vec::with_capacity(v_count);
    let mut beta = Vec::with_capacity(v_count);
    let mut sigma = Vec::with_capacity(v_count);
    let mut site_offsets: BTreeMap<String, Vec<f64>> = sites
        .iter()
        .map(|s| (s.clone(), Vec::with_capacity(v_count)))
        .collect();
    for v in 0..v_count {
        let grand = (0..sites.len())
            .map(|s| counts[s] as f64 * coef[(s, v)])
            .sum::<f64>()
            / n as f64;
        alpha.push(grand);
        for (s, site) in sites.iter().enumerate() {
            site_offsets
                .get_mut(site)
                .expect("site")
                .push(coef[(s, v)] - grand);
        }
        beta.push((0..p).map(|c| coef[(sites.len() + c, v)]).collect());

        let col = residuals.column(v);
        let s2 = col.dot(&col) / n as f64;
        let rms = (y.column(v).dot(&y.column(v)) / n as f64).sqrt();
        let s = s2.sqrt();
        sigma.push(
            if s <= CONSTANT_RELATIVE_SCALE * rms.max(f64::MIN_POSITIVE) {
                0.0
            } else {
                s
            },
        );
    }

    Ok(GlobalFit {
        feature_names: table.feature_names().to_vec(),
        schema: design.schema().clone(),
        design_labels: design.column_labels().to_vec(),
        alpha,
        beta,
        sigma,
        site_offsets,
    })
}

/// Columns that lie in the span of the columns before them (Gram-Schmidt with
/// re-orthogonalization).
fn collinear_columns(a: &DMatrix<f64>, labels: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for j in 0..a.ncols() {
        let col = a.column(j).into_owned();
        let norm = col.norm();
        let mut r = col;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= RANK_TOLERANCE * norm {
            collinear.push(labels[j].clone());
        } else {
            basis.push(r / rn);
        }
    }
    collinear
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, Covariate, CovariateSchema, CovariateValue, Subject};
    use approx::assert_relative_eq;

    fn age_only() -> CovariateSchema {
        CovariateSchema {
            labels: vec![],
            covariates: vec![Covariate::continuous("age", None)],
        }
    }

    fn table(rows: &[(&str, f64, f64)]) -> CohortTable {
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, &(site, age, y))| Subject {
                subject_id: format!("s{i}"),
                site: site.into(),
                covariates: vec![CovariateValue::Number(age)],
                labels: vec![],
                features: vec![y],
            })
            .collect();
        CohortTable::new(age_only(), vec!["f".into()], rows).unwrap()
    }

    #[test]
    fn exact_line_has_zero_scale() {
        let t = table(&[("a", 0.0, 2.0), ("a", 1.0, 5.0), ("a", 2.0, 8.0)]);
        let fit = fit_global(&t, &build_design(&t, &age_only()).unwrap()).unwrap();
        assert_relative_eq!(fit.alpha[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.beta[0][0], 3.0, epsilon = 1e-12);
        assert_eq!(fit.sigma[0], 0.0);
        assert!(fit.is_constant(0));
    }

    #[test]
    fn identical_sites_have_zero_offsets() {
        let mut rows = Vec::new();
        for site in ["a", "b"] {
            for (age, y) in [(20.0, 1.0), (30.0, 1.4), (45.0, 1.3), (60.0, 2.0)] {
                rows.push((site, age, y));
            }
        }
        let t = table(&rows);
        let fit = fit_global(&t, &build_design(&t, &age_only()).unwrap()).unwrap();
        for offsets in fit.site_offsets.values() {
            assert!(offsets[0].abs() < 1e-12, "{offsets:?}");
        }
    }

    #[test]
    fn offsets_sum_to_zero_weighted() {
        let t = table(&[
            ("a", 20.0, 1.0),
            ("a", 30.0, 1.5),
            ("a", 50.0, 1.9),
            ("b", 25.0, 3.0),
            ("b", 60.0, 4.1),
        ]);
        let fit = fit_global(&t, &build_design(&t, &age_only()).unwrap()).unwrap();
        let total = 3.0 * fit.site_offsets["a"][0] + 2.0 * fit.site_offsets["b"][0];
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn confounded_covariate_is_named() {
        let schema = CovariateSchema {
            labels: vec![],
            covariates: vec![Covariate::categorical("sex", &["M", "F"])],
        };
        let rows = (0..6)
            .map(|i| Subject {
                subject_id: format!("s{i}"),
                site: if i < 3 { "a".into() } else { "b".into() },
                covariates: vec![CovariateValue::Level(usize::from(i >= 3))],
                labels: vec![],
                features: vec![i as f64],
            })
            .collect();
        let t = CohortTable::new(schema.clone(), vec!["f".into()], rows).unwrap();
        let err = fit_global(&t, &build_design(&t, &schema).unwrap()).unwrap_err();
        match err {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["sex_F".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn too_few_subjects() {
        let t = table(&[("a", 1.0, 1.0), ("b", 2.0, 2.0), ("b", 3.0, 2.5)]);
        assert!(matches!(
            fit_global(&t, &build_design(&t, &age_only()).unwrap()),
            Err(Error::Underdetermined { .. })
        ));
    }
}
