//! Seeded subsetting of cohorts. All sampling is without replacement, and
//! selected rows keep their original relative order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::table::{CohortTable, CovariateValue};
use crate::error::{Error, Result};

pub const AGE: &str = "age";
pub const SEX: &str = "sex";

/// Index form of [`split_train_test`]: `(train, test)` row indices.
pub fn split_indices(
    table: &CohortTable,
    train_fraction: f64,
    stratify_by: &[&str],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "train fraction {train_fraction} is outside (0, 1]"
        )));
    }
    if table.is_empty() {
        return Err(Error::Argument("cannot split an empty table".into()));
    }
    let mut positions = Vec::with_capacity(stratify_by.len());
    for name in stratify_by {
        let k = table
            .schema()
            .position(name)
            .ok_or_else(|| Error::Argument(format!("unknown stratification covariate `{name}`")))?;
        if table.schema().covariates[k].is_continuous() {
            return Err(Error::Argument(format!(
                "cannot stratify on continuous covariate `{name}`"
            )));
        }
        positions.push(k);
    }

    let mut strata: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (i, row) in table.rows().iter().enumerate() {
        let key = positions
            .iter()
            .map(|&k| match row.covariates[k] {
                CovariateValue::Level(l) => l,
                CovariateValue::Number(_) => unreachable!("validated categorical"),
            })
            .collect();
        strata.entry(key).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        let take = ((train_fraction * members.len() as f64).round() as usize).min(members.len());
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Splits `table` into disjoint train and test tables, stratified on the
/// named categorical covariates.
pub fn split_train_test(
    table: &CohortTable,
    train_fraction: f64,
    stratify_by: &[&str],
    seed: u64,
) -> Result<(CohortTable, CohortTable)> {
    let (train, test) = split_indices(table, train_fraction, stratify_by, seed)?;
    Ok((table.select(&train), table.select(&test)))
}

/// Index form of [`stratified_sample`].
pub fn sample_indices(
    table: &CohortTable,
    n: usize,
    sex_balanced: bool,
    age_window: Option<(f64, f64)>,
    seed: u64,
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = match age_window {
        None => (0..table.len()).collect(),
        Some((lo, hi)) => {
            if table.schema().position(AGE).is_none() {
                return Err(Error::Argument(
                    "age window requested but the table has no `age` covariate".into(),
                ));
            }
            (0..table.len())
                .filter(|&i| table.number(i, AGE).is_some_and(|a| a >= lo && a <= hi))
                .collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = if sex_balanced {
        if !n.is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "a sex-balanced sample needs an even size, got {n}"
            )));
        }
        let k = table
            .schema()
            .position(SEX)
            .filter(|&k| {
                table.schema().covariates[k]
                    .levels()
                    .is_some_and(|l| l.len() == 2)
            })
            .ok_or_else(|| {
                Error::Argument("sex balancing needs a two-level `sex` covariate".into())
            })?;
        let mut groups = [Vec::new(), Vec::new()];
        for &i in &eligible {
            if let CovariateValue::Level(l) = table.rows()[i].covariates[k] {
                groups[l].push(i);
            }
        }
        let half = n / 2;
        if groups.iter().any(|g| g.len() < half) {
            return Err(Error::Sampling {
                requested: n,
                available: 2 * groups[0].len().min(groups[1].len()),
                detail: format!(
                    "{} of one sex and {} of the other are eligible",
                    groups[0].len(),
                    groups[1].len()
                ),
            });
        }
        let mut chosen = Vec::with_capacity(n);
        for group in &mut groups {
            group.shuffle(&mut rng);
            chosen.extend_from_slice(&group[..half]);
        }
        chosen
    } else {
        if eligible.len() < n {
            return Err(Error::Sampling {
                requested: n,
                available: eligible.len(),
                detail: "after age filtering".into(),
            });
        }
        let mut pool = eligible;
        pool.shuffle(&mut rng);
        pool.truncate(n);
        pool
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Draws exactly `n` rows, optionally half of each sex and optionally
/// restricted to ages within `[lo, hi]` years.
pub fn stratified_sample(
    table: &CohortTable,
    n: usize,
    sex_balanced: bool,
    age_window: Option<(f64, f64)>,
    seed: u64,
) -> Result<CohortTable> {
    Ok(table.select(&sample_indices(table, n, sex_balanced, age_window, seed)?))
}
