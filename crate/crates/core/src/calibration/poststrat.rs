use std::collections::HashMap;

use crate::data::{CellTable, CovariateSchema, RespondentRecord, WeightVector};
use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, relative_error};
use crate::propensity::TrimPolicy;

use super::{finish, Calibrated, CalibrationReport, OmittedStratum};

/// Scales weights within each cell so the weighted cell total equals the
/// cell population. Cells without respondents are omitted.
pub fn post_stratify_untrimmed(
    weights: &WeightVector,
    respondents: &[RespondentRecord],
    schema: &CovariateSchema,
    table: &CellTable,
) -> Result<Calibrated> {
    weights.check_aligned(respondents)?;
    if respondents.is_empty() {
        return Err(Error::EmptySample);
    }
    let index: HashMap<&Vec<String>, usize> = table.cells().iter().enumerate().map(|(i, c)| (&c.key, i)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); table.cells().len()];
    for (j, r) in respondents.iter().enumerate() {
        let key = table.key_of(r, schema).ok_or_else(|| {
            Error::InvalidInput(format!(
                "respondent `{}` lacks a value for one of {:?}",
                r.respondent_id,
                table.dimensions()
            ))
        })?;
        let cell = *index.get(&key).ok_or_else(|| {
            Error::InvalidInput(format!(
                "respondent `{}` falls in cell {key:?}, absent from the benchmarks",
                r.respondent_id
            ))
        })?;
        members[cell].push(j);
    }

    let source = table.dimensions().join(":");
    let w = weights.values();
    let mut out = vec![0.0; w.len()];
    let mut omitted = Vec::new();
    let mut represented = Vec::new();
    let mut max_error: f64 = 0.0;
    for (cell, rows) in table.cells().iter().zip(&members) {
        if rows.is_empty() {
            if cell.population > 0.0 {
                omitted.push(OmittedStratum {
                    source: source.clone(),
                    category: cell.key.join(":"),
                    population: cell.population,
                });
            }
            continue;
        }
        if cell.population == 0.0 {
            return Err(Error::InvalidInput(format!("cell {:?} has respondents but zero population", cell.key)));
        }
        let current: Vec<f64> = rows.iter().map(|&j| w[j]).collect();
        let factor = cell.population / pairwise_sum(&current);
        for &j in rows {
            out[j] = w[j] * factor;
        }
        let adjusted: Vec<f64> = rows.iter().map(|&j| out[j]).collect();
        max_error = max_error.max(relative_error(pairwise_sum(&adjusted), cell.population));
        represented.push(cell.population);
    }

    Ok(Calibrated {
        weights: out,
        omitted,
        population_total: table.population_total(),
        represented_population: pairwise_sum(&represented),
        achieved_margin_error: max_error,
        iterations: 1,
        converged: true,
    })
}

pub fn post_stratify(
    weights: &WeightVector,
    respondents: &[RespondentRecord],
    schema: &CovariateSchema,
    table: &CellTable,
    trim: &TrimPolicy,
) -> Result<(WeightVector, CalibrationReport)> {
    let calibrated = post_stratify_untrimmed(weights, respondents, schema, table)?;
    finish("cells", calibrated, respondents, trim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cell, CovariateSpec, Stage};
    use std::collections::BTreeMap;

    fn schema() -> CovariateSchema {
        CovariateSchema::new(vec![CovariateSpec::categorical("g", ["a", "b"]).unwrap()]).unwrap()
    }

    fn respondents(regions: &[&str]) -> Vec<RespondentRecord> {
        regions
            .iter()
            .enumerate()
            .map(|(i, region)| RespondentRecord {
                respondent_id: format!("r{i}"),
                region: region.to_string(),
                covariates: vec![0],
                outcomes: BTreeMap::new(),
                answered_count: 2,
                design_weight: None,
            })
            .collect()
    }

    fn table(cells: &[(&str, f64)]) -> CellTable {
        CellTable::new(
            vec!["region".into()],
            cells.iter().map(|(k, n)| Cell { key: vec![k.to_string()], population: *n }).collect(),
        )
        .unwrap()
    }

    fn weights(r: &[RespondentRecord], w: &[f64]) -> WeightVector {
        WeightVector::for_respondents(Stage::Ipsw, r, w.to_vec()).unwrap()
    }

    #[test]
    fn one_cell_scales_proportionally() {
        let r = respondents(&["x", "x"]);
        let out = post_stratify_untrimmed(&weights(&r, &[1.0, 3.0]), &r, &schema(), &table(&[("x", 100.0)])).unwrap();
        assert_eq!(out.weights, vec![25.0, 75.0]);
    }

    #[test]
    fn single_respondents_absorb_cell_totals() {
        let r = respondents(&["x", "y"]);
        let t = table(&[("x", 60.0), ("y", 40.0)]);
        let (w, report) = post_stratify(&weights(&r, &[7.0, 0.1]), &r, &schema(), &t, &TrimPolicy::default()).unwrap();
        assert_eq!(w.values(), &[60.0, 40.0]);
        assert_eq!(w.stage(), Stage::Final);
        assert_eq!(report.final_weight_sum, 100.0);
    }

    #[test]
    fn empty_cell_is_omitted() {
        let r = respondents(&["x", "y"]);
        let t = table(&[("x", 60.0), ("y", 30.0), ("z", 10.0)]);
        let (w, report) = post_stratify(&weights(&r, &[1.0, 1.0]), &r, &schema(), &t, &TrimPolicy::default()).unwrap();
        assert_eq!(report.omitted_strata.len(), 1);
        assert_eq!(report.omitted_strata[0].category, "z");
        assert_eq!(report.final_weight_sum, 90.0);
        assert_eq!(report.omitted_population, 10.0);
        assert!(relative_error(w.sum(), 90.0) < 1e-12);
    }

    #[test]
    fn unknown_cell_is_an_error() {
        let r = respondents(&["x", "q"]);
        let err = post_stratify_untrimmed(&weights(&r, &[1.0, 1.0]), &r, &schema(), &table(&[("x", 1.0)])).unwrap_err();
        assert!(err.to_string().contains("r1"));
    }
}
