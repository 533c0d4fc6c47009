//! L2-penalized logistic response-propensity model over one-hot covariates.

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::data::{Classified, CovariateSchema, FrameUnit, RespondentRecord, Stage, WeightVector};
use crate::error::{Error, Result};
use crate::numeric::{log1p_exp, logistic, pairwise_sum};

use super::trim::TrimPolicy;

pub const DEFAULT_L2_STRENGTH: f64 = 1.0;
pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 200;
const MAX_STEP_HALVINGS: usize = 60;
/// Smallest propensity turned into a weight.
pub const MIN_PROPENSITY: f64 = 1e-12;

/// Fitted coefficients for one covariate. Level 0 is the reference and
/// always carries 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateEffects {
    pub name: String,
    pub levels: Vec<String>,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub intercept: f64,
    pub effects: Vec<CovariateEffects>,
    pub l2_strength: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl PropensityModel {
    /// Coefficient for a non-reference level; `None` for the reference level
    /// or unknown names.
    pub fn coefficient(&self, covariate: &str, level: &str) -> Option<f64> {
        let effects = self.effects.iter().find(|e| e.name == covariate)?;
        let index = effects.levels.iter().position(|l| l == level)?;
        (index > 0).then(|| effects.coefficients[index])
    }

    /// Non-reference `(covariate, level, coefficient)` triples in schema order.
    pub fn coefficients(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.effects.iter().flat_map(|e| {
            e.levels.iter().zip(&e.coefficients).skip(1).map(move |(l, &c)| (e.name.as_str(), l.as_str(), c))
        })
    }

    pub fn coefficient_norm(&self) -> f64 {
        self.coefficients().map(|(_, _, c)| c * c).sum::<f64>().sqrt()
    }

    pub fn linear_predictor(&self, codes: &[usize]) -> f64 {
        let mut eta = self.intercept;
        for (effects, &code) in self.effects.iter().zip(codes) {
            eta += effects.coefficients[code];
        }
        eta
    }

    pub fn propensity(&self, codes: &[usize]) -> f64 {
        logistic(self.linear_predictor(codes))
    }

    /// Errors unless the model was fitted over exactly this schema.
    pub fn check_schema(&self, schema: &CovariateSchema) -> Result<()> {
        let same = self.effects.len() == schema.len()
            && self.effects.iter().zip(schema.covariates()).all(|(e, c)| e.name == c.name() && e.levels == c.levels());
        if same {
            Ok(())
        } else {
            Err(Error::InvalidInput("propensity model does not match the covariate schema".into()))
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let err = |e| Error::csv("<model>", e);
        wtr.write_record(["intercept", "l2_strength", "converged", "iterations"]).map_err(err)?;
        wtr.write_record([
            self.intercept.to_string(),
            self.l2_strength.to_string(),
            self.converged.to_string(),
            self.iterations.to_string(),
        ])
        .map_err(err)?;
        wtr.write_record(["covariate", "level", "coefficient"]).map_err(err)?;
        for (covariate, level, c) in self.coefficients() {
            wtr.write_record([covariate, level, &c.to_string()]).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::io("<model>", e))
    }

    pub fn read_csv<R: Read>(input: R, schema: &CovariateSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
        let rows: Vec<csv::StringRecord> =
            rdr.records().collect::<std::result::Result<_, _>>().map_err(|e| Error::csv("<model>", e))?;
        let bad = |msg: &str| Error::InvalidInput(format!("model file: {msg}"));
        if rows.len() < 3
            || rows[0].iter().collect::<Vec<_>>() != ["intercept", "l2_strength", "converged", "iterations"]
            || rows[2].iter().collect::<Vec<_>>() != ["covariate", "level", "coefficient"]
        {
            return Err(bad("malformed header"));
        }
        let head = &rows[1];
        if head.len() != 4 {
            return Err(bad("header row needs 4 fields"));
        }
        let number = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
        let mut model = PropensityModel {
            intercept: number(&head[0])?,
            l2_strength: number(&head[1])?,
            converged: head[2].parse().map_err(|_| bad("converged must be true/false"))?,
            iterations: head[3].parse().map_err(|_| bad("iterations must be an integer"))?,
            effects: empty_effects(schema),
        };
        for row in &rows[3..] {
            if row.len() != 3 {
                return Err(bad("coefficient rows need 3 fields"));
            }
            let effects = model
                .effects
                .iter_mut()
                .find(|e| e.name == row[0])
                .ok_or_else(|| bad(&format!("unknown covariate `{}`", &row[0])))?;
            let index = effects
                .levels
                .iter()
                .position(|l| *l == row[1])
                .ok_or_else(|| bad(&format!("unknown level `{}` of `{}`", &row[1], &row[0])))?;
            if index == 0 {
                return Err(bad(&format!("reference level `{}` of `{}` cannot carry a coefficient", &row[1], &row[0])));
            }
            effects.coefficients[index] = number(&row[2])?;
        }
        Ok(model)
    }
}

fn empty_effects(schema: &CovariateSchema) -> Vec<CovariateEffects> {
    schema
        .covariates()
        .iter()
        .map(|c| CovariateEffects {
            name: c.name().to_string(),
            levels: c.levels().to_vec(),
            coefficients: vec![0.0; c.levels().len()],
        })
        .collect()
}

/// One-hot column for a non-reference level.
struct Column {
    covariate: usize,
    level: usize,
    mean: f64,
    sd: f64,
}

/// Penalized objective, gradient and Hessian, all scaled by 1/n.
struct Problem {
    design: DMatrix<f64>,
    response: DVector<f64>,
    l2: f64,
}

impl Problem {
    fn n(&self) -> f64 {
        self.design.nrows() as f64
    }

    fn penalty_mask(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut b = theta.clone();
        b[0] = 0.0;
        b
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let eta = &self.design * theta;
        let terms: Vec<f64> = eta.iter().zip(self.response.iter()).map(|(&e, &y)| log1p_exp(e) - y * e).collect();
        let b = self.penalty_mask(theta);
        (pairwise_sum(&terms) + 0.5 * self.l2 * b.dot(&b)) / self.n()
    }

    fn gradient_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let eta = &self.design * theta;
        let p = eta.map(logistic);
        let resid = &p - &self.response;
        let n = self.n();
        let mut grad = self.design.tr_mul(&resid) / n;
        grad += self.penalty_mask(theta) * (self.l2 / n);
        let w = p.map(|pi| pi * (1.0 - pi));
        let mut weighted = self.design.clone();
        for (mut row, &wi) in weighted.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        let mut hess = self.design.tr_mul(&weighted) / n;
        for k in 1..hess.nrows() {
            hess[(k, k)] += self.l2 / n;
        }
        (grad, hess)
    }
}

fn solve(hess: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = hess.clone().cholesky() {
        return Some(chol.solve(grad));
    }
    hess.lu().solve(grad)
}

/// Maximizes the L2-penalized binomial likelihood of `responded` over the
/// sampled frame units. One-hot columns are standardized before fitting; the
/// returned coefficients are on the original 0/1 scale.
pub fn fit_propensity(frame: &[FrameUnit], schema: &CovariateSchema, l2_strength: f64) -> Result<PropensityModel> {
    if !(l2_strength.is_finite() && l2_strength >= 0.0) {
        return Err(Error::Config(format!("l2 strength must be finite and nonnegative, got {l2_strength}")));
    }
    let sampled: Vec<&FrameUnit> = frame.iter().filter(|u| u.sampled).collect();
    let responders = sampled.iter().filter(|u| u.responded).count();
    if sampled.is_empty() {
        return Err(Error::DegenerateFit("no sampled frame units".into()));
    }
    if responders == 0 || responders == sampled.len() {
        return Err(Error::DegenerateFit(format!("{responders} of {} sampled units responded", sampled.len())));
    }
    for u in &sampled {
        if u.codes().len() != schema.len() {
            return Err(Error::InvalidInput(format!("unit `{}` does not match the schema", u.unit_id)));
        }
    }

    let n = sampled.len() as f64;
    let mut columns = Vec::new();
    for (ci, spec) in schema.covariates().iter().enumerate() {
        let mut counts = vec![0usize; spec.levels().len()];
        for u in &sampled {
            counts[u.codes()[ci]] += 1;
        }
        for (level, &count) in counts.iter().enumerate().skip(1) {
            let mean = count as f64 / n;
            let sd = (mean * (1.0 - mean)).sqrt();
            // constant columns are unidentified; their coefficient stays 0
            if sd > 0.0 {
                columns.push(Column { covariate: ci, level, mean, sd });
            }
        }
    }

    let p = columns.len() + 1;
    let mut design = DMatrix::zeros(sampled.len(), p);
    for (r, u) in sampled.iter().enumerate() {
        design[(r, 0)] = 1.0;
        for (k, col) in columns.iter().enumerate() {
            let x = if u.codes()[col.covariate] == col.level { 1.0 } else { 0.0 };
            design[(r, k + 1)] = (x - col.mean) / col.sd;
        }
    }
    let response = DVector::from_iterator(sampled.len(), sampled.iter().map(|u| if u.responded { 1.0 } else { 0.0 }));
    let problem = Problem { design, response, l2: l2_strength };

    let rate = responders as f64 / n;
    let mut theta = DVector::zeros(p);
    theta[0] = (rate / (1.0 - rate)).ln();
    let mut f = problem.objective(&theta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_NEWTON_ITERATIONS {
        let (grad, hess) = problem.gradient_hessian(&theta);
        if grad.amax() < SCORE_TOLERANCE {
            converged = true;
            break;
        }
        let Some(step) = solve(hess, &grad) else {
            warn!("propensity Hessian is singular after {iterations} iterations");
            break;
        };
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_STEP_HALVINGS {
            let candidate = &theta - &step * t;
            let fc = problem.objective(&candidate);
            if fc.is_finite() && fc <= f {
                theta = candidate;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent left at machine precision; re-check the score once more
            let (grad, _) = problem.gradient_hessian(&theta);
            converged = grad.amax() < SCORE_TOLERANCE;
            break;
        }
    }
    if !converged {
        warn!("propensity fit did not converge after {iterations} iterations");
    }

    let mut effects = empty_effects(schema);
    let mut intercept = theta[0];
    for (k, col) in columns.iter().enumerate() {
        let beta = theta[k + 1] / col.sd;
        effects[col.covariate].coefficients[col.level] = beta;
        intercept -= beta * col.mean;
    }
    Ok(PropensityModel { intercept, effects, l2_strength, converged, iterations })
}

/// Inverse-propensity weights, optionally times each respondent's design
/// weight, then trimmed by `policy` (single pass).
pub fn ipsw_weights(
    model: &PropensityModel,
    respondents: &[RespondentRecord],
    policy: &TrimPolicy,
    use_design_weights: bool,
) -> Result<WeightVector> {
    let raw = raw_ipsw_weights(model, respondents, use_design_weights)?;
    let trimmed = policy.apply(&raw)?;
    WeightVector::for_respondents(Stage::Ipsw, respondents, trimmed.weights)
}

/// Untrimmed `design_weight / propensity`.
pub fn raw_ipsw_weights(
    model: &PropensityModel,
    respondents: &[RespondentRecord],
    use_design_weights: bool,
) -> Result<Vec<f64>> {
    if respondents.is_empty() {
        return Err(Error::EmptySample);
    }
    let with_design = respondents.iter().filter(|r| r.design_weight.is_some()).count();
    if use_design_weights && with_design != 0 && with_design != respondents.len() {
        return Err(Error::InvalidInput(format!(
            "{with_design} of {} respondents carry a design weight",
            respondents.len()
        )));
    }
    respondents
        .iter()
        .map(|r| {
            if r.covariates.len() != model.effects.len() {
                return Err(Error::InvalidInput(format!("respondent `{}` does not match the model", r.respondent_id)));
            }
            let p = model.propensity(&r.covariates);
            if !(p >= MIN_PROPENSITY) {
                return Err(Error::PropensityUnderflow { id: r.respondent_id.clone(), propensity: p });
            }
            let design = if use_design_weights { r.design_weight.unwrap_or(1.0) } else { 1.0 };
            Ok(design / p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateSpec;
    use std::collections::BTreeMap;

    fn schema() -> CovariateSchema {
        CovariateSchema::new(vec![CovariateSpec::categorical("g", ["A", "B"]).unwrap()]).unwrap()
    }

    /// `counts[level] = (sampled, responded)`.
    fn frame(counts: &[(usize, usize)]) -> Vec<FrameUnit> {
        let mut units = Vec::new();
        for (level, &(sampled, responded)) in counts.iter().enumerate() {
            for i in 0..sampled {
                units.push(FrameUnit {
                    unit_id: format!("{level}-{i}"),
                    region: "r".into(),
                    covariates: vec![level],
                    sampled: true,
                    responded: i < responded,
                });
            }
        }
        units
    }

    fn respondent(id: &str, level: usize) -> RespondentRecord {
        RespondentRecord {
            respondent_id: id.into(),
            region: "r".into(),
            covariates: vec![level],
            outcomes: BTreeMap::new(),
            answered_count: 3,
            design_weight: None,
        }
    }

    #[test]
    fn constant_response_rate_gives_zero_coefficients() {
        let model = fit_propensity(&frame(&[(40, 20), (60, 30)]), &schema(), 0.0).unwrap();
        assert!(model.converged);
        assert!(model.intercept.abs() < 1e-9);
        assert!(model.coefficient("g", "B").unwrap().abs() < 1e-9);
        assert!((model.propensity(&[1]) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn saturated_fit_reproduces_cell_rates() {
        // independent oracle: empirical response rate per level
        let counts = [(40, 20), (80, 20)];
        let model = fit_propensity(&frame(&counts), &schema(), 0.0).unwrap();
        assert!(model.converged);
        for (level, &(s, r)) in counts.iter().enumerate() {
            let rate = r as f64 / s as f64;
            // score tolerance 1e-8 bounds the rate error well below 1e-7
            assert!((model.propensity(&[level]) - rate).abs() < 1e-7);
        }
        let resp = vec![respondent("a", 0), respondent("b", 1)];
        let w = ipsw_weights(&model, &resp, &TrimPolicy::default(), false).unwrap();
        assert!((w.values()[0] - 2.0).abs() < 1e-6);
        assert!((w.values()[1] - 4.0).abs() < 1e-6);
        assert_eq!(w.stage(), Stage::Ipsw);
    }

    #[test]
    fn separation_is_finite_under_penalty() {
        // level A always responds, level B never does
        let data = frame(&[(30, 30), (30, 0)]);
        let model = fit_propensity(&data, &schema(), 1.0).unwrap();
        assert!(model.converged);
        let b = model.coefficient("g", "B").unwrap();
        assert!(b.is_finite() && b < 0.0);
        let stronger = fit_propensity(&data, &schema(), 10.0).unwrap();
        assert!(stronger.coefficient_norm() < model.coefficient_norm());
    }

    #[test]
    fn degenerate_frames_are_rejected() {
        assert!(matches!(fit_propensity(&frame(&[(10, 10)]), &schema(), 1.0), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_propensity(&frame(&[(10, 0)]), &schema(), 1.0), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_propensity(&[], &schema(), 1.0), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn unsampled_units_are_ignored() {
        let mut data = frame(&[(40, 20), (80, 20)]);
        let base = fit_propensity(&data, &schema(), 0.0).unwrap();
        data.push(FrameUnit {
            unit_id: "x".into(),
            region: "r".into(),
            covariates: vec![0],
            sampled: false,
            responded: false,
        });
        let again = fit_propensity(&data, &schema(), 0.0).unwrap();
        assert_eq!(base, again);
    }

    #[test]
    fn underflow_names_the_respondent() {
        let mut model = fit_propensity(&frame(&[(40, 20), (80, 20)]), &schema(), 0.0).unwrap();
        model.effects[0].coefficients[1] = -100.0;
        let err = raw_ipsw_weights(&model, &[respondent("low", 1)], false).unwrap_err();
        assert!(matches!(err, Error::PropensityUnderflow { ref id, .. } if id == "low"));
    }

    #[test]
    fn design_weights_multiply() {
        let model = fit_propensity(&frame(&[(40, 20), (40, 20)]), &schema(), 0.0).unwrap();
        let mut r = respondent("a", 0);
        r.design_weight = Some(10.0);
        let w = raw_ipsw_weights(&model, &[r.clone()], true).unwrap();
        assert!((w[0] - 20.0).abs() < 1e-6);
        let w = raw_ipsw_weights(&model, &[r], false).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let model = fit_propensity(&frame(&[(40, 13), (80, 27)]), &schema(), 0.3).unwrap();
        let mut buf = Vec::new();
        model.write_csv(&mut buf).unwrap();
        let back = PropensityModel::read_csv(buf.as_slice(), &schema()).unwrap();
        assert_eq!(back, model);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("intercept,l2_strength,converged,iterations\n"));
        let bad = text.replace("g,B", "g,A");
        assert!(PropensityModel::read_csv(bad.as_bytes(), &schema()).is_err());
    }
}
