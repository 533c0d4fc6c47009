//! Replication runner: sample, respond, weight, estimate, and score against
//! the known truth.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{post_stratify, rake, CalibrationReport};
use crate::data::io::{write_benchmarks, write_file, write_frame, write_respondents};
use crate::data::{filter_eligible, BenchmarkTable, FrameUnit, RespondentRecord, Stage, WeightVector};
use crate::error::{Error, Result};
use crate::estimation::{estimate_domain_ratio, estimate_mean, estimate_total, region_indicator, EstimateResult};
use crate::numeric::{design_effect, mean, pairwise_sum};
use crate::propensity::{fit_propensity, ipsw_weights};

use super::config::{CalibrationMode, SimConfig};
use super::population::{generate_with_seed, SimWorld, FLAG_OUTCOME, VALUE_OUTCOME};
use super::sampling::{draw_daily_sample, simulate_response, CooldownState, SamplingDesign};
use super::seeds::{derive_seed, STREAM_POPULATION, STREAM_REPLICATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Unweighted,
    Ipsw,
    Final,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Unweighted, Method::Ipsw, Method::Final];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Unweighted => "unweighted",
            Method::Ipsw => "ipsw",
            Method::Final => "final",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Estimand {
    Mean(String),
    Total(String),
    /// Within-region mean of a 0/1 outcome.
    RegionRatio(String, String),
}

impl Estimand {
    pub fn label(&self) -> String {
        match self {
            Estimand::Mean(y) => format!("mean({y})"),
            Estimand::Total(y) => format!("total({y})"),
            Estimand::RegionRatio(y, r) => format!("ratio({y}|region={r})"),
        }
    }

    fn truth(&self, world: &SimWorld) -> f64 {
        match self {
            Estimand::Mean(y) => world.truth.means[y],
            Estimand::Total(y) => world.truth.totals[y],
            Estimand::RegionRatio(y, r) => world.truth.region_ratios[y][r],
        }
    }

    fn estimate(&self, weights: &WeightVector, respondents: &[RespondentRecord], alpha: f64) -> Result<EstimateResult> {
        let column = |y: &str| -> Vec<f64> { respondents.iter().map(|r| r.outcomes[y]).collect() };
        match self {
            Estimand::Mean(y) => estimate_mean(weights, &column(y), alpha),
            Estimand::Total(y) => estimate_total(weights, &column(y), alpha),
            Estimand::RegionRatio(y, r) => {
                estimate_domain_ratio(weights, &column(y), &region_indicator(respondents, r), alpha)
            }
        }
    }
}

pub fn estimands(config: &SimConfig) -> Vec<Estimand> {
    let mut out = vec![
        Estimand::Mean(FLAG_OUTCOME.into()),
        Estimand::Mean(VALUE_OUTCOME.into()),
        Estimand::Total(FLAG_OUTCOME.into()),
    ];
    out.extend(config.regions.iter().map(|r| Estimand::RegionRatio(FLAG_OUTCOME.into(), r.name.clone())));
    out
}

/// One scored replication row. With several days per replication, the
/// fields average over days (`rmse` is the root mean square over days).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub estimand: String,
    pub method: Method,
    pub bias: f64,
    pub rmse: f64,
    pub ci_covered: f64,
    pub design_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub estimand: String,
    pub method: Method,
    pub replications: usize,
    pub mean_bias: f64,
    pub bias_mcse: f64,
    pub rmse: f64,
    pub ci_coverage: f64,
    pub coverage_mcse: f64,
    pub mean_design_effect: f64,
    /// Share of replications where this method's |bias| beats the
    /// unweighted |bias|; only set for weighted methods.
    pub improved_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<(usize, String)>,
}

impl EvaluationReport {
    pub fn summary_for(&self, estimand: &str, method: Method) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.estimand == estimand && s.method == method)
    }

    pub fn rows_for<'a>(&'a self, estimand: &'a str, method: Method) -> impl Iterator<Item = &'a ReplicationRow> {
        self.rows.iter().filter(move |r| r.estimand == estimand && r.method == method)
    }

    pub fn write_rows<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let err = |e| Error::csv("<replications>", e);
        wtr.write_record(["replication", "estimand", "method", "bias", "rmse", "ci_covered", "design_effect"])
            .map_err(err)?;
        for r in &self.rows {
            wtr.write_record([
                r.replication.to_string(),
                r.estimand.clone(),
                r.method.as_str().to_string(),
                r.bias.to_string(),
                r.rmse.to_string(),
                r.ci_covered.to_string(),
                r.design_effect.to_string(),
            ])
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::io("<replications>", e))
    }

    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let err = |e| Error::csv("<summary>", e);
        wtr.write_record([
            "estimand",
            "method",
            "replications",
            "mean_bias",
            "bias_mcse",
            "rmse",
            "ci_coverage",
            "coverage_mcse",
            "mean_design_effect",
            "improved_fraction",
        ])
        .map_err(err)?;
        for s in &self.summary {
            wtr.write_record([
                s.estimand.clone(),
                s.method.as_str().to_string(),
                s.replications.to_string(),
                s.mean_bias.to_string(),
                s.bias_mcse.to_string(),
                s.rmse.to_string(),
                s.ci_coverage.to_string(),
                s.coverage_mcse.to_string(),
                s.mean_design_effect.to_string(),
                s.improved_fraction.map(|f| f.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::io("<summary>", e))
    }

    pub fn write_failures<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let err = |e| Error::csv("<failures>", e);
        wtr.write_record(["replication", "error"]).map_err(err)?;
        for (rep, message) in &self.failures {
            wtr.write_record([rep.to_string(), message.clone()]).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::io("<failures>", e))
    }
}

/// One day's weighting inputs.
#[derive(Debug, Clone)]
pub struct CrossSection {
    /// Frame units; `sampled`/`responded` reflect this day.
    pub frame: Vec<FrameUnit>,
    pub respondents: Vec<RespondentRecord>,
}

/// Builds the day's frame and respondent records. Respondents get fresh ids
/// unrelated to frame unit ids. With `sampled_only`, unsampled units are
/// left out of the frame (they do not enter the propensity fit).
fn cross_section(
    world: &SimWorld,
    frame: &[usize],
    day: u32,
    design: &SamplingDesign,
    state: CooldownState,
    config: &SimConfig,
    sampled_only: bool,
) -> (CrossSection, CooldownState) {
    let population = &world.population;
    let (sampled, state) = draw_daily_sample(population, frame, day, design, state);
    let responses = simulate_response(population, frame, &sampled, config, design.seed, day);

    let mut is_sampled = vec![false; if sampled_only { 0 } else { frame.len() }];
    let mut is_responder = vec![false; if sampled_only { 0 } else { frame.len() }];
    let mut units = Vec::new();
    let mut respondents = Vec::new();
    for (&position, response) in sampled.iter().zip(&responses) {
        let unit = frame[position];
        if sampled_only {
            units.push(frame_unit(world, unit, true, response.is_some()));
        } else {
            is_sampled[position] = true;
            is_responder[position] = response.is_some();
        }
        if let Some(r) = response {
            let region = population.region(unit);
            respondents.push(RespondentRecord {
                respondent_id: format!("d{day:03}-r{:06}", respondents.len()),
                region: population.region_name(unit).to_string(),
                covariates: population.codes(unit).to_vec(),
                outcomes: BTreeMap::from([
                    (VALUE_OUTCOME.to_string(), population.value(unit)),
                    (FLAG_OUTCOME.to_string(), population.flag(unit)),
                ]),
                answered_count: r.answered_count,
                design_weight: Some(1.0 / design.inclusion[region]),
            });
        }
    }
    if !sampled_only {
        units = frame
            .iter()
            .enumerate()
            .map(|(p, &unit)| frame_unit(world, unit, is_sampled[p], is_responder[p]))
            .collect();
    }
    (CrossSection { frame: units, respondents }, state)
}

fn frame_unit(world: &SimWorld, unit: usize, sampled: bool, responded: bool) -> FrameUnit {
    FrameUnit {
        unit_id: format!("U{unit:07}"),
        region: world.population.region_name(unit).to_string(),
        covariates: world.population.codes(unit).to_vec(),
        sampled,
        responded,
    }
}

/// Weights for one cross-section.
#[derive(Debug, Clone)]
pub struct WeightedSection {
    pub respondents: Vec<RespondentRecord>,
    pub ipsw: WeightVector,
    pub final_weights: WeightVector,
    pub report: CalibrationReport,
}

/// Runs the two weighting stages on a simulated cross-section.
pub fn weigh_cross_section(world: &SimWorld, config: &SimConfig, section: &CrossSection) -> Result<WeightedSection> {
    let spec = &config.pipeline;
    let respondents = filter_eligible(&section.respondents, spec.min_answered);
    if respondents.is_empty() {
        return Err(Error::EmptySample);
    }
    let all_responded = section.frame.iter().filter(|u| u.sampled).all(|u| u.responded);
    let ipsw = if all_responded {
        // every sampled unit responded: propensity is identically one
        let raw: Vec<f64> = respondents
            .iter()
            .map(|r| if spec.use_design_weights { r.design_weight.unwrap_or(1.0) } else { 1.0 })
            .collect();
        let trimmed = spec.stage1_trim.apply(&raw)?;
        WeightVector::for_respondents(Stage::Ipsw, &respondents, trimmed.weights)?
    } else {
        let model = fit_propensity(&section.frame, &world.schema, spec.l2_strength)?;
        ipsw_weights(&model, &respondents, &spec.stage1_trim, spec.use_design_weights)?
    };
    let (final_weights, report) = match spec.calibration {
        CalibrationMode::Cells => post_stratify(&ipsw, &respondents, &world.schema, &world.cells, &spec.raking.trim)?,
        CalibrationMode::Margins => rake(&ipsw, &respondents, &world.schema, &world.margins, &spec.raking)?,
    };
    Ok(WeightedSection { respondents, ipsw, final_weights, report })
}

#[derive(Default)]
struct Accumulator {
    errors: Vec<f64>,
    covered: Vec<f64>,
    deffs: Vec<f64>,
}

fn run_replication(config: &SimConfig, replication: usize) -> Result<Vec<ReplicationRow>> {
    let seed = derive_seed(config.seed, STREAM_REPLICATION, replication as u64);
    let world = generate_with_seed(config, derive_seed(seed, STREAM_POPULATION, 0))?;
    let frame = world.population.frame();
    let design = SamplingDesign::from_config(config, seed);
    let targets = estimands(config);
    let mut acc: BTreeMap<(usize, Method), Accumulator> = BTreeMap::new();
    let mut state = CooldownState::new(frame.len());
    for day in 0..config.n_days {
        let (section, next) = cross_section(&world, &frame, day, &design, state, config, true);
        state = next;
        let weighted = weigh_cross_section(&world, config, &section)?;
        let n = weighted.respondents.len();
        let uniform = WeightVector::for_respondents(
            Stage::Final,
            &weighted.respondents,
            vec![world.truth.population_size as f64 / n as f64; n],
        )?;
        for method in Method::ALL {
            let weights = match method {
                Method::Unweighted => &uniform,
                Method::Ipsw => &weighted.ipsw,
                Method::Final => &weighted.final_weights,
            };
            let deff = design_effect(weights.values());
            for (i, estimand) in targets.iter().enumerate() {
                let estimate = estimand.estimate(weights, &weighted.respondents, config.alpha_multiplier)?;
                let truth = estimand.truth(&world);
                let entry = acc.entry((i, method)).or_default();
                entry.errors.push(estimate.point - truth);
                entry.covered.push(if estimate.covers(truth) { 1.0 } else { 0.0 });
                entry.deffs.push(deff);
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((i, method), a)| {
            let sq: Vec<f64> = a.errors.iter().map(|e| e * e).collect();
            ReplicationRow {
                replication,
                estimand: targets[i].label(),
                method,
                bias: mean(&a.errors),
                rmse: mean(&sq).sqrt(),
                ci_covered: mean(&a.covered),
                design_effect: mean(&a.deffs),
            }
        })
        .collect())
}

fn summarize(config: &SimConfig, rows: &[ReplicationRow]) -> Vec<SummaryRow> {
    let mut grouped: BTreeMap<(String, Method), Vec<&ReplicationRow>> = BTreeMap::new();
    for r in rows {
        grouped.entry((r.estimand.clone(), r.method)).or_default().push(r);
    }
    let mut out = Vec::new();
    for estimand in estimands(config).iter().map(Estimand::label) {
        let baseline: BTreeMap<usize, f64> = grouped
            .get(&(estimand.clone(), Method::Unweighted))
            .map(|rs| rs.iter().map(|r| (r.replication, r.bias)).collect())
            .unwrap_or_default();
        for method in Method::ALL {
            let Some(rs) = grouped.get(&(estimand.clone(), method)) else { continue };
            let count = rs.len();
            let biases: Vec<f64> = rs.iter().map(|r| r.bias).collect();
            let mean_bias = mean(&biases);
            let bias_mcse = if count > 1 {
                let dev: Vec<f64> = biases.iter().map(|b| (b - mean_bias) * (b - mean_bias)).collect();
                (pairwise_sum(&dev) / (count - 1) as f64 / count as f64).sqrt()
            } else {
                0.0
            };
            let sq: Vec<f64> = rs.iter().map(|r| r.rmse * r.rmse).collect();
            let coverage = mean(&rs.iter().map(|r| r.ci_covered).collect::<Vec<_>>());
            let improved_fraction = (method != Method::Unweighted).then(|| {
                let wins = rs.iter().filter(|r| r.bias.abs() < baseline[&r.replication].abs()).count();
                wins as f64 / count as f64
            });
            out.push(SummaryRow {
                estimand: estimand.clone(),
                method,
                replications: count,
                mean_bias,
                bias_mcse,
                rmse: mean(&sq).sqrt(),
                ci_coverage: coverage,
                coverage_mcse: (coverage * (1.0 - coverage) / count as f64).sqrt(),
                mean_design_effect: mean(&rs.iter().map(|r| r.design_effect).collect::<Vec<_>>()),
                improved_fraction,
            });
        }
    }
    out
}

/// Runs every replication (in parallel, reduced in replication order).
/// Failed replications are recorded and skipped.
pub fn run_replications(config: &SimConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let outcomes: Vec<Result<Vec<ReplicationRow>>> =
        (0..config.replications).into_par_iter().map(|rep| run_replication(config, rep)).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    info!("{} replications, {} failed", config.replications, failures.len());
    let summary = summarize(config, &rows);
    Ok(EvaluationReport { rows, summary, failures })
}

/// Writes one simulated day as input files for the command-line pipeline:
/// `schema.toml`, `frame.csv`, `respondents.csv`, `benchmark_cells.csv`,
/// `benchmark_margins.csv` and `truth.toml`.
pub fn export_cross_section(config: &SimConfig, dir: &Path) -> Result<()> {
    let world = super::population::generate_population(config)?;
    let frame = world.population.frame();
    let design = SamplingDesign::from_config(config, config.seed);
    let (section, _) = cross_section(&world, &frame, 0, &design, CooldownState::new(frame.len()), config, false);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema_path = dir.join("schema.toml");
    std::fs::write(&schema_path, world.schema.to_toml_string()).map_err(|e| Error::io(&schema_path, e))?;
    write_file(dir.join("frame.csv"), |w| write_frame(w, &section.frame, &world.schema))?;
    write_file(dir.join("respondents.csv"), |w| write_respondents(w, &section.respondents, &world.schema))?;
    write_file(dir.join("benchmark_cells.csv"), |w| write_benchmarks(w, &BenchmarkTable::Cells(world.cells.clone())))?;
    write_file(dir.join("benchmark_margins.csv"), |w| {
        write_benchmarks(w, &BenchmarkTable::Margins(world.margins.clone()))
    })?;

    #[derive(Serialize)]
    struct Truth<'a> {
        population_size: usize,
        means: &'a BTreeMap<String, f64>,
        totals: &'a BTreeMap<String, f64>,
        region_ratios: &'a BTreeMap<String, BTreeMap<String, f64>>,
    }
    let truth = Truth {
        population_size: world.truth.population_size,
        means: &world.truth.means,
        totals: &world.truth.totals,
        region_ratios: &world.truth.region_ratios,
    };
    let truth_path = dir.join("truth.toml");
    std::fs::write(&truth_path, toml::to_string(&truth).expect("truth serializes"))
        .map_err(|e| Error::io(&truth_path, e))
}
