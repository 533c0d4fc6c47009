use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::benchmark::JOINT_SEPARATOR as JOINT;
use crate::data::{Cell, CellTable, CovariateSchema, CovariateSpec, Margin, MarginTable};
use crate::error::{Error, Result};
use crate::numeric::{logistic, pairwise_sum};

use super::config::{LinearSpec, SimConfig};
use super::seeds::{derive_seed, STREAM_POPULATION};

pub const VALUE_OUTCOME: &str = "y_value";
pub const FLAG_OUTCOME: &str = "y_flag";

/// Linear predictor compiled to per-level lookup tables.
#[derive(Debug, Clone)]
pub(crate) struct CompiledLinear {
    intercept: f64,
    region: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

impl CompiledLinear {
    pub(crate) fn new(spec: &LinearSpec, config: &SimConfig) -> Self {
        let mut compiled = CompiledLinear {
            intercept: spec.intercept,
            region: vec![0.0; config.regions.len()],
            levels: config.covariates.iter().map(|c| vec![0.0; c.levels.len()]).collect(),
        };
        for (key, &value) in &spec.coefficients {
            match config.resolve_key(key).expect("validated config") {
                (None, r) => compiled.region[r] += value,
                (Some(c), l) => compiled.levels[c][l] += value,
            }
        }
        compiled
    }

    pub(crate) fn eval(&self, region: usize, codes: &[usize]) -> f64 {
        let mut eta = self.intercept + self.region[region];
        for (table, &code) in self.levels.iter().zip(codes) {
            eta += table[code];
        }
        eta
    }
}

/// A realized synthetic population, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    region_names: Vec<String>,
    regions: Vec<usize>,
    /// Row-major `len × covariate_count` level codes.
    codes: Vec<usize>,
    covariate_count: usize,
    values: Vec<f64>,
    flags: Vec<f64>,
    in_frame: Vec<bool>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region(&self, unit: usize) -> usize {
        self.regions[unit]
    }

    pub fn region_name(&self, unit: usize) -> &str {
        &self.region_names[self.regions[unit]]
    }

    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }

    pub fn codes(&self, unit: usize) -> &[usize] {
        &self.codes[unit * self.covariate_count..(unit + 1) * self.covariate_count]
    }

    pub fn value(&self, unit: usize) -> f64 {
        self.values[unit]
    }

    pub fn flag(&self, unit: usize) -> f64 {
        self.flags[unit]
    }

    pub fn outcome(&self, name: &str, unit: usize) -> Option<f64> {
        match name {
            VALUE_OUTCOME => Some(self.values[unit]),
            FLAG_OUTCOME => Some(self.flags[unit]),
            _ => None,
        }
    }

    pub fn in_frame(&self, unit: usize) -> bool {
        self.in_frame[unit]
    }

    /// Indices of units inside the sampling frame, ascending.
    pub fn frame(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.in_frame[i]).collect()
    }
}

/// Ground truth computed from the realized population.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub population_size: usize,
    pub means: BTreeMap<String, f64>,
    pub totals: BTreeMap<String, f64>,
    /// Within-region mean per outcome.
    pub region_ratios: BTreeMap<String, BTreeMap<String, f64>>,
    /// Population per observed cell of the benchmark dimensions.
    pub stratum_counts: BTreeMap<Vec<String>, f64>,
}

/// Everything one replication needs: population, truth and benchmarks.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub schema: CovariateSchema,
    pub population: Population,
    pub truth: SimTruth,
    pub cells: CellTable,
    pub margins: MarginTable,
    pub inclusion: Vec<f64>,
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub(crate) fn schema_for(config: &SimConfig) -> Result<CovariateSchema> {
    let specs = config
        .covariates
        .iter()
        .map(|c| CovariateSpec::categorical(c.name.clone(), c.levels.iter().cloned()))
        .collect::<Result<Vec<_>>>()?;
    CovariateSchema::new(specs)
}

/// Generates the population for `config.seed`.
pub fn generate_population(config: &SimConfig) -> Result<SimWorld> {
    config.validate()?;
    generate_with_seed(config, derive_seed(config.seed, STREAM_POPULATION, 0))
}

pub(crate) fn generate_with_seed(config: &SimConfig, seed: u64) -> Result<SimWorld> {
    let schema = schema_for(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.population_size;
    let k = config.covariates.len();
    let shares: Vec<f64> = config.regions.iter().map(|r| r.share).collect();
    let per_region: Vec<Vec<&[f64]>> = config
        .regions
        .iter()
        .map(|r| {
            config.covariates.iter().map(|c| c.by_region.get(&r.name).unwrap_or(&c.probabilities).as_slice()).collect()
        })
        .collect();
    let coverage = CompiledLinear::new(&config.coverage, config);
    let outcome = CompiledLinear::new(&config.outcome.linear, config);
    let noise = Normal::new(0.0, config.outcome.noise_sd).map_err(|e| Error::Config(e.to_string()))?;

    let mut population = Population {
        region_names: config.regions.iter().map(|r| r.name.clone()).collect(),
        regions: Vec::with_capacity(n),
        codes: Vec::with_capacity(n * k),
        covariate_count: k,
        values: Vec::with_capacity(n),
        flags: Vec::with_capacity(n),
        in_frame: Vec::with_capacity(n),
    };
    let mut codes = vec![0usize; k];
    for _ in 0..n {
        let region = draw_categorical(&mut rng, &shares);
        for (c, probs) in per_region[region].iter().enumerate() {
            codes[c] = draw_categorical(&mut rng, probs);
        }
        let eps = if config.outcome.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let value = outcome.eval(region, &codes) + eps;
        let covered = rng.random::<f64>() < logistic(coverage.eval(region, &codes));
        population.regions.push(region);
        population.codes.extend_from_slice(&codes);
        population.values.push(value);
        population.flags.push(if value > config.outcome.threshold { 1.0 } else { 0.0 });
        population.in_frame.push(covered);
    }

    for (r, name) in population.region_names.iter().enumerate() {
        if !population.regions.contains(&r) {
            return Err(Error::Config(format!("region `{name}` drew no population units")));
        }
    }

    let truth = compute_truth(config, &schema, &population);
    let (cells, margins) = benchmarks_for(config, &schema, &population)?;
    Ok(SimWorld { schema, population, truth, cells, margins, inclusion: config.inclusion_probabilities() })
}

fn compute_truth(config: &SimConfig, schema: &CovariateSchema, population: &Population) -> SimTruth {
    let n = population.len();
    let mut means = BTreeMap::new();
    let mut totals = BTreeMap::new();
    let mut region_ratios = BTreeMap::new();
    for (name, column) in [(VALUE_OUTCOME, &population.values), (FLAG_OUTCOME, &population.flags)] {
        let total = pairwise_sum(column);
        totals.insert(name.to_string(), total);
        means.insert(name.to_string(), total / n as f64);
        let mut by_region = BTreeMap::new();
        for (r, region) in population.region_names.iter().enumerate() {
            let inside: Vec<f64> = (0..n).map(|i| if population.regions[i] == r { 1.0 } else { 0.0 }).collect();
            let yz: Vec<f64> = column.iter().zip(&inside).map(|(y, z)| y * z).collect();
            by_region.insert(region.clone(), pairwise_sum(&yz) / pairwise_sum(&inside));
        }
        region_ratios.insert(name.to_string(), by_region);
    }
    SimTruth {
        population_size: n,
        means,
        totals,
        region_ratios,
        stratum_counts: stratum_counts(schema, population, &cell_dimensions(config)),
    }
}

fn cell_dimensions(config: &SimConfig) -> Vec<String> {
    let mut dims = vec!["region".to_string()];
    dims.extend(config.benchmark_covariates());
    dims
}

fn stratum_counts(schema: &CovariateSchema, population: &Population, dims: &[String]) -> BTreeMap<Vec<String>, f64> {
    let indices: Vec<Option<usize>> =
        dims.iter().map(|d| if d == "region" { None } else { schema.index_of(d) }).collect();
    let mut counts: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for i in 0..population.len() {
        let key: Vec<String> = indices
            .iter()
            .map(|idx| match idx {
                None => population.region_name(i).to_string(),
                Some(c) => schema.label(*c, population.codes(i)[*c]).to_string(),
            })
            .collect();
        *counts.entry(key).or_insert(0.0) += 1.0;
    }
    counts
}

/// Level order for a dimension: regions in config order, covariate levels
/// in declared order.
fn dimension_order(config: &SimConfig, dim: &str) -> Vec<String> {
    if dim == "region" {
        config.regions.iter().map(|r| r.name.clone()).collect()
    } else {
        config.covariates.iter().find(|c| c.name == dim).map(|c| c.levels.clone()).unwrap_or_default()
    }
}

fn ordered_counts(config: &SimConfig, dims: &[String], counts: &BTreeMap<Vec<String>, f64>) -> Vec<(Vec<String>, f64)> {
    let mut keys: Vec<Vec<String>> = vec![Vec::new()];
    for d in dims {
        let levels = dimension_order(config, d);
        keys = keys
            .into_iter()
            .flat_map(|prefix| {
                levels.iter().map(move |l| {
                    let mut k = prefix.clone();
                    k.push(l.clone());
                    k
                })
            })
            .collect();
    }
    keys.into_iter().filter_map(|k| counts.get(&k).map(|&c| (k, c))).collect()
}

fn benchmarks_for(
    config: &SimConfig,
    schema: &CovariateSchema,
    population: &Population,
) -> Result<(CellTable, MarginTable)> {
    let dims = cell_dimensions(config);
    let counts = stratum_counts(schema, population, &dims);
    let cells =
        ordered_counts(config, &dims, &counts).into_iter().map(|(key, population)| Cell { key, population }).collect();
    let cells = CellTable::new(dims, cells)?;

    let mut margin_dims: Vec<Vec<String>> = vec![vec!["region".to_string()]];
    let covs = config.benchmark_covariates();
    if config.pipeline.joint_margin {
        if !covs.is_empty() {
            margin_dims.push(covs);
        }
    } else {
        margin_dims.extend(covs.into_iter().map(|c| vec![c]));
    }
    let margins = margin_dims
        .iter()
        .map(|dims| {
            let counts = stratum_counts(schema, population, dims);
            let cats = ordered_counts(config, dims, &counts)
                .into_iter()
                .map(|(k, c)| (k.join(&JOINT.to_string()), c))
                .collect();
            Margin::new(dims.join(&JOINT.to_string()), cats)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((cells, MarginTable::new(margins)?))
}
