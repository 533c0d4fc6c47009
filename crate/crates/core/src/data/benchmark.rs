//! Population benchmark tables: full cross-classified cells for
//! post-stratification, or per-dimension margins for raking.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, relative_error};

use super::records::Classified;
use super::schema::CovariateSchema;

/// Relative tolerance for margins agreeing on the population total.
pub const MARGIN_TOTAL_TOLERANCE: f64 = 1e-9;

/// Separator joining dimensions in a joint margin name (`age:gender`) and
/// values in its categories (`18-24:female`).
pub const JOINT_SEPARATOR: char = ':';

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: Vec<String>,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTable {
    dimensions: Vec<String>,
    cells: Vec<Cell>,
    total: f64,
}

impl CellTable {
    pub fn new(dimensions: Vec<String>, cells: Vec<Cell>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::Benchmark("cells table has no dimensions".into()));
        }
        let mut seen = HashSet::new();
        for d in &dimensions {
            if !seen.insert(d.as_str()) {
                return Err(Error::Benchmark(format!("dimension `{d}` repeated")));
            }
        }
        let mut keys = HashSet::new();
        for cell in &cells {
            if cell.key.len() != dimensions.len() {
                return Err(Error::Benchmark(format!("cell {:?} does not match dimensions {dimensions:?}", cell.key)));
            }
            check_count(&cell.key.join(&JOINT_SEPARATOR.to_string()), cell.population)?;
            if !keys.insert(cell.key.clone()) {
                return Err(Error::Benchmark(format!("cell {:?} listed twice", cell.key)));
            }
        }
        let counts: Vec<f64> = cells.iter().map(|c| c.population).collect();
        let total = pairwise_sum(&counts);
        if !(total > 0.0) {
            return Err(Error::Benchmark("population total must be positive".into()));
        }
        Ok(CellTable { dimensions, cells, total })
    }

    pub fn dimensions(&self) -> &[String] {
        &self.dimensions
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn population_total(&self) -> f64 {
        self.total
    }

    /// Cell key of a unit, in this table's dimension order.
    pub fn key_of<T: Classified>(&self, unit: &T, schema: &CovariateSchema) -> Option<Vec<String>> {
        self.dimensions.iter().map(|d| unit.dimension_value(schema, d).map(str::to_string)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Margin {
    name: String,
    dimensions: Vec<String>,
    categories: Vec<(String, f64)>,
}

impl Margin {
    pub fn new(name: impl Into<String>, categories: Vec<(String, f64)>) -> Result<Self> {
        let name = name.into();
        let dimensions: Vec<String> = name.split(JOINT_SEPARATOR).map(str::to_string).collect();
        if dimensions.iter().any(String::is_empty) {
            return Err(Error::Benchmark(format!("malformed margin name `{name}`")));
        }
        if categories.is_empty() {
            return Err(Error::Benchmark(format!("margin `{name}` has no categories")));
        }
        let mut seen = HashSet::new();
        for (category, count) in &categories {
            if category.split(JOINT_SEPARATOR).count() != dimensions.len() {
                return Err(Error::Benchmark(format!(
                    "category `{category}` of margin `{name}` needs {} `{JOINT_SEPARATOR}`-separated parts",
                    dimensions.len()
                )));
            }
            check_count(&format!("{name}={category}"), *count)?;
            if !seen.insert(category.as_str()) {
                return Err(Error::Benchmark(format!("category `{category}` of margin `{name}` listed twice")));
            }
        }
        Ok(Margin { name, dimensions, categories })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimensions(&self) -> &[String] {
        &self.dimensions
    }

    pub fn categories(&self) -> &[(String, f64)] {
        &self.categories
    }

    pub fn total(&self) -> f64 {
        let counts: Vec<f64> = self.categories.iter().map(|c| c.1).collect();
        pairwise_sum(&counts)
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|(c, _)| c == category)
    }

    /// Category label of a unit under this margin.
    pub fn category_of<T: Classified>(&self, unit: &T, schema: &CovariateSchema) -> Option<String> {
        let parts: Option<Vec<&str>> = self.dimensions.iter().map(|d| unit.dimension_value(schema, d)).collect();
        Some(parts?.join(&JOINT_SEPARATOR.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginTable {
    margins: Vec<Margin>,
    total: f64,
}

impl MarginTable {
    pub fn new(margins: Vec<Margin>) -> Result<Self> {
        let Some(first) = margins.first() else {
            return Err(Error::Benchmark("margins table is empty".into()));
        };
        let mut seen = HashSet::new();
        for m in &margins {
            if !seen.insert(m.name()) {
                return Err(Error::Benchmark(format!("margin `{}` listed twice", m.name())));
            }
        }
        let total = first.total();
        if !(total > 0.0) {
            return Err(Error::Benchmark("population total must be positive".into()));
        }
        for m in &margins[1..] {
            let t = m.total();
            if relative_error(t, total) > MARGIN_TOTAL_TOLERANCE {
                return Err(Error::Benchmark(format!(
                    "margin `{}` sums to {t} but margin `{}` sums to {total}",
                    m.name(),
                    first.name()
                )));
            }
        }
        Ok(MarginTable { margins, total })
    }

    pub fn margins(&self) -> &[Margin] {
        &self.margins
    }

    pub fn margin(&self, name: &str) -> Option<&Margin> {
        self.margins.iter().find(|m| m.name() == name)
    }

    pub fn population_total(&self) -> f64 {
        self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkTable {
    Cells(CellTable),
    Margins(MarginTable),
}

impl BenchmarkTable {
    pub fn population_total(&self) -> f64 {
        match self {
            BenchmarkTable::Cells(t) => t.population_total(),
            BenchmarkTable::Margins(t) => t.population_total(),
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            BenchmarkTable::Cells(_) => "cells",
            BenchmarkTable::Margins(_) => "margins",
        }
    }

    /// Checks every unit maps onto a known cell or margin category, returning
    /// one message per offending row (1-based).
    pub fn coverage_findings<T: Classified>(&self, units: &[T], schema: &CovariateSchema) -> Vec<(usize, String)> {
        let mut findings = Vec::new();
        match self {
            BenchmarkTable::Cells(table) => {
                let keys: HashSet<&Vec<String>> = table.cells().iter().map(|c| &c.key).collect();
                for (i, unit) in units.iter().enumerate() {
                    match table.key_of(unit, schema) {
                        None => findings.push((i + 1, format!("cannot derive cell over {:?}", table.dimensions()))),
                        Some(key) if !keys.contains(&key) => {
                            findings.push((i + 1, describe_missing(table.dimensions(), &key, unit.region())))
                        }
                        Some(_) => {}
                    }
                }
            }
            BenchmarkTable::Margins(table) => {
                for (i, unit) in units.iter().enumerate() {
                    for margin in table.margins() {
                        match margin.category_of(unit, schema) {
                            None => {
                                findings.push((i + 1, format!("margin `{}` names an unknown dimension", margin.name())))
                            }
                            Some(c) if margin.category_index(&c).is_none() => {
                                if margin.name() == "region" {
                                    findings.push((i + 1, format!("region `{c}` is absent from the region margin")));
                                } else {
                                    findings.push((
                                        i + 1,
                                        format!("category `{c}` is absent from margin `{}`", margin.name()),
                                    ));
                                }
                            }
                            Some(_) => {}
                        }
                    }
                }
            }
        }
        findings
    }
}

fn describe_missing(dimensions: &[String], key: &[String], region: &str) -> String {
    if dimensions.iter().any(|d| d == "region") && key.iter().any(|k| k == region) {
        format!("cell {key:?} (region `{region}`) is absent from the benchmark table")
    } else {
        format!("cell {key:?} is absent from the benchmark table")
    }
}

fn check_count(what: &str, count: f64) -> Result<()> {
    if !count.is_finite() || count < 0.0 {
        return Err(Error::Benchmark(format!(
            "population count for `{what}` must be finite and nonnegative, got {count}"
        )));
    }
    Ok(())
}
