//! CSV ingestion and emission for respondents, frame units, benchmarks and weights.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::error::{Error, Result};

use super::benchmark::{BenchmarkTable, Cell, CellTable, Margin, MarginTable};
use super::records::{FrameUnit, RespondentRecord};
use super::schema::CovariateSchema;
use super::weights::{Stage, WeightVector};

const OUTCOME_PREFIX: &str = "y_";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input)
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(headers: &StringRecord) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if index.insert(h.to_string(), i).is_some() {
                return Err(Error::InvalidInput(format!("column `{h}` appears twice")));
            }
        }
        Ok(Columns { index })
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

fn parse_number(row: usize, column: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| Error::Row { row, message: format!("`{raw}` in column `{column}` is not a number") })
}

fn parse_flag(row: usize, column: &str, raw: &str) -> Result<bool> {
    match raw {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Row { row, message: format!("`{other}` in column `{column}` must be 0 or 1") }),
    }
}

fn parse_covariates(
    row: usize,
    record: &StringRecord,
    columns: &[usize],
    schema: &CovariateSchema,
) -> Result<Vec<usize>> {
    schema
        .covariates()
        .iter()
        .zip(columns)
        .map(|(spec, &col)| spec.parse_value(&record[col]).map_err(|message| Error::Row { row, message }))
        .collect()
}

fn covariate_columns(columns: &Columns, schema: &CovariateSchema) -> Result<Vec<usize>> {
    schema.covariates().iter().map(|c| columns.require(c.name())).collect()
}

fn nonempty_field(row: usize, column: &str, raw: &str) -> Result<String> {
    if raw.is_empty() {
        return Err(Error::Row { row, message: format!("empty `{column}`") });
    }
    Ok(raw.to_string())
}

pub fn read_respondents<R: Read>(input: R, schema: &CovariateSchema) -> Result<Vec<RespondentRecord>> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| Error::csv("<respondents>", e))?.clone();
    let columns = Columns::new(&headers)?;
    let id_col = columns.require("respondent_id")?;
    let region_col = columns.require("region")?;
    let answered_col = columns.require("answered_count")?;
    let cov_cols = covariate_columns(&columns, schema)?;
    let design_col = columns.get("design_weight");
    let mut outcome_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h.starts_with(OUTCOME_PREFIX) {
            outcome_cols.push((h.to_string(), i));
        } else if !matches!(h, "respondent_id" | "region" | "answered_count" | "design_weight")
            && schema.get(h).is_none()
        {
            return Err(Error::InvalidInput(format!("unexpected column `{h}` in respondents file")));
        }
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i + 1;
        let record = result.map_err(|e| Error::csv("<respondents>", e))?;
        let respondent_id = nonempty_field(row, "respondent_id", &record[id_col])?;
        if !seen.insert(respondent_id.clone()) {
            return Err(Error::DuplicateId(respondent_id));
        }
        let answered_count = record[answered_col].parse::<u32>().map_err(|_| Error::Row {
            row,
            message: format!("`{}` is not a valid answered_count", &record[answered_col]),
        })?;
        let mut outcomes = BTreeMap::new();
        for (name, col) in &outcome_cols {
            outcomes.insert(name.clone(), parse_number(row, name, &record[*col])?);
        }
        let design_weight = match design_col {
            Some(col) if !record[col].is_empty() => {
                let w = parse_number(row, "design_weight", &record[col])?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::Row { row, message: format!("design_weight must be positive, got {w}") });
                }
                Some(w)
            }
            _ => None,
        };
        records.push(RespondentRecord {
            respondent_id,
            region: nonempty_field(row, "region", &record[region_col])?,
            covariates: parse_covariates(row, &record, &cov_cols, schema)?,
            outcomes,
            answered_count,
            design_weight,
        });
    }
    Ok(records)
}

pub fn load_respondents(path: impl AsRef<Path>, schema: &CovariateSchema) -> Result<Vec<RespondentRecord>> {
    let path = path.as_ref();
    read_respondents(open(path)?, schema).map_err(|e| relabel(e, path))
}

pub fn write_respondents<W: Write>(out: W, records: &[RespondentRecord], schema: &CovariateSchema) -> Result<()> {
    let outcome_names: Vec<String> = records.first().map(|r| r.outcomes.keys().cloned().collect()).unwrap_or_default();
    let with_design = records.iter().any(|r| r.design_weight.is_some());
    let mut wtr = WriterBuilder::new().from_writer(out);
    let mut header = vec!["respondent_id".to_string(), "region".into(), "answered_count".into()];
    header.extend(schema.covariates().iter().map(|c| c.name().to_string()));
    header.extend(outcome_names.iter().cloned());
    if with_design {
        header.push("design_weight".into());
    }
    wtr.write_record(&header).map_err(|e| Error::csv("<respondents>", e))?;
    for r in records {
        let mut row = vec![r.respondent_id.clone(), r.region.clone(), r.answered_count.to_string()];
        row.extend(r.covariates.iter().enumerate().map(|(i, &c)| schema.label(i, c).to_string()));
        for name in &outcome_names {
            let v = r.outcome(name).ok_or_else(|| {
                Error::InvalidInput(format!("respondent `{}` lacks outcome `{name}`", r.respondent_id))
            })?;
            row.push(v.to_string());
        }
        if with_design {
            row.push(r.design_weight.map(|w| w.to_string()).unwrap_or_default());
        }
        wtr.write_record(&row).map_err(|e| Error::csv("<respondents>", e))?;
    }
    wtr.flush().map_err(|e| Error::io("<respondents>", e))
}

pub fn read_frame<R: Read>(input: R, schema: &CovariateSchema) -> Result<Vec<FrameUnit>> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| Error::csv("<frame>", e))?.clone();
    let columns = Columns::new(&headers)?;
    let id_col = columns.require("unit_id")?;
    let region_col = columns.require("region")?;
    let sampled_col = columns.require("sampled")?;
    let responded_col = columns.require("responded")?;
    let cov_cols = covariate_columns(&columns, schema)?;

    let mut seen = HashSet::new();
    let mut units = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i + 1;
        let record = result.map_err(|e| Error::csv("<frame>", e))?;
        let unit_id = nonempty_field(row, "unit_id", &record[id_col])?;
        if !seen.insert(unit_id.clone()) {
            return Err(Error::DuplicateId(unit_id));
        }
        let sampled = parse_flag(row, "sampled", &record[sampled_col])?;
        let responded = parse_flag(row, "responded", &record[responded_col])?;
        if responded && !sampled {
            return Err(Error::Row { row, message: format!("unit `{unit_id}` responded without being sampled") });
        }
        units.push(FrameUnit {
            unit_id,
            region: nonempty_field(row, "region", &record[region_col])?,
            covariates: parse_covariates(row, &record, &cov_cols, schema)?,
            sampled,
            responded,
        });
    }
    Ok(units)
}

pub fn load_frame(path: impl AsRef<Path>, schema: &CovariateSchema) -> Result<Vec<FrameUnit>> {
    let path = path.as_ref();
    read_frame(open(path)?, schema).map_err(|e| relabel(e, path))
}

pub fn write_frame<W: Write>(out: W, units: &[FrameUnit], schema: &CovariateSchema) -> Result<()> {
    let mut wtr = WriterBuilder::new().from_writer(out);
    let mut header = vec!["unit_id".to_string(), "region".into(), "sampled".into(), "responded".into()];
    header.extend(schema.covariates().iter().map(|c| c.name().to_string()));
    wtr.write_record(&header).map_err(|e| Error::csv("<frame>", e))?;
    for u in units {
        let mut row =
            vec![u.unit_id.clone(), u.region.clone(), (u.sampled as u8).to_string(), (u.responded as u8).to_string()];
        row.extend(u.covariates.iter().enumerate().map(|(i, &c)| schema.label(i, c).to_string()));
        wtr.write_record(&row).map_err(|e| Error::csv("<frame>", e))?;
    }
    wtr.flush().map_err(|e| Error::io("<frame>", e))
}

/// Benchmark file contents before table invariants are enforced.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkRows {
    Cells {
        dimensions: Vec<String>,
        cells: Vec<Cell>,
    },
    /// Margins in order of first appearance.
    Margins(Vec<(String, Vec<(String, f64)>)>),
}

impl BenchmarkRows {
    pub fn build(self) -> Result<BenchmarkTable> {
        match self {
            BenchmarkRows::Cells { dimensions, cells } => Ok(BenchmarkTable::Cells(CellTable::new(dimensions, cells)?)),
            BenchmarkRows::Margins(margins) => {
                let margins =
                    margins.into_iter().map(|(name, cats)| Margin::new(name, cats)).collect::<Result<Vec<_>>>()?;
                Ok(BenchmarkTable::Margins(MarginTable::new(margins)?))
            }
        }
    }
}

pub fn read_benchmark_rows<R: Read>(input: R) -> Result<BenchmarkRows> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| Error::csv("<benchmarks>", e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.last() != Some(&"population") {
        return Err(Error::MissingColumn("population".into()));
    }
    let is_margins = names == ["margin", "category", "population"];
    let mut margins: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    let mut cells = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i + 1;
        let record = result.map_err(|e| Error::csv("<benchmarks>", e))?;
        let population = parse_number(row, "population", &record[names.len() - 1])?;
        if !population.is_finite() || population < 0.0 {
            return Err(Error::Benchmark(format!("row {row}: population must be nonnegative, got {population}")));
        }
        if is_margins {
            let name = nonempty_field(row, "margin", &record[0])?;
            let category = nonempty_field(row, "category", &record[1])?;
            match margins.iter_mut().find(|(n, _)| *n == name) {
                Some((_, cats)) => cats.push((category, population)),
                None => margins.push((name, vec![(category, population)])),
            }
        } else {
            let key =
                (0..names.len() - 1).map(|c| nonempty_field(row, names[c], &record[c])).collect::<Result<Vec<_>>>()?;
            cells.push(Cell { key, population });
        }
    }
    if is_margins {
        Ok(BenchmarkRows::Margins(margins))
    } else {
        let dimensions = names[..names.len() - 1].iter().map(|s| s.to_string()).collect();
        Ok(BenchmarkRows::Cells { dimensions, cells })
    }
}

pub fn read_benchmarks<R: Read>(input: R) -> Result<BenchmarkTable> {
    read_benchmark_rows(input)?.build()
}

pub fn load_benchmarks(path: impl AsRef<Path>) -> Result<BenchmarkTable> {
    let path = path.as_ref();
    read_benchmarks(open(path)?).map_err(|e| relabel(e, path))
}

pub fn load_benchmark_rows(path: impl AsRef<Path>) -> Result<BenchmarkRows> {
    let path = path.as_ref();
    read_benchmark_rows(open(path)?).map_err(|e| relabel(e, path))
}

pub fn write_benchmarks<W: Write>(out: W, table: &BenchmarkTable) -> Result<()> {
    let mut wtr = WriterBuilder::new().from_writer(out);
    let err = |e| Error::csv("<benchmarks>", e);
    match table {
        BenchmarkTable::Cells(t) => {
            let mut header: Vec<&str> = t.dimensions().iter().map(String::as_str).collect();
            header.push("population");
            wtr.write_record(&header).map_err(err)?;
            for cell in t.cells() {
                let mut row = cell.key.clone();
                row.push(cell.population.to_string());
                wtr.write_record(&row).map_err(err)?;
            }
        }
        BenchmarkTable::Margins(t) => {
            wtr.write_record(["margin", "category", "population"]).map_err(err)?;
            for m in t.margins() {
                for (category, count) in m.categories() {
                    wtr.write_record([m.name(), category.as_str(), &count.to_string()]).map_err(err)?;
                }
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<benchmarks>", e))
}

pub fn write_weights<W: Write>(out: W, weights: &WeightVector) -> Result<()> {
    let mut wtr = WriterBuilder::new().from_writer(out);
    let err = |e| Error::csv("<weights>", e);
    wtr.write_record(["respondent_id", "weight", "stage"]).map_err(err)?;
    let stage = weights.stage().to_string();
    for (id, w) in weights.iter() {
        wtr.write_record([id, &w.to_string(), &stage]).map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::io("<weights>", e))
}

pub fn read_weights<R: Read>(input: R) -> Result<WeightVector> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| Error::csv("<weights>", e))?.clone();
    let columns = Columns::new(&headers)?;
    let id_col = columns.require("respondent_id")?;
    let w_col = columns.require("weight")?;
    let stage_col = columns.require("stage")?;
    let mut stage = None;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i + 1;
        let record = result.map_err(|e| Error::csv("<weights>", e))?;
        let s: Stage = record[stage_col].parse()?;
        if *stage.get_or_insert(s) != s {
            return Err(Error::Row { row, message: "weights file mixes stages".into() });
        }
        ids.push(nonempty_field(row, "respondent_id", &record[id_col])?);
        values.push(parse_number(row, "weight", &record[w_col])?);
    }
    WeightVector::new(stage.unwrap_or(Stage::Final), ids, values)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightVector> {
    let path = path.as_ref();
    read_weights(open(path)?).map_err(|e| relabel(e, path))
}

/// Writes through a buffered file handle; `f` receives the writer.
pub fn write_file(path: impl AsRef<Path>, f: impl FnOnce(&mut std::io::BufWriter<File>) -> Result<()>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(create(path)?);
    f(&mut out).map_err(|e| relabel(e, path))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Replaces placeholder stream names with the real path.
fn relabel(err: Error, path: &Path) -> Error {
    match err {
        Error::Io { source, .. } => Error::Io { path: path.to_path_buf(), source },
        Error::Csv { source, .. } => Error::Csv { path: path.to_path_buf(), source },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::CovariateSpec;
    use crate::data::Classified;
    use proptest::prelude::*;

    fn schema() -> CovariateSchema {
        CovariateSchema::new(vec![
            CovariateSpec::continuous("age", vec![25.0, 45.0, 65.0], Some(18.0)).unwrap(),
            CovariateSpec::categorical("gender", ["female", "male"]).unwrap(),
        ])
        .unwrap()
    }

    const RESPONDENTS: &str = "respondent_id,region,answered_count,age,gender,y_cli,y_score
a,north,5,18,female,1,0.5
b,south,1,44.999,male,0,1.25
c,north,2,70,male,0,-3
";

    #[test]
    fn reads_well_formed_respondents() {
        let s = schema();
        let records = read_respondents(RESPONDENTS.as_bytes(), &s).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].covariate_label(&s, "age"), Some("18-24"));
        assert_eq!(records[1].covariate_label(&s, "age"), Some("25-44"));
        assert_eq!(records[2].covariate_label(&s, "age"), Some("65+"));
        assert_eq!(records[2].dimension_value(&s, "gender"), Some("male"));
        assert_eq!(records[1].outcome("y_score"), Some(1.25));
        assert_eq!(records[0].answered_count, 5);
    }

    #[test]
    fn unknown_level_reports_the_row() {
        let text = "respondent_id,region,answered_count,age,gender\na,n,2,30,female\nb,n,2,30,other\n";
        match read_respondents(text.as_bytes(), &schema()) {
            Err(Error::Row { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("other"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_and_missing_columns() {
        let dup = "respondent_id,region,answered_count,age,gender\na,n,2,30,female\na,n,2,30,male\n";
        assert!(matches!(read_respondents(dup.as_bytes(), &schema()), Err(Error::DuplicateId(id)) if id == "a"));
        let missing = "respondent_id,region,answered_count,age\na,n,2,30\n";
        assert!(
            matches!(read_respondents(missing.as_bytes(), &schema()), Err(Error::MissingColumn(c)) if c == "gender")
        );
    }

    #[test]
    fn frame_rejects_responded_without_sampled() {
        let text = "unit_id,region,sampled,responded,age,gender\nu1,n,1,1,30,female\nu2,n,0,1,30,male\n";
        assert!(matches!(read_frame(text.as_bytes(), &schema()), Err(Error::Row { row: 2, .. })));
        let ok = "unit_id,region,sampled,responded,age,gender\nu1,n,1,1,30,female\nu2,n,0,0,30,male\n";
        let units = read_frame(ok.as_bytes(), &schema()).unwrap();
        assert!(units[0].responded && !units[1].sampled);
    }

    #[test]
    fn benchmark_modes_and_negative_counts() {
        let cells = "region,gender,population\nn,female,10\nn,male,12.5\n";
        match read_benchmarks(cells.as_bytes()).unwrap() {
            BenchmarkTable::Cells(t) => {
                assert_eq!(t.dimensions(), ["region", "gender"]);
                assert_eq!(t.population_total(), 22.5);
            }
            _ => panic!("expected cells"),
        }
        let margins = "margin,category,population\nregion,n,60\nregion,s,40\nage:gender,18-24:female,100\n";
        assert!(matches!(read_benchmarks(margins.as_bytes()).unwrap(), BenchmarkTable::Margins(_)));
        let negative = "region,population\nn,-3\n";
        assert!(read_benchmarks(negative.as_bytes()).is_err());
    }

    #[test]
    fn region_absent_from_margin_is_named() {
        let s = schema();
        let records = read_respondents(RESPONDENTS.as_bytes(), &s).unwrap();
        let margins = "margin,category,population\nregion,north,100\n";
        let table = read_benchmarks(margins.as_bytes()).unwrap();
        let findings = table.coverage_findings(&records, &s);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].0, 2);
        assert!(findings[0].1.contains("south"), "{}", findings[0].1);
    }

    fn arb_records() -> impl Strategy<Value = Vec<(u8, u8, u32, f64)>> {
        proptest::collection::vec((0u8..4, 0u8..2, 0u32..9, -1e6f64..1e6), 0..20)
    }

    proptest! {
        #[test]
        fn respondents_round_trip(rows in arb_records()) {
            let s = schema();
            let records: Vec<RespondentRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, &(age, g, answered, y))| RespondentRecord {
                    respondent_id: format!("r{i}"),
                    region: if i % 2 == 0 { "n".into() } else { "s".into() },
                    covariates: vec![age as usize, g as usize],
                    outcomes: [("y_a".to_string(), y), ("y_b".to_string(), y * 0.1)].into_iter().collect(),
                    answered_count: answered,
                    design_weight: Some(1.0 + i as f64 / 7.0),
                })
                .collect();
            let mut buf = Vec::new();
            write_respondents(&mut buf, &records, &s).unwrap();
            let back = read_respondents(buf.as_slice(), &s).unwrap();
            prop_assert_eq!(back, records);
        }
    }

    #[test]
    fn weights_round_trip_exactly() {
        let w = WeightVector::new(Stage::Final, vec!["a".into(), "b".into()], vec![1.0 / 3.0, 1e-300]).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &w).unwrap();
        assert_eq!(read_weights(buf.as_slice()).unwrap(), w);
    }
}
