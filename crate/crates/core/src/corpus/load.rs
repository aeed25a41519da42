//! TSV ingestion and reading-time preprocessing.
//!
//! Input files are UTF-8 TSV with a header row. Garden-path files carry
//! `sentence_id, pair_id, construction, condition, position, word, roi,
//! ambiguity_verb_flag, exclude_flag`; filler and naturalistic files carry
//! only `sentence_id, position, word`. Both add either `rt_mean`
//! (aggregated) or `subject_id, rt` (per-subject).

use super::{
    CorpusError, Condition, Construction, DataPoint, Dataset, DatasetKind, RT_MAX_MS, RT_MIN_MS,
};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Input reading-time schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// One row per (word, subject) observation with `subject_id, rt`.
    PerSubject,
    /// One row per word with a precomputed `rt_mean`.
    Aggregated,
}

/// One per-subject observation before filtering and averaging.
#[derive(Debug, Clone)]
pub struct RawObservation {
    pub point: DataPoint,
    pub subject_id: String,
}

/// What preprocessing dropped.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct PreprocessReport {
    /// Raw observations outside the retention bounds.
    pub dropped_observations: usize,
    /// (sentence_id, position) cells where no observation survived.
    pub dropped_positions: Vec<(String, usize)>,
    /// Sentences removed entirely because a position lost all observations.
    pub dropped_sentences: Vec<String>,
}

struct Columns {
    sentence_id: usize,
    position: usize,
    word: usize,
    rt_mean: Option<usize>,
    subject_id: Option<usize>,
    rt: Option<usize>,
    pair_id: Option<usize>,
    construction: Option<usize>,
    condition: Option<usize>,
    roi: Option<usize>,
    ambiguity_verb_flag: Option<usize>,
    exclude_flag: Option<usize>,
}

fn find_columns(
    headers: &csv::StringRecord,
    schema: Schema,
    kind: DatasetKind,
    path: &str,
) -> Result<Columns, CorpusError> {
    let idx = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        idx(name).ok_or_else(|| CorpusError::Schema {
            path: path.to_string(),
            column: name.to_string(),
        })
    };
    let cols = Columns {
        sentence_id: require("sentence_id")?,
        position: require("position")?,
        word: require("word")?,
        rt_mean: idx("rt_mean"),
        subject_id: idx("subject_id"),
        rt: idx("rt"),
        pair_id: idx("pair_id"),
        construction: idx("construction"),
        condition: idx("condition"),
        roi: idx("roi"),
        ambiguity_verb_flag: idx("ambiguity_verb_flag"),
        exclude_flag: idx("exclude_flag"),
    };
    match schema {
        Schema::Aggregated => {
            if cols.rt_mean.is_none() {
                return Err(CorpusError::Schema {
                    path: path.to_string(),
                    column: "rt_mean".to_string(),
                });
            }
        }
        Schema::PerSubject => {
            for c in ["subject_id", "rt"] {
                if idx(c).is_none() {
                    return Err(CorpusError::Schema {
                        path: path.to_string(),
                        column: c.to_string(),
                    });
                }
            }
        }
    }
    if kind == DatasetKind::GardenPath {
        for c in [
            "pair_id",
            "construction",
            "condition",
            "roi",
            "ambiguity_verb_flag",
            "exclude_flag",
        ] {
            if idx(c).is_none() {
                return Err(CorpusError::Schema {
                    path: path.to_string(),
                    column: c.to_string(),
                });
            }
        }
    }
    Ok(cols)
}

fn parse_point(
    record: &csv::StringRecord,
    cols: &Columns,
    kind: DatasetKind,
    path: &str,
    line: u64,
) -> Result<DataPoint, CorpusError> {
    let err = |msg: String| CorpusError::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let field = |i: usize| record.get(i).unwrap_or("").trim();
    let position: usize = field(cols.position)
        .parse()
        .map_err(|_| err(format!("bad position `{}`", field(cols.position))))?;
    let word = field(cols.word).to_string();
    if word.is_empty() {
        return Err(err("empty word".to_string()));
    }

    let mut point = DataPoint {
        word,
        rt: 0.0,
        pair_id: None,
        construction: None,
        condition: None,
        position,
        roi: None,
        sentence_id: field(cols.sentence_id).to_string(),
        is_sentence_final: false, // recomputed after grouping
        ambiguity_verb: false,
        excluded: false,
    };

    if kind == DatasetKind::GardenPath {
        let raw_pair = field(cols.pair_id.unwrap());
        if raw_pair.is_empty() {
            return Err(err("empty pair_id".to_string()));
        }
        point.pair_id = Some(raw_pair.to_string());
        let c_raw = field(cols.construction.unwrap());
        point.construction = Some(
            Construction::parse(c_raw).ok_or_else(|| err(format!("bad construction `{c_raw}`")))?,
        );
        let cond_raw = field(cols.condition.unwrap());
        point.condition =
            Some(Condition::parse(cond_raw).ok_or_else(|| err(format!("bad condition `{cond_raw}`")))?);
        let roi_raw = field(cols.roi.unwrap());
        point.roi = match roi_raw {
            "NA" | "na" | "" => None,
            "0" => Some(0),
            "1" => Some(1),
            "2" => Some(2),
            other => return Err(err(format!("bad roi `{other}` (expected 0,1,2,NA)"))),
        };
        point.ambiguity_verb = parse_flag(field(cols.ambiguity_verb_flag.unwrap()))
            .ok_or_else(|| err(format!("bad ambiguity_verb_flag `{}`", field(cols.ambiguity_verb_flag.unwrap()))))?;
        point.excluded = parse_flag(field(cols.exclude_flag.unwrap()))
            .ok_or_else(|| err(format!("bad exclude_flag `{}`", field(cols.exclude_flag.unwrap()))))?;
    }
    Ok(point)
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "0" | "false" | "" => Some(false),
        "1" | "true" => Some(true),
        _ => None,
    }
}

/// Loads a reading-time TSV. Per-subject files are filtered to the retention
/// bounds and averaged per word position; the preprocessing report records
/// what was dropped.
pub fn load_dataset(
    path: &Path,
    schema: Schema,
    kind: DatasetKind,
) -> Result<(Dataset, PreprocessReport), CorpusError> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    if bytes.is_empty() {
        return Ok((
            Dataset::new(kind, Vec::new()).expect("empty dataset is valid"),
            PreprocessReport::default(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(false)
        .from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Parse {
            path: display.clone(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let cols = find_columns(&headers, schema, kind, &display)?;

    match schema {
        Schema::Aggregated => {
            let mut points = Vec::new();
            for result in reader.records() {
                let record = result.map_err(|e| CorpusError::Parse {
                    path: display.clone(),
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    msg: e.to_string(),
                })?;
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                let mut point = parse_point(&record, &cols, kind, &display, line)?;
                let raw = record.get(cols.rt_mean.unwrap()).unwrap_or("").trim();
                point.rt = raw.parse().map_err(|_| CorpusError::Parse {
                    path: display.clone(),
                    line,
                    msg: format!("bad rt_mean `{raw}`"),
                })?;
                points.push(point);
            }
            let points = finalize_sentences(points);
            Ok((Dataset::new(kind, points)?, PreprocessReport::default()))
        }
        Schema::PerSubject => {
            let mut raw = Vec::new();
            for result in reader.records() {
                let record = result.map_err(|e| CorpusError::Parse {
                    path: display.clone(),
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    msg: e.to_string(),
                })?;
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                let mut point = parse_point(&record, &cols, kind, &display, line)?;
                let rt_raw = record.get(cols.rt.unwrap()).unwrap_or("").trim();
                point.rt = rt_raw.parse().map_err(|_| CorpusError::Parse {
                    path: display.clone(),
                    line,
                    msg: format!("bad rt `{rt_raw}`"),
                })?;
                let subject_id = record
                    .get(cols.subject_id.unwrap())
                    .unwrap_or("")
                    .trim()
                    .to_string();
                raw.push(RawObservation { point, subject_id });
            }
            preprocess_rt(kind, raw)
        }
    }
}

/// Filters raw observations to the retention bounds, averages the survivors
/// per word position, and drops positions (and their sentences) where no
/// observation survived.
pub fn preprocess_rt(
    kind: DatasetKind,
    raw: Vec<RawObservation>,
) -> Result<(Dataset, PreprocessReport), CorpusError> {
    let mut report = PreprocessReport::default();
    // (sentence order index) -> position -> (template point, surviving rts)
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, BTreeMap<usize, (DataPoint, Vec<f64>)>> = BTreeMap::new();
    for obs in raw {
        let sid = obs.point.sentence_id.clone();
        if !order.contains(&sid) {
            order.push(sid.clone());
        }
        let entry = groups
            .entry(sid)
            .or_default()
            .entry(obs.point.position)
            .or_insert_with(|| (obs.point.clone(), Vec::new()));
        if obs.point.rt >= RT_MIN_MS && obs.point.rt <= RT_MAX_MS && obs.point.rt.is_finite() {
            entry.1.push(obs.point.rt);
        } else {
            report.dropped_observations += 1;
        }
    }

    let mut points = Vec::new();
    for sid in &order {
        let positions = &groups[sid];
        let empty: Vec<usize> = positions
            .iter()
            .filter(|(_, (_, rts))| rts.is_empty())
            .map(|(pos, _)| *pos)
            .collect();
        if !empty.is_empty() {
            for pos in empty {
                report.dropped_positions.push((sid.clone(), pos));
            }
            // A sentence with a missing word cannot feed surprisal contexts,
            // so the whole sentence is dropped alongside the empty position.
            report.dropped_sentences.push(sid.clone());
            continue;
        }
        for (_, (point, rts)) in positions {
            let mut p = point.clone();
            p.rt = rts.iter().sum::<f64>() / rts.len() as f64;
            points.push(p);
        }
    }
    let points = finalize_sentences(points);
    Ok((Dataset::new(kind, points)?, report))
}

/// Recomputes sentence-final flags from the last position per sentence.
fn finalize_sentences(mut points: Vec<DataPoint>) -> Vec<DataPoint> {
    let mut last: BTreeMap<String, usize> = BTreeMap::new();
    for p in &points {
        let e = last.entry(p.sentence_id.clone()).or_insert(p.position);
        *e = (*e).max(p.position);
    }
    for p in &mut points {
        p.is_sentence_final = p.position == last[&p.sentence_id];
    }
    points
}

/// Writes a dataset in the normalized aggregated TSV schema. Loading the
/// result round-trips exactly (full-precision float formatting).
pub fn write_tsv(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    let mut out = Vec::new();
    let gp = dataset.kind == DatasetKind::GardenPath;
    if gp {
        writeln!(
            out,
            "sentence_id\tpair_id\tconstruction\tcondition\tposition\tword\troi\tambiguity_verb_flag\texclude_flag\trt_mean"
        )
        .unwrap();
    } else {
        writeln!(out, "sentence_id\tposition\tword\trt_mean").unwrap();
    }
    for p in dataset.points() {
        if gp {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.sentence_id,
                p.pair_id.as_deref().unwrap_or(""),
                p.construction.map(|c| c.as_str()).unwrap_or(""),
                p.condition.map(|c| c.as_str()).unwrap_or(""),
                p.position,
                p.word,
                p.roi.map(|r| r.to_string()).unwrap_or_else(|| "NA".to_string()),
                if p.ambiguity_verb { 1 } else { 0 },
                if p.excluded { 1 } else { 0 },
                p.rt,
            )
            .unwrap();
        } else {
            writeln!(out, "{}\t{}\t{}\t{}", p.sentence_id, p.position, p.word, p.rt).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|source| CorpusError::Io {
        path: display,
        source,
    })
}
