//! Plot-ready table formats. Three tab-separated layouts share the same
//! header shape: a schema-version tag line, a `# runspec:` provenance line
//! echoing the resolved run configuration, and a column-name row.
//!
//! * metric series — `decision_time_index, method, metric, value, stderr`;
//! * merged series — the same plus a leading `run_id` column;
//! * decision log — one row per task evaluation.
//!
//! Values are written in shortest round-trip form, so reading a table back
//! reproduces the numbers exactly.

use anyhow::{bail, Context, Result};
use sava_core::engine::DecisionRecord;
use sava_core::policy::Decision;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const METRICS_TAG: &str = "# sava-metrics v1";
pub const MERGED_TAG: &str = "# sava-merged v1";
pub const DECLOG_TAG: &str = "# sava-declog v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    /// 1-based decision-time index.
    pub index: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedRow {
    pub run_id: String,
    pub row: SeriesRow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableFile {
    Series {
        runspec: String,
        rows: Vec<SeriesRow>,
    },
    Merged {
        runspec: String,
        rows: Vec<MergedRow>,
    },
    Declog {
        runspec: String,
        rows: Vec<DecisionRecord>,
    },
}

fn header(tag: &str, runspec: &str, columns: &str) -> String {
    format!("{tag}\n# runspec: {runspec}\n{columns}\n")
}

pub fn render_series(runspec: &str, rows: &[SeriesRow]) -> String {
    let mut out = header(
        METRICS_TAG,
        runspec,
        "decision_time_index\tmethod\tmetric\tvalue\tstderr",
    );
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.index, r.method, r.metric, r.value, r.stderr
        )
        .unwrap();
    }
    out
}

pub fn render_merged(runspec: &str, rows: &[MergedRow]) -> String {
    let mut out = header(
        MERGED_TAG,
        runspec,
        "run_id\tdecision_time_index\tmethod\tmetric\tvalue\tstderr",
    );
    for m in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            m.run_id, m.row.index, m.row.method, m.row.metric, m.row.value, m.row.stderr
        )
        .unwrap();
    }
    out
}

pub fn render_declog(runspec: &str, rows: &[DecisionRecord]) -> String {
    let mut out = header(
        DECLOG_TAG,
        runspec,
        "decision_time_index\ttime\ttask_id\tdecision\tp_a\tp_b\tlevel_a\tlevel_b",
    );
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.step + 1,
            r.time,
            r.task,
            r.decision,
            r.p_a,
            r.p_b,
            r.level_a,
            r.level_b
        )
        .unwrap();
    }
    out
}

pub fn write_table(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn parse_decision(s: &str) -> Result<Decision> {
    match s {
        "A" => Ok(Decision::A),
        "B" => Ok(Decision::B),
        "C" => Ok(Decision::C),
        "D" => Ok(Decision::D),
        other => bail!("unknown decision {other:?}"),
    }
}

/// Read any of the three table formats, dispatching on the tag line.
pub fn read_table(path: &Path) -> Result<TableFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let tag = lines.next().context("empty table file")?;
    let runspec_line = lines.next().context("missing runspec line")?;
    let runspec = runspec_line
        .strip_prefix("# runspec: ")
        .context("malformed runspec line")?
        .to_string();
    let _columns = lines.next().context("missing column header")?;

    let fields = |line: &str, n: usize| -> Result<Vec<String>> {
        let parts: Vec<String> = line.split('\t').map(str::to_string).collect();
        if parts.len() != n {
            bail!("expected {n} columns, found {} in {line:?}", parts.len());
        }
        Ok(parts)
    };

    match tag {
        METRICS_TAG => {
            let mut rows = Vec::new();
            for line in lines {
                let f = fields(line, 5)?;
                rows.push(SeriesRow {
                    index: f[0].parse()?,
                    method: f[1].clone(),
                    metric: f[2].clone(),
                    value: f[3].parse()?,
                    stderr: f[4].parse()?,
                });
            }
            Ok(TableFile::Series { runspec, rows })
        }
        MERGED_TAG => {
            let mut rows = Vec::new();
            for line in lines {
                let f = fields(line, 6)?;
                rows.push(MergedRow {
                    run_id: f[0].clone(),
                    row: SeriesRow {
                        index: f[1].parse()?,
                        method: f[2].clone(),
                        metric: f[3].clone(),
                        value: f[4].parse()?,
                        stderr: f[5].parse()?,
                    },
                });
            }
            Ok(TableFile::Merged { runspec, rows })
        }
        DECLOG_TAG => {
            let mut rows = Vec::new();
            for line in lines {
                let f = fields(line, 8)?;
                rows.push(DecisionRecord {
                    step: f[0].parse::<usize>()? - 1,
                    time: f[1].parse()?,
                    task: f[2].parse()?,
                    decision: parse_decision(&f[3])?,
                    p_a: f[4].parse()?,
                    p_b: f[5].parse()?,
                    level_a: f[6].parse()?,
                    level_b: f[7].parse()?,
                });
            }
            Ok(TableFile::Declog { runspec, rows })
        }
        other => bail!("unrecognized table schema {other:?} in {}", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_roundtrip_is_lossless() {
        let rows = vec![
            SeriesRow {
                index: 1,
                method: "sava".into(),
                metric: "fsr".into(),
                value: 0.012345678901234567,
                stderr: 1.0 / 3.0,
            },
            SeriesRow {
                index: 2,
                method: "lordpp".into(),
                metric: "tsr".into(),
                value: f64::MIN_POSITIVE,
                stderr: 0.0,
            },
        ];
        let dir = std::env::temp_dir().join("sava_tables_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("series.tsv");
        write_table(&path, &render_series("{\"seed\":7}", &rows)).unwrap();
        match read_table(&path).unwrap() {
            TableFile::Series { runspec, rows: got } => {
                assert_eq!(runspec, "{\"seed\":7}");
                assert_eq!(got, rows);
            }
            other => panic!("wrong table kind: {other:?}"),
        }
    }

    #[test]
    fn declog_roundtrip_is_lossless() {
        let rows = vec![DecisionRecord {
            step: 4,
            time: 99,
            task: 7,
            decision: Decision::B,
            p_a: 0.9000000000000001,
            p_b: 0.25,
            level_a: 2.502261321821403e-4,
            level_b: 0.0,
        }];
        let dir = std::env::temp_dir().join("sava_tables_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.tsv");
        write_table(&path, &render_declog("{}", &rows)).unwrap();
        match read_table(&path).unwrap() {
            TableFile::Declog { rows: got, .. } => assert_eq!(got, rows),
            other => panic!("wrong table kind: {other:?}"),
        }
    }

    #[test]
    fn merged_roundtrip_is_lossless() {
        let rows = vec![MergedRow {
            run_id: "run_a".into(),
            row: SeriesRow {
                index: 3,
                method: "sava".into(),
                metric: "mfsr".into(),
                value: 0.1 + 1e-16,
                stderr: 0.025,
            },
        }];
        let dir = std::env::temp_dir().join("sava_tables_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("merged.tsv");
        write_table(&path, &render_merged("{}", &rows)).unwrap();
        match read_table(&path).unwrap() {
            TableFile::Merged { rows: got, .. } => assert_eq!(got, rows),
            other => panic!("wrong table kind: {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let dir = std::env::temp_dir().join("sava_tables_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bogus.tsv");
        fs::write(&path, "# not-a-table v9\n# runspec: {}\ncols\n").unwrap();
        assert!(read_table(&path).is_err());
    }
}
