//! Rating-stream ingestion: converts timestamped review records into a
//! replay world. Items become tasks at their first review; ratings become
//! bounded observations centered at the labeling threshold (`x = rating - 3`,
//! so the support is `[-2, 2]`); an item's true state is A when its average
//! rating strictly exceeds 3.
//!
//! Decision times are one second before each item's first review (from the
//! second item on) plus the final timestamp. The replay world carries
//! `obs_lag = 1`: an evaluation at grid time `t` sees ratings strictly prior
//! to `t`.

use crate::world::{Arm, DecisionGrid, TaskData, TaskStream, Time, World, WorldError, WorldSource};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    BadRow { line: usize, reason: String },
    #[error("replay needs at least two items; got {0}")]
    TooFewItems(usize),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// One review event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewRecord {
    pub item_id: String,
    pub user_id: String,
    pub rating: u8,
    pub timestamp: Time,
}

/// Row-error handling for the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// First malformed row aborts the parse.
    Strict,
    /// Malformed rows are collected and skipped.
    Skip,
}

#[derive(Debug, Default)]
pub struct ParseReport {
    pub records: Vec<ReviewRecord>,
    /// `(line number, reason)` for rows skipped in `Skip` mode.
    pub skipped: Vec<(usize, String)>,
}

struct RowIssue {
    reason: String,
    /// Structural issues (wrong column count, non-integer numeric fields)
    /// mark a header candidate; value-range violations never do.
    structural: bool,
}

fn parse_row(line: &str, delim: char) -> Result<ReviewRecord, RowIssue> {
    let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
    if fields.len() != 4 {
        return Err(RowIssue {
            reason: format!("expected 4 columns, found {}", fields.len()),
            structural: true,
        });
    }
    let rating: u8 = fields[2].parse().map_err(|_| RowIssue {
        reason: format!("rating {:?} is not an integer", fields[2]),
        structural: true,
    })?;
    if !(1..=5).contains(&rating) {
        return Err(RowIssue {
            reason: format!("rating {rating} outside 1..=5"),
            structural: false,
        });
    }
    let timestamp: Time = fields[3].parse().map_err(|_| RowIssue {
        reason: format!("timestamp {:?} is not an integer", fields[3]),
        structural: true,
    })?;
    if timestamp <= 0 {
        return Err(RowIssue {
            reason: format!("timestamp {timestamp} must be positive"),
            structural: false,
        });
    }
    Ok(ReviewRecord {
        item_id: fields[0].to_string(),
        user_id: fields[1].to_string(),
        rating,
        timestamp,
    })
}

/// Parse a delimited review table (comma or tab, auto-detected; header row
/// optional). Input order is preserved. A leading row whose rating or
/// timestamp column is not an integer is treated as the header.
pub fn parse_records(input: &str, mode: ParseMode) -> Result<ParseReport, IngestError> {
    let mut report = ParseReport::default();
    let mut delim: Option<char> = None;
    let mut first_content = true;
    for (idx, raw) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let d = *delim.get_or_insert_with(|| if line.contains('\t') { '\t' } else { ',' });
        let parsed = parse_row(line, d);
        let was_first = first_content;
        first_content = false;
        match parsed {
            Ok(rec) => report.records.push(rec),
            Err(issue) => {
                if was_first && issue.structural {
                    continue; // header row
                }
                match mode {
                    ParseMode::Strict => {
                        return Err(IngestError::BadRow {
                            line: lineno,
                            reason: issue.reason,
                        })
                    }
                    ParseMode::Skip => report.skipped.push((lineno, issue.reason)),
                }
            }
        }
    }
    Ok(report)
}

/// Keep only items with strictly more than `min_reviews` reviews.
pub fn filter_items(records: Vec<ReviewRecord>, min_reviews: usize) -> Vec<ReviewRecord> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *counts.entry(r.item_id.as_str()).or_default() += 1;
    }
    let keep: std::collections::BTreeSet<String> = counts
        .into_iter()
        .filter(|(_, c)| *c > min_reviews)
        .map(|(id, _)| id.to_string())
        .collect();
    records
        .into_iter()
        .filter(|r| keep.contains(&r.item_id))
        .collect()
}

/// A replay world plus the item ids in task-index order.
#[derive(Debug, Clone)]
pub struct ReplayWorld {
    pub world: World,
    pub items: Vec<String>,
    /// Set when two items share a first-review timestamp (order then falls
    /// back to item id).
    pub tied_arrivals: bool,
}

/// Build the replay world: tasks ordered by first review (ties by item id),
/// observations centered as `rating - 3`, truth `A` iff mean rating > 3.
pub fn build_streams(records: &[ReviewRecord]) -> Result<ReplayWorld, IngestError> {
    let mut per_item: BTreeMap<&str, Vec<(Time, f64)>> = BTreeMap::new();
    for r in records {
        per_item
            .entry(r.item_id.as_str())
            .or_default()
            .push((r.timestamp, f64::from(r.rating) - 3.0));
    }
    if per_item.len() < 2 {
        return Err(IngestError::TooFewItems(per_item.len()));
    }

    type ItemEntry = (Time, String, Vec<(Time, f64)>);
    let mut items: Vec<ItemEntry> = per_item
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by_key(|(t, _)| *t);
            (samples[0].0, id.to_string(), samples)
        })
        .collect();
    items.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let tied_arrivals = items.windows(2).any(|w| w[0].0 == w[1].0);

    let t_end = records.iter().map(|r| r.timestamp).max().unwrap();
    let mut times: Vec<Time> = items[1..].iter().map(|(t0, _, _)| t0 - 1).collect();
    times.push(t_end);
    times.sort_unstable();
    times.dedup();

    let arrivals: Vec<Time> = items.iter().map(|(t0, _, _)| *t0).collect();
    let truths: Vec<Arm> = items
        .iter()
        .map(|(_, _, samples)| {
            let mean_rating =
                samples.iter().map(|(_, x)| x + 3.0).sum::<f64>() / samples.len() as f64;
            if mean_rating > 3.0 {
                Arm::A
            } else {
                Arm::B
            }
        })
        .collect();
    let data: Vec<TaskData> = items
        .iter()
        .map(|(_, _, samples)| {
            TaskData::Stream(TaskStream {
                samples: samples.clone(),
            })
        })
        .collect();
    let item_ids: Vec<String> = items.iter().map(|(_, id, _)| id.clone()).collect();

    let world = World {
        grid: DecisionGrid::new(times, arrivals)?,
        truths,
        data,
        obs_lag: 1,
        source: WorldSource::Replay {
            input: format!("{} items / {} reviews", item_ids.len(), records.len()),
        },
        task_seeds: Vec::new(),
    };
    world.validate()?;
    Ok(ReplayWorld {
        world,
        items: item_ids,
        tied_arrivals,
    })
}
