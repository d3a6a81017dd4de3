use serde::{Deserialize, Serialize};

use super::{category_histogram, FailureTag, RunDiff};
use crate::bench::{Percent, Pp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}` (markdown or csv)")),
        }
    }
}

/// One line of a pass-rate table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub configuration: String,
    pub dataset: String,
    pub pass_at_1: Percent,
    pub delta_pp: Option<Pp>,
}

pub enum Report<'a> {
    /// Pass rates per configuration with the delta against a baseline.
    Rates(&'a [ReportRow]),
    /// Regressions and improvements with one tag per regression.
    Diff { diff: &'a RunDiff, tags: &'a [FailureTag] },
}

const RATE_HEADERS: [&str; 4] = ["configuration", "dataset", "pass_at_1", "delta_pp"];
const DIFF_HEADERS: [&str; 4] = ["task_id", "change", "category", "evidence"];

fn csv_string(headers: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(headers).expect("in-memory write");
    for row in rows {
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn md_cell(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', " ")
}

fn md_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!(
        "| {} |\n|{}|\n",
        headers.join(" | "),
        vec!["---"; headers.len()].join("|")
    );
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| md_cell(c)).collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

fn diff_rows(diff: &RunDiff, tags: &[FailureTag]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for id in &diff.regressions {
        let tag = tags.iter().find(|t| &t.task_id == id);
        rows.push(vec![
            id.clone(),
            "regression".into(),
            tag.map_or("unclassified".into(), |t| t.category.to_string()),
            tag.map_or(String::new(), |t| t.evidence.clone()),
        ]);
    }
    for id in &diff.improvements {
        rows.push(vec![id.clone(), "improvement".into(), String::new(), String::new()]);
    }
    rows
}

pub fn emit_report(report: &Report<'_>, format: ReportFormat) -> String {
    match report {
        Report::Rates(rows) => {
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let (rate, delta) = match format {
                        ReportFormat::Markdown => (
                            r.pass_at_1.to_string(),
                            r.delta_pp.map_or("-".into(), |d| d.to_string()),
                        ),
                        ReportFormat::Csv => (
                            format!("{:.1}", r.pass_at_1.as_f64()),
                            r.delta_pp.map_or(String::new(), |d| format!("{:.1}", d.as_f64())),
                        ),
                    };
                    vec![r.configuration.clone(), r.dataset.clone(), rate, delta]
                })
                .collect();
            match format {
                ReportFormat::Markdown => md_table(&["Configuration", "Dataset", "pass@1", "Δ vs baseline"], &cells),
                ReportFormat::Csv => csv_string(&RATE_HEADERS, cells),
            }
        }
        Report::Diff { diff, tags } => {
            let rows = diff_rows(diff, tags);
            match format {
                ReportFormat::Csv => csv_string(&DIFF_HEADERS, rows),
                ReportFormat::Markdown => {
                    let mut out = format!(
                        "# {} vs {}\n\n{} regressions, {} improvements, {} unchanged\n\n",
                        diff.baseline_run,
                        diff.candidate_run,
                        diff.regressions.len(),
                        diff.improvements.len(),
                        diff.unchanged.len()
                    );
                    let histogram = category_histogram(tags);
                    if !histogram.is_empty() {
                        let cells: Vec<Vec<String>> = histogram
                            .iter()
                            .map(|(c, n)| vec![c.to_string(), n.to_string()])
                            .collect();
                        out.push_str(&md_table(&["Regression category", "Count"], &cells));
                        out.push('\n');
                    }
                    out.push_str(&md_table(&["Task", "Change", "Category", "Evidence"], &rows));
                    out
                }
            }
        }
    }
}

/// Reads rows back from the CSV form of [`Report::Rates`].
pub fn parse_rate_csv(text: &str) -> Result<Vec<ReportRow>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        rows.push(ReportRow {
            configuration: field(0),
            dataset: field(1),
            pass_at_1: field(2).parse().map_err(|e: crate::bench::BadPercent| e.to_string())?,
            delta_pp: match field(3).as_str() {
                "" => None,
                d => Some(d.parse().map_err(|e: crate::bench::BadPercent| e.to_string())?),
            },
        });
    }
    Ok(rows)
}
