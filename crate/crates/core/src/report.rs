//! Mode × configuration summary tables and their CSV/HTML renderings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{TestCase, TestMode};
use crate::error::{Error, Result};
use crate::oracle::{Label, TestVerdict};
use crate::store::{Repository, ViewDef};
use crate::uid::Uid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Html,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "html" => Ok(Format::Html),
            _ => Err(Error::InvalidArgument(format!("unknown report format {s:?}"))),
        }
    }
}

/// Label counts per configuration and mode. Each cell keeps the test UIDs
/// it counts so renderings can offer drill-down lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub campaign_id: Uid,
    /// Row keys in UID order, with display names.
    pub configs: BTreeMap<Uid, String>,
    /// Modes present among the campaign's active tests, in declaration order.
    pub modes: Vec<TestMode>,
    cells: BTreeMap<(Uid, TestMode, Label), BTreeSet<Uid>>,
    mode_sizes: BTreeMap<TestMode, usize>,
}

impl SummaryTable {
    /// Builds the table from verdicts of the given active tests. Every test
    /// needs a verdict with a label for every configuration.
    pub fn build(
        campaign_id: &Uid,
        configs: BTreeMap<Uid, String>,
        tests: &[TestCase],
        verdicts: &[TestVerdict],
    ) -> Result<SummaryTable> {
        let by_test: HashMap<&Uid, &TestVerdict> = verdicts.iter().map(|v| (&v.test_uid, v)).collect();
        let missing = tests.iter().filter(|t| !by_test.contains_key(&t.uid)).count();
        if missing > 0 {
            return Err(Error::MissingVerdicts {
                campaign: campaign_id.clone(),
                missing,
            });
        }
        let mut cells: BTreeMap<(Uid, TestMode, Label), BTreeSet<Uid>> = BTreeMap::new();
        let mut mode_sizes: BTreeMap<TestMode, usize> = BTreeMap::new();
        for t in tests {
            *mode_sizes.entry(t.mode).or_default() += 1;
            let v = by_test[&t.uid];
            for config in configs.keys() {
                let label = v.per_config.get(config).ok_or_else(|| Error::MissingConfigLabel {
                    test: t.uid.clone(),
                    config: config.clone(),
                })?;
                cells
                    .entry((config.clone(), t.mode, *label))
                    .or_default()
                    .insert(t.uid.clone());
            }
        }
        let modes = TestMode::ALL
            .into_iter()
            .filter(|m| mode_sizes.contains_key(m))
            .collect();
        Ok(SummaryTable {
            campaign_id: campaign_id.clone(),
            configs,
            modes,
            cells,
            mode_sizes,
        })
    }

    pub fn cell(&self, config: &Uid, mode: TestMode, label: Label) -> usize {
        self.cell_tests(config, mode, label).len()
    }

    pub fn cell_tests(&self, config: &Uid, mode: TestMode, label: Label) -> BTreeSet<Uid> {
        self.cells
            .get(&(config.clone(), mode, label))
            .cloned()
            .unwrap_or_default()
    }

    /// Tests of `mode` covered by the table.
    pub fn mode_size(&self, mode: TestMode) -> usize {
        self.mode_sizes.get(&mode).copied().unwrap_or(0)
    }

    pub fn row_total(&self, config: &Uid) -> usize {
        self.cells
            .iter()
            .filter(|((c, _, _), _)| c == config)
            .map(|(_, s)| s.len())
            .sum()
    }

    pub fn column_total(&self, mode: TestMode, label: Label) -> usize {
        self.configs.keys().map(|c| self.cell(c, mode, label)).sum()
    }

    /// Count over all modes for one configuration and label.
    pub fn label_total(&self, config: &Uid, label: Label) -> usize {
        self.modes.iter().map(|m| self.cell(config, *m, label)).sum()
    }

    pub fn grand_total(&self) -> usize {
        self.configs.keys().map(|c| self.row_total(c)).sum()
    }

    /// Default column set: identifiers, total, then every mode × label.
    pub fn default_columns(&self) -> Vec<String> {
        let mut cols = vec!["config_uid".to_owned(), "config.name".to_owned(), "summary.total".to_owned()];
        for m in &self.modes {
            for l in Label::ALL {
                cols.push(format!("summary.{}.{}", m.as_str(), l.as_str()));
            }
        }
        cols
    }

    /// Columns a view contributes at table level; the full default set when
    /// it selects none.
    pub fn columns_for(&self, view: Option<&ViewDef>) -> Vec<String> {
        let picked: Vec<String> = view
            .map(|v| {
                v.columns
                    .iter()
                    .filter(|c| is_table_column(c))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        if picked.is_empty() {
            self.default_columns()
        } else {
            picked
        }
    }

    fn value(&self, config: &Uid, column: &str) -> Value {
        match column {
            "config_uid" => Value::Text(config.to_string()),
            "config.name" => Value::Text(self.configs.get(config).cloned().unwrap_or_default()),
            "summary.total" => Value::Count(self.row_total(config), self.row_tests(config, None, None)),
            _ => {
                let rest = column.strip_prefix("summary.").unwrap_or(column);
                let (mode, label) = match rest.split_once('.') {
                    Some((m, l)) => (TestMode::parse(m), Label::parse(l)),
                    None => (None, Label::parse(rest)),
                };
                match label {
                    Some(l) => {
                        let tests = self.row_tests(config, mode, Some(l));
                        Value::Count(tests.len(), tests)
                    }
                    None => Value::Text(String::new()),
                }
            }
        }
    }

    fn row_tests(&self, config: &Uid, mode: Option<TestMode>, label: Option<Label>) -> BTreeSet<Uid> {
        self.cells
            .iter()
            .filter(|((c, m, l), _)| {
                c == config && mode.is_none_or(|x| x == *m) && label.is_none_or(|x| x == *l)
            })
            .flat_map(|(_, s)| s.iter().cloned())
            .collect()
    }
}

fn is_table_column(c: &str) -> bool {
    c.starts_with("summary.") || c == "config_uid" || c == "config.name"
}

enum Value {
    Text(String),
    Count(usize, BTreeSet<Uid>),
}

impl Value {
    fn text(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            Value::Count(n, _) => n.to_string(),
        }
    }
}

/// Loads the campaign's verdicts and builds its table over the tests that
/// are still active.
pub fn summarize(repo: &Repository, campaign_id: &Uid) -> Result<SummaryTable> {
    let campaign = repo.campaign(campaign_id)?;
    let mut tests = Vec::new();
    for uid in &campaign.test_uids {
        let t = repo.test(uid)?;
        if t.is_active() {
            tests.push(t);
        }
    }
    let verdicts = repo.verdicts(campaign_id)?;
    let mut configs = BTreeMap::new();
    for uid in &campaign.config_uids {
        configs.insert(uid.clone(), repo.config(uid)?.name);
    }
    SummaryTable::build(campaign_id, configs, &tests, &verdicts)
}

pub fn render(table: &SummaryTable, format: Format, view: Option<&ViewDef>) -> Vec<u8> {
    match format {
        Format::Csv => render_csv(table, view),
        Format::Html => render_html(table, view).into_bytes(),
    }
}

fn render_csv(table: &SummaryTable, view: Option<&ViewDef>) -> Vec<u8> {
    let cols = table.columns_for(view);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    // writing into a Vec cannot fail
    w.write_record(&cols).expect("in-memory csv");
    for config in table.configs.keys() {
        let row: Vec<String> = cols.iter().map(|c| table.value(config, c).text()).collect();
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn render_html(table: &SummaryTable, view: Option<&ViewDef>) -> String {
    let cols = table.columns_for(view);
    let cell_style = "border:1px solid #bbb;padding:2px 6px;text-align:right";
    let mut h = String::new();
    let title = format!("Campaign {}", table.campaign_id);
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n</head>\n\
         <body style=\"font-family:sans-serif\">\n<h1>{}</h1>\n\
         <table style=\"border-collapse:collapse\">\n<thead>\n<tr>",
        escape(&title),
        escape(&title)
    );
    for c in &cols {
        let _ = write!(h, "<th style=\"{cell_style}\">{}</th>", escape(c));
    }
    h.push_str("</tr>\n</thead>\n<tbody>\n");
    for config in table.configs.keys() {
        h.push_str("<tr>");
        for c in &cols {
            match table.value(config, c) {
                Value::Text(s) => {
                    let _ = write!(h, "<td style=\"{cell_style}\">{}</td>", escape(&s));
                }
                Value::Count(n, tests) => {
                    let ids: Vec<&str> = tests.iter().map(Uid::as_str).collect();
                    let bg = if n > 0 && (c.ends_with("WrongCode") || c.ends_with("Crash")) {
                        ";background:#fdd"
                    } else {
                        ""
                    };
                    let _ = write!(
                        h,
                        "<td style=\"{cell_style}{bg}\" data-column=\"{}\" data-tests=\"{}\">{n}</td>",
                        escape(c),
                        ids.join(" ")
                    );
                }
            }
        }
        h.push_str("</tr>\n");
    }
    h.push_str("</tbody>\n</table>\n</body>\n</html>\n");
    h
}
