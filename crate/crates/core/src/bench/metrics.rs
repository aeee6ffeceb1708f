use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::exec::Failure;
use crate::scene::{PartKind, Split};

/// Row key component for per-kind and pooled rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindKey {
    Drawer,
    Door,
    Overall,
}

impl KindKey {
    pub fn as_str(self) -> &'static str {
        match self {
            KindKey::Drawer => "drawer",
            KindKey::Door => "door",
            KindKey::Overall => "overall",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [KindKey::Drawer, KindKey::Door, KindKey::Overall].into_iter().find(|k| k.as_str() == s)
    }
}

impl From<PartKind> for KindKey {
    fn from(k: PartKind) -> Self {
        match k {
            PartKind::Drawer => KindKey::Drawer,
            PartKind::Door => KindKey::Door,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub hand: String,
    pub detector: String,
    pub split: Split,
    pub kind: KindKey,
    pub episodes: usize,
    pub successes: usize,
    pub open_ratio_sum: f64,
    /// Episode count per failure reason, in [`Failure::ALL`] order.
    pub failures: [usize; 7],
}

impl MetricsRow {
    fn empty(hand: &str, detector: &str, split: Split, kind: KindKey) -> Self {
        MetricsRow { hand: hand.into(), detector: detector.into(), split, kind, episodes: 0, successes: 0, open_ratio_sum: 0.0, failures: [0; 7] }
    }

    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 { 0.0 } else { self.successes as f64 / self.episodes as f64 }
    }

    pub fn mean_open_ratio(&self) -> f64 {
        if self.episodes == 0 { 0.0 } else { self.open_ratio_sum / self.episodes as f64 }
    }

    pub fn failure_count(&self, f: Failure) -> usize {
        self.failures[failure_index(f)]
    }

    fn add(&mut self, success: bool, open_ratio: f64, failure: Failure) {
        self.episodes += 1;
        self.successes += usize::from(success);
        self.open_ratio_sum += open_ratio;
        self.failures[failure_index(failure)] += 1;
    }
}

fn failure_index(f: Failure) -> usize {
    Failure::ALL.iter().position(|x| *x == f).expect("failure listed in ALL")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

pub const CSV_COLUMNS: [&str; 16] = [
    "hand",
    "detector",
    "split",
    "kind",
    "episodes",
    "successes",
    "success_rate",
    "mean_open_ratio",
    "open_ratio_sum",
    "fail_None",
    "fail_NoDetection",
    "fail_NoMatch",
    "fail_NoGrasp",
    "fail_Detached",
    "fail_WrongPart",
    "fail_Timeout",
];

/// Rows sorted by `(hand, detector, split, kind)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

type Key = (String, String, Split, KindKey);

impl MetricsTable {
    /// Aggregates `(hand, detector, split, kind, success, open_ratio,
    /// failure)` records; each also counts toward its `overall` row.
    pub fn from_records<'a, I>(records: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, Split, PartKind, bool, f64, Failure)>,
    {
        let mut map: BTreeMap<Key, MetricsRow> = BTreeMap::new();
        for (hand, det, split, kind, ok, ratio, fail) in records {
            for k in [KindKey::from(kind), KindKey::Overall] {
                map.entry((hand.to_string(), det.to_string(), split, k))
                    .or_insert_with(|| MetricsRow::empty(hand, det, split, k))
                    .add(ok, ratio, fail);
            }
        }
        MetricsTable { rows: map.into_values().collect() }
    }

    pub fn row(&self, hand: &str, detector: &str, split: Split, kind: KindKey) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.hand == hand && r.detector == detector && r.split == split && r.kind == kind)
    }

    pub fn report(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Text => self.to_text(),
        }
    }

    fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.hand.clone(),
                r.detector.clone(),
                r.split.as_str().into(),
                r.kind.as_str().into(),
                r.episodes.to_string(),
                r.successes.to_string(),
                format!("{:.6}", r.success_rate()),
                format!("{:.6}", r.mean_open_ratio()),
                r.open_ratio_sum.to_string(),
            ];
            rec.extend(r.failures.iter().map(|n| n.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    fn to_text(&self) -> String {
        let headers = ["hand", "detector", "split", "kind", "episodes", "success", "open ratio", "failures"];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                let fails: Vec<String> = Failure::ALL
                    .iter()
                    .zip(r.failures)
                    .filter(|(f, n)| **f != Failure::None && *n > 0)
                    .map(|(f, n)| format!("{}={n}", f.as_str()))
                    .collect();
                [
                    r.hand.clone(),
                    r.detector.clone(),
                    r.split.as_str().into(),
                    r.kind.as_str().into(),
                    r.episodes.to_string(),
                    format_rate(r.success_rate()),
                    format!("{:.3}", r.mean_open_ratio()),
                    if fails.is_empty() { "-".into() } else { fails.join(" ") },
                ]
            })
            .collect();
        let mut widths = headers.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&mut out, &headers);
        for row in &body {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
        if header != CSV_COLUMNS {
            return Err(format!("unexpected columns {header:?}"));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let num = |i: usize| rec[i].parse::<usize>().map_err(|e| format!("column {}: {e}", CSV_COLUMNS[i]));
            let split = match &rec[2] {
                "train" => Split::Train,
                "test" => Split::Test,
                s => return Err(format!("split `{s}`")),
            };
            let kind = KindKey::parse(&rec[3]).ok_or_else(|| format!("kind `{}`", &rec[3]))?;
            let mut failures = [0; 7];
            for (k, f) in failures.iter_mut().enumerate() {
                *f = num(9 + k)?;
            }
            rows.push(MetricsRow {
                hand: rec[0].into(),
                detector: rec[1].into(),
                split,
                kind,
                episodes: num(4)?,
                successes: num(5)?,
                open_ratio_sum: rec[8].parse().map_err(|e| format!("open_ratio_sum: {e}"))?,
                failures,
            });
        }
        Ok(MetricsTable { rows })
    }
}

/// Percentage with one decimal, e.g. `30.3%`.
pub fn format_rate(r: f64) -> String {
    format!("{:.1}%", r * 100.0)
}
