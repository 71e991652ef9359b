//! Peer-report ingestion.
//!
//! A recall matrix has one row per child and one column per anonymous report;
//! a cell is 1 when the report names the child. Two text encodings are
//! supported:
//!
//! * report list: one report per line, members separated by commas, `#`
//!   starts a comment. Rows appear in order of first mention.
//! * matrix CSV: a header of report ids (first cell is ignored) followed by one
//!   row per child, first cell the child id and the rest strictly `0` or `1`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Limits documented for the SCM 4.0 program.
pub const SCM_MAX_REPORTS: usize = 2000;
pub const SCM_MAX_CHILDREN: usize = 400;
pub const SCM_MAX_REPORT_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChildId(String);

impl ChildId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::InvalidParameter("child id must be non-empty".into()));
        }
        Ok(ChildId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChildId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One anonymous peer report: the set of children it names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub members: Vec<ChildId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Margins {
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
}

impl Margins {
    pub fn total(&self) -> usize {
        self.row_sums.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LimitWarning {
    TooManyReports { count: usize },
    TooManyChildren { count: usize },
    OversizedReports { count: usize, largest: usize },
}

impl fmt::Display for LimitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LimitWarning::TooManyReports { count } => {
                write!(f, "{count} reports exceeds the SCM 4.0 limit of {SCM_MAX_REPORTS}")
            }
            LimitWarning::TooManyChildren { count } => {
                write!(f, "{count} children exceeds the SCM 4.0 limit of {SCM_MAX_CHILDREN}")
            }
            LimitWarning::OversizedReports { count, largest } => write!(
                f,
                "{count} report(s) name more than {SCM_MAX_REPORT_SIZE} children (largest: {largest})"
            ),
        }
    }
}

/// Binary children-by-reports incidence matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecallMatrix {
    children: Vec<ChildId>,
    n_reports: usize,
    // row-major, children x reports
    cells: Vec<u8>,
}

impl RecallMatrix {
    /// Builds a matrix from explicit rows. Every column must name at least one child.
    pub fn from_rows(children: Vec<ChildId>, rows: Vec<Vec<u8>>) -> Result<Self> {
        if children.len() != rows.len() {
            return Err(Error::MalformedMatrix(format!(
                "{} child ids for {} rows",
                children.len(),
                rows.len()
            )));
        }
        let n_reports = rows.first().map_or(0, Vec::len);
        let mut cells = Vec::with_capacity(children.len() * n_reports);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_reports {
                return Err(Error::MalformedMatrix(format!(
                    "row {i} has {} cells, expected {n_reports}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|&&v| v > 1) {
                return Err(Error::MalformedMatrix(format!("cell value {v} is not binary")));
            }
            cells.extend_from_slice(row);
        }
        Self::from_cells(children, n_reports, cells)
    }

    pub(crate) fn from_cells(children: Vec<ChildId>, n_reports: usize, cells: Vec<u8>) -> Result<Self> {
        if children.is_empty() || n_reports == 0 {
            return Err(Error::EmptyInput);
        }
        debug_assert_eq!(cells.len(), children.len() * n_reports);
        let mut seen = HashMap::with_capacity(children.len());
        for c in &children {
            if seen.insert(c.clone(), ()).is_some() {
                return Err(Error::DuplicateChild(c.to_string()));
            }
        }
        let m = RecallMatrix {
            children,
            n_reports,
            cells,
        };
        if let Some(j) = m.margins().col_sums.iter().position(|&s| s == 0) {
            return Err(Error::MalformedMatrix(format!("report column {j} names no child")));
        }
        Ok(m)
    }

    /// Builds a matrix from per-report member lists. Reports refer to children by index.
    pub fn from_reports(children: Vec<ChildId>, reports: &[Vec<usize>]) -> Result<Self> {
        let n = children.len();
        let m = reports.len();
        let mut cells = vec![0u8; n * m];
        for (j, rep) in reports.iter().enumerate() {
            for &i in rep {
                if i >= n {
                    return Err(Error::MalformedMatrix(format!("report {j} names unknown child {i}")));
                }
                if cells[i * m + j] == 1 {
                    return Err(Error::DuplicateMember {
                        line: j + 1,
                        child: children[i].to_string(),
                    });
                }
                cells[i * m + j] = 1;
            }
        }
        Self::from_cells(children, m, cells)
    }

    pub fn n_children(&self) -> usize {
        self.children.len()
    }

    pub fn n_reports(&self) -> usize {
        self.n_reports
    }

    pub fn children(&self) -> &[ChildId] {
        &self.children
    }

    #[inline]
    pub fn get(&self, child: usize, report: usize) -> u8 {
        self.cells[child * self.n_reports + report]
    }

    pub fn row(&self, child: usize) -> &[u8] {
        &self.cells[child * self.n_reports..(child + 1) * self.n_reports]
    }

    /// Child indices named by report `j`, in row order.
    pub fn report_members(&self, j: usize) -> Vec<usize> {
        (0..self.n_children()).filter(|&i| self.get(i, j) == 1).collect()
    }

    pub fn reports(&self) -> Vec<Report> {
        (0..self.n_reports)
            .map(|j| Report {
                members: self
                    .report_members(j)
                    .into_iter()
                    .map(|i| self.children[i].clone())
                    .collect(),
            })
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.children.iter().position(|c| c.as_str() == id)
    }

    pub fn margins(&self) -> Margins {
        let mut row_sums = vec![0usize; self.n_children()];
        let mut col_sums = vec![0usize; self.n_reports];
        for (i, rs) in row_sums.iter_mut().enumerate() {
            for (j, &v) in self.row(i).iter().enumerate() {
                let v = v as usize;
                *rs += v;
                col_sums[j] += v;
            }
        }
        Margins { row_sums, col_sums }
    }

    /// Warnings for each SCM 4.0 input limit this matrix exceeds. Never fails.
    pub fn validate_scm_limits(&self) -> Vec<LimitWarning> {
        let mut out = Vec::new();
        if self.n_reports > SCM_MAX_REPORTS {
            out.push(LimitWarning::TooManyReports { count: self.n_reports });
        }
        if self.n_children() > SCM_MAX_CHILDREN {
            out.push(LimitWarning::TooManyChildren {
                count: self.n_children(),
            });
        }
        let cols = self.margins().col_sums;
        let oversized: Vec<usize> = cols.into_iter().filter(|&s| s > SCM_MAX_REPORT_SIZE).collect();
        if !oversized.is_empty() {
            out.push(LimitWarning::OversizedReports {
                count: oversized.len(),
                largest: *oversized.iter().max().unwrap(),
            });
        }
        out
    }

    /// Removes children that no report names, returning the reduced matrix and the removed ids.
    pub fn drop_never_named(&self) -> Result<(RecallMatrix, Vec<ChildId>)> {
        let rows = self.margins().row_sums;
        if rows.iter().all(|&r| r == 0) {
            return Err(Error::NoAnalyzableData);
        }
        let mut children = Vec::new();
        let mut dropped = Vec::new();
        let mut cells = Vec::with_capacity(self.cells.len());
        for (i, &r) in rows.iter().enumerate() {
            if r == 0 {
                dropped.push(self.children[i].clone());
            } else {
                children.push(self.children[i].clone());
                cells.extend_from_slice(self.row(i));
            }
        }
        let m = RecallMatrix::from_cells(children, self.n_reports, cells)?;
        Ok((m, dropped))
    }

    /// Same data with rows permuted: new row `k` is old row `order[k]`.
    pub fn permute_children(&self, order: &[usize]) -> Result<RecallMatrix> {
        let children = order.iter().map(|&i| self.children[i].clone()).collect();
        let mut cells = Vec::with_capacity(self.cells.len());
        for &i in order {
            cells.extend_from_slice(self.row(i));
        }
        RecallMatrix::from_cells(children, self.n_reports, cells)
    }

    /// Same data with columns permuted: new column `k` is old column `order[k]`.
    pub fn permute_reports(&self, order: &[usize]) -> Result<RecallMatrix> {
        let mut cells = Vec::with_capacity(self.cells.len());
        for i in 0..self.n_children() {
            cells.extend(order.iter().map(|&j| self.get(i, j)));
        }
        RecallMatrix::from_cells(self.children.clone(), self.n_reports, cells)
    }

    /// Report-list encoding, members in row order. Children that no report names are lost.
    pub fn to_report_list(&self) -> String {
        let mut out = String::new();
        for j in 0..self.n_reports {
            let line: Vec<&str> = self
                .report_members(j)
                .into_iter()
                .map(|i| self.children[i].as_str())
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_matrix_csv(&self) -> String {
        let mut out = String::from("child");
        for j in 0..self.n_reports {
            out.push_str(&format!(",r{}", j + 1));
        }
        out.push('\n');
        for (i, c) in self.children.iter().enumerate() {
            out.push_str(c.as_str());
            for &v in self.row(i) {
                out.push(',');
                out.push(if v == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }
}

/// Parses report-list text.
pub fn parse_reports(text: &str) -> Result<RecallMatrix> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut children = Vec::new();
    let mut reports: Vec<Vec<usize>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let mut members = Vec::new();
        for tok in line.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let next = children.len();
            let idx = *index.entry(tok.to_string()).or_insert(next);
            if idx == next {
                children.push(ChildId::new(tok)?);
            }
            if members.contains(&idx) {
                return Err(Error::DuplicateMember {
                    line: lineno + 1,
                    child: tok.to_string(),
                });
            }
            members.push(idx);
        }
        if members.is_empty() {
            return Err(Error::EmptyReport { line: lineno + 1 });
        }
        reports.push(members);
    }
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    RecallMatrix::from_reports(children, &reports)
}

/// Parses the matrix CSV encoding.
pub fn parse_matrix_csv(text: &str) -> Result<RecallMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedMatrix(e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let n_reports = headers.len() - 1;
    let mut children = Vec::new();
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedMatrix(e.to_string()))?;
        children.push(ChildId::new(&rec[0])?);
        for cell in rec.iter().skip(1) {
            cells.push(match cell {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::MalformedMatrix(format!(
                        "cell {other:?} for child {:?} is not 0 or 1",
                        &rec[0]
                    )))
                }
            });
        }
    }
    RecallMatrix::from_cells(children, n_reports, cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Reports,
    Csv,
}

impl InputFormat {
    /// `.csv` files are matrices; everything else is a report list.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Reports,
        }
    }
}

pub fn load_reports(path: &Path) -> Result<RecallMatrix> {
    load(path, InputFormat::Reports)
}

pub fn load(path: &Path, format: InputFormat) -> Result<RecallMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        InputFormat::Reports => parse_reports(&text),
        InputFormat::Csv => parse_matrix_csv(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(names: &[&str]) -> Vec<ChildId> {
        names.iter().map(|n| ChildId::new(*n).unwrap()).collect()
    }

    #[test]
    fn two_reports_make_seven_rows() {
        let m = parse_reports("A,B,C\nW,X,Y,Z\n").unwrap();
        assert_eq!((m.n_children(), m.n_reports()), (7, 2));
        assert_eq!(m.margins().col_sums, vec![3, 4]);
        let names: Vec<&str> = m.children().iter().map(ChildId::as_str).collect();
        assert_eq!(names, ["A", "B", "C", "W", "X", "Y", "Z"]);
    }

    #[test]
    fn single_child_single_report() {
        let m = parse_reports("A").unwrap();
        assert_eq!((m.n_children(), m.n_reports()), (1, 1));
        assert_eq!(m.get(0, 0), 1);
    }

    #[test]
    fn duplicate_member_is_rejected() {
        let err = parse_reports("A,B,A").unwrap_err();
        assert!(matches!(err, Error::DuplicateMember { line: 1, .. }), "{err}");
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(parse_reports(""), Err(Error::EmptyInput)));
        assert!(matches!(parse_reports("# only a comment\n\n"), Err(Error::EmptyInput)));
        assert!(matches!(
            parse_reports("A,B\n , ,\n"),
            Err(Error::EmptyReport { line: 2 })
        ));
    }

    #[test]
    fn comments_and_whitespace() {
        let m = parse_reports("# header\n A , B # trailing\n\nB,C\n").unwrap();
        assert_eq!(m.n_reports(), 2);
        assert_eq!(m.margins().row_sums, vec![1, 2, 1]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_reports(Path::new("/nonexistent/reports.txt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn matrix_csv_parses_and_validates() {
        let m = parse_matrix_csv("child,r1,r2\nA,1,0\nB,1,1\nC,0,0\n").unwrap();
        assert_eq!(m.margins().row_sums, vec![1, 2, 0]);
        assert!(parse_matrix_csv("child,r1\nA,2\n").is_err());
        assert!(parse_matrix_csv("child,r1\nA,yes\n").is_err());
        assert!(parse_matrix_csv("child,r1,r2\nA,1,0\n").is_err()); // empty column
        assert!(parse_matrix_csv("child,r1\nA,1\nA,1\n").is_err());
    }

    #[test]
    fn scm_limits() {
        let benchmark_like: Vec<Vec<usize>> = (0..61).map(|j| (0..(1 + j % 12)).collect()).collect();
        let names: Vec<String> = (0..26).map(|i| format!("c{i}")).collect();
        let m = RecallMatrix::from_reports(
            ids(&names.iter().map(String::as_str).collect::<Vec<_>>()),
            &benchmark_like,
        )
        .unwrap();
        assert_eq!(m.margins().col_sums.iter().max(), Some(&12));
        assert!(m.validate_scm_limits().is_empty());

        let names: Vec<String> = (0..401).map(|i| format!("c{i}")).collect();
        let big = RecallMatrix::from_reports(
            names.iter().map(|n| ChildId::new(n.as_str()).unwrap()).collect(),
            &[vec![0, 1]],
        )
        .unwrap();
        assert_eq!(
            big.validate_scm_limits(),
            vec![LimitWarning::TooManyChildren { count: 401 }]
        );

        let wide = RecallMatrix::from_reports(
            names[..30].iter().map(|n| ChildId::new(n.as_str()).unwrap()).collect(),
            &[(0..21).collect(), vec![0, 1]],
        )
        .unwrap();
        assert_eq!(
            wide.validate_scm_limits(),
            vec![LimitWarning::OversizedReports { count: 1, largest: 21 }]
        );
    }

    #[test]
    fn drop_never_named_cases() {
        let m = RecallMatrix::from_rows(ids(&["A", "B", "C"]), vec![vec![0, 0], vec![1, 1], vec![0, 0]]).unwrap();
        let (kept, dropped) = m.drop_never_named().unwrap();
        assert_eq!((kept.n_children(), kept.n_reports()), (1, 2));
        assert_eq!(dropped, ids(&["A", "C"]));

        let full = parse_reports("A,B\nB,C\n").unwrap();
        let (same, none) = full.drop_never_named().unwrap();
        assert_eq!(same, full);
        assert!(none.is_empty());
    }

    #[test]
    fn all_zero_rows_cannot_be_built() {
        // a matrix with every row zero also has empty columns, so it is rejected on construction
        assert!(RecallMatrix::from_rows(ids(&["A"]), vec![vec![0]]).is_err());
    }

    #[test]
    fn margins_small_cases() {
        let ones = RecallMatrix::from_rows(ids(&["A", "B"]), vec![vec![1, 1, 1], vec![1, 1, 1]]).unwrap();
        let mg = ones.margins();
        assert_eq!((mg.row_sums, mg.col_sums), (vec![3, 3], vec![2, 2, 2]));
        let eye =
            RecallMatrix::from_rows(ids(&["A", "B", "C"]), vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]).unwrap();
        let mg = eye.margins();
        assert_eq!((mg.row_sums, mg.col_sums), (vec![1, 1, 1], vec![1, 1, 1]));
    }

    fn arb_reports() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::collection::btree_set(0usize..12, 1..6), 1..15).prop_map(|reps| {
            reps.into_iter()
                .map(|r| r.into_iter().map(|i| format!("k{i}")).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join("\n")
        })
    }

    proptest! {
        #[test]
        fn report_list_round_trip(text in arb_reports()) {
            let m = parse_reports(&text).unwrap();
            prop_assert_eq!(&parse_reports(&m.to_report_list()).unwrap(), &m);
            prop_assert_eq!(&parse_matrix_csv(&m.to_matrix_csv()).unwrap(), &m);
        }

        #[test]
        fn margins_sum_to_total_ones(text in arb_reports()) {
            let m = parse_reports(&text).unwrap();
            let mg = m.margins();
            let ones = m.cells().iter().filter(|&&v| v == 1).count();
            prop_assert_eq!(mg.row_sums.iter().sum::<usize>(), ones);
            prop_assert_eq!(mg.col_sums.iter().sum::<usize>(), ones);
        }
    }
}
