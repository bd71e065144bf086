//! CSV ingestion: one point per row, one coordinate per column.
//!
//! A first row containing any non-numeric cell is taken as a header. Cells
//! must parse as `f64`; `NaN` and `inf` are accepted here and end up in the
//! outlier log.

use std::io::Read;

use crate::error::{Error, Result};

/// Column selection by header name or 1-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for ColumnRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::InvalidInput("empty column reference".into()));
        }
        match s.parse::<usize>() {
            Ok(0) => Err(Error::InvalidInput("column positions start at 1".into())),
            Ok(i) => Ok(ColumnRef::Index(i)),
            Err(_) => Ok(ColumnRef::Name(s.to_string())),
        }
    }
}

pub fn parse_columns(list: &str) -> Result<Vec<ColumnRef>> {
    list.split(',').map(str::parse).collect()
}

/// Iterator over the points of a CSV source.
pub struct CsvPoints<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    pending: Option<csv::StringRecord>,
    header: Option<Vec<String>>,
    selected: Vec<usize>,
    width: usize,
    row: usize,
}

fn is_numeric(cell: &str) -> bool {
    cell.trim().parse::<f64>().is_ok()
}

impl<R: Read> CsvPoints<R> {
    /// `columns = None` keeps every column except one headed `label`.
    pub fn new(source: R, columns: Option<&[ColumnRef]>) -> Result<Self> {
        let reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
        let mut records = reader.into_records();
        let first = match records.next() {
            None => None,
            Some(r) => Some(r.map_err(|e| Error::Parse { row: 1, column: 0, message: e.to_string() })?),
        };
        let (header, pending, row) = match first {
            Some(rec) if !rec.iter().all(is_numeric) => {
                (Some(rec.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>()), None, 1)
            }
            other => (None, other, 0),
        };
        let width = header.as_ref().map(Vec::len).or_else(|| pending.as_ref().map(|r| r.len())).unwrap_or(0);
        let selected = match columns {
            Some(cols) => cols
                .iter()
                .map(|c| resolve(c, header.as_deref(), width))
                .collect::<Result<Vec<_>>>()?,
            None => (0..width)
                .filter(|&i| header.as_ref().is_none_or(|h| !h[i].eq_ignore_ascii_case("label")))
                .collect(),
        };
        Ok(Self { records, pending, header, selected, width, row })
    }

    pub fn header(&self) -> Option<&[String]> {
        self.header.as_deref()
    }

    fn convert(&self, rec: &csv::StringRecord) -> Result<Vec<f64>> {
        if rec.len() != self.width {
            return Err(Error::Parse {
                row: self.row,
                column: rec.len().min(self.width) + 1,
                message: format!("expected {} fields, found {}", self.width, rec.len()),
            });
        }
        self.selected
            .iter()
            .map(|&c| {
                let cell = rec[c].trim();
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    row: self.row,
                    column: c + 1,
                    message: format!("not a number: {cell:?}"),
                })
            })
            .collect()
    }
}

fn resolve(c: &ColumnRef, header: Option<&[String]>, width: usize) -> Result<usize> {
    match c {
        ColumnRef::Index(i) if *i <= width => Ok(i - 1),
        ColumnRef::Index(i) => Err(Error::InvalidInput(format!("column {i} out of range (input has {width})"))),
        ColumnRef::Name(n) => header
            .and_then(|h| h.iter().position(|x| x == n))
            .ok_or_else(|| Error::InvalidInput(format!("no column named {n:?}"))),
    }
}

impl<R: Read> Iterator for CsvPoints<R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.pending.take() {
            Some(r) => r,
            None => match self.records.next()? {
                Ok(r) => r,
                Err(e) => {
                    self.row += 1;
                    return Some(Err(Error::Parse { row: self.row, column: 0, message: e.to_string() }));
                }
            },
        };
        self.row += 1;
        Some(self.convert(&rec))
    }
}

/// Read a whole CSV source into memory.
pub fn read_points<R: Read>(source: R, columns: Option<&[ColumnRef]>) -> Result<Vec<Vec<f64>>> {
    CsvPoints::new(source, columns)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_detected_and_label_dropped() {
        let text = "x1,x2,label\n1,2,0\n3.5,-4e-1,1\n";
        let pts = read_points(text.as_bytes(), None).unwrap();
        assert_eq!(pts, vec![vec![1.0, 2.0], vec![3.5, -0.4]]);
    }

    #[test]
    fn headerless_input() {
        let pts = read_points("1,2\n3,4\n".as_bytes(), None).unwrap();
        assert_eq!(pts.len(), 2);
    }

    #[test]
    fn ragged_row_names_the_row() {
        let err = read_points("a,b\n1,2\n3\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err:?}");
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let err = read_points("1,2\n3,x\n".as_bytes(), None).unwrap_err();
        assert_eq!(err, Error::Parse { row: 2, column: 2, message: "not a number: \"x\"".into() });
    }

    #[test]
    fn column_selection() {
        let text = "a,b,c\n1,2,3\n4,5,6\n";
        let cols = parse_columns("c,1").unwrap();
        assert_eq!(read_points(text.as_bytes(), Some(&cols)).unwrap(), vec![vec![3.0, 1.0], vec![6.0, 4.0]]);
        assert!(read_points(text.as_bytes(), Some(&parse_columns("9").unwrap())).is_err());
    }

    #[test]
    fn non_finite_cells_parse() {
        let pts = read_points("NaN,1\ninf,2\n".as_bytes(), None).unwrap();
        assert!(pts[0][0].is_nan() && pts[1][0].is_infinite());
    }
}
