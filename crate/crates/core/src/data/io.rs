use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use super::{Dataset, InteractionRecord, QMatrix};
use crate::error::{Error, Result};

const RECORDS_HEADER: [&str; 3] = ["student_id", "question_id", "response"];

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, e.to_string())
}

fn parse_usize(path: &Path, line: usize, field: &str, name: &str) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("{name} {field:?} is not a non-negative integer")))
}

fn parse_bit(path: &Path, line: usize, field: &str, name: &str) -> Result<u8> {
    match field {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(parse_err(path, line, format!("{name} must be 0 or 1, got {other:?}"))),
    }
}

pub fn read_records(path: &Path) -> Result<Vec<InteractionRecord>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != RECORDS_HEADER {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header {:?}, got {:?}",
                RECORDS_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", row.len())));
        }
        out.push(InteractionRecord {
            student: parse_usize(path, line, &row[0], "student_id")?,
            question: parse_usize(path, line, &row[1], "question_id")?,
            response: parse_bit(path, line, &row[2], "response")?,
        });
    }
    Ok(out)
}

pub fn read_q_matrix(path: &Path) -> Result<QMatrix> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 || &header[0] != "question_id" {
        return Err(parse_err(path, 1, "expected header question_id,kc_0,...,kc_{K-1}"));
    }
    for (k, name) in header.iter().skip(1).enumerate() {
        if name != format!("kc_{k}") {
            return Err(parse_err(
                path,
                1,
                format!("column {} should be kc_{k}, got {name:?}", k + 1),
            ));
        }
    }
    let n_kcs = header.len() - 1;
    let mut rows: Vec<Option<Vec<u8>>> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != n_kcs + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", n_kcs + 1, row.len()),
            ));
        }
        let q = parse_usize(path, line, &row[0], "question_id")?;
        let cells = (1..=n_kcs)
            .map(|c| parse_bit(path, line, &row[c], "Q-matrix cell"))
            .collect::<Result<Vec<_>>>()?;
        if cells.iter().all(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "Q-matrix row for question {q} (line {line}) requires no knowledge component"
            )));
        }
        if rows.len() <= q {
            rows.resize(q + 1, None);
        }
        if rows[q].is_some() {
            return Err(parse_err(path, line, format!("question {q} listed twice")));
        }
        rows[q] = Some(cells);
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(q, r)| r.ok_or_else(|| Error::Validation(format!("Q-matrix is missing question {q}"))))
        .collect::<Result<Vec<_>>>()?;
    QMatrix::from_rows(rows)
}

/// Loads and validates a dataset from the records and Q-matrix CSV files.
pub fn load_dataset(records_path: &Path, qmatrix_path: &Path) -> Result<Dataset> {
    let records = read_records(records_path)?;
    let q = read_q_matrix(qmatrix_path)?;
    Dataset::new(records, q)
}

pub fn write_records(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 12 + 32);
    out.push_str(&RECORDS_HEADER.join(","));
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.student, r.question, r.response));
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn write_q_matrix(path: &Path, q: &QMatrix) -> Result<()> {
    let mut out = String::from("question_id");
    for k in 0..q.n_kcs() {
        out.push_str(&format!(",kc_{k}"));
    }
    out.push('\n');
    for (j, row) in q.rows().enumerate() {
        out.push_str(&j.to_string());
        for v in row {
            out.push(',');
            out.push(if *v == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, records_path: &Path, qmatrix_path: &Path) -> Result<()> {
    write_records(records_path, dataset.records())?;
    write_q_matrix(qmatrix_path, dataset.q_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "student_id,question_id,response\n0,0,1\n");
        let q = write(dir.path(), "q.csv", "question_id,kc_0\n0,1\n");
        let d = load_dataset(&r, &q).unwrap();
        assert_eq!((d.n_students(), d.n_questions(), d.n_kcs()), (1, 1, 1));
        assert_eq!(d.records(), &[InteractionRecord::new(0, 0, 1)]);
    }

    #[test]
    fn response_two_is_a_parse_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "student_id,question_id,response\n0,0,1\n1,0,2\n");
        let q = write(dir.path(), "q.csv", "question_id,kc_0\n0,1\n");
        match load_dataset(&r, &q) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "student_id,question_id,response\n0,x,1\n");
        let q = write(dir.path(), "q.csv", "question_id,kc_0\n0,1\n");
        assert!(matches!(load_dataset(&r, &q), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "student_id,question_id,response\n0,0,1\n0,0,0\n");
        let q = write(dir.path(), "q.csv", "question_id,kc_0\n0,1\n");
        assert!(matches!(load_dataset(&r, &q), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_q_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "student_id,question_id,response\n0,0,1\n");
        let q = write(dir.path(), "q.csv", "question_id,kc_0,kc_1\n0,1,0\n1,0,0\n");
        assert!(matches!(load_dataset(&r, &q), Err(Error::Validation(_))));
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "student,question,response\n0,0,1\n");
        assert!(matches!(read_records(&r), Err(Error::Parse { line: 1, .. })));
    }
}
