use super::set::LabeledSet;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const IRIS_CLASSES: [&str; 3] = ["Iris-setosa", "Iris-versicolor", "Iris-virginica"];

fn class_id(name: &str) -> Option<usize> {
    let n = name.trim().trim_matches('"');
    let short = n.strip_prefix("Iris-").unwrap_or(n);
    IRIS_CLASSES
        .iter()
        .position(|c| c[5..].eq_ignore_ascii_case(short))
}

/// Parses the UCI Iris CSV (four numeric features, then the class name).
/// An optional header line is skipped. Features are standardized per
/// column over the whole file (population variance).
pub fn load_iris(text: &str) -> Result<LabeledSet> {
    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if rows.is_empty() && labels.is_empty() && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::at_line(line_no, format!("expected 5 fields, found {}", fields.len())));
        }
        let mut row = [0.0; 4];
        for (slot, f) in row.iter_mut().zip(&fields[..4]) {
            *slot = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::at_line(line_no, format!("bad number {f:?}")))?;
        }
        let y = class_id(fields[4])
            .ok_or_else(|| Error::at_line(line_no, format!("unknown class {:?}", fields[4])))?;
        rows.push(row);
        labels.push(y);
    }
    if rows.len() < 2 {
        return Err(Error::at_line(1, "need at least two samples"));
    }
    let n = rows.len() as f64;
    for c in 0..4 {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in rows.iter_mut() {
            r[c] = (r[c] - mean) / sd;
        }
    }
    let n = rows.len();
    let data = rows.into_iter().flatten().collect();
    LabeledSet::new(Tensor::new(vec![n, 4], data)?, labels, 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;

    const SAMPLE: &str = "sepal_length,sepal_width,petal_length,petal_width,species\n\
        5.1,3.5,1.4,0.2,Iris-setosa\n\
        7.0,3.2,4.7,1.4,Iris-versicolor\n\
        6.3,3.3,6.0,2.5,virginica\n";

    #[test]
    fn header_and_short_names() {
        let s = load_iris(SAMPLE).unwrap();
        assert_eq!(s.labels(), &[0, 1, 2]);
        for c in 0..4 {
            let m: f64 = (0..3).map(|r| s.inputs().row(r)[c]).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_class_reports_line() {
        let bad = SAMPLE.replace("virginica", "Iris-rosea");
        match load_iris(&bad).unwrap_err() {
            Error::Format { location, .. } => assert_eq!(location, Location::Line(4)),
            e => panic!("{e}"),
        }
        let bad = SAMPLE.replace("3.2", "x");
        assert!(load_iris(&bad).unwrap_err().to_string().contains("line 3"));
    }
}
