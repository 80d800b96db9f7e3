use std::path::Path;

use super::{Dataset, FineLabel, Sample};
use crate::error::{Error, Result};

const FIXED: [&str; 4] = ["id", "coarse_label", "fine_label", "latent_t"];

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, msg: format!("{other:?}") },
    }
}

/// Write a dataset as CSV. Reals use the shortest decimal form that reads back
/// to the same bits.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let d = ds.input_dim();
    let header: Vec<String> = FIXED.iter().map(|s| s.to_string()).chain((0..d).map(|j| format!("x{j}"))).collect();
    w.write_record(&header).map_err(csv_err)?;
    for s in &ds.samples {
        if s.x.len() != d {
            return Err(Error::DimMismatch { expected: d, got: s.x.len() });
        }
        let mut row = vec![
            s.id.to_string(),
            s.coarse_label.to_string(),
            s.fine_label.map_or(String::new(), |f| f.as_str().to_string()),
            s.latent_t.to_string(),
        ];
        row.extend(s.x.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset written by [`save_dataset`]. The class count is the largest
/// coarse label present.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut fixed = [0usize; 4];
    for (slot, name) in fixed.iter_mut().zip(FIXED) {
        *slot = col(name).ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column `{name}`") })?;
    }
    let mut xcols = Vec::new();
    while let Some(c) = col(&format!("x{}", xcols.len())) {
        xcols.push(c);
    }
    if xcols.is_empty() {
        return Err(Error::Parse { line: 1, msg: "missing column `x0`".into() });
    }

    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::Parse { line, msg: format!("missing value for `{name}`") })
        };
        let num = |i: usize, name: &str| -> Result<f64> {
            let s = field(i, name)?;
            s.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("`{name}`: bad number {s:?}") })
        };
        let int = |i: usize, name: &str| -> Result<usize> {
            let s = field(i, name)?;
            s.parse::<usize>().map_err(|_| Error::Parse { line, msg: format!("`{name}`: bad integer {s:?}") })
        };
        let fine = match field(fixed[2], "fine_label")? {
            "" => None,
            s => Some(FineLabel::parse(s).ok_or_else(|| Error::Parse {
                line,
                msg: format!("`fine_label`: expected stable or progressive, got {s:?}"),
            })?),
        };
        let coarse_label = int(fixed[1], "coarse_label")?;
        if coarse_label == 0 {
            return Err(Error::Parse { line, msg: "`coarse_label`: labels start at 1".into() });
        }
        let x = xcols
            .iter()
            .enumerate()
            .map(|(j, &c)| num(c, &format!("x{j}")))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample { id: int(fixed[0], "id")?, coarse_label, fine_label: fine, latent_t: num(fixed[3], "latent_t")?, x });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let num_classes = samples.iter().map(|s| s.coarse_label).max().unwrap_or(0);
    Ok(Dataset { num_classes, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig};

    #[test]
    fn round_trip_exact() {
        let ds = generate(&GenConfig { counts: vec![3, 4, 3], ..Default::default() }, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);

        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,coarse_label,fine_label,latent_t,x0,x1,"));
        for (line, s) in text.lines().skip(1).zip(&ds.samples) {
            let fine = line.split(',').nth(2).unwrap();
            match s.coarse_label {
                2 => assert!(fine == "stable" || fine == "progressive"),
                _ => assert_eq!(fine, ""),
            }
        }
    }

    #[test]
    fn missing_column_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "id,fine_label,latent_t,x0\n0,,0.1,0.5\n").unwrap();
        match load_dataset(&p) {
            Err(Error::Parse { line: 1, msg }) => assert!(msg.contains("coarse_label"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "id,coarse_label,fine_label,latent_t,x0\n0,1,,0.1,0.5\n1,2,maybe,0.4,0.1\n").unwrap();
        match load_dataset(&p) {
            Err(Error::Parse { line: 3, msg }) => assert!(msg.contains("fine_label"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
