use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dgp::{EvalDataset, ObservationalDataset, SimulatorDataset};
use crate::error::{Error, Result};

/// Scientific notation with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn names(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric body of a rectangular CSV file.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() {
        return Err(Error::Parse(format!("{}: empty header", path.display())));
    }
    let mut data = Vec::new();
    let mut n_rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 1,
                rec.len(),
                header.len()
            )));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {}, column {} ({}): `{cell}` is not a number",
                    path.display(),
                    i + 1,
                    j + 1,
                    header[j]
                ))
            })?;
            data.push(v);
        }
        n_rows += 1;
    }
    let width = header.len();
    Ok((header, DMatrix::from_row_slice(n_rows, width, &data)))
}

pub fn load_latents_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (_, m) = read_numeric_csv(path)?;
    if m.nrows() == 0 {
        return Err(Error::Parse(format!("{}: no latent rows", path.display())));
    }
    Ok(m)
}

pub fn write_latents_csv(path: &Path, z: &DMatrix<f64>) -> Result<()> {
    let rows = z.row_iter().map(|r| r.iter().map(|&v| fmt_f64(v)).collect());
    write_table(path, &names("z_", z.ncols()), rows)
}

fn columns(header: &[String], m: &DMatrix<f64>, wanted: &[String], path: &Path) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(m.nrows(), wanted.len());
    for (k, w) in wanted.iter().enumerate() {
        let j = header
            .iter()
            .position(|h| h == w)
            .ok_or_else(|| Error::Parse(format!("{}: missing column {w}", path.display())))?;
        out.set_column(k, &m.column(j));
    }
    Ok(out)
}

fn prefixed_width(header: &[String], prefix: &str) -> usize {
    header
        .iter()
        .filter(|h| h.strip_prefix(prefix).is_some_and(|s| s.parse::<usize>().is_ok()))
        .count()
}

fn treatments(col: DVector<f64>, path: &Path) -> Result<Vec<u8>> {
    col.iter()
        .enumerate()
        .map(|(i, &v)| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(Error::Parse(format!("{}: row {}, column t: {v} is not 0 or 1", path.display(), i + 1))),
        })
        .collect()
}

fn col(header: &[String], m: &DMatrix<f64>, name: &str, path: &Path) -> Result<DVector<f64>> {
    Ok(columns(header, m, &[name.to_string()], path)?.column(0).into_owned())
}

pub fn write_observational_csv(path: &Path, d: &ObservationalDataset) -> Result<()> {
    let mut header = names("x_", d.n_x());
    header.extend(["t".to_string(), "y".to_string()]);
    let rows = (0..d.len()).map(|i| {
        let mut r: Vec<String> = d.x.row(i).iter().map(|&v| fmt_f64(v)).collect();
        r.push(d.t[i].to_string());
        r.push(fmt_f64(d.y[i]));
        r
    });
    write_table(path, &header, rows)
}

pub fn read_observational_csv(path: &Path) -> Result<ObservationalDataset> {
    let (h, m) = read_numeric_csv(path)?;
    let d = prefixed_width(&h, "x_");
    let x = columns(&h, &m, &names("x_", d), path)?;
    let t = treatments(col(&h, &m, "t", path)?, path)?;
    ObservationalDataset::new(x, t, col(&h, &m, "y", path)?)
}

pub fn write_simulator_csv(path: &Path, d: &SimulatorDataset) -> Result<()> {
    let n_x = d.x0.ncols();
    let mut header = names("x0_", n_x);
    header.extend(names("x1_", n_x));
    header.extend(["y0".to_string(), "y1".to_string()]);
    let rows = (0..d.len()).map(|i| {
        let mut r: Vec<String> = d.x0.row(i).iter().chain(d.x1.row(i).iter()).map(|&v| fmt_f64(v)).collect();
        r.push(fmt_f64(d.y0[i]));
        r.push(fmt_f64(d.y1[i]));
        r
    });
    write_table(path, &header, rows)
}

pub fn read_simulator_csv(path: &Path) -> Result<SimulatorDataset> {
    let (h, m) = read_numeric_csv(path)?;
    let d = prefixed_width(&h, "x0_");
    SimulatorDataset::new(
        columns(&h, &m, &names("x0_", d), path)?,
        columns(&h, &m, &names("x1_", d), path)?,
        col(&h, &m, "y0", path)?,
        col(&h, &m, "y1", path)?,
    )
}

/// Evaluation rows carry their latents as trailing `z_*` columns.
pub fn write_eval_csv(path: &Path, d: &EvalDataset) -> Result<()> {
    let mut header = names("x_", d.x.ncols());
    header.extend(["t", "y0", "y1", "tau"].map(String::from));
    header.extend(names("z_", d.z.ncols()));
    let rows = (0..d.len()).map(|i| {
        let mut r: Vec<String> = d.x.row(i).iter().map(|&v| fmt_f64(v)).collect();
        r.push(d.t[i].to_string());
        r.extend([d.y0[i], d.y1[i], d.tau[i]].map(fmt_f64));
        r.extend(d.z.row(i).iter().map(|&v| fmt_f64(v)));
        r
    });
    write_table(path, &header, rows)
}

pub fn read_eval_csv(path: &Path) -> Result<EvalDataset> {
    let (h, m) = read_numeric_csv(path)?;
    let d = EvalDataset {
        x: columns(&h, &m, &names("x_", prefixed_width(&h, "x_")), path)?,
        t: treatments(col(&h, &m, "t", path)?, path)?,
        y0: col(&h, &m, "y0", path)?,
        y1: col(&h, &m, "y1", path)?,
        tau: col(&h, &m, "tau", path)?,
        z: columns(&h, &m, &names("z_", prefixed_width(&h, "z_")), path)?,
    };
    d.validate()?;
    Ok(d)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
