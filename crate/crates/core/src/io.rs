//! Directory persistence of datasets as decimal-text CSV.
//!
//! Layout inside a dataset directory:
//!
//! * `view_<v>.csv` — header `f0,...,f{D_v-1}`; one row per position;
//!   unobserved rows are present with every cell empty;
//! * `mask_E.csv` — headerless N×M of 0/1 (observation mask);
//! * `mask_A.csv` — headerless N×1 of 0/1 (alignment mask);
//! * `labels.csv` — headerless N×1 category ids (evaluation only);
//! * `true_perm_<v>.csv` — headerless N×1; row i = position of instance i's
//!   view-v sample (evaluation only);
//! * `hidden_view_<v>.csv` — header `i,f0,...`; dropped rows keyed by
//!   instance (evaluation only).
//!
//! Floats are written in Rust's shortest round-trip notation with a `.`
//! radix, so save → load reproduces every bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::data::MultiViewDataset;
use crate::error::{Result, SmileError};

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> SmileError {
    SmileError::Parse {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn open_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path)
        .map_err(|e| SmileError::io(format!("create {}", path.display()), e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)
        .map_err(|e| SmileError::io(format!("open {}", path.display()), e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn write_rows(path: &Path, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = open_writer(path)?;
    for row in rows {
        w.write_record(&row)
            .map_err(|e| SmileError::io(format!("write {}", path.display()), e.into()))?;
    }
    w.flush()
        .map_err(|e| SmileError::io(format!("flush {}", path.display()), e))?;
    Ok(())
}

/// Read every record of a CSV file as strings, with 1-based line numbers.
fn read_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut r = open_reader(path)?;
    let mut out = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| parse_error(path, line, e.to_string()))?;
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn feature_header(d: usize) -> Vec<String> {
    (0..d).map(|c| format!("f{c}")).collect()
}

fn parse_usize(path: &Path, line: usize, cell: &str, what: &str) -> Result<usize> {
    cell.trim()
        .parse::<usize>()
        .map_err(|_| parse_error(path, line, format!("{what}: not a non-negative integer: {cell:?}")))
}

fn parse_bit(path: &Path, line: usize, cell: &str, what: &str) -> Result<bool> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(parse_error(path, line, format!("{what}: expected 0 or 1, got {other:?}"))),
    }
}

/// Write every field of the dataset into `dir` (created if absent).
/// Evaluation-only files are written only when the field is present.
pub fn save_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    std::fs::create_dir_all(dir)
        .map_err(|e| SmileError::io(format!("create directory {}", dir.display()), e))?;
    let n = ds.n();
    let m = ds.n_views();

    for (v, x) in ds.views.iter().enumerate() {
        let path = dir.join(format!("view_{v}.csv"));
        let header = feature_header(x.ncols());
        let rows = (0..n).map(|p| {
            if ds.obs[p][v] {
                x.row(p).iter().map(|val| val.to_string()).collect()
            } else {
                vec![String::new(); x.ncols()]
            }
        });
        write_rows(&path, std::iter::once(header).chain(rows))?;
    }

    write_rows(
        &dir.join("mask_E.csv"),
        ds.obs
            .iter()
            .map(|row| row.iter().map(|&e| u8::from(e).to_string()).collect()),
    )?;
    write_rows(
        &dir.join("mask_A.csv"),
        ds.aligned.iter().map(|&a| vec![u8::from(a).to_string()]),
    )?;

    if let Some(labels) = &ds.labels {
        write_rows(&dir.join("labels.csv"), labels.iter().map(|l| vec![l.to_string()]))?;
    }
    if let Some(perm) = &ds.true_perm {
        for (v, pv) in perm.iter().enumerate() {
            write_rows(
                &dir.join(format!("true_perm_{v}.csv")),
                pv.iter().map(|p| vec![p.to_string()]),
            )?;
        }
    }
    if let Some(hidden) = &ds.hidden {
        for v in 0..m {
            let path = dir.join(format!("hidden_view_{v}.csv"));
            let mut header = vec!["i".to_string()];
            header.extend(feature_header(ds.views[v].ncols()));
            let rows = hidden.iter().filter(|((_, hv), _)| *hv == v).map(|((i, _), x)| {
                let mut row = vec![i.to_string()];
                row.extend(x.iter().map(|val| val.to_string()));
                row
            });
            write_rows(&path, std::iter::once(header).chain(rows))?;
        }
    }
    Ok(())
}

/// Collect `prefix_<v>.csv` paths by scanning the directory. The indices
/// present must be exactly 0..count with no gaps, so a stray high-numbered
/// file is an error rather than silently ignored.
fn numbered_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| SmileError::io(format!("read directory {}", dir.display()), e))?;
    let full_prefix = format!("{prefix}_");
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| SmileError::io(format!("read directory {}", dir.display()), e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(rest) = name.strip_prefix(&full_prefix) else { continue };
        let Some(stem) = rest.strip_suffix(".csv") else { continue };
        if let Ok(v) = stem.parse::<usize>() {
            indices.push(v);
        }
    }
    indices.sort_unstable();
    for (expect, &v) in indices.iter().enumerate() {
        if v != expect {
            return Err(SmileError::argument(format!(
                "{}/{prefix}_{v}.csv present but {prefix}_{expect}.csv is missing",
                dir.display()
            )));
        }
    }
    Ok(indices
        .iter()
        .map(|v| dir.join(format!("{prefix}_{v}.csv")))
        .collect())
}

fn load_view(path: &Path, n_expected: Option<usize>) -> Result<(Array2<f64>, Vec<bool>)> {
    let rows = read_rows(path)?;
    let Some(((_, header), data)) = rows.split_first() else {
        return Err(parse_error(path, 1, "empty file, expected a header row"));
    };
    let d = header.len();
    if d == 0 || header[0].trim() != "f0" {
        return Err(parse_error(path, 1, "expected feature header f0,f1,..."));
    }
    if let Some(n) = n_expected {
        if data.len() != n {
            return Err(parse_error(
                path,
                rows.len(),
                format!("expected {n} data rows, found {}", data.len()),
            ));
        }
    }
    let mut x = Array2::zeros((data.len(), d));
    let mut present = vec![false; data.len()];
    for (p, (line, rec)) in data.iter().enumerate() {
        if rec.len() != d {
            return Err(parse_error(
                path,
                *line,
                format!("expected {d} cells, found {}", rec.len()),
            ));
        }
        let empty = rec.iter().filter(|c| c.trim().is_empty()).count();
        if empty == d {
            x.row_mut(p).fill(f64::NAN);
            continue;
        }
        if empty > 0 {
            return Err(parse_error(path, *line, "row mixes empty and filled cells"));
        }
        present[p] = true;
        for (c, cell) in rec.iter().enumerate() {
            x[(p, c)] = cell.trim().parse::<f64>().map_err(|_| {
                parse_error(path, *line, format!("column {c}: not a number: {cell:?}"))
            })?;
        }
    }
    Ok((x, present))
}

fn load_index_column(path: &Path, n: usize, what: &str) -> Result<Vec<usize>> {
    let rows = read_rows(path)?;
    if rows.len() != n {
        return Err(parse_error(
            path,
            rows.len(),
            format!("expected {n} rows, found {}", rows.len()),
        ));
    }
    rows.iter()
        .map(|(line, rec)| {
            if rec.len() != 1 {
                return Err(parse_error(path, *line, "expected exactly one cell"));
            }
            parse_usize(path, *line, &rec[0], what)
        })
        .collect()
}

/// Load a dataset directory written by [`save_dataset`]. Mask files are
/// required; evaluation-only files are optional as a group.
pub fn load_dataset(dir: &Path) -> Result<MultiViewDataset> {
    let view_paths = numbered_files(dir, "view")?;
    if view_paths.is_empty() {
        return Err(SmileError::argument(format!(
            "no view_0.csv in {}",
            dir.display()
        )));
    }

    let mut views = Vec::new();
    let mut present: Vec<Vec<bool>> = Vec::new(); // [v][p]
    let mut n = None;
    for path in &view_paths {
        let (x, p) = load_view(path, n)?;
        n = Some(x.nrows());
        views.push(x);
        present.push(p);
    }
    let n = n.unwrap_or(0);
    let m = views.len();

    let mask_e_path = dir.join("mask_E.csv");
    if !mask_e_path.exists() {
        return Err(SmileError::argument(format!(
            "missing observation mask {}",
            mask_e_path.display()
        )));
    }
    let mut obs = Vec::with_capacity(n);
    let rows = read_rows(&mask_e_path)?;
    if rows.len() != n {
        return Err(parse_error(
            &mask_e_path,
            rows.len(),
            format!("expected {n} rows, found {}", rows.len()),
        ));
    }
    for (line, rec) in &rows {
        if rec.len() != m {
            return Err(parse_error(
                &mask_e_path,
                *line,
                format!("expected {m} cells, found {}", rec.len()),
            ));
        }
        let row: Vec<bool> = rec
            .iter()
            .map(|c| parse_bit(&mask_e_path, *line, c, "observation flag"))
            .collect::<Result<_>>()?;
        obs.push(row);
    }

    // The empty-cell pattern of each view file must agree with the mask.
    for v in 0..m {
        for p in 0..n {
            if present[v][p] != obs[p][v] {
                let path = &view_paths[v];
                let msg = if obs[p][v] {
                    "row marked observed in mask_E.csv but cells are empty"
                } else {
                    "row marked unobserved in mask_E.csv but holds data"
                };
                return Err(parse_error(path, p + 2, msg)); // +2: header + 1-based
            }
        }
    }

    let mask_a_path = dir.join("mask_A.csv");
    if !mask_a_path.exists() {
        return Err(SmileError::argument(format!(
            "missing alignment mask {}",
            mask_a_path.display()
        )));
    }
    let rows = read_rows(&mask_a_path)?;
    if rows.len() != n {
        return Err(parse_error(
            &mask_a_path,
            rows.len(),
            format!("expected {n} rows, found {}", rows.len()),
        ));
    }
    let aligned: Vec<bool> = rows
        .iter()
        .map(|(line, rec)| {
            if rec.len() != 1 {
                return Err(parse_error(&mask_a_path, *line, "expected exactly one cell"));
            }
            parse_bit(&mask_a_path, *line, &rec[0], "alignment flag")
        })
        .collect::<Result<_>>()?;

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        Some(load_index_column(&labels_path, n, "label")?)
    } else {
        None
    };

    let perm_paths = numbered_files(dir, "true_perm")?;
    let true_perm = if perm_paths.is_empty() {
        None
    } else {
        if perm_paths.len() != m {
            return Err(SmileError::argument(format!(
                "found {} true_perm files, expected {m}",
                perm_paths.len()
            )));
        }
        Some(
            perm_paths
                .iter()
                .map(|p| load_index_column(p, n, "row position"))
                .collect::<Result<Vec<_>>>()?,
        )
    };

    let hidden_paths = numbered_files(dir, "hidden_view")?;
    let hidden = if hidden_paths.is_empty() {
        None
    } else {
        if hidden_paths.len() != m {
            return Err(SmileError::argument(format!(
                "found {} hidden_view files, expected {m}",
                hidden_paths.len()
            )));
        }
        let mut map = BTreeMap::new();
        for (v, path) in hidden_paths.iter().enumerate() {
            let d = views[v].ncols();
            let rows = read_rows(path)?;
            let Some((_, data)) = rows.split_first() else {
                return Err(parse_error(path, 1, "empty file, expected a header row"));
            };
            for (line, rec) in data {
                if rec.len() != d + 1 {
                    return Err(parse_error(
                        path,
                        *line,
                        format!("expected {} cells, found {}", d + 1, rec.len()),
                    ));
                }
                let i = parse_usize(path, *line, &rec[0], "instance index")?;
                let x: Vec<f64> = rec[1..]
                    .iter()
                    .enumerate()
                    .map(|(c, cell)| {
                        cell.trim().parse::<f64>().map_err(|_| {
                            parse_error(path, *line, format!("column {}: not a number: {cell:?}", c + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                if map.insert((i, v), x).is_some() {
                    return Err(parse_error(path, *line, format!("duplicate instance {i}")));
                }
            }
        }
        Some(map)
    };

    let ds = MultiViewDataset {
        views,
        obs,
        aligned,
        labels,
        true_perm,
        hidden,
    };
    ds.validate()?;
    Ok(ds)
}
