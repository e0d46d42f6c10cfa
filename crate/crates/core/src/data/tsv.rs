use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ExpressionDataset, GeneInteractionSet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Reads an expression TSV: header `sample_id<TAB>gene...<TAB>label`, then
/// one row per sample. The dataset is named after the file stem.
pub fn load_expression_tsv(path: impl AsRef<Path>) -> Result<ExpressionDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_expression(&name, path, &text)
}

fn parse_expression(name: &str, path: &Path, text: &str) -> Result<ExpressionDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, 1, "empty file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.first() != Some(&"sample_id") {
        return Err(parse_err(path, 1, 1, "first header cell must be `sample_id`"));
    }
    if cols.len() < 3 || cols.last() != Some(&"label") {
        return Err(parse_err(path, 1, cols.len(), "missing `label` column"));
    }
    let genes: Vec<String> = cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut seen = HashSet::new();
    for (j, g) in genes.iter().enumerate() {
        if g.is_empty() {
            return Err(parse_err(path, 1, j + 2, "empty gene identifier"));
        }
        if !seen.insert(g.as_str()) {
            return Err(parse_err(path, 1, j + 2, format!("duplicate gene column `{g}`")));
        }
    }

    let width = cols.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut sample_ids = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != width {
            return Err(parse_err(
                path,
                lineno,
                cells.len().min(width),
                format!("expected {width} cells, found {}", cells.len()),
            ));
        }
        sample_ids.push(cells[0].to_string());
        for (j, cell) in cells[1..width - 1].iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(path, lineno, j + 2, format!("non-numeric expression value `{cell}`"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, j + 2, format!("non-finite value `{cell}`")));
            }
            data.push(v);
        }
        let label = match cells[width - 1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(parse_err(
                    path,
                    lineno,
                    width,
                    format!("label `{other}` is not 0 or 1"),
                ))
            }
        };
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(path, 2, 1, "no samples"));
    }
    let matrix = Tensor::new(vec![labels.len(), genes.len()], data)?;
    ExpressionDataset::new(name, genes, sample_ids, matrix, labels)
}

/// Writes a dataset in the expression TSV format. Values use Rust's shortest
/// round-trip float formatting, so reloading is exact.
pub fn write_expression_tsv(dataset: &ExpressionDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("sample_id");
    for g in dataset.gene_ids() {
        out.push('\t');
        out.push_str(g);
    }
    out.push_str("\tlabel\n");
    for i in 0..dataset.n_samples() {
        out.push_str(&dataset.sample_ids()[i]);
        for v in dataset.row(i) {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\t');
        out.push_str(&dataset.labels()[i].to_string());
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a two-column interaction TSV. Lines starting with `#` and blank
/// lines are skipped.
pub fn load_interactions_tsv(path: impl AsRef<Path>) -> Result<GeneInteractionSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut set = GeneInteractionSet::default();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = trimmed.split('\t').collect();
        if cells.len() != 2 || cells.iter().any(|c| c.is_empty()) {
            return Err(parse_err(
                path,
                idx + 1,
                1,
                format!("expected 2 gene symbols, found {} column(s)", cells.len()),
            ));
        }
        set.insert(cells[0], cells[1]);
    }
    Ok(set)
}
