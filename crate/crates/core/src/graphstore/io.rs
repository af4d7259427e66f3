//! Directory format: `meta.txt` (`n=`, `d=`, `has_labels=` lines),
//! `edges.tsv` (`u<TAB>v`, `u < v`, 0-based), `features.tsv` (N rows of D
//! tab-separated floats) and optional `labels.tsv` (one class id per line).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Graph;
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, SparseAdjacency};

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| format_err(path, 0, format!("cannot read: {e}")))
}

/// Non-empty lines with their 1-based line numbers. A single trailing
/// newline is expected; blank lines elsewhere are errors.
fn lines(path: &Path, text: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(out);
    }
    for (i, l) in body.split('\n').enumerate() {
        if l.trim().is_empty() {
            return Err(format_err(path, i + 1, "blank line"));
        }
        out.push((i + 1, l.to_owned()));
    }
    Ok(out)
}

fn parse_meta(path: &Path) -> Result<(usize, usize, bool)> {
    let text = read(path)?;
    let ls = lines(path, &text)?;
    let get = |key: &str, idx: usize| -> Result<String> {
        let (ln, l) = ls
            .get(idx)
            .ok_or_else(|| format_err(path, idx + 1, format!("missing `{key}=` line")))?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(|v| v.trim().to_owned())
            .ok_or_else(|| format_err(path, *ln, format!("expected `{key}=<value>`")))
    };
    let n = get("n", 0)?;
    let d = get("d", 1)?;
    let h = get("has_labels", 2)?;
    let n: usize = n.parse().map_err(|_| format_err(path, 1, "n is not an integer"))?;
    let d: usize = d.parse().map_err(|_| format_err(path, 2, "d is not an integer"))?;
    let has_labels = match h.as_str() {
        "0" => false,
        "1" => true,
        _ => return Err(format_err(path, 3, "has_labels must be 0 or 1")),
    };
    if ls.len() > 3 {
        return Err(format_err(path, ls[3].0, "unexpected extra line"));
    }
    Ok((n, d, has_labels))
}

pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let p = |f: &str| -> PathBuf { dir.join(f) };

    let meta_path = p("meta.txt");
    let (n, d, has_labels) = parse_meta(&meta_path)?;

    let edges_path = p("edges.tsv");
    let text = read(&edges_path)?;
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (ln, l) in lines(&edges_path, &text)? {
        let mut parts = l.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format_err(&edges_path, ln, "expected `u<TAB>v`"));
        };
        let u: usize = a
            .trim()
            .parse()
            .map_err(|_| format_err(&edges_path, ln, "u is not a node index"))?;
        let v: usize = b
            .trim()
            .parse()
            .map_err(|_| format_err(&edges_path, ln, "v is not a node index"))?;
        if u >= n || v >= n {
            return Err(format_err(&edges_path, ln, format!("node index out of range for n={n}")));
        }
        if u >= v {
            return Err(format_err(&edges_path, ln, "edges must be listed once with u < v"));
        }
        if !seen.insert((u, v)) {
            return Err(format_err(&edges_path, ln, "duplicate edge"));
        }
        edges.push((u, v));
    }

    let feat_path = p("features.tsv");
    let text = read(&feat_path)?;
    let rows = lines(&feat_path, &text)?;
    if rows.len() != n {
        return Err(format_err(&feat_path, rows.len(), format!("expected {n} rows, found {}", rows.len())));
    }
    let mut data = Vec::with_capacity(n * d);
    for (ln, l) in &rows {
        let before = data.len();
        for tok in l.split('\t') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| format_err(&feat_path, *ln, format!("`{tok}` is not a float")))?;
            if !v.is_finite() {
                return Err(format_err(&feat_path, *ln, "non-finite feature"));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(format_err(&feat_path, *ln, format!("expected {d} columns")));
        }
    }
    let features = DenseMatrix::from_vec(n, d, data)?;

    let labels = if has_labels {
        let lab_path = p("labels.tsv");
        let text = read(&lab_path)?;
        let rows = lines(&lab_path, &text)?;
        if rows.len() != n {
            return Err(format_err(&lab_path, rows.len(), format!("expected {n} labels")));
        }
        let mut labels = Vec::with_capacity(n);
        for (ln, l) in rows {
            labels.push(
                l.trim()
                    .parse()
                    .map_err(|_| format_err(&lab_path, ln, "label is not an integer"))?,
            );
        }
        Some(labels)
    } else {
        None
    };

    Graph::new(SparseAdjacency::from_undirected_edges(n, &edges)?, features, labels)
}

pub fn save_graph(graph: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let n = graph.n();
    let d = graph.feature_dim();

    fs::write(
        dir.join("meta.txt"),
        format!("n={n}\nd={d}\nhas_labels={}\n", u8::from(graph.labels().is_some())),
    )?;

    let mut buf = Vec::new();
    for (u, v) in graph.adjacency().undirected_edges() {
        writeln!(buf, "{u}\t{v}")?;
    }
    fs::write(dir.join("edges.tsv"), buf)?;

    // `{:?}` on f64 prints the shortest string that parses back to the same bits
    let mut buf = Vec::new();
    for i in 0..n {
        let row = graph.features().row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                buf.push(b'\t');
            }
            write!(buf, "{v:?}")?;
        }
        buf.push(b'\n');
    }
    fs::write(dir.join("features.tsv"), buf)?;

    let labels_path = dir.join("labels.tsv");
    if let Some(labels) = graph.labels() {
        let mut buf = Vec::new();
        for l in labels {
            writeln!(buf, "{l}")?;
        }
        fs::write(labels_path, buf)?;
    } else if labels_path.exists() {
        fs::remove_file(labels_path)?;
    }
    Ok(())
}
