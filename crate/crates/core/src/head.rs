//! Label-feature head: global readout, per-class label features, node-label
//! correspondence scores and the prediction map.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Affine, LabelMlp};
use crate::tape::{Tape, Var};
use crate::tensor::DenseMatrix;

/// `s = colmax(ReLU([f0 ⊕ fL]·W_g + b_g))`, a 1×c row.
pub fn global_readout(tape: &mut Tape, f0: Var, fl: Var, readout: &Affine<Var>) -> Result<Var> {
    let cat = tape.concat_cols(f0, fl)?;
    let h = tape.matmul(cat, readout.weight)?;
    let h = tape.add_row(h, readout.bias)?;
    let h = tape.relu(h);
    tape.col_max_pool(h)
}

/// One row per class: `g_q = ReLU(s·W_e^q + b_e^q)·W_s^q + b_s^q`, stacked
/// into a k×c node. Each class is evaluated independently.
pub fn label_features(tape: &mut Tape, s: Var, classes: &[LabelMlp<Var>]) -> Result<Var> {
    if tape.shape(s).0 != 1 {
        return Err(Error::dim("label_features", (1, tape.shape(s).1), tape.shape(s)));
    }
    let mut rows = Vec::with_capacity(classes.len());
    for mlp in classes {
        let h = tape.matmul(s, mlp.expand.weight)?;
        let h = tape.add_row(h, mlp.expand.bias)?;
        let h = tape.relu(h);
        let g = tape.matmul(h, mlp.shrink.weight)?;
        rows.push(tape.add_row(g, mlp.shrink.bias)?);
    }
    tape.concat_rows(&rows)
}

/// `z = fL·gᵀ`: column q holds every node's dot product with `g_q`.
pub fn correspondence(tape: &mut Tape, fl: Var, g: Var) -> Result<Var> {
    if tape.shape(fl).1 != tape.shape(g).1 {
        return Err(Error::dim("correspondence", tape.shape(fl), tape.shape(g)));
    }
    let gt = tape.transpose(g);
    tape.matmul(fl, gt)
}

/// Row-wise softmax of the class scores.
pub fn predict(tape: &mut Tape, z: Var) -> Result<Var> {
    tape.row_softmax(z)
}

/// Column sums of node features: a graph-level readout.
pub fn graph_add_pool(tape: &mut Tape, fl: Var) -> Result<Var> {
    if tape.shape(fl).0 == 0 {
        return Err(Error::EmptyInput { op: "graph_add_pool" });
    }
    Ok(tape.col_sum(fl))
}

/// Writes `m` as comma-separated rows after a `# rows cols` header line.
pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(m.len() * 20 + 16);
    writeln!(out, "# {} {}", m.rows(), m.cols()).expect("write to Vec");
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(",")).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, "header must start with '#'".into()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(1, format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(1, "header needs rows and cols".into()));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (k, line) in lines.enumerate() {
        let before = data.len();
        for tok in line.split(',').filter(|t| !t.is_empty()) {
            data.push(tok.trim().parse::<f64>().map_err(|_| parse_err(k + 2, format!("bad value {tok:?}")))?);
        }
        if data.len() - before != cols {
            return Err(parse_err(k + 2, format!("expected {cols} values")));
        }
    }
    DenseMatrix::new(rows, cols, data).map_err(|_| Error::Integrity(format!("{}: expected {rows} rows", path.display())))
}
