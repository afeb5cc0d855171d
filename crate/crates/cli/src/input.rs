use std::fmt;
use std::path::Path;

use cifusion::joint::JointCovariance;
use cifusion::linalg::{SymMatrix, PSD_TOL};
use cifusion::problem::{FusionProblem, PartialEstimate};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

/// A malformed input file; `path` is a JSON path such as `est1.P_hat[1]`.
#[derive(Debug)]
pub struct InputError {
    pub path: String,
    pub message: String,
}

impl InputError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

type Result<T> = std::result::Result<T, InputError>;

pub struct Truth {
    pub p1: SymMatrix,
    pub p2: SymMatrix,
    pub p12: DMatrix<f64>,
}

pub struct ProblemFile {
    pub problem: FusionProblem,
    pub truth: Option<Truth>,
    pub p_hat_override: Option<SymMatrix>,
}

impl ProblemFile {
    pub fn joint(&self) -> Option<std::result::Result<JointCovariance, cifusion::error::Error>> {
        self.truth
            .as_ref()
            .map(|t| JointCovariance::new(t.p1.clone(), t.p2.clone(), t.p12.clone(), PSD_TOL))
    }
}

/// A fusion rule read back from `fuse` output.
pub struct RuleFile {
    pub alpha: f64,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub p_hat: SymMatrix,
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| InputError::new("", format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| InputError::new("", format!("{}: invalid JSON: {e}", path.display())))
}

fn field<'a>(v: &'a Value, path: &str, key: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| InputError::new(join(path, key), "missing field"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn number(v: &Value, path: &str) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| InputError::new(path, "expected a number"))?;
    if !x.is_finite() {
        return Err(InputError::new(path, "number is not finite"));
    }
    Ok(x)
}

fn numbers(v: &Value, path: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| InputError::new(path, "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{path}[{i}]")))
        .collect()
}

pub fn vector(v: &Value, path: &str) -> Result<DVector<f64>> {
    let xs = numbers(v, path)?;
    if xs.is_empty() {
        return Err(InputError::new(path, "empty vector"));
    }
    Ok(DVector::from_vec(xs))
}

/// Nested rows `[[..], ..]` or a flat row-major array with `cols` columns.
pub fn matrix(v: &Value, path: &str, rows: Option<usize>, cols: usize) -> Result<DMatrix<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| InputError::new(path, "expected an array"))?;
    let nested = arr.first().is_some_and(Value::is_array);
    let (data, r) = if nested {
        let mut data = Vec::new();
        for (i, row) in arr.iter().enumerate() {
            let row_path = format!("{path}[{i}]");
            let xs = numbers(row, &row_path)?;
            if xs.len() != cols {
                return Err(InputError::new(
                    row_path,
                    format!("expected {cols} columns, got {}", xs.len()),
                ));
            }
            data.extend(xs);
        }
        (data, arr.len())
    } else {
        let data = numbers(v, path)?;
        if cols == 0 || data.len() % cols != 0 {
            return Err(InputError::new(
                path,
                format!("{} entries do not fill rows of {cols} columns", data.len()),
            ));
        }
        let r = data.len() / cols;
        (data, r)
    };
    if r == 0 {
        return Err(InputError::new(path, "empty matrix"));
    }
    if let Some(expected) = rows {
        if r != expected {
            return Err(InputError::new(
                path,
                format!("expected {expected} rows, got {r}"),
            ));
        }
    }
    Ok(DMatrix::from_row_slice(r, cols, &data))
}

fn symmetric(v: &Value, path: &str, dim: usize) -> Result<SymMatrix> {
    let m = matrix(v, path, Some(dim), dim)?;
    let scale = m.amax().max(1.0);
    if (&m - m.transpose()).amax() > 1e-9 * scale {
        return Err(InputError::new(path, "matrix is not symmetric"));
    }
    SymMatrix::new(m).map_err(|e| InputError::new(path, e.to_string()))
}

fn estimate(v: &Value, path: &str, n: usize) -> Result<PartialEstimate> {
    let x_hat = vector(field(v, path, "x_hat")?, &join(path, "x_hat"))?;
    let p = x_hat.len();
    let h = matrix(field(v, path, "H")?, &join(path, "H"), Some(p), n)?;
    let p_hat = symmetric(field(v, path, "P_hat")?, &join(path, "P_hat"), p)?;
    PartialEstimate::new(h, x_hat, p_hat).map_err(|e| InputError::new(path, e.to_string()))
}

fn dimension(v: &Value) -> Result<usize> {
    let n = field(v, "", "n")?
        .as_u64()
        .ok_or_else(|| InputError::new("n", "expected a positive integer"))?;
    if n == 0 {
        return Err(InputError::new("n", "state dimension must be positive"));
    }
    Ok(n as usize)
}

pub fn parse_problem(v: &Value) -> std::result::Result<ProblemFile, crate::Failure> {
    let n = dimension(v)?;
    let est1 = estimate(field(v, "", "est1")?, "est1", n)?;
    let est2 = estimate(field(v, "", "est2")?, "est2", n)?;
    let (p1, p2) = (est1.rows(), est2.rows());
    let problem = FusionProblem::new(est1, est2)?;

    let truth = match v.get("truth") {
        None | Some(Value::Null) => None,
        Some(t) => Some(Truth {
            p1: symmetric(field(t, "truth", "P1")?, "truth.P1", p1)?,
            p2: symmetric(field(t, "truth", "P2")?, "truth.P2", p2)?,
            p12: matrix(field(t, "truth", "P12")?, "truth.P12", Some(p1), p2)?,
        }),
    };
    let p_hat_override = match v.get("P_hat_override") {
        None | Some(Value::Null) => None,
        Some(m) => Some(symmetric(m, "P_hat_override", n)?),
    };
    Ok(ProblemFile {
        problem,
        truth,
        p_hat_override,
    })
}

pub fn parse_rule(v: &Value, problem: &FusionProblem) -> Result<RuleFile> {
    let n = problem.n();
    let alpha = number(field(v, "", "alpha")?, "alpha")?;
    Ok(RuleFile {
        alpha,
        k1: matrix(field(v, "", "K1")?, "K1", Some(n), problem.p1())?,
        k2: matrix(field(v, "", "K2")?, "K2", Some(n), problem.p2())?,
        p_hat: symmetric(field(v, "", "P_hat")?, "P_hat", n)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_and_flat_agree() {
        let a = matrix(&json!([[1, 2, 3], [4, 5, 6]]), "m", Some(2), 3).unwrap();
        let b = matrix(&json!([1, 2, 3, 4, 5, 6]), "m", Some(2), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[(1, 0)], 4.0);
    }

    #[test]
    fn errors_carry_json_path() {
        let e = matrix(&json!([[1, 2], [3]]), "est1.H", Some(2), 2).unwrap_err();
        assert_eq!(e.path, "est1.H[1]");
        let e = matrix(&json!([1, "x"]), "P", None, 2).unwrap_err();
        assert_eq!(e.path, "P[1]");
        let v = json!({"n": 2, "est1": {"H": [1, 0], "x_hat": [0]}});
        let e = estimate(&v["est1"], "est1", 2).unwrap_err();
        assert_eq!(e.path, "est1.P_hat");
    }

    #[test]
    fn asymmetric_covariance_is_rejected() {
        assert!(symmetric(&json!([[1, 0.5], [0, 1]]), "P", 2).is_err());
    }
}
