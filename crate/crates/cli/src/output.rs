//! Hand-written JSON so every number carries 17 significant digits.

use nalgebra::{DMatrix, DVector};

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

pub fn vector(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", parts.join(", "))
}

pub fn matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let parts: Vec<String> = r.iter().map(|&x| num(x)).collect();
            format!("[{}]", parts.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

pub fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Ordered JSON object built from pre-rendered values.
#[derive(Default)]
pub struct Object {
    fields: Vec<(String, String)>,
}

impl Object {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, key: &str, rendered: String) -> Self {
        self.fields.push((key.to_string(), rendered));
        self
    }

    pub fn render(&self) -> String {
        let body: Vec<String> = self
            .fields
            .iter()
            .map(|(k, v)| format!("  {}: {}", string(k), v))
            .collect();
        format!("{{\n{}\n}}\n", body.join(",\n"))
    }

    /// Single-line form for nesting.
    pub fn inline(&self) -> String {
        let body: Vec<String> = self
            .fields
            .iter()
            .map(|(k, v)| format!("{}: {}", string(k), v))
            .collect();
        format!("{{{}}}", body.join(", "))
    }
}
