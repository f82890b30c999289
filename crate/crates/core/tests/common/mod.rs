#![allow(dead_code, clippy::type_complexity)]

pub mod degeneracy;
pub mod fixtures;
pub mod grad;
pub mod oracle;
pub mod pipeline;

/// One named property with the evidence behind its verdict.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ok,
            detail: detail.into(),
        }
    }

    /// `|got − want| ≤ tol`.
    pub fn close(name: impl Into<String>, got: f64, want: f64, tol: f64) -> Self {
        let err = (got - want).abs();
        Self::new(name, err <= tol, format!("got {got:.9}, want {want:.9}, |Δ| {err:.2e}"))
    }
}

pub fn assert_all(checks: &[Check]) {
    let bad: Vec<&Check> = checks.iter().filter(|c| !c.ok).collect();
    assert!(bad.is_empty(), "failed: {bad:#?}");
}
