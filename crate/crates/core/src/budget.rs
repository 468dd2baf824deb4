//! Expected impact rates from per-source transport coefficients.
//!
//! Each source contributes `coefficient × driver`, where the driver is a
//! measured flux or activity (or 1 for fixed contributions). Coefficient
//! and driver uncertainties are kept apart: tabulated budgets quote the
//! coefficient part, while `combined_err` folds in the driver in quadrature.

use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::{csv_err, weighted_linear_fit, FitPoint, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientKind {
    /// Events/s per unit particle flux (1/cm²/s).
    Flux,
    /// Events/s per kBq.
    Activity,
    /// Events/s, no driver.
    Fixed,
}

impl FromStr for CoefficientKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flux" => Ok(Self::Flux),
            "activity" => Ok(Self::Activity),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::config(format!("unknown coefficient type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub name: String,
    pub kind: CoefficientKind,
    pub coefficient: f64,
    pub coefficient_err: f64,
    pub driver: Option<f64>,
    pub driver_err: f64,
    /// The scaled value is an upper limit, not a measurement.
    pub upper_limit: bool,
}

impl SourceEntry {
    pub fn fixed(name: impl Into<String>, rate: f64, err: f64) -> Self {
        Self {
            name: name.into(),
            kind: CoefficientKind::Fixed,
            coefficient: rate,
            coefficient_err: err,
            driver: None,
            driver_err: 0.0,
            upper_limit: false,
        }
    }

    pub fn scaled(
        name: impl Into<String>,
        kind: CoefficientKind,
        coefficient: (f64, f64),
        driver: (f64, f64),
    ) -> Self {
        Self {
            name: name.into(),
            kind,
            coefficient: coefficient.0,
            coefficient_err: coefficient.1,
            driver: Some(driver.0),
            driver_err: driver.1,
            upper_limit: false,
        }
    }

    pub fn as_upper_limit(mut self) -> Self {
        self.upper_limit = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledRate {
    pub rate: f64,
    /// Propagated from the coefficient alone.
    pub err: f64,
    /// Propagated from the driver alone.
    pub driver_err: f64,
    pub upper_limit: bool,
}

impl ScaledRate {
    /// Coefficient and driver relative errors added in quadrature.
    pub fn combined_err(&self) -> f64 {
        self.err.hypot(self.driver_err)
    }
}

pub fn scale_source_rate(entry: &SourceEntry) -> Result<ScaledRate> {
    let driver = match (entry.kind, entry.driver) {
        (CoefficientKind::Fixed, _) => 1.0,
        (_, Some(d)) => d,
        (_, None) => return Err(Error::config(format!("source `{}` has no driver value", entry.name))),
    };
    if !(entry.coefficient >= 0.0 && driver >= 0.0) {
        return Err(Error::config(format!("source `{}` has a negative coefficient or driver", entry.name)));
    }
    if !(entry.coefficient_err >= 0.0 && entry.driver_err >= 0.0) {
        return Err(Error::config(format!("source `{}` has a negative uncertainty", entry.name)));
    }
    let driver_err = if entry.kind == CoefficientKind::Fixed {
        0.0
    } else {
        entry.driver_err
    };
    Ok(ScaledRate {
        rate: entry.coefficient * driver,
        err: entry.coefficient_err * driver,
        driver_err: entry.coefficient * driver_err,
        upper_limit: entry.upper_limit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorCombination {
    #[default]
    Linear,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetTotal {
    pub rate: f64,
    pub err: f64,
    /// Sum of upper-limit entries, reported separately.
    pub upper_limits: f64,
}

pub fn total_budget(entries: &[SourceEntry], combine: ErrorCombination) -> Result<BudgetTotal> {
    let mut rate = 0.0;
    let mut lin = 0.0;
    let mut quad = 0.0;
    let mut upper_limits = 0.0;
    for e in entries {
        let s = scale_source_rate(e)?;
        if s.upper_limit {
            upper_limits += s.rate;
            continue;
        }
        rate += s.rate;
        lin += s.err;
        quad += s.err * s.err;
    }
    Ok(BudgetTotal {
        rate,
        err: match combine {
            ErrorCombination::Linear => lin,
            ErrorCombination::Quadrature => quad.sqrt(),
        },
        upper_limits,
    })
}

/// Activity coefficient (events/s per kBq) from a through-origin weighted
/// fit of `(activity, rate, rate_err)` rows.
pub fn activity_coefficient(rows: &[(f64, f64, f64)]) -> Result<FitResult> {
    let pts: Vec<FitPoint> = rows.iter().copied().map(FitPoint::from).collect();
    weighted_linear_fit(&pts, true)
}

fn parse_field(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("line {line}: bad {what} `{}`", field.trim())))
}

/// Reads a source-definition file: one entry per line,
/// `name, type, coefficient, coefficient_err, driver, driver_err`.
///
/// `#` starts a comment. A coefficient written as `<x` marks an upper
/// limit; a driver of `-` means none.
pub fn parse_sources<R: BufRead>(input: R) -> Result<Vec<SourceEntry>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let n = k + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let f: Vec<&str> = body.split(',').collect();
        if f.len() != 6 {
            return Err(Error::config(format!("line {n}: expected 6 fields, found {}", f.len())));
        }
        let kind: CoefficientKind = f[1].parse()?;
        let coeff = f[2].trim();
        let (upper_limit, coeff) = match coeff.strip_prefix('<') {
            Some(rest) => (true, rest),
            None => (false, coeff),
        };
        let driver = match f[4].trim() {
            "-" | "" => None,
            d => Some(parse_field(d, "driver", n)?),
        };
        let driver_err = match f[5].trim() {
            "-" | "" => 0.0,
            d => parse_field(d, "driver error", n)?,
        };
        out.push(SourceEntry {
            name: f[0].trim().to_string(),
            kind,
            coefficient: parse_field(coeff, "coefficient", n)?,
            coefficient_err: parse_field(f[3], "coefficient error", n)?,
            driver,
            driver_err,
            upper_limit,
        });
    }
    Ok(out)
}

/// Per-source rows followed by a total row.
pub fn write_budget_csv<W: Write>(out: W, entries: &[SourceEntry], combine: ErrorCombination) -> Result<BudgetTotal> {
    let total = total_budget(entries, combine)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "rate", "err", "driver_err", "upper_limit"])
        .map_err(csv_err)?;
    for e in entries {
        let s = scale_source_rate(e)?;
        w.write_record([
            e.name.clone(),
            format!("{:.6e}", s.rate),
            format!("{:.6e}", s.err),
            format!("{:.6e}", s.driver_err),
            s.upper_limit.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.write_record([
        "Total".to_string(),
        format!("{:.6e}", total.rate),
        format!("{:.6e}", total.err),
        String::new(),
        "false".to_string(),
    ])
    .map_err(csv_err)?;
    w.flush()?;
    Ok(total)
}
