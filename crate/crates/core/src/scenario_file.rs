//! TOML scenario documents (`schema = 1`).
//!
//! ```toml
//! schema = 1
//! dim_total = 2
//! visible_mask = [1, 0]
//! mean = [0.0, 1.0]
//! second_moment = [[1.0, 0.0], [0.0, 2.0]]   # E[xxᵀ], row-major
//! dist_kind = "gaussian"                      # gaussian | point_mass | finite_mixture
//! effort_matrix = [[1.0], [0.5]]             # dim_total rows, one column per action
//! true_params = [1.0, 1.0]
//! noise_sigma = 0.1
//! gaming_fraction = 1.0
//! # homogeneous_coord = 0
//!
//! # finite_mixture only:
//! # [[mixture_atoms]]
//! # weight = 0.5
//! # point = [1.0, 2.0]
//! ```
//!
//! Parse and validation errors carry the line of the offending field.

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::model::{FeatureDistribution, MixtureAtom, ScenarioSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DistKind {
    Gaussian,
    PointMass,
    FiniteMixture,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: Spanned<u32>,
    #[allow(dead_code)]
    #[serde(default)]
    name: Option<String>,
    dim_total: Spanned<usize>,
    visible_mask: Spanned<Vec<i64>>,
    mean: Spanned<Vec<f64>>,
    second_moment: Spanned<Vec<Vec<f64>>>,
    dist_kind: Spanned<DistKind>,
    #[serde(default)]
    mixture_atoms: Option<Spanned<Vec<RawAtom>>>,
    effort_matrix: Spanned<Vec<Vec<f64>>>,
    true_params: Spanned<Vec<f64>>,
    noise_sigma: Spanned<f64>,
    gaming_fraction: Spanned<f64>,
    #[serde(default)]
    homogeneous_coord: Option<Spanned<usize>>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawAtom {
    weight: f64,
    point: Vec<f64>,
}

#[derive(Serialize)]
struct ScenarioDoc<'a> {
    schema: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<&'a str>,
    dim_total: usize,
    visible_mask: Vec<i64>,
    mean: Vec<f64>,
    second_moment: Vec<Vec<f64>>,
    dist_kind: DistKind,
    effort_matrix: Vec<Vec<f64>>,
    true_params: Vec<f64>,
    noise_sigma: f64,
    gaming_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    homogeneous_coord: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    mixture_atoms: Vec<RawAtom>,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

fn at_line(text: &str, span: Range<usize>, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {}: {msg}", line_of(text, span)))
}

fn matrix_from_rows(
    text: &str,
    field: &str,
    rows: &Spanned<Vec<Vec<f64>>>,
) -> Result<DMatrix<f64>> {
    let data = rows.get_ref();
    let ncols = data.first().map_or(0, Vec::len);
    if let Some(bad) = data.iter().position(|r| r.len() != ncols) {
        return Err(at_line(
            text,
            rows.span(),
            format!(
                "{field} row {bad} has {} entries, expected {ncols}",
                data[bad].len()
            ),
        ));
    }
    Ok(DMatrix::from_fn(data.len(), ncols, |i, j| data[i][j]))
}

/// Parse and validate a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let msg = e.message().trim().to_string();
        match e.span() {
            Some(span) => at_line(text, span, msg),
            None => Error::Parse(msg),
        }
    })?;

    if *raw.schema.get_ref() != SCHEMA_VERSION {
        return Err(at_line(
            text,
            raw.schema.span(),
            format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                raw.schema.get_ref()
            ),
        ));
    }

    let mut visible_mask = Vec::with_capacity(raw.visible_mask.get_ref().len());
    for &v in raw.visible_mask.get_ref() {
        match v {
            0 => visible_mask.push(false),
            1 => visible_mask.push(true),
            other => {
                return Err(at_line(
                    text,
                    raw.visible_mask.span(),
                    format!("visible_mask entries must be 0 or 1, got {other}"),
                ))
            }
        }
    }

    let distribution = match raw.dist_kind.get_ref() {
        DistKind::Gaussian => FeatureDistribution::Gaussian,
        DistKind::PointMass => FeatureDistribution::PointMass,
        DistKind::FiniteMixture => {
            let atoms = raw.mixture_atoms.as_ref().ok_or_else(|| {
                at_line(
                    text,
                    raw.dist_kind.span(),
                    "dist_kind = \"finite_mixture\" requires [[mixture_atoms]]",
                )
            })?;
            FeatureDistribution::FiniteMixture(
                atoms
                    .get_ref()
                    .iter()
                    .map(|a| MixtureAtom {
                        weight: a.weight,
                        point: DVector::from_column_slice(&a.point),
                    })
                    .collect(),
            )
        }
    };
    if let (Some(atoms), false) = (
        raw.mixture_atoms.as_ref(),
        matches!(raw.dist_kind.get_ref(), DistKind::FiniteMixture),
    ) {
        return Err(at_line(
            text,
            atoms.span(),
            "mixture_atoms given but dist_kind is not finite_mixture",
        ));
    }

    let spec = ScenarioSpec {
        dim_total: *raw.dim_total.get_ref(),
        visible_mask,
        mean: DVector::from_column_slice(raw.mean.get_ref()),
        second_moment: matrix_from_rows(text, "second_moment", &raw.second_moment)?,
        distribution,
        effort_matrix: matrix_from_rows(text, "effort_matrix", &raw.effort_matrix)?,
        true_params: DVector::from_column_slice(raw.true_params.get_ref()),
        noise_sigma: *raw.noise_sigma.get_ref(),
        gaming_fraction: *raw.gaming_fraction.get_ref(),
        homogeneous_coord: raw.homogeneous_coord.as_ref().map(|h| *h.get_ref()),
    };

    spec.validate().map_err(|e| match e {
        Error::Validation(v) => {
            let span = match v.field {
                "dim_total" => Some(raw.dim_total.span()),
                "visible_mask" => Some(raw.visible_mask.span()),
                "mean" => Some(raw.mean.span()),
                "second_moment" => Some(raw.second_moment.span()),
                "effort_matrix" => Some(raw.effort_matrix.span()),
                "true_params" => Some(raw.true_params.span()),
                "noise_sigma" => Some(raw.noise_sigma.span()),
                "gaming_fraction" => Some(raw.gaming_fraction.span()),
                "homogeneous_coord" => raw.homogeneous_coord.as_ref().map(|h| h.span()),
                "mixture_atoms" => raw.mixture_atoms.as_ref().map(|a| a.span()),
                _ => None,
            };
            match span {
                Some(span) => at_line(text, span, v),
                None => Error::Parse(v.to_string()),
            }
        }
        other => other,
    })?;
    Ok(spec)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Render a scenario as a schema-1 document.
pub fn to_toml(spec: &ScenarioSpec, name: Option<&str>) -> String {
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    };
    let (dist_kind, mixture_atoms) = match &spec.distribution {
        FeatureDistribution::Gaussian => (DistKind::Gaussian, Vec::new()),
        FeatureDistribution::PointMass => (DistKind::PointMass, Vec::new()),
        FeatureDistribution::FiniteMixture(atoms) => (
            DistKind::FiniteMixture,
            atoms
                .iter()
                .map(|a| RawAtom {
                    weight: a.weight,
                    point: a.point.iter().copied().collect(),
                })
                .collect(),
        ),
    };
    let doc = ScenarioDoc {
        schema: SCHEMA_VERSION,
        name,
        dim_total: spec.dim_total,
        visible_mask: spec.visible_mask.iter().map(|&v| i64::from(v)).collect(),
        mean: spec.mean.iter().copied().collect(),
        second_moment: rows(&spec.second_moment),
        dist_kind,
        effort_matrix: rows(&spec.effort_matrix),
        true_params: spec.true_params.iter().copied().collect(),
        noise_sigma: spec.noise_sigma,
        gaming_fraction: spec.gaming_fraction,
        homogeneous_coord: spec.homogeneous_coord,
        mixture_atoms,
    };
    toml::to_string(&doc).expect("scenario documents always serialize")
}
