//! Plain-text model checkpoints.
//!
//! A checkpoint records the architecture, the flattening layout table, and
//! the raw parameter values. Values are written with Rust's shortest
//! round-trip float formatting, so load(save(x)) is bit-lossless.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, Layout, ModelSpec, ParamBlock};
use crate::params::ParamVector;

const MAGIC: &str = "unlearn-lab-checkpoint v1";

pub fn checkpoint_to_string(spec: &ModelSpec, theta: &ParamVector) -> Result<String> {
    if theta.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint parameters vs spec",
            expected: spec.param_count(),
            actual: theta.len(),
        });
    }
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("input_dim {}\n", spec.input_dim));
    out.push_str("hidden");
    for h in &spec.hidden_dims {
        out.push_str(&format!(" {h}"));
    }
    out.push('\n');
    out.push_str(&format!("num_classes {}\n", spec.num_classes));
    out.push_str(&format!("activation {}\n", spec.activation));
    for entry in &spec.layout().entries {
        match entry.kind {
            ParamBlock::Weight { rows, cols } => {
                out.push_str(&format!("layout {} weight {rows} {cols}\n", entry.layer));
            }
            ParamBlock::Bias { len } => {
                out.push_str(&format!("layout {} bias {len}\n", entry.layer));
            }
        }
    }
    out.push_str(&format!("params {}\n", theta.len()));
    for v in theta.iter() {
        out.push_str(&format!("{v}\n"));
    }
    Ok(out)
}

pub fn checkpoint_from_str(text: &str, path: &str) -> Result<(ModelSpec, ParamVector)> {
    let fail = |message: String| Error::Format {
        path: path.to_string(),
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(fail(format!("missing header `{MAGIC}`")));
    }

    let mut input_dim = None;
    let mut hidden: Option<Vec<usize>> = None;
    let mut num_classes = None;
    let mut activation = None;
    let mut layout_lines: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut expected_params: Option<usize> = None;

    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if expected_params.is_some() {
            let v: f64 = line
                .parse()
                .map_err(|_| fail(format!("bad parameter value `{line}`")))?;
            values.push(v);
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        match key {
            "input_dim" => {
                input_dim = Some(parse_usize(rest.first(), "input_dim", path)?);
            }
            "hidden" => {
                let dims = rest
                    .iter()
                    .map(|s| {
                        s.parse::<usize>()
                            .map_err(|_| fail(format!("bad hidden dim `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                hidden = Some(dims);
            }
            "num_classes" => {
                num_classes = Some(parse_usize(rest.first(), "num_classes", path)?);
            }
            "activation" => {
                let s = rest.first().ok_or_else(|| fail("missing activation".into()))?;
                activation = Some(s.parse::<Activation>()?);
            }
            "layout" => layout_lines.push(rest.join(" ")),
            "params" => {
                expected_params = Some(parse_usize(rest.first(), "params", path)?);
            }
            other => return Err(fail(format!("unknown key `{other}`"))),
        }
    }

    let spec = ModelSpec::new(
        input_dim.ok_or_else(|| fail("missing input_dim".into()))?,
        hidden.ok_or_else(|| fail("missing hidden".into()))?,
        num_classes.ok_or_else(|| fail("missing num_classes".into()))?,
        activation.ok_or_else(|| fail("missing activation".into()))?,
    )?;
    let expected = expected_params.ok_or_else(|| fail("missing params count".into()))?;
    if values.len() != expected {
        return Err(fail(format!(
            "expected {expected} parameter values, found {}",
            values.len()
        )));
    }
    check_layout(&spec.layout(), &layout_lines, path)?;
    let theta = ParamVector::from_vec(values);
    if theta.len() != spec.param_count() {
        return Err(fail(format!(
            "parameter count {} does not match architecture ({})",
            theta.len(),
            spec.param_count()
        )));
    }
    Ok((spec, theta))
}

fn parse_usize(field: Option<&&str>, key: &str, path: &str) -> Result<usize> {
    field
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::Format {
            path: path.to_string(),
            message: format!("bad or missing value for `{key}`"),
        })
}

fn check_layout(layout: &Layout, lines: &[String], path: &str) -> Result<()> {
    let rendered: Vec<String> = layout
        .entries
        .iter()
        .map(|e| match e.kind {
            ParamBlock::Weight { rows, cols } => format!("{} weight {rows} {cols}", e.layer),
            ParamBlock::Bias { len } => format!("{} bias {len}", e.layer),
        })
        .collect();
    if rendered != lines {
        return Err(Error::Format {
            path: path.to_string(),
            message: "layout table does not match architecture".into(),
        });
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, spec: &ModelSpec, theta: &ParamVector) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(spec, theta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, ParamVector)> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_str(&text, &path.display().to_string())
}
