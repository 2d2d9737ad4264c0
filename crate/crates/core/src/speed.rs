//! Nodal wave speed on the spatial lattice and the experiment presets.

use crate::error::{Error, Result};
use crate::grid::Grid;
use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Speed samples c(x_i, y_j), index i*(I+1)+j.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedField {
    pub i: usize,
    pub values: Vec<f64>,
    pub c_min: f64,
    pub c_max: f64,
}

impl SpeedField {
    pub fn from_values(i: usize, values: Vec<f64>) -> Result<SpeedField> {
        if values.len() != (i + 1) * (i + 1) {
            return Err(Error::Shape(format!(
                "speed field for I={i} needs {} values, got {}",
                (i + 1) * (i + 1),
                values.len()
            )));
        }
        let mut c_min = f64::INFINITY;
        let mut c_max = 0.0f64;
        for &v in &values {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("speed value {v} not positive")));
            }
            c_min = c_min.min(v);
            c_max = c_max.max(v);
        }
        Ok(SpeedField { i, values, c_min, c_max })
    }

    pub fn from_fn(i: usize, f: impl Fn(f64, f64) -> f64) -> Result<SpeedField> {
        let dx = 2.0 / i as f64;
        let mut values = Vec::with_capacity((i + 1) * (i + 1));
        for a in 0..=i {
            for b in 0..=i {
                values.push(f(-1.0 + a as f64 * dx, -1.0 + b as f64 * dx));
            }
        }
        SpeedField::from_values(i, values)
    }

    pub fn constant(i: usize, c: f64) -> Result<SpeedField> {
        SpeedField::from_fn(i, |_, _| c)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.i + 1) + j]
    }

    pub fn matches(&self, grid: &Grid) -> bool {
        self.i == grid.i
    }

    pub fn inv_sq(&self) -> Vec<f64> {
        self.values.iter().map(|c| 1.0 / (c * c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum SpeedPreset {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// 1 + 0.08 sin πx + 0.06 cos πy
    Smooth,
    /// `inner` on [-h,h]², `outer` elsewhere
    Piecewise {
        #[serde(default = "one")]
        inner: f64,
        #[serde(default = "half")]
        outer: f64,
        #[serde(default = "half")]
        half_width: f64,
    },
    /// evalexpr syntax in x, y and pi, e.g. `1 + 0.1*math::sin(pi*x)`
    Expression { expr: String },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}

impl SpeedPreset {
    pub fn piecewise() -> SpeedPreset {
        SpeedPreset::Piecewise { inner: 1.0, outer: 0.5, half_width: 0.5 }
    }

    pub fn name(&self) -> String {
        match self {
            SpeedPreset::Constant { value } => format!("constant {value}"),
            SpeedPreset::Smooth => "1+0.08 sin(pi x)+0.06 cos(pi y)".into(),
            SpeedPreset::Piecewise { inner, outer, half_width } => {
                format!("piecewise {inner} in [-{half_width},{half_width}]^2, {outer} outside")
            }
            SpeedPreset::Expression { expr } => expr.clone(),
        }
    }

    /// Sample on the (I+1)² lattice.
    pub fn sample(&self, i: usize) -> Result<SpeedField> {
        match self {
            SpeedPreset::Constant { value } => SpeedField::constant(i, *value),
            SpeedPreset::Smooth => SpeedField::from_fn(i, |x, y| {
                1.0 + 0.08 * (PI * x).sin() + 0.06 * (PI * y).cos()
            }),
            SpeedPreset::Piecewise { inner, outer, half_width } => {
                let h = *half_width + 1e-12;
                SpeedField::from_fn(i, |x, y| {
                    if x.abs() <= h && y.abs() <= h {
                        *inner
                    } else {
                        *outer
                    }
                })
            }
            SpeedPreset::Expression { expr } => {
                let e = Expr::parse(expr)?;
                let dx = 2.0 / i as f64;
                let mut values = Vec::with_capacity((i + 1) * (i + 1));
                for a in 0..=i {
                    for b in 0..=i {
                        values.push(e.eval(-1.0 + a as f64 * dx, -1.0 + b as f64 * dx)?);
                    }
                }
                SpeedField::from_values(i, values)
            }
        }
    }

    /// Upper bound used for the CFL rule.
    pub fn c_max_bound(&self, i: usize) -> Result<f64> {
        Ok(match self {
            SpeedPreset::Constant { value } => *value,
            SpeedPreset::Smooth => 1.14,
            SpeedPreset::Piecewise { inner, outer, .. } => inner.max(*outer),
            SpeedPreset::Expression { .. } => self.sample(i)?.c_max,
        })
    }
}

struct Expr {
    tree: Node<DefaultNumericTypes>,
}

impl Expr {
    fn parse(s: &str) -> Result<Expr> {
        let tree = evalexpr::build_operator_tree::<DefaultNumericTypes>(s)
            .map_err(|e| Error::Config(format!("speed expression '{s}': {e}")))?;
        Ok(Expr { tree })
    }

    fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (k, v) in [("x", x), ("y", y), ("pi", PI)] {
            ctx.set_value(k.into(), Value::from_float(v))
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        self.tree
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::Config(format!("speed expression: {e}")))
    }
}
