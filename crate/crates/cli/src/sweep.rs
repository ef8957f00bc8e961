//! Parameter grids over the documented sensitivity knobs.

use std::collections::BTreeMap;

use serde_json::Value;
use zng_core::config::{PlatformConfig, PlatformKind, SimConfig, Topology};

use crate::Failure;

pub const KNOBS: [&str; 6] = ["high_threshold", "low_threshold", "granularity", "group_size", "topology", "registers"];

/// One knob's values in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub knob: String,
    pub values: Vec<Value>,
}

fn unknown(knob: &str) -> Failure {
    Failure::usage(format!("unknown sweep knob `{knob}`; valid knobs: {}", KNOBS.join(", ")))
}

/// Parses a JSON object `{knob: [values...]}`.
pub fn parse_grid(text: &str) -> Result<Vec<Axis>, Failure> {
    let map: BTreeMap<String, Value> = serde_json::from_str(text).map_err(|e| Failure::usage(format!("grid file: {e}")))?;
    map.into_iter()
        .map(|(knob, v)| {
            let values = match v {
                Value::Array(a) => a,
                other => vec![other],
            };
            axis(knob, values)
        })
        .collect()
}

/// Parses `knob=v1,v2,...`.
pub fn parse_set(arg: &str) -> Result<Axis, Failure> {
    let (knob, list) = arg.split_once('=').ok_or_else(|| Failure::usage(format!("`{arg}` is not knob=values")))?;
    let values = list
        .split(',')
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
        .collect();
    axis(knob.to_string(), values)
}

fn axis(knob: String, values: Vec<Value>) -> Result<Axis, Failure> {
    if !KNOBS.contains(&knob.as_str()) {
        return Err(unknown(&knob));
    }
    if values.is_empty() {
        return Err(Failure::usage(format!("knob `{knob}` has no values")));
    }
    Ok(Axis { knob, values })
}

/// Cartesian product, first axis slowest.
pub fn points(axes: &[Axis]) -> Vec<Vec<(String, Value)>> {
    let mut out = vec![Vec::new()];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                a.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((a.knob.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    out
}

fn number(knob: &str, v: &Value) -> Result<f64, Failure> {
    v.as_f64().ok_or_else(|| Failure::usage(format!("knob `{knob}` needs a number, got {v}")))
}

fn count(knob: &str, v: &Value) -> Result<u32, Failure> {
    v.as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| Failure::usage(format!("knob `{knob}` needs a non-negative integer, got {v}")))
}

/// Builds the platform config for one grid point.
pub fn configure(kind: PlatformKind, base: &SimConfig, point: &[(String, Value)]) -> Result<PlatformConfig, Failure> {
    let mut sim = base.clone();
    for (knob, v) in point {
        match knob.as_str() {
            "high_threshold" => sim.prefetch.high_threshold = number(knob, v)?,
            "low_threshold" => sim.prefetch.low_threshold = number(knob, v)?,
            "granularity" => sim.prefetch.initial_granularity = count(knob, v)?,
            "group_size" => sim.ftl.group_size = count(knob, v)?,
            "topology" | "registers" => {}
            other => return Err(unknown(other)),
        }
    }
    let mut cfg = PlatformConfig::new(kind, sim);
    for (knob, v) in point {
        match knob.as_str() {
            "topology" => {
                let name = v.as_str().ok_or_else(|| Failure::usage(format!("knob `topology` needs a name, got {v}")))?;
                cfg.features.topology = name.parse::<Topology>().map_err(Failure::from_sim)?;
            }
            "registers" => cfg.features.regs_per_plane = count(knob, v)?,
            _ => {}
        }
    }
    cfg.validate().map_err(Failure::from_sim)?;
    Ok(cfg)
}

pub fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_product_order() {
        let axes = vec![parse_set("high_threshold=0.1,0.3").unwrap(), parse_set("topology=nif,fcnet").unwrap()];
        let pts = points(&axes);
        assert_eq!(pts.len(), 4);
        assert_eq!(render(&pts[1][1].1), "fcnet");
        assert_eq!(pts[2][0].1, serde_json::json!(0.3));
    }

    #[test]
    fn knobs_reach_the_config() {
        let pt = vec![
            ("group_size".to_string(), serde_json::json!(4)),
            ("topology".to_string(), serde_json::json!("swnet")),
            ("registers".to_string(), serde_json::json!(4)),
        ];
        let cfg = configure(PlatformKind::Zng, &SimConfig::table_defaults(), &pt).unwrap();
        assert_eq!(cfg.sim.ftl.group_size, 4);
        assert_eq!(cfg.features.topology, Topology::Swnet);
        assert_eq!(cfg.features.regs_per_plane, 4);
    }

    #[test]
    fn unknown_knob_is_rejected() {
        assert!(matches!(parse_set("voltage=1"), Err(Failure::Usage(_))));
    }
}
