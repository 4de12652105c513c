//! Layered settings: command-line flags over a JSON config file over
//! built-in defaults. Each layer is a JSON object and later layers replace
//! keys of earlier ones, so the effective config can be echoed verbatim.

use crate::failure::{Failure, USAGE};
use hfbm::HfBmModel;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use std::path::Path;

/// Reads a config file. A manifest written by a previous run is accepted as
/// well: its `config` member is used.
pub fn load_config(path: Option<&Path>) -> Result<Map<String, Value>, Failure> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Failure::new(USAGE, format!("{}: {e}", path.display())))?;
    match value {
        Value::Object(mut obj) => match obj.remove("config") {
            Some(Value::Object(inner)) if obj.contains_key("command") => Ok(inner),
            Some(other) => {
                obj.insert("config".into(), other);
                Ok(obj)
            }
            None => Ok(obj),
        },
        _ => Err(Failure::new(USAGE, format!("{}: config must be a JSON object", path.display()))),
    }
}

/// Applies `layer` on top of `base`, key by key.
pub fn overlay(base: &mut Map<String, Value>, layer: impl Serialize) -> Result<(), Failure> {
    match serde_json::to_value(layer).map_err(|e| Failure::new(USAGE, e.to_string()))? {
        Value::Object(obj) => {
            for (k, v) in obj {
                if !v.is_null() {
                    base.insert(k, v);
                }
            }
            Ok(())
        }
        Value::Null => Ok(()),
        _ => Err(Failure::new(USAGE, "settings layer is not an object".into())),
    }
}

pub fn resolve<T: DeserializeOwned>(merged: Map<String, Value>) -> Result<T, Failure> {
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::new(USAGE, format!("invalid settings: {e}")))
}

/// `a11,a22,delta,rho` as a bivariate ideal model.
pub fn parse_params(text: &str) -> Result<HfBmModel, Failure> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if v.len() == 4 => Ok(HfBmModel::bivariate(v[0], v[1], v[2], v[3])),
        _ => Err(Failure::new(USAGE, format!("--params expects alpha11,alpha22,delta,rho; got {text:?}"))),
    }
}

/// Model from a file, inline parameters or the config layer, in that order.
pub fn resolve_model(
    file: Option<&Path>,
    params: Option<&str>,
    config: &mut Map<String, Value>,
) -> Result<HfBmModel, Failure> {
    let from_config = config.remove("model");
    let model = if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        HfBmModel::from_json(&text)?
    } else if let Some(p) = params {
        parse_params(p)?
    } else if let Some(v) = from_config {
        HfBmModel::from_json(&v.to_string())?
    } else {
        return Err(Failure::new(USAGE, "no model given (use --model FILE or --params a11,a22,delta,rho)".into()));
    };
    hfbm::validate_model(&model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_override_config() {
        let mut base = json!({"n": 512, "seed": 3}).as_object().unwrap().clone();
        overlay(&mut base, json!({"seed": 9, "format": null})).unwrap();
        assert_eq!(Value::Object(base), json!({"n": 512, "seed": 9}));
    }

    #[test]
    fn params_need_four_numbers() {
        assert!(parse_params("0.4,0.8,0,0.6").is_ok());
        assert_eq!(parse_params("0.4,0.8").unwrap_err().code, USAGE);
        assert!(parse_params("a,b,c,d").is_err());
    }
}
