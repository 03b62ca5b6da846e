use std::path::Path;

use serde_json::Value;

use dualcse::encoder::{Architecture, Backbone};
use dualcse::objective::{LossVariant, Temperature};
use dualcse::trainer::TrainConfig;

use crate::args::TrainArgs;
use crate::failure::{CliResult, Failure};

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn load_file(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
}

/// Defaults, then the config file, then flags.
pub fn resolve(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut value = serde_json::to_value(TrainConfig::default()).expect("config serializes");
    if let Some(path) = &args.config {
        let patch = load_file(path)?;
        if !patch.is_object() {
            return Err(Failure::config(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    let mut config: TrainConfig =
        serde_json::from_value(value).map_err(|e| Failure::config(format!("invalid config: {e}")))?;

    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(arch) = &args.arch {
        config.encoder.architecture = arch.parse::<Architecture>()?;
    }
    if let Some(variant) = &args.variant {
        config.variant = variant.parse::<LossVariant>()?;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(tau) = args.tau {
        config.tau = Temperature::new(tau)?;
    }
    if let Some(e) = args.eval_every {
        config.eval_every = e;
    }
    if let Some(locator) = &args.backbone {
        config.encoder.backbone = Backbone::External {
            locator: locator.clone(),
        };
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_deep() {
        let mut base = json!({"a": 1, "enc": {"x": 1, "y": 2}});
        merge(&mut base, json!({"enc": {"y": 5}, "b": true}));
        assert_eq!(base, json!({"a": 1, "enc": {"x": 1, "y": 5}, "b": true}));
    }
}
