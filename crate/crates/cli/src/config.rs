//! Effective configuration: command-line flags over files over built-in defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use tempogs_bench::SceneSpec;
use tempogs_core::optimizer::TrainConfig;

use crate::args::{SceneArgs, TrainArgs};

fn read_text(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))
}

pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = read_text(path, "config")?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// File (or defaults) with the flag overrides applied, validated.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => read_train_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.literal_loss {
        config.literal_loss = true;
    }
    config.validate()?;
    Ok(config)
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = read_text(path, "scene description")?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let spec = if is_toml {
        toml::from_str(&text).with_context(|| format!("invalid scene description {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("invalid scene description {}", path.display()))?
    };
    Ok(spec)
}

pub fn scene_spec(args: &SceneArgs, seed: Option<u64>) -> Result<SceneSpec> {
    let mut spec = match &args.spec {
        Some(path) => read_scene_spec(path)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(n) = args.views {
        if n == 0 {
            bail!("--views must be at least 1");
        }
        spec.views.tn_train = n;
    }
    if let Some(layout) = args.layout {
        spec.views.layout = layout;
    }
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flags_override_file_over_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seed = 5\nmax_iterations = 123\ntau = 0.7").unwrap();
        let from_file = train_config(&TrainArgs { config: Some(f.path().into()), ..Default::default() }).unwrap();
        assert_eq!((from_file.seed, from_file.max_iterations, from_file.tau), (5, 123, 0.7));
        assert_eq!(from_file.tau_iter, TrainConfig::default().tau_iter);
        let flagged =
            train_config(&TrainArgs { config: Some(f.path().into()), seed: Some(9), literal_loss: true }).unwrap();
        assert_eq!((flagged.seed, flagged.max_iterations, flagged.literal_loss), (9, 123, true));
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "no_such_field = 1").unwrap();
        assert!(train_config(&TrainArgs { config: Some(f.path().into()), ..Default::default() }).is_err());
        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "tau = 0.95").unwrap();
        assert!(train_config(&TrainArgs { config: Some(g.path().into()), ..Default::default() }).is_err());
    }

    #[test]
    fn scene_overrides_apply() {
        let args = SceneArgs { spec: None, views: Some(4), layout: Some(tempogs_bench::Layout::Concentrated) };
        let spec = scene_spec(&args, Some(3)).unwrap();
        assert_eq!((spec.seed, spec.views.tn_train, spec.views.layout), (3, 4, tempogs_bench::Layout::Concentrated));
        let bad = SceneArgs { views: Some(0), ..args };
        assert!(scene_spec(&bad, None).is_err());
    }

    #[test]
    fn missing_config_names_the_file() {
        let err = train_config(&TrainArgs { config: Some("/nonexistent/cfg.toml".into()), ..Default::default() })
            .unwrap_err();
        assert!(format!("{err:#}").contains("cfg.toml"));
    }
}
