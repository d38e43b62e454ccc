//! Command-line flags named after config keys. A flag given on the command
//! line replaces the same key from `--config`.

use std::path::Path;

use clap::Args;
use dpmood::config::Config;

macro_rules! override_flags {
    ($(#[$meta:meta])* $name:ident { $($field:ident = $key:literal | $alias:literal),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Args, Debug, Clone, Default)]
        pub struct $name {
            $(
                #[arg(long = $key, visible_alias = $alias, value_name = "VALUE", help_heading = "Config overrides")]
                pub $field: Option<String>,
            )*
        }

        impl $name {
            pub fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(($key, v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

override_flags!(
    /// Training keys.
    TrainFlags {
        learning_rate = "learning_rate" | "learning-rate",
        batch_size = "batch_size" | "batch-size",
        epochs = "epochs" | "n-epochs",
        dropout = "dropout" | "dropout-ratio",
        min_seq = "min_seq" | "min-seq",
        max_seq = "max_seq" | "max-seq",
        gru_hidden = "gru_hidden" | "gru-hidden",
        seed = "seed" | "random-seed",
        train_fraction = "train_fraction" | "train-fraction",
        target = "target" | "label",
        cohort = "cohort" | "subjects",
        rho = "rho" | "rmsprop-rho",
        rms_eps = "rms_eps" | "rms-eps",
        record_time = "record_time" | "record-time",
    }
);

override_flags!(
    /// Generator keys.
    GenFlags {
        n_control = "n_control" | "n-control",
        n_bipolar1 = "n_bipolar1" | "n-bipolar1",
        n_bipolar2 = "n_bipolar2" | "n-bipolar2",
        sessions_per_subject = "sessions_per_subject" | "sessions-per-subject",
        weeks = "weeks" | "n-weeks",
        noise_sigma = "noise_sigma" | "noise-sigma",
        seed = "seed" | "random-seed",
        min_keys = "min_keys" | "min-keys",
        max_keys = "max_keys" | "max-keys",
        mean_extra_keys = "mean_extra_keys" | "mean-extra-keys",
        mean_gap_ms = "mean_gap_ms" | "mean-gap-ms",
        accel_period_ms = "accel_period_ms" | "accel-period-ms",
        accel_jitter_ms = "accel_jitter_ms" | "accel-jitter-ms",
        duration_base_ms = "duration_base_ms" | "duration-base-ms",
        duration_amp_ms = "duration_amp_ms" | "duration-amp-ms",
        ax_per_level = "ax_per_level" | "ax-per-level",
        start_date = "start_date" | "start-date",
    }
);

/// Load `--config` (if any), apply the command-line pairs on top and reject
/// keys outside `known`.
pub fn resolve(path: Option<&Path>, pairs: &[(&str, &str)], known: &[&str]) -> dpmood::Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    for (k, v) in pairs {
        cfg.set(k, *v)?;
    }
    let unknown = cfg.unknown_keys(known);
    if !unknown.is_empty() {
        return Err(dpmood::Error::Config(format!(
            "unknown key(s) {}; expected one of {}",
            unknown.join(", "),
            known.join(", ")
        )));
    }
    Ok(cfg)
}
