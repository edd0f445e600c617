//! The `dastkit` command line.
//!
//! Every command reads one resolved [`RunConfig`]: built-in defaults, then
//! the `--config` file, then `DASTKIT_*` environment variables, then dotted
//! flags such as `--train.max_steps 200` or `--model.enc_hidden=64`. The
//! resolved config is written into each output directory.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_prep, cmd_pretrain_cls, cmd_synth, cmd_train, cmd_transfer, ClassifierRole,
};
pub use config::{
    env_overrides, parse_value, set_dotted, DataConfig, EvalConfig, ModelSection, PathsConfig,
    RunConfig, ENV_PREFIX,
};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "dastkit",
    version,
    about = "Domain-adaptive text style transfer",
    after_help = "Any config key can be set with a dotted flag, e.g. --train.max_steps 200, \
                  or with DASTKIT_TRAIN__MAX_STEPS=200."
)]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// replaces every section's seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// output directory of the command
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-domain corpus.
    Synth,
    /// Build the vocabulary and report split sizes.
    Prep,
    /// Pretrain and freeze a classifier.
    PretrainCls {
        #[arg(value_enum)]
        which: ClassifierRole,
    },
    /// Train a transfer model.
    Train {
        /// baseline, dast-c, dast or finetune, optionally with +s2s
        #[arg(long)]
        regime: Option<String>,
    },
    /// Transfer the sentences of a file to another style.
    Transfer {
        input: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Evaluate a checkpoint on the target test split.
    Eval,
}

/// Pulls `--a.b value` and `--a.b=value` pairs out of `args`.
pub fn split_dotted_flags(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut dotted = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| {
            let name = f.split('=').next().unwrap_or_default();
            name.contains('.')
        }) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => dotted.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("--{flag} needs a value")))?;
                dotted.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, dotted))
}

/// Parses `args` (without the program name), resolves the configuration
/// against `env`, and runs the command.
pub fn run(args: Vec<String>, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let (rest, mut flags) = split_dotted_flags(args)?;
    let argv = std::iter::once(OsString::from("dastkit")).chain(rest.into_iter().map(OsString::from));
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.render().to_string())),
    };
    if let Some(seed) = cli.seed {
        flags.push(("seed".into(), seed.to_string()));
    }
    if let Command::Train { regime: Some(r) } = &cli.command {
        flags.push(("train.regime".into(), r.clone()));
    }
    if let Some(out) = &cli.out {
        if let Some(key) = output_key(&cli.command) {
            flags.push((key, toml_string(out)));
        }
    }
    let env = env_overrides(env);
    let config = RunConfig::resolve(cli.config.as_deref(), &env, &flags)?;
    let p = &config.paths;
    match &cli.command {
        Command::Synth => cmd_synth(&config, RunConfig::path(&p.data)),
        Command::Prep => cmd_prep(&config, RunConfig::path(&p.prep)),
        Command::PretrainCls { which } => {
            let dir = match which {
                ClassifierRole::StyleSource => &p.style_source_classifier,
                ClassifierRole::StyleTarget => &p.style_target_classifier,
                ClassifierRole::Domain => &p.domain_classifier,
                ClassifierRole::EvalStyle => &p.eval_style_classifier,
            };
            cmd_pretrain_cls(&config, *which, RunConfig::path(dir))
        }
        Command::Train { .. } => cmd_train(&config, RunConfig::path(&p.checkpoint)),
        Command::Transfer { input, from, to } => {
            let out = cli.out.clone().unwrap_or_else(|| config.workdir.join("transfer"));
            cmd_transfer(&config, input, from, to, &out).map(|_| ())
        }
        Command::Eval => {
            let out = cli.out.clone().unwrap_or_else(|| {
                config.workdir.join("eval").join(config.train.regime.to_string())
            });
            cmd_eval(&config, &out).map(|_| ())
        }
    }
}

/// The config key naming a command's output, so `--out` is reflected in
/// the echoed configuration.
fn output_key(command: &Command) -> Option<String> {
    let key = match command {
        Command::Synth => "paths.data",
        Command::Prep => "paths.prep",
        Command::PretrainCls { which } => match which {
            ClassifierRole::StyleSource => "paths.style_source_classifier",
            ClassifierRole::StyleTarget => "paths.style_target_classifier",
            ClassifierRole::Domain => "paths.domain_classifier",
            ClassifierRole::EvalStyle => "paths.eval_style_classifier",
        },
        Command::Train { .. } => "paths.checkpoint",
        Command::Transfer { .. } | Command::Eval => return None,
    };
    Some(key.to_string())
}

fn toml_string(path: &std::path::Path) -> String {
    toml::Value::String(path.to_string_lossy().into_owned()).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn dotted_flags_are_separated_from_clap_flags() {
        let (rest, dotted) =
            split_dotted_flags(args("train --out runs/a.b --train.max_steps 5 --model.embed_dim=8"))
                .unwrap();
        assert_eq!(rest, args("train --out runs/a.b"));
        assert_eq!(
            dotted,
            vec![
                ("train.max_steps".to_string(), "5".to_string()),
                ("model.embed_dim".to_string(), "8".to_string())
            ]
        );
    }

    #[test]
    fn dangling_dotted_flag_is_an_error() {
        assert!(matches!(split_dotted_flags(args("train --train.seed")), Err(Error::Config(_))));
    }
}
