use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use metatrack::keyvalue::KeyValues;
use metatrack::{Error, Result};
use metatrack_cli::{
    cmd_baselinetrain, cmd_eval, cmd_gap, cmd_gen, cmd_metatrain, cmd_track, error_line, RunConfig,
};

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .required(true)
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn cli() -> Command {
    let mut cmd = Command::new("metatrack")
        .about("Meta-learned instance detectors for single-object tracking")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .value_parser(clap::value_parser!(PathBuf))
                .help("key=value configuration file"),
        );
    // every configuration key doubles as a flag
    for key in RunConfig::keys() {
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .global(true)
                .help_heading("Configuration"),
        );
    }
    cmd.subcommand(Command::new("gen").about("Generate a synthetic dataset into --out"))
        .subcommand(
            Command::new("metatrain")
                .about("Meta-train a detector on a dataset")
                .arg(path_arg("dataset", "dataset directory"))
                .arg(
                    Arg::new("resume")
                        .long("resume")
                        .value_name("PATH")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("epoch checkpoint to continue from"),
                ),
        )
        .subcommand(
            Command::new("baselinetrain")
                .about("Train the same detector with plain supervised Adam")
                .arg(path_arg("dataset", "dataset directory")),
        )
        .subcommand(
            Command::new("track")
                .about("Track every sequence of a dataset (or one sequence)")
                .arg(path_arg("checkpoint", "detector checkpoint"))
                .arg(path_arg("data", "dataset or sequence directory"))
                .arg(
                    Arg::new("no-online-update")
                        .long("no-online-update")
                        .action(ArgAction::SetTrue)
                        .help("disable online updating (online-steps=0)"),
                ),
        )
        .subcommand(
            Command::new("eval")
                .about("Score result files against ground truth")
                .arg(path_arg("results", "directory of result files"))
                .arg(path_arg("dataset", "dataset directory")),
        )
        .subcommand(
            Command::new("gap")
                .about(
                    "Compare adaptation of meta-trained and baseline detectors on held-out tasks",
                )
                .arg(path_arg("meta", "meta-trained checkpoint"))
                .arg(path_arg("baseline", "baseline checkpoint"))
                .arg(path_arg("dataset", "held-out dataset directory"))
                .arg(
                    Arg::new("tasks")
                        .long("tasks")
                        .default_value("50")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(
                    Arg::new("steps")
                        .long("steps")
                        .default_value("5")
                        .value_parser(clap::value_parser!(usize)),
                ),
        )
}

fn load_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut flags = KeyValues::new();
    for key in RunConfig::keys() {
        if let Some(v) = m.get_one::<String>(key) {
            flags.set(key, v);
        }
    }
    RunConfig::load(m.get_one::<PathBuf>("config").map(PathBuf::as_path), &flags)
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    m.get_one::<PathBuf>(name).expect("required argument")
}

fn run(matches: &ArgMatches) -> Result<()> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let mut cfg = load_config(sub)?;
    let mut progress = |line: &str| eprintln!("{line}");
    let out = cfg.out.clone();
    match name {
        "gen" => {
            let n = cmd_gen(&cfg, &out)?;
            println!("sequences={n}");
        }
        "metatrain" => {
            let resume = sub.get_one::<PathBuf>("resume").map(PathBuf::as_path);
            let s = cmd_metatrain(&cfg, path(sub, "dataset"), &out, resume, &mut progress)?;
            print!("{}", s.to_kv().to_text());
        }
        "baselinetrain" => {
            let losses = cmd_baselinetrain(&cfg, path(sub, "dataset"), &out, &mut progress)?;
            println!("iterations={}", losses.len());
            if let Some(l) = losses.last() {
                println!("final_loss={l}");
            }
        }
        "track" => {
            if sub.get_flag("no-online-update") {
                cfg.tracker.online_steps = 0;
            }
            let r = cmd_track(
                &cfg,
                path(sub, "checkpoint"),
                path(sub, "data"),
                &out,
                &mut progress,
            )?;
            println!("sequences={}", r.len());
        }
        "eval" => {
            let report = cmd_eval(path(sub, "results"), path(sub, "dataset"), &out)?;
            print!("{}", report.to_text());
        }
        "gap" => {
            let tasks = *sub.get_one::<usize>("tasks").expect("defaulted");
            let steps = *sub.get_one::<usize>("steps").expect("defaulted");
            let report = cmd_gap(
                &cfg,
                path(sub, "meta"),
                path(sub, "baseline"),
                path(sub, "dataset"),
                &out,
                tasks,
                steps,
            )?;
            print!("{}", report.metrics());
        }
        other => return Err(Error::Invalid(format!("unknown command {other}"))),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error kind=usage message={first}");
            return ExitCode::from(2);
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
