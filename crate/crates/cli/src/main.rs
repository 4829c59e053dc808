use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use o3dsg::config::PipelineConfig;
use o3dsg::pipeline;
use o3dsg::repl::Session;
use o3dsg::Error;

#[derive(Parser, Debug)]
#[command(name = "o3dsg", version, about = "Open-vocabulary 3D scene graph pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Pipeline config (JSON); relative paths inside resolve from its directory.
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set train.epochs=50`. Values parse as JSON, else string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic fixture and a ready-to-run pipeline.json.
    GenFixture(Common),
    /// Choose frames per object and per object pair.
    SelectFrames(Common),
    /// Aggregate 2D features over the selected frames into training targets.
    Extract(Common),
    /// Distil the graph network onto the aggregated targets.
    Train(Common),
    /// Predict open-vocabulary scene graphs for the inference scenes.
    Infer(Common),
    /// Score predicted graphs against ground truth.
    Eval(Common),
    /// Interactive queries over one inferred scene.
    Repl(Common),
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = match &cli.command {
        Command::GenFixture(c)
        | Command::SelectFrames(c)
        | Command::Extract(c)
        | Command::Train(c)
        | Command::Infer(c)
        | Command::Eval(c)
        | Command::Repl(c) => c,
    };
    let cfg = PipelineConfig::load(&common.config, &common.overrides)?;
    match cli.command {
        Command::GenFixture(_) => {
            let (summary, config) = pipeline::gen_fixture(&cfg)?;
            println!(
                "wrote {} training scenes, {} held-out scenes, config {}",
                summary.train.len(),
                summary.heldout.len(),
                config.display()
            );
        }
        Command::SelectFrames(_) => report_paths(&pipeline::select_frames(&cfg)?),
        Command::Extract(_) => report_paths(&pipeline::extract(&cfg)?),
        Command::Train(_) => {
            let summary = pipeline::train(&cfg)?;
            if let Some(last) = summary.epochs.last() {
                println!("epoch {} loss {:.6}", last.epoch + 1, last.loss);
            }
            println!("final loss {:.6}", summary.final_loss);
            println!("checkpoint {}", summary.checkpoint.display());
        }
        Command::Infer(_) => report_paths(&pipeline::infer(&cfg)?),
        Command::Eval(_) => {
            let report = pipeline::evaluate(&cfg)?;
            println!("{}", pipeline::report_summary(&report));
        }
        Command::Repl(_) => repl(&cfg)?,
    }
    Ok(())
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn repl(cfg: &PipelineConfig) -> Result<(), Error> {
    let session = Session::open(cfg)?;
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    let interactive = std::io::IsTerminal::is_terminal(&stdin);
    if interactive {
        eprintln!("scene {} ({} nodes, {} edges); `help` lists commands", session.scene, session.graph.nodes.len(), session.graph.edges.len());
    }
    loop {
        if interactive {
            eprint!("o3dsg> ");
        }
        let mut line = String::new();
        match stdin.lock().read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(Error::data("stdin", e)),
        }
        let trimmed = line.trim();
        if matches!(trimmed, "quit" | "exit") {
            break;
        }
        match session.execute(trimmed) {
            Ok(Some(lines)) => {
                for l in lines {
                    let _ = writeln!(out, "{l}");
                }
            }
            Ok(None) => {}
            Err(e) => {
                let _ = writeln!(out, "error\t{e}");
            }
        }
        let _ = out.flush();
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
