mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use sbs_core::bci::BciError;
use sbs_core::ingest::IngestError;
use sbs_core::inverse::InverseError;
use sbs_core::simulate::SimError;
use sbs_core::PipelineError;

use args::{Cli, Command, ModelCommand};
use commands::{Report, UsageError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SBS_LOG", "warn")).init();
    let cli = Cli::parse();
    let (json, result) = match &cli.command {
        Command::Sim(a) => (a.json, commands::sim(a)),
        Command::Record(a) => (a.json, commands::record(a)),
        Command::Replay(a) => (a.json, commands::replay(a)),
        Command::Reconstruct(a) => (a.json, commands::reconstruct(a)),
        Command::BciTrain(a) => (a.json, commands::bci_train(a)),
        Command::BciEval(a) => (a.json, commands::bci_eval(a)),
        Command::TimingReport(a) => (a.json, commands::timing_report(a)),
        Command::Rerun(a) => (a.json, commands::rerun(a)),
        Command::Model(ModelCommand::Export(a)) => (a.json, commands::model_export(a)),
    };
    match result {
        Ok(report) => {
            emit(&report, json);
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn emit(report: &Report, json: bool) {
    let mut out = std::io::stdout().lock();
    let _ = if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report.json).unwrap_or_default())
    } else {
        write!(out, "{}", report.text)
    };
}

/// 2 for problems with the invocation or configuration, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<UsageError>()
            || e.downcast_ref::<PipelineError>().is_some_and(pipeline_usage)
            || e.downcast_ref::<InverseError>().is_some_and(|e| matches!(e, InverseError::UnknownRoi(_)))
            || e.downcast_ref::<SimError>().is_some_and(sim_usage)
            || e.downcast_ref::<IngestError>().is_some_and(|e| matches!(e, IngestError::InvalidSource(_)))
            || e.downcast_ref::<BciError>().is_some_and(|e| matches!(e, BciError::InvalidConfig(_)))
    });
    if usage {
        2
    } else {
        1
    }
}

fn pipeline_usage(e: &PipelineError) -> bool {
    match e {
        PipelineError::Sim(s) => sim_usage(s),
        PipelineError::Ingest(IngestError::InvalidSource(_)) => true,
        other => other.is_config(),
    }
}

fn sim_usage(e: &SimError) -> bool {
    matches!(e, SimError::UnknownScenario(_) | SimError::InvalidScenario(_))
}
