//! Command-line front end for the streaming multi-talker transcription
//! toolkit: corpus simulation, model training, decoding, speaker
//! attribution, metric evaluation, and the all-in-one `run` pipeline.

mod commands;
mod config;
mod pipeline;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tsot", version, about = "Streaming multi-talker transcription toolkit")]
struct Cli {
    /// Emit machine-readable JSON instead of text where supported.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a synthetic overlapping-speech corpus.
    Simulate(commands::SimulateArgs),
    /// Trains the toy streaming recognizer on a corpus.
    AsrTrain(commands::AsrTrainArgs),
    /// Trains the speaker embedding module on a corpus.
    SpkTrain(commands::SpkTrainArgs),
    /// Beam-decodes a corpus with a trained recognizer.
    #[command(alias = "asr-decode")]
    Decode(commands::DecodeArgs),
    /// Assigns a speaker to every word of a serialized stream.
    Attribute(commands::AttributeArgs),
    /// Scores a hypothesis transcript against a reference.
    Eval(commands::EvalArgs),
    /// Runs the full simulate/train/decode/attribute/evaluate pipeline.
    Run(commands::RunArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::AsrTrain(args) => commands::asr_train(args),
        Command::SpkTrain(args) => commands::spk_train(args),
        Command::Decode(args) => commands::decode(args),
        Command::Attribute(args) => commands::attribute(args),
        Command::Eval(args) => commands::eval(args).map(|value| {
            if cli.json {
                serde_json::to_string_pretty(&value).expect("report serializes")
            } else {
                commands::render_eval(&value)
            }
        }),
        Command::Run(args) => commands::run(args, cli.json),
    };
    match result {
        Ok(output) => {
            if !output.is_empty() {
                println!("{output}");
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
