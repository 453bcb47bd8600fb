use clap::Parser;

fn main() -> std::process::ExitCode {
    scaffold_core::cli::main(scaffold_core::cli::Cli::parse())
}
