use clap::Parser;

use avsi_cli::{run, Cli, CliError};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", CliError::usage(first.trim_start_matches("error: ")).json_line());
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        eprintln!("{}", e.json_line());
        std::process::exit(e.code);
    }
}
