use clap::Parser;

use deep_gep::cli::{exit_code, run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Unknown ops and malformed flags are config errors: exit 1.
            // Help/version requests are not errors.
            eprint!("{e}");
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.threads != "auto" {
        let n: usize = match cli.threads.parse() {
            Ok(n) if n > 0 => n,
            _ => {
                eprintln!("config error: --threads must be 'auto' or a positive integer");
                std::process::exit(1);
            }
        };
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("config error: {e}");
            std::process::exit(1);
        }
    }
    match run(&cli) {
        Ok(record) => {
            if record.convergence_flagged && cli.strict {
                eprintln!("convergence flag raised (strict mode)");
                std::process::exit(4);
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(exit_code(&e));
        }
    }
}
