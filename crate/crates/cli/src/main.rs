use clap::error::ErrorKind;
use clap::Parser;
use dlsm::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("dlsm: {e}");
        std::process::exit(e.exit_code());
    }
}
