use clap::error::ErrorKind;
use clap::Parser;

fn main() {
    // clap exits with 2 on usage errors, which here means a probe violation.
    let cli = match bmdp_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = bmdp_cli::configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    std::process::exit(bmdp_cli::execute(&cli));
}
