use clap::Parser;
use promptcl::ErrorClass;

// Exit codes: 2 configuration, 3 data, 4 numeric. clap uses 2 for usage
// errors, which are configuration errors too.
fn main() {
    let cli = promptcl_cli::args::Cli::parse();
    if let Err(err) = promptcl_cli::run(cli) {
        eprintln!("error: {err}");
        let code = match err.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        };
        std::process::exit(code);
    }
}
