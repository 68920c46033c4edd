use std::process::ExitCode;

fn main() -> ExitCode {
    edmik::cli::main()
}
