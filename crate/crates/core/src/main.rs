use std::process::ExitCode;

fn main() -> ExitCode {
    texgen::cli::main()
}
