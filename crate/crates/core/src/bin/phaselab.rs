fn main() {
    std::process::exit(phaselab::cli::main_with_args(std::env::args_os()));
}
