fn main() {
    std::process::exit(sfa_core::cli::main_with_args(std::env::args_os()));
}
