fn main() {
    std::process::exit(occfluct::cli::main_with_args(std::env::args_os()));
}
