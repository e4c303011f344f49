fn main() {
    std::process::exit(patternnet_cli::main_with_args(std::env::args_os()));
}
