fn main() {
    std::process::exit(gyromag_cli::main_with_args(std::env::args_os()));
}
