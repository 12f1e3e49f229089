fn main() {
    std::process::exit(oqr_cli::main_with_args(std::env::args_os()));
}
