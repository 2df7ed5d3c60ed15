fn main() {
    std::process::exit(softagg::cli::main_with_args(std::env::args_os()));
}
