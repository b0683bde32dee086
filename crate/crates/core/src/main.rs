fn main() {
    std::process::exit(stgms::cli::main_with_args(std::env::args_os()));
}
