fn main() {
    std::process::exit(structured_ngd::cli::main_with_args(std::env::args_os()));
}
