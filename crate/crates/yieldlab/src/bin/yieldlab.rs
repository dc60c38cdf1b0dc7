fn main() {
    std::process::exit(yieldlab::cli::main_with_args(std::env::args_os()));
}
