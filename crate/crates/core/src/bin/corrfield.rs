fn main() {
    std::process::exit(corrfield::cli::main_with_args(std::env::args_os()));
}
