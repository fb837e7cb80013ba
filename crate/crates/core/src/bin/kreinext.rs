fn main() {
    std::process::exit(kreinext::cli::main_with_args(std::env::args_os()));
}
