fn main() {
    std::process::exit(allab::cli::main_with_args(std::env::args_os()));
}
