fn main() {
    std::process::exit(l2aug::cli::main_with_args(std::env::args_os()));
}
