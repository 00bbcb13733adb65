fn main() {
    std::process::exit(gaitkit::cli::main_with_args(std::env::args_os()));
}
