fn main() {
    std::process::exit(sosm::cli::main_with_args(std::env::args_os().collect()));
}
