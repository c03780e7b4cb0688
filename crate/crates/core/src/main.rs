fn main() {
    std::process::exit(pseudocam::cli::main_with_args(std::env::args_os().collect()));
}
