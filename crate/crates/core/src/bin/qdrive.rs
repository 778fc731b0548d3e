fn main() {
    std::process::exit(qdrive::cli::main_with_args(std::env::args_os()));
}
