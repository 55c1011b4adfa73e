fn main() {
    std::process::exit(glgnn::cli::main_with_args(std::env::args_os()));
}
