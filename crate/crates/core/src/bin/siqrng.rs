fn main() {
    std::process::exit(siqrng::cli::main_with_args(std::env::args_os()));
}
