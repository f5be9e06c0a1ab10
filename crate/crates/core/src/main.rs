fn main() {
    std::process::exit(svsp::cli::run(std::env::args_os()));
}
