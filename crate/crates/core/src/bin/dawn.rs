fn main() {
    std::process::exit(dawn::cli::run(std::env::args_os()));
}
