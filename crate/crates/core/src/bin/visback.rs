fn main() {
    std::process::exit(visback::cli::run(std::env::args_os()));
}
