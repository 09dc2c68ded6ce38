fn main() {
    std::process::exit(fgdvi::cli::run(std::env::args_os()));
}
