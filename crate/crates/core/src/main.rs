fn main() {
    std::process::exit(adesens::cli::run(std::env::args_os()));
}
