fn main() {
    std::process::exit(goi::cli::run(std::env::args_os()));
}
