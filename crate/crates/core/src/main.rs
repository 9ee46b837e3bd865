fn main() {
    std::process::exit(brc::cli::run(std::env::args_os()));
}
