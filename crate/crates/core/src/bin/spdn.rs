fn main() {
    std::process::exit(spdn::cli::run(std::env::args_os()));
}
