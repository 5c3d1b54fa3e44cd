fn main() {
    std::process::exit(cmfq::cli::run_from(std::env::args_os()));
}
