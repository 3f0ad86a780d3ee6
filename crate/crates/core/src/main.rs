fn main() {
    std::process::exit(ragscore::harness::cli::run(std::env::args_os()));
}
