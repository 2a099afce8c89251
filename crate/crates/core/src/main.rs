fn main() {
    std::process::exit(scd::cli::run_from(std::env::args_os()));
}
