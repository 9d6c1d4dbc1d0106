fn main() {
    std::process::exit(groundkit::cli::run_from_args(std::env::args_os()));
}
