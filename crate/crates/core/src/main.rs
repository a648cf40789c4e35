fn main() {
    std::process::exit(wbanet::cli::run_from(std::env::args_os()));
}
