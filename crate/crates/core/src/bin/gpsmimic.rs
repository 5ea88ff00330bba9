fn main() {
    std::process::exit(gpsmimic::cli::main_with_args(std::env::args_os()));
}
