fn main() {
    std::process::exit(hmp_core::cli::run(std::env::args_os()));
}
