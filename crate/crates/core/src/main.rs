fn main() {
    std::process::exit(qrpsim::cli::run(std::env::args_os()));
}
