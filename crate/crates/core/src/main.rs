fn main() {
    std::process::exit(permpi::cli::run(std::env::args_os()));
}
