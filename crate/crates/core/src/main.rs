fn main() {
    std::process::exit(nvpair::cli::run(std::env::args_os()));
}
