fn main() {
    std::process::exit(deepif::cli::run(std::env::args_os()));
}
