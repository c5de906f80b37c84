fn main() {
    std::process::exit(specfit::cli::run(std::env::args_os()));
}
