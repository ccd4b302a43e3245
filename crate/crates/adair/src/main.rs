fn main() {
    std::process::exit(adair::cli::main_with(std::env::args_os()));
}
