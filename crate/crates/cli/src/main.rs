fn main() {
    std::process::exit(margins_cli::run(std::env::args_os()));
}
