fn main() {
    std::process::exit(sanitone_cli::run(std::env::args_os()));
}
