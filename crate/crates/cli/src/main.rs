fn main() {
    std::process::exit(stallwatch_cli::run(std::env::args_os()));
}
