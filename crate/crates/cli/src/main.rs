fn main() {
    std::process::exit(predsafe_cli::run(std::env::args_os()));
}
