fn main() {
    std::process::exit(replayroi_cli::run(std::env::args_os()));
}
