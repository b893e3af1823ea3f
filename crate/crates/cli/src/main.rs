fn main() {
    std::process::exit(tbooster_cli::run(std::env::args_os()));
}
