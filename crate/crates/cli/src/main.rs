fn main() {
    std::process::exit(fvp_cli::run(std::env::args_os()));
}
