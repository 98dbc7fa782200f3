fn main() {
    std::process::exit(uhddip_cli::run(std::env::args_os()));
}
