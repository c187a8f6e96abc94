fn main() {
    std::process::exit(omt_cli::parse_and_dispatch(std::env::args_os()));
}
