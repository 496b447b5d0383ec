fn main() {
    std::process::exit(regionshop_cli::run(std::env::args_os()));
}
