fn main() {
    std::process::exit(geotransfer_cli::run(std::env::args_os()));
}
