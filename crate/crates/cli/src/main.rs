fn main() {
    std::process::exit(geotransolver_cli::run_command(std::env::args_os()));
}
