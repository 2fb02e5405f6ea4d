fn main() {
    std::process::exit(logsad::cli::cli_main(std::env::args_os()));
}
